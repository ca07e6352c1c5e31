# Utils package for volscope
