"""Path simulation for Levy jump and stochastic-volatility models."""
