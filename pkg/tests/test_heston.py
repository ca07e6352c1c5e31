import math

import numpy as np
import pytest

from config import ConfigurationError
from simulation.heston import (
    DiffusionSpec,
    ModelSpec,
    _full_truncation_euler,
    heston_iv_closed_form,
    simulate_path,
    true_iv,
)
from simulation.levy import GridSpec, LevyJumpSpec, ParameterError

JUMPS = LevyJumpSpec(c_plus=0.028, c_minus=0.028, g_temper=2.318, m_temper=4.025, y_index=1.25)


def test_constant_volatility_block_iv_is_exact():
    model = ModelSpec(diffusion=DiffusionSpec(kind="constant", sigma=0.2))
    grid = GridSpec(horizon_t=1.0, n_steps=2520)
    path = simulate_path(model, grid, blocks=252, substeps=1, tau=None, rng=np.random.default_rng(1))
    assert path.increments.shape == (2520,)
    np.testing.assert_allclose(path.block_iv, 0.04 / 252)
    assert path.total_iv == pytest.approx(0.04, rel=1e-12)


def test_constant_volatility_realized_variance_is_consistent():
    model = ModelSpec(diffusion=DiffusionSpec(kind="constant", sigma=0.2))
    grid = GridSpec(horizon_t=1.0, n_steps=50_000)
    path = simulate_path(model, grid, blocks=1, substeps=1, tau=None, rng=np.random.default_rng(2))
    rv = float(np.sum(path.increments**2))
    # relative SD of RV is sqrt(2/n)
    assert rv == pytest.approx(0.04, rel=4 * math.sqrt(2 / 50_000))


def test_deterministic_variance_matches_closed_form():
    diffusion = DiffusionSpec(kind="heston", kappa=5.0, xi=0.0, theta=0.16, rho=-0.5, v0=0.09)
    model = ModelSpec(diffusion=diffusion)
    grid = GridSpec(horizon_t=1 / 252, n_steps=390)
    path = simulate_path(model, grid, blocks=3, substeps=50, tau=None, rng=np.random.default_rng(3))
    day = 1 / 252
    for block in range(3):
        t0, t1 = block * day / 3, (block + 1) * day / 3
        assert true_iv(path, block) == pytest.approx(heston_iv_closed_form(diffusion, t0, t1), rel=1e-6)


def test_closed_form_reduces_to_theta_at_stationary_start():
    diffusion = DiffusionSpec(kind="heston", xi=0.0, theta=0.16)
    assert heston_iv_closed_form(diffusion, 0.0, 0.5) == pytest.approx(0.08)


def test_heston_paths_are_reproducible_and_nonnegative():
    model = ModelSpec(diffusion=DiffusionSpec(kind="heston"), jumps=JUMPS)
    grid = GridSpec(horizon_t=1.0, n_steps=3900)
    first = simulate_path(model, grid, 10, 5, 1e-4, np.random.default_rng(9))
    second = simulate_path(model, grid, 10, 5, 1e-4, np.random.default_rng(9))
    np.testing.assert_array_equal(first.increments, second.increments)
    np.testing.assert_array_equal(first.block_iv, second.block_iv)
    assert np.all(first.block_iv >= 0.0)


def test_jump_free_switch_removes_jump_component():
    grid = GridSpec(horizon_t=1.0, n_steps=1000)
    base = ModelSpec(diffusion=DiffusionSpec(kind="constant", sigma=0.2))
    with_jumps = ModelSpec(diffusion=base.diffusion, jumps=JUMPS)
    plain = simulate_path(base, grid, 1, 1, None, np.random.default_rng(4))
    jumped = simulate_path(with_jumps, grid, 1, 1, 1e-4, np.random.default_rng(4))
    # same Gaussian draws come first, jumps are added on top
    assert not np.array_equal(plain.increments, jumped.increments)


def test_blocks_must_divide_steps():
    model = ModelSpec(diffusion=DiffusionSpec(kind="constant", sigma=0.2))
    with pytest.raises(ConfigurationError) as excinfo:
        simulate_path(model, GridSpec(1.0, 100), 3, 1, None, np.random.default_rng(0))
    assert excinfo.value.field == "run.blocks"


def test_jumps_require_cutoff():
    model = ModelSpec(diffusion=DiffusionSpec(kind="constant", sigma=0.2), jumps=JUMPS)
    with pytest.raises(ConfigurationError):
        simulate_path(model, GridSpec(1.0, 100), 1, 1, None, np.random.default_rng(0))


def test_true_iv_rejects_out_of_range_block():
    model = ModelSpec(diffusion=DiffusionSpec(kind="constant", sigma=0.2))
    path = simulate_path(model, GridSpec(1.0, 10), 2, 1, None, np.random.default_rng(0))
    with pytest.raises(IndexError):
        true_iv(path, 2)


def test_diffusion_spec_validation():
    with pytest.raises(ParameterError):
        DiffusionSpec(kind="constant", sigma=0.0)
    with pytest.raises(ParameterError):
        DiffusionSpec(kind="heston", rho=1.5)


def test_stationary_heston_mean_integrated_variance():
    model = ModelSpec(diffusion=DiffusionSpec(kind="heston"))
    grid = GridSpec(horizon_t=1.0, n_steps=252)
    totals = np.array([
        simulate_path(model, grid, blocks=1, substeps=10, tau=None, rng=np.random.default_rng(1000 + i)).total_iv
        for i in range(1000)
    ])
    se = totals.std(ddof=1) / math.sqrt(totals.size)
    assert abs(totals.mean() - 0.16) < 4 * se


def _return_variance_correlation(rho: float, seed: int) -> float:
    model = ModelSpec(diffusion=DiffusionSpec(kind="heston", rho=rho))
    grid = GridSpec(horizon_t=1.0, n_steps=20_000)
    path = simulate_path(model, grid, blocks=20_000, substeps=5, tau=None, rng=np.random.default_rng(seed))
    return float(np.corrcoef(path.increments[:-1], np.diff(path.block_iv))[0, 1])


def test_uncorrelated_drivers_decouple_returns_and_variance():
    assert abs(_return_variance_correlation(0.0, 41)) < 4 / math.sqrt(20_000)


def test_leverage_makes_returns_and_variance_move_apart():
    assert _return_variance_correlation(-0.5, 42) < -0.2


def test_block_iv_converges_as_substeps_are_refined():
    n_steps, blocks = 3900, 10
    rng = np.random.default_rng(12)
    fine_w = rng.standard_normal(n_steps * 50)
    fine_b = rng.standard_normal(n_steps * 50)

    def coarsen(z):
        # five fine normals per coarse substep, same Brownian path
        return z.reshape(-1, 5).sum(axis=1) / math.sqrt(5.0)

    args = (0.16, 5.0, 0.16, 0.5, -0.5, 1.0 / 98_280)
    _, fine = _full_truncation_euler(*args, 50, blocks, fine_w, fine_b)
    _, coarse = _full_truncation_euler(*args, 10, blocks, coarsen(fine_w), coarsen(fine_b))
    np.testing.assert_allclose(coarse, fine, rtol=5e-3)
