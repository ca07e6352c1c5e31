import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from oracle.fourier import CharExponentSpec, density_fft, truncated_moment_numeric
from simulation.levy import (
    GridSpec,
    LevyJumpSpec,
    ParameterError,
    StableParams,
    build_cgmy_table,
    default_truncation,
    sample_cgmy_increment,
    sample_cgmy_increments,
    sample_levy_path,
    sample_stable_increment,
    sample_stable_increments,
    small_jump_variance,
)

CGMY_JUMPS = LevyJumpSpec(c_plus=0.028, c_minus=0.028, g_temper=2.318, m_temper=4.025, y_index=1.5)
PURE_STABLE = LevyJumpSpec(c_plus=0.5, c_minus=0.5, g_temper=0.0, m_temper=0.0, y_index=1.5)


def _fft_cdf(spec, half_width, points):
    table = density_fft(spec, 1.0, half_width, points)
    cdf = integrate.cumulative_trapezoid(table.density, table.x, initial=0.0)
    return lambda values: np.interp(values, table.x, cdf)


def test_jump_spec_rejects_out_of_domain_parameters():
    with pytest.raises(ParameterError):
        LevyJumpSpec(c_plus=0.0, c_minus=0.1, g_temper=1.0, m_temper=1.0, y_index=1.5)
    with pytest.raises(ParameterError):
        LevyJumpSpec(c_plus=0.1, c_minus=0.1, g_temper=1.0, m_temper=1.0, y_index=2.0)
    with pytest.raises(ParameterError):
        GridSpec(horizon_t=1.0, n_steps=0)


def test_stable_params_of_symmetric_spec():
    spec = LevyJumpSpec(c_plus=0.5, c_minus=0.5, g_temper=0.0, m_temper=0.0, y_index=1.5)
    params = spec.stable_params()
    expected_scale = (special.gamma(-1.5) * abs(math.cos(0.75 * math.pi))) ** (1 / 1.5)
    assert params.alpha == 1.5
    assert params.beta == 0.0
    assert params.scale == pytest.approx(expected_scale, rel=1e-12)


def test_stable_params_skewness_follows_intensities():
    spec = LevyJumpSpec(c_plus=0.3, c_minus=0.1, g_temper=0.0, m_temper=0.0, y_index=1.25)
    assert spec.stable_params().beta == pytest.approx(0.5)


def test_small_jump_variance_untempered_closed_form():
    spec = LevyJumpSpec(c_plus=0.2, c_minus=0.3, g_temper=0.0, m_temper=0.0, y_index=1.35)
    tau = 1e-3
    expected = 0.5 * tau ** (2 - 1.35) / (2 - 1.35)
    assert small_jump_variance(spec, tau) == pytest.approx(expected, rel=1e-9)


def test_default_truncation_takes_the_smaller_cutoff():
    h = 1 / 98280
    tau = default_truncation(CGMY_JUMPS, h, sigma=0.2, omega=5 / 12)
    assert tau == pytest.approx(min(0.2 * h ** (5 / 12) / 10, h ** (1 / 1.5)))


def test_symmetric_table_has_no_compensator_or_drift():
    spec = LevyJumpSpec(c_plus=0.1, c_minus=0.1, g_temper=3.0, m_temper=3.0, y_index=1.25)
    table = build_cgmy_table(spec, 1e-3)
    assert table.compensator == 0.0
    assert table.induced_drift == 0.0
    assert table.intensity_plus == table.intensity_minus


def test_untempered_intensity_matches_power_law():
    spec = LevyJumpSpec(c_plus=0.1, c_minus=0.2, g_temper=0.0, m_temper=0.0, y_index=1.5)
    tau = 1e-3
    table = build_cgmy_table(spec, tau)
    assert table.intensity_plus == pytest.approx(0.1 * tau**-1.5 / 1.5, rel=1e-6)
    assert table.intensity_minus == pytest.approx(0.2 * tau**-1.5 / 1.5, rel=1e-6)


def test_drawn_sizes_stay_above_cutoff():
    table = build_cgmy_table(CGMY_JUMPS, 1e-4)
    sizes = table.draw_sizes(True, 10_000, np.random.default_rng(3))
    assert np.all(sizes >= 1e-4 * (1 - 1e-12))


def test_zero_size_returns_empty_array():
    out = sample_cgmy_increments(CGMY_JUMPS, 1e-3, 1e-4, 0, np.random.default_rng(0))
    assert out.shape == (0,)


def test_sampling_is_reproducible_for_a_seed():
    grid = GridSpec(horizon_t=1.0, n_steps=500)
    first = sample_levy_path(CGMY_JUMPS, grid, 1e-4, np.random.default_rng(11))
    second = sample_levy_path(CGMY_JUMPS, grid, 1e-4, np.random.default_rng(11))
    np.testing.assert_array_equal(first, second)


def test_cgmy_increment_variance_matches_levy_measure():
    spec = CGMY_JUMPS
    h = 0.05
    draws = sample_cgmy_increments(spec, h, 1e-3, 50_000, np.random.default_rng(2024))
    y = spec.y_index
    expected = h * spec.c_plus * special.gamma(2 - y) * (spec.m_temper ** (y - 2) + spec.g_temper ** (y - 2))
    assert np.var(draws) == pytest.approx(expected, rel=0.12)


def test_symmetric_stable_draws_are_centred():
    spec = LevyJumpSpec(c_plus=0.5, c_minus=0.5, g_temper=0.0, m_temper=0.0, y_index=1.5)
    draws = sample_stable_increments(spec.stable_params(), 1e-3, 20_000, np.random.default_rng(5))
    positive = np.mean(draws > 0)
    assert abs(positive - 0.5) < 4 * math.sqrt(0.25 / draws.size)


def test_stable_sampler_rejects_non_positive_h():
    params = LevyJumpSpec(c_plus=0.5, c_minus=0.5, g_temper=0.0, m_temper=0.0, y_index=1.5).stable_params()
    with pytest.raises(ParameterError):
        sample_stable_increments(params, 0.0, 3, np.random.default_rng(0))


@pytest.mark.parametrize("y", [0.5, 0.7])
def test_stable_scale_for_finite_variation_index(y):
    spec = LevyJumpSpec(c_plus=0.3, c_minus=0.1, g_temper=0.0, m_temper=0.0, y_index=y)
    # Gamma(-y) = -Gamma(1 - y) / y
    expected = (0.4 * special.gamma(1.0 - y) / y * math.cos(math.pi * y / 2.0)) ** (1.0 / y)
    params = spec.stable_params()
    assert params.scale == pytest.approx(expected, rel=1e-12)
    assert params.beta == pytest.approx(0.5)
    assert CharExponentSpec.from_levy(spec, sigma=0.0).stable_scale(1.0) == pytest.approx(params.scale, rel=1e-12)


def test_symmetry_property():
    assert LevyJumpSpec(c_plus=0.1, c_minus=0.1, g_temper=3.0, m_temper=3.0, y_index=1.5).is_symmetric
    assert not CGMY_JUMPS.is_symmetric
    assert not LevyJumpSpec(c_plus=0.2, c_minus=0.1, g_temper=3.0, m_temper=3.0, y_index=1.5).is_symmetric


def test_index_two_stable_draws_are_gaussian():
    s = 0.7
    params = StableParams(alpha=2.0, beta=0.0, scale=s)
    draws = sample_stable_increments(params, 1.0, 100_000, np.random.default_rng(21))
    assert np.var(draws) == pytest.approx(2 * s * s, rel=0.03)


def test_symmetric_stable_median_is_zero():
    params = StableParams(alpha=1.5, beta=0.0, scale=1.0)
    draws = sample_stable_increments(params, 1.0, 100_000, np.random.default_rng(22))
    assert abs(np.median(draws)) < 0.025


def test_skewed_stable_draws_match_fourier_cdf():
    alpha, beta = 1.25, 0.3
    params = StableParams(alpha=alpha, beta=beta, scale=1.0)
    draws = sample_stable_increments(params, 1.0, 100_000, np.random.default_rng(23))
    spec = CharExponentSpec(c1=-1.0, c2=beta * math.tan(math.pi * alpha / 2.0), sigma=0.0, y=alpha)
    assert stats.kstest(draws, _fft_cdf(spec, 2000.0, 2**18)).statistic < 0.01


def test_scalar_samplers_match_vector_draws():
    params = StableParams(alpha=1.5, beta=0.0, scale=1.0)
    single = sample_stable_increment(params, 1e-3, np.random.default_rng(4))
    assert isinstance(single, float)
    assert single == sample_stable_increments(params, 1e-3, 1, np.random.default_rng(4))[0]
    jump = sample_cgmy_increment(CGMY_JUMPS, 1e-3, 1e-4, np.random.default_rng(4))
    assert isinstance(jump, float)
    assert jump == sample_cgmy_increments(CGMY_JUMPS, 1e-3, 1e-4, 1, np.random.default_rng(4))[0]
    with pytest.raises(ParameterError):
        sample_cgmy_increment(CGMY_JUMPS, 0.0, 1e-4, np.random.default_rng(4))


def test_symmetric_cgmy_increments_are_centred():
    spec = LevyJumpSpec(c_plus=0.1, c_minus=0.1, g_temper=3.0, m_temper=3.0, y_index=1.5)
    draws = sample_cgmy_increments(spec, 1e-2, 1e-3, 200_000, np.random.default_rng(24))
    se = draws.std(ddof=1) / math.sqrt(draws.size)
    assert abs(draws.mean()) < 4 * se


def test_pure_stable_cgmy_increments_match_fourier_cdf():
    h = 1e-3
    draws = sample_cgmy_increments(PURE_STABLE, h, 3e-4, 50_000, np.random.default_rng(25))
    spec = CharExponentSpec.from_levy(PURE_STABLE, sigma=0.0)
    scaled = draws / h ** (1.0 / PURE_STABLE.y_index)
    assert stats.kstest(scaled, _fft_cdf(spec, 4000.0, 2**18)).statistic < 0.012


def test_truncated_second_moment_of_cgmy_increments():
    h = 1e-4
    eps = h ** (5 / 12)
    n = 100_000
    draws = sample_cgmy_increments(PURE_STABLE, h, 1e-4, n, np.random.default_rng(26))
    kept = np.where(np.abs(draws) <= eps, draws * draws, 0.0)
    se = kept.std(ddof=1) / math.sqrt(n)
    expected = truncated_moment_numeric(CharExponentSpec.from_levy(PURE_STABLE, sigma=0.0), 1, eps, h)
    assert abs(kept.mean() - expected) < 4 * se


def test_small_jump_variance_tempered_closed_form():
    spec = LevyJumpSpec(c_plus=0.028, c_minus=0.028, g_temper=2.318, m_temper=4.025, y_index=1.25)
    tau = 0.01
    a = 2.0 - spec.y_index
    # ∫_0^tau x^(a-1) e^(-lam x) dx = lam^(-a) Gamma(a) P(a, lam tau)
    expected = sum(
        0.028 * lam ** (-a) * special.gamma(a) * special.gammainc(a, lam * tau) for lam in (spec.m_temper, spec.g_temper)
    )
    assert small_jump_variance(spec, tau) == pytest.approx(expected, rel=1e-8)


def test_small_jump_variance_small_cutoff_limit():
    tau = 1e-6
    y = CGMY_JUMPS.y_index
    untempered = CGMY_JUMPS.cbar * tau ** (2 - y) / (2 - y)
    assert small_jump_variance(CGMY_JUMPS, tau) / untempered == pytest.approx(1.0, abs=0.01)


def test_small_jump_variance_is_monotone_and_resolved():
    taus = np.geomspace(1e-6, 1.0, 25)
    values = [small_jump_variance(CGMY_JUMPS, tau) for tau in taus]
    assert all(b > a for a, b in zip(values, values[1:]))
    refined = small_jump_variance(CGMY_JUMPS, 0.01, epsrel=1e-13)
    assert small_jump_variance(CGMY_JUMPS, 0.01) == pytest.approx(refined, rel=1e-9)


def test_levy_path_increments_are_uncorrelated():
    n = 100_000
    x = sample_levy_path(CGMY_JUMPS, GridSpec(horizon_t=1.0, n_steps=n), 1e-4, np.random.default_rng(27))
    centred = x - x.mean()
    lag1 = float(np.dot(centred[:-1], centred[1:]) / np.dot(centred, centred))
    assert abs(lag1) < 4 / math.sqrt(n)


def test_sums_of_increments_match_longer_step():
    k, h, tau = 4, 1e-3, 1e-3
    paths = 100_000
    grid = GridSpec(horizon_t=k * h * paths, n_steps=k * paths)
    sums = sample_levy_path(CGMY_JUMPS, grid, tau, np.random.default_rng(28)).reshape(paths, k).sum(axis=1)
    single = sample_cgmy_increments(CGMY_JUMPS, k * h, tau, paths, np.random.default_rng(29))
    assert stats.ks_2samp(sums, single).statistic < 0.012


def test_symmetric_spec_signs_are_balanced():
    spec = LevyJumpSpec(c_plus=0.1, c_minus=0.1, g_temper=3.0, m_temper=3.0, y_index=1.35)
    x = sample_levy_path(spec, GridSpec(horizon_t=1.0, n_steps=100_000), 1e-4, np.random.default_rng(30))
    positive = int(np.count_nonzero(x > 0))
    assert stats.binomtest(positive, int(np.count_nonzero(x)), 0.5).pvalue > 0.001
