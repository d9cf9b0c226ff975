"""Domain types, rates, utilities and random generation."""

import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from conftest import random_covs, random_psd
from robust_miso.model import (
    ChannelSet,
    CovarianceSet,
    ProportionalFair,
    SumRate,
    SystemConfig,
    Utility,
    WeightedSumRate,
    rate,
    sample_channels,
    sample_error,
    sample_errors,
    sinr,
    utility,
)


# ---------------------------------------------------------------------------
# utilities
# ---------------------------------------------------------------------------
def test_utility_examples():
    assert utility([3, 5], SumRate()) == pytest.approx(4.0)
    assert utility([3, 5], WeightedSumRate((1, 1))) == pytest.approx(8.0)
    assert utility([2, 8], ProportionalFair()) == pytest.approx(math.log(2) + math.log(8))
    assert utility([2, 8], ProportionalFair()) == pytest.approx(2.7726, abs=1e-4)


def test_proportional_fair_rejects_zero_rate():
    with pytest.raises(ArithmeticError):
        ProportionalFair()([0.0, 1.0])


@pytest.mark.parametrize("bad", [[-1.0, 2.0], [np.nan, 1.0], [np.inf, 1.0]])
def test_utility_rejects_invalid_rates(bad):
    with pytest.raises(ValueError):
        SumRate()(bad)


def test_weighted_sum_rate_validation():
    with pytest.raises(ValueError):
        WeightedSumRate((1.0, -1.0))
    with pytest.raises(ValueError):
        WeightedSumRate((1.0, 2.0))([1.0, 2.0, 3.0])


@pytest.mark.parametrize("u", [SumRate(), WeightedSumRate((0.5, 2.0)), ProportionalFair()])
def test_utility_serialization_round_trip(u):
    assert Utility.from_dict(u.to_dict()) == u


@pytest.mark.parametrize("u", [SumRate(), WeightedSumRate((0.5, 2.0)), ProportionalFair()])
def test_utility_strictly_increasing(u, rng):
    for _ in range(50):
        rates = rng.uniform(0.1, 10.0, size=2)
        for k in range(2):
            bumped = rates.copy()
            bumped[k] += 1e-4
            assert u(bumped) > u(rates)


@given(st.lists(st.floats(0, 50), min_size=2, max_size=6), st.randoms())
def test_sum_rate_is_symmetric(rates, rnd):
    perm = list(rates)
    rnd.shuffle(perm)
    assert SumRate()(perm) == pytest.approx(SumRate()(rates), rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------
def test_system_config_validation():
    cfg = SystemConfig(4, 2, 10.0, 0.01)
    assert cfg.noise_powers.shape == (2,)
    with pytest.raises(ValueError):
        SystemConfig(0, 2, 10.0, 0.01)
    with pytest.raises(ValueError):
        SystemConfig(2, 2, -1.0, 0.01)
    with pytest.raises(ValueError):
        SystemConfig(2, 2, 10.0, [0.01, 0.0])
    with pytest.raises(ValueError):
        SystemConfig(2, 2, 10.0, [0.01, 0.01, 0.01])


def test_system_config_round_trip():
    cfg = SystemConfig(3, 2, 5.0, [0.01, 0.02], WeightedSumRate((1.0, 3.0)))
    back = SystemConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()


def test_channel_set_checks():
    cfg = SystemConfig(2, 2, 10.0, 0.01)
    ch = ChannelSet(sample_channels(cfg, 0), 0.1)
    ch.check(cfg)
    assert np.allclose(ch.radii, [0.1, 0.1])
    with pytest.raises(ValueError):
        ChannelSet(sample_channels(cfg, 0), -0.1)
    with pytest.raises(ValueError):
        ChannelSet(sample_channels(cfg, 0), np.inf)
    with pytest.raises(ValueError):
        ChannelSet(np.ones((2, 3)), 0.1).check(cfg)
    back = ChannelSet.from_dict(ch.to_dict())
    assert np.array_equal(back.estimates, ch.estimates) and np.array_equal(back.radii, ch.radii)


def test_covariance_invariants(rng):
    cfg = SystemConfig(3, 2, 10.0, 0.01)
    covs = CovarianceSet(random_covs(rng, 3, 2, 10.0))
    covs.check(cfg)
    assert covs.total_power == pytest.approx(10.0)
    with pytest.raises(ValueError, match="power"):
        covs.scaled(1.5).check(cfg)
    covs.scaled(1.5).check(cfg, power=False)
    bad = covs.matrices.copy()
    bad[0] = -bad[0]
    with pytest.raises(ValueError, match="psd"):
        CovarianceSet(bad).check(cfg)
    nonherm = covs.matrices.copy()
    nonherm[1, 0, 1] += 1e-3
    with pytest.raises(ValueError, match="hermitian"):
        CovarianceSet(nonherm).check(cfg)
    back = CovarianceSet.from_dict(covs.to_dict())
    assert np.array_equal(back.matrices, covs.matrices)


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------
def test_single_user_rate_example():
    cfg = SystemConfig(2, 1, 10.0, 0.01)
    h = np.array([1.0, 0.0], dtype=complex)
    covs = CovarianceSet(10.0 * np.outer(h, h.conj())[None])
    assert rate(covs, h, 0, cfg) == pytest.approx(math.log2(1001.0))
    assert rate(covs, h, 0, cfg) == pytest.approx(9.9673, abs=1e-4)


def test_zero_covariances_give_zero_rate(rng):
    cfg = SystemConfig(3, 2, 10.0, 0.01)
    covs = CovarianceSet.zeros(cfg)
    for _ in range(5):
        h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        assert rate(covs, h, 0, cfg) == 0.0 and rate(covs, h, 1, cfg) == 0.0


def _loop_sinr(q, h, k, noise):
    """Quadratic forms by explicit loops."""
    def quad(m):
        s = 0j
        for i in range(len(h)):
            for j in range(len(h)):
                s += np.conj(h[i]) * m[i, j] * h[j]
        return s.real
    sig = quad(q[k])
    intf = sum(quad(q[l]) for l in range(len(q)) if l != k)
    return sig / (intf + noise)


def test_rate_matches_loop_oracle(rng):
    cfg = SystemConfig(2, 2, 10.0, 0.01)
    for _ in range(20):
        covs = CovarianceSet(random_covs(rng, 2, 2, 10.0))
        h = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        for k in range(2):
            want = math.log2(1 + _loop_sinr(covs.matrices, h, k, 0.01))
            assert rate(covs, h, k, cfg) == pytest.approx(want, rel=1e-12)


def test_rate_dimension_mismatch():
    cfg = SystemConfig(2, 1, 10.0, 0.01)
    covs = CovarianceSet.zeros(cfg)
    with pytest.raises(ValueError):
        rate(covs, np.ones(3), 0, cfg)
    with pytest.raises(ValueError):
        rate(covs, np.ones(2), 1, cfg)


def test_rate_monotone_in_psd_increments(rng):
    cfg = SystemConfig(3, 2, 10.0, 0.01)
    for _ in range(20):
        covs = random_covs(rng, 3, 2, 5.0)
        h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        inc = random_psd(rng, 3, 1, 1.0)
        base = rate(CovarianceSet(covs), h, 0, cfg)
        own = covs.copy()
        own[0] += inc
        other = covs.copy()
        other[1] += inc
        assert rate(CovarianceSet(own), h, 0, cfg) >= base - 1e-12
        assert rate(CovarianceSet(other), h, 0, cfg) <= base + 1e-12


# ---------------------------------------------------------------------------
# random generation
# ---------------------------------------------------------------------------
def test_sample_channels_deterministic():
    cfg = SystemConfig(4, 2, 10.0, 0.01)
    assert np.array_equal(sample_channels(cfg, 3), sample_channels(cfg, 3))
    assert not np.array_equal(sample_channels(cfg, 3), sample_channels(cfg, 4))


def test_sample_channels_distribution():
    cfg = SystemConfig(4, 25_000, 10.0, 0.01)  # 10^5 complex entries
    h = sample_channels(cfg, 0).ravel()
    assert abs(h.real.mean()) <= 0.02 and abs(h.imag.mean()) <= 0.02
    assert abs(np.var(h) - 1.0) <= 0.05
    assert abs(np.mean(np.abs(h) ** 2)) == pytest.approx(1.0, rel=0.05)
    cfg = SystemConfig(4, 100_000, 10.0, 0.01)
    norms = np.sum(np.abs(sample_channels(cfg, 1)) ** 2, axis=1)
    assert norms.mean() == pytest.approx(4.0, rel=0.03)


def test_sample_error_modes():
    assert np.array_equal(sample_error(0.0, 3, 1), np.zeros(3))
    e = sample_error(0.1, 4, 9, "boundary")
    assert abs(np.linalg.norm(e) - 0.1) <= 1e-12
    with pytest.raises(ValueError):
        sample_error(-0.1, 3, 1)
    with pytest.raises(ValueError):
        sample_error(0.1, 3, 1, mode="shell")


def test_boundary_errors_exact_norm():
    e = sample_errors(0.1, 3, 10_000, np.random.default_rng(0), "boundary")
    assert np.max(np.abs(np.linalg.norm(e, axis=1) - 0.1)) <= 1e-12


@pytest.mark.parametrize("dim", [1, 2, 4])
def test_uniform_ball_radial_cdf(dim):
    r = 0.3
    e = sample_errors(r, dim, 100_000, np.random.default_rng(dim), "uniform-ball")
    norms = np.linalg.norm(e, axis=1)
    assert np.all(norms <= r)
    frac = np.mean(norms <= r / 2)
    want = 0.5 ** (2 * dim)
    assert abs(frac - want) <= 0.02 * max(want, 0.05)


def test_uniform_ball_directions_isotropic():
    e = sample_errors(1.0, 2, 100_000, np.random.default_rng(5), "uniform-ball")
    assert np.all(np.abs(e.mean(axis=0)) < 0.01)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 5), st.integers(1, 6), st.integers(1, 200), st.sampled_from(["boundary", "uniform-ball"]))
@example(5e-324, 1, 1, "boundary")  # subnormal radius underflowed the renormalization
def test_errors_never_leave_ball(r, dim, n, mode):
    e = sample_errors(r, dim, n, np.random.default_rng(n), mode)
    assert np.all(np.isfinite(e))
    assert np.all(np.linalg.norm(e, axis=1) <= r * (1 + 1e-12) + 1e-300)


def test_error_stream_prefix_stable():
    a = sample_errors(0.2, 3, 100, np.random.default_rng(1))
    rng = np.random.default_rng(1)
    b = np.vstack([sample_errors(0.2, 3, 40, rng), sample_errors(0.2, 3, 60, rng)])
    assert np.allclose(a, b, rtol=0, atol=1e-15)


def test_sinr_is_nonnegative(rng):
    cfg = SystemConfig(2, 2, 10.0, 0.01)
    covs = CovarianceSet(random_covs(rng, 2, 2, 10.0))
    for _ in range(10):
        h = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        assert sinr(covs, h, 0, cfg) >= 0
