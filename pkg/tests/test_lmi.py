"""S-lemma matrices, eigenvalue helpers and the bisection on t."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_covs, random_psd
from robust_miso.lmi import (
    BracketError,
    LmiBlock,
    build_phi,
    build_y,
    max_feasible_t,
    min_eig,
    t_upper_bound,
)
from robust_miso.model import ChannelSet, CovarianceSet, SystemConfig, sample_channels


def _instance(rng, n=2, k=2, r=0.1, power=10.0):
    cfg = SystemConfig(n, k, power, 0.01)
    ch = ChannelSet(sample_channels(cfg, int(rng.integers(1 << 30))), r)
    return cfg, ch, CovarianceSet(random_covs(rng, n, k, power))


# ---------------------------------------------------------------------------
# build_y / build_phi
# ---------------------------------------------------------------------------
def test_build_y_examples(rng):
    h = np.array([1.0, 0.0], dtype=complex)
    assert np.array_equal(build_y(np.zeros((2, 2)), h), np.zeros((3, 3)))
    want = np.array([[1, 0, 1], [0, 1, 0], [1, 0, 1]], dtype=complex)
    assert np.allclose(build_y(np.eye(2), h), want)
    for _ in range(50):
        n = int(rng.integers(1, 5))
        q = random_psd(rng, n, int(rng.integers(1, n + 1)), rng.uniform(0.1, 10))
        hh = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        assert np.linalg.eigvalsh(build_y(q, hh))[0] >= -1e-10
    with pytest.raises(ValueError):
        build_y(np.eye(3), h)


def test_build_phi_examples():
    cfg = SystemConfig(3, 2, 10.0, 0.01)
    ch = ChannelSet(sample_channels(cfg, 0), 0.1)
    zero = CovarianceSet.zeros(cfg)
    blk = build_phi(0.0, 1.0, zero, ch, cfg, 0)
    assert np.allclose(blk.matrix, np.diag([1, 1, 1, -0.01]))
    assert blk.size == 4 and blk.user_index == 0
    covs = CovarianceSet(random_covs(np.random.default_rng(0), 3, 2, 10.0))
    assert np.allclose(build_phi(0.0, 0.0, covs, ch, cfg, 1).matrix, build_y(covs[1], ch.estimates[1]))
    with pytest.raises(ValueError):
        build_phi(-1.0, 0.0, covs, ch, cfg, 0)
    with pytest.raises(ValueError):
        build_phi(1.0, -1.0, covs, ch, cfg, 0)
    with pytest.raises(ValueError):
        build_phi(1.0, 1.0, covs, ch, cfg, 2)


def _phi_by_loops(t, lam, q, h, r, noise, k):
    """Entrywise assembly of Phi_k from its definition."""
    n = len(h)
    m = q[k] - t * sum(q[l] for l in range(len(q)) if l != k)
    out = np.zeros((n + 1, n + 1), dtype=complex)
    a = np.zeros((n + 1, n), dtype=complex)
    for i in range(n):
        a[i, i] = 1.0
        a[n, i] = np.conj(h[i])
    for i in range(n + 1):
        for j in range(n + 1):
            s = 0j
            for p in range(n):
                for s_ in range(n):
                    s += a[i, p] * m[p, s_] * np.conj(a[j, s_])
            out[i, j] = s
    for i in range(n):
        out[i, i] += lam
    out[n, n] += -lam * r * r - t * noise
    return out


def test_build_phi_matches_entrywise_oracle(rng):
    for _ in range(10):
        cfg, ch, covs = _instance(rng)
        t, lam = rng.uniform(0, 20), rng.uniform(0, 5)
        for k in range(2):
            want = _phi_by_loops(t, lam, covs.matrices, ch.estimates[k], 0.1, 0.01, k)
            assert np.allclose(build_phi(t, lam, covs, ch, cfg, k).matrix, want, atol=1e-12)


def test_build_phi_affine(rng):
    cfg, ch, covs = _instance(rng, n=3, k=3)
    other = CovarianceSet(random_covs(rng, 3, 3, 10.0))
    a = 0.3

    def phi(t, lam, c):
        return build_phi(t, lam, c, ch, cfg, 1).matrix

    assert np.allclose(phi(a * 2 + (1 - a) * 5, 1.0, covs), a * phi(2, 1.0, covs) + (1 - a) * phi(5, 1.0, covs), atol=1e-10)
    assert np.allclose(phi(2.0, a * 1 + (1 - a) * 4, covs), a * phi(2, 1, covs) + (1 - a) * phi(2, 4, covs), atol=1e-10)
    mixed = CovarianceSet(a * covs.matrices + (1 - a) * other.matrices)
    assert np.allclose(phi(2.0, 1.0, mixed), a * phi(2, 1, covs) + (1 - a) * phi(2, 1, other), atol=1e-10)


def test_lmi_block_rejects_non_hermitian():
    m = np.eye(3, dtype=complex)
    m[0, 1] = 1.0
    with pytest.raises(ValueError):
        LmiBlock(m, 0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# min_eig
# ---------------------------------------------------------------------------
def test_min_eig_examples():
    val, vec = min_eig(np.eye(4))
    assert val == pytest.approx(1.0) and np.linalg.norm(vec) == pytest.approx(1.0)
    val, vec = min_eig(np.diag([1, 1, 1, -0.01]))
    assert val == pytest.approx(-0.01)
    assert abs(vec[3]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        min_eig(np.array([[0, 1], [0, 0]]))


def test_min_eig_against_characteristic_polynomial(rng):
    for _ in range(30):
        g = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
        h = g + g.conj().T
        val, vec = min_eig(h)
        roots = np.sort(np.roots(np.poly(h)).real)
        assert val == pytest.approx(roots[0], abs=1e-9 * max(1, np.abs(roots).max()))
        assert np.linalg.norm(h @ vec - val * vec) <= 1e-8 * np.linalg.norm(h, 2)


# ---------------------------------------------------------------------------
# Monotonicity in t and concavity in lambda
# ---------------------------------------------------------------------------
@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3))
def test_eigenvalues_nonincreasing_in_t(seed, n, k):
    rng = np.random.default_rng(seed)
    cfg = SystemConfig(n, k, 10.0, rng.uniform(0.001, 1.0, size=k))
    ch = ChannelSet(sample_channels(cfg, seed), rng.uniform(0, 1, size=k))
    covs = CovarianceSet(random_covs(rng, n, k, 10.0))
    t1, t2 = np.sort(rng.uniform(0, 100, size=2))
    lam = rng.uniform(0, 50)
    for u in range(k):
        e1 = np.linalg.eigvalsh(build_phi(t1, lam, covs, ch, cfg, u).matrix)
        e2 = np.linalg.eigvalsh(build_phi(t2, lam, covs, ch, cfg, u).matrix)
        assert np.all(e2 <= e1 + 1e-9)


def test_min_eig_concave_in_lambda(rng):
    for _ in range(200):
        cfg, ch, covs = _instance(rng, n=int(rng.integers(1, 5)), r=rng.uniform(0.01, 1))
        t = rng.uniform(0, 20)
        l1, l2 = rng.uniform(0, 100, size=2)

        def g(lam):
            return min_eig(build_phi(t, lam, covs, ch, cfg, 0))[0]

        assert g(0.5 * (l1 + l2)) >= 0.5 * (g(l1) + g(l2)) - 1e-9


# ---------------------------------------------------------------------------
# max_feasible_t
# ---------------------------------------------------------------------------
def test_zero_covariances_give_zero_t():
    cfg = SystemConfig(2, 2, 10.0, 0.01)
    ch = ChannelSet(sample_channels(cfg, 0), 0.1)
    res = max_feasible_t(0.0, CovarianceSet.zeros(cfg), ch, cfg, 0)
    assert res.feasible and res.t == 0.0


def test_single_antenna_perfect_csi_lambda_sweep():
    cfg = SystemConfig(1, 1, 10.0, 0.01)
    ch = ChannelSet(np.ones((1, 1), dtype=complex), 0.0)
    covs = CovarianceSet(np.full((1, 1, 1), 10.0, dtype=complex))
    # here t*(lam) = 1000 lam / (10 + lam), approaching P / sigma^2 for large lam
    lams = np.logspace(-2, 9, 45)
    ts = [max_feasible_t(lam, covs, ch, cfg, 0, tol=1e-6).t for lam in lams]
    assert np.allclose(ts, 1000 * lams / (10 + lams), rtol=1e-8, atol=2e-6)
    assert max(ts) == pytest.approx(1000.0, abs=1e-4)


def test_infeasible_start_is_flagged(rng):
    cfg, ch, covs = _instance(rng)
    res = max_feasible_t(0.0, covs, ch, cfg, 0, t_lo=1e6)
    assert not res.feasible and res.t == 1e6


def test_bracket_error_when_t_hi_never_exceeded():
    cfg = SystemConfig(1, 1, 10.0, 0.01)
    ch = ChannelSet(np.ones((1, 1), dtype=complex), 0.0)
    covs = CovarianceSet(np.full((1, 1, 1), 10.0, dtype=complex))
    with pytest.raises(BracketError):
        max_feasible_t(1000.0, covs, ch, cfg, 0, t_hi=1.0, max_widenings=3)
    # enough widenings recover the answer
    res = max_feasible_t(1000.0, covs, ch, cfg, 0, t_hi=1.0, max_widenings=20)
    assert res.t == pytest.approx(1e6 / 1010, abs=1e-5)


def test_max_feasible_t_matches_grid_scan(rng):
    for _ in range(10):
        cfg, ch, covs = _instance(rng, n=2, k=2, r=0.2)
        lam = rng.uniform(0.5, 20)
        tol = 1e-3
        res = max_feasible_t(lam, covs, ch, cfg, 0, tol=tol)
        if not res.feasible or res.t == 0:
            continue

        def feasible(t):
            return np.linalg.eigvalsh(build_phi(t, lam, covs, ch, cfg, 0).matrix)[0] >= 0

        # coarse scan below the answer, scan at resolution tol/2 around it
        assert all(feasible(t) for t in np.linspace(0, res.t, 50))
        grid = np.arange(max(res.t - 100 * tol, 0.0), res.t + 100 * tol, tol / 2)
        ok = np.array([feasible(t) for t in grid])
        assert ok[0] and not ok[-1]
        assert abs(res.t - grid[ok][-1]) <= tol


def test_t_upper_bound_is_an_upper_bound(rng):
    for _ in range(20):
        cfg, ch, covs = _instance(rng, r=rng.uniform(0, 0.5))
        for k in range(2):
            res = max_feasible_t(rng.uniform(0, 50), covs, ch, cfg, k)
            assert res.t <= t_upper_bound(ch, cfg, k) + 1e-6
