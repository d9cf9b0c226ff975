"""Worst-case evaluation of transmit designs.

* :func:`exact_worst_sinr` certifies the minimum SINR over the error ball
  through the S-lemma matrix: the largest ``t`` for which some ``lambda >= 0``
  makes ``Phi_k(t, lambda)`` PSD.
* :func:`mc_worst_rate` estimates the same minimum from sampled errors and
  can only overshoot it.
* :func:`naive_design` ignores the uncertainty (all radii set to 0).
* :func:`oracle_grid_design` searches rank-one beamformers on a grid for
  ``N_t <= 2, K <= 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lmi import BracketError, build_phi
from .model import ChannelSet, CovarianceSet, SumRate, SystemConfig, WeightedSumRate, ProportionalFair, sample_errors
from .model import sinr as nominal_sinr
from . import wcum

__all__ = [
    "MC_CHUNK",
    "DEFAULT_GRID_RESOLUTION",
    "InstanceTooLarge",
    "UserWorstCase",
    "WorstCaseReport",
    "exact_worst_sinr",
    "certifying_multiplier",
    "mc_worst_sinr",
    "mc_worst_rate",
    "worst_case_report",
    "naive_design",
    "grid_beams",
    "rank_one_worst_sinr",
    "oracle_grid_design",
]

MC_CHUNK = 8192
DEFAULT_GRID_RESOLUTION = 8


class InstanceTooLarge(ValueError):
    """The grid oracle only handles ``N_t <= 2`` and ``K <= 2``."""


# ---------------------------------------------------------------------------
# Exact worst case through the S-lemma
# ---------------------------------------------------------------------------
def _max_over_lambda(mat0: np.ndarray, d: np.ndarray, lam0: float, max_doublings: int = 200,
                     max_steps: int = 100, stop_at_feasible: bool = True):
    """Maximize the concave ``g(lam) = min_eig(mat0 + lam * diag(d))`` over ``lam >= 0``.

    Stops as soon as ``g >= 0`` is seen unless ``stop_at_feasible`` is false.
    The supergradient at ``lam`` is
    ``sum_i d_i |v_i|^2`` for a unit minimizing eigenvector ``v``, so the
    maximizer is bracketed by a sign change and located by bisection.
    Returns ``(best_g, best_lam)``.
    """
    def probe(lam):
        w, v = np.linalg.eigh(mat0 + lam * np.diag(d))
        return w[0], float(np.real(np.sum(d * np.abs(v[:, 0]) ** 2)))

    best_g, best_lam = -np.inf, 0.0
    g, s = probe(0.0)
    best_g = g
    if (stop_at_feasible and g >= 0) or s <= 0:
        return best_g, 0.0
    lo, hi = 0.0, max(lam0, 1e-12)
    for _ in range(max_doublings):
        g, s = probe(hi)
        if g > best_g:
            best_g, best_lam = g, hi
        if stop_at_feasible and g >= 0:
            return best_g, best_lam
        if s <= 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        return best_g, best_lam
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        g, s = probe(mid)
        if g > best_g:
            best_g, best_lam = g, mid
        if stop_at_feasible and g >= 0:
            break
        if s > 0:
            lo = mid
        else:
            hi = mid
    return best_g, best_lam


def exact_worst_sinr(covs: CovarianceSet, channels: ChannelSet, config: SystemConfig,
                     user_index: int, rtol: float = 1e-13, max_widenings: int = 60) -> float:
    """Minimum SINR of user ``user_index`` over its error ball.

    Bisection on ``t`` (the feasible set is an interval containing 0), each
    step deciding ``max_lambda min_eig Phi_k(t, lambda) >= 0``.
    """
    covs.check(config, power=False)
    channels.check(config)
    k = user_index
    if not 0 <= k < config.n_users:
        raise ValueError(f"user_index {k} out of range")
    h = channels.estimates[k]
    r = float(channels.radii[k])
    if r == 0:
        return nominal_sinr(covs, h, k, config)
    q_k = covs.matrices[k]
    if np.real(np.trace(q_k)) <= 0:
        return 0.0

    n = config.n_tx
    d = np.concatenate([np.ones(n), [-r * r]])

    def zero_lambda(t):
        return build_phi(t, 0.0, covs, channels, config, k).matrix

    lam_scale = max(1.0, float(np.real(np.trace(q_k))) * (np.linalg.norm(h) + r) ** 2 / (r * r))
    lam_hint = [lam_scale]

    def feasible(t):
        g, lam = _max_over_lambda(zero_lambda(t), d, lam_hint[0])
        if lam > 0:
            lam_hint[0] = lam
        return g >= 0

    lo = 0.0
    hi = float(np.real(np.trace(q_k))) * (np.linalg.norm(h) + r) ** 2 / config.noise_powers[k]
    hi = max(hi, 1e-300)
    atol = 1e-14 * hi
    if not feasible(atol):
        # some channel in the ball (nearly) nulls the signal
        return 0.0
    widenings = 0
    while feasible(hi):
        if widenings >= max_widenings:
            raise BracketError(f"user {k}: worst-case SINR bracket failed at t = {hi:.6g}")
        lo, hi = hi, 2.0 * hi
        widenings += 1
    while hi - lo > rtol * hi + atol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return float(lo)


def certifying_multiplier(t: float, covs: CovarianceSet, channels: ChannelSet, config: SystemConfig,
                          user_index: int) -> tuple[float, float]:
    """``(lambda, min_eig)`` maximizing the smallest eigenvalue of ``Phi_k(t, lambda)``."""
    k = user_index
    r = float(channels.radii[k])
    d = np.concatenate([np.ones(config.n_tx), [-r * r]])
    mat0 = build_phi(t, 0.0, covs, channels, config, k).matrix
    scale = max(1.0, float(np.real(np.trace(covs.matrices[k]))) * (np.linalg.norm(channels.estimates[k]) + r) ** 2
                / max(r * r, 1e-12))
    # push past the first nonnegative value to the actual maximizer
    g, lam = _max_over_lambda(mat0, d, scale, stop_at_feasible=False)
    return lam, g


# ---------------------------------------------------------------------------
# Monte Carlo protocol
# ---------------------------------------------------------------------------
def _sinr_rows(covs: CovarianceSet, rows: np.ndarray, k: int, noise: float) -> np.ndarray:
    """SINR of user ``k`` for each channel row of ``rows``."""
    quad = np.einsum("si,lij,sj->sl", rows.conj(), covs.matrices, rows).real
    signal = quad[:, k]
    interference = quad.sum(axis=1) - signal
    return np.maximum(signal, 0.0) / (np.maximum(interference, 0.0) + noise)


def _deterministic_errors(covs: CovarianceSet, h: np.ndarray, r: float, k: int) -> np.ndarray:
    errs = [np.zeros_like(h)]
    g = covs.matrices[k] @ h
    if r > 0 and np.linalg.norm(g) > 0:
        u = g / np.linalg.norm(g)
        errs += [r * u, -r * u]
    return np.array(errs)


def mc_worst_sinr(covs: CovarianceSet, channels: ChannelSet, config: SystemConfig,
                  user_index: int, n_samples: int, seed, mode: str = "boundary") -> float:
    """Smallest SINR over ``n_samples`` sampled errors plus the fixed candidates.

    Samples come in chunks of :data:`MC_CHUNK`; chunk ``j`` draws from
    ``SeedSequence(seed, spawn_key=(j,))`` so any prefix of the sample stream
    is the same for every ``n_samples``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    covs.check(config, power=False)
    k = user_index
    h = channels.estimates[k]
    r = float(channels.radii[k])
    noise = float(config.noise_powers[k])
    if r == 0:
        return nominal_sinr(covs, h, k, config)
    best = float(np.min(_sinr_rows(covs, h + _deterministic_errors(covs, h, r, k), k, noise)))
    entropy = _seed_entropy(seed)
    for j, start in enumerate(range(0, n_samples, MC_CHUNK)):
        m = min(MC_CHUNK, n_samples - start)
        rng = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(j,)))
        e = sample_errors(r, config.n_tx, m, rng, mode)
        best = min(best, float(np.min(_sinr_rows(covs, h + e, k, noise))))
    return best


def mc_worst_rate(covs: CovarianceSet, channels: ChannelSet, config: SystemConfig,
                  user_index: int, n_samples: int, seed, mode: str = "boundary") -> float:
    """``log2(1 + mc_worst_sinr)``."""
    return math.log2(1.0 + mc_worst_sinr(covs, channels, config, user_index, n_samples, seed, mode))


def _seed_entropy(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed.entropy
    if seed is None:
        raise ValueError("a seed is required for reproducible sampling")
    return int(seed)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------
def _safe_utility(rates, config: SystemConfig) -> float:
    try:
        return config.utility(np.asarray(rates, dtype=float))
    except ArithmeticError:
        return -np.inf


def _finite_or_none(x):
    return float(x) if x is not None and np.isfinite(x) else None


@dataclass
class UserWorstCase:
    exact_worst_sinr: float
    exact_worst_rate: float
    mc_worst_rate: float | None
    mc_samples: int

    def to_dict(self) -> dict:
        return {
            "exact_worst_sinr": self.exact_worst_sinr,
            "exact_worst_rate": self.exact_worst_rate,
            "mc_worst_rate": self.mc_worst_rate,
            "mc_samples": self.mc_samples,
        }


@dataclass
class WorstCaseReport:
    per_user: list
    utility_exact: float
    utility_mc: float | None

    def to_dict(self) -> dict:
        return {
            "per_user": [u.to_dict() for u in self.per_user],
            "utility_exact": _finite_or_none(self.utility_exact),
            "utility_mc": _finite_or_none(self.utility_mc),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WorstCaseReport":
        users = [UserWorstCase(**u) for u in data["per_user"]]
        ue = data["utility_exact"]
        return cls(users, -np.inf if ue is None else ue, data.get("utility_mc"))


def worst_case_report(covs: CovarianceSet, channels: ChannelSet, config: SystemConfig,
                      mc_samples: int = 0, seed=0) -> WorstCaseReport:
    """Exact and (if ``mc_samples > 0``) sampled worst-case rates of every user.

    User ``k`` samples from ``SeedSequence(seed, spawn_key=(k,))``.
    """
    users = []
    for k in range(config.n_users):
        s = exact_worst_sinr(covs, channels, config, k)
        mc = None
        if mc_samples > 0:
            sub = np.random.SeedSequence(_seed_entropy(seed), spawn_key=(k,))
            mc = mc_worst_rate(covs, channels, config, k, mc_samples, sub.generate_state(2)[0])
        users.append(UserWorstCase(s, math.log2(1.0 + s), mc, int(mc_samples)))
    u_exact = _safe_utility([u.exact_worst_rate for u in users], config)
    u_mc = _safe_utility([u.mc_worst_rate for u in users], config) if mc_samples > 0 else None
    return WorstCaseReport(users, u_exact, u_mc)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------
def naive_design(channels: ChannelSet, config: SystemConfig, return_trace: bool = False, **run_kwargs):
    """The alternating algorithm run as if the estimates were exact (all radii 0)."""
    trace = wcum.run(channels.with_radii(0.0), config, **run_kwargs)
    if trace.final.covs is None:
        raise wcum.SolverFailure(f"naive design failed: {trace.message}")
    return (trace.final.covs, trace) if return_trace else trace.final.covs


def grid_beams(n_tx: int, resolution: int) -> np.ndarray:
    """Unit beam directions on the grid, shape ``(D, n_tx)``.

    For ``n_tx = 2`` the directions are ``(cos a, sin a * exp(i b))`` with
    ``a`` on ``resolution + 1`` points of ``[0, pi/2]`` and ``b`` on
    ``4 * resolution`` points of ``[0, 2 pi)``; a common phase does not change
    ``w w^H`` and is dropped.
    """
    if resolution < 1:
        raise ValueError("grid resolution must be >= 1")
    if n_tx == 1:
        return np.ones((1, 1), dtype=complex)
    if n_tx != 2:
        raise InstanceTooLarge("grid beams are only defined for n_tx <= 2")
    a = np.linspace(0.0, np.pi / 2, resolution + 1)
    b = np.arange(4 * resolution) * (np.pi / (2 * resolution))
    dirs = [(1.0 + 0j, 0j)]  # a = 0: phase b is irrelevant
    for ai in a[1:-1]:
        for bi in b:
            dirs.append((np.cos(ai), np.sin(ai) * np.exp(1j * bi)))
    dirs.append((0j, 1.0 + 0j))
    return np.array(dirs, dtype=complex)


def _trs_min(mu: np.ndarray, bvec: np.ndarray, r: float, steps: int = 200) -> np.ndarray:
    """``min sum_i mu_i x_i^2`` over ``||x - b|| <= r`` for each row (``b >= 0``).

    Uses the secular equation ``||mu * b / (mu + nu)|| = r`` in the
    multiplier ``nu > max(0, -min mu)``, solved by bisection, and the usual
    padding along the bottom eigendirection in the hard case.
    """
    B = mu.shape[0]
    out = np.empty(B)
    mu_min = mu.min(axis=1)
    nu_lo = np.maximum(0.0, -mu_min)

    # interior minimizer x = 0 when the form is PSD and the ball contains 0
    interior = (mu_min >= 0) & (np.linalg.norm(bvec, axis=1) <= r)
    out[interior] = 0.0

    def phi(nu):
        den = mu + nu[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(np.abs(mu * bvec) > 0, mu * bvec / den, 0.0)
        return np.linalg.norm(step, axis=1)

    scale = np.max(np.abs(mu), axis=1) * np.linalg.norm(bvec, axis=1) / max(r, 1e-300)
    lo = nu_lo.copy()
    hi = nu_lo + scale + 1e-12
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        big = phi(mid) > r
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
    nu = hi
    den = mu + nu[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(np.abs(bvec) > 0, nu[:, None] * bvec / den, 0.0)
    val = np.sum(mu * x * x, axis=1)
    # hard case: leftover radius goes along the most negative direction
    slack = np.maximum(r * r - np.sum((x - bvec) ** 2, axis=1), 0.0)
    val = val + np.minimum(mu_min, 0.0) * slack
    out[~interior] = val[~interior]
    return out


def rank_one_worst_sinr(signal_beams: np.ndarray, interference_beams: np.ndarray, h: np.ndarray,
                        r: float, noise: float, rtol: float = 1e-9) -> np.ndarray:
    """Exact worst-case SINR for a batch of rank-one designs seen by one user.

    ``signal_beams`` is ``(B, N)`` and ``interference_beams`` is ``(B, L, N)``.
    Bisection on ``t``: ``t`` is achievable iff the minimum of
    ``(h+e)^H (w w^H - t sum_l v_l v_l^H) (h+e)`` over ``||e|| <= r`` is at
    least ``t * noise``, a trust-region problem solved after diagonalizing.
    """
    w = np.asarray(signal_beams, dtype=complex)
    v = np.asarray(interference_beams, dtype=complex)
    B = w.shape[0]
    S = np.einsum("bi,bj->bij", w, w.conj())
    I = np.einsum("bli,blj->bij", v, v.conj())

    def feasible(t):
        mu, U = np.linalg.eigh(S - t[:, None, None] * I)
        bvec = np.abs(np.einsum("bji,j->bi", U.conj(), h))
        return _trs_min(mu, bvec, r) >= t * noise

    hi = np.einsum("bi,bi->b", w.conj(), w).real * (np.linalg.norm(h) + r) ** 2 / noise
    lo = np.zeros(B)
    hi = np.maximum(hi, 1e-300)
    atol = 1e-14 * hi
    for _ in range(200):
        active = hi - lo > rtol * hi + atol
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        ok = feasible(mid)
        lo = np.where(active & ok, mid, lo)
        hi = np.where(active & ~ok, mid, hi)
    return lo


def _rows_utility(rates: np.ndarray, config: SystemConfig) -> np.ndarray:
    u = config.utility
    if isinstance(u, SumRate):
        return rates.mean(axis=1)
    if isinstance(u, WeightedSumRate):
        return rates @ np.asarray(u.weights, dtype=float)
    if isinstance(u, ProportionalFair):
        with np.errstate(divide="ignore"):
            return np.sum(np.log(rates), axis=1)
    return np.array([_safe_utility(row, config) for row in rates])


def _candidate_sinr_bounds(beams: np.ndarray, channels: ChannelSet, config: SystemConfig):
    """Cheap lower and upper bounds on each user's worst-case SINR.

    The lower bound is the Cauchy-Schwarz extreme over the ball; the upper
    bound is the smallest SINR over a few specific errors in the ball.
    """
    B, K, N = beams.shape
    h, radii, noise = channels.estimates, channels.radii, config.noise_powers
    lower = np.empty((B, K))
    upper = np.empty((B, K))
    wnorm = np.linalg.norm(beams, axis=2)
    for k in range(K):
        g = np.abs(np.einsum("bli,i->bl", beams.conj(), h[k]))  # |w_l^H h_k|
        others = [l for l in range(K) if l != k]
        num = np.maximum(g[:, k] - radii[k] * wnorm[:, k], 0.0) ** 2
        den = noise[k] + sum((g[:, l] + radii[k] * wnorm[:, l]) ** 2 for l in others)
        lower[:, k] = num / den
        errs = [np.zeros((B, N), dtype=complex),
                np.broadcast_to(-radii[k] * h[k] / np.linalg.norm(h[k]), (B, N))]
        wk = beams[:, k, :]
        phase = np.einsum("bi,i->b", wk.conj(), h[k])
        phase = np.where(np.abs(phase) > 0, phase / np.maximum(np.abs(phase), 1e-300), 1.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(wnorm[:, k:k + 1] > 0, wk / np.maximum(wnorm[:, k:k + 1], 1e-300), 0.0)
        errs.append(-radii[k] * unit * phase[:, None])
        vals = []
        for e in errs:
            hh = h[k] + e
            sig = np.abs(np.einsum("bi,bi->b", hh.conj(), wk)) ** 2
            intf = sum(np.abs(np.einsum("bi,bi->b", hh.conj(), beams[:, l, :])) ** 2 for l in others)
            vals.append(sig / (intf + noise[k]))
        upper[:, k] = np.min(vals, axis=0)
    return lower, upper


def oracle_grid_design(channels: ChannelSet, config: SystemConfig,
                       grid_resolution: int = DEFAULT_GRID_RESOLUTION, batch: int = 4096):
    """Best rank-one design on a beam-direction x power-split grid.

    Candidates are ``w_k = sqrt(p_k) u_k`` with ``u_k`` from :func:`grid_beams`
    and ``(p_1, p_2) = P (a, 1 - a)`` for ``a`` on ``grid_resolution + 1``
    points of ``[0, 1]`` (``p_1 = P`` when ``K = 1``). Every candidate is
    ranked by the utility of its exact worst-case rates. Candidates whose
    upper bound cannot beat the best exact value found are skipped, which
    leaves the maximizer unchanged. Returns ``(covs, utility)`` with the
    utility recomputed by :func:`exact_worst_sinr`.
    """
    channels.check(config)
    K, N = config.n_users, config.n_tx
    if N > 2 or K > 2:
        raise InstanceTooLarge(f"grid oracle needs n_tx <= 2 and n_users <= 2, got {N} and {K}")
    dirs = grid_beams(N, grid_resolution)
    P = config.power_budget
    if K == 1:
        beams = np.sqrt(P) * dirs[:, None, :]
    else:
        split = np.linspace(0.0, 1.0, grid_resolution + 1)
        D = dirs.shape[0]
        i1, i2, ia = np.meshgrid(np.arange(D), np.arange(D), np.arange(split.size), indexing="ij")
        i1, i2, ia = i1.ravel(), i2.ravel(), ia.ravel()
        beams = np.stack([np.sqrt(P * split[ia])[:, None] * dirs[i1],
                          np.sqrt(P * (1.0 - split[ia]))[:, None] * dirs[i2]], axis=1)

    lower, upper = _candidate_sinr_bounds(beams, channels, config)
    u_lower = _rows_utility(np.log2(1.0 + lower), config)
    u_upper = _rows_utility(np.log2(1.0 + upper), config)
    best_val = float(np.max(u_lower))
    best_idx = int(np.argmax(u_lower))
    order = np.argsort(-u_upper, kind="stable")
    order = order[u_upper[order] >= best_val]
    for start in range(0, order.size, batch):
        idx = order[start:start + batch]
        if u_upper[idx[0]] <= best_val:
            break
        sinrs = np.empty((idx.size, K))
        for k in range(K):
            others = [l for l in range(K) if l != k]
            interf = beams[idx][:, others, :] if others else np.zeros((idx.size, 0, N), dtype=complex)
            sinrs[:, k] = rank_one_worst_sinr(beams[idx, k, :], interf, channels.estimates[k],
                                              float(channels.radii[k]), float(config.noise_powers[k]))
        vals = _rows_utility(np.log2(1.0 + sinrs), config)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_idx = float(vals[j]), int(idx[j])

    covs = CovarianceSet.from_beams(beams[best_idx])
    rates = [math.log2(1.0 + exact_worst_sinr(covs, channels, config, k)) for k in range(K)]
    return covs, _safe_utility(rates, config)
