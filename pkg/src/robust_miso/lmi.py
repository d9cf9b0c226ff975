"""S-lemma matrices for the worst-case SINR constraints and the eigenvalue tools around them.

For user ``k`` the worst-case SINR constraint over the error ball of radius
``r_k`` holds at level ``t`` iff some ``lambda >= 0`` makes

    Phi_k(t, lambda) = A_k (Q_k - t sum_{l != k} Q_l) A_k^H
                       + blkdiag(lambda I, -lambda r_k^2 - t sigma_k^2)

positive semidefinite, where ``A_k = [I; h_k^H]``. Every eigenvalue of
``Phi_k`` is nonincreasing in ``t``, which is what makes bisection on ``t``
valid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import ChannelSet, CovarianceSet, SystemConfig

__all__ = [
    "LmiBlock",
    "BracketError",
    "TSearch",
    "lift_matrix",
    "build_y",
    "build_phi",
    "min_eig",
    "t_upper_bound",
    "max_feasible_t",
]


class BracketError(RuntimeError):
    """The feasible set in ``t`` extends past every bracket tried."""


@dataclass(frozen=True)
class LmiBlock:
    """Assembled ``(N_t+1) x (N_t+1)`` matrix together with its arguments."""

    matrix: np.ndarray
    user_index: int
    t: float
    lam: float

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("LMI block must be square")
        if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(m), initial=0.0)):
            raise ValueError("LMI block is not Hermitian")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


class TSearch(NamedTuple):
    """Outcome of :func:`max_feasible_t`."""

    t: float
    feasible: bool
    iterations: int


def lift_matrix(estimate) -> np.ndarray:
    """``A = [I; h^H]`` of shape ``(N+1, N)``."""
    h = np.asarray(estimate, dtype=complex).ravel()
    return np.vstack([np.eye(h.size, dtype=complex), h.conj()[None, :]])


def build_y(q, estimate) -> np.ndarray:
    """Return ``A q A^H`` with ``A = [I; h^H]``; PSD whenever ``q`` is."""
    q = np.asarray(q, dtype=complex)
    h = np.asarray(estimate, dtype=complex).ravel()
    if q.shape != (h.size, h.size):
        raise ValueError(f"q has shape {q.shape} but the estimate has dimension {h.size}")
    a = lift_matrix(h)
    y = a @ q @ a.conj().T
    return 0.5 * (y + y.conj().T)


def _interference(covs: CovarianceSet, k: int) -> np.ndarray:
    return covs.matrices.sum(axis=0) - covs.matrices[k]


def build_phi(t: float, lam: float, covs: CovarianceSet, channels: ChannelSet,
              config: SystemConfig, user_index: int) -> LmiBlock:
    """Assemble ``Phi_k(t, lambda, {Q_i})`` for ``k = user_index``."""
    if t < 0 or lam < 0:
        raise ValueError("t and lambda must be nonnegative")
    k = user_index
    if not 0 <= k < config.n_users:
        raise ValueError(f"user_index {k} out of range")
    n = config.n_tx
    if covs.matrices.shape != (config.n_users, n, n):
        raise ValueError("covariance set does not match the configuration")
    mat = build_y(covs.matrices[k] - t * _interference(covs, k), channels.estimates[k])
    mat[np.arange(n), np.arange(n)] += lam
    mat[n, n] += -lam * channels.radii[k] ** 2 - t * config.noise_powers[k]
    return LmiBlock(mat, k, float(t), float(lam))


def min_eig(block) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue and a unit-norm eigenvector of a Hermitian matrix."""
    mat = block.matrix if isinstance(block, LmiBlock) else np.asarray(block, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(mat), initial=0.0)))
    if np.max(np.abs(mat - mat.conj().T), initial=0.0) > 1e-9 * scale:
        raise ValueError("matrix is not Hermitian")
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    return float(w[0]), v[:, 0]


def _min_eigval(mat: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(mat)[0])


def t_upper_bound(channels: ChannelSet, config: SystemConfig, user_index: int,
                  power: float | None = None) -> float:
    """Zero-interference full-power SINR on the best channel in the ball."""
    k = user_index
    p = config.power_budget if power is None else power
    g = (np.linalg.norm(channels.estimates[k]) + channels.radii[k]) ** 2
    return float(p * g / config.noise_powers[k])


def max_feasible_t(lam: float, covs: CovarianceSet, channels: ChannelSet,
                   config: SystemConfig, user_index: int, t_hi: float | None = None,
                   tol: float = 1e-6, t_lo: float = 0.0, eig_tol: float = 1e-6,
                   max_widenings: int = 30) -> TSearch:
    """Largest ``t`` with ``Phi_k(t, lam) >= 0``, by bisection.

    ``t_lo`` must be feasible up to ``eig_tol`` (the smallest eigenvalue there
    may be as low as ``-eig_tol``); if it is not, ``TSearch(t_lo, False, 0)``
    is returned. The upper bracket defaults to :func:`t_upper_bound` and is
    doubled at most ``max_widenings`` times before :class:`BracketError`.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    k = user_index
    n = config.n_tx
    base = build_phi(0.0, lam, covs, channels, config, k).matrix
    slope = build_y(_interference(covs, k), channels.estimates[k])
    slope[n, n] += config.noise_powers[k]

    def phi_min(t):
        return _min_eigval(base - t * slope)

    if phi_min(t_lo) < -eig_tol:
        return TSearch(float(t_lo), False, 0)
    hi = t_upper_bound(channels, config, k) if t_hi is None else float(t_hi)
    hi = max(hi, t_lo + tol)
    widenings = 0
    while phi_min(hi) >= 0:
        if widenings >= max_widenings:
            raise BracketError(f"user {k}: Phi still PSD at t = {hi:.6g}")
        hi *= 2.0
        widenings += 1
    lo = float(t_lo)
    iterations = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if phi_min(mid) >= 0:
            lo = mid
        else:
            hi = mid
        iterations += 1
    return TSearch(lo, True, iterations)
