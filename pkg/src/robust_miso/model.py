"""Domain types, achievable rates, utilities and random channel/error generation.

All powers are linear scale. Users are indexed from 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SystemConfig",
    "Utility",
    "SumRate",
    "WeightedSumRate",
    "ProportionalFair",
    "ChannelSet",
    "CovarianceSet",
    "rate",
    "sinr",
    "utility",
    "sample_channels",
    "sample_error",
    "sample_errors",
]

HERMITIAN_TOL = 1e-9


# ---------------------------------------------------------------------------
# Utilities
# ---------------------------------------------------------------------------
class Utility:
    """Base class for strictly increasing system utilities of the user rates."""

    name = "utility"

    def __call__(self, rates) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.name}

    @staticmethod
    def from_dict(data: dict | str) -> "Utility":
        if isinstance(data, str):
            data = {"kind": data}
        kind = data.get("kind", "sum-rate")
        if kind == SumRate.name:
            return SumRate()
        if kind == ProportionalFair.name:
            return ProportionalFair()
        if kind == WeightedSumRate.name:
            return WeightedSumRate(tuple(float(w) for w in data["weights"]))
        raise ValueError(f"unknown utility kind {kind!r}")


@dataclass(frozen=True)
class SumRate(Utility):
    """Average rate, ``(1/K) sum_k R_k``."""

    name = "sum-rate"

    def __call__(self, rates) -> float:
        rates = _check_rates(rates)
        return float(np.mean(rates))


@dataclass(frozen=True)
class WeightedSumRate(Utility):
    """Unnormalized weighted sum ``sum_k w_k R_k`` with positive weights."""

    weights: tuple[float, ...] = ()
    name = "weighted-sum-rate"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be a nonempty vector of positive reals")

    def __call__(self, rates) -> float:
        rates = _check_rates(rates)
        if rates.shape != (len(self.weights),):
            raise ValueError("rates and weights differ in length")
        return float(np.dot(self.weights, rates))

    def to_dict(self) -> dict:
        return {"kind": self.name, "weights": list(self.weights)}


@dataclass(frozen=True)
class ProportionalFair(Utility):
    """Sum of log-rates. Undefined when any rate is zero."""

    name = "proportional-fair"

    def __call__(self, rates) -> float:
        rates = _check_rates(rates)
        if np.any(rates <= 0):
            raise ArithmeticError("proportional-fair utility needs strictly positive rates")
        return float(np.sum(np.log(rates)))


def _check_rates(rates) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    if rates.ndim != 1:
        raise ValueError("rates must be a 1-D vector")
    if np.any(~np.isfinite(rates)) or np.any(rates < 0):
        raise ValueError("rates must be finite and nonnegative")
    return rates


def utility(rates, kind: Utility) -> float:
    """Evaluate the system utility ``kind`` at the given per-user rates."""
    return kind(rates)


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SystemConfig:
    """Static description of the downlink.

    Parameters
    ----------
    n_tx : int
        Number of transmit antennas.
    n_users : int
        Number of single-antenna users.
    power_budget : float
        Total transmit power (linear scale).
    noise_powers : array_like
        Per-user noise powers (linear scale), length ``n_users``. A scalar is
        broadcast.
    utility : Utility
        System utility of the user rates.
    """

    n_tx: int
    n_users: int
    power_budget: float
    noise_powers: np.ndarray
    utility: Utility = field(default_factory=SumRate)

    def __post_init__(self):
        if int(self.n_tx) != self.n_tx or self.n_tx < 1:
            raise ValueError("n_tx must be a positive integer")
        if int(self.n_users) != self.n_users or self.n_users < 1:
            raise ValueError("n_users must be a positive integer")
        if not np.isfinite(self.power_budget) or self.power_budget <= 0:
            raise ValueError("power_budget must be positive")
        noise = np.broadcast_to(np.asarray(self.noise_powers, dtype=float), (self.n_users,)).copy()
        if np.any(~np.isfinite(noise)) or np.any(noise <= 0):
            raise ValueError("noise powers must be positive")
        noise.setflags(write=False)
        object.__setattr__(self, "noise_powers", noise)
        object.__setattr__(self, "n_tx", int(self.n_tx))
        object.__setattr__(self, "n_users", int(self.n_users))
        object.__setattr__(self, "power_budget", float(self.power_budget))
        if isinstance(self.utility, WeightedSumRate) and len(self.utility.weights) != self.n_users:
            raise ValueError("one weight per user is required")

    def to_dict(self) -> dict:
        return {
            "n_tx": self.n_tx,
            "n_users": self.n_users,
            "power_budget": self.power_budget,
            "noise_powers": self.noise_powers.tolist(),
            "utility": self.utility.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        return cls(
            n_tx=data["n_tx"],
            n_users=data["n_users"],
            power_budget=data["power_budget"],
            noise_powers=np.asarray(data["noise_powers"], dtype=float),
            utility=Utility.from_dict(data.get("utility", "sum-rate")),
        )


@dataclass(frozen=True)
class ChannelSet:
    """Channel estimates ``h_k`` (rows of ``estimates``) and error radii ``r_k``."""

    estimates: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        est = np.atleast_2d(np.asarray(self.estimates, dtype=complex)).copy()
        radii = np.broadcast_to(np.asarray(self.radii, dtype=float), (est.shape[0],)).copy()
        if np.any(~np.isfinite(radii)) or np.any(radii < 0):
            raise ValueError("radii must be finite and nonnegative")
        if np.any(~np.isfinite(est)):
            raise ValueError("channel estimates must be finite")
        est.setflags(write=False)
        radii.setflags(write=False)
        object.__setattr__(self, "estimates", est)
        object.__setattr__(self, "radii", radii)

    @property
    def n_users(self) -> int:
        return self.estimates.shape[0]

    @property
    def n_tx(self) -> int:
        return self.estimates.shape[1]

    def check(self, config: SystemConfig) -> None:
        if self.estimates.shape != (config.n_users, config.n_tx):
            raise ValueError(
                f"channel estimates have shape {self.estimates.shape}, "
                f"expected {(config.n_users, config.n_tx)}"
            )

    def with_radii(self, radii) -> "ChannelSet":
        return ChannelSet(self.estimates, radii)

    def to_dict(self) -> dict:
        return {
            "estimates_re": self.estimates.real.tolist(),
            "estimates_im": self.estimates.imag.tolist(),
            "radii": self.radii.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelSet":
        est = np.asarray(data["estimates_re"], dtype=float) + 1j * np.asarray(data["estimates_im"], dtype=float)
        return cls(est, np.asarray(data["radii"], dtype=float))


@dataclass(frozen=True)
class CovarianceSet:
    """Per-user transmit covariances, stacked as a ``(K, N, N)`` array."""

    matrices: np.ndarray

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=complex)
        if mats.ndim == 2:
            mats = mats[None]
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ValueError("covariances must be a stack of square matrices")
        mats = mats.copy()
        mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)

    @classmethod
    def zeros(cls, config: SystemConfig) -> "CovarianceSet":
        return cls(np.zeros((config.n_users, config.n_tx, config.n_tx), dtype=complex))

    @classmethod
    def from_beams(cls, beams) -> "CovarianceSet":
        """Rank-one covariances ``w_k w_k^H`` from beamformer rows."""
        beams = np.atleast_2d(np.asarray(beams, dtype=complex))
        return cls(np.einsum("ki,kj->kij", beams, beams.conj()))

    def __len__(self) -> int:
        return self.matrices.shape[0]

    def __getitem__(self, k):
        return self.matrices[k]

    @property
    def total_power(self) -> float:
        return float(np.einsum("kii->", self.matrices).real)

    def scaled(self, factor: float) -> "CovarianceSet":
        return CovarianceSet(self.matrices * factor)

    def violations(self, config: SystemConfig | None = None) -> dict:
        """Margins of the Hermitian, PSD and power invariants (positive = violated)."""
        herm = float(np.max(np.abs(self.matrices - self.matrices.conj().swapaxes(1, 2)), initial=0.0))
        min_eigs = [float(np.linalg.eigvalsh(0.5 * (q + q.conj().T))[0]) for q in self.matrices]
        traces = [float(np.trace(q).real) for q in self.matrices]
        out = {
            "hermitian": herm - HERMITIAN_TOL,
            "psd": max(-(e + 1e-8 * (1 + tr)) for e, tr in zip(min_eigs, traces)),
        }
        if config is not None:
            out["power"] = self.total_power - (config.power_budget + 1e-6)
        return out

    def check(self, config: SystemConfig, power: bool = True) -> None:
        """Raise ``ValueError`` on a shape mismatch or a violated invariant.

        ``power=False`` skips the budget, for evaluating arbitrary designs.
        """
        if self.matrices.shape != (config.n_users, config.n_tx, config.n_tx):
            raise ValueError(
                f"covariances have shape {self.matrices.shape}, "
                f"expected {(config.n_users, config.n_tx, config.n_tx)}"
            )
        bad = {k: v for k, v in self.violations(config if power else None).items() if v > 0}
        if bad:
            raise ValueError(f"covariance invariants violated: {bad}")

    def to_dict(self) -> dict:
        return {"re": self.matrices.real.tolist(), "im": self.matrices.imag.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "CovarianceSet":
        return cls(np.asarray(data["re"], dtype=float) + 1j * np.asarray(data["im"], dtype=float))


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------
def sinr(covs: CovarianceSet, channel, user_index: int, config: SystemConfig) -> float:
    """SINR of user ``user_index`` when its true channel is ``channel``."""
    h = np.asarray(channel, dtype=complex)
    if h.shape != (config.n_tx,):
        raise ValueError(f"channel must have dimension {config.n_tx}, got shape {h.shape}")
    if not 0 <= user_index < config.n_users:
        raise ValueError(f"user_index {user_index} out of range")
    if covs.matrices.shape[1] != config.n_tx or len(covs) != config.n_users:
        raise ValueError("covariance set does not match the configuration")
    powers = np.einsum("i,kij,j->k", h.conj(), covs.matrices, h).real
    powers = np.maximum(powers, 0.0)
    signal = powers[user_index]
    interference = powers.sum() - signal
    return float(signal / (interference + config.noise_powers[user_index]))


def rate(covs: CovarianceSet, channel, user_index: int, config: SystemConfig) -> float:
    """Achievable rate in bits/sec/Hz with single-user detection."""
    return float(np.log2(1.0 + sinr(covs, channel, user_index, config)))


# ---------------------------------------------------------------------------
# Random generation
# ---------------------------------------------------------------------------
def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly symmetric CN(0, 1) samples."""
    raw = rng.standard_normal((*shape, 2))
    return (raw[..., 0] + 1j * raw[..., 1]) / np.sqrt(2.0)


def sample_channels(config: SystemConfig, seed) -> np.ndarray:
    """Draw ``(K, N_t)`` i.i.d. CN(0, 1) channel estimates, deterministic per seed."""
    rng = np.random.default_rng(seed)
    return _complex_normal(rng, (config.n_users, config.n_tx))


def sample_errors(radius: float, dim: int, n: int, rng: np.random.Generator,
                  mode: str = "boundary") -> np.ndarray:
    """Draw ``n`` complex error vectors with norm at most ``radius``.

    ``mode="boundary"`` puts every vector on the sphere of radius ``radius``;
    ``mode="uniform-ball"`` samples uniformly from the ball seen as a
    ``2*dim``-dimensional real ball. Row ``i`` depends only on the first ``i+1``
    draws of ``rng`` so prefixes are reproducible.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if mode not in ("boundary", "uniform-ball"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    raw = rng.standard_normal((n, 2 * dim + 1))
    g = raw[:, :dim] + 1j * raw[:, dim:2 * dim]
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    direction = g / norms
    if mode == "boundary":
        scale = np.full((n, 1), float(radius))
    else:
        # uniform variate recovered from the spare normal column via its CDF
        from scipy.special import ndtr

        u = ndtr(raw[:, -1:])
        scale = radius * u ** (1.0 / (2 * dim))
    e = direction * scale
    if radius > 0 and mode == "boundary":
        # renormalize away rounding so ||e|| == radius to machine precision;
        # subnormal radii can underflow to a zero row, which is left as is
        nrm = np.linalg.norm(e, axis=1)
        ok = nrm > 0
        e[ok] *= (radius / nrm[ok])[:, None]
    return e


def sample_error(radius: float, dim: int, seed, mode: str = "boundary") -> np.ndarray:
    """Single error vector; see :func:`sample_errors`."""
    if radius == 0:
        if dim < 1:
            raise ValueError("dim must be >= 1")
        return np.zeros(dim, dtype=complex)
    return sample_errors(radius, dim, 1, np.random.default_rng(seed), mode)[0]
