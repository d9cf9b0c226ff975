"""Alternating worst-case utility maximization.

Starting from a feasible vector of worst-case SINR targets ``t``, each
iteration

1. solves the covariance subproblem at the previous targets, maximizing the
   summed eigenvalue slacks ``z_k`` of the S-lemma matrices, and
2. raises every target separately, by bisection, to the largest value that
   keeps its S-lemma matrix PSD for the new covariances and multipliers.

The utility of the targets never decreases, and a positive slack sum forces a
strict increase. The loop stops when the utility moves by at most ``epsilon``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .lmi import build_phi, max_feasible_t, min_eig
from .model import ChannelSet, CovarianceSet, SystemConfig, sinr

__all__ = [
    "ZERO_SLACK",
    "WcumState",
    "IterationTrace",
    "Check",
    "Certificate",
    "SolverFailure",
    "mrt_beams",
    "init_t",
    "init_t_from_beams",
    "step_q",
    "step_t",
    "run",
    "certify_limit",
    "targets_utility",
]

log = logging.getLogger(__name__)

ZERO_SLACK = 1e-5
FEAS_TOL = 1e-6

EPSILON_CRITERION = "epsilon-criterion"
ITERATION_CAP = "iteration-cap"
SOLVER_FAILURE = "solver-failure"


class SolverFailure(RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass
class WcumState:
    iteration: int
    t: np.ndarray
    lambdas: np.ndarray | None
    slacks: np.ndarray | None
    covs: CovarianceSet | None
    utility_value: float
    psi: float | None

    def to_record(self, include_covs: bool = False) -> dict:
        rec = {
            "m": self.iteration,
            "t": self.t.tolist(),
            "lambda": None if self.lambdas is None else self.lambdas.tolist(),
            "z": None if self.slacks is None else self.slacks.tolist(),
            "psi": self.psi,
            "utility": self.utility_value,
        }
        if include_covs and self.covs is not None:
            rec["covs"] = self.covs.to_dict()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "WcumState":
        def arr(v):
            return None if v is None else np.asarray(v, dtype=float)

        return cls(
            iteration=int(rec["m"]),
            t=np.asarray(rec["t"], dtype=float),
            lambdas=arr(rec.get("lambda")),
            slacks=arr(rec.get("z")),
            covs=CovarianceSet.from_dict(rec["covs"]) if rec.get("covs") else None,
            utility_value=float(rec["utility"]),
            psi=rec.get("psi"),
        )


@dataclass
class Check:
    name: str
    passed: bool
    margin: float
    detail: dict = field(default_factory=dict)


@dataclass
class Certificate:
    """Post-convergence checks; ``margin > 0`` means the check is violated by that much."""

    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "margin": c.margin, **c.detail}
                for c in self.checks
            ],
        }


@dataclass
class IterationTrace:
    states: list
    converged: bool
    stop_reason: str
    certificate: Certificate | None = None
    message: str = ""

    @property
    def final(self) -> WcumState:
        return self.states[-1]

    @property
    def iterations(self) -> int:
        return self.final.iteration

    @property
    def utilities(self) -> np.ndarray:
        return np.array([s.utility_value for s in self.states])

    def to_records(self, include_covs: bool = False) -> list:
        return [s.to_record(include_covs) for s in self.states]

    def write_jsonl(self, path, include_covs: bool = False) -> None:
        with open(path, "w") as fh:
            for rec in self.to_records(include_covs):
                fh.write(json.dumps(rec) + "\n")

    @staticmethod
    def read_states(path) -> list:
        with open(path) as fh:
            return [WcumState.from_record(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------
def mrt_beams(channels: ChannelSet, config: SystemConfig) -> np.ndarray:
    """Equal-power maximum-ratio beamformers, one row per user."""
    norms = np.linalg.norm(channels.estimates, axis=1)
    if np.any(norms == 0):
        raise ValueError("channel estimates must be nonzero")
    return np.sqrt(config.power_budget / config.n_users) * channels.estimates / norms[:, None]


def init_t_from_beams(channels: ChannelSet, config: SystemConfig, beams) -> np.ndarray:
    """Worst-case SINR lower bounds of a rank-one design ``Q_k = w_k w_k^H``.

    Uses the Cauchy-Schwarz extremes over the error ball: the signal term
    shrinks by at most ``r_k ||w_k||`` in magnitude and each interference
    term grows by at most ``r_k ||w_l||``.
    """
    beams = np.asarray(beams, dtype=complex)
    h, r, noise = channels.estimates, channels.radii, config.noise_powers
    gains = np.abs(h.conj() @ beams.T)  # gains[k, l] = |h_k^H w_l|
    wnorm = np.linalg.norm(beams, axis=1)
    K = config.n_users
    t = np.empty(K)
    for k in range(K):
        num = max(gains[k, k] - r[k] * wnorm[k], 0.0) ** 2
        den = sum((gains[k, l] + r[k] * wnorm[l]) ** 2 for l in range(K) if l != k)
        t[k] = num / (den + noise[k])
    return t


def init_t(channels: ChannelSet, config: SystemConfig) -> np.ndarray:
    """Feasible starting targets from equal-power MRT, in closed form."""
    channels.check(config)
    h, r, noise = channels.estimates, channels.radii, config.noise_powers
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms == 0):
        raise ValueError("channel estimates must be nonzero")
    K = config.n_users
    p = config.power_budget / K
    t = np.empty(K)
    for k in range(K):
        num = p * max(norms[k] - r[k], 0.0) ** 2
        den = sum(p * (abs(np.vdot(h[k], h[l])) / norms[l] + r[k]) ** 2 for l in range(K) if l != k)
        t[k] = num / (den + noise[k])
    return t


# ---------------------------------------------------------------------------
# Iteration steps
# ---------------------------------------------------------------------------
def targets_utility(t, config: SystemConfig) -> float:
    """Utility of the rates ``log2(1 + t_k)``; ``-inf`` where it is undefined."""
    rates = np.log2(1.0 + np.maximum(np.asarray(t, dtype=float), 0.0))
    try:
        return config.utility(rates)
    except ArithmeticError:
        return -np.inf


def step_q(state: WcumState, channels: ChannelSet, config: SystemConfig,
           settings: conic.SolverSettings | None = None, backend=None):
    """Solve the covariance subproblem at ``state.t``.

    Returns ``(covs, lambdas, slacks, psi)``; raises :class:`SolverFailure`
    when the solver does not return an (almost) optimal point.
    """
    problem = conic.build_subproblem_q(state.t, channels, config)
    sol = conic.solve(problem, settings, backend)
    if not sol.ok:
        raise SolverFailure(
            f"covariance subproblem: {sol.status} ({sol.solver_stats.get('raw_status')})", sol
        )
    K = config.n_users
    covs = CovarianceSet(np.array([sol[conic.q_name(k)] for k in range(K)]))
    # zero-radius users carry no multiplier; 0 stands in for it
    lambdas = np.maximum([sol.variable_values.get(conic.lambda_name(k), 0.0) for k in range(K)], 0.0)
    slacks = np.array([sol[conic.z_name(k)] for k in range(K)])
    return covs, lambdas, slacks, float(slacks.sum())


def step_t(state: WcumState, channels: ChannelSet, config: SystemConfig, tol: float = 1e-6):
    """Raise each target to the edge of its PSD region for ``state.covs``/``state.lambdas``.

    ``state.t`` holds the previous targets, which remain feasible; the search
    for user ``k`` starts there so targets never decrease. A zero-radius user
    takes its nominal SINR, the largest target its scalar constraint allows.
    """
    t = np.empty(config.n_users)
    for k in range(config.n_users):
        if channels.radii[k] == 0:
            t[k] = sinr(state.covs, channels.estimates[k], k, config)
            continue
        res = max_feasible_t(state.lambdas[k], state.covs, channels, config, k,
                             tol=tol, t_lo=state.t[k], eig_tol=FEAS_TOL)
        if not res.feasible:
            # solver inaccuracy can leave the old target marginally outside the region
            log.debug("user %d: previous target %.6g no longer feasible; restarting from 0", k, state.t[k])
            res = max_feasible_t(state.lambdas[k], state.covs, channels, config, k, tol=tol,
                                 eig_tol=np.inf)
        t[k] = res.t
    return t, targets_utility(t, config)


def run(channels: ChannelSet, config: SystemConfig, epsilon: float = 1e-3, max_iters: int = 200,
        t_init=None, settings: conic.SolverSettings | None = None, backend=None,
        bisection_tol: float = 1e-6, slack_tol: float | None = None,
        certify: bool = True) -> IterationTrace:
    """Run the alternating algorithm from ``t_init`` (default :func:`init_t`).

    Parameters
    ----------
    epsilon : float
        Stop once the utility changes by at most this much between iterations.
    max_iters : int
        Iteration cap.
    slack_tol : float, optional
        If given, additionally require the slack sum of the last covariance
        step to be at most ``slack_tol`` before stopping.
    certify : bool
        Attach :func:`certify_limit` of the final state to the trace.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    channels.check(config)
    t = init_t(channels, config) if t_init is None else np.asarray(t_init, dtype=float).copy()
    state = WcumState(0, t, None, None, None, targets_utility(t, config), None)
    states = [state]
    stop_reason, converged, message = ITERATION_CAP, False, ""

    for m in range(1, max_iters + 1):
        try:
            covs, lambdas, slacks, psi = step_q(state, channels, config, settings, backend)
        except SolverFailure as exc:
            stop_reason, message = SOLVER_FAILURE, str(exc)
            log.warning("iteration %d: %s", m, exc)
            break
        if m == 1 and psi <= ZERO_SLACK:
            # the start is already stationary; keep its targets
            states.append(WcumState(1, state.t.copy(), lambdas, slacks, covs, state.utility_value, psi))
            stop_reason, converged = EPSILON_CRITERION, True
            break
        inner = WcumState(m, state.t, lambdas, slacks, covs, state.utility_value, psi)
        t_new, u_new = step_t(inner, channels, config, tol=bisection_tol)
        new = WcumState(m, t_new, lambdas, slacks, covs, u_new, psi)
        states.append(new)
        if np.isfinite(u_new) and np.isfinite(state.utility_value):
            small = abs(u_new - state.utility_value) <= epsilon
        else:
            small = bool(np.all(np.abs(t_new - state.t) <= bisection_tol))
        state = new
        if small and (slack_tol is None or psi <= slack_tol):
            stop_reason, converged = EPSILON_CRITERION, True
            break

    trace = IterationTrace(states, converged, stop_reason, message=message)
    if certify and trace.final.covs is not None:
        trace.certificate = certify_limit(trace.final, channels, config, settings=settings, backend=backend)
    return trace


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------
def _constraint_min(t, lam, covs, channels, config, k) -> float:
    """Smallest eigenvalue of ``Phi_k``, or the scalar SINR margin for a zero radius."""
    if channels.radii[k] == 0:
        h = channels.estimates[k]
        g = np.einsum("i,kij,j->k", h.conj(), covs.matrices, h).real
        return float(g[k] - max(t, 0.0) * (g.sum() - g[k] + config.noise_powers[k]))
    return min_eig(build_phi(max(t, 0.0), max(lam, 0.0), covs, channels, config, k))[0]


def certify_limit(final: WcumState, channels: ChannelSet, config: SystemConfig,
                  probe: bool = True, settings: conic.SolverSettings | None = None,
                  backend=None) -> Certificate:
    """Check a limit point for feasibility, zero slack and local Pareto optimality.

    * ``feasibility``: every S-lemma matrix at the final targets is PSD to
      within 1e-6 (the scalar SINR margin for a zero-radius user), the power budget holds to within 1e-6, covariances are PSD
      to within 1e-8 and multipliers are nonnegative.
    * ``zero-slack``: the slacks of the last covariance step are at most 1e-5.
    * ``pareto-probe``: re-solving the covariance subproblem at the final
      targets leaves a slack sum of at most 1e-5, so no target can be raised
      with the others held fixed.
    """
    if final.covs is None or final.lambdas is None:
        raise ValueError("final state carries no covariances")
    K = config.n_users
    covs, lambdas, t = final.covs, final.lambdas, final.t
    phi_min = np.array([_constraint_min(t[k], lambdas[k], covs, channels, config, k) for k in range(K)])
    q_min = np.array([np.linalg.eigvalsh(q)[0] for q in covs.matrices])
    margins = {
        "phi": float(np.max(-phi_min) - FEAS_TOL),
        "power": covs.total_power - config.power_budget - FEAS_TOL,
        "cov_psd": float(np.max(-q_min) - 1e-8),
        "lambda": float(np.max(-lambdas)),
        "t": float(np.max(-t)),
    }
    feas_margin = max(margins.values())
    checks = [Check("feasibility", feas_margin <= 0, feas_margin,
                    {"phi_min_eig": phi_min.tolist(), "total_power": covs.total_power,
                     "cov_min_eig": q_min.tolist()})]

    if final.slacks is not None:
        zmax = float(np.max(np.abs(final.slacks)))
        checks.append(Check("zero-slack", zmax <= ZERO_SLACK, zmax - ZERO_SLACK, {"z": final.slacks.tolist()}))

    if probe:
        try:
            _, _, slacks, psi = step_q(WcumState(final.iteration, t, None, None, None, 0.0, None),
                                       channels, config, settings, backend)
            checks.append(Check("pareto-probe", psi <= ZERO_SLACK, psi - ZERO_SLACK,
                                {"psi": psi, "z": slacks.tolist()}))
        except SolverFailure as exc:
            checks.append(Check("pareto-probe", False, np.inf, {"error": str(exc)}))
    return Certificate(checks)
