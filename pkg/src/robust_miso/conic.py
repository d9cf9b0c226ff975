"""Semidefinite programs over complex Hermitian variables and their solution.

Problems are described with complex Hermitian matrix variables and affine
Hermitian-valued constraint maps (:class:`SdpProblem`). Backends that only
support real symmetric cones receive the lowered form produced by
:func:`lower`, which is the single place where the complex-to-real embedding
happens.

The in-tree backend (:class:`ClarabelBackend`) hands the lowered problem to
Clarabel. :class:`CvxpyBackend` solves the complex description through cvxpy
instead and serves as an independent reference.
"""

from __future__ import annotations

import functools
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.sparse as sp

from .lmi import lift_matrix
from .model import ChannelSet, SystemConfig

__all__ = [
    "embed_hermitian",
    "HermitianVar",
    "ScalarVar",
    "CongruenceTerm",
    "ScalarTerm",
    "LmiConstraint",
    "LinearConstraint",
    "SdpProblem",
    "SdpSolution",
    "SolverSettings",
    "RealConicForm",
    "lower",
    "ClarabelBackend",
    "CvxpyBackend",
    "solve",
    "build_subproblem_q",
    "write_cbf",
]

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
NEAR_OPTIMAL = "near-optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"


def embed_hermitian(h) -> np.ndarray:
    """Real embedding ``[[Re H, -Im H], [Im H, Re H]]``.

    Works for rectangular input as well; for Hermitian ``H`` the result is
    symmetric, PSD iff ``H`` is, and carries every eigenvalue twice.
    """
    h = np.asarray(h)
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])


# ---------------------------------------------------------------------------
# Problem description
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class HermitianVar:
    name: str
    size: int
    psd: bool = True


@dataclass(frozen=True)
class ScalarVar:
    name: str
    lower: float | None = None
    upper: float | None = None


@dataclass(frozen=True)
class CongruenceTerm:
    """``scale * L X L^H`` for a Hermitian variable ``X``."""

    var: str
    left: np.ndarray
    scale: float = 1.0


@dataclass(frozen=True)
class ScalarTerm:
    """``x * G`` for a scalar variable ``x`` and Hermitian ``G``."""

    var: str
    coeff: np.ndarray


@dataclass(frozen=True)
class LmiConstraint:
    """``constant + sum(terms) >= 0`` in the PSD order."""

    constant: np.ndarray
    terms: tuple
    name: str = ""

    @property
    def size(self) -> int:
        return self.constant.shape[0]


@dataclass(frozen=True)
class LinearConstraint:
    """``sum_s a_s x_s + sum_X Re tr(C_X X)  (<= | == | >=)  rhs``."""

    scalar_coeffs: dict
    trace_coeffs: dict
    sense: str
    rhs: float
    name: str = ""

    def __post_init__(self):
        if self.sense not in ("<=", "==", ">="):
            raise ValueError(f"bad constraint sense {self.sense!r}")


@dataclass(frozen=True)
class SdpProblem:
    """Maximize a linear objective subject to LMIs and linear constraints.

    ``objective`` maps scalar variable names to coefficients and Hermitian
    variable names to matrices ``C`` (contributing ``Re tr(C X)``). Hermitian
    variables flagged ``psd`` carry their own PSD cone; scalar bounds are
    stored on the :class:`ScalarVar` descriptors.
    """

    variables: tuple
    objective: dict
    lmi_constraints: tuple
    linear_constraints: tuple = ()

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names")
        lookup = self.variable_map
        for con in self.lmi_constraints:
            m = con.size
            _check_hermitian(con.constant, f"constant of {con.name}")
            for term in con.terms:
                var = lookup.get(term.var)
                if var is None:
                    raise ValueError(f"unknown variable {term.var!r} in {con.name}")
                if isinstance(term, CongruenceTerm):
                    if not isinstance(var, HermitianVar) or term.left.shape != (m, var.size):
                        raise ValueError(f"inconsistent congruence term on {term.var!r} in {con.name}")
                elif isinstance(term, ScalarTerm):
                    if not isinstance(var, ScalarVar) or term.coeff.shape != (m, m):
                        raise ValueError(f"inconsistent scalar term on {term.var!r} in {con.name}")
                    _check_hermitian(term.coeff, f"coefficient of {term.var} in {con.name}")
                else:
                    raise TypeError(f"unsupported term {term!r}")
        for con in self.linear_constraints:
            for name in (*con.scalar_coeffs, *con.trace_coeffs):
                if name not in lookup:
                    raise ValueError(f"unknown variable {name!r} in {con.name}")
            for name, c in con.trace_coeffs.items():
                if c.shape != (lookup[name].size,) * 2:
                    raise ValueError(f"trace coefficient of {name!r} has wrong shape")

    @property
    def variable_map(self) -> dict:
        return {v.name: v for v in self.variables}

    @property
    def n_lmi(self) -> int:
        return len(self.lmi_constraints)

    @property
    def n_psd_vars(self) -> int:
        return sum(isinstance(v, HermitianVar) and v.psd for v in self.variables)

    @property
    def n_linear(self) -> int:
        return len(self.linear_constraints)

    @property
    def n_bounds(self) -> int:
        return sum(
            (v.lower is not None) + (v.upper is not None)
            for v in self.variables if isinstance(v, ScalarVar)
        )

    def lmi_value(self, con: LmiConstraint, values: dict) -> np.ndarray:
        out = np.array(con.constant, dtype=complex)
        for term in con.terms:
            x = values[term.var]
            if isinstance(term, CongruenceTerm):
                out = out + term.scale * (term.left @ x @ term.left.conj().T)
            else:
                out = out + x * term.coeff
        return 0.5 * (out + out.conj().T)

    def objective_value(self, values: dict) -> float:
        return float(sum(_linear_part(name, c, values[name]) for name, c in self.objective.items()))

    def residual(self, values: dict) -> float:
        """Largest scaled constraint violation of ``values`` (0 when feasible)."""
        worst = 0.0
        for con in self.lmi_constraints:
            mat = self.lmi_value(con, values)
            lo = float(np.linalg.eigvalsh(mat)[0])
            worst = max(worst, -lo / (1.0 + np.max(np.abs(mat))))
        for con in self.linear_constraints:
            lhs = sum(_linear_part(n, a, values[n]) for n, a in con.scalar_coeffs.items())
            lhs += sum(_linear_part(n, c, values[n]) for n, c in con.trace_coeffs.items())
            gap = {"<=": lhs - con.rhs, ">=": con.rhs - lhs, "==": abs(lhs - con.rhs)}[con.sense]
            worst = max(worst, gap / (1.0 + abs(con.rhs)))
        for var in self.variables:
            x = values[var.name]
            if isinstance(var, HermitianVar) and var.psd:
                lo = float(np.linalg.eigvalsh(x)[0])
                worst = max(worst, -lo / (1.0 + np.max(np.abs(x))))
            elif isinstance(var, ScalarVar):
                if var.lower is not None:
                    worst = max(worst, (var.lower - x) / (1.0 + abs(var.lower)))
                if var.upper is not None:
                    worst = max(worst, (x - var.upper) / (1.0 + abs(var.upper)))
        return float(worst)


def _check_hermitian(m, what):
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{what} must be square")
    if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(m), initial=0.0)):
        raise ValueError(f"{what} is not Hermitian")


def _linear_part(name, coeff, value) -> float:
    if np.ndim(coeff) == 0:
        return float(coeff) * float(value)
    return float(np.trace(np.asarray(coeff) @ value).real)


@dataclass
class SdpSolution:
    status: str
    variable_values: dict
    objective_value: float
    solver_stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, NEAR_OPTIMAL)

    def __getitem__(self, name):
        return self.variable_values[name]


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-8
    max_iter: int = 200
    residual_tol: float = 1e-6
    regularization: tuple = (1e-8, 1e-7, 1e-6)
    psd_clip: float = -1e-9
    # last resort after the regularization retries; ``None`` disables it
    fallback_tol: float | None = 1e-7


# ---------------------------------------------------------------------------
# Lowering to real symmetric cones
# ---------------------------------------------------------------------------
def _svec_basis(n: int) -> np.ndarray:
    """Orthonormal basis of symmetric ``n x n`` matrices matching Clarabel's
    scaled upper-triangle, column-major ``svec``."""
    basis = []
    s = 1.0 / np.sqrt(2.0)
    for j in range(n):
        for i in range(j + 1):
            e = np.zeros((n, n))
            if i == j:
                e[i, i] = 1.0
            else:
                e[i, j] = e[j, i] = s
            basis.append(e)
    return np.array(basis)


@functools.lru_cache(maxsize=None)
def _basis(n: int) -> np.ndarray:
    return _svec_basis(n)


@functools.lru_cache(maxsize=None)
def _svec_index(n: int):
    i = np.array([i for j in range(n) for i in range(j + 1)])
    j = np.array([j for j in range(n) for _ in range(j + 1)])
    return i, j, np.where(i == j, 1.0, np.sqrt(2.0))


def svec(m: np.ndarray) -> np.ndarray:
    """Scaled upper triangle, column-major; works on stacks of matrices."""
    i, j, scale = _svec_index(m.shape[-1])
    return m[..., i, j] * scale


def smat(v: np.ndarray, n: int) -> np.ndarray:
    return np.tensordot(v, _basis(n), axes=(0, 0))


@dataclass
class RealConicForm:
    """``min c'x  s.t.  b - A x in K`` with ``K`` a product of zero,
    nonnegative and PSD-triangle cones (listed in row order)."""

    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list
    layout: dict
    sign: float = -1.0  # objective of the original (max) problem is sign * c'x

    @property
    def n_vars(self) -> int:
        return self.c.size


def lower(problem: SdpProblem) -> RealConicForm:
    """Lower a complex Hermitian problem onto real symmetric cones.

    Each Hermitian ``n x n`` variable becomes a real symmetric ``2n x 2n``
    variable constrained to the embedding structure; every LMI of size ``m``
    becomes a real LMI of size ``2m`` through :func:`embed_hermitian`.
    """
    layout = {}
    offset = 0
    for var in problem.variables:
        if isinstance(var, HermitianVar):
            N = 2 * var.size
            width = N * (N + 1) // 2
        else:
            width = 1
        layout[var.name] = (offset, width)
        offset += width
    nx = offset

    blocks_A, blocks_b, cones = [], [], []

    # structure equalities of the embedded variables and linear equalities
    zero_rows = []
    for var in problem.variables:
        if isinstance(var, HermitianVar):
            zero_rows.extend(_structure_rows(var, layout[var.name], nx))
    eq_rows, eq_b = [], []
    for con in problem.linear_constraints:
        if con.sense == "==":
            eq_rows.append(_linear_row(con, layout, problem, nx))
            eq_b.append(con.rhs)
    n_zero = len(zero_rows) + len(eq_rows)
    if n_zero:
        blocks_A.append(np.array(zero_rows + eq_rows).reshape(n_zero, nx))
        blocks_b.append(np.r_[np.zeros(len(zero_rows)), np.asarray(eq_b, dtype=float)])
        cones.append(("zero", n_zero))

    # inequalities and bounds
    ineq_rows, ineq_b = [], []
    for con in problem.linear_constraints:
        if con.sense == "==":
            continue
        row = _linear_row(con, layout, problem, nx)
        if con.sense == "<=":
            ineq_rows.append(row)
            ineq_b.append(con.rhs)
        else:
            ineq_rows.append(-row)
            ineq_b.append(-con.rhs)
    for var in problem.variables:
        if isinstance(var, ScalarVar):
            j = layout[var.name][0]
            if var.lower is not None:
                row = np.zeros(nx)
                row[j] = -1.0
                ineq_rows.append(row)
                ineq_b.append(-var.lower)
            if var.upper is not None:
                row = np.zeros(nx)
                row[j] = 1.0
                ineq_rows.append(row)
                ineq_b.append(var.upper)
    if ineq_rows:
        blocks_A.append(np.array(ineq_rows))
        blocks_b.append(np.asarray(ineq_b, dtype=float))
        cones.append(("nonneg", len(ineq_rows)))

    # LMIs
    for con in problem.lmi_constraints:
        M = 2 * con.size
        rows = M * (M + 1) // 2
        block = np.zeros((rows, nx))
        for term in con.terms:
            off, width = layout[term.var]
            if isinstance(term, CongruenceTerm):
                n = problem.variable_map[term.var].size
                lr = embed_hermitian(term.left)
                mats = term.scale * np.einsum("ai,jik,bk->jab", lr, _basis(2 * n), lr, optimize=True)
                block[:, off:off + width] -= svec(mats).T
            else:
                block[:, off] -= svec(embed_hermitian(term.coeff))
        blocks_A.append(block)
        blocks_b.append(svec(embed_hermitian(con.constant)))
        cones.append(("psd", M))

    # PSD cones of the variables themselves
    for var in problem.variables:
        if isinstance(var, HermitianVar) and var.psd:
            off, width = layout[var.name]
            block = np.zeros((width, nx))
            block[:, off:off + width] = -np.eye(width)
            blocks_A.append(block)
            blocks_b.append(np.zeros(width))
            cones.append(("psd", 2 * var.size))

    c = np.zeros(nx)
    for name, coeff in problem.objective.items():
        off, width = layout[name]
        if np.ndim(coeff) == 0:
            c[off] -= float(coeff)
        else:
            n = problem.variable_map[name].size
            cr = embed_hermitian(np.asarray(coeff))
            c[off:off + width] -= 0.5 * np.einsum("ab,jba->j", cr, _basis(2 * n))

    A = sp.csc_matrix(np.vstack(blocks_A))
    A.eliminate_zeros()
    return RealConicForm(c=c, A=A, b=np.concatenate(blocks_b), cones=cones, layout=layout)


def _structure_rows(var: HermitianVar, slot, nx):
    """Rows forcing a symmetric ``2n x 2n`` variable into ``[[R, -I], [I, R]]`` form."""
    n = var.size
    off, width = slot
    basis = _basis(2 * n)
    rows = []
    for i in range(n):
        for j in range(i, n):
            row = np.zeros(nx)
            row[off:off + width] = basis[:, i, j] - basis[:, n + i, n + j]
            rows.append(row)
    for i in range(n):
        for j in range(i, n):
            row = np.zeros(nx)
            row[off:off + width] = basis[:, n + i, j] + basis[:, i, n + j]
            rows.append(row)
    return rows


def _linear_row(con: LinearConstraint, layout, problem, nx) -> np.ndarray:
    row = np.zeros(nx)
    for name, a in con.scalar_coeffs.items():
        row[layout[name][0]] += float(a)
    for name, c in con.trace_coeffs.items():
        off, width = layout[name]
        n = problem.variable_map[name].size
        cr = embed_hermitian(np.asarray(c))
        row[off:off + width] += 0.5 * np.einsum("ab,jba->j", cr, _basis(2 * n))
    return row


def _extract(problem: SdpProblem, form: RealConicForm, x: np.ndarray, clip: float) -> dict:
    values = {}
    for var in problem.variables:
        off, width = form.layout[var.name]
        if isinstance(var, ScalarVar):
            values[var.name] = float(x[off])
            continue
        n = var.size
        xt = smat(x[off:off + width], 2 * n)
        re = 0.5 * (xt[:n, :n] + xt[n:, n:])
        im = 0.5 * (xt[n:, :n] - xt[:n, n:])
        values[var.name] = _clean_hermitian(re + 1j * im, clip if var.psd else None)
    return values


def _clean_hermitian(h: np.ndarray, clip: float | None) -> np.ndarray:
    h = 0.5 * (h + h.conj().T)
    if clip is None:
        return h
    w, v = np.linalg.eigh(h)
    if w[0] >= clip:
        return h
    w = np.maximum(w, clip)
    h = (v * w) @ v.conj().T
    return 0.5 * (h + h.conj().T)


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------
class Backend(Protocol):
    name: str

    def solve(self, problem: SdpProblem, settings: SolverSettings) -> SdpSolution: ...


_CLARABEL_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": NEAR_OPTIMAL,
    "InsufficientProgress": NEAR_OPTIMAL,
    # caps count as failures; the last iterate stays attached
    "MaxIterations": NUMERICAL_FAILURE,
    "MaxTime": NUMERICAL_FAILURE,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
}


@dataclass
class _Crashed:
    """Stand-in result for a solver call that raised instead of returning."""

    status: str
    n_vars: int
    iterations: int = 0

    @property
    def x(self):
        return np.full(self.n_vars, np.nan)


class ClarabelBackend:
    """Interior-point solve of the lowered real problem with Clarabel.

    Numerical breakdowns (including solver panics) are retried with stronger
    static regularization (``settings.regularization``) and finally once at
    the looser ``settings.fallback_tol`` before giving up.
    """

    name = "clarabel"

    def solve(self, problem: SdpProblem, settings: SolverSettings) -> SdpSolution:
        import clarabel

        form = lower(problem)
        cones = []
        for kind, dim in form.cones:
            if kind == "zero":
                cones.append(clarabel.ZeroConeT(dim))
            elif kind == "nonneg":
                cones.append(clarabel.NonnegativeConeT(dim))
            else:
                cones.append(clarabel.PSDTriangleConeT(dim))
        P = sp.csc_matrix((form.n_vars, form.n_vars))

        best = None
        t0 = time.perf_counter()
        plan = [(reg, settings.tol) for reg in settings.regularization]
        if settings.fallback_tol is not None and settings.fallback_tol > settings.tol:
            plan.append((settings.regularization[0], settings.fallback_tol))
        for attempt, (reg, tol) in enumerate(plan):
            opts = clarabel.DefaultSettings()
            opts.verbose = False
            opts.max_iter = settings.max_iter
            opts.tol_gap_abs = tol
            opts.tol_gap_rel = tol
            opts.tol_feas = tol
            opts.static_regularization_constant = reg
            try:
                raw = clarabel.DefaultSolver(P, form.c, form.A, form.b, cones, opts).solve()
            except BaseException as exc:
                # Rust panics surface as pyo3 PanicException, a BaseException subclass
                if isinstance(exc, (KeyboardInterrupt, SystemExit)):
                    raise
                raw = _Crashed(f"{type(exc).__name__}: {exc}", form.n_vars)
            raw_status = str(raw.status)
            x = np.asarray(raw.x, dtype=float)
            status = _CLARABEL_STATUS.get(raw_status, NUMERICAL_FAILURE)
            if status == OPTIMAL and tol > settings.tol:
                status = NEAR_OPTIMAL
            values = _extract(problem, form, x, settings.psd_clip) if np.all(np.isfinite(x)) else None
            residual = problem.residual(values) if values is not None else np.inf
            if status in (OPTIMAL, NEAR_OPTIMAL) and residual > settings.residual_tol:
                status = NUMERICAL_FAILURE
            stats = {
                "solver": self.name,
                "raw_status": raw_status,
                "iterations": int(raw.iterations),
                "primal_residual": float(residual),
                "attempts": attempt + 1,
            }
            sol = SdpSolution(
                status=status,
                variable_values=values or {},
                objective_value=problem.objective_value(values) if values is not None else np.nan,
                solver_stats=stats,
            )
            if status in (OPTIMAL, NEAR_OPTIMAL, INFEASIBLE):
                best = sol
                break
            if best is None or residual < best.solver_stats["primal_residual"]:
                best = sol
            log.debug("clarabel attempt %d failed (%s); retrying", attempt + 1, raw_status)
        best.solver_stats["solve_time"] = time.perf_counter() - t0
        return best


class CvxpyBackend:
    """Solve the complex description directly through cvxpy (reference path)."""

    name = "cvxpy"

    def __init__(self, solver: str = "CLARABEL", **solver_opts):
        self.solver = solver
        self.solver_opts = solver_opts

    def solve(self, problem: SdpProblem, settings: SolverSettings) -> SdpSolution:
        import cvxpy as cp

        xs = {}
        cons = []
        for var in problem.variables:
            if isinstance(var, HermitianVar):
                x = cp.Variable((var.size, var.size), hermitian=True, name=var.name)
                if var.psd:
                    cons.append(x >> 0)
            else:
                x = cp.Variable(name=var.name)
                if var.lower is not None:
                    cons.append(x >= var.lower)
                if var.upper is not None:
                    cons.append(x <= var.upper)
            xs[var.name] = x

        def linear(name, coeff):
            if np.ndim(coeff) == 0:
                return float(coeff) * xs[name]
            return cp.real(cp.trace(np.asarray(coeff) @ xs[name]))

        for con in problem.lmi_constraints:
            expr = cp.Constant(np.asarray(con.constant, dtype=complex))
            for term in con.terms:
                if isinstance(term, CongruenceTerm):
                    expr = expr + term.scale * (term.left @ xs[term.var] @ term.left.conj().T)
                else:
                    expr = expr + xs[term.var] * term.coeff
            cons.append(0.5 * (expr + expr.H) >> 0)
        for con in problem.linear_constraints:
            lhs = sum(linear(n, a) for n, a in {**con.scalar_coeffs, **con.trace_coeffs}.items())
            cons.append({"<=": lhs <= con.rhs, ">=": lhs >= con.rhs, "==": lhs == con.rhs}[con.sense])
        obj = cp.Maximize(sum(linear(n, c) for n, c in problem.objective.items()))
        prob = cp.Problem(obj, cons)
        t0 = time.perf_counter()
        try:
            prob.solve(solver=self.solver, **self.solver_opts)
        except cp.error.SolverError as exc:
            return SdpSolution(NUMERICAL_FAILURE, {}, np.nan, {"solver": self.name, "error": str(exc)})
        status = {
            cp.OPTIMAL: OPTIMAL,
            cp.OPTIMAL_INACCURATE: NEAR_OPTIMAL,
            cp.INFEASIBLE: INFEASIBLE,
            cp.INFEASIBLE_INACCURATE: INFEASIBLE,
        }.get(prob.status, NUMERICAL_FAILURE)
        values = {}
        if status in (OPTIMAL, NEAR_OPTIMAL):
            for var in problem.variables:
                v = xs[var.name].value
                if isinstance(var, HermitianVar):
                    values[var.name] = _clean_hermitian(np.asarray(v, dtype=complex),
                                                        settings.psd_clip if var.psd else None)
                else:
                    values[var.name] = float(v)
        residual = problem.residual(values) if values else np.inf
        return SdpSolution(
            status=status,
            variable_values=values,
            objective_value=problem.objective_value(values) if values else np.nan,
            solver_stats={
                "solver": f"{self.name}/{self.solver}",
                "raw_status": prob.status,
                "primal_residual": float(residual),
                "solve_time": time.perf_counter() - t0,
            },
        )


DEFAULT_BACKEND = ClarabelBackend()


def solve(problem: SdpProblem, settings: SolverSettings | None = None,
          backend: Backend | None = None) -> SdpSolution:
    """Solve ``problem``; Hermitian outputs are re-symmetrized and PSD ones
    eigenvalue-clipped at ``settings.psd_clip``."""
    settings = settings or SolverSettings()
    backend = backend or DEFAULT_BACKEND
    return backend.solve(problem, settings)


# ---------------------------------------------------------------------------
# The covariance subproblem
# ---------------------------------------------------------------------------
def q_name(k: int) -> str:
    return f"Q[{k}]"


def lambda_name(k: int) -> str:
    return f"lambda[{k}]"


def z_name(k: int) -> str:
    return f"z[{k}]"


def build_subproblem_q(t_prev, channels: ChannelSet, config: SystemConfig) -> SdpProblem:
    """Maximize the summed eigenvalue slacks at fixed SINR targets ``t_prev``.

    Variables are ``Q[k]`` (Hermitian PSD), ``lambda[k] >= 0`` and
    ``z[k] >= 0``; constraint ``k`` reads
    ``Phi_k(t_prev[k], lambda[k], {Q_i}) - z[k] I >= 0`` and the covariances
    share the power budget.

    A user with zero radius has a one-point error set, where the S-lemma
    certificate needs ``lambda -> inf``. Such a user gets the scalar SINR
    constraint ``h^H (Q_k - t sum_l Q_l) h - t sigma^2 >= z[k]`` instead and
    no multiplier variable.
    """
    t_prev = np.asarray(t_prev, dtype=float)
    K, n = config.n_users, config.n_tx
    channels.check(config)
    if t_prev.shape != (K,) or np.any(t_prev < 0) or np.any(~np.isfinite(t_prev)):
        raise ValueError("t_prev must be a nonnegative length-K vector")
    robust = [k for k in range(K) if channels.radii[k] > 0]
    variables = [HermitianVar(q_name(k), n) for k in range(K)]
    variables += [ScalarVar(lambda_name(k), lower=0.0) for k in robust]
    variables += [ScalarVar(z_name(k), lower=0.0) for k in range(K)]

    m = n + 1
    lmis, scalar = [], []
    for k in range(K):
        h = channels.estimates[k]
        if k not in robust:
            hh = np.outer(h, h.conj())
            scalar.append(LinearConstraint(
                scalar_coeffs={z_name(k): -1.0},
                trace_coeffs={q_name(l): hh if l == k else -t_prev[k] * hh for l in range(K)},
                sense=">=",
                rhs=t_prev[k] * config.noise_powers[k],
                name=f"sinr[{k}]",
            ))
            continue
        a = lift_matrix(h)
        const = np.zeros((m, m), dtype=complex)
        const[n, n] = -t_prev[k] * config.noise_powers[k]
        lam_coeff = np.diag(np.r_[np.ones(n), -channels.radii[k] ** 2]).astype(complex)
        terms = [CongruenceTerm(q_name(l), a, 1.0 if l == k else -t_prev[k]) for l in range(K)]
        terms += [ScalarTerm(lambda_name(k), lam_coeff), ScalarTerm(z_name(k), -np.eye(m, dtype=complex))]
        lmis.append(LmiConstraint(const, tuple(terms), name=f"phi[{k}]"))
    power = LinearConstraint(
        scalar_coeffs={},
        trace_coeffs={q_name(k): np.eye(n, dtype=complex) for k in range(K)},
        sense="<=",
        rhs=config.power_budget,
        name="power",
    )
    return SdpProblem(
        variables=tuple(variables),
        objective={z_name(k): 1.0 for k in range(K)},
        lmi_constraints=tuple(lmis),
        linear_constraints=(power, *scalar),
    )


# ---------------------------------------------------------------------------
# Debug dump
# ---------------------------------------------------------------------------
def write_cbf(problem: SdpProblem, dest) -> None:
    """Write the lowered problem in Conic Benchmark Format (CBF, version 3).

    Layout: ``VAR`` declares every real variable free; ``CON`` lists the
    ``L=`` (equality) and ``L+`` (nonnegative) rows ``A x + b``; each
    ``PSDCON`` block is ``sum_j x_j H_j + D >= 0`` with ``H``/``D`` given as
    lower-triangular triplets in ``HCOORD``/``DCOORD``. The objective is
    minimized, i.e. it is the negated original objective.
    """
    form = lower(problem)
    out = io.StringIO()
    w = out.write
    w("VER\n3\n\nOBJSENSE\nMIN\n\n")
    w(f"VAR\n{form.n_vars} 1\nF {form.n_vars}\n\n")

    A = form.A.tocsr()
    lin_rows, lin_cones, psd_blocks = [], [], []
    row = 0
    for kind, dim in form.cones:
        size = dim if kind != "psd" else dim * (dim + 1) // 2
        if kind == "psd":
            psd_blocks.append((row, dim))
        else:
            lin_rows.extend(range(row, row + size))
            lin_cones.append(("L=" if kind == "zero" else "L+", size))
        row += size

    if lin_rows:
        w(f"CON\n{len(lin_rows)} {len(lin_cones)}\n")
        for tag, size in lin_cones:
            w(f"{tag} {size}\n")
        w("\n")
    if psd_blocks:
        w(f"PSDCON\n{len(psd_blocks)}\n")
        for _, dim in psd_blocks:
            w(f"{dim}\n")
        w("\n")

    obj = [(j, v) for j, v in enumerate(form.c) if v != 0]
    w(f"OBJACOORD\n{len(obj)}\n")
    for j, v in obj:
        w(f"{j} {float(v)!r}\n")
    w("\n")

    if lin_rows:
        sub = A[lin_rows].tocoo()
        w(f"ACOORD\n{sub.nnz}\n")
        for i, j, v in zip(sub.row, sub.col, sub.data):
            w(f"{i} {j} {float(-v)!r}\n")
        w("\n")
        bvals = [(i, form.b[r]) for i, r in enumerate(lin_rows) if form.b[r] != 0]
        w(f"BCOORD\n{len(bvals)}\n")
        for i, v in bvals:
            w(f"{i} {float(v)!r}\n")
        w("\n")

    if psd_blocks:
        hco, dco = [], []
        for p, (start, dim) in enumerate(psd_blocks):
            size = dim * (dim + 1) // 2
            sub = A[start:start + size].tocsc()
            for j in range(form.n_vars):
                col = sub[:, j].toarray().ravel()
                if not np.any(col):
                    continue
                h = -smat(col, dim)
                for r, c in zip(*np.tril_indices(dim)):
                    if h[r, c] != 0:
                        hco.append(f"{p} {j} {r} {c} {float(h[r, c])!r}")
            d = smat(form.b[start:start + size], dim)
            for r, c in zip(*np.tril_indices(dim)):
                if d[r, c] != 0:
                    dco.append(f"{p} {r} {c} {float(d[r, c])!r}")
        w(f"HCOORD\n{len(hco)}\n" + "".join(s + "\n" for s in hco) + "\n")
        w(f"DCOORD\n{len(dco)}\n" + "".join(s + "\n" for s in dco) + "\n")

    text = out.getvalue()
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w") as fh:
            fh.write(text)
