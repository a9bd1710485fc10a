"""Shared semidefinite-programming layer.

Subproblem builders describe a conic program abstractly: Hermitian PSD
matrix variables, nonnegative scalars, a linear objective over trace
terms and scalars, and constraints that are affine except for optional
concave ``log2`` terms and convex reciprocal terms (needed by the rate
constraints).  ``solve`` hands the program to a pluggable backend
(cvxpy with SCS by default, Clarabel as an alternative).

The layer also owns rank-one bookkeeping: residual measures, dominant
vector extraction, and Gaussian randomization for relaxations whose
rank-one structure is recovered by sampling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

DEFAULT_SOLVER = "scs"
DEFAULT_TOLERANCE = 1e-8

_LN2 = float(np.log(2.0))


class ExtractionError(RuntimeError):
    """Raised when a matrix is too far from rank one to extract."""

    def __init__(self, residual: float, message: str = ""):
        self.residual = residual
        super().__init__(message or f"rank-one residual {residual:.3e} above threshold")


class RandomizationError(RuntimeError):
    """Raised when no randomized candidate is feasible."""


@dataclass(frozen=True)
class TraceTerm:
    """Contributes ``Re Tr(coeff @ X)`` for the PSD variable ``var``."""

    var: str
    coeff: np.ndarray


@dataclass
class Expr:
    """``const + sum(scalars) + sum(traces) + sum(logs) + sum(recips)``.

    ``logs`` entries are ``(coeff, Expr)`` pairs contributing
    ``coeff * log2(inner)``; the inner expression must itself be free of
    logs and reciprocals.  ``recips`` entries are ``(coeff, var)`` pairs
    contributing ``coeff / var`` for a positive scalar variable.
    """

    const: float = 0.0
    scalars: dict = field(default_factory=dict)
    traces: list = field(default_factory=list)
    logs: list = field(default_factory=list)
    recips: list = field(default_factory=list)

    @property
    def is_affine(self) -> bool:
        return not self.logs and not self.recips


def affine(const: float = 0.0, scalars: dict | None = None,
           traces: list | None = None) -> Expr:
    return Expr(const=const, scalars=dict(scalars or {}), traces=list(traces or []))


@dataclass(frozen=True)
class Constraint:
    name: str
    expr: Expr
    relation: str  # "<=", ">=", "=="
    bound: float = 0.0


@dataclass
class ConicProgram:
    """Solver-agnostic conic program (objective is maximized)."""

    name: str = ""
    psd_vars: dict = field(default_factory=dict)      # name -> dimension
    scalar_vars: dict = field(default_factory=dict)   # name -> {"nonneg": bool}
    objective: Expr = field(default_factory=Expr)
    constraints: list = field(default_factory=list)

    def add_psd_var(self, name: str, dim: int):
        if name in self.psd_vars or name in self.scalar_vars:
            raise ValueError(f"variable {name!r} already declared")
        if dim < 1:
            raise ValueError("PSD variable dimension must be >= 1")
        self.psd_vars[name] = dim

    def add_scalar_var(self, name: str, nonneg: bool = False):
        if name in self.psd_vars or name in self.scalar_vars:
            raise ValueError(f"variable {name!r} already declared")
        self.scalar_vars[name] = {"nonneg": nonneg}

    def set_objective(self, expr: Expr):
        if not expr.is_affine:
            raise ValueError("objective must be affine in the variables")
        self._check_expr(expr, "objective")
        self.objective = expr

    def add_constraint(self, name: str, expr: Expr, relation: str,
                       bound: float = 0.0):
        if relation not in ("<=", ">=", "=="):
            raise ValueError(f"bad relation {relation!r}")
        if relation == "==" and not expr.is_affine:
            raise ValueError(f"{name}: equality constraints must be affine")
        if relation == ">=":
            # lhs must be concave: log coefficients >= 0, recips <= 0
            bad = [c for c, _ in expr.logs if c < 0] + [c for c, _ in expr.recips if c > 0]
        else:
            bad = [c for c, _ in expr.logs if c > 0] + [c for c, _ in expr.recips if c < 0]
        if relation != "==" and bad:
            raise ValueError(f"{name}: term curvature incompatible with {relation!r}")
        self._check_expr(expr, name)
        self.constraints.append(Constraint(name, expr, relation, bound))

    def _check_expr(self, expr: Expr, where: str):
        for term in expr.traces:
            dim = self.psd_vars.get(term.var)
            if dim is None:
                raise ValueError(f"{where}: undeclared PSD variable {term.var!r}")
            if term.coeff.shape != (dim, dim):
                raise ValueError(f"{where}: coefficient for {term.var!r} has shape "
                                 f"{term.coeff.shape}, expected {(dim, dim)}")
        for sname in expr.scalars:
            if sname not in self.scalar_vars:
                raise ValueError(f"{where}: undeclared scalar {sname!r}")
        for _, inner in expr.logs:
            if not inner.is_affine:
                raise ValueError(f"{where}: log argument must be affine")
            self._check_expr(inner, where)
        for _, vname in expr.recips:
            if vname not in self.scalar_vars:
                raise ValueError(f"{where}: undeclared scalar {vname!r} in reciprocal")

    def dump(self) -> str:
        """Human-readable snapshot for offline debugging."""
        lines = [f"ConicProgram {self.name!r}"]
        for nm, d in self.psd_vars.items():
            lines.append(f"  psd {nm}: {d}x{d} hermitian")
        for nm, attrs in self.scalar_vars.items():
            lines.append(f"  scalar {nm}{' >= 0' if attrs['nonneg'] else ''}")
        lines.append(f"  maximize {_fmt_expr(self.objective)}")
        for c in self.constraints:
            lines.append(f"  s.t. [{c.name}] {_fmt_expr(c.expr)} {c.relation} {c.bound:g}")
        return "\n".join(lines)


def _fmt_expr(expr: Expr) -> str:
    parts = []
    if expr.const:
        parts.append(f"{expr.const:g}")
    parts += [f"{c:g}*{nm}" for nm, c in expr.scalars.items()]
    parts += [f"Tr(A@{t.var})[|A|={np.linalg.norm(t.coeff):.3g}]" for t in expr.traces]
    parts += [f"{c:g}*log2({_fmt_expr(inner)})" for c, inner in expr.logs]
    parts += [f"{c:g}/{nm}" for c, nm in expr.recips]
    return " + ".join(parts) if parts else "0"


@dataclass(frozen=True)
class SolveReport:
    """Backend outcome: status, objective and variable assignments."""

    status: str  # optimal | infeasible | unbounded | numerical_failure
    objective: float
    assignments: dict
    iterations: int
    wall_time: float
    solver: str
    inaccurate: bool = False

    def value(self, name: str):
        return self.assignments[name]


def hermitize(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.conj().T)


def _to_cvxpy(program: ConicProgram):
    cvars = {}
    constraints = []
    for nm, d in program.psd_vars.items():
        X = cp.Variable((d, d), hermitian=True, name=nm)
        cvars[nm] = X
        constraints.append(X >> 0)
    for nm, attrs in program.scalar_vars.items():
        cvars[nm] = cp.Variable(nonneg=attrs["nonneg"], name=nm)

    def build(expr: Expr):
        out = expr.const
        for nm, c in expr.scalars.items():
            out = out + c * cvars[nm]
        for t in expr.traces:
            out = out + cp.real(cp.trace(t.coeff @ cvars[t.var]))
        for c, inner in expr.logs:
            out = out + (c / _LN2) * cp.log(build(inner))
        for c, nm in expr.recips:
            out = out + c * cp.inv_pos(cvars[nm])
        return out

    for con in program.constraints:
        lhs = build(con.expr)
        if con.relation == "<=":
            constraints.append(lhs <= con.bound)
        elif con.relation == ">=":
            constraints.append(lhs >= con.bound)
        else:
            constraints.append(lhs == con.bound)
    problem = cp.Problem(cp.Maximize(build(program.objective)), constraints)
    return problem, cvars


_STATUS_MAP = {
    cp.OPTIMAL: ("optimal", False),
    cp.OPTIMAL_INACCURATE: ("optimal", True),
    cp.INFEASIBLE: ("infeasible", False),
    cp.INFEASIBLE_INACCURATE: ("infeasible", True),
    cp.UNBOUNDED: ("unbounded", False),
    cp.UNBOUNDED_INACCURATE: ("unbounded", True),
}


def solve(program: ConicProgram, tolerance: float = DEFAULT_TOLERANCE,
          solver: str = DEFAULT_SOLVER) -> SolveReport:
    """Solve the program, reporting failure statuses instead of raising."""
    problem, cvars = _to_cvxpy(program)
    t0 = time.perf_counter()
    try:
        if solver == "scs":
            problem.solve(solver="SCS", eps=tolerance)
        elif solver == "clarabel":
            problem.solve(solver="CLARABEL")
        else:
            raise ValueError(f"unknown solver {solver!r}")
        status, inaccurate = _STATUS_MAP.get(problem.status,
                                             ("numerical_failure", False))
    except cp.SolverError:
        status, inaccurate = "numerical_failure", False
    wall = time.perf_counter() - t0

    assignments = {}
    if status == "optimal":
        for nm in program.psd_vars:
            assignments[nm] = hermitize(np.asarray(cvars[nm].value))
        for nm in program.scalar_vars:
            assignments[nm] = float(cvars[nm].value)
    iters = 0
    if problem.solver_stats is not None and problem.solver_stats.num_iters is not None:
        iters = int(problem.solver_stats.num_iters)
    objective = float(problem.value) if status == "optimal" else float("nan")
    return SolveReport(status=status, objective=objective, assignments=assignments,
                       iterations=iters, wall_time=wall, solver=solver,
                       inaccurate=inaccurate)


def _abs_eigvals(X: np.ndarray) -> np.ndarray:
    return np.abs(np.linalg.eigvalsh(hermitize(X)))


def rank_one_residual(X: np.ndarray, zero_tol: float = 1e-30) -> float:
    """Normalized distance from rank one: (nuclear - spectral) / spectral.

    Zero for exactly rank-one matrices.  An (all-but-)zero matrix is a
    degenerate input and is defined to have residual 0.
    """
    lam = _abs_eigvals(X)
    top = lam.max(initial=0.0)
    if top <= zero_tol:
        return 0.0
    return float((lam.sum() - top) / top)


def nuclear_spectral_gap(X: np.ndarray) -> float:
    """Absolute gap ``||X||_* - ||X||_2`` used as the penalty residual."""
    lam = _abs_eigvals(X)
    return float(lam.sum() - lam.max(initial=0.0))


def extract_vector(X: np.ndarray, anchor_last_entry: bool = True,
                   residual_tol: float = 1e-3) -> np.ndarray:
    """Dominant direction of a near-rank-one PSD matrix.

    Returns the top eigenvector scaled to ``sqrt(top eigenvalue)``.
    With ``anchor_last_entry`` the global phase is rotated so the last
    entry is real and positive (the combined-channel convention fixes
    that entry to 1 in the lifted matrices).  Inputs farther than
    ``residual_tol`` from rank one raise ``ExtractionError`` carrying
    the residual.
    """
    residual = rank_one_residual(X)
    if residual > residual_tol:
        raise ExtractionError(residual)
    lam, vec = np.linalg.eigh(hermitize(X))
    v = vec[:, -1] * np.sqrt(max(lam[-1], 0.0))
    if anchor_last_entry:
        last = v[-1]
        if abs(last) < 1e-12:
            raise ExtractionError(residual, "anchored entry is numerically zero")
        v = v * (last.conjugate() / abs(last))
        v[-1] = v[-1].real + 0.0j
    return v


def gaussian_randomize(X: np.ndarray, draws: int, projector, scorer,
                       rng: np.random.Generator) -> np.ndarray:
    """Recover a feasible vector from a relaxed PSD matrix by sampling.

    Draws ``draws`` complex Gaussian vectors with covariance ``X``,
    projects each onto the feasible set, and returns the best-scoring
    projected candidate.  The projected dominant eigenvector is always
    included as a candidate, so an exactly rank-one ``X`` returns its
    (projected) principal direction.  A projector may return ``None``
    to mark an infeasible candidate.
    """
    lam, vec = np.linalg.eigh(hermitize(X))
    lam = np.clip(lam, 0.0, None)
    d = X.shape[0]
    best_vec, best_score = None, -np.inf
    dominant = vec[:, -1] * np.sqrt(lam[-1])
    shaping = vec * np.sqrt(lam)[None, :]
    for i in range(draws + 1):
        if i == 0:
            cand = dominant
        else:
            z = (rng.standard_normal(d) + 1j * rng.standard_normal(d)) / np.sqrt(2.0)
            cand = shaping @ z
        proj = projector(cand)
        if proj is None:
            continue
        score = scorer(proj)
        if score > best_score:
            best_vec, best_score = proj, score
    if best_vec is None:
        raise RandomizationError("no feasible randomized candidate")
    return best_vec
