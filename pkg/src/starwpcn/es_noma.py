"""Energy-splitting NOMA strategy: outer time search + inner block descent.

For a fixed charging time the lifted problem is split into four blocks:
closed-form MMSE receive beamforming, an energy-beam SDP (with a
first-order surrogate for the interfered user's rate), and two passive
beamforming SDPs (downlink and uplink) whose rank-one constraints are
enforced by a growing penalty on the nuclear-minus-spectral gap.  The
outer layer scans the charging time on a grid and keeps the best bundle.

All conic subproblems are solved in noise-normalized units (see
``model.noise_normalized``); assembled solutions are physical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import sdp
from .model import (EsSolution, Scenario, SharedReflectProfile, StarEsProfile,
                    USER_R, USER_T, append_one, energy_es, noise_normalized,
                    rates_es, validate)

_LN2 = float(np.log(2.0))


class BlockFailure(RuntimeError):
    """A BCD block could not produce an acceptable iterate."""


@dataclass(frozen=True)
class EsConfig:
    """Algorithm knobs.  Defaults follow the experiment setup: time grid
    step 0.1, inner and penalty tolerances 1e-5."""

    tau_step: float = 0.1
    eps_inner: float = 1e-5        # stop when the gamma gain drops below this
    eps_penalty: float = 1e-5      # nuclear-minus-spectral gap acceptance
    penalty_init: float = 1e-4
    penalty_growth: float = 10.0
    penalty_cap: float = 1e6
    max_inner: int = 15
    max_penalty_rounds: int = 14
    rank_tol: float = 1e-3         # extraction / energy-beam rank acceptance
    solver: str = sdp.DEFAULT_SOLVER
    solver_tol: float = sdp.DEFAULT_TOLERANCE
    randomization_draws: int = 1000
    passive_mode: str = "star_es"   # or "shared_reflect" (single surface vector)
    rank_one_method: str = "penalty"  # or "gr" (randomization baseline)

    def __post_init__(self):
        if not 0 < self.tau_step < 1:
            raise ValueError("tau_step must lie in (0, 1)")
        if min(self.eps_inner, self.eps_penalty) <= 0:
            raise ValueError("tolerances must be positive")
        if self.penalty_growth <= 1:
            raise ValueError("penalty growth factor must exceed 1")
        if self.passive_mode not in ("star_es", "shared_reflect"):
            raise ValueError(f"unknown passive mode {self.passive_mode!r}")
        if self.rank_one_method not in ("penalty", "gr"):
            raise ValueError(f"unknown rank-one method {self.rank_one_method!r}")
        if self.rank_one_method == "gr" and self.passive_mode == "shared_reflect":
            raise ValueError("randomization is defined for the splitting surface only")


@dataclass
class BcdState:
    """Mutable inner-loop iterate shared by the four blocks."""

    l: int
    V: np.ndarray            # (N, N) energy-beam Gram
    w: np.ndarray            # (2, N) receive beamformers (unit norm)
    U: np.ndarray            # (n_passive, M+1, M+1) downlink lifted vectors
    Q: np.ndarray            # (n_passive, M+1, M+1) uplink lifted vectors
    u_tilde: np.ndarray      # (n_passive, M+1) extracted downlink vectors
    q_tilde: np.ndarray      # (n_passive, M+1) extracted uplink vectors
    p: np.ndarray            # (2,) user powers in noise-normalized units
    gamma: float
    xi: float                # downlink penalty factor
    xi1: float               # uplink penalty factor
    p_t_local: float         # expansion point for the power surrogate
    A_local: float = 1.0
    B_local: float = 1.0

    def passive_index(self, k: int) -> int:
        return k if self.U.shape[0] == 2 else 0


@dataclass(frozen=True)
class BcdContext:
    """Fixed per-run data: scaled channels, time split, system constants."""

    Gk: np.ndarray           # (2, M+1, N) noise-normalized downlink
    Hk: np.ndarray           # (2, N, M+1) noise-normalized uplink
    tau0: float
    P_A: float
    eta: float
    config: EsConfig
    seed_key: int = 0

    @property
    def tau1(self) -> float:
        return 1.0 - self.tau0

    @property
    def n_passive(self) -> int:
        return 1 if self.config.passive_mode == "shared_reflect" else 2

    @property
    def n_elements(self) -> int:
        return self.Gk.shape[1] - 1


@dataclass(frozen=True)
class BcdInit:
    """Optional explicit initial point (rows per passive slot); ``p``
    overrides the default full-energy starting powers."""

    u: np.ndarray
    q: np.ndarray
    p: Optional[np.ndarray] = None


def mmse_receivers(Hk: np.ndarray, q_tilde: np.ndarray, p: np.ndarray,
                   sigma2: float) -> np.ndarray:
    """SINR-optimal linear receivers for two-user uplink NOMA.

    User r is decoded first against user t's interference; user t is
    decoded interference-free after cancellation.  Outputs are unit
    norm with the first entry rotated to be real and positive.
    """
    if np.any(p <= 0):
        raise ValueError("user powers must be positive for the MMSE receivers")
    N = Hk.shape[1]
    h_t = Hk[USER_T] @ q_tilde[USER_T]
    h_r = Hk[USER_R] @ q_tilde[USER_R]
    eye = np.eye(N)
    cov_t = np.outer(h_t, h_t.conj()) + (sigma2 / p[USER_T]) * eye
    w_t = np.linalg.solve(cov_t, h_t)
    cov_r = (np.outer(h_r, h_r.conj())
             + (p[USER_T] / p[USER_R]) * np.outer(h_t, h_t.conj())
             + (sigma2 / p[USER_R]) * eye)
    w_r = np.linalg.solve(cov_r, h_r)
    w = np.stack([w_t, w_r])
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    for k in range(2):
        ref = w[k, 0]
        if abs(ref) > 0:
            w[k] *= ref.conjugate() / abs(ref)
    return w


def _rx_channel(ctx: BcdContext, state: BcdState, rx: int, tx: int) -> np.ndarray:
    """Effective vector ``Hk[tx]^H w[rx]``; quadratic forms with the
    lifted uplink matrices give the receive-side trace terms."""
    return ctx.Hk[tx].conj().T @ state.w[rx]


def _quad(mat: np.ndarray, vec: np.ndarray) -> float:
    return float(np.real(vec.conj() @ mat @ vec))


def _solve_program(prog: sdp.ConicProgram, config: EsConfig) -> sdp.SolveReport:
    report = sdp.solve(prog, tolerance=config.solver_tol, solver=config.solver)
    if report.status != "optimal":
        report = sdp.solve(prog, tolerance=config.solver_tol * 100,
                           solver=config.solver)
    if report.status != "optimal":
        raise BlockFailure(f"{prog.name}: solver returned {report.status}")
    return report


def _rate_t_constraint(prog, a_t, tau1):
    # tau1 * log2(1 + a_t * p_t) - gamma >= 0 ; a_t fixed within the block
    expr = sdp.Expr(scalars={"gamma": -1.0},
                    logs=[(tau1, sdp.affine(const=1.0, scalars={"p_t": a_t}))])
    prog.add_constraint("rate_t", expr, ">=", 0.0)


def _rate_r_surrogate_constraint(prog, b_r, b_t, tau1, p_t_local):
    # first-order bound of the interfered rate around p_t_local:
    # tau1*[log2(p_r*b_r + p_t*b_t + 1) - log2(Y0) - b_t*(p_t - p_t0)/(ln2*Y0)]
    y0 = p_t_local * b_t + 1.0
    c = b_t / (_LN2 * y0)
    expr = sdp.Expr(
        const=tau1 * (-np.log2(y0) + c * p_t_local),
        scalars={"gamma": -1.0, "p_t": -tau1 * c},
        logs=[(tau1, sdp.affine(const=1.0, scalars={"p_r": b_r, "p_t": b_t}))])
    prog.add_constraint("rate_r_sca", expr, ">=", 0.0)


def rate_r_surrogate(p_t, p_r, b_r, b_t, tau1, p_t_local):
    """Value of the power surrogate; equals the true interfered rate at
    the expansion point and never exceeds it elsewhere."""
    y0 = p_t_local * b_t + 1.0
    return tau1 * (np.log2(p_r * b_r + p_t * b_t + 1.0) - np.log2(y0)
                   - b_t * (p_t - p_t_local) / (_LN2 * y0))


def solve_energy_block(state: BcdState, ctx: BcdContext) -> dict:
    """Joint energy beam and user powers at fixed receivers/profiles.

    A rank-one optimum always exists for the relaxed beam Gram; the
    solved Gram is required to be (numerically) rank one.
    """
    cfg = ctx.config
    tau0, tau1 = ctx.tau0, ctx.tau1
    A = [sdp.hermitize(ctx.eta * ctx.Gk[k].conj().T @ state.U[state.passive_index(k)]
                       @ ctx.Gk[k]) for k in range(2)]
    a_t = _quad(state.Q[state.passive_index(USER_T)],
                _rx_channel(ctx, state, USER_T, USER_T))
    b_r = _quad(state.Q[state.passive_index(USER_R)], _rx_channel(ctx, state, USER_R, USER_R))
    b_t = _quad(state.Q[state.passive_index(USER_T)], _rx_channel(ctx, state, USER_R, USER_T))

    prog = sdp.ConicProgram("energy_block")
    N = ctx.Gk.shape[2]
    prog.add_psd_var("V", N)
    prog.add_scalar_var("p_t", nonneg=True)
    prog.add_scalar_var("p_r", nonneg=True)
    prog.add_scalar_var("gamma")
    prog.set_objective(sdp.affine(scalars={"gamma": 1.0}))
    _rate_t_constraint(prog, a_t, tau1)
    _rate_r_surrogate_constraint(prog, b_r, b_t, tau1, state.p_t_local)
    prog.add_constraint("power_budget",
                        sdp.affine(traces=[sdp.TraceTerm("V", np.eye(N, dtype=complex))]),
                        "<=", ctx.P_A)
    for k, label in ((USER_T, "t"), (USER_R, "r")):
        expr = sdp.Expr(scalars={f"p_{label}": tau1},
                        traces=[sdp.TraceTerm("V", -tau0 * A[k])])
        prog.add_constraint(f"energy_{label}", expr, "<=", 0.0)

    t0 = time.perf_counter()
    report = _solve_program(prog, cfg)
    V = report.value("V")
    residual = sdp.rank_one_residual(V)
    if residual > cfg.rank_tol:
        raise BlockFailure(f"energy beam Gram not rank one (residual {residual:.2e})")
    state.V = V
    state.p = np.array([report.value("p_t"), report.value("p_r")])
    state.gamma = report.value("gamma")
    state.p_t_local = state.p[USER_T]
    return {"iteration": state.l, "block": "energy", "gamma": state.gamma,
            "rank1_residual": residual, "penalty_residual": None,
            "rounds": 1, "penalty_grew": False, "status": report.status,
            "solver_time": time.perf_counter() - t0}


def _passive_common(prog, ctx, state, kind):
    """Declare lifted passive variables with their diagonal structure."""
    D = ctx.n_elements + 1
    names = []
    for i in range(ctx.n_passive):
        nm = f"{kind}{i}"
        prog.add_psd_var(nm, D)
        names.append(nm)
    for m in range(D - 1):
        basis = np.zeros((D, D), dtype=complex)
        basis[m, m] = 1.0
        terms = [sdp.TraceTerm(nm, basis) for nm in names]
        prog.add_constraint(f"diag_{m}", sdp.Expr(traces=terms), "==", 1.0)
    last = np.zeros((D, D), dtype=complex)
    last[D - 1, D - 1] = 1.0
    for nm in names:
        prog.add_constraint(f"last_{nm}", sdp.Expr(traces=[sdp.TraceTerm(nm, last)]),
                            "==", 1.0)
    return names


def _penalty_objective(names, mats, xi):
    """gamma - xi * sum_i (Tr(X_i) - phi_i^H X_i phi_i), phi_i the current
    dominant eigenvector (first-order bound of the spectral norm)."""
    traces = []
    for nm, mat in zip(names, mats):
        lam, vec = np.linalg.eigh(sdp.hermitize(mat))
        phi = vec[:, -1]
        coeff = -xi * (np.eye(mat.shape[0], dtype=complex) - np.outer(phi, phi.conj()))
        traces.append(sdp.TraceTerm(nm, coeff))
    return sdp.Expr(scalars={"gamma": 1.0}, traces=traces)


def solve_downlink_passive_block(state: BcdState, ctx: BcdContext) -> list:
    """Charging-phase surface vectors and user powers.

    Runs the penalty loop: solve the lifted program, grow the penalty,
    repeat until the worst nuclear-minus-spectral gap is within
    tolerance.  Raises ``BlockFailure`` if the gap never converges.
    """
    if ctx.config.rank_one_method == "gr":
        return _downlink_gr(state, ctx)
    cfg = ctx.config
    tau0, tau1 = ctx.tau0, ctx.tau1
    Mk = [sdp.hermitize(ctx.Gk[k] @ state.V @ ctx.Gk[k].conj().T) for k in range(2)]
    a_t = _quad(state.Q[state.passive_index(USER_T)], _rx_channel(ctx, state, USER_T, USER_T))
    b_r = _quad(state.Q[state.passive_index(USER_R)], _rx_channel(ctx, state, USER_R, USER_R))
    b_t = _quad(state.Q[state.passive_index(USER_T)], _rx_channel(ctx, state, USER_R, USER_T))

    records = []
    best = None
    for round_idx in range(cfg.max_penalty_rounds):
        prog = sdp.ConicProgram("downlink_passive")
        names = _passive_common(prog, ctx, state, "U")
        prog.add_scalar_var("p_t", nonneg=True)
        prog.add_scalar_var("p_r", nonneg=True)
        prog.add_scalar_var("gamma")
        prog.set_objective(_penalty_objective(names, list(state.U), state.xi))
        _rate_t_constraint(prog, a_t, tau1)
        _rate_r_surrogate_constraint(prog, b_r, b_t, tau1, state.p_t_local)
        for k, label in ((USER_T, "t"), (USER_R, "r")):
            expr = sdp.Expr(scalars={f"p_{label}": tau1},
                            traces=[sdp.TraceTerm(names[state.passive_index(k)],
                                                  -tau0 * ctx.eta * Mk[k])])
            prog.add_constraint(f"energy_{label}", expr, "<=", 0.0)

        t0 = time.perf_counter()
        report = _solve_program(prog, cfg)
        U_new = np.stack([report.value(nm) for nm in names])
        gap = max(sdp.nuclear_spectral_gap(U_new[i]) for i in range(len(names)))
        state.U = U_new
        state.p = np.array([report.value("p_t"), report.value("p_r")])
        state.gamma = report.value("gamma")
        state.p_t_local = state.p[USER_T]
        grew = gap > cfg.eps_penalty and round_idx < cfg.max_penalty_rounds - 1
        records.append({"iteration": state.l, "block": "downlink_passive",
                        "gamma": state.gamma, "rank1_residual": None,
                        "penalty_residual": gap, "rounds": round_idx + 1,
                        "penalty_grew": grew, "status": report.status,
                        "solver_time": time.perf_counter() - t0, "xi": state.xi})
        if best is None or gap < best[0]:
            best = (gap, U_new.copy())
        if gap <= cfg.eps_penalty:
            state.u_tilde = np.stack([
                sdp.extract_vector(state.U[i], residual_tol=cfg.rank_tol)
                for i in range(len(names))])
            return records
        state.xi = min(state.xi * cfg.penalty_growth, cfg.penalty_cap)
    raise BlockFailure(f"downlink penalty stalled (best gap {best[0]:.2e})")


def solve_uplink_passive_block(state: BcdState, ctx: BcdContext) -> list:
    """Transmission-phase surface vectors at fixed powers.

    The interfered user's rate is handled through auxiliary scalars
    bounding its signal (reciprocal) and interference (affine) terms,
    linearized around the previous iterate; rank one is enforced by the
    same penalty loop as the downlink block.
    """
    if ctx.config.rank_one_method == "gr":
        return _uplink_gr(state, ctx)
    cfg = ctx.config
    tau1 = ctx.tau1
    p_t, p_r = state.p
    S_tt = _outer(_rx_channel(ctx, state, USER_T, USER_T))
    S_rr = _outer(_rx_channel(ctx, state, USER_R, USER_R))
    S_rt = _outer(_rx_channel(ctx, state, USER_R, USER_T))
    it, ir = state.passive_index(USER_T), state.passive_index(USER_R)

    # expansion points from the defining equalities at the current iterate
    state.A_local = 1.0 / max(p_r * _quad(S_rr, state.q_tilde[ir]), 1e-300)
    state.B_local = p_t * _quad(S_rt, state.q_tilde[it]) + 1.0

    records = []
    best = None
    for round_idx in range(cfg.max_penalty_rounds):
        prog = sdp.ConicProgram("uplink_passive")
        names = _passive_common(prog, ctx, state, "Q")
        # auxiliaries normalized by their expansion values (alpha = A/A0,
        # beta = B/B0) so the solver sees unit-scale variables
        prog.add_scalar_var("alpha", nonneg=True)
        prog.add_scalar_var("beta", nonneg=True)
        prog.add_scalar_var("gamma")
        prog.set_objective(_penalty_objective(names, list(state.Q), state.xi1))
        expr_t = sdp.Expr(scalars={"gamma": -1.0},
                          logs=[(tau1, sdp.Expr(const=1.0,
                                                traces=[sdp.TraceTerm(names[it], p_t * S_tt)]))])
        prog.add_constraint("rate_t", expr_t, ">=", 0.0)

        a0, b0 = state.A_local, state.B_local
        base = 1.0 + 1.0 / (a0 * b0)
        c0 = 1.0 / (_LN2 * (1.0 + a0 * b0))  # = dA*a0 = dB*b0
        expr_r = sdp.Expr(const=tau1 * (np.log2(base) + 2 * c0),
                          scalars={"gamma": -1.0, "alpha": -tau1 * c0,
                                   "beta": -tau1 * c0})
        prog.add_constraint("rate_r_sca", expr_r, ">=", 0.0)
        prog.add_constraint("aux_signal",
                            sdp.Expr(traces=[sdp.TraceTerm(names[ir], -a0 * p_r * S_rr)],
                                     recips=[(1.0, "alpha")]), "<=", 0.0)
        prog.add_constraint("aux_interference",
                            sdp.Expr(const=1.0, scalars={"beta": -b0},
                                     traces=[sdp.TraceTerm(names[it], p_t * S_rt)]),
                            "<=", 0.0)

        t0 = time.perf_counter()
        report = _solve_program(prog, cfg)
        Q_new = np.stack([report.value(nm) for nm in names])
        gap = max(sdp.nuclear_spectral_gap(Q_new[i]) for i in range(len(names)))
        state.Q = Q_new
        state.gamma = report.value("gamma")
        state.A_local = max(a0 * report.value("alpha"), 1e-300)
        state.B_local = max(b0 * report.value("beta"), 1.0)
        grew = gap > cfg.eps_penalty and round_idx < cfg.max_penalty_rounds - 1
        records.append({"iteration": state.l, "block": "uplink_passive",
                        "gamma": state.gamma, "rank1_residual": None,
                        "penalty_residual": gap, "rounds": round_idx + 1,
                        "penalty_grew": grew, "status": report.status,
                        "solver_time": time.perf_counter() - t0, "xi": state.xi1})
        if best is None or gap < best[0]:
            best = (gap, Q_new.copy())
        if gap <= cfg.eps_penalty:
            state.q_tilde = np.stack([
                sdp.extract_vector(state.Q[i], residual_tol=cfg.rank_tol)
                for i in range(len(names))])
            return records
        state.xi1 = min(state.xi1 * cfg.penalty_growth, cfg.penalty_cap)
    raise BlockFailure(f"uplink penalty stalled (best gap {best[0]:.2e})")


def _outer(vec: np.ndarray) -> np.ndarray:
    return np.outer(vec, vec.conj())


# ---------------------------------------------------------------------------
# Gaussian-randomization variants of the passive blocks (baseline method).

def _es_pair_projector(x_t: np.ndarray, x_r: np.ndarray):
    """Restore the element power-splitting coupling, preserving phases."""
    for x in (x_t, x_r):
        if abs(x[-1]) < 1e-12:
            return None
    x_t = x_t * (x_t[-1].conjugate() / abs(x_t[-1]))
    x_r = x_r * (x_r[-1].conjugate() / abs(x_r[-1]))
    x_t[-1] = 1.0
    x_r[-1] = 1.0
    norm = np.sqrt(np.abs(x_t[:-1]) ** 2 + np.abs(x_r[:-1]) ** 2)
    norm = np.where(norm < 1e-12, 1.0, norm)
    x_t[:-1] /= norm
    x_r[:-1] /= norm
    return x_t, x_r


def _pair_candidates(X_t, X_r, draws, rng):
    """Coupled sampling from two lifted matrices plus their dominant pair."""
    out = []

    def shaping(X):
        lam, vec = np.linalg.eigh(sdp.hermitize(X))
        lam = np.clip(lam, 0.0, None)
        return vec * np.sqrt(lam)[None, :], vec[:, -1] * np.sqrt(lam[-1])

    sh_t, dom_t = shaping(X_t)
    sh_r, dom_r = shaping(X_r)
    d = X_t.shape[0]
    for i in range(draws + 1):
        if i == 0:
            cand = _es_pair_projector(dom_t.copy(), dom_r.copy())
        else:
            z_t = (rng.standard_normal(d) + 1j * rng.standard_normal(d)) / np.sqrt(2)
            z_r = (rng.standard_normal(d) + 1j * rng.standard_normal(d)) / np.sqrt(2)
            cand = _es_pair_projector(sh_t @ z_t, sh_r @ z_r)
        if cand is not None:
            out.append(cand)
    if not out:
        raise sdp.RandomizationError("no feasible coupled candidate")
    return out


def _grid_power_score(cap_t, cap_r, a_t, b_r, b_t, tau1, p_t_local, points=512):
    """max over p_t <= cap_t of min(rate_t, surrogate rate_r) at p_r = cap_r."""
    p = np.linspace(0.0, cap_t, points)
    r_t = tau1 * np.log2(1.0 + a_t * p)
    r_r = rate_r_surrogate(p, cap_r, b_r, b_t, tau1, p_t_local)
    vals = np.minimum(r_t, r_r)
    i = int(np.argmax(vals))
    return float(vals[i]), float(p[i])


def _downlink_gr(state: BcdState, ctx: BcdContext) -> list:
    """Relaxation without rank-one handling + coupled randomization."""
    cfg = ctx.config
    tau0, tau1 = ctx.tau0, ctx.tau1
    Mk = [sdp.hermitize(ctx.Gk[k] @ state.V @ ctx.Gk[k].conj().T) for k in range(2)]
    a_t = _quad(state.Q[state.passive_index(USER_T)], _rx_channel(ctx, state, USER_T, USER_T))
    b_r = _quad(state.Q[state.passive_index(USER_R)], _rx_channel(ctx, state, USER_R, USER_R))
    b_t = _quad(state.Q[state.passive_index(USER_T)], _rx_channel(ctx, state, USER_R, USER_T))

    prog = sdp.ConicProgram("downlink_passive_gr")
    names = _passive_common(prog, ctx, state, "U")
    prog.add_scalar_var("p_t", nonneg=True)
    prog.add_scalar_var("p_r", nonneg=True)
    prog.add_scalar_var("gamma")
    prog.set_objective(sdp.affine(scalars={"gamma": 1.0}))
    _rate_t_constraint(prog, a_t, tau1)
    _rate_r_surrogate_constraint(prog, b_r, b_t, tau1, state.p_t_local)
    for k, label in ((USER_T, "t"), (USER_R, "r")):
        expr = sdp.Expr(scalars={f"p_{label}": tau1},
                        traces=[sdp.TraceTerm(names[state.passive_index(k)],
                                              -tau0 * ctx.eta * Mk[k])])
        prog.add_constraint(f"energy_{label}", expr, "<=", 0.0)
    t0 = time.perf_counter()
    report = _solve_program(prog, cfg)
    rng = np.random.default_rng([int(state.l), 0, *_seed_material(ctx)])
    cands = _pair_candidates(report.value(names[0]),
                             report.value(names[-1]),
                             cfg.randomization_draws, rng)

    best = None
    for x_t, x_r in cands:
        cap_t = tau0 * ctx.eta * _quad(Mk[USER_T], x_t) / tau1
        cap_r = tau0 * ctx.eta * _quad(Mk[USER_R], x_r) / tau1
        score, p_t = _grid_power_score(cap_t, cap_r, a_t, b_r, b_t, tau1,
                                       state.p_t_local)
        if best is None or score > best[0]:
            best = (score, p_t, cap_t, cap_r, x_t, x_r)
    _, _, cap_t, cap_r, x_t, x_r = best
    score, p_t = _grid_power_score(cap_t, cap_r, a_t, b_r, b_t, tau1,
                                   state.p_t_local, points=16384)
    bound = report.objective
    if score > bound * (1 + 1e-6) + 1e-9:
        raise RuntimeError(f"randomized downlink score {score} exceeds bound {bound}")
    state.u_tilde = np.stack([x_t, x_r])
    state.U = np.stack([_outer(v) for v in state.u_tilde])
    state.p = np.array([p_t, cap_r])
    state.gamma = score
    state.p_t_local = p_t
    return [{"iteration": state.l, "block": "downlink_passive", "gamma": score,
             "rank1_residual": None, "penalty_residual": 0.0, "rounds": 1,
             "penalty_grew": False, "status": report.status,
             "solver_time": time.perf_counter() - t0,
             "relax_bound": bound, "method": "gr"}]


def _uplink_gr(state: BcdState, ctx: BcdContext) -> list:
    cfg = ctx.config
    tau1 = ctx.tau1
    p_t, p_r = state.p
    S_tt = _outer(_rx_channel(ctx, state, USER_T, USER_T))
    S_rr = _outer(_rx_channel(ctx, state, USER_R, USER_R))
    S_rt = _outer(_rx_channel(ctx, state, USER_R, USER_T))
    it, ir = state.passive_index(USER_T), state.passive_index(USER_R)
    state.A_local = 1.0 / max(p_r * _quad(S_rr, state.q_tilde[ir]), 1e-300)
    state.B_local = p_t * _quad(S_rt, state.q_tilde[it]) + 1.0

    prog = sdp.ConicProgram("uplink_passive_gr")
    names = _passive_common(prog, ctx, state, "Q")
    prog.add_scalar_var("alpha", nonneg=True)
    prog.add_scalar_var("beta", nonneg=True)
    prog.add_scalar_var("gamma")
    prog.set_objective(sdp.affine(scalars={"gamma": 1.0}))
    expr_t = sdp.Expr(scalars={"gamma": -1.0},
                      logs=[(tau1, sdp.Expr(const=1.0,
                                            traces=[sdp.TraceTerm(names[it], p_t * S_tt)]))])
    prog.add_constraint("rate_t", expr_t, ">=", 0.0)
    a0, b0 = state.A_local, state.B_local
    base = 1.0 + 1.0 / (a0 * b0)
    c0 = 1.0 / (_LN2 * (1.0 + a0 * b0))
    dA, dB = c0 / a0, c0 / b0
    expr_r = sdp.Expr(const=tau1 * (np.log2(base) + 2 * c0),
                      scalars={"gamma": -1.0, "alpha": -tau1 * c0,
                               "beta": -tau1 * c0})
    prog.add_constraint("rate_r_sca", expr_r, ">=", 0.0)
    prog.add_constraint("aux_signal",
                        sdp.Expr(traces=[sdp.TraceTerm(names[ir], -a0 * p_r * S_rr)],
                                 recips=[(1.0, "alpha")]), "<=", 0.0)
    prog.add_constraint("aux_interference",
                        sdp.Expr(const=1.0, scalars={"beta": -b0},
                                 traces=[sdp.TraceTerm(names[it], p_t * S_rt)]),
                        "<=", 0.0)
    t0 = time.perf_counter()
    report = _solve_program(prog, cfg)
    rng = np.random.default_rng([int(state.l), 1, *_seed_material(ctx)])
    cands = _pair_candidates(report.value(names[0]), report.value(names[-1]),
                             cfg.randomization_draws, rng)

    def score_pair(q_t, q_r):
        r_t = tau1 * np.log2(1.0 + p_t * _quad(S_tt, q_t))
        a_c = 1.0 / max(p_r * _quad(S_rr, q_r), 1e-300)
        b_c = p_t * _quad(S_rt, q_t) + 1.0
        r_r = tau1 * (np.log2(base) - dA * (a_c - a0) - dB * (b_c - b0))
        return min(r_t, r_r)

    best = max(cands, key=lambda c: score_pair(*c))
    score = score_pair(*best)
    bound = report.objective
    if score > bound * (1 + 1e-6) + 1e-9:
        raise RuntimeError(f"randomized uplink score {score} exceeds bound {bound}")
    state.q_tilde = np.stack(list(best))
    state.Q = np.stack([_outer(v) for v in state.q_tilde])
    state.gamma = score
    return [{"iteration": state.l, "block": "uplink_passive", "gamma": score,
             "rank1_residual": None, "penalty_residual": 0.0, "rounds": 1,
             "penalty_grew": False, "status": report.status,
             "solver_time": time.perf_counter() - t0,
             "relax_bound": bound, "method": "gr"}]


def _seed_material(ctx: BcdContext):
    return (ctx.seed_key & 0x7FFFFFFF, int(round(ctx.tau0 * 1_000_000)))


# ---------------------------------------------------------------------------
# Inner descent and outer time search.

def _initial_state(ctx: BcdContext, rng: np.random.Generator,
                   init: Optional[BcdInit]) -> BcdState:
    cfg = ctx.config
    M = ctx.n_elements
    n_pass = ctx.n_passive
    if init is not None:
        u, q = init.u, init.q
    else:
        theta_u = rng.uniform(0, 2 * np.pi, size=(n_pass, M))
        theta_q = rng.uniform(0, 2 * np.pi, size=(n_pass, M))
        amp = 1.0 if n_pass == 1 else np.sqrt(0.5)
        u = amp * np.exp(1j * theta_u)
        q = amp * np.exp(1j * theta_q)
    u_tilde = append_one(u)
    q_tilde = append_one(q)
    U = np.stack([_outer(v) for v in u_tilde])
    Q = np.stack([_outer(v) for v in q_tilde])

    def u_for(k):
        return u_tilde[k if n_pass == 2 else 0]

    charge = sum(ctx.eta * ctx.Gk[k].conj().T @ _outer(u_for(k)) @ ctx.Gk[k]
                 for k in range(2))
    lam, vec = np.linalg.eigh(sdp.hermitize(charge))
    v0 = np.sqrt(ctx.P_A) * vec[:, -1]
    V = _outer(v0)
    if init is not None and init.p is not None:
        p = np.asarray(init.p, dtype=float).copy()
    else:
        p = np.empty(2)
        for k in range(2):
            energy = ctx.tau0 * ctx.eta * _quad(ctx.Gk[k] @ V @ ctx.Gk[k].conj().T,
                                                u_for(k))
            p[k] = energy / ctx.tau1
    N = ctx.Gk.shape[2]
    w = np.zeros((2, N), dtype=complex)
    return BcdState(l=0, V=V, w=w, U=U, Q=Q, u_tilde=u_tilde, q_tilde=q_tilde,
                    p=p, gamma=-np.inf, xi=cfg.penalty_init, xi1=cfg.penalty_init,
                    p_t_local=p[USER_T])


def bcd_inner(tau0: float, init: Optional[BcdInit], scenario: Scenario,
              config: EsConfig = EsConfig()):
    """Inner block descent at a fixed charging time.

    Cycles receivers -> energy beam -> downlink passive -> uplink
    passive until the per-cycle gamma gain falls below the inner
    tolerance, then assembles a physical, validated solution.  Returns
    ``(gamma, solution)``.  Any block failure aborts this time point
    with a ``BlockFailure`` diagnostic.
    """
    if not 0 < tau0 < 1:
        raise ValueError("tau0 must lie strictly inside (0, 1)")
    _require_two_users(scenario)
    cfg = config
    combined = scenario.combined()
    scaled, s = noise_normalized(combined, scenario.system.sigma2)
    ctx = BcdContext(Gk=scaled.Gk, Hk=scaled.Hk, tau0=tau0,
                     P_A=scenario.system.P_A, eta=scenario.system.eta, config=cfg,
                     seed_key=scenario.seed)
    if any(np.linalg.norm(ctx.Gk[k]) == 0 or np.linalg.norm(ctx.Hk[k]) == 0
           for k in range(2)):
        sol = _dead_link_solution(tau0, ctx, scenario)
        return 0.0, sol
    rng = np.random.default_rng([scenario.seed, int(round(tau0 * 1_000_000))])
    state = _initial_state(ctx, rng, init)
    has_surface = ctx.n_elements > 0

    trace = []
    t_start = time.perf_counter()
    converged_at = None
    for l in range(1, cfg.max_inner + 1):
        state.l = l
        prev_gamma = state.gamma
        state.w = mmse_receivers(ctx.Hk, _user_q(state), state.p, 1.0)
        trace.append(solve_energy_block(state, ctx))
        if has_surface:
            trace.extend(solve_downlink_passive_block(state, ctx))
            trace.extend(solve_uplink_passive_block(state, ctx))
        if np.isfinite(prev_gamma) and abs(state.gamma - prev_gamma) < cfg.eps_inner:
            converged_at = l
            break

    solution = _assemble(state, ctx, scenario, combined, s, trace,
                         converged_at, time.perf_counter() - t_start)
    return solution.gamma, solution


def _user_q(state: BcdState) -> np.ndarray:
    if state.q_tilde.shape[0] == 2:
        return state.q_tilde
    return np.stack([state.q_tilde[0], state.q_tilde[0]])


def _dead_link_solution(tau0, ctx, scenario) -> EsSolution:
    """Some user has no channel at all: the max-min rate is zero."""
    M, N = ctx.n_elements, ctx.Gk.shape[2]
    w = np.zeros((2, N), dtype=complex)
    w[:, 0] = 1.0
    if ctx.n_passive == 1:
        profile = SharedReflectProfile(u=np.ones(M, dtype=complex),
                                       q=np.ones(M, dtype=complex))
    else:
        amp = np.sqrt(0.5)
        profile = StarEsProfile(u=np.full((2, M), amp, dtype=complex),
                                q=np.full((2, M), amp, dtype=complex))
    return EsSolution(tau0=tau0, tau1=1.0 - tau0, v=np.zeros(N, dtype=complex),
                      w=w, profile=profile, p=np.zeros(2), gamma=0.0,
                      diagnostics={"trace": [], "iterations": 0,
                                   "converged_at": 0, "rates": [0.0, 0.0],
                                   "dead_link": True, "wall_time": 0.0,
                                   "sdp_gamma": 0.0, "bound_margin": 0.0,
                                   "rank1_residuals": [],
                                   "penalty_residuals": [],
                                   "method": ctx.config.rank_one_method,
                                   "passive_mode": ctx.config.passive_mode})


def _require_two_users(scenario: Scenario):
    tags = scenario.geometry.user_tags()
    if len(tags) != 2:
        raise ValueError("the NOMA strategy is defined for exactly two users")


def _assemble(state, ctx, scenario, combined, s, trace, converged_at, wall):
    cfg = ctx.config
    M = ctx.n_elements
    n_pass = ctx.n_passive
    sdp_gamma = state.gamma

    v = sdp.extract_vector(state.V, anchor_last_entry=False,
                           residual_tol=cfg.rank_tol)
    if n_pass == 1:
        u = np.exp(1j * np.angle(state.u_tilde[0][:M])) if M else np.zeros(0, complex)
        q = np.exp(1j * np.angle(state.q_tilde[0][:M])) if M else np.zeros(0, complex)
        profile = SharedReflectProfile(u=u, q=q)
    else:
        u = _project_coupling(state.u_tilde)
        q = _project_coupling(state.q_tilde)
        profile = StarEsProfile(u=u, q=q)

    p_phys = state.p / s ** 2
    energies = energy_es(ctx.tau0, ctx.eta, combined, profile.u_tilde(), v)
    caps = energies / ctx.tau1
    p_final = np.minimum(p_phys, caps)
    r_t, r_r = rates_es(ctx.tau1, p_final, state.w, combined,
                        profile.q_tilde(), scenario.system.sigma2)
    gamma = min(r_t, r_r)
    bound_margin = sdp_gamma - gamma
    if gamma > sdp_gamma + 1e-3 * (1 + abs(sdp_gamma)):
        raise BlockFailure(f"assembled rate {gamma} exceeds the relaxation "
                           f"value {sdp_gamma}")

    solution = EsSolution(
        tau0=ctx.tau0, tau1=ctx.tau1, v=v, w=state.w.copy(), profile=profile,
        p=p_final, gamma=float(gamma),
        diagnostics={
            "trace": trace,
            "iterations": state.l,
            "converged_at": converged_at,
            "sdp_gamma": float(sdp_gamma),
            "bound_margin": float(bound_margin),
            "rates": [r_t, r_r],
            "rank1_residuals": [r["rank1_residual"] for r in trace
                                if r["rank1_residual"] is not None],
            "penalty_residuals": [r["penalty_residual"] for r in trace
                                  if r["penalty_residual"] is not None],
            "wall_time": wall,
            "method": cfg.rank_one_method,
            "passive_mode": cfg.passive_mode,
        })
    report = validate(solution, scenario)
    if not report.feasible:
        raise BlockFailure(f"assembled solution infeasible:\n{report}")
    return solution


def _project_coupling(tilde: np.ndarray) -> np.ndarray:
    """Exact element power-splitting from near-feasible lifted vectors."""
    M = tilde.shape[1] - 1
    if M == 0:
        return np.zeros((2, 0), dtype=complex)
    u = np.empty((2, M), dtype=complex)
    for k in range(2):
        anchor = tilde[k][-1]
        u[k] = tilde[k][:M] / anchor if abs(anchor) > 1e-12 else tilde[k][:M]
    norm = np.sqrt((np.abs(u) ** 2).sum(axis=0))
    norm = np.where(norm < 1e-12, 1.0, norm)
    return u / norm[None, :]


def monotone_violations(trace: list, tol: float = 1e-6) -> list:
    """Gamma decreases within fixed-penalty stages of a descent trace.

    Penalty growth restarts the comparison baseline, since the
    penalized objective changes between stages.
    """
    out = []
    prev = None
    for rec in trace:
        if rec["block"] not in ("energy", "downlink_passive", "uplink_passive"):
            continue
        g = rec["gamma"]
        if prev is not None and g < prev - tol:
            out.append((rec["iteration"], rec["block"], prev, g))
        prev = None if rec.get("penalty_grew") else g
    return out


def algorithm1(scenario: Scenario, config: EsConfig = EsConfig()) -> EsSolution:
    """Outer one-dimensional search over the charging time.

    Evaluates the inner descent on the grid ``{step, 2*step, ...}``
    strictly inside (0, 1) and returns the best bundle; ties break
    toward the smaller charging time.  Raises if every grid point
    fails.
    """
    _require_two_users(scenario)
    n_points = int(np.ceil(1.0 / config.tau_step)) - 1
    grid = [config.tau_step * i for i in range(1, n_points + 1)]
    best = None
    curve = []
    failures = []
    for tau0 in grid:
        try:
            gamma, sol = bcd_inner(tau0, None, scenario, config)
        except BlockFailure as exc:
            failures.append((tau0, str(exc)))
            curve.append((tau0, None))
            continue
        curve.append((tau0, gamma))
        if best is None or gamma > best[0]:
            best = (gamma, sol)
    if best is None:
        raise RuntimeError(f"all charging-time points failed: {failures}")
    gamma, sol = best
    sol.diagnostics["tau0_curve"] = curve
    sol.diagnostics["failures"] = failures
    return sol
