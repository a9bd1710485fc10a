"""Time-switching TDMA strategy: matched-filter beams, relaxed
phase-only passive design, and optimal time allocation.

Each user gets a dedicated downlink (charging) slot and uplink
(transmission) slot.  Active beamforming is closed-form matched
filtering, the surface phases come from a semidefinite relaxation with
Gaussian randomization (exact closed form for rank-one channel Grams),
and the remaining time split is solved by bisection on the common rate
with a per-user one-dimensional search.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import sdp
from .model import (Scenario, StarTsProfile, TsSolution, append_one,
                    energy_ts, noise_normalized, rates_ts, validate)

_INV_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class TsConfig:
    randomization_draws: int = 1000
    gamma_tol: float = 1e-8     # absolute bisection tolerance on the rate
    solver: str = sdp.DEFAULT_SOLVER
    solver_tol: float = sdp.DEFAULT_TOLERANCE


@dataclass(frozen=True)
class TsGains:
    """Per-user effective gain: with matched-filter beams the rate in a
    slot pair is ``tau1 * log2(1 + a * tau0 / tau1)``."""

    a: np.ndarray

    def __post_init__(self):
        if np.any(self.a < 0):
            raise ValueError("effective gains must be >= 0")


class PassiveSolve(NamedTuple):
    vector: np.ndarray       # (M+1,) unit modulus, last entry exactly 1
    achieved: float          # quadratic form at the returned vector
    relax_bound: float       # SDR objective (upper bound)
    solver_status: str


def mrt_beamformers(Gk: np.ndarray, u_tilde: np.ndarray, Hk: np.ndarray,
                    q_tilde: np.ndarray, P: np.ndarray):
    """Matched-filter transmit/receive beams per user.

    ``v[k] = sqrt(P[k]) * Gk[k]^H u~_k / ||.||`` maximizes delivered
    energy; ``w[k] = Hk[k] q~_k / ||.||`` maximizes received SNR.
    """
    K, _, N = Gk.shape
    v = np.empty((K, N), dtype=complex)
    w = np.empty((K, N), dtype=complex)
    for k in range(K):
        g = Gk[k].conj().T @ u_tilde[k]
        h = Hk[k] @ q_tilde[k]
        gn, hn = np.linalg.norm(g), np.linalg.norm(h)
        if gn == 0 or hn == 0:
            raise ValueError(f"zero effective channel for user {k}")
        v[k] = np.sqrt(P[k]) * g / gn
        w[k] = h / hn
    return v, w


def _unit_modulus_anchor(x: np.ndarray):
    y = x / np.abs(x)
    return y * y[-1].conjugate()


def solve_ts_passive(channel_gram: np.ndarray, rng: np.random.Generator,
                     config: TsConfig = TsConfig()) -> PassiveSolve:
    """Maximize ``x^H R x`` over per-entry unit-modulus ``x``.

    Solves the relaxation ``max Tr(R X), diag(X) = 1, X >= 0`` and
    recovers a vector by Gaussian randomization with a unit-modulus
    projector; the output is globally rotated so its last entry is 1.
    For a (numerically) rank-one Gram the exact phase-alignment closed
    form is used instead.  The achieved value never exceeds the
    relaxation bound.
    """
    R = sdp.hermitize(channel_gram)
    D = R.shape[0]
    if sdp.rank_one_residual(R) <= 1e-12:
        lam, vec = np.linalg.eigh(R)
        x = _unit_modulus_anchor(np.exp(1j * np.angle(vec[:, -1])))
        achieved = float(np.real(x.conj() @ R @ x))
        # alignment is exact for rank one: bound = lam_max * (sum |v_i|)^2
        bound = float(lam[-1] * np.sum(np.abs(vec[:, -1])) ** 2)
        return PassiveSolve(x, achieved, bound, "closed_form")

    prog = sdp.ConicProgram("ts_passive")
    prog.add_psd_var("X", D)
    prog.set_objective(sdp.affine(traces=[sdp.TraceTerm("X", R)]))
    for m in range(D):
        basis = np.zeros((D, D), dtype=complex)
        basis[m, m] = 1.0
        prog.add_constraint(f"diag_{m}", sdp.affine(traces=[sdp.TraceTerm("X", basis)]),
                            "==", 1.0)
    report = sdp.solve(prog, tolerance=config.solver_tol, solver=config.solver)
    if report.status != "optimal":
        raise RuntimeError(f"passive relaxation failed: {report.status}")

    def scorer(x):
        return float(np.real(x.conj() @ R @ x))

    x = sdp.gaussian_randomize(report.value("X"), config.randomization_draws,
                               _unit_modulus_anchor, scorer, rng)
    achieved = scorer(x)
    bound = report.objective
    if achieved > bound * (1 + 1e-6) + 1e-9:
        raise RuntimeError(f"randomized value {achieved} exceeds relaxation "
                           f"bound {bound}")
    return PassiveSolve(x, achieved, bound, report.status)


def _time_factor(a: float, rho) -> np.ndarray:
    """(1 + rho) / log2(1 + a*rho): total time per unit rate at split rho."""
    rho = np.asarray(rho, dtype=float)
    return (1.0 + rho) / np.log2(1.0 + a * rho)


def min_total_time(a: float, gamma: float):
    """Least total (charge + transmit) time for one user to hit ``gamma``.

    The total time at split ratio ``rho = tau0/tau1`` is
    ``gamma * (1+rho)/log2(1+a*rho)``, a unimodal function of ``rho``;
    the bracketing step asserts unimodality before the golden-section
    refinement.  Returns ``(total, tau0, tau1)``.
    """
    if a <= 0:
        raise ValueError("effective gain must be positive")
    if gamma < 0:
        raise ValueError("rate target must be >= 0")
    if gamma == 0:
        return 0.0, 0.0, 0.0

    grid = np.geomspace(1e-9, 1e9, 181)
    vals = _time_factor(a, grid)
    i = int(np.argmin(vals))
    if i == 0 or i == len(grid) - 1 or not (vals[i] <= vals[i - 1]
                                            and vals[i] <= vals[i + 1]):
        raise RuntimeError(f"time-split objective not unimodal for gain {a}")
    lo, hi = grid[i - 1], grid[i + 1]

    # golden-section on [lo, hi]
    x1 = hi - _INV_GOLDEN * (hi - lo)
    x2 = lo + _INV_GOLDEN * (hi - lo)
    f1, f2 = _time_factor(a, x1), _time_factor(a, x2)
    while (hi - lo) > 1e-13 * max(1.0, hi):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _INV_GOLDEN * (hi - lo)
            f1 = _time_factor(a, x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _INV_GOLDEN * (hi - lo)
            f2 = _time_factor(a, x2)
    rho = 0.5 * (lo + hi)
    tau1 = gamma / np.log2(1.0 + a * rho)
    tau0 = rho * tau1
    return float(tau0 + tau1), float(tau0), float(tau1)


def solve_time_allocation(gains: TsGains, T: float = 1.0,
                          gamma_tol: float = 1e-8):
    """Max-min optimal slot lengths by bisection on the common rate.

    A rate ``gamma`` is feasible iff the per-user minimal total times
    sum to at most ``T``.  At the optimum every user transmits at the
    full power budget and all rates equalize.  Returns
    ``(tau0, tau1, gamma)`` with the slot arrays summing to ``T``.
    """
    a = gains.a
    K = len(a)
    if np.any(a <= 0):
        # a starved user pins the max-min rate at zero
        tau = np.full(K, T / (2 * K))
        return tau.copy(), tau.copy(), 0.0

    def used_time(gamma):
        return sum(min_total_time(ak, gamma)[0] for ak in a)

    hi = 1.0
    while used_time(hi) <= T:
        hi *= 2.0
        if hi > 1e9:
            raise RuntimeError("rate bisection failed to bracket")
    lo = 0.0
    while hi - lo > gamma_tol:
        mid = 0.5 * (lo + hi)
        if used_time(mid) <= T:
            lo = mid
        else:
            hi = mid
    gamma = lo

    if gamma == 0.0:
        tau = np.full(K, T / (2 * K))
        return tau.copy(), tau.copy(), 0.0
    tau0 = np.empty(K)
    tau1 = np.empty(K)
    for k in range(K):
        _, tau0[k], tau1[k] = min_total_time(a[k], gamma)
    scale = T / (tau0.sum() + tau1.sum())  # absorb bisection slack exactly
    tau0 *= scale
    tau1 *= scale
    return tau0, tau1, float(gamma * scale)


def _dead_link_solution(scenario: Scenario, combined) -> TsSolution:
    """Some user has no channel at all: the max-min rate is zero."""
    K = combined.n_users
    M = combined.n_elements
    N = combined.n_antennas
    tau = np.full(K, scenario.system.T / (2 * K))
    w = np.zeros((K, N), dtype=complex)
    w[:, 0] = 1.0
    profile = StarTsProfile(u=np.ones((K, M), dtype=complex),
                            q=np.ones((K, M), dtype=complex))
    return TsSolution(tau0=tau.copy(), tau1=tau.copy(), P=np.zeros(K),
                      p=np.zeros(K), v=np.zeros((K, N), dtype=complex), w=w,
                      profile=profile, gamma=0.0,
                      diagnostics={"gains": [0.0] * K, "dead_link": True,
                                   "gamma_allocation": 0.0, "relax_margins": [],
                                   "solver_statuses": [], "rates": [0.0] * K,
                                   "wall_time": 0.0, "iterations": 0})


def _time_allocation_exp_cone(gains: TsGains, T: float = 1.0):
    """Exponential-cone cross-check for the time allocation.

    Solves the hypograph form ``tau1 * log2(1 + a * tau0/tau1) >= gamma``
    directly with a conic solver; used to confirm the bisection path.
    """
    import cvxpy as cp

    K = len(gains.a)
    tau0 = cp.Variable(K, nonneg=True)
    tau1 = cp.Variable(K, nonneg=True)
    gamma = cp.Variable()
    cons = [cp.sum(tau0) + cp.sum(tau1) == T]
    for k in range(K):
        rate = -cp.rel_entr(tau1[k], tau1[k] + gains.a[k] * tau0[k]) / np.log(2.0)
        cons.append(rate >= gamma)
    prob = cp.Problem(cp.Maximize(gamma), cons)
    prob.solve(solver="SCS", eps=1e-9)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"exp-cone allocation failed: {prob.status}")
    return np.asarray(tau0.value), np.asarray(tau1.value), float(gamma.value)


def algorithm2(scenario: Scenario, config: TsConfig = TsConfig()) -> TsSolution:
    """Full time-switching TDMA pipeline for any number of users.

    Per user: passive phases for the downlink and uplink Grams, matched
    filter beams at full power, effective gain, then the shared time
    allocation.  The assembled solution is validated before return.
    """
    t_start = time.perf_counter()
    rng = np.random.default_rng(scenario.seed)
    combined = scenario.combined()
    scaled, s = noise_normalized(combined, scenario.system.sigma2)
    K, Dm1, _ = combined.Gk.shape
    M = Dm1 - 1
    P_A, eta = scenario.system.P_A, scenario.system.eta
    if any(np.linalg.norm(combined.Gk[k]) == 0 or np.linalg.norm(combined.Hk[k]) == 0
           for k in range(K)):
        return _dead_link_solution(scenario, combined)

    u_tilde = np.empty((K, M + 1), dtype=complex)
    q_tilde = np.empty((K, M + 1), dtype=complex)
    margins = []
    statuses = []
    for k in range(K):
        if M == 0:
            u_tilde[k] = q_tilde[k] = np.ones(1, dtype=complex)
            continue
        dl = solve_ts_passive(scaled.Gk[k] @ scaled.Gk[k].conj().T, rng, config)
        ul = solve_ts_passive(scaled.Hk[k].conj().T @ scaled.Hk[k], rng, config)
        u_tilde[k], q_tilde[k] = dl.vector, ul.vector
        margins += [dl.relax_bound - dl.achieved, ul.relax_bound - ul.achieved]
        statuses += [dl.solver_status, ul.solver_status]

    P = np.full(K, P_A)
    v, w = mrt_beamformers(combined.Gk, u_tilde, combined.Hk, q_tilde, P)

    a = np.empty(K)
    for k in range(K):
        a[k] = eta * P_A * np.linalg.norm(scaled.Gk[k].conj().T @ u_tilde[k]) ** 2 \
            * np.linalg.norm(scaled.Hk[k] @ q_tilde[k]) ** 2
    gains = TsGains(a=a)

    tau0, tau1, gamma_alloc = solve_time_allocation(gains, scenario.system.T,
                                                    config.gamma_tol)

    profile = StarTsProfile(u=u_tilde[:, :M].copy(), q=q_tilde[:, :M].copy())
    energies = energy_ts(tau0, eta, combined, u_tilde, v)
    p = np.zeros(K)
    nonzero = tau1 > 0
    p[nonzero] = energies[nonzero] / tau1[nonzero]
    rates = rates_ts(tau1, p, w, combined, q_tilde, scenario.system.sigma2)
    gamma = float(rates.min()) if K else 0.0

    solution = TsSolution(
        tau0=tau0, tau1=tau1, P=P, p=p, v=v, w=w, profile=profile, gamma=gamma,
        diagnostics={
            "gains": a.tolist(),
            "gamma_allocation": gamma_alloc,
            "relax_margins": margins,
            "solver_statuses": statuses,
            "rates": rates.tolist(),
            "wall_time": time.perf_counter() - t_start,
            "iterations": 1,
        },
    )
    report = validate(solution, scenario)
    if not report.feasible:
        raise RuntimeError(f"assembled TDMA solution infeasible:\n{report}")
    return solution
