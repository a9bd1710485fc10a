"""Decision variables, energy/rate evaluators, and solution validation.

Two transmission strategies share one physical model.  In the
energy-splitting NOMA strategy both users harvest simultaneously from a
single energy beam and then transmit together; the surface splits each
element's power between its transmission and reflection sides.  In the
time-switching TDMA strategy users get dedicated downlink and uplink
slots and the surface applies full-amplitude phase shifts.

Conventions owned here: per-user "tilde" tuning vectors append a fixed
trailing 1 so that combined-channel products include the direct link;
rates are per-hertz; the noise power is in watts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .channel import (ChannelSet, CombinedChannels, FadingParams, Point3,
                      ScenarioGeometry, combine, generate_channels)

USER_T = 0  # transmission-side user
USER_R = 1  # reflection-side user (nearer the HAP, decoded first)


@dataclass(frozen=True)
class SystemParams:
    """Power budget, harvesting efficiency, noise, and block length."""

    P_A: float = 5.0
    eta: float = 0.8
    sigma2: float = 1e-12  # -90 dBm in watts
    T: float = 1.0

    def __post_init__(self):
        if min(self.P_A, self.eta, self.sigma2, self.T) <= 0:
            raise ValueError("all system parameters must be positive")
        if self.eta > 1:
            raise ValueError("harvesting efficiency cannot exceed 1")


@dataclass(frozen=True)
class Scenario:
    """A reproducible problem instance: geometry, fading and system."""

    geometry: ScenarioGeometry
    fading: FadingParams
    system: SystemParams
    seed: int
    reciprocal: bool = True

    def channels(self) -> ChannelSet:
        return generate_channels(self.geometry, self.fading, self.seed,
                                 reciprocal=self.reciprocal)

    def combined(self) -> CombinedChannels:
        return combine(self.channels())


def append_one(vec: np.ndarray) -> np.ndarray:
    """Tilde convention: append the fixed direct-link entry 1."""
    if vec.ndim == 1:
        return np.concatenate([vec, [1.0 + 0.0j]])
    return np.concatenate([vec, np.ones((vec.shape[0], 1), dtype=complex)], axis=1)


@dataclass(frozen=True)
class StarEsProfile:
    """Energy-splitting tuning vectors for exactly two users (t, r).

    ``u`` holds the downlink vectors, ``q`` the uplink vectors, each of
    shape (2, M) with entries ``sqrt(beta) * exp(j*theta)``.  Element
    amplitudes of the two users are coupled: for every element,
    ``|u[t, m]|**2 + |u[r, m]|**2 == 1`` (and likewise for ``q``).
    """

    u: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.q.shape or self.u.ndim != 2 or self.u.shape[0] != 2:
            raise ValueError("profile vectors must have shape (2, M)")
        for name, arr in (("u", self.u), ("q", self.q)):
            power = np.abs(arr) ** 2
            if power.size and (power.max() > 1 + 1e-9):
                raise ValueError(f"{name} amplitudes exceed 1")
            coupling = power.sum(axis=0)
            if coupling.size and np.max(np.abs(coupling - 1.0)) > 1e-9:
                raise ValueError(f"{name} violates the element power-splitting "
                                 f"coupling by {np.max(np.abs(coupling - 1.0)):.2e}")

    @property
    def n_elements(self) -> int:
        return self.u.shape[1]

    def u_tilde(self) -> np.ndarray:
        return append_one(self.u)

    def q_tilde(self) -> np.ndarray:
        return append_one(self.q)


@dataclass(frozen=True)
class StarTsProfile:
    """Time-switching tuning vectors, unit modulus, one row per user."""

    u: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.q.shape or self.u.ndim != 2:
            raise ValueError("profile vectors must have shape (K, M)")
        for name, arr in (("u", self.u), ("q", self.q)):
            if arr.size and np.max(np.abs(np.abs(arr) - 1.0)) > 1e-9:
                raise ValueError(f"{name} is not unit modulus")

    @property
    def n_elements(self) -> int:
        return self.u.shape[1]

    def u_tilde(self) -> np.ndarray:
        return append_one(self.u)

    def q_tilde(self) -> np.ndarray:
        return append_one(self.q)


@dataclass(frozen=True)
class SharedReflectProfile:
    """Reflect-only surface shared by all users: one unit-modulus vector
    per phase (used by the conventional-surface baseline under NOMA)."""

    u: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.q.shape or self.u.ndim != 1:
            raise ValueError("shared profile vectors must have shape (M,)")
        for name, arr in (("u", self.u), ("q", self.q)):
            if arr.size and np.max(np.abs(np.abs(arr) - 1.0)) > 1e-9:
                raise ValueError(f"{name} is not unit modulus")

    @property
    def n_elements(self) -> int:
        return self.u.shape[0]

    def u_tilde(self) -> np.ndarray:
        return np.broadcast_to(append_one(self.u), (2, self.u.size + 1)).copy()

    def q_tilde(self) -> np.ndarray:
        return np.broadcast_to(append_one(self.q), (2, self.q.size + 1)).copy()


EsProfile = Union[StarEsProfile, SharedReflectProfile]


@dataclass(frozen=True)
class EsSolution:
    """Full decision bundle for the energy-splitting NOMA strategy."""

    tau0: float
    tau1: float
    v: np.ndarray           # (N,) energy beam
    w: np.ndarray           # (2, N) unit-norm receive beamformers
    profile: EsProfile
    p: np.ndarray           # (2,) user transmit powers, watts
    gamma: float            # achieved max-min throughput, bits/s/Hz
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)


@dataclass(frozen=True)
class TsSolution:
    """Full decision bundle for the time-switching TDMA strategy.

    ``P`` is the HAP transmit power per downlink slot, ``p`` the derived
    user transmit power (all harvested energy is spent).
    """

    tau0: np.ndarray        # (K,) downlink slot lengths
    tau1: np.ndarray        # (K,) uplink slot lengths
    P: np.ndarray           # (K,) HAP powers
    p: np.ndarray           # (K,) user powers
    v: np.ndarray           # (K, N) energy beams
    w: np.ndarray           # (K, N) receive beamformers
    profile: StarTsProfile
    gamma: float
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)


def energy_es(tau0: float, eta: float, combined: CombinedChannels,
              u_tilde: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Harvested energy per user: ``tau0 * eta * |u~_k^H G_k v|**2``."""
    if tau0 < 0:
        raise ValueError("tau0 must be >= 0")
    K = combined.n_users
    if u_tilde.shape != (K, combined.n_elements + 1):
        raise ValueError(f"u_tilde has shape {u_tilde.shape}, expected "
                         f"{(K, combined.n_elements + 1)}")
    out = np.empty(K)
    for k in range(K):
        out[k] = tau0 * eta * np.abs(u_tilde[k].conj() @ combined.Gk[k] @ v) ** 2
    return out


def energy_ts(tau0: np.ndarray, eta: float, combined: CombinedChannels,
              u_tilde: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-user harvested energy with dedicated slots and beams.

    Energy trickling in through the direct link during other users'
    slots is ignored.
    """
    K = combined.n_users
    out = np.empty(K)
    for k in range(K):
        if tau0[k] < 0:
            raise ValueError("slot lengths must be >= 0")
        out[k] = tau0[k] * eta * np.abs(u_tilde[k].conj() @ combined.Gk[k] @ v[k]) ** 2
    return out


def rates_es(tau1: float, p: np.ndarray, w: np.ndarray,
             combined: CombinedChannels, q_tilde: np.ndarray,
             sigma2: float) -> tuple:
    """Uplink NOMA rates with user r decoded first.

    User r sees user t's signal as interference; user t is decoded
    after cancellation and is interference-free.
    """
    h_t = combined.Hk[USER_T] @ q_tilde[USER_T]
    h_r = combined.Hk[USER_R] @ q_tilde[USER_R]
    sig_t = p[USER_T] * np.abs(w[USER_T].conj() @ h_t) ** 2
    r_t = tau1 * np.log2(1.0 + sig_t / (np.linalg.norm(w[USER_T]) ** 2 * sigma2))
    sig_r = p[USER_R] * np.abs(w[USER_R].conj() @ h_r) ** 2
    interf = p[USER_T] * np.abs(w[USER_R].conj() @ h_t) ** 2
    r_r = tau1 * np.log2(1.0 + sig_r / (interf + np.linalg.norm(w[USER_R]) ** 2 * sigma2))
    return float(r_t), float(r_r)


def rates_ts(tau1: np.ndarray, p: np.ndarray, w: np.ndarray,
             combined: CombinedChannels, q_tilde: np.ndarray,
             sigma2: float) -> np.ndarray:
    """Interference-free per-user rates with dedicated uplink slots."""
    K = combined.n_users
    out = np.zeros(K)
    for k in range(K):
        if tau1[k] == 0:
            continue
        sig = p[k] * np.abs(w[k].conj() @ (combined.Hk[k] @ q_tilde[k])) ** 2
        out[k] = tau1[k] * np.log2(1.0 + sig / (np.linalg.norm(w[k]) ** 2 * sigma2))
    return out


def noise_normalized(combined: CombinedChannels, sigma2: float):
    """Rescale channels so the effective noise power is 1.

    Multiplying all channel amplitudes by ``s = sigma2**(-1/4)`` and
    setting the noise to 1 leaves every rate and effective gain
    unchanged while user powers and energies scale by ``s**2``.  The
    conic subproblems are solved in these units to keep coefficients
    near unity; physical powers are recovered by dividing by ``s**2``.
    """
    s = sigma2 ** (-0.25)
    scaled = CombinedChannels(Gk=combined.Gk * s, Hk=combined.Hk * s)
    return scaled, s


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    residual: float  # relative violation; <= 0 or tiny means satisfied
    ok: bool


@dataclass(frozen=True)
class ConstraintReport:
    checks: tuple
    tolerance: float

    @property
    def feasible(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def max_residual(self) -> float:
        return max((c.residual for c in self.checks), default=0.0)

    def violations(self) -> list:
        return [c for c in self.checks if not c.ok]

    def __str__(self):
        lines = [f"feasible={self.feasible} (tol {self.tolerance:g})"]
        for c in self.checks:
            mark = "ok " if c.ok else "BAD"
            lines.append(f"  [{mark}] {c.name}: residual {c.residual:+.3e}")
        return "\n".join(lines)


def _check_le(name, lhs, rhs, scale, tol):
    residual = (lhs - rhs) / max(abs(scale), 1e-300)
    return ConstraintCheck(name, float(residual), residual <= tol)


def _check_eq(name, lhs, rhs, scale, tol):
    residual = abs(lhs - rhs) / max(abs(scale), 1e-300)
    return ConstraintCheck(name, float(residual), residual <= tol)


def validate(solution, scenario: Scenario, tolerance: float = 1e-6) -> ConstraintReport:
    """Check every constraint of the solution's problem, with residuals.

    Relative residuals are positive where violated; a solution is
    feasible when all residuals are within ``tolerance``.  Baselines are
    validated under their own constraint system (shared reflect-only
    profiles check unit modulus instead of power splitting).
    """
    if isinstance(solution, EsSolution):
        return _validate_es(solution, scenario, tolerance)
    if isinstance(solution, TsSolution):
        return _validate_ts(solution, scenario, tolerance)
    raise TypeError(f"cannot validate {type(solution).__name__}")


def _validate_es(sol: EsSolution, scenario: Scenario, tol: float) -> ConstraintReport:
    sp = scenario.system
    combined = scenario.combined()
    checks = []
    checks.append(_check_le("power_budget", np.linalg.norm(sol.v) ** 2, sp.P_A,
                            sp.P_A, tol))
    for k, label in ((USER_T, "t"), (USER_R, "r")):
        checks.append(_check_eq(f"receive_norm_{label}",
                                np.linalg.norm(sol.w[k]), 1.0, 1.0, tol))
        checks.append(_check_le(f"power_positive_{label}", 0.0, sol.p[k],
                                max(sol.p[k], 1e-300), tol))
    checks.append(_check_eq("time_sum", sol.tau0 + sol.tau1, sp.T, sp.T, tol))
    checks.append(_check_le("time_positive", 0.0, min(sol.tau0, sol.tau1), sp.T, tol))

    if isinstance(sol.profile, StarEsProfile):
        for name, arr in (("u", sol.profile.u), ("q", sol.profile.q)):
            coupling = (np.abs(arr) ** 2).sum(axis=0)
            worst = float(np.max(np.abs(coupling - 1.0))) if coupling.size else 0.0
            checks.append(ConstraintCheck(f"splitting_{name}", worst, worst <= tol))
    else:
        for name, arr in (("u", sol.profile.u), ("q", sol.profile.q)):
            worst = float(np.max(np.abs(np.abs(arr) - 1.0))) if arr.size else 0.0
            checks.append(ConstraintCheck(f"unit_modulus_{name}", worst, worst <= tol))

    energies = energy_es(sol.tau0, sp.eta, combined, sol.profile.u_tilde(), sol.v)
    for k, label in ((USER_T, "t"), (USER_R, "r")):
        checks.append(_check_le(f"energy_causality_{label}", sol.tau1 * sol.p[k],
                                energies[k], max(energies[k], 1e-300), tol))

    r_t, r_r = rates_es(sol.tau1, sol.p, sol.w, combined,
                        sol.profile.q_tilde(), sp.sigma2)
    scale = max(abs(sol.gamma), 1e-9)
    checks.append(_check_le("rate_floor_t", sol.gamma, r_t, scale, tol))
    checks.append(_check_le("rate_floor_r", sol.gamma, r_r, scale, tol))
    return ConstraintReport(tuple(checks), tol)


def _validate_ts(sol: TsSolution, scenario: Scenario, tol: float) -> ConstraintReport:
    sp = scenario.system
    combined = scenario.combined()
    K = combined.n_users
    checks = []
    for k in range(K):
        checks.append(_check_le(f"power_budget_{k}", sol.P[k], sp.P_A, sp.P_A, tol))
        checks.append(_check_eq(f"beam_power_{k}", np.linalg.norm(sol.v[k]) ** 2,
                                sol.P[k], max(sol.P[k], 1e-300), tol))
        checks.append(_check_eq(f"receive_norm_{k}", np.linalg.norm(sol.w[k]),
                                1.0, 1.0, tol))
    checks.append(_check_eq("time_sum", float(sol.tau0.sum() + sol.tau1.sum()),
                            sp.T, sp.T, tol))
    for name, arr in (("u", sol.profile.u), ("q", sol.profile.q)):
        worst = float(np.max(np.abs(np.abs(arr) - 1.0))) if arr.size else 0.0
        checks.append(ConstraintCheck(f"unit_modulus_{name}", worst, worst <= tol))

    energies = energy_ts(sol.tau0, sp.eta, combined, sol.profile.u_tilde(), sol.v)
    rates = rates_ts(sol.tau1, sol.p, sol.w, combined, sol.profile.q_tilde(),
                     sp.sigma2)
    scale = max(abs(sol.gamma), 1e-9)
    for k in range(K):
        checks.append(_check_le(f"energy_causality_{k}", sol.tau1[k] * sol.p[k],
                                energies[k], max(energies[k], 1e-300), tol))
        checks.append(_check_le(f"rate_floor_{k}", sol.gamma, rates[k], scale, tol))
    return ConstraintReport(tuple(checks), tol)
