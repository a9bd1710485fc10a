"""Geometry-based Rician fading channels for a STAR-RIS assisted network.

A hybrid access point (HAP) with ``N`` antennas talks to single-antenna
users through a direct link and through a surface with ``M`` tunable
elements.  Downlink and uplink channels are generated from 3D node
positions with a Rician small-scale model and power-law path loss, and
are assembled into the combined (cascaded + direct) matrices that every
solver in this package consumes.

All arrays are complex128.  Per-user quantities are stacked along a
leading user axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Region tags for users of a simultaneously transmitting/reflecting surface.
TRANSMISSION = "T"
REFLECTION = "R"

_ARRAY_AXIS = np.array([0.0, 1.0, 0.0])  # ULA axis shared by HAP and surface


@dataclass(frozen=True)
class Point3:
    """A point in meters."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        for v in (self.x, self.y, self.z):
            if not math.isfinite(v):
                raise ValueError(f"non-finite coordinate in {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def distance_to(self, other: "Point3") -> float:
        return float(np.linalg.norm(self.as_array() - other.as_array()))


@dataclass(frozen=True)
class FadingParams:
    """Path-loss and Rician fading configuration.

    ``reference_gain_db`` is the power gain at 1 m.  ``rician_k_factor``
    is the linear LoS-to-scatter power ratio shared by all links; it may
    be ``inf`` for a pure line-of-sight channel.
    """

    pathloss_exponent_hap_ris: float = 2.2
    pathloss_exponent_ris_user: float = 2.2
    pathloss_exponent_direct: float = 3.4
    reference_gain_db: float = -30.0
    rician_k_factor: float = 2.0
    carrier_frequency: float = 750e6
    bandwidth: float = 1e6

    def __post_init__(self):
        exps = (self.pathloss_exponent_hap_ris, self.pathloss_exponent_ris_user,
                self.pathloss_exponent_direct)
        if any(e < 2.0 for e in exps):
            raise ValueError(f"path-loss exponents must be >= 2, got {exps}")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if not self.rician_k_factor >= 0:
            raise ValueError("rician_k_factor must be >= 0")

    @property
    def reference_gain(self) -> float:
        """Linear power gain at the 1 m reference distance."""
        return 10.0 ** (self.reference_gain_db / 10.0)


@dataclass(frozen=True)
class ScenarioGeometry:
    """Node placement and array sizes.

    ``users`` holds ``(position, tag)`` pairs where the tag marks the
    transmission ("T") or reflection ("R") side of the surface.  For a
    STAR surface in the plane ``x = ris.x``, T users must lie at
    ``x > ris.x`` and R users at ``x < ris.x`` (the HAP side).  A
    reflect-only surface (``surface="reflect_only"``) skips the side
    check since it serves its whole half-space by reflection.
    """

    hap: Point3
    ris: Point3
    users: tuple
    n_antennas: int
    n_elements: int
    surface: str = "star"

    def __post_init__(self):
        if self.n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        if self.n_elements < 1:
            raise ValueError("n_elements must be >= 1")
        if self.surface not in ("star", "reflect_only"):
            raise ValueError(f"unknown surface kind {self.surface!r}")
        if not self.users:
            raise ValueError("at least one user required")
        tags = {tag for _, tag in self.users}
        if not tags <= {TRANSMISSION, REFLECTION}:
            raise ValueError(f"bad region tags {tags}")
        if self.surface == "star":
            for pos, tag in self.users:
                on_t_side = pos.x > self.ris.x
                if pos.x == self.ris.x:
                    raise ValueError(f"user at {pos} lies in the surface plane")
                if on_t_side != (tag == TRANSMISSION):
                    raise ValueError(
                        f"user at {pos} tagged {tag!r} is on the wrong side of "
                        f"the surface plane x={self.ris.x}")

    @property
    def n_users(self) -> int:
        return len(self.users)

    def user_positions(self) -> list:
        return [pos for pos, _ in self.users]

    def user_tags(self) -> list:
        return [tag for _, tag in self.users]


@dataclass(frozen=True)
class ChannelSet:
    """Raw downlink/uplink channels.

    Shapes: ``G`` is (M, N) HAP->surface, ``g_a`` (K, N) direct
    HAP->user, ``g_s`` (K, M) surface->user, and the uplink counterparts
    ``H`` (N, M), ``h_a`` (K, N), ``h_s`` (K, M).  Uplink row vectors
    ``h_a[k]``/``h_s[k]`` store the entries of the 1xN / 1xM channels.
    """

    G: np.ndarray
    g_a: np.ndarray
    g_s: np.ndarray
    H: np.ndarray
    h_a: np.ndarray
    h_s: np.ndarray

    def __post_init__(self):
        M, N = self.G.shape
        K = self.g_a.shape[0]
        expected = {
            "g_a": (K, N), "g_s": (K, M), "H": (N, M),
            "h_a": (K, N), "h_s": (K, M),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
        for name in ("G", "g_a", "g_s", "H", "h_a", "h_s"):
            if not np.all(np.isfinite(getattr(self, name).view(float))):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def n_elements(self) -> int:
        return self.G.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.G.shape[1]

    @property
    def n_users(self) -> int:
        return self.g_a.shape[0]


@dataclass(frozen=True)
class CombinedChannels:
    """Cascaded-plus-direct channels seen through the surface.

    ``Gk[k]`` is the (M+1, N) downlink matrix whose first M rows carry
    the element-wise cascade and whose last row is the direct link;
    ``Hk[k]`` is the (N, M+1) uplink matrix with the direct link in the
    last column.  Appending 1 to a length-M tuning vector and applying
    it to these matrices reproduces the cascaded + direct link exactly.
    """

    Gk: np.ndarray  # (K, M+1, N)
    Hk: np.ndarray  # (K, N, M+1)

    @property
    def n_users(self) -> int:
        return self.Gk.shape[0]

    @property
    def n_elements(self) -> int:
        return self.Gk.shape[1] - 1

    @property
    def n_antennas(self) -> int:
        return self.Gk.shape[2]


def path_gain(distance: float, exponent: float, params: FadingParams) -> float:
    """Linear power gain ``g_ref * d**(-exponent)`` with g_ref at 1 m."""
    if distance <= 0:
        raise ValueError(f"distance must be positive, got {distance}")
    return params.reference_gain * distance ** (-exponent)


def _steering(n: int, cos_angle: float) -> np.ndarray:
    # half-wavelength ULA response along the shared array axis
    return np.exp(1j * np.pi * np.arange(n) * cos_angle)


def _cos_to_axis(src: Point3, dst: Point3) -> float:
    d = dst.as_array() - src.as_array()
    return float(d @ _ARRAY_AXIS / np.linalg.norm(d))


def _rician(rng: np.random.Generator, los: np.ndarray, gain: float,
            k_factor: float) -> np.ndarray:
    scatter = (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape))
    scatter /= np.sqrt(2.0)
    if np.isinf(k_factor):
        w_los, w_nlos = 1.0, 0.0
    else:
        w_los = np.sqrt(k_factor / (k_factor + 1.0))
        w_nlos = np.sqrt(1.0 / (k_factor + 1.0))
    return np.sqrt(gain) * (w_los * los + w_nlos * scatter)


def generate_channels(geometry: ScenarioGeometry, params: FadingParams,
                      seed: int, reciprocal: bool = True) -> ChannelSet:
    """Draw all channels for one block, deterministically from ``seed``.

    Each link is ``sqrt(path_gain) * (sqrt(K/(K+1)) * LoS +
    sqrt(1/(K+1)) * CN(0, 1))`` with the LoS term built from ULA
    steering vectors along the shared array axis.  With
    ``reciprocal=True`` every uplink channel is the conjugate transpose
    of its downlink counterpart; otherwise the uplink scattering is
    drawn independently (same LoS geometry and path gains).
    """
    rng = np.random.default_rng(seed)
    M, N, K = geometry.n_elements, geometry.n_antennas, geometry.n_users
    kf = params.rician_k_factor

    d_hr = geometry.hap.distance_to(geometry.ris)
    los_G = np.outer(_steering(M, _cos_to_axis(geometry.ris, geometry.hap)),
                     _steering(N, _cos_to_axis(geometry.hap, geometry.ris)).conj())
    G = _rician(rng, los_G, path_gain(d_hr, params.pathloss_exponent_hap_ris, params), kf)

    g_a = np.empty((K, N), dtype=complex)
    g_s = np.empty((K, M), dtype=complex)
    for k, pos in enumerate(geometry.user_positions()):
        gain_a = path_gain(geometry.hap.distance_to(pos),
                           params.pathloss_exponent_direct, params)
        g_a[k] = _rician(rng, _steering(N, _cos_to_axis(geometry.hap, pos)), gain_a, kf)
        gain_s = path_gain(geometry.ris.distance_to(pos),
                           params.pathloss_exponent_ris_user, params)
        g_s[k] = _rician(rng, _steering(M, _cos_to_axis(geometry.ris, pos)), gain_s, kf)

    if reciprocal:
        H = G.conj().T.copy()
        h_a = g_a.conj()
        h_s = g_s.conj()
    else:
        H = _rician(rng, los_G.conj().T,
                    path_gain(d_hr, params.pathloss_exponent_hap_ris, params), kf)
        h_a = np.empty((K, N), dtype=complex)
        h_s = np.empty((K, M), dtype=complex)
        for k, pos in enumerate(geometry.user_positions()):
            gain_a = path_gain(geometry.hap.distance_to(pos),
                               params.pathloss_exponent_direct, params)
            h_a[k] = _rician(rng, _steering(N, _cos_to_axis(geometry.hap, pos)).conj(),
                             gain_a, kf)
            gain_s = path_gain(geometry.ris.distance_to(pos),
                               params.pathloss_exponent_ris_user, params)
            h_s[k] = _rician(rng, _steering(M, _cos_to_axis(geometry.ris, pos)).conj(),
                             gain_s, kf)

    return ChannelSet(G=G, g_a=g_a, g_s=g_s, H=H, h_a=h_a, h_s=h_s)


def combine(channels: ChannelSet) -> CombinedChannels:
    """Stack the element-wise cascade with the direct link.

    ``Gk[k] = [diag(conj(g_s[k])) @ G ; conj(g_a[k])]`` and
    ``Hk[k] = [H @ diag(conj(h_s[k])), conj(h_a[k])]``.
    """
    M, N, K = channels.n_elements, channels.n_antennas, channels.n_users
    reciprocal = (np.array_equal(channels.H, channels.G.conj().T)
                  and np.array_equal(channels.h_a, channels.g_a.conj())
                  and np.array_equal(channels.h_s, channels.g_s.conj()))
    Gk = np.empty((K, M + 1, N), dtype=complex)
    Hk = np.empty((K, N, M + 1), dtype=complex)
    for k in range(K):
        Gk[k, :M, :] = channels.g_s[k].conj()[:, None] * channels.G
        Gk[k, M, :] = channels.g_a[k].conj()
        if reciprocal:
            # build the uplink from the downlink so reciprocity is exact
            Hk[k] = Gk[k].conj().T
        else:
            Hk[k, :, :M] = channels.H * channels.h_s[k].conj()[None, :]
            Hk[k, :, M] = channels.h_a[k].conj()
    return CombinedChannels(Gk=Gk, Hk=Hk)


def strip_surface(channels: ChannelSet) -> ChannelSet:
    """Remove the surface: keep direct links only (M becomes 0)."""
    M, N, K = channels.n_elements, channels.n_antennas, channels.n_users
    z_mn = np.zeros((0, N), dtype=complex)
    z_km = np.zeros((K, 0), dtype=complex)
    return ChannelSet(G=z_mn, g_a=channels.g_a, g_s=z_km,
                      H=z_mn.T.copy(), h_a=channels.h_a, h_s=z_km)


def place_users_semicircle(rng: np.random.Generator, ris: Point3,
                           tags: Sequence[str] = (TRANSMISSION, REFLECTION),
                           radius: float = 1.0) -> tuple:
    """Place one user per tag uniformly in polar coordinates.

    Radius is uniform on (0, radius], the angle uniform over the
    half-circle on the tag's side of the surface plane; users sit on
    the ground (z = 0).
    """
    users = []
    for tag in tags:
        r = radius * rng.uniform(0.0, 1.0)
        r = max(r, 1e-3)  # keep distances strictly positive
        ang = rng.uniform(-np.pi / 2, np.pi / 2)
        dx = r * np.cos(ang)
        if tag == REFLECTION:
            dx = -dx
        users.append((Point3(ris.x + dx, ris.y + r * np.sin(ang), 0.0), tag))
    return tuple(users)
