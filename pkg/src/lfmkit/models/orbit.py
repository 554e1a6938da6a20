"""Satellite orbit dynamics: spherical-harmonics Earth gravity, lunar/solar
third-body terms, a rough solar radiation pressure model, and RTN-decomposed
latent forces.

Frames: the inertial frame coincides with the Earth-fixed frame at t = 0; a
single rotation about z at the sidereal rate maps between them.  Ephemerides
are simplified analytic circular orbits (Sun in the ecliptic, Moon in an
ecliptic-inclined circle), sufficient for synthetic experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import numpy as np

from ..ssm import MeasurementModel, MechanisticModel

__all__ = [
    "AU",
    "GM_EARTH",
    "GM_MOON",
    "GM_SUN",
    "GravityModel",
    "OMEGA_EARTH",
    "OrbitEnvironment",
    "R_EARTH",
    "SIDEREAL_DAY",
    "circular_orbit_state",
    "default_ephemeris",
    "default_gravity_model",
    "earth_rotation",
    "gravity_accel",
    "gravity_potential",
    "load_gravity_coefficients",
    "measurement",
    "mechanistic",
    "orbit_drift",
    "rtn_basis",
    "rtn_matrix",
    "specific_energy",
    "srp_accel",
    "third_body_accel",
]

GM_EARTH = 3.986004418e14      # m^3/s^2
R_EARTH = 6378136.3            # m
GM_MOON = 4.9048695e12         # m^3/s^2
GM_SUN = 1.32712440018e20      # m^3/s^2
AU = 1.495978707e11            # m
SIDEREAL_DAY = 86164.0905      # s
OMEGA_EARTH = 2.0 * math.pi / SIDEREAL_DAY
ECLIPTIC_OBLIQUITY = math.radians(23.439)
MOON_DISTANCE = 3.844e8        # m
MOON_PERIOD = 27.321661 * 86400.0
YEAR = 365.25636 * 86400.0


@dataclass(frozen=True)
class GravityModel:
    """Unnormalized spherical-harmonics gravity field up to degree/order n_max."""

    gm: float
    r_ref: float
    n_max: int
    c: np.ndarray  # (n_max+1, n_max+1), c[n, m]
    s: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        s = np.asarray(self.s, dtype=float)
        shape = (self.n_max + 1, self.n_max + 1)
        if c.shape != shape or s.shape != shape:
            raise ValueError(f"coefficient tables must have shape {shape}")
        if c[0, 0] != 1.0:
            raise ValueError("C_00 must be 1")
        c.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "s", s)

    def truncated(self, n_max: int) -> "GravityModel":
        if n_max > self.n_max:
            raise ValueError(f"table only covers degree {self.n_max}")
        return GravityModel(self.gm, self.r_ref, n_max,
                            self.c[:n_max + 1, :n_max + 1].copy(),
                            self.s[:n_max + 1, :n_max + 1].copy())


def load_gravity_coefficients(path, n_max: int, gm: float = GM_EARTH,
                              r_ref: float = R_EARTH) -> GravityModel:
    """Read unnormalized coefficients from a plain-text file.

    Lines are ``n m C_nm S_nm`` (whitespace separated); ``#`` starts a comment.
    Every (n, m) pair with 0 <= m <= n <= n_max must be present.
    """
    c = np.full((n_max + 1, n_max + 1), np.nan)
    s = np.full((n_max + 1, n_max + 1), np.nan)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 4:
                raise ValueError(f"{path}: line {lineno}: expected 'n m C S'")
            try:
                n, m = int(parts[0]), int(parts[1])
                cval, sval = float(parts[2]), float(parts[3])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            if m > n or n < 0 or m < 0:
                raise ValueError(f"{path}: line {lineno}: invalid degree/order ({n},{m})")
            if n <= n_max:
                if not math.isnan(c[n, m]):
                    raise ValueError(f"{path}: line {lineno}: duplicate entry ({n},{m})")
                c[n, m] = cval
                s[n, m] = sval
    missing = [(n, m) for n in range(n_max + 1) for m in range(n + 1)
               if math.isnan(c[n, m])]
    if missing:
        raise ValueError(f"{path}: missing coefficients up to degree {n_max}: "
                         f"{missing[:5]}{'...' if len(missing) > 5 else ''}")
    c = np.nan_to_num(c)
    s = np.nan_to_num(s)
    return GravityModel(gm=gm, r_ref=r_ref, n_max=n_max, c=c, s=s)


def default_gravity_model(n_max: int = 8) -> GravityModel:
    """Gravity model from the packaged coefficient file (degree/order 8)."""
    ref = resources.files("lfmkit").joinpath("data/gravity_deg8.txt")
    with resources.as_file(ref) as path:
        return load_gravity_coefficients(path, n_max)


def _legendre_with_deriv(n_max: int, sphi: np.ndarray, cphi: np.ndarray):
    """Unnormalized associated Legendre P_nm(sin phi) and dP_nm/dphi.

    Standard recurrences without the Condon-Shortley phase; valid away from
    the poles (cos phi != 0).
    """
    k = sphi.shape[0]
    P = np.zeros((n_max + 1, n_max + 1, k))
    dP = np.zeros((n_max + 1, n_max + 1, k))
    P[0, 0] = 1.0
    for m in range(1, n_max + 1):
        P[m, m] = (2 * m - 1) * cphi * P[m - 1, m - 1]
    for m in range(n_max):
        P[m + 1, m] = (2 * m + 1) * sphi * P[m, m]
    for m in range(n_max + 1):
        for n in range(m + 2, n_max + 1):
            P[n, m] = ((2 * n - 1) * sphi * P[n - 1, m]
                       - (n + m - 1) * P[n - 2, m]) / (n - m)
    for m in range(n_max + 1):
        for n in range(m, n_max + 1):
            prev = P[n - 1, m] if n - 1 >= m else 0.0
            dP[n, m] = ((n + m) * prev - n * sphi * P[n, m]) / cphi
    return P, dP


def _spherical(r_ecef: np.ndarray):
    x, y, z = r_ecef[:, 0], r_ecef[:, 1], r_ecef[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    if np.any(r == 0.0):
        raise ValueError("gravity evaluated at the origin")
    lam = np.arctan2(y, x)
    phi = np.arcsin(np.clip(z / r, -1.0, 1.0))
    return r, lam, phi


def gravity_potential(gm: GravityModel, r_ecef: np.ndarray) -> np.ndarray:
    """Gravity potential at Earth-fixed positions (k, 3)."""
    r_ecef = np.atleast_2d(np.asarray(r_ecef, dtype=float))
    r, lam, phi = _spherical(r_ecef)
    sphi, cphi = np.sin(phi), np.cos(phi)
    P, _ = _legendre_with_deriv(gm.n_max, sphi, cphi)
    ratio = gm.r_ref / r
    u = np.zeros_like(r)
    for n in range(gm.n_max + 1):
        rn = ratio ** n
        term = np.zeros_like(r)
        for m in range(n + 1):
            term += P[n, m] * (gm.c[n, m] * np.cos(m * lam)
                               + gm.s[n, m] * np.sin(m * lam))
        u += rn * term
    return gm.gm / r * u


def gravity_accel(gm: GravityModel, r_ecef: np.ndarray,
                  transform: np.ndarray | None = None) -> np.ndarray:
    """Acceleration from the truncated harmonic expansion (analytic gradient).

    ``r_ecef`` are Earth-fixed positions (k, 3); ``transform`` is the rotation
    mapping inertial to Earth-fixed coordinates, so the returned acceleration
    is expressed in the inertial frame (identity by default).
    """
    r_ecef = np.atleast_2d(np.asarray(r_ecef, dtype=float))
    r, lam, phi = _spherical(r_ecef)
    sphi, cphi = np.sin(phi), np.cos(phi)
    P, dP = _legendre_with_deriv(gm.n_max, sphi, cphi)
    ratio = gm.r_ref / r
    du_dr = np.zeros_like(r)
    du_dphi = np.zeros_like(r)
    du_dlam = np.zeros_like(r)
    for n in range(gm.n_max + 1):
        rn = ratio ** n
        tr = np.zeros_like(r)
        tphi = np.zeros_like(r)
        tlam = np.zeros_like(r)
        for m in range(n + 1):
            cosm = np.cos(m * lam)
            sinm = np.sin(m * lam)
            even = gm.c[n, m] * cosm + gm.s[n, m] * sinm
            tr += P[n, m] * even
            tphi += dP[n, m] * even
            if m:
                tlam += m * P[n, m] * (gm.s[n, m] * cosm - gm.c[n, m] * sinm)
        du_dr += -(n + 1) * rn * tr
        du_dphi += rn * tphi
        du_dlam += rn * tlam
    du_dr *= gm.gm / r ** 2
    du_dphi *= gm.gm / r
    du_dlam *= gm.gm / r

    clam, slam = np.cos(lam), np.sin(lam)
    e_r = np.stack([cphi * clam, cphi * slam, sphi], axis=1)
    e_phi = np.stack([-sphi * clam, -sphi * slam, cphi], axis=1)
    e_lam = np.stack([-slam, clam, np.zeros_like(lam)], axis=1)
    a_ecef = (du_dr[:, None] * e_r
              + (du_dphi / r)[:, None] * e_phi
              + (du_dlam / (r * cphi))[:, None] * e_lam)
    if transform is None:
        return a_ecef
    return a_ecef @ np.asarray(transform, dtype=float)


def third_body_accel(gm_body: float, r_body: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Relative (tidal) acceleration GM ((r_b - r)/|r_b - r|^3 - r_b/|r_b|^3)."""
    r = np.atleast_2d(np.asarray(r, dtype=float))
    r_body = np.asarray(r_body, dtype=float)
    body_norm = np.linalg.norm(r_body)
    if body_norm == 0.0:
        raise ValueError("third body at the origin")
    diff = r_body - r
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist == 0.0):
        raise ValueError("satellite coincides with the third body")
    return gm_body * (diff / dist[:, None] ** 3 - r_body / body_norm ** 3)


def srp_accel(alpha: float, au: float, r: np.ndarray, r_sun: np.ndarray) -> np.ndarray:
    """Solar radiation pressure -alpha (AU/d_sun)^2 e_sun, away from the Sun."""
    r = np.atleast_2d(np.asarray(r, dtype=float))
    to_sun = np.asarray(r_sun, dtype=float) - r
    dist = np.linalg.norm(to_sun, axis=1)
    if np.any(dist == 0.0):
        raise ValueError("satellite coincides with the Sun")
    return -alpha * (au / dist[:, None]) ** 2 * (to_sun / dist[:, None])


def rtn_basis(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Right-handed orthonormal radial/tangential/normal triad as matrix columns."""
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    rn = np.linalg.norm(r)
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    if rn == 0.0 or hn == 0.0:
        raise ValueError("RTN frame undefined: zero radius or radial velocity")
    e_r = r / rn
    e_n = h / hn
    e_t = np.cross(e_n, e_r)
    return np.stack([e_r, e_t, e_n], axis=1)


def rtn_matrix(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Batched RTN basis matrices, shape (k, 3, 3)."""
    r = np.atleast_2d(np.asarray(r, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    rn = np.linalg.norm(r, axis=1, keepdims=True)
    h = np.cross(r, v)
    hn = np.linalg.norm(h, axis=1, keepdims=True)
    if np.any(rn == 0.0) or np.any(hn == 0.0):
        raise ValueError("RTN frame undefined: zero radius or radial velocity")
    e_r = r / rn
    e_n = h / hn
    e_t = np.cross(e_n, e_r)
    return np.stack([e_r, e_t, e_n], axis=2)


def earth_rotation(t: float) -> np.ndarray:
    """Rotation mapping inertial to Earth-fixed coordinates at time t."""
    th = OMEGA_EARTH * t
    c, s = math.cos(th), math.sin(th)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def default_ephemeris(sun_phase: float = 0.0, moon_phase: float = 0.0) -> Callable:
    """Analytic circular Sun and Moon positions in the inertial frame."""
    eps = ECLIPTIC_OBLIQUITY

    def ephemeris(t: float):
        ls = 2.0 * math.pi * t / YEAR + sun_phase
        lm = 2.0 * math.pi * t / MOON_PERIOD + moon_phase
        r_sun = AU * np.array([math.cos(ls),
                               math.sin(ls) * math.cos(eps),
                               math.sin(ls) * math.sin(eps)])
        r_moon = MOON_DISTANCE * np.array([math.cos(lm),
                                           math.sin(lm) * math.cos(eps),
                                           math.sin(lm) * math.sin(eps)])
        return r_moon, r_sun

    return ephemeris


@dataclass(frozen=True)
class OrbitEnvironment:
    """Force environment for the satellite equation of motion.

    Third-body and SRP terms are disabled by zeroing the corresponding
    constants.  ``ephemeris(t)`` returns (moon, sun) inertial positions.
    """

    gravity: GravityModel
    gm_moon: float = GM_MOON
    gm_sun: float = GM_SUN
    ephemeris: Callable = field(default_factory=default_ephemeris)
    srp_alpha: float = 1e-7
    au: float = AU

    def __post_init__(self):
        r_moon, r_sun = self.ephemeris(0.0)
        if not (np.all(np.isfinite(r_moon)) and np.all(np.isfinite(r_sun))):
            raise ValueError("ephemeris returned non-finite positions")
        d_sun = float(np.linalg.norm(r_sun))
        if abs(d_sun - self.au) > 0.1 * self.au:
            raise ValueError(
                f"ephemeris Sun distance {d_sun:.3e} deviates more than 10% from AU")


def orbit_drift(env: OrbitEnvironment, x: np.ndarray, u_rtn: np.ndarray,
                t: float) -> np.ndarray:
    """Batched (dr/dt, dv/dt): gravity + Moon + Sun + SRP + RTN-mapped force."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = x[:, :3]
    v = x[:, 3:]
    T = earth_rotation(t)
    acc = gravity_accel(env.gravity, r @ T.T, T)
    r_moon, r_sun = env.ephemeris(t)
    if env.gm_moon > 0.0:
        acc = acc + third_body_accel(env.gm_moon, r_moon, r)
    if env.gm_sun > 0.0:
        acc = acc + third_body_accel(env.gm_sun, r_sun, r)
    if env.srp_alpha != 0.0:
        acc = acc + srp_accel(env.srp_alpha, env.au, r, r_sun)
    if u_rtn is not None and u_rtn.shape[1]:
        E = rtn_matrix(r, v)
        acc = acc + np.einsum("kij,kj->ki", E, u_rtn)
    return np.concatenate([v, acc], axis=1)


def _force_dispersion(x: np.ndarray, t: float) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros((x.shape[0], 6, 3))
    out[:, 3:, :] = rtn_matrix(x[:, :3], x[:, 3:])
    return out


def mechanistic(env: OrbitEnvironment) -> MechanisticModel:
    return MechanisticModel(
        dim_x=6,
        n_forces=3,
        drift=lambda x, u, t: orbit_drift(env, x, u, t),
        force_dispersion=_force_dispersion,
    )


def measurement(sigma_pos: float, sigma_vel: float) -> MeasurementModel:
    """Direct position/velocity observation with diagonal noise."""
    R = np.diag([sigma_pos ** 2] * 3 + [sigma_vel ** 2] * 3)
    return MeasurementModel(h=lambda X: X[:, :6], R=R)


def circular_orbit_state(sma: float, inclination: float, raan: float = 0.0,
                         arg_lat: float = 0.0, gm: float = GM_EARTH) -> np.ndarray:
    """Position/velocity of a circular orbit at the given argument of latitude."""
    speed = math.sqrt(gm / sma)
    ci, si = math.cos(inclination), math.sin(inclination)
    co, so = math.cos(raan), math.sin(raan)
    cu, su = math.cos(arg_lat), math.sin(arg_lat)
    # Perifocal unit vectors rotated by RAAN and inclination.
    p = np.array([co, so, 0.0])
    q = np.array([-so * ci, co * ci, si])
    r = sma * (cu * p + su * q)
    v = speed * (-su * p + cu * q)
    return np.concatenate([r, v])


def specific_energy(state: np.ndarray, gm: float = GM_EARTH) -> float:
    """Two-body specific orbital energy v^2/2 - GM/r."""
    state = np.asarray(state, dtype=float)
    r = np.linalg.norm(state[:3])
    v2 = float(state[3:] @ state[3:])
    return 0.5 * v2 - gm / r
