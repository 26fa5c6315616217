"""Material parameters and constitutive updates.

Three material kinds are supported:

* elastic     - fixed corotated hyperelasticity, no plastic flow
* sand        - fixed corotated elasticity with a cohesionless
                Drucker-Prager projection of the Hencky strain
* snow        - fixed corotated elasticity with singular-value clamping,
                plastic volume tracking and exponential hardening

The scalar helpers are written against unpacked floats so the solver's
fused particle kernel keeps everything in registers; array wrappers are
provided for direct use and testing.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..errors import ConfigError
from .svd3 import svd3

MATERIAL_ELASTIC = 0
MATERIAL_SAND = 1
MATERIAL_SNOW = 2

_KIND_NAMES = {"elastic": MATERIAL_ELASTIC, "sand": MATERIAL_SAND, "snow": MATERIAL_SNOW}

# packed material table columns
COL_KIND = 0
COL_MU = 1
COL_LAMBDA = 2
COL_RHO = 3
COL_CONE = 4      # Drucker-Prager cone coefficient (from friction angle)
COL_THETA_C = 5   # snow compression clamp
COL_THETA_S = 6   # snow stretch clamp
COL_XI = 7        # snow hardening coefficient
COL_E = 8
COL_NU = 9
TABLE_COLS = 10


def cone_coefficient(friction_angle_deg):
    """Cohesionless Drucker-Prager cone slope from a friction angle in degrees."""
    sin_phi = math.sin(math.radians(friction_angle_deg))
    return math.sqrt(2.0 / 3.0) * 2.0 * sin_phi / (3.0 - sin_phi)


@dataclass(frozen=True)
class MaterialParams:
    """Constitutive constants for one named material.

    ``mu0``/``lambda0`` are always derived from ``(E, nu)`` so the pair can
    never drift out of sync with the engineering constants.
    """

    kind: str
    E: float
    nu: float
    rho: float
    friction_angle: float = 45.0
    theta_c: float = 2.5e-2
    theta_s: float = 7.5e-3
    xi: float = 10.0
    mu0: float = field(init=False)
    lambda0: float = field(init=False)

    def __post_init__(self):
        errors = []
        if self.kind not in _KIND_NAMES:
            errors.append(f"material kind must be one of {sorted(_KIND_NAMES)}, got {self.kind!r}")
        if not self.E > 0:
            errors.append(f"E must be > 0, got {self.E}")
        if not (0.0 <= self.nu < 0.5):
            errors.append(f"nu must lie in [0, 0.5), got {self.nu}")
        if not self.rho > 0:
            errors.append(f"rho must be > 0, got {self.rho}")
        if errors:
            raise ConfigError(errors)
        object.__setattr__(self, "mu0", self.E / (2.0 * (1.0 + self.nu)))
        object.__setattr__(self, "lambda0",
                           self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu)))

    @property
    def kind_id(self):
        return _KIND_NAMES[self.kind]

    @property
    def wave_speed(self):
        """Elastic wave speed sqrt(E/rho) used by the stability bound."""
        return math.sqrt(self.E / self.rho)

    def initial_plastic(self):
        """Initial value of the scalar plastic channel (Jp for snow)."""
        return 1.0 if self.kind == "snow" else 0.0

    def table_row(self):
        row = np.zeros(TABLE_COLS)
        row[COL_KIND] = self.kind_id
        row[COL_MU] = self.mu0
        row[COL_LAMBDA] = self.lambda0
        row[COL_RHO] = self.rho
        row[COL_CONE] = cone_coefficient(self.friction_angle)
        row[COL_THETA_C] = self.theta_c
        row[COL_THETA_S] = self.theta_s
        row[COL_XI] = self.xi
        row[COL_E] = self.E
        row[COL_NU] = self.nu
        return row


class MaterialTable:
    """Name -> id mapping plus the packed parameter array kernels consume."""

    def __init__(self, named_params):
        self.names = []
        self.params = []
        for name, p in named_params:
            self.names.append(name)
            self.params.append(p)
        if not self.params:
            raise ConfigError("material table must contain at least one material")
        self.rows = np.stack([p.table_row() for p in self.params])
        self._ids = {n: i for i, n in enumerate(self.names)}

    def id_of(self, name):
        if name not in self._ids:
            raise ConfigError(f"unknown material {name!r}; known: {sorted(self._ids)}")
        return self._ids[name]

    def __getitem__(self, name):
        return self.params[self.id_of(name)]

    def max_wave_speed(self):
        return max(p.wave_speed for p in self.params)


@njit(cache=True, inline="always")
def dp_hencky_project(e0, e1, e2, cone, mu, lam):
    """Project a trial Hencky strain 3-vector onto the Drucker-Prager cone.

    Returns the projected strain plus the log-volume discarded by an apex
    projection (zero for the elastic and deviatoric-scaling cases).
    """
    tr = e0 + e1 + e2
    if tr > 0.0:
        # cohesionless material admits no tension: project to the apex
        return 0.0, 0.0, 0.0, tr
    m = tr / 3.0
    d0 = e0 - m
    d1 = e1 - m
    d2 = e2 - m
    dn = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    dg = dn + cone * tr * (3.0 * lam + 2.0 * mu) / (2.0 * mu)
    if dg <= 0.0:
        return e0, e1, e2, 0.0
    k = dg / dn
    return e0 - k * d0, e1 - k * d1, e2 - k * d2, 0.0


@njit(cache=True, inline="always")
def snow_clamp(s0, s1, s2, jp, theta_c, theta_s):
    """Clamp singular values into the snow elastic region, moving volume to Jp."""
    lo = 1.0 - theta_c
    hi = 1.0 + theta_s
    c0 = min(max(s0, lo), hi)
    c1 = min(max(s1, lo), hi)
    c2 = min(max(s2, lo), hi)
    jp_new = jp * (s0 * s1 * s2) / (c0 * c1 * c2)
    return c0, c1, c2, jp_new


@njit(cache=True, inline="always")
def corotated_kirchhoff(f00, f01, f02, f10, f11, f12, f20, f21, f22,
                        r00, r01, r02, r10, r11, r12, r20, r21, r22,
                        jdet, mu, lam):
    """Kirchhoff stress tau = P(F) F^T of the fixed corotated model.

    P(F) = 2 mu (F - R) + lam (J - 1) J F^{-T}; the volumetric term
    collapses to lam (J - 1) J I after multiplying by F^T.
    """
    vol = lam * (jdet - 1.0) * jdet
    t00 = 2.0 * mu * ((f00 - r00) * f00 + (f01 - r01) * f01 + (f02 - r02) * f02) + vol
    t01 = 2.0 * mu * ((f00 - r00) * f10 + (f01 - r01) * f11 + (f02 - r02) * f12)
    t02 = 2.0 * mu * ((f00 - r00) * f20 + (f01 - r01) * f21 + (f02 - r02) * f22)
    t10 = 2.0 * mu * ((f10 - r10) * f00 + (f11 - r11) * f01 + (f12 - r12) * f02)
    t11 = 2.0 * mu * ((f10 - r10) * f10 + (f11 - r11) * f11 + (f12 - r12) * f12) + vol
    t12 = 2.0 * mu * ((f10 - r10) * f20 + (f11 - r11) * f21 + (f12 - r12) * f22)
    t20 = 2.0 * mu * ((f20 - r20) * f00 + (f21 - r21) * f01 + (f22 - r22) * f02)
    t21 = 2.0 * mu * ((f20 - r20) * f10 + (f21 - r21) * f11 + (f22 - r22) * f12)
    t22 = 2.0 * mu * ((f20 - r20) * f20 + (f21 - r21) * f21 + (f22 - r22) * f22) + vol
    return t00, t01, t02, t10, t11, t12, t20, t21, t22


@njit(cache=True, inline="always")
def material_update(kind, f00, f01, f02, f10, f11, f12, f20, f21, f22,
                    plastic, cone, theta_c, theta_s, xi, mu0, lam0):
    """Return map plus Kirchhoff stress for one particle.

    Takes the trial deformation gradient, returns the projected gradient,
    the updated plastic channel, the stress tau and the determinant of the
    projected gradient (<= 0 signals inversion to the caller).
    """
    (u00, u01, u02, u10, u11, u12, u20, u21, u22,
     s0, s1, s2,
     v00, v01, v02, v10, v11, v12, v20, v21, v22) = svd3(
        f00, f01, f02, f10, f11, f12, f20, f21, f22)

    mu = mu0
    lam = lam0

    if kind == MATERIAL_SAND:
        if s2 <= 0.0:
            return (f00, f01, f02, f10, f11, f12, f20, f21, f22, plastic,
                    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0)
        e0 = np.log(s0)
        e1 = np.log(s1)
        e2 = np.log(s2)
        h0, h1, h2, dvol = dp_hencky_project(e0, e1, e2, cone, mu, lam)
        plastic = plastic + dvol
        s0 = np.exp(h0)
        s1 = np.exp(h1)
        s2 = np.exp(h2)
    elif kind == MATERIAL_SNOW:
        if s2 <= 0.0:
            return (f00, f01, f02, f10, f11, f12, f20, f21, f22, plastic,
                    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0)
        s0, s1, s2, plastic = snow_clamp(s0, s1, s2, plastic, theta_c, theta_s)
        h = np.exp(min(xi * (1.0 - plastic), 30.0))
        mu = mu0 * h
        lam = lam0 * h

    if kind == MATERIAL_ELASTIC:
        g00, g01, g02 = f00, f01, f02
        g10, g11, g12 = f10, f11, f12
        g20, g21, g22 = f20, f21, f22
    else:
        # rebuild F = U diag(s) V^T from the projected singular values
        g00 = u00 * s0 * v00 + u01 * s1 * v01 + u02 * s2 * v02
        g01 = u00 * s0 * v10 + u01 * s1 * v11 + u02 * s2 * v12
        g02 = u00 * s0 * v20 + u01 * s1 * v21 + u02 * s2 * v22
        g10 = u10 * s0 * v00 + u11 * s1 * v01 + u12 * s2 * v02
        g11 = u10 * s0 * v10 + u11 * s1 * v11 + u12 * s2 * v12
        g12 = u10 * s0 * v20 + u11 * s1 * v21 + u12 * s2 * v22
        g20 = u20 * s0 * v00 + u21 * s1 * v01 + u22 * s2 * v02
        g21 = u20 * s0 * v10 + u21 * s1 * v11 + u22 * s2 * v12
        g22 = u20 * s0 * v20 + u21 * s1 * v21 + u22 * s2 * v22

    jdet = s0 * s1 * s2
    r00 = u00 * v00 + u01 * v01 + u02 * v02
    r01 = u00 * v10 + u01 * v11 + u02 * v12
    r02 = u00 * v20 + u01 * v21 + u02 * v22
    r10 = u10 * v00 + u11 * v01 + u12 * v02
    r11 = u10 * v10 + u11 * v11 + u12 * v12
    r12 = u10 * v20 + u11 * v21 + u12 * v22
    r20 = u20 * v00 + u21 * v01 + u22 * v02
    r21 = u20 * v10 + u21 * v11 + u22 * v12
    r22 = u20 * v20 + u21 * v21 + u22 * v22

    (t00, t01, t02, t10, t11, t12, t20, t21, t22) = corotated_kirchhoff(
        g00, g01, g02, g10, g11, g12, g20, g21, g22,
        r00, r01, r02, r10, r11, r12, r20, r21, r22,
        jdet, mu, lam)

    return (g00, g01, g02, g10, g11, g12, g20, g21, g22, plastic,
            t00, t01, t02, t10, t11, t12, t20, t21, t22, jdet)


@njit(cache=True)
def material_update_batch(kinds, F, plastic, table, out_F, out_plastic, out_tau, out_j):
    n = F.shape[0]
    for i in range(n):
        row = table[kinds[i]]
        (g00, g01, g02, g10, g11, g12, g20, g21, g22, pl,
         t00, t01, t02, t10, t11, t12, t20, t21, t22, jdet) = material_update(
            int(row[COL_KIND]),
            F[i, 0, 0], F[i, 0, 1], F[i, 0, 2],
            F[i, 1, 0], F[i, 1, 1], F[i, 1, 2],
            F[i, 2, 0], F[i, 2, 1], F[i, 2, 2],
            plastic[i], row[COL_CONE], row[COL_THETA_C], row[COL_THETA_S],
            row[COL_XI], row[COL_MU], row[COL_LAMBDA])
        out_F[i, 0, 0], out_F[i, 0, 1], out_F[i, 0, 2] = g00, g01, g02
        out_F[i, 1, 0], out_F[i, 1, 1], out_F[i, 1, 2] = g10, g11, g12
        out_F[i, 2, 0], out_F[i, 2, 1], out_F[i, 2, 2] = g20, g21, g22
        out_plastic[i] = pl
        out_tau[i, 0, 0], out_tau[i, 0, 1], out_tau[i, 0, 2] = t00, t01, t02
        out_tau[i, 1, 0], out_tau[i, 1, 1], out_tau[i, 1, 2] = t10, t11, t12
        out_tau[i, 2, 0], out_tau[i, 2, 1], out_tau[i, 2, 2] = t20, t21, t22
        out_j[i] = jdet


def _single_update(kind_id, F, plastic, params):
    kinds = np.full(1, 0, dtype=np.int32)
    table = params.table_row().reshape(1, -1)
    table[0, COL_KIND] = kind_id
    Fs = np.ascontiguousarray(F, dtype=np.float64).reshape(1, 3, 3)
    pl = np.array([plastic], dtype=np.float64)
    out_F = np.empty((1, 3, 3))
    out_pl = np.empty(1)
    out_tau = np.empty((1, 3, 3))
    out_j = np.empty(1)
    material_update_batch(kinds, Fs, pl, table, out_F, out_pl, out_tau, out_j)
    return out_F[0], out_pl[0], out_tau[0], out_j[0]


def fixed_corotated_kirchhoff(F, params):
    """Kirchhoff stress tau = P(F) F^T of the fixed corotated model (J-scaled Cauchy)."""
    out_F, _, tau, jdet = _single_update(MATERIAL_ELASTIC, F, 0.0, params)
    if jdet <= 0.0 or not np.isfinite(jdet):
        raise ValueError("deformation gradient is not invertible")
    return tau


def drucker_prager_return_map(F_trial, hardening, params):
    """Sand return map: projects F's Hencky strain onto the friction cone.

    Returns (F, updated hardening accumulator).
    """
    out_F, pl, _, jdet = _single_update(MATERIAL_SAND, F_trial, hardening, params)
    if jdet <= 0.0:
        raise ValueError("trial deformation gradient has non-positive determinant")
    return out_F, pl


def snow_return_map(F_trial, jp, params):
    """Snow return map: clamps singular values and books the volume into Jp.

    Returns (F, updated Jp).
    """
    if jp <= 0.0:
        raise ValueError("snow plastic volume ratio must stay positive")
    out_F, pl, _, jdet = _single_update(MATERIAL_SNOW, F_trial, jp, params)
    if jdet <= 0.0:
        raise ValueError("trial deformation gradient has non-positive determinant")
    return out_F, pl
