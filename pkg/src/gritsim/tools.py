"""Kinematic rigid tools as analytic signed-distance fields.

A tool is a min-union of posed primitives (sphere / box / capsule /
cylinder).  Tools follow commanded pose deltas; coupling with the material
happens through grid-node velocity projection, and the momentum a tool
removes from the grid is logged as a reaction impulse.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .mpm import kernels

_MODE_IDS = {"sticky": kernels.MODE_STICKY,
             "slip": kernels.MODE_SLIP,
             "separate": kernels.MODE_SEPARATE}
_PRIM_IDS = {"sphere": kernels.PRIM_SPHERE,
             "box": kernels.PRIM_BOX,
             "capsule": kernels.PRIM_CAPSULE,
             "cylinder": kernels.PRIM_CYLINDER}


def rotation_from_rotvec(rv):
    """Rodrigues formula; rv is an angle-axis vector in radians."""
    rv = np.asarray(rv, dtype=np.float64)
    angle = np.linalg.norm(rv)
    if angle < 1e-12:
        return np.eye(3)
    ax = rv / angle
    K = np.array([[0.0, -ax[2], ax[1]],
                  [ax[2], 0.0, -ax[0]],
                  [-ax[1], ax[0], 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def _orthonormalize(R):
    u, _, vt = np.linalg.svd(R)
    Q = u @ vt
    if np.linalg.det(Q) < 0:
        u[:, 2] = -u[:, 2]
        Q = u @ vt
    return Q


@dataclass
class SdfPrimitive:
    kind: str
    params: tuple           # sphere: (r,); box: (hx, hy, hz); capsule/cylinder: (r, half_height)
    offset: tuple = (0.0, 0.0, 0.0)
    rotation: np.ndarray = None

    def __post_init__(self):
        if self.kind not in _PRIM_IDS:
            raise ConfigError(f"unknown primitive kind {self.kind!r}")
        want = {"sphere": 1, "box": 3, "capsule": 2, "cylinder": 2}[self.kind]
        if len(self.params) != want:
            raise ConfigError(
                f"{self.kind} takes {want} shape parameter(s), got {len(self.params)}")
        if any(p <= 0 for p in self.params):
            raise ConfigError(f"{self.kind} shape parameters must be positive")
        if self.rotation is None:
            self.rotation = np.eye(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)

    def packed_params(self):
        p = np.zeros(3)
        p[:len(self.params)] = self.params
        return p

    def bounding_radius(self):
        if self.kind == "sphere":
            r = self.params[0]
        elif self.kind == "box":
            r = float(np.linalg.norm(self.params))
        elif self.kind == "capsule":
            r = self.params[0] + self.params[1]
        else:
            r = math.hypot(self.params[0], self.params[1])
        return r + float(np.linalg.norm(self.offset))


class Tool:
    def __init__(self, primitives, position=(0.0, 0.0, 0.0), rotation=None,
                 friction=0.0, mode="separate", name="tool"):
        if not primitives:
            raise ConfigError("a tool needs at least one primitive")
        if len(primitives) > 6:
            raise ConfigError("tools are unions of at most 6 primitives")
        if friction < 0:
            raise ConfigError("tool friction must be >= 0")
        if mode not in _MODE_IDS:
            raise ConfigError(f"unknown boundary mode {mode!r}")
        self.name = name
        self.primitives = list(primitives)
        self.position = np.asarray(position, dtype=np.float64).copy()
        self.rotation = np.eye(3) if rotation is None else _orthonormalize(np.asarray(rotation, dtype=np.float64))
        self.lin_vel = np.zeros(3)
        self.ang_vel = np.zeros(3)
        self.friction = float(friction)
        self.mode = mode
        self.reaction_impulse = np.zeros(3)   # cumulative over the run
        self.last_impulse = np.zeros(3)       # most recent substep
        self.clamped_actions = 0

    # ------------------------------------------------------------------
    def bounding_radius(self):
        return max(p.bounding_radius() for p in self.primitives)

    def aabb(self, margin):
        r = self.bounding_radius() + margin
        return self.position - r, self.position + r

    def velocity_at(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.lin_vel + np.cross(self.ang_vel, x - self.position)

    def sdf_query(self, x):
        """Signed distance and unit outward normal at a world point."""
        x = np.asarray(x, dtype=np.float64)
        packed = pack_tools([self])
        dist, nx, ny, nz = _sdf_query_one(
            float(x[0]), float(x[1]), float(x[2]),
            packed["pos"], packed["rot"], packed["prim_tool"],
            packed["prim_kind"], packed["prim_param"],
            packed["prim_pos"], packed["prim_rot"])
        return float(dist), np.array([nx, ny, nz])

    def script_move(self, action, dt, clamp=None):
        """Apply a pose-delta action over dt; velocities follow the delta.

        Oversized actions are clamped componentwise (not an error) and
        counted.  Supports 3 (translation) or 6 (plus rotation-vector)
        dimensional actions.
        """
        a = np.asarray(action, dtype=np.float64).copy()
        if a.shape[0] not in (3, 6):
            raise ConfigError("tool actions must have dimension 3 or 6")
        if clamp is not None:
            c = np.broadcast_to(np.asarray(clamp, dtype=np.float64), a.shape)
            clipped = np.clip(a, -c, c)
            if not np.array_equal(clipped, a):
                self.clamped_actions += 1
            a = clipped
        self.position += a[:3]
        self.lin_vel = a[:3] / dt
        if a.shape[0] == 6:
            self.rotation = _orthonormalize(rotation_from_rotvec(a[3:]) @ self.rotation)
            self.ang_vel = a[3:] / dt
        else:
            self.ang_vel = np.zeros(3)
        return a

    def hold_still(self):
        self.lin_vel = np.zeros(3)
        self.ang_vel = np.zeros(3)


def _sdf_query_one(wx, wy, wz, pos, rot, prim_tool, prim_kind, prim_param,
                   prim_pos, prim_rot):
    return kernels.tool_sdf(0, wx, wy, wz, pos, rot, prim_tool, prim_kind,
                            prim_param, prim_pos, prim_rot)


def pack_tools(tools, band_margin=0.0):
    """Pack a tool list into the flat arrays the grid kernel consumes."""
    nt = len(tools)
    n_prims = sum(len(t.primitives) for t in tools)
    out = {
        "pos": np.zeros((nt, 3)),
        "rot": np.zeros((nt, 3, 3)),
        "lin": np.zeros((nt, 3)),
        "ang": np.zeros((nt, 3)),
        "mu": np.zeros(nt),
        "mode": np.zeros(nt, dtype=np.int64),
        "aabb_lo": np.zeros((nt, 3)),
        "aabb_hi": np.zeros((nt, 3)),
        "prim_tool": np.zeros(n_prims, dtype=np.int64),
        "prim_kind": np.zeros(n_prims, dtype=np.int64),
        "prim_param": np.zeros((n_prims, 3)),
        "prim_pos": np.zeros((n_prims, 3)),
        "prim_rot": np.zeros((n_prims, 3, 3)),
    }
    q = 0
    for t_id, tool in enumerate(tools):
        out["pos"][t_id] = tool.position
        out["rot"][t_id] = tool.rotation
        out["lin"][t_id] = tool.lin_vel
        out["ang"][t_id] = tool.ang_vel
        out["mu"][t_id] = tool.friction
        out["mode"][t_id] = _MODE_IDS[tool.mode]
        lo, hi = tool.aabb(band_margin)
        out["aabb_lo"][t_id] = lo
        out["aabb_hi"][t_id] = hi
        for prim in tool.primitives:
            out["prim_tool"][q] = t_id
            out["prim_kind"][q] = _PRIM_IDS[prim.kind]
            out["prim_param"][q] = prim.packed_params()
            out["prim_pos"][q] = prim.offset
            out["prim_rot"][q] = prim.rotation
            q += 1
    return out
