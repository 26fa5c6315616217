"""Scene state, seeding and the low-level substep plumbing.

A Scene owns the particle pool, materials, domain box, tools and boundary
settings.  Solvers (uniform and adaptive) drive the same kernel wrappers
defined here, which keeps their degenerate configurations bitwise
identical.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import CflError, SolverError
from .mpm import kernels
from .mpm.materials import MaterialTable
from .mpm.pool import ParticlePool
from .tools import pack_tools

_MODE_IDS = {"sticky": kernels.MODE_STICKY,
             "slip": kernels.MODE_SLIP,
             "separate": kernels.MODE_SEPARATE}

CFL_FACTOR = 0.3


@dataclass
class BoundaryConfig:
    """Domain wall handling: the floor carries friction, side walls slip."""
    floor_mode: str = "separate"
    floor_friction: float = 0.5
    wall_mode: str = "slip"
    wall_friction: float = 0.0


class Scene:
    def __init__(self, materials: MaterialTable, domain_extent, gravity,
                 dt, capacity, seed=0, boundary=None, tools=None,
                 dtype=np.float64, restructure_threshold=8192):
        self.materials = materials
        self.domain_lo = np.zeros(3)
        self.domain_hi = np.asarray(domain_extent, dtype=np.float64).copy()
        self.gravity = np.asarray(gravity, dtype=np.float64).copy()
        self.dt = float(dt)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.boundary = boundary or BoundaryConfig()
        self.tools = list(tools) if tools else []
        self.pool = ParticlePool(capacity, dtype=self.dtype,
                                 restructure_threshold=restructure_threshold)
        self.t = 0.0
        self.substeps_done = 0
        self.v_max = 0.0
        self.stats = {"splits": 0, "merges": 0, "relabels": 0,
                      "max_alive": 0, "clamped_actions": 0}

    # ------------------------------------------------------------------
    def check_cfl(self, finest_cell):
        c = self.materials.max_wave_speed()
        bound = CFL_FACTOR * finest_cell / (c + self.v_max)
        if self.dt > bound * (1.0 + 1e-12):
            raise CflError(
                f"substep dt={self.dt:g}s exceeds the stability bound "
                f"{bound:g}s (cell {finest_cell:g} m, wave speed {c:g} m/s, "
                f"max particle speed {self.v_max:g} m/s)")

    def refresh_vmax(self):
        self.v_max = self.pool.max_speed()

    def refresh_stress(self, indices=None):
        """Recompute cached stresses from current deformation gradients."""
        pool = self.pool
        idx = pool.alive_indices() if indices is None else np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            return
        n_blk = (idx.size + kernels.BLOCK - 1) // kernels.BLOCK
        bad = np.empty(n_blk, dtype=np.int64)
        kernels.refresh_stress(idx, pool.F, pool.plastic, pool.tau,
                               pool.material, self.materials.rows, bad)
        worst = bad[bad >= 0]
        if worst.size:
            raise SolverError("non-invertible deformation gradient at seeding",
                              particle_index=int(worst.min()))

    def total_mass(self):
        return self.pool.total_mass()

    def total_momentum(self):
        return self.pool.total_momentum()

    def kinetic_energy(self):
        pool = self.pool
        a = pool.alive[:pool.count]
        v = pool.v[:pool.count][a]
        m = pool.mass[:pool.count][a]
        return float(0.5 * (m * (v * v).sum(axis=1)).sum())

    def note_alive(self):
        self.stats["max_alive"] = max(self.stats["max_alive"], self.pool.n_alive)


# ----------------------------------------------------------------------
# kernel wrappers shared by both solvers

def run_p2g(grid, scene, idx, dt):
    """Bin particles and populate one grid level's mass/momentum."""
    pool = scene.pool
    order = np.empty(idx.size, dtype=np.int64)
    ox, oy, oz = (int(v) for v in grid.origin_cells)
    d0, d1, d2 = grid.dims
    n_bad = kernels.bin_by_base(pool.x, idx, grid.inv_cell, ox, oy, oz,
                                d0, d1, d2, grid._starts, order)
    if n_bad:
        raise SolverError(
            f"{n_bad} particle(s) have stencils outside the grid; "
            "resampling or recentering should have prevented this")
    kernels.p2g_gather(grid.m, grid.mom, pool.x, pool.v, pool.mass, pool.vol0,
                       pool.C, pool.tau, idx, order, grid._starts,
                       grid.inv_cell, grid.cell, ox, oy, oz, dt)


def run_grid_update(grid, scene, packed, dt):
    """Grid dynamics + boundary projection; returns per-tool impulses."""
    b = scene.boundary
    ox, oy, oz = (int(v) for v in grid.origin_cells)
    n_blocks = (grid.node_count + kernels.BLOCK - 1) // kernels.BLOCK
    nt = packed["pos"].shape[0]
    reaction = np.zeros((n_blocks, nt, 3))
    kernels.grid_update(
        grid.m, grid.mom, grid.v,
        scene.gravity[0], scene.gravity[1], scene.gravity[2], dt,
        ox, oy, oz, grid.cell,
        scene.domain_lo, scene.domain_hi,
        _MODE_IDS[b.floor_mode], b.floor_friction,
        _MODE_IDS[b.wall_mode], b.wall_friction,
        packed["pos"], packed["rot"], packed["lin"], packed["ang"],
        packed["mu"], packed["mode"], packed["aabb_lo"], packed["aabb_hi"],
        packed["prim_tool"], packed["prim_kind"], packed["prim_param"],
        packed["prim_pos"], packed["prim_rot"],
        0.5 * grid.cell, reaction)
    # reduce node blocks in order: deterministic per-tool impulse
    return reaction.sum(axis=0)


def run_g2p(grid, scene, idx, dt, advect=True):
    """Fused gather/advect/material update; returns the max particle speed."""
    pool = scene.pool
    ox, oy, oz = (int(v) for v in grid.origin_cells)
    n_blk = max(1, (idx.size + kernels.BLOCK - 1) // kernels.BLOCK)
    block_vmax2 = np.zeros(n_blk)
    block_bad = np.full(n_blk, -1, dtype=np.int64)
    if idx.size:
        kernels.g2p_update(grid.v, pool.x, pool.v, pool.C, pool.F, pool.tau,
                           pool.plastic, pool.material, idx,
                           grid.inv_cell, grid.cell, ox, oy, oz, dt,
                           scene.domain_lo, scene.domain_hi,
                           scene.materials.rows, advect,
                           block_vmax2, block_bad)
    worst = block_bad[block_bad >= 0]
    if worst.size:
        p = int(worst.min())
        raise SolverError(
            f"solver diverged at particle {p} (NaN stress or inverted "
            "deformation gradient)", particle_index=p)
    return math.sqrt(float(block_vmax2.max()))


def log_reactions(scene, impulses, dt):
    for tool, imp in zip(scene.tools, impulses):
        tool.last_impulse = imp.copy()
        tool.reaction_impulse += imp


def packed_tools_for(scene, margin):
    return pack_tools(scene.tools, band_margin=margin)


# ----------------------------------------------------------------------
# material bodies and seeding

class BoxBody:
    """Axis-aligned box of material; optionally gravity-precompressed."""

    def __init__(self, lo, hi, material, prestress=False):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if np.any(self.hi <= self.lo):
            raise ValueError("box body needs hi > lo on every axis")
        self.material = material
        self.prestress = prestress

    def bbox(self):
        return self.lo, self.hi

    def contains(self, pts):
        return np.all((pts >= self.lo) & (pts < self.hi), axis=1)

    def surface_z(self, pts):
        return np.full(pts.shape[0], self.hi[2])


class HeapBody:
    """Paraboloid mound sitting on a base plane (protrusions, piles)."""

    def __init__(self, center, radius, height, base_z, material, prestress=False):
        self.center = np.asarray(center[:2], dtype=np.float64)
        self.radius = float(radius)
        self.height = float(height)
        self.base_z = float(base_z)
        self.material = material
        self.prestress = prestress

    def bbox(self):
        lo = np.array([self.center[0] - self.radius, self.center[1] - self.radius,
                       self.base_z])
        hi = np.array([self.center[0] + self.radius, self.center[1] + self.radius,
                       self.base_z + self.height])
        return lo, hi

    def _cap(self, pts):
        r2 = ((pts[:, 0] - self.center[0]) ** 2
              + (pts[:, 1] - self.center[1]) ** 2) / (self.radius ** 2)
        return self.base_z + self.height * np.maximum(0.0, 1.0 - r2)

    def contains(self, pts):
        return (pts[:, 2] >= self.base_z) & (pts[:, 2] < self._cap(pts))

    def surface_z(self, pts):
        return self._cap(pts)


def _subcell_centers(lo, hi, cell, level_origin=0.0):
    """Centers of half-cell subcells on the global lattice inside [lo, hi)."""
    half = cell / 2.0
    i0 = np.floor((lo - half / 2.0) / half).astype(np.int64)
    i1 = np.ceil((hi) / half).astype(np.int64)
    axes = [(np.arange(i0[a], i1[a]) + 0.5) * half for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def seed_bodies(scene, bodies, level_of=None, levels_cells=None, count_only=False):
    """Seed 8 particles per cell of each region's grid level.

    ``level_of`` maps positions to level indices (None = uniform level 0);
    ``levels_cells`` lists the cell size per level.  Returns the number of
    particles seeded (or that would be seeded with ``count_only``).
    """
    if levels_cells is None:
        raise ValueError("levels_cells is required")
    g_mag = float(abs(scene.gravity[2]))
    total = 0
    for body in bodies:
        mat_id = scene.materials.id_of(body.material)
        params = scene.materials.params[mat_id]
        lo, hi = body.bbox()
        lo = np.maximum(lo, scene.domain_lo)
        hi = np.minimum(hi, scene.domain_hi)
        if np.any(hi <= lo):
            continue
        for lvl, cell in enumerate(levels_cells):
            pts = _subcell_centers(lo, hi, cell)
            if pts.size == 0:
                continue
            keep = body.contains(pts)
            keep &= np.all((pts >= scene.domain_lo) & (pts < scene.domain_hi), axis=1)
            if level_of is None:
                if lvl != 0:
                    keep[:] = False
            else:
                keep &= level_of(pts) == lvl
            pts = pts[keep]
            n = pts.shape[0]
            if n == 0:
                continue
            total += n
            if count_only:
                continue
            vol = (cell / 2.0) ** 3
            mass = params.rho * vol
            F = np.tile(np.eye(3), (n, 1, 1))
            if body.prestress and g_mag > 0.0:
                depth = np.maximum(body.surface_z(pts) - pts[:, 2], 0.0)
                stiff = 2.0 * params.mu0 + params.lambda0
                squeeze = np.clip(1.0 - params.rho * g_mag * depth / stiff, 0.6, 1.0)
                F[:, 2, 2] = squeeze
            scene.pool.append_block(
                n, pts, np.zeros((n, 3)), F, np.zeros((n, 3, 3)),
                np.full(n, mass), np.full(n, vol), np.full(n, params.initial_plastic()),
                np.full(n, mat_id, dtype=np.int32), np.full(n, lvl, dtype=np.int32))
    if not count_only and total:
        scene.refresh_stress()
        scene.note_alive()
    return total


def settle(solver, tol=2.5e-4, max_substeps=4000, damping=0.002, check_every=25):
    """Run substeps until the material rests, then freeze velocities.

    A mild per-substep velocity damping accelerates ring-down during this
    preparation phase only; the dynamic phases never damp.
    """
    scene = solver.scene
    pool = scene.pool
    steps = 0
    while steps < max_substeps:
        for _ in range(check_every):
            solver.substep()
            steps += 1
            if damping:
                sl = slice(0, pool.count)
                pool.v[sl] *= (1.0 - damping)
        if pool.max_speed() < tol:
            break
    a = pool.alive[:pool.count]
    pool.v[:pool.count][a] = 0.0
    pool.C[:pool.count][a] = 0.0
    scene.v_max = 0.0
    return steps
