"""Spatially adaptive solver: per-level transfers with ghost-band seams.

Each particle scatters to and gathers from exactly one level (its own).
Additionally, particles within a few cells of a level seam scatter as
ghosts into the neighboring level so every grid sees complete mass,
momentum and stress around the seam; this is what keeps a resting bed
quiet across level boundaries.
"""

import numpy as np

from .. import engine
from ..errors import ConfigError
from .hierarchy import HierarchicalGrid
from .resample import resample


class AdaptiveSolver:
    def __init__(self, scene, hierarchy: HierarchicalGrid):
        self.scene = scene
        self.hierarchy = hierarchy
        if not hierarchy.covers(scene.domain_lo, scene.domain_hi):
            raise ConfigError(
                f"outermost cube (half-width {hierarchy.outer_half_width} m) "
                f"does not cover the domain extent "
                f"{tuple(scene.domain_hi - scene.domain_lo)}")
        self._idx = None
        self._idx_version = -1

    @property
    def finest_cell(self):
        return self.hierarchy.finest_cell

    @property
    def grid(self):
        """Finest level (degenerate single-level hierarchies expose it)."""
        return self.hierarchy.levels[0]

    def alive(self):
        if self._idx_version != self.scene.pool.version:
            self._idx = self.scene.pool.alive_indices()
            self._idx_version = self.scene.pool.version
        return self._idx

    def _level_lists(self, idx):
        """Per-level (scatter list, gather list) in pool order.

        Scatter lists add the ghost bands: particles within 3 coarse cells
        outside a cube feed the finer grid, particles within 3 of-their-
        level cells inside a seam feed the coarser grid.
        """
        hier = self.hierarchy
        pool = self.scene.pool
        k = hier.half_cells
        d = np.max(np.abs(pool.x[idx] - hier.center), axis=1)
        lev = pool.level[idx]
        lists = []
        for j in range(hier.n_levels):
            own = lev == j
            if hier.n_levels == 1:
                lists.append((idx, idx))
                break
            ghost = (~own) & (d <= (k + 3) * hier.cells[j])
            if j > 0:
                ghost &= d >= (k - 6) * hier.cells[j - 1]
            lists.append((idx[own | ghost], idx[own]))
        return lists

    def substep(self):
        scene = self.scene
        hier = self.hierarchy
        scene.check_cfl(hier.finest_cell)
        dt = scene.dt
        idx = self.alive()
        lists = self._level_lists(idx)
        packed = engine.packed_tools_for(scene, margin=2.0 * hier.coarsest_cell)

        for j, lvl in enumerate(hier.levels):
            engine.run_p2g(lvl, scene, lists[j][0], dt)

        impulses = None
        for lvl in hier.levels:
            imp = engine.run_grid_update(lvl, scene, packed, dt)
            impulses = imp if impulses is None else impulses + imp

        vmax = 0.0
        for j, lvl in enumerate(hier.levels):
            vmax = max(vmax, engine.run_g2p(lvl, scene, lists[j][1], dt))

        engine.log_reactions(scene, impulses, dt)
        scene.v_max = vmax
        scene.t += dt
        scene.substeps_done += 1

    def run(self, n_substeps):
        for _ in range(n_substeps):
            self.substep()

    def control_tick(self, agent_pos):
        """Once per control step: follow the agent and resample.

        Returns True when the grid center moved.
        """
        moved = self.hierarchy.recenter(agent_pos)
        resample(self.scene, self.hierarchy)
        return moved

    def resample(self):
        resample(self.scene, self.hierarchy)

    def advect_points(self, points, dt):
        """Advect passive markers with the velocity of their own level."""
        from ..mpm.kernels import gather_velocity
        hier = self.hierarchy
        lvls = hier.level_lookup(points)
        out = np.zeros_like(points)
        for j in range(hier.n_levels):
            sel = np.nonzero(lvls == j)[0]
            if sel.size == 0:
                continue
            g = hier.levels[j]
            ox, oy, oz = (int(v) for v in g.origin_cells)
            d0, d1, d2 = g.dims
            pts = np.ascontiguousarray(points[sel])
            vel = np.zeros_like(pts)
            gather_velocity(pts, vel, g.v, g.inv_cell, ox, oy, oz, d0, d1, d2)
            out[sel] = vel
        points += dt * out
        return points

    def per_level_counts(self):
        pool = self.scene.pool
        idx = self.alive()
        return np.bincount(pool.level[idx], minlength=self.hierarchy.n_levels)

    def memory_bytes(self):
        return self.scene.pool.memory_bytes() + self.hierarchy.memory_bytes()
