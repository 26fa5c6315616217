"""Uniform-resolution MLS-MPM solver: the reference and benchmark baseline."""

import numpy as np

from .. import engine
from .grid import uniform_grid_for_domain


class UniformSolver:
    """Single fixed grid over the whole domain, symplectic Euler substeps."""

    def __init__(self, scene, cell):
        self.scene = scene
        self.grid = uniform_grid_for_domain(
            scene.domain_hi - scene.domain_lo, cell, dtype=scene.dtype)
        self._idx = None
        self._idx_version = -1

    @property
    def finest_cell(self):
        return self.grid.cell

    def alive(self):
        if self._idx_version != self.scene.pool.version:
            self._idx = self.scene.pool.alive_indices()
            self._idx_version = self.scene.pool.version
        return self._idx

    def substep(self):
        scene = self.scene
        scene.check_cfl(self.grid.cell)
        idx = self.alive()
        dt = scene.dt
        engine.run_p2g(self.grid, scene, idx, dt)
        packed = engine.packed_tools_for(scene, margin=2.0 * self.grid.cell)
        impulses = engine.run_grid_update(self.grid, scene, packed, dt)
        vmax = engine.run_g2p(self.grid, scene, idx, dt)
        engine.log_reactions(scene, impulses, dt)
        scene.v_max = vmax
        scene.t += dt
        scene.substeps_done += 1

    def run(self, n_substeps):
        for _ in range(n_substeps):
            self.substep()

    def advect_points(self, points, dt):
        """Move passive marker points with the current grid velocity field."""
        from .kernels import gather_velocity
        out = np.zeros_like(points)
        ox, oy, oz = (int(v) for v in self.grid.origin_cells)
        d0, d1, d2 = self.grid.dims
        gather_velocity(points, out, self.grid.v, self.grid.inv_cell,
                        ox, oy, oz, d0, d1, d2)
        points += dt * out
        return points

    def memory_bytes(self):
        return self.scene.pool.memory_bytes() + self.grid.memory_bytes()
