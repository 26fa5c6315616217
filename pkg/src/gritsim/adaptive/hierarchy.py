"""Agent-centered nested grid hierarchy.

Level i has cell size ``2**i * finest_cell`` and spans the cube of
half-width ``half_cells * cell_i`` around the shared center.  The center
lives on the coarsest lattice (stored as integer cell coordinates), which
keeps every level's node lattice exactly dyadic and exactly nested: a
finer cube's boundary always coincides with coarser cell faces.

Ownership tie-break: positions on a shared cube boundary belong to the
finer level (cubes are closed).
"""

import numpy as np

from ..errors import ConfigError, OutOfDomainError
from ..mpm.grid import GridLevel

# guard cells beyond each cube so ghost-band scatter stays in-array
PAD = 5


class HierarchicalGrid:
    def __init__(self, n_levels, finest_cell, half_cells, center,
                 dtype=np.float64):
        if n_levels < 1:
            raise ConfigError("hierarchy needs at least one level")
        if half_cells < 8 or half_cells % 2 != 0:
            raise ConfigError(
                f"half_cells must be an even integer >= 8, got {half_cells}")
        self.n_levels = int(n_levels)
        self.finest_cell = float(finest_cell)
        self.half_cells = int(half_cells)
        self.cells = [self.finest_cell * (1 << i) for i in range(self.n_levels)]
        self.coarsest_cell = self.cells[-1]
        # cube half-widths per level, ascending
        self.half_widths = np.array([self.half_cells * c for c in self.cells])
        self.center_coarse = np.zeros(3, dtype=np.int64)
        side = 2 * (self.half_cells + PAD) + 1
        self.levels = [GridLevel(self.cells[i], (0, 0, 0), (side, side, side),
                                 dtype=dtype)
                       for i in range(self.n_levels)]
        self.snap_center(center)

    # ------------------------------------------------------------------
    @property
    def center(self):
        return self.center_coarse * self.coarsest_cell

    @property
    def outer_half_width(self):
        return float(self.half_widths[-1])

    def snap_center(self, pos):
        """Snap the center to the coarsest lattice point nearest ``pos``."""
        self.center_coarse = np.round(
            np.asarray(pos, dtype=np.float64) / self.coarsest_cell).astype(np.int64)
        self._update_origins()

    def recenter(self, agent_pos):
        """Re-snap if the agent strayed more than half a coarse cell.

        Returns True when the center moved.
        """
        agent_pos = np.asarray(agent_pos, dtype=np.float64)
        if np.max(np.abs(agent_pos - self.center)) <= 0.5 * self.coarsest_cell:
            return False
        before = self.center_coarse.copy()
        self.snap_center(agent_pos)
        return bool(np.any(before != self.center_coarse))

    def _update_origins(self):
        for i, lvl in enumerate(self.levels):
            scale = 1 << (self.n_levels - 1 - i)
            lvl.origin_cells[:] = self.center_coarse * scale - (self.half_cells + PAD)

    # ------------------------------------------------------------------
    def level_lookup(self, pts):
        """Vectorized level index per point; n_levels flags out-of-cube."""
        d = np.max(np.abs(np.atleast_2d(pts) - self.center), axis=1)
        return np.searchsorted(self.half_widths, d, side="left")

    def level_of(self, x):
        """Smallest level whose cube contains x; raises outside the hierarchy."""
        lvl = int(self.level_lookup(np.asarray(x, dtype=np.float64))[0])
        if lvl >= self.n_levels:
            raise OutOfDomainError(
                f"position {np.asarray(x)} lies outside the outermost cube "
                f"(half-width {self.outer_half_width} m around {self.center})")
        return lvl

    def covers(self, domain_lo, domain_hi):
        """True if the outermost cube contains the domain box for any
        center inside the box (worst case: center at a corner)."""
        extent = np.max(np.asarray(domain_hi) - np.asarray(domain_lo))
        return self.outer_half_width >= extent - 1e-12

    def check_nesting(self):
        """Exact-arithmetic nesting check: each cube boundary lies on the
        next level's cell lattice."""
        for i in range(self.n_levels - 1):
            # half-width of cube i in units of level-(i+1) cells
            num = self.half_cells * (1 << i)
            den = 1 << (i + 1)
            if num % den != 0:
                return False
        return True

    def memory_bytes(self):
        return sum(lvl.memory_bytes() for lvl in self.levels)
