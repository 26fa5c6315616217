"""Eulerian background grid storage.

A GridLevel is a box of nodes on the global lattice of its cell size.
``origin_cells`` is the integer lattice coordinate of node (0, 0, 0), so
node world positions are exact for dyadic cell sizes and two grids with
different origins still agree bitwise on shared lattice sites.
"""

import numpy as np


class GridLevel:
    def __init__(self, cell, origin_cells, dims, dtype=np.float64):
        self.cell = float(cell)
        self.inv_cell = 1.0 / self.cell
        self.origin_cells = np.asarray(origin_cells, dtype=np.int64).copy()
        self.dims = tuple(int(d) for d in dims)
        self.dtype = np.dtype(dtype)
        d0, d1, d2 = self.dims
        self.m = np.zeros((d0, d1, d2), dtype=self.dtype)
        self.mom = np.zeros((d0, d1, d2, 3), dtype=self.dtype)
        self.v = np.zeros((d0, d1, d2, 3), dtype=self.dtype)
        self._starts = np.zeros(d0 * d1 * d2 + 1, dtype=np.int64)

    @property
    def origin_world(self):
        return self.origin_cells * self.cell

    @property
    def node_count(self):
        d0, d1, d2 = self.dims
        return d0 * d1 * d2

    def node_positions(self):
        d0, d1, d2 = self.dims
        ii, jj, kk = np.meshgrid(np.arange(d0), np.arange(d1), np.arange(d2),
                                 indexing="ij")
        pts = np.stack([ii, jj, kk], axis=-1) + self.origin_cells
        return pts * self.cell

    def total_mass(self):
        return float(self.m.sum())

    def total_momentum(self):
        return self.mom.sum(axis=(0, 1, 2))

    def memory_bytes(self):
        return self.m.nbytes + self.mom.nbytes + self.v.nbytes + self._starts.nbytes


def uniform_grid_for_domain(extent, cell, pad=2, dtype=np.float64):
    """Domain-anchored grid covering [0, extent] with `pad` guard cells."""
    extent = np.asarray(extent, dtype=np.float64)
    cells = np.ceil(extent / cell - 1e-12).astype(np.int64)
    origin_cells = np.array([-pad, -pad, -pad], dtype=np.int64)
    dims = cells + 1 + 2 * pad
    return GridLevel(cell, origin_cells, tuple(int(d) for d in dims), dtype=dtype)
