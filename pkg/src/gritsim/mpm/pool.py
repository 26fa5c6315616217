"""Fixed-capacity particle pool with tagged deletion and amortized compaction.

Deletion tags a slot dead; slots are reclaimed in one stable compaction
pass once the dead count crosses the restructure threshold.  Alive
particles always keep their relative pool order, which every deterministic
ordering in the engine builds on.
"""

import numpy as np

from ..errors import CapacityError

FIELD_DTYPE = np.float64


class ParticlePool:
    def __init__(self, capacity, dtype=FIELD_DTYPE, restructure_threshold=8192):
        if capacity <= 0:
            raise ValueError("pool capacity must be positive")
        self.capacity = int(capacity)
        self.dtype = np.dtype(dtype)
        self.restructure_threshold = int(restructure_threshold)

        self.x = np.zeros((capacity, 3), dtype=self.dtype)
        self.v = np.zeros((capacity, 3), dtype=self.dtype)
        self.F = np.zeros((capacity, 3, 3), dtype=self.dtype)
        self.C = np.zeros((capacity, 3, 3), dtype=self.dtype)
        self.tau = np.zeros((capacity, 3, 3), dtype=self.dtype)
        self.mass = np.zeros(capacity, dtype=self.dtype)
        self.vol0 = np.zeros(capacity, dtype=self.dtype)
        self.plastic = np.zeros(capacity, dtype=self.dtype)
        self.material = np.zeros(capacity, dtype=np.int32)
        self.level = np.zeros(capacity, dtype=np.int32)
        self.alive = np.zeros(capacity, dtype=bool)

        self.count = 0          # used slots, alive or dead
        self.n_dead = 0
        self.compaction_count = 0
        self.version = 0        # bumped on any structural change

    # ------------------------------------------------------------------
    @property
    def n_alive(self):
        return self.count - self.n_dead

    def alive_indices(self):
        """Alive slot indices in pool order."""
        return np.nonzero(self.alive[:self.count])[0].astype(np.int64)

    def append(self, x, v, F, C, mass, vol0, plastic, material, level):
        """Append one particle; returns its slot index."""
        if self.count >= self.capacity:
            raise CapacityError(
                f"particle pool capacity {self.capacity} exceeded")
        i = self.count
        self.x[i] = x
        self.v[i] = v
        self.F[i] = F
        self.C[i] = C
        self.mass[i] = mass
        self.vol0[i] = vol0
        self.plastic[i] = plastic
        self.material[i] = material
        self.level[i] = level
        self.alive[i] = True
        self.count += 1
        self.version += 1
        return i

    def append_block(self, n, x, v, F, C, mass, vol0, plastic, material, level):
        """Append n particles from stacked arrays; returns the slot range."""
        if self.count + n > self.capacity:
            raise CapacityError(
                f"particle pool capacity {self.capacity} exceeded "
                f"(need {self.count + n})")
        sl = slice(self.count, self.count + n)
        self.x[sl] = x
        self.v[sl] = v
        self.F[sl] = F
        self.C[sl] = C
        self.mass[sl] = mass
        self.vol0[sl] = vol0
        self.plastic[sl] = plastic
        self.material[sl] = material
        self.level[sl] = level
        self.alive[sl] = True
        self.count += n
        self.version += 1
        return sl

    def kill(self, indices):
        idx = np.asarray(indices)
        self.alive[idx] = False
        self.n_dead += idx.size
        self.version += 1

    def maybe_compact(self):
        """Compact when the dead-slot count exceeds the threshold."""
        if self.n_dead <= self.restructure_threshold:
            return False
        self.compact()
        return True

    def compact(self):
        keep = np.nonzero(self.alive[:self.count])[0]
        n = keep.size
        for arr in (self.x, self.v, self.F, self.C, self.tau,
                    self.mass, self.vol0, self.plastic,
                    self.material, self.level):
            arr[:n] = arr[keep]
        self.alive[:n] = True
        self.alive[n:self.count] = False
        self.count = n
        self.n_dead = 0
        self.compaction_count += 1
        self.version += 1

    # ------------------------------------------------------------------
    def total_mass(self):
        return float(self.mass[:self.count][self.alive[:self.count]].sum())

    def total_momentum(self):
        a = self.alive[:self.count]
        return (self.mass[:self.count, None] * self.v[:self.count])[a].sum(axis=0)

    def max_speed(self):
        a = self.alive[:self.count]
        if not a.any():
            return 0.0
        sp = np.linalg.norm(self.v[:self.count][a], axis=1)
        return float(sp.max())

    def memory_bytes(self):
        per = (3 + 3 + 9 + 9 + 9 + 1 + 1 + 1) * self.dtype.itemsize + 4 + 4 + 1
        return self.capacity * per

    def snapshot(self):
        """Deep copy of the live state (used by environment resets)."""
        return {
            "x": self.x[:self.count].copy(),
            "v": self.v[:self.count].copy(),
            "F": self.F[:self.count].copy(),
            "C": self.C[:self.count].copy(),
            "tau": self.tau[:self.count].copy(),
            "mass": self.mass[:self.count].copy(),
            "vol0": self.vol0[:self.count].copy(),
            "plastic": self.plastic[:self.count].copy(),
            "material": self.material[:self.count].copy(),
            "level": self.level[:self.count].copy(),
            "alive": self.alive[:self.count].copy(),
            "n_dead": self.n_dead,
        }

    def restore(self, snap):
        n = snap["x"].shape[0]
        self.x[:n] = snap["x"]
        self.v[:n] = snap["v"]
        self.F[:n] = snap["F"]
        self.C[:n] = snap["C"]
        self.tau[:n] = snap["tau"]
        self.mass[:n] = snap["mass"]
        self.vol0[:n] = snap["vol0"]
        self.plastic[:n] = snap["plastic"]
        self.material[:n] = snap["material"]
        self.level[:n] = snap["level"]
        self.alive[:n] = snap["alive"]
        self.alive[n:self.count] = False
        self.count = n
        self.n_dead = int(snap["n_dead"])
        self.version += 1
