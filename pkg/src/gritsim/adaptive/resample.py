"""Momentum-conserving particle split/merge resampling.

Splits fan a coarse particle into 8 children one level finer (one per
octant of its footprint, jittered); merges consume 8 same-cell fine
particles into one coarse particle.  Both conserve mass and volume
exactly and linear plus APIC angular momentum to roundoff: children get
a small rigid-rotation velocity correction, merged particles absorb the
group's orbital angular momentum into the affine matrix.
"""

import numpy as np

from ..errors import GritsimError, SolverError


def _axial(C):
    """Axial vector of the antisymmetric part: a(C) with a(crossmat(w)) = 2w."""
    return np.array([C[2, 1] - C[1, 2], C[0, 2] - C[2, 0], C[1, 0] - C[0, 1]])


def _crossmat(w):
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def apic_angular_momentum(pool, indices, cells):
    """Total APIC angular momentum about the origin for a set of particles.

    Sum of m x cross v plus the affine term m (l^2/4) a(C) from the
    quadratic B-spline inertia.
    """
    total = np.zeros(3)
    for p in np.atleast_1d(indices):
        m = pool.mass[p]
        l = cells[pool.level[p]]
        total += m * np.cross(pool.x[p], pool.v[p])
        total += m * (l * l / 4.0) * _axial(pool.C[p])
    return total


def split_particle(scene, cells, p, rng_salt=0):
    """Split particle ``p`` into 8 children one level finer.

    Children sit in the octants of the parent's material footprint (cube
    of half-width l_parent/4), jittered by an RNG keyed on the parent's
    pool index.  Returns the children's pool indices.
    """
    pool = scene.pool
    if not pool.alive[p]:
        raise GritsimError(f"cannot split dead particle {p}")
    lvl = int(pool.level[p])
    if lvl <= 0:
        raise GritsimError("cannot split a finest-level particle")
    l_par = cells[lvl]

    rng = np.random.default_rng((scene.seed, int(p), int(rng_salt)))
    h = l_par / 8.0
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                     dtype=np.float64)
    offsets = signs * h + rng.uniform(-0.4 * h, 0.4 * h, size=(8, 3))
    offsets -= offsets.mean(axis=0)

    x_p = pool.x[p].copy()
    v_p = pool.v[p].copy()
    C_p = pool.C[p].copy()
    m = pool.mass[p]
    l_child = cells[lvl - 1]

    # velocities from the parent affine field...
    vel = v_p + offsets @ C_p.T
    # ...plus the rigid rotation that restores APIC angular momentum:
    # the octant quadrupole plus the finer-child inertia do not add up to
    # the parent's l^2/4 inertia, so solve (tr(M) I - M) w = deficit / m.
    M = offsets.T @ offsets / 8.0
    quad = np.zeros(3)
    for c in range(8):
        quad += np.cross(offsets[c], C_p @ offsets[c]) / 8.0
    a_c = _axial(C_p)
    deficit = (l_par ** 2 / 4.0) * a_c - quad - (l_child ** 2 / 4.0) * a_c
    A = np.trace(M) * np.eye(3) - M
    try:
        w = np.linalg.solve(A, deficit)
    except np.linalg.LinAlgError:
        w = np.zeros(3)
    vel += np.cross(np.broadcast_to(w, (8, 3)), offsets)

    children = pool.append_block(
        8,
        x_p[None, :] + offsets,
        vel,
        np.tile(pool.F[p], (8, 1, 1)),
        np.tile(C_p, (8, 1, 1)),
        np.full(8, m / 8.0),
        np.full(8, pool.vol0[p] / 8.0),
        np.full(8, pool.plastic[p]),
        np.full(8, pool.material[p], dtype=np.int32),
        np.full(8, lvl - 1, dtype=np.int32),
    )
    pool.tau[children] = pool.tau[p]
    pool.kill([p])
    scene.stats["splits"] += 1
    return list(range(children.start, children.stop))


def merge_particles(scene, cells, group):
    """Merge a same-cell group into one particle a level coarser.

    Returns the merged particle's pool index.
    """
    pool = scene.pool
    group = np.asarray(group, dtype=np.int64)
    if group.size < 2:
        raise GritsimError("merge needs at least two particles")
    lvls = pool.level[group]
    mats = pool.material[group]
    if not (lvls == lvls[0]).all():
        raise GritsimError("cannot merge particles from different levels")
    if not (mats == mats[0]).all():
        raise GritsimError("cannot merge particles of different materials")
    lvl = int(lvls[0])
    if lvl + 1 >= len(cells):
        raise GritsimError("cannot merge beyond the coarsest level")

    m = pool.mass[group]
    m_tot = m.sum()
    x_bar = (m[:, None] * pool.x[group]).sum(axis=0) / m_tot
    v_bar = (m[:, None] * pool.v[group]).sum(axis=0) / m_tot
    vol0 = pool.vol0[group].sum()
    plastic = (m * pool.plastic[group]).sum() / m_tot

    F_avg = (m[:, None, None] * pool.F[group]).sum(axis=0) / m_tot
    det_target = (m * np.linalg.det(pool.F[group])).sum() / m_tot
    det_avg = np.linalg.det(F_avg)
    if det_avg > 1e-12 and det_target > 0.0:
        F_merged = F_avg * (det_target / det_avg) ** (1.0 / 3.0)
    else:
        F_merged = np.eye(3) * max(det_target, 1e-6) ** (1.0 / 3.0)

    # mass-weighted affine average, then a skew correction so the merged
    # particle carries the group's full APIC angular momentum
    C_avg = (m[:, None, None] * pool.C[group]).sum(axis=0) / m_tot
    l_c = cells[lvl]
    l_m = cells[lvl + 1]
    am = np.zeros(3)
    for p in group:
        am += pool.mass[p] * np.cross(pool.x[p], pool.v[p])
        am += pool.mass[p] * (l_c * l_c / 4.0) * _axial(pool.C[p])
    goal = (am - m_tot * np.cross(x_bar, v_bar)) * 4.0 / (m_tot * l_m * l_m)
    C_merged = C_avg + _crossmat((goal - _axial(C_avg)) / 2.0)

    pool.kill(group)
    idx = scene.pool.append(x_bar, v_bar, F_merged, C_merged, m_tot, vol0,
                            plastic, int(mats[0]), lvl + 1)
    scene.stats["merges"] += 1
    return idx


MERGE_COUNT = 8


def resample(scene, hierarchy):
    """Bring every particle's level in line with its region.

    Particles finer than their region merge in groups of MERGE_COUNT per
    coarse cell (greedily, pool order); any too-coarse particle splits;
    leftovers that cannot fill a merge group are relabeled.  Conserves
    mass exactly and momentum to roundoff.
    """
    pool = scene.pool
    cells = hierarchy.cells
    n_levels = hierarchy.n_levels

    # split until no particle is coarser than its region
    for _ in range(n_levels + 1):
        idx = pool.alive_indices()
        if idx.size == 0:
            break
        target = hierarchy.level_lookup(pool.x[idx])
        if np.any(target >= n_levels):
            bad = idx[target >= n_levels][0]
            raise SolverError(
                f"particle {bad} escaped the outermost cube during resampling",
                particle_index=int(bad))
        too_coarse = idx[pool.level[idx] > target]
        if too_coarse.size == 0:
            break
        for p in too_coarse:
            split_particle(scene, cells, p, rng_salt=scene.stats["splits"])

    # merge fine particles sitting in coarse regions, one level at a time
    merged_new = []
    for lc in range(n_levels - 1):
        idx = pool.alive_indices()
        if idx.size == 0:
            break
        target = hierarchy.level_lookup(pool.x[idx])
        cand = idx[(pool.level[idx] == lc) & (target > lc)]
        if cand.size < MERGE_COUNT:
            continue
        inv = 1.0 / cells[lc + 1]
        cell_idx = np.floor(pool.x[cand] * inv).astype(np.int64)
        # pack cell coordinates into one sortable key
        key = ((cell_idx[:, 0] + (1 << 20)) << 42) \
            + ((cell_idx[:, 1] + (1 << 20)) << 21) \
            + (cell_idx[:, 2] + (1 << 20))
        order = np.argsort(key, kind="stable")
        sorted_key = key[order]
        sorted_cand = cand[order]
        start = 0
        for end in range(1, sorted_key.size + 1):
            if end < sorted_key.size and sorted_key[end] == sorted_key[start]:
                continue
            members = sorted_cand[start:end]
            start = end
            mats = pool.material[members]
            for mat in np.unique(mats):
                same = members[mats == mat]
                for ofs in range(0, same.size - MERGE_COUNT + 1, MERGE_COUNT):
                    merged_new.append(
                        merge_particles(scene, cells, same[ofs:ofs + MERGE_COUNT]))

    if merged_new:
        scene.refresh_stress(np.asarray(merged_new, dtype=np.int64))

    # leftovers that could not merge ride the coarse grid under a new label
    idx = pool.alive_indices()
    if idx.size:
        target = hierarchy.level_lookup(pool.x[idx])
        finer = idx[pool.level[idx] < target]
        if finer.size:
            pool.level[finer] = target[pool.level[idx] < target]
            pool.version += 1
            scene.stats["relabels"] += int(finer.size)

    pool.maybe_compact()
    scene.note_alive()
