"""Numba transfer kernels: P2G, grid dynamics, fused G2P + constitutive update.

Determinism contract: results are bitwise reproducible for a fixed
configuration regardless of worker count.  P2G therefore gathers per node
from base-binned particle lists (fixed order), and every reduction that
crosses particles or nodes is blocked with a fixed block size and reduced
in block order.  No unordered atomic float accumulation anywhere.
"""

import numpy as np
from numba import njit, prange

from .materials import (COL_CONE, COL_KIND, COL_LAMBDA, COL_MU, COL_THETA_C,
                        COL_THETA_S, COL_XI, material_update)

# fixed reduction block size (independent of thread count)
BLOCK = 4096

# boundary / tool modes
MODE_STICKY = 0
MODE_SLIP = 1
MODE_SEPARATE = 2

PRIM_SPHERE = 0
PRIM_BOX = 1
PRIM_CAPSULE = 2
PRIM_CYLINDER = 3


@njit(cache=True, inline="always")
def bspline(d):
    """Quadratic B-spline weight at a node distance d (in cells)."""
    ad = abs(d)
    if ad < 0.5:
        return 0.75 - d * d
    if ad < 1.5:
        t = 1.5 - ad
        return 0.5 * t * t
    return 0.0


@njit(cache=True)
def bin_by_base(x, idx, inv_cell, ox, oy, oz, d0, d1, d2, starts, order):
    """Stable counting sort of particles by the base node of their stencil.

    ``starts`` has one slot per node plus one; ``order`` permutes ``idx``.
    Returns the number of particles whose stencil leaves the node array
    (a resampling/domain violation the caller must turn into an error).
    """
    n = idx.shape[0]
    nbins = d0 * d1 * d2
    for b in range(nbins + 1):
        starts[b] = 0
    n_bad = 0
    for t in range(n):
        p = idx[t]
        bx = int(np.floor(x[p, 0] * inv_cell - ox - 0.5))
        by = int(np.floor(x[p, 1] * inv_cell - oy - 0.5))
        bz = int(np.floor(x[p, 2] * inv_cell - oz - 0.5))
        if bx < 0 or by < 0 or bz < 0 or bx > d0 - 3 or by > d1 - 3 or bz > d2 - 3:
            n_bad += 1
            continue
        starts[(bx * d1 + by) * d2 + bz + 1] += 1
    for b in range(nbins):
        starts[b + 1] += starts[b]
    fill = starts.copy()
    for t in range(n):
        p = idx[t]
        bx = int(np.floor(x[p, 0] * inv_cell - ox - 0.5))
        by = int(np.floor(x[p, 1] * inv_cell - oy - 0.5))
        bz = int(np.floor(x[p, 2] * inv_cell - oz - 0.5))
        if bx < 0 or by < 0 or bz < 0 or bx > d0 - 3 or by > d1 - 3 or bz > d2 - 3:
            continue
        b = (bx * d1 + by) * d2 + bz
        order[fill[b]] = t
        fill[b] += 1
    return n_bad


@njit(cache=True, parallel=True, fastmath=True)
def p2g_gather(grid_m, grid_mom, x, v, mass, vol0, C, tau,
               idx, order, starts, inv_cell, cell, ox, oy, oz, dt):
    """Scatter-free P2G: each node gathers from the 27 base bins that can
    reach it.  Accumulation order per node is bin order then pool order,
    hence independent of threading."""
    d0, d1, d2 = grid_m.shape
    coeff = -4.0 * inv_cell * inv_cell * dt
    for nf in prange(d0 * d1 * d2):
        i = nf // (d1 * d2)
        j = (nf // d2) % d1
        k = nf % d2
        acc_m = 0.0
        acc_x = 0.0
        acc_y = 0.0
        acc_z = 0.0
        bi_lo = i - 2 if i - 2 > 0 else 0
        bj_lo = j - 2 if j - 2 > 0 else 0
        bk_lo = k - 2 if k - 2 > 0 else 0
        bi_hi = i if i < d0 - 3 else d0 - 3
        bj_hi = j if j < d1 - 3 else d1 - 3
        bk_hi = k if k < d2 - 3 else d2 - 3
        for bi in range(bi_lo, bi_hi + 1):
            for bj in range(bj_lo, bj_hi + 1):
                row = (bi * d1 + bj) * d2
                for bk in range(bk_lo, bk_hi + 1):
                    b = row + bk
                    for t in range(starts[b], starts[b + 1]):
                        p = idx[order[t]]
                        fx = x[p, 0] * inv_cell - ox
                        fy = x[p, 1] * inv_cell - oy
                        fz = x[p, 2] * inv_cell - oz
                        w = bspline(fx - i) * bspline(fy - j) * bspline(fz - k)
                        if w == 0.0:
                            continue
                        dpx = (i - fx) * cell
                        dpy = (j - fy) * cell
                        dpz = (k - fz) * cell
                        m = mass[p]
                        s = coeff * vol0[p]
                        a00 = m * C[p, 0, 0] + s * tau[p, 0, 0]
                        a01 = m * C[p, 0, 1] + s * tau[p, 0, 1]
                        a02 = m * C[p, 0, 2] + s * tau[p, 0, 2]
                        a10 = m * C[p, 1, 0] + s * tau[p, 1, 0]
                        a11 = m * C[p, 1, 1] + s * tau[p, 1, 1]
                        a12 = m * C[p, 1, 2] + s * tau[p, 1, 2]
                        a20 = m * C[p, 2, 0] + s * tau[p, 2, 0]
                        a21 = m * C[p, 2, 1] + s * tau[p, 2, 1]
                        a22 = m * C[p, 2, 2] + s * tau[p, 2, 2]
                        acc_m += w * m
                        acc_x += w * (m * v[p, 0] + a00 * dpx + a01 * dpy + a02 * dpz)
                        acc_y += w * (m * v[p, 1] + a10 * dpx + a11 * dpy + a12 * dpz)
                        acc_z += w * (m * v[p, 2] + a20 * dpx + a21 * dpy + a22 * dpz)
        grid_m[i, j, k] = acc_m
        grid_mom[i, j, k, 0] = acc_x
        grid_mom[i, j, k, 1] = acc_y
        grid_mom[i, j, k, 2] = acc_z


@njit(cache=True, inline="always")
def _prim_sdf(kind, qx, qy, qz, p0, p1):
    """Signed distance and gradient of one primitive in its local frame."""
    if kind == PRIM_SPHERE:
        r = np.sqrt(qx * qx + qy * qy + qz * qz)
        if r > 1e-9:
            return r - p0, qx / r, qy / r, qz / r
        return -p0, 0.0, 0.0, 1.0
    if kind == PRIM_BOX:
        # p0, p1 carry hx, hy; hz rides in the caller's third slot
        return 0.0, 0.0, 0.0, 1.0  # replaced by _box_sdf below
    if kind == PRIM_CAPSULE:
        cz = qz
        if cz > p1:
            cz = p1
        elif cz < -p1:
            cz = -p1
        ax = qx
        ay = qy
        az = qz - cz
        r = np.sqrt(ax * ax + ay * ay + az * az)
        if r > 1e-9:
            return r - p0, ax / r, ay / r, az / r
        return -p0, 0.0, 0.0, 1.0
    # cylinder
    rxy = np.sqrt(qx * qx + qy * qy)
    dr = rxy - p0
    dz = abs(qz) - p1
    if dr > 0.0 and dz > 0.0:
        dist = np.sqrt(dr * dr + dz * dz)
        if rxy > 1e-9:
            nx = dr / dist * qx / rxy
            ny = dr / dist * qy / rxy
        else:
            nx = 0.0
            ny = 0.0
        nz = dz / dist * (1.0 if qz > 0.0 else -1.0)
        return dist, nx, ny, nz
    if dr > dz:
        if rxy > 1e-9:
            return dr, qx / rxy, qy / rxy, 0.0
        return dr, 0.0, 0.0, 1.0
    return dz, 0.0, 0.0, (1.0 if qz > 0.0 else -1.0)


@njit(cache=True, inline="always")
def _box_sdf(qx, qy, qz, hx, hy, hz):
    dx = abs(qx) - hx
    dy = abs(qy) - hy
    dz = abs(qz) - hz
    ox = dx if dx > 0.0 else 0.0
    oy = dy if dy > 0.0 else 0.0
    oz = dz if dz > 0.0 else 0.0
    outside = np.sqrt(ox * ox + oy * oy + oz * oz)
    inside = dx
    if dy > inside:
        inside = dy
    if dz > inside:
        inside = dz
    if inside > 0.0:
        inside = 0.0
    dist = outside + inside
    if outside > 1e-9:
        nx = ox / outside * (1.0 if qx > 0.0 else -1.0)
        ny = oy / outside * (1.0 if qy > 0.0 else -1.0)
        nz = oz / outside * (1.0 if qz > 0.0 else -1.0)
        return dist, nx, ny, nz
    # interior: face of least penetration
    if dx >= dy and dx >= dz:
        return dist, (1.0 if qx > 0.0 else -1.0), 0.0, 0.0
    if dy >= dz:
        return dist, 0.0, (1.0 if qy > 0.0 else -1.0), 0.0
    return dist, 0.0, 0.0, (1.0 if qz > 0.0 else -1.0)


@njit(cache=True, inline="always")
def tool_sdf(tool, wx, wy, wz,
             tool_pos, tool_rot, prim_tool, prim_kind, prim_param,
             prim_pos, prim_rot):
    """Min-union SDF and outward normal of one tool at a world point."""
    # world -> tool frame
    rx = wx - tool_pos[tool, 0]
    ry = wy - tool_pos[tool, 1]
    rz = wz - tool_pos[tool, 2]
    tx = tool_rot[tool, 0, 0] * rx + tool_rot[tool, 1, 0] * ry + tool_rot[tool, 2, 0] * rz
    ty = tool_rot[tool, 0, 1] * rx + tool_rot[tool, 1, 1] * ry + tool_rot[tool, 2, 1] * rz
    tz = tool_rot[tool, 0, 2] * rx + tool_rot[tool, 1, 2] * ry + tool_rot[tool, 2, 2] * rz

    best = 1e30
    bnx = 0.0
    bny = 0.0
    bnz = 1.0
    for q in range(prim_kind.shape[0]):
        if prim_tool[q] != tool:
            continue
        lx = tx - prim_pos[q, 0]
        ly = ty - prim_pos[q, 1]
        lz = tz - prim_pos[q, 2]
        qx = prim_rot[q, 0, 0] * lx + prim_rot[q, 1, 0] * ly + prim_rot[q, 2, 0] * lz
        qy = prim_rot[q, 0, 1] * lx + prim_rot[q, 1, 1] * ly + prim_rot[q, 2, 1] * lz
        qz = prim_rot[q, 0, 2] * lx + prim_rot[q, 1, 2] * ly + prim_rot[q, 2, 2] * lz
        kind = prim_kind[q]
        if kind == PRIM_BOX:
            dist, gx, gy, gz = _box_sdf(qx, qy, qz,
                                        prim_param[q, 0], prim_param[q, 1], prim_param[q, 2])
        else:
            dist, gx, gy, gz = _prim_sdf(kind, qx, qy, qz,
                                         prim_param[q, 0], prim_param[q, 1])
        if dist < best:
            best = dist
            # prim frame -> tool frame -> world
            ax = prim_rot[q, 0, 0] * gx + prim_rot[q, 0, 1] * gy + prim_rot[q, 0, 2] * gz
            ay = prim_rot[q, 1, 0] * gx + prim_rot[q, 1, 1] * gy + prim_rot[q, 1, 2] * gz
            az = prim_rot[q, 2, 0] * gx + prim_rot[q, 2, 1] * gy + prim_rot[q, 2, 2] * gz
            bnx = tool_rot[tool, 0, 0] * ax + tool_rot[tool, 0, 1] * ay + tool_rot[tool, 0, 2] * az
            bny = tool_rot[tool, 1, 0] * ax + tool_rot[tool, 1, 1] * ay + tool_rot[tool, 1, 2] * az
            bnz = tool_rot[tool, 2, 0] * ax + tool_rot[tool, 2, 1] * ay + tool_rot[tool, 2, 2] * az
    nn = np.sqrt(bnx * bnx + bny * bny + bnz * bnz)
    if nn < 1e-9:
        return best, 0.0, 0.0, 1.0
    return best, bnx / nn, bny / nn, bnz / nn


@njit(cache=True, inline="always")
def _project_contact(vx, vy, vz, tvx, tvy, tvz, nx, ny, nz, mode, mu):
    """Coulomb projection of a grid velocity against one moving boundary."""
    rx = vx - tvx
    ry = vy - tvy
    rz = vz - tvz
    vn = rx * nx + ry * ny + rz * nz
    if vn >= 0.0:
        return vx, vy, vz, False
    if mode == MODE_STICKY:
        return tvx, tvy, tvz, True
    tx = rx - vn * nx
    ty = ry - vn * ny
    tz = rz - vn * nz
    if mode == MODE_SLIP:
        return tvx + tx, tvy + ty, tvz + tz, True
    # separating contact with Coulomb friction
    tn = np.sqrt(tx * tx + ty * ty + tz * tz)
    if tn > 1e-15:
        fac = 1.0 + mu * vn / tn  # vn < 0
        if fac < 0.0:
            fac = 0.0
    else:
        fac = 0.0
    return tvx + tx * fac, tvy + ty * fac, tvz + tz * fac, True


@njit(cache=True, parallel=True, fastmath=True)
def grid_update(grid_m, grid_mom, grid_v, gx, gy, gz, dt,
                ox, oy, oz, cell,
                dom_lo, dom_hi, floor_mode, floor_mu, wall_mode, wall_mu,
                tool_pos, tool_rot, tool_lin, tool_ang, tool_mu, tool_mode,
                tool_aabb_lo, tool_aabb_hi,
                prim_tool, prim_kind, prim_param, prim_pos, prim_rot,
                band, reaction):
    """Momentum -> velocity, gravity, wall and tool boundary projection.

    ``reaction`` has shape (n_node_blocks, n_tools, 3) and accumulates the
    impulse each tool removes from the grid, blocked for determinism.
    """
    d0, d1, d2 = grid_m.shape
    n_nodes = d0 * d1 * d2
    n_tools = tool_pos.shape[0]
    n_blocks = (n_nodes + BLOCK - 1) // BLOCK
    for blk in prange(n_blocks):
        lo = blk * BLOCK
        hi = min(lo + BLOCK, n_nodes)
        for nf in range(lo, hi):
            i = nf // (d1 * d2)
            j = (nf // d2) % d1
            k = nf % d2
            m = grid_m[i, j, k]
            if m <= 0.0:
                grid_v[i, j, k, 0] = 0.0
                grid_v[i, j, k, 1] = 0.0
                grid_v[i, j, k, 2] = 0.0
                continue
            vx = grid_mom[i, j, k, 0] / m + gx * dt
            vy = grid_mom[i, j, k, 1] / m + gy * dt
            vz = grid_mom[i, j, k, 2] / m + gz * dt
            px = (i + ox) * cell
            py = (j + oy) * cell
            pz = (k + oz) * cell

            # domain walls (static boundaries; no reaction bookkeeping)
            if pz <= dom_lo[2]:
                vx, vy, vz, _ = _project_contact(vx, vy, vz, 0.0, 0.0, 0.0,
                                                 0.0, 0.0, 1.0, floor_mode, floor_mu)
            if pz >= dom_hi[2]:
                vx, vy, vz, _ = _project_contact(vx, vy, vz, 0.0, 0.0, 0.0,
                                                 0.0, 0.0, -1.0, wall_mode, wall_mu)
            if px <= dom_lo[0]:
                vx, vy, vz, _ = _project_contact(vx, vy, vz, 0.0, 0.0, 0.0,
                                                 1.0, 0.0, 0.0, wall_mode, wall_mu)
            if px >= dom_hi[0]:
                vx, vy, vz, _ = _project_contact(vx, vy, vz, 0.0, 0.0, 0.0,
                                                 -1.0, 0.0, 0.0, wall_mode, wall_mu)
            if py <= dom_lo[1]:
                vx, vy, vz, _ = _project_contact(vx, vy, vz, 0.0, 0.0, 0.0,
                                                 0.0, 1.0, 0.0, wall_mode, wall_mu)
            if py >= dom_hi[1]:
                vx, vy, vz, _ = _project_contact(vx, vy, vz, 0.0, 0.0, 0.0,
                                                 0.0, -1.0, 0.0, wall_mode, wall_mu)

            for tool in range(n_tools):
                if (px < tool_aabb_lo[tool, 0] or px > tool_aabb_hi[tool, 0]
                        or py < tool_aabb_lo[tool, 1] or py > tool_aabb_hi[tool, 1]
                        or pz < tool_aabb_lo[tool, 2] or pz > tool_aabb_hi[tool, 2]):
                    continue
                dist, nx, ny, nz = tool_sdf(tool, px, py, pz,
                                            tool_pos, tool_rot, prim_tool, prim_kind,
                                            prim_param, prim_pos, prim_rot)
                if dist >= band:
                    continue
                relx = px - tool_pos[tool, 0]
                rely = py - tool_pos[tool, 1]
                relz = pz - tool_pos[tool, 2]
                tvx = tool_lin[tool, 0] + tool_ang[tool, 1] * relz - tool_ang[tool, 2] * rely
                tvy = tool_lin[tool, 1] + tool_ang[tool, 2] * relx - tool_ang[tool, 0] * relz
                tvz = tool_lin[tool, 2] + tool_ang[tool, 0] * rely - tool_ang[tool, 1] * relx
                nvx, nvy, nvz, touched = _project_contact(
                    vx, vy, vz, tvx, tvy, tvz, nx, ny, nz,
                    tool_mode[tool], tool_mu[tool])
                if touched:
                    reaction[blk, tool, 0] -= m * (nvx - vx)
                    reaction[blk, tool, 1] -= m * (nvy - vy)
                    reaction[blk, tool, 2] -= m * (nvz - vz)
                vx, vy, vz = nvx, nvy, nvz

            grid_v[i, j, k, 0] = vx
            grid_v[i, j, k, 1] = vy
            grid_v[i, j, k, 2] = vz


@njit(cache=True, parallel=True, fastmath=True)
def g2p_update(grid_v, x, v, C, F, tau, plastic, material,
               idx, inv_cell, cell, ox, oy, oz, dt,
               dom_lo, dom_hi, table, advect,
               block_vmax2, block_bad):
    """Gather velocities, advect, update F and run the material update.

    ``block_bad`` records the first offending pool index per fixed-size
    block (-1 when clean); ``block_vmax2`` the per-block max squared speed.
    """
    n = idx.shape[0]
    inv4 = 4.0 * inv_cell * inv_cell
    n_blk = (n + BLOCK - 1) // BLOCK
    for blk in prange(n_blk):
        lo = blk * BLOCK
        hi = min(lo + BLOCK, n)
        vmax2 = 0.0
        bad = -1
        for t in range(lo, hi):
            p = idx[t]
            fx = x[p, 0] * inv_cell - ox
            fy = x[p, 1] * inv_cell - oy
            fz = x[p, 2] * inv_cell - oz
            bx = int(np.floor(fx - 0.5))
            by = int(np.floor(fy - 0.5))
            bz = int(np.floor(fz - 0.5))
            nvx = 0.0
            nvy = 0.0
            nvz = 0.0
            b00 = 0.0
            b01 = 0.0
            b02 = 0.0
            b10 = 0.0
            b11 = 0.0
            b12 = 0.0
            b20 = 0.0
            b21 = 0.0
            b22 = 0.0
            for oi in range(3):
                i = bx + oi
                wx = bspline(fx - i)
                dpx = (i - fx) * cell
                for oj in range(3):
                    j = by + oj
                    wxy = wx * bspline(fy - j)
                    dpy = (j - fy) * cell
                    for ok in range(3):
                        k = bz + ok
                        w = wxy * bspline(fz - k)
                        if w == 0.0:
                            continue
                        dpz = (k - fz) * cell
                        gvx = grid_v[i, j, k, 0] * w
                        gvy = grid_v[i, j, k, 1] * w
                        gvz = grid_v[i, j, k, 2] * w
                        nvx += gvx
                        nvy += gvy
                        nvz += gvz
                        b00 += gvx * dpx
                        b01 += gvx * dpy
                        b02 += gvx * dpz
                        b10 += gvy * dpx
                        b11 += gvy * dpy
                        b12 += gvy * dpz
                        b20 += gvz * dpx
                        b21 += gvz * dpy
                        b22 += gvz * dpz
            c00 = b00 * inv4
            c01 = b01 * inv4
            c02 = b02 * inv4
            c10 = b10 * inv4
            c11 = b11 * inv4
            c12 = b12 * inv4
            c20 = b20 * inv4
            c21 = b21 * inv4
            c22 = b22 * inv4

            if advect:
                nx = x[p, 0] + dt * nvx
                ny = x[p, 1] + dt * nvy
                nz = x[p, 2] + dt * nvz
                # clamp to the domain box, killing the inward component
                if nx < dom_lo[0]:
                    nx = dom_lo[0]
                    if nvx < 0.0:
                        nvx = 0.0
                elif nx > dom_hi[0]:
                    nx = dom_hi[0]
                    if nvx > 0.0:
                        nvx = 0.0
                if ny < dom_lo[1]:
                    ny = dom_lo[1]
                    if nvy < 0.0:
                        nvy = 0.0
                elif ny > dom_hi[1]:
                    ny = dom_hi[1]
                    if nvy > 0.0:
                        nvy = 0.0
                if nz < dom_lo[2]:
                    nz = dom_lo[2]
                    if nvz < 0.0:
                        nvz = 0.0
                elif nz > dom_hi[2]:
                    nz = dom_hi[2]
                    if nvz > 0.0:
                        nvz = 0.0
                x[p, 0] = nx
                x[p, 1] = ny
                x[p, 2] = nz

            v[p, 0] = nvx
            v[p, 1] = nvy
            v[p, 2] = nvz
            C[p, 0, 0] = c00
            C[p, 0, 1] = c01
            C[p, 0, 2] = c02
            C[p, 1, 0] = c10
            C[p, 1, 1] = c11
            C[p, 1, 2] = c12
            C[p, 2, 0] = c20
            C[p, 2, 1] = c21
            C[p, 2, 2] = c22

            # trial F <- (I + dt C) F, then the material's return map
            f00 = F[p, 0, 0]
            f01 = F[p, 0, 1]
            f02 = F[p, 0, 2]
            f10 = F[p, 1, 0]
            f11 = F[p, 1, 1]
            f12 = F[p, 1, 2]
            f20 = F[p, 2, 0]
            f21 = F[p, 2, 1]
            f22 = F[p, 2, 2]
            a00 = 1.0 + dt * c00
            a01 = dt * c01
            a02 = dt * c02
            a10 = dt * c10
            a11 = 1.0 + dt * c11
            a12 = dt * c12
            a20 = dt * c20
            a21 = dt * c21
            a22 = 1.0 + dt * c22
            t00 = a00 * f00 + a01 * f10 + a02 * f20
            t01 = a00 * f01 + a01 * f11 + a02 * f21
            t02 = a00 * f02 + a01 * f12 + a02 * f22
            t10 = a10 * f00 + a11 * f10 + a12 * f20
            t11 = a10 * f01 + a11 * f11 + a12 * f21
            t12 = a10 * f02 + a11 * f12 + a12 * f22
            t20 = a20 * f00 + a21 * f10 + a22 * f20
            t21 = a20 * f01 + a21 * f11 + a22 * f21
            t22 = a20 * f02 + a21 * f12 + a22 * f22

            row = table[material[p]]
            (g00, g01, g02, g10, g11, g12, g20, g21, g22, pl,
             s00, s01, s02, s10, s11, s12, s20, s21, s22, jdet) = material_update(
                int(row[COL_KIND]), t00, t01, t02, t10, t11, t12, t20, t21, t22,
                plastic[p], row[COL_CONE], row[COL_THETA_C], row[COL_THETA_S],
                row[COL_XI], row[COL_MU], row[COL_LAMBDA])

            F[p, 0, 0] = g00
            F[p, 0, 1] = g01
            F[p, 0, 2] = g02
            F[p, 1, 0] = g10
            F[p, 1, 1] = g11
            F[p, 1, 2] = g12
            F[p, 2, 0] = g20
            F[p, 2, 1] = g21
            F[p, 2, 2] = g22
            plastic[p] = pl
            tau[p, 0, 0] = s00
            tau[p, 0, 1] = s01
            tau[p, 0, 2] = s02
            tau[p, 1, 0] = s10
            tau[p, 1, 1] = s11
            tau[p, 1, 2] = s12
            tau[p, 2, 0] = s20
            tau[p, 2, 1] = s21
            tau[p, 2, 2] = s22

            sp2 = nvx * nvx + nvy * nvy + nvz * nvz
            if sp2 > vmax2:
                vmax2 = sp2
            ok_num = (np.isfinite(sp2) and np.isfinite(jdet)
                      and np.isfinite(s00) and np.isfinite(s11) and np.isfinite(s22))
            if (jdet <= 0.0 or not ok_num) and bad < 0:
                bad = p
        block_vmax2[blk] = vmax2
        block_bad[blk] = bad


@njit(cache=True, parallel=True, fastmath=True)
def refresh_stress(idx, F, plastic, tau, material, table, block_bad):
    """Recompute the cached Kirchhoff stress from current F (also applies
    the return map, which is idempotent on admissible states)."""
    n = idx.shape[0]
    n_blk = (n + BLOCK - 1) // BLOCK
    for blk in prange(n_blk):
        lo = blk * BLOCK
        hi = min(lo + BLOCK, n)
        bad = -1
        for t in range(lo, hi):
            p = idx[t]
            row = table[material[p]]
            (g00, g01, g02, g10, g11, g12, g20, g21, g22, pl,
             s00, s01, s02, s10, s11, s12, s20, s21, s22, jdet) = material_update(
                int(row[COL_KIND]),
                F[p, 0, 0], F[p, 0, 1], F[p, 0, 2],
                F[p, 1, 0], F[p, 1, 1], F[p, 1, 2],
                F[p, 2, 0], F[p, 2, 1], F[p, 2, 2],
                plastic[p], row[COL_CONE], row[COL_THETA_C], row[COL_THETA_S],
                row[COL_XI], row[COL_MU], row[COL_LAMBDA])
            F[p, 0, 0] = g00
            F[p, 0, 1] = g01
            F[p, 0, 2] = g02
            F[p, 1, 0] = g10
            F[p, 1, 1] = g11
            F[p, 1, 2] = g12
            F[p, 2, 0] = g20
            F[p, 2, 1] = g21
            F[p, 2, 2] = g22
            plastic[p] = pl
            tau[p, 0, 0] = s00
            tau[p, 0, 1] = s01
            tau[p, 0, 2] = s02
            tau[p, 1, 0] = s10
            tau[p, 1, 1] = s11
            tau[p, 1, 2] = s12
            tau[p, 2, 0] = s20
            tau[p, 2, 1] = s21
            tau[p, 2, 2] = s22
            if (jdet <= 0.0 or not np.isfinite(jdet)) and bad < 0:
                bad = p
        block_bad[blk] = bad


@njit(cache=True)
def gather_velocity(points, out_v, grid_v, inv_cell, ox, oy, oz, d0, d1, d2):
    """Interpolate grid velocities at free points (marker advection)."""
    for t in range(points.shape[0]):
        fx = points[t, 0] * inv_cell - ox
        fy = points[t, 1] * inv_cell - oy
        fz = points[t, 2] * inv_cell - oz
        bx = int(np.floor(fx - 0.5))
        by = int(np.floor(fy - 0.5))
        bz = int(np.floor(fz - 0.5))
        vx = 0.0
        vy = 0.0
        vz = 0.0
        if bx < 0 or by < 0 or bz < 0 or bx > d0 - 3 or by > d1 - 3 or bz > d2 - 3:
            out_v[t, 0] = 0.0
            out_v[t, 1] = 0.0
            out_v[t, 2] = 0.0
            continue
        for oi in range(3):
            i = bx + oi
            wx = bspline(fx - i)
            for oj in range(3):
                j = by + oj
                wxy = wx * bspline(fy - j)
                for ok in range(3):
                    k = bz + ok
                    w = wxy * bspline(fz - k)
                    vx += grid_v[i, j, k, 0] * w
                    vy += grid_v[i, j, k, 1] * w
                    vz += grid_v[i, j, k, 2] * w
        out_v[t, 0] = vx
        out_v[t, 1] = vy
        out_v[t, 2] = vz
