"""Compiled inner loop of the grand-canonical Metropolis sampler.

All geometry is handled in three padded dimensions; unused axes have extent
one and zero coordinates.  State arrays are mutated in place.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from ..model.grid import deposit, delta_energy_add, delta_energy_move

INSERT, DELETE, DISPLACE = 0, 1, 2

# status codes returned by run_block
DONE, NEED_CAPACITY = 0, 1


@nb.njit(cache=True)
def hc_cell_of(x, hc_side, ncell, pad, d):
    c = np.zeros(3, np.int64)
    for a in range(d):
        k = int(math.floor(x[a] / hc_side)) + pad
        if pad:
            if k < 0:
                k = 0
            elif k > ncell[a] + 1:
                k = ncell[a] + 1
        else:
            k %= ncell[a]
        c[a] = k
    return c


@nb.njit(cache=True)
def flat_cell(c, dims):
    return (c[0] * dims[1] + c[1]) * dims[2] + c[2]


@nb.njit(cache=True)
def _too_close(x, y, R, periodic, side, d):
    s = 0.0
    for a in range(d):
        dx = x[a] - y[a]
        if periodic:
            dx -= side * math.floor(dx / side + 0.5)
        s += dx * dx
    return math.sqrt(s) <= R


@nb.njit(cache=True)
def hc_ok(x, skip, pos, R, periodic, side, d, hc_side, ncell, pad, dims,
          cell_count, cell_members, st_start, st_pos):
    """True iff ``x`` is farther than R from all particles except ``skip``."""
    c = hc_cell_of(x, hc_side, ncell, pad, d)
    lo = np.zeros(3, np.int64)
    hi = np.zeros(3, np.int64)
    for a in range(3):
        if a >= d:
            lo[a] = 0
            hi[a] = 0
        elif periodic and ncell[a] < 3:
            lo[a] = -c[a]
            hi[a] = ncell[a] - 1 - c[a]
        else:
            lo[a] = -1
            hi[a] = 1
    nb_c = np.zeros(3, np.int64)
    for o0 in range(lo[0], hi[0] + 1):
        for o1 in range(lo[1], hi[1] + 1):
            for o2 in range(lo[2], hi[2] + 1):
                nb_c[0] = c[0] + o0
                nb_c[1] = c[1] + o1
                nb_c[2] = c[2] + o2
                ok = True
                for a in range(d):
                    if periodic:
                        nb_c[a] %= ncell[a]
                    elif nb_c[a] < 0 or nb_c[a] >= dims[a]:
                        ok = False
                if not ok:
                    continue
                f = flat_cell(nb_c, dims)
                for s in range(cell_count[f]):
                    j = cell_members[f, s]
                    if j == skip:
                        continue
                    if _too_close(x, pos[j], R, periodic, side, d):
                        return False
                for s in range(st_start[f], st_start[f + 1]):
                    if _too_close(x, st_pos[s], R, periodic, side, d):
                        return False
    return True


@nb.njit(cache=True)
def cell_insert(i, x, hc_side, ncell, pad, dims, d, cell_count, cell_members, pcell, pslot):
    f = flat_cell(hc_cell_of(x, hc_side, ncell, pad, d), dims)
    s = cell_count[f]
    cell_members[f, s] = i
    cell_count[f] = s + 1
    pcell[i] = f
    pslot[i] = s


@nb.njit(cache=True)
def cell_remove(i, cell_count, cell_members, pcell, pslot):
    f = pcell[i]
    s = pslot[i]
    last = cell_count[f] - 1
    j = cell_members[f, last]
    cell_members[f, s] = j
    pslot[j] = s
    cell_count[f] = last


@nb.njit(cache=True)
def cell_relabel(old, new, cell_members, pcell, pslot):
    """Particle stored at index ``old`` now lives at index ``new``."""
    f = pcell[old]
    s = pslot[old]
    cell_members[f, s] = new
    pcell[new] = f
    pslot[new] = s


@nb.njit(cache=True)
def cube_of(x, ell, ncube, d):
    """Flat index of the cube of side ``ell`` containing ``x`` (clipped into the box)."""
    f = 0
    for a in range(3):
        k = 0
        if a < d:
            k = int(math.floor(x[a] / ell))
            if k < 0:
                k = 0
            elif k >= ncube[a]:
                k = ncube[a] - 1
        f = f * ncube[a] + k
    return f


@nb.njit(cache=True)
def run_block(n_steps, U, G,
              pos, nbox, field, energy, counters,
              grid_lo, grid_shape, periodic, h, gamma, cd, d, weight,
              beta, lam, kac, p_ins, p_del, disp_radius, side, max_particles,
              hc_on, R, hc_side, ncell, pad, dims, cell_count, cell_members, pcell, pslot,
              st_start, st_pos,
              ellp, nplus, act_mask, act_list,
              ellm, nminus, cnt, cmask, nlo, nhi):
    """Advance the chain by ``n_steps`` moves using pre-drawn random numbers.

    ``U[t] = (move, pick, accept, radius, pos_0, pos_1, pos_2)``, ``G[t]`` are
    standard normals for the displacement direction.  Returns
    ``(status, steps_done)``.
    """
    cap = pos.shape[0]
    n_act = act_list.shape[0]
    volume = n_act * ellp**d
    x = np.zeros(3)
    for t in range(n_steps):
        n = nbox[0]
        u0 = U[t, 0]
        if u0 < p_ins:
            move = INSERT
        elif u0 < p_ins + p_del:
            move = DELETE
        else:
            move = DISPLACE
        counters[2 * move] += 1
        if move == INSERT:
            if n >= max_particles:
                continue
            if n >= cap:
                counters[2 * move] -= 1
                return NEED_CAPACITY, t
            k = act_list[min(int(U[t, 1] * n_act), n_act - 1)]
            # unflatten the large-cube index
            k2 = k % nplus[2]
            k1 = (k // nplus[2]) % nplus[1]
            k0 = k // (nplus[1] * nplus[2])
            x[0] = (k0 + U[t, 4]) * ellp
            x[1] = (k1 + U[t, 5]) * ellp if d > 1 else 0.0
            x[2] = (k2 + U[t, 6]) * ellp if d > 2 else 0.0
            for a in range(d):
                if x[a] >= side:
                    x[a] = math.nextafter(side, 0.0)
            c = cube_of(x, ellm, nminus, d)
            if cmask[c] and cnt[c] + 1 > nhi[c]:
                continue
            if hc_on and not hc_ok(x, -1, pos, R, periodic, side, d, hc_side, ncell, pad, dims,
                                   cell_count, cell_members, st_start, st_pos):
                continue
            dE = -lam
            if kac:
                dE += weight * delta_energy_add(field, x, 1.0, grid_lo, grid_shape, periodic,
                                                h, gamma, cd, d)
            ratio = volume / (n + 1) * math.exp(-beta * dE) if -beta * dE < 700 else 1e300
            if U[t, 2] < ratio:
                for a in range(3):
                    pos[n, a] = x[a]
                if kac:
                    deposit(field, x, 1.0, grid_lo, grid_shape, periodic, h, gamma, cd, d)
                if hc_on:
                    cell_insert(n, x, hc_side, ncell, pad, dims, d, cell_count, cell_members,
                                pcell, pslot)
                cnt[c] += 1
                nbox[0] = n + 1
                energy[0] += dE
                counters[2 * move + 1] += 1
        elif move == DELETE:
            if n == 0:
                continue
            i = min(int(U[t, 1] * n), n - 1)
            xi = pos[i]
            c = cube_of(xi, ellm, nminus, d)
            if cmask[c] and cnt[c] - 1 < nlo[c]:
                continue
            dE = lam
            if kac:
                dE += weight * delta_energy_add(field, xi, -1.0, grid_lo, grid_shape, periodic,
                                                h, gamma, cd, d)
            ratio = n / volume * math.exp(-beta * dE) if -beta * dE < 700 else 1e300
            if U[t, 2] < ratio:
                if kac:
                    deposit(field, xi, -1.0, grid_lo, grid_shape, periodic, h, gamma, cd, d)
                last = n - 1
                if hc_on:
                    cell_remove(i, cell_count, cell_members, pcell, pslot)
                    if i != last:
                        cell_relabel(last, i, cell_members, pcell, pslot)
                for a in range(3):
                    pos[i, a] = pos[last, a]
                cnt[c] -= 1
                nbox[0] = last
                energy[0] += dE
                counters[2 * move + 1] += 1
        else:
            if n == 0:
                continue
            i = min(int(U[t, 1] * n), n - 1)
            norm = 0.0
            for a in range(d):
                norm += G[t, a] * G[t, a]
            norm = math.sqrt(norm)
            if norm == 0.0:
                continue
            r = disp_radius * U[t, 3] ** (1.0 / d)
            inside = True
            for a in range(3):
                if a < d:
                    x[a] = pos[i, a] + r * G[t, a] / norm
                    if periodic:
                        x[a] -= side * math.floor(x[a] / side)
                        if x[a] >= side:
                            x[a] = 0.0
                    elif x[a] < 0.0 or x[a] >= side:
                        inside = False
                else:
                    x[a] = 0.0
            if not inside:
                continue
            if n_act < nplus[0] * nplus[1] * nplus[2]:
                if not act_mask[cube_of(x, ellp, nplus, d)]:
                    continue
            c_old = cube_of(pos[i], ellm, nminus, d)
            c_new = cube_of(x, ellm, nminus, d)
            if c_old != c_new:
                if cmask[c_old] and cnt[c_old] - 1 < nlo[c_old]:
                    continue
                if cmask[c_new] and cnt[c_new] + 1 > nhi[c_new]:
                    continue
            if hc_on and not hc_ok(x, i, pos, R, periodic, side, d, hc_side, ncell, pad, dims,
                                   cell_count, cell_members, st_start, st_pos):
                continue
            dE = 0.0
            if kac:
                dE = weight * delta_energy_move(field, pos[i], x, grid_lo, grid_shape, periodic,
                                                h, gamma, cd, d)
            if U[t, 2] < math.exp(-beta * dE) if -beta * dE < 700 else True:
                if kac:
                    deposit(field, pos[i], -1.0, grid_lo, grid_shape, periodic, h, gamma, cd, d)
                    deposit(field, x, 1.0, grid_lo, grid_shape, periodic, h, gamma, cd, d)
                if hc_on:
                    cell_remove(i, cell_count, cell_members, pcell, pslot)
                    cell_insert(i, x, hc_side, ncell, pad, dims, d, cell_count, cell_members,
                                pcell, pslot)
                for a in range(3):
                    pos[i, a] = x[a]
                cnt[c_old] -= 1
                cnt[c_new] += 1
                energy[0] += dE
                counters[2 * move + 1] += 1
    return DONE, n_steps
