"""Compiled per-row kernels for the collision-avoidance velocity update.

These mirror the scalar reference implementations in `geometry` and `rvo`
expression for expression, so results agree bitwise (property-tested). They
exist purely for throughput: particle filters push millions of states
through the constraint construction and the small LP every benchmark run.
All kernels release the GIL so per-pedestrian worker threads can overlap.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .geometry import PARALLEL_EPS

# Separation injected between exactly coincident centers (meters).
COINCIDENT_SEPARATION = 1e-4
_TINY = 1e-12


@njit(cache=True, nogil=True, inline="always")
def _halfplane(rel_x, rel_y, rv_x, rv_y, r_sum, sv_x, sv_y, tau, dt):
    """One ORCA half-plane; mirrors rvo._halfplane_from_relative."""
    dist_sq = rel_x * rel_x + rel_y * rel_y
    r_sq = r_sum * r_sum

    if dist_sq > r_sq:
        inv_tau = 1.0 / tau
        w_x = rv_x - inv_tau * rel_x
        w_y = rv_y - inv_tau * rel_y
        w_len_sq = w_x * w_x + w_y * w_y
        dot1 = w_x * rel_x + w_y * rel_y
        if dot1 < 0.0 and dot1 * dot1 > r_sq * w_len_sq:
            w_len = np.sqrt(w_len_sq)
            unit_x = w_x / w_len
            unit_y = w_y / w_len
            coef = r_sum * inv_tau - w_len
            u_x = coef * unit_x
            u_y = coef * unit_y
            n_x = unit_x
            n_y = unit_y
        else:
            leg = np.sqrt(dist_sq - r_sq)
            cross = rel_x * w_y - rel_y * w_x
            if cross > 0.0:
                d_x = (rel_x * leg - rel_y * r_sum) / dist_sq
                d_y = (rel_x * r_sum + rel_y * leg) / dist_sq
            else:
                d_x = -((rel_x * leg + rel_y * r_sum) / dist_sq)
                d_y = (rel_x * r_sum - rel_y * leg) / dist_sq
            dot2 = rv_x * d_x + rv_y * d_y
            u_x = dot2 * d_x - rv_x
            u_y = dot2 * d_y - rv_y
            n_x = -d_y
            n_y = d_x
    else:
        inv_dt = 1.0 / dt
        w_x = rv_x - inv_dt * rel_x
        w_y = rv_y - inv_dt * rel_y
        w_len = np.sqrt(w_x * w_x + w_y * w_y)
        if w_len < _TINY:
            dist = np.sqrt(dist_sq)
            unit_x = -(rel_x / dist)
            unit_y = -(rel_y / dist)
            w_len = 0.0
        else:
            unit_x = w_x / w_len
            unit_y = w_y / w_len
        coef = r_sum * inv_dt - w_len
        u_x = coef * unit_x
        u_y = coef * unit_y
        n_x = unit_x
        n_y = unit_y

    return sv_x + 0.5 * u_x, sv_y + 0.5 * u_y, n_x, n_y


@njit(cache=True, nogil=True, inline="always")
def _lp1(pts, nrm, index, pref_x, pref_y, ms):
    """Optimum on constraint `index`'s boundary; mirrors geometry._lp1."""
    p_x = pts[index, 0]
    p_y = pts[index, 1]
    d_x = nrm[index, 1]
    d_y = -nrm[index, 0]

    dot_pd = p_x * d_x + p_y * d_y
    disc = dot_pd * dot_pd - (p_x * p_x + p_y * p_y) + ms * ms
    if disc < 0.0:
        return False, 0.0, 0.0
    sq = np.sqrt(disc)
    t_left = -dot_pd - sq
    t_right = -dot_pd + sq

    for j in range(index):
        denom = d_x * nrm[j, 0] + d_y * nrm[j, 1]
        num = (pts[j, 0] - p_x) * nrm[j, 0] + (pts[j, 1] - p_y) * nrm[j, 1]
        if abs(denom) <= PARALLEL_EPS:
            if num > 0.0:
                return False, 0.0, 0.0
            continue
        t = num / denom
        if denom > 0.0:
            if t > t_left:
                t_left = t
        else:
            if t < t_right:
                t_right = t
        if t_left > t_right:
            return False, 0.0, 0.0

    t = (pref_x - p_x) * d_x + (pref_y - p_y) * d_y
    if t < t_left:
        t = t_left
    if t > t_right:
        t = t_right
    return True, p_x + t * d_x, p_y + t * d_y


@njit(cache=True, nogil=True, inline="always")
def _lp2(pts, nrm, n_constraints, pref_x, pref_y, ms):
    """Incremental projection LP; mirrors geometry.solve_lp2."""
    norm_sq = pref_x * pref_x + pref_y * pref_y
    if norm_sq > ms * ms:
        scale = ms / np.sqrt(norm_sq)
        v_x = pref_x * scale
        v_y = pref_y * scale
    else:
        v_x = pref_x
        v_y = pref_y

    for i in range(n_constraints):
        if (v_x - pts[i, 0]) * nrm[i, 0] + (v_y - pts[i, 1]) * nrm[i, 1] < 0.0:
            ok, new_x, new_y = _lp1(pts, nrm, i, pref_x, pref_y, ms)
            if not ok:
                return v_x, v_y, i
            v_x = new_x
            v_y = new_y
    return v_x, v_y, -1


@njit(cache=True, nogil=True, inline="always")
def _lp1_direction(pts, nrm, index, opt_x, opt_y, ms):
    """Directional variant of _lp1; mirrors geometry._lp1 with opt_direction."""
    p_x = pts[index, 0]
    p_y = pts[index, 1]
    d_x = nrm[index, 1]
    d_y = -nrm[index, 0]

    dot_pd = p_x * d_x + p_y * d_y
    disc = dot_pd * dot_pd - (p_x * p_x + p_y * p_y) + ms * ms
    if disc < 0.0:
        return False, 0.0, 0.0
    sq = np.sqrt(disc)
    t_left = -dot_pd - sq
    t_right = -dot_pd + sq

    for j in range(index):
        denom = d_x * nrm[j, 0] + d_y * nrm[j, 1]
        num = (pts[j, 0] - p_x) * nrm[j, 0] + (pts[j, 1] - p_y) * nrm[j, 1]
        if abs(denom) <= PARALLEL_EPS:
            if num > 0.0:
                return False, 0.0, 0.0
            continue
        t = num / denom
        if denom > 0.0:
            if t > t_left:
                t_left = t
        else:
            if t < t_right:
                t_right = t
        if t_left > t_right:
            return False, 0.0, 0.0

    if opt_x * d_x + opt_y * d_y > 0.0:
        t = t_right
    else:
        t = t_left
    return True, p_x + t * d_x, p_y + t * d_y


@njit(cache=True, nogil=True, inline="always")
def _lp2_direction(pts, nrm, n_constraints, opt_x, opt_y, ms):
    """Maximize v . opt over the constraints; mirrors geometry._lp2_direction."""
    v_x = opt_x * ms
    v_y = opt_y * ms
    for i in range(n_constraints):
        if (v_x - pts[i, 0]) * nrm[i, 0] + (v_y - pts[i, 1]) * nrm[i, 1] < 0.0:
            ok, new_x, new_y = _lp1_direction(pts, nrm, i, opt_x, opt_y, ms)
            if not ok:
                return v_x, v_y, i
            v_x = new_x
            v_y = new_y
    return v_x, v_y, -1


@njit(cache=True, nogil=True, inline="always")
def _lp3(pts, nrm, fail, cur_x, cur_y, ms, proj_pts, proj_nrm):
    """Least-bad velocity for an infeasible prefix; mirrors geometry.solve_lp3."""
    n_f_x = nrm[fail, 0]
    n_f_y = nrm[fail, 1]
    d_f_x = n_f_y
    d_f_y = -n_f_x

    count = 0
    for j in range(fail):
        d_j_x = nrm[j, 1]
        d_j_y = -nrm[j, 0]
        denom = d_f_x * d_j_y - d_f_y * d_j_x
        if abs(denom) <= PARALLEL_EPS:
            if n_f_x * nrm[j, 0] + n_f_y * nrm[j, 1] > 0.0:
                continue
            pt_x = (pts[fail, 0] + pts[j, 0]) * 0.5
            pt_y = (pts[fail, 1] + pts[j, 1]) * 0.5
        else:
            dx = pts[fail, 0] - pts[j, 0]
            dy = pts[fail, 1] - pts[j, 1]
            t = (d_j_x * dy - d_j_y * dx) / denom
            pt_x = pts[fail, 0] + t * d_f_x
            pt_y = pts[fail, 1] + t * d_f_y
        b_x = d_j_x - d_f_x
        b_y = d_j_y - d_f_y
        b_len = np.sqrt(b_x * b_x + b_y * b_y)
        b_x = b_x / b_len
        b_y = b_y / b_len
        proj_pts[count, 0] = pt_x
        proj_pts[count, 1] = pt_y
        proj_nrm[count, 0] = -b_y
        proj_nrm[count, 1] = b_x
        count += 1

    v_x, v_y, fail2 = _lp2_direction(proj_pts, proj_nrm, count, n_f_x, n_f_y, ms)
    if fail2 >= 0:
        return cur_x, cur_y
    return v_x, v_y


@njit(cache=True, nogil=True)
def rvo_velocities(
    self_pos,
    self_vel,
    self_rad,
    self_ids,
    max_speed,
    v_pref,
    cand_pos,
    cand_vel,
    cand_rad,
    cand_ids,
    allowed,
    nd_sq,
    max_neighbors,
    tau,
    dt,
    out_v,
    out_fail,
):
    """New velocities for B rows against m shared candidates (id-sorted).

    Per row: k-nearest candidate selection within range (ties keep the
    lower id), constraint construction in that order, then the incremental
    LP. Rows whose constraints are jointly unsatisfiable keep the partial
    LP result and report the failing constraint index in out_fail; the
    caller runs the least-bad fallback on those.
    """
    B = self_pos.shape[0]
    m = cand_pos.shape[0]
    K = min(max_neighbors, m)
    best_d = np.empty(K)
    best_j = np.empty(K, np.int64)
    pts = np.empty((K, 2))
    nrm = np.empty((K, 2))
    proj_pts = np.empty((K, 2))
    proj_nrm = np.empty((K, 2))

    for b in range(B):
        # Stable nearest-K selection (candidates scanned in id order).
        count = 0
        for j in range(m):
            if not allowed[b, j]:
                continue
            dx = cand_pos[j, 0] - self_pos[b, 0]
            dy = cand_pos[j, 1] - self_pos[b, 1]
            d2 = dx * dx + dy * dy
            if d2 > nd_sq:
                continue
            pos = count
            while pos > 0 and best_d[pos - 1] > d2:
                pos -= 1
            if pos >= K:
                continue
            tail = count if count < K else K - 1
            shift = tail
            while shift > pos:
                best_d[shift] = best_d[shift - 1]
                best_j[shift] = best_j[shift - 1]
                shift -= 1
            best_d[pos] = d2
            best_j[pos] = j
            if count < K:
                count += 1

        for c in range(count):
            j = best_j[c]
            rel_x = cand_pos[j, 0] - self_pos[b, 0]
            rel_y = cand_pos[j, 1] - self_pos[b, 1]
            if rel_x == 0.0 and rel_y == 0.0:
                # Deterministic nudge for coincident centers: axis by id
                # parity, sign by id order.
                sign = 1.0 if cand_ids[j] > self_ids[b] else -1.0
                if (self_ids[b] - cand_ids[j]) % 2 == 0:
                    rel_x = sign * COINCIDENT_SEPARATION
                else:
                    rel_y = sign * COINCIDENT_SEPARATION
            px, py, nx, ny = _halfplane(
                rel_x,
                rel_y,
                self_vel[b, 0] - cand_vel[j, 0],
                self_vel[b, 1] - cand_vel[j, 1],
                self_rad[b] + cand_rad[j],
                self_vel[b, 0],
                self_vel[b, 1],
                tau,
                dt,
            )
            pts[c, 0] = px
            pts[c, 1] = py
            nrm[c, 0] = nx
            nrm[c, 1] = ny

        v_x, v_y, fail = _lp2(pts, nrm, count, v_pref[b, 0], v_pref[b, 1], max_speed[b])
        if fail >= 0:
            v_x, v_y = _lp3(pts, nrm, fail, v_x, v_y, max_speed[b], proj_pts, proj_nrm)
        out_v[b, 0] = v_x
        out_v[b, 1] = v_y
        out_fail[b] = fail
