"""Independent brute-force verifiers for the numerical core.

Each verifier recomputes a quantity by a method unrelated to the production
path (dense grids, time-to-collision classification, the exact Kalman
recursion, analytic enumeration) so the two can be compared in tests and in
`crowdtrack oracle-check`. Nothing here is used by the tracking pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import HalfPlane, Vec2


def _disc_grid(max_speed: float, resolution: float) -> tuple[np.ndarray, np.ndarray]:
    ticks = np.arange(-max_speed, max_speed + resolution / 2, resolution)
    gx, gy = np.meshgrid(ticks, ticks)
    gx = gx.ravel()
    gy = gy.ravel()
    inside = gx * gx + gy * gy <= max_speed * max_speed
    return gx[inside], gy[inside]


def grid_lp_oracle(
    constraints: list[HalfPlane],
    v_pref: Vec2,
    max_speed: float,
    resolution: float = 1e-3,
) -> Vec2 | None:
    """Feasible grid point closest to v_pref, or None when no grid point
    satisfies every constraint."""
    gx, gy = _disc_grid(max_speed, resolution)
    feasible = np.ones(len(gx), dtype=bool)
    for hp in constraints:
        feasible &= (gx - hp.point.x) * hp.normal.x + (gy - hp.point.y) * hp.normal.y >= 0.0
    if not feasible.any():
        return None
    fx, fy = gx[feasible], gy[feasible]
    d2 = (fx - v_pref.x) ** 2 + (fy - v_pref.y) ** 2
    i = int(np.argmin(d2))
    return Vec2(float(fx[i]), float(fy[i]))


def grid_minimax_oracle(
    constraints: list[HalfPlane], max_speed: float, resolution: float = 1e-3
) -> tuple[Vec2, float]:
    """Grid point minimizing the maximum signed violation, and that value."""
    gx, gy = _disc_grid(max_speed, resolution)
    worst = np.full(len(gx), -np.inf)
    for hp in constraints:
        viol = (hp.point.x - gx) * hp.normal.x + (hp.point.y - gy) * hp.normal.y
        worst = np.maximum(worst, viol)
    i = int(np.argmin(worst))
    return Vec2(float(gx[i]), float(gy[i])), float(worst[i])


# ---------------------------------------------------------------------------
# Velocity-obstacle membership and boundary search
# ---------------------------------------------------------------------------


def vo_contains(rel: Vec2, r_sum: float, tau: float, vx, vy):
    """Membership in the truncated velocity obstacle by the time-to-collision
    test: some t in (0, tau] has ||t v - rel|| <= r_sum. Vectorized over
    vx, vy arrays."""
    vx = np.asarray(vx, dtype=float)
    vy = np.asarray(vy, dtype=float)
    a = vx * vx + vy * vy
    b = vx * rel.x + vy * rel.y  # v . rel
    c = rel.x * rel.x + rel.y * rel.y - r_sum * r_sum
    disc = b * b - a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        t_lo = (b - sq) / a
        t_hi = (b + sq) / a
    return (a > 0.0) & (disc >= 0.0) & (t_hi > 0.0) & (t_lo <= tau)


def vo_nearest_boundary(
    rel: Vec2, r_sum: float, tau: float, v_rel: Vec2, n_rays: int = 20000
) -> Vec2:
    """Nearest point of the truncated velocity obstacle's boundary to v_rel.

    Sweeps rays from v_rel and bisects the membership transition on each;
    valid because the truncated obstacle is convex, so membership along any
    ray flips exactly once. The returned point is within ~||u|| * (2 pi /
    n_rays) of the true nearest boundary point; ties resolve to the smallest
    (y, x)."""
    # No boundary point is farther than the far side of the cutoff arc.
    reach = math.hypot(v_rel.x - rel.x / tau, v_rel.y - rel.y / tau) + 2.0 * r_sum / tau
    start_inside = bool(vo_contains(rel, r_sum, tau, v_rel.x, v_rel.y))

    theta = np.linspace(0.0, 2.0 * math.pi, n_rays, endpoint=False)
    ex, ey = np.cos(theta), np.sin(theta)
    n_march = 2000
    ts = np.linspace(reach / n_march, reach, n_march)

    # First t per ray where membership differs from the start state.
    flipped = np.zeros(n_rays, dtype=bool)
    lo = np.zeros(n_rays)
    hi = np.full(n_rays, np.inf)
    chunk = 200
    for s in range(0, n_march, chunk):
        t_blk = ts[s : s + chunk]
        px = v_rel.x + ex[:, None] * t_blk[None, :]
        py = v_rel.y + ey[:, None] * t_blk[None, :]
        inside = vo_contains(rel, r_sum, tau, px, py)
        flip = inside != start_inside
        rows = ~flipped & flip.any(axis=1)
        if rows.any():
            first = np.argmax(flip[rows], axis=1)
            hi[rows] = t_blk[first]
            lo[rows] = np.where(first > 0, t_blk[first - 1], ts[s] - ts[0] if s else 0.0)
            flipped[rows] = True
        if flipped.all():
            break
    if not flipped.any():
        raise ValueError("no boundary crossing found within reach")

    idx = np.nonzero(flipped)[0]
    lo_b, hi_b = lo[idx], hi[idx]
    for _ in range(45):
        mid = 0.5 * (lo_b + hi_b)
        inside = vo_contains(
            rel, r_sum, tau, v_rel.x + ex[idx] * mid, v_rel.y + ey[idx] * mid
        )
        crossed = inside != start_inside
        hi_b = np.where(crossed, mid, hi_b)
        lo_b = np.where(crossed, lo_b, mid)
    t_cross = 0.5 * (lo_b + hi_b)

    # Rays within the angular sampling error of the minimum, grouped into
    # contiguous clusters (one per local minimum of the distance field).
    # Each cluster is represented by its best ray; genuinely tied minima
    # (symmetric geometry) then break by position, not by sampling noise.
    band = np.nonzero(t_cross <= t_cross.min() * (1.0 + 1e-5) + 1e-9)[0]
    rays = idx[band]
    reps: list[tuple[float, float, float]] = []
    cluster: list[int] = [0]
    for j in range(1, len(band) + 1):
        wraps = j == len(band) and (rays[0] - rays[-1]) % n_rays == 1
        if j < len(band) and rays[j] - rays[j - 1] == 1:
            cluster.append(j)
            continue
        best = min(cluster, key=lambda c: t_cross[band[c]])
        t = t_cross[band[best]]
        r = idx[band[best]]
        reps.append((t, v_rel.y + ey[r] * t, v_rel.x + ex[r] * t))
        if wraps and len(reps) > 1:  # first and last clusters are one ring segment
            first = reps[0]
            last = reps.pop()
            reps[0] = min(first, last)
        cluster = [j]
    t_best = min(r[0] for r in reps)
    tied = sorted((y, x) for t, y, x in reps if t <= t_best * (1.0 + 1e-5) + 1e-9)
    return Vec2(tied[0][1], tied[0][0])


# ---------------------------------------------------------------------------
# Exact Kalman filter
# ---------------------------------------------------------------------------


@dataclass
class KalmanTrace:
    means: list[np.ndarray]
    covariances: list[np.ndarray]


def kalman_filter(
    A: np.ndarray,
    Q: np.ndarray,
    H: np.ndarray,
    R: np.ndarray,
    x0: np.ndarray,
    P0: np.ndarray,
    observations: list[np.ndarray],
) -> KalmanTrace:
    """Textbook linear-Gaussian filter; the reference the ensemble filter is
    checked against on linear problems."""
    x = np.asarray(x0, dtype=float).copy()
    P = np.asarray(P0, dtype=float).copy()
    eye = np.eye(len(x))
    means, covs = [], []
    for z in observations:
        x = A @ x
        P = A @ P @ A.T + Q
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        x = x + K @ (np.asarray(z, dtype=float) - H @ x)
        P = (eye - K @ H) @ P
        means.append(x.copy())
        covs.append(P.copy())
    return KalmanTrace(means, covs)
