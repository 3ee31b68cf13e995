"""Self-contained oracle battery for `crowdtrack oracle-check`.

Each check recomputes a derived value with an independent method (grid
search, boundary sweep, analytic enumeration, Monte Carlo, exact Kalman
recursion) and compares the production path against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import HalfPlane, Vec2, max_violation, solve_lp2, solve_lp3
from .learn import Ensemble, em_update, enkf_predict, enkf_update
from .oracles import grid_lp_oracle, grid_minimax_oracle, kalman_filter, vo_nearest_boundary
from .rng import substream
from .rvo import AgentState, RvoConfig, compute_orca_halfplane
from .tracker import NeighborSnapshot, systematic_indices


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _agent(aid, pos, vel, radius=0.25, goal=(0.0, 0.0)) -> AgentState:
    return AgentState(
        id=aid, position=Vec2(*pos), velocity=Vec2(*vel), radius=radius,
        pref_speed=1.2, goal=Vec2(*goal), max_speed=2.0,
    )


def check_lp_projection() -> CheckResult:
    hp = HalfPlane(Vec2(0.0, 0.5), Vec2(0.0, 1.0))
    v, fail = solve_lp2([hp], Vec2(1.0, 0.0), 2.0)
    oracle = grid_lp_oracle([hp], Vec2(1.0, 0.0), 2.0, resolution=2e-3)
    err_analytic = (v - Vec2(1.0, 0.5)).norm()
    err_oracle = (v - oracle).norm() if oracle else math.inf
    ok = fail is None and err_analytic <= 1e-9 and err_oracle <= 2 * 2e-3
    return CheckResult(
        "lp2 projection onto one half-plane",
        ok,
        f"analytic err {err_analytic:.2e}, grid err {err_oracle:.2e}",
    )


def check_lp_random_feasible() -> CheckResult:
    rng = substream(314, 1)
    max_gap = 0.0
    max_breach = 0.0
    res = 2e-3
    for _ in range(30):
        constraints = []
        for _ in range(rng.integers(1, 5)):
            # Boundary through a point well inside the disc keeps it feasible.
            p = Vec2(*(0.5 * rng.standard_normal(2)))
            angle = rng.uniform(0.0, 2.0 * math.pi)
            constraints.append(HalfPlane(p, Vec2(math.cos(angle), math.sin(angle))))
        v_pref = Vec2(*(1.2 * rng.standard_normal(2)))
        v, fail = solve_lp2(constraints, v_pref, 2.0)
        oracle = grid_lp_oracle(constraints, v_pref, 2.0, resolution=res)
        if fail is not None or oracle is None:
            continue
        # The objective is flat along the active boundary, so positions are
        # compared through the objective value; feasibility is exact.
        max_gap = max(max_gap, (v - v_pref).norm() - (oracle - v_pref).norm())
        max_breach = max(max_breach, max_violation(constraints, v), v.norm() - 2.0)
    ok = max_gap <= 2 * res and max_breach <= 1e-7
    return CheckResult(
        "lp2 vs dense grid on random feasible cases",
        ok,
        f"max objective gap {max_gap:.2e}, max constraint breach {max_breach:.2e}",
    )


def check_lp3_minimax() -> CheckResult:
    res = 2e-3
    # One constraint whose boundary lies beyond the speed disc.
    hp = HalfPlane(Vec2(0.0, 3.0), Vec2(0.0, 1.0))
    v = solve_lp3([hp], 0, Vec2(0.0, 0.0), 2.0)
    err_single = (v - Vec2(0.0, 2.0)).norm()

    # Three agents closing in symmetrically: minimax violation ties.
    cfg = RvoConfig()
    me = _agent(0, (0.0, 0.0), (0.0, 0.0))
    constraints = []
    for i, angle in enumerate((0.5, 2.6, 4.7)):
        pos = (0.55 * math.cos(angle), 0.55 * math.sin(angle))
        vel = (-1.8 * math.cos(angle), -1.8 * math.sin(angle))
        constraints.append(
            compute_orca_halfplane(me, _agent(i + 1, pos, vel), cfg.time_horizon, cfg.dt)
        )
    sol, fail = solve_lp2(constraints, Vec2(1.2, 0.0), 2.0)
    if fail is None:
        return CheckResult("lp3 minimax vs grid", False, "expected infeasible instance")
    sol = solve_lp3(constraints, fail, sol, 2.0)
    _, oracle_value = grid_minimax_oracle(constraints[: fail + 1], 2.0, resolution=res)
    gap = abs(max_violation(constraints, sol, upto=fail) - oracle_value)
    ok = err_single <= 1e-9 and gap <= 2 * res
    return CheckResult(
        "lp3 least-bad velocity vs grid minimax",
        ok,
        f"single-constraint err {err_single:.2e}, minimax gap {gap:.2e}",
    )


def check_orca_u_vector() -> CheckResult:
    tau, dt = 2.0, 0.04
    a = _agent(0, (0.0, 0.0), (1.0, 0.0), radius=0.5)
    b = _agent(1, (2.0, 0.0), (-1.0, 0.0), radius=0.5)
    hp = compute_orca_halfplane(a, b, tau, dt)
    u_impl = Vec2(2.0 * (hp.point.x - a.velocity.x), 2.0 * (hp.point.y - a.velocity.y))
    v_rel = a.velocity - b.velocity
    boundary = vo_nearest_boundary(b.position - a.position, 1.0, tau, v_rel)
    u_oracle = boundary - v_rel
    err = (u_impl - u_oracle).norm()
    return CheckResult("orca escape vector vs boundary sweep", err <= 1e-3, f"err {err:.2e}")


def check_resample_enumeration() -> CheckResult:
    weights = np.array([0.75, 0.25])
    ok = True
    for offset in np.linspace(0.0, 0.25, 101)[:-1]:
        idx = systematic_indices(weights, 4, float(offset))
        counts = np.bincount(idx, minlength=2)
        ok &= counts[0] == 3 and counts[1] == 1
    return CheckResult("systematic resampling (0.75, 0.25) enumeration", bool(ok), "3+1 split for every offset")


def check_em_recovery() -> CheckResult:
    rng = substream(271, 2)
    q_true = np.array([[0.04, 0.01], [0.01, 0.09]])
    r = 0.01 * np.eye(2)
    cov = q_true + r
    innovations = rng.multivariate_normal(np.zeros(2), cov, size=1000)
    q_est = em_update(innovations, r, np.zeros((2, 2)))
    rel = np.linalg.norm(q_est - q_true) / np.linalg.norm(q_true)
    return CheckResult("EM model-error recovery from innovations", rel <= 0.2, f"relative Frobenius err {rel:.3f}")


def enkf_vs_kf_gap(
    ensemble_size: int = 512, frames: int = 100, seed: int = 11
) -> tuple[float, list[float]]:
    """Worst-frame ratio of |EnKF mean - KF mean| (position) to the KF
    posterior position std, on a linear constant-velocity pedestrian."""
    dt = 0.04
    pref = np.array([1.2, 0.3])
    r_sigma = 0.1
    q_sigma = 0.02
    pref_walk = 0.05
    rng = substream(seed, 9000)

    # Truth and observations.
    positions = [np.array([0.0, 0.0])]
    for _ in range(frames + 2):
        positions.append(positions[-1] + pref * dt)
    zs = [p + r_sigma * rng.standard_normal(2) for p in positions]

    # Shared Gaussian prior after a two-point bootstrap.
    fd = (zs[1] - zs[0]) / dt
    mean0 = np.concatenate([zs[1], fd, fd])
    sig = np.array([r_sigma, r_sigma, 0.5, 0.5, 0.5, 0.5])
    cov0 = np.diag(sig * sig)

    from .learn import whitened_ensemble

    ensemble = Ensemble(0, whitened_ensemble(mean0, sig, ensemble_size, rng))

    # With no neighbors the avoidance step is linear: velocity snaps to the
    # preferred velocity and position integrates it.
    A = np.eye(6)
    A[0:2, 2:4] = 0.0
    A[0:2, 4:6] = dt * np.eye(2)
    A[2:4, 2:4] = 0.0
    A[2:4, 4:6] = np.eye(2)
    Qf = np.zeros((6, 6))
    Qf[0:2, 0:2] = q_sigma * q_sigma * np.eye(2)
    Qf[4:6, 4:6] = pref_walk * pref_walk * np.eye(2)
    H = np.zeros((2, 6))
    H[0:2, 0:2] = np.eye(2)
    R = r_sigma * r_sigma * np.eye(2)

    trace = kalman_filter(A, Qf, H, R, mean0, cov0, zs[2 : frames + 2])

    cfg = RvoConfig(dt=dt)
    empty = NeighborSnapshot.empty()
    ratios = []
    for k, z in enumerate(zs[2 : frames + 2]):
        ensemble = enkf_predict(
            ensemble, q_sigma * q_sigma * np.eye(2), empty, cfg, dt,
            pref_walk_sigma=pref_walk,
        )
        ensemble, _ = enkf_update(ensemble, Vec2(z[0], z[1]), R)
        gap = np.linalg.norm(ensemble.mean()[0:2] - trace.means[k][0:2])
        std = math.sqrt(trace.covariances[k][0, 0] + trace.covariances[k][1, 1])
        ratios.append(gap / std)
    return max(ratios), ratios


def check_enkf_vs_kf() -> CheckResult:
    worst, _ = enkf_vs_kf_gap()
    return CheckResult(
        "EnKF mean vs exact Kalman filter (512 members, 100 frames)",
        worst <= 0.05,
        f"worst |mean gap| = {worst:.3f} of KF posterior std (limit 0.05)",
    )


ALL_CHECKS = (
    check_lp_projection,
    check_lp_random_feasible,
    check_lp3_minimax,
    check_orca_u_vector,
    check_resample_enumeration,
    check_em_recovery,
    check_enkf_vs_kf,
)


def run_all() -> list[CheckResult]:
    return [check() for check in ALL_CHECKS]
