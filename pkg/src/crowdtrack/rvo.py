"""Reciprocal velocity obstacle motion model.

Each agent builds one half-plane constraint per nearby neighbor (the ORCA
constraint, truncated at the time horizon) and picks the feasible velocity
closest to its goal-directed preferred velocity. The same construction is
used three ways: to generate ground-truth crowds, as the particle filter's
transition function, and as the ensemble filter's dynamics.

The scalar functions define the contract; the `batch_*` kernels repeat the
identical arithmetic over numpy rows for throughput and are property-tested
to agree with the scalar path bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._kernels import COINCIDENT_SEPARATION
from .geometry import (
    DegenerateGeometryError,
    HalfPlane,
    Vec2,
    solve_lp2,
    solve_lp3,
)

_TINY = 1e-12


@dataclass(frozen=True)
class AgentState:
    """One simulated pedestrian: a disc with a goal-directed preferred velocity."""

    id: int
    position: Vec2
    velocity: Vec2
    radius: float
    pref_speed: float
    goal: Vec2
    max_speed: float

    def __post_init__(self):
        if not 0.0 < self.radius <= 2.0:
            raise ValueError(f"radius must be in (0, 2] m, got {self.radius}")
        if not (math.isfinite(self.pref_speed) and self.pref_speed >= 0.0):
            raise ValueError(f"pref_speed must be finite and >= 0, got {self.pref_speed}")
        if not (math.isfinite(self.max_speed) and self.max_speed > 0.0):
            raise ValueError(f"max_speed must be finite and positive, got {self.max_speed}")
        if self.max_speed < self.pref_speed:
            raise ValueError(
                f"max_speed {self.max_speed} < pref_speed {self.pref_speed}"
            )


@dataclass(frozen=True)
class RvoConfig:
    time_horizon: float = 2.0  # s, constraint truncation
    dt: float = 0.04  # s, 25 fps frame time
    neighbor_dist: float = 5.0  # m
    max_neighbors: int = 10
    goal_tolerance: float = 0.1  # m

    def __post_init__(self):
        if not 0.0 < self.dt <= self.time_horizon:
            raise ValueError(
                f"need time_horizon >= dt > 0, got tau={self.time_horizon} dt={self.dt}"
            )
        if self.neighbor_dist <= 0.0:
            raise ValueError(f"neighbor_dist must be positive, got {self.neighbor_dist}")
        if self.max_neighbors < 1:
            raise ValueError(f"max_neighbors must be >= 1, got {self.max_neighbors}")
        if self.goal_tolerance < 0.0:
            raise ValueError(f"goal_tolerance must be >= 0, got {self.goal_tolerance}")


@dataclass(frozen=True)
class Crowd:
    agents: tuple[AgentState, ...]
    frame_index: int = 0

    def __post_init__(self):
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique")


def preferred_velocity(agent: AgentState, goal_tolerance: float) -> Vec2:
    """Goal-directed velocity at pref_speed, or zero within goal_tolerance."""
    to_goal = agent.goal - agent.position
    norm = to_goal.norm()
    if norm <= goal_tolerance:
        return Vec2(0.0, 0.0)
    scale = agent.pref_speed / norm
    return Vec2(to_goal.x * scale, to_goal.y * scale)


def _halfplane_from_relative(
    rel: Vec2, rv: Vec2, r_sum: float, self_vel: Vec2, tau: float, dt: float
) -> HalfPlane:
    """ORCA half-plane from the pair's relative geometry.

    rel: other center minus own center; rv: own velocity minus other velocity.
    u is the smallest change in relative velocity escaping the velocity
    obstacle truncated at tau (or, for already-overlapping discs, the
    separating push at the dt scale); the permitted half-plane passes through
    self_vel + u/2, taking the reciprocal half share.
    """
    dist_sq = rel.norm_sq()
    r_sq = r_sum * r_sum

    if dist_sq > r_sq:
        inv_tau = 1.0 / tau
        w = Vec2(rv.x - inv_tau * rel.x, rv.y - inv_tau * rel.y)
        w_len_sq = w.norm_sq()
        dot1 = w.dot(rel)
        if dot1 < 0.0 and dot1 * dot1 > r_sq * w_len_sq:
            # Closest escape is through the truncation arc.
            w_len = math.sqrt(w_len_sq)
            unit_w = Vec2(w.x / w_len, w.y / w_len)
            coef = r_sum * inv_tau - w_len
            u = Vec2(coef * unit_w.x, coef * unit_w.y)
            normal = unit_w
        else:
            # Closest escape is through one of the cone legs.
            leg = math.sqrt(dist_sq - r_sq)
            if rel.cross(w) > 0.0:
                d_x = (rel.x * leg - rel.y * r_sum) / dist_sq
                d_y = (rel.x * r_sum + rel.y * leg) / dist_sq
            else:
                d_x = -((rel.x * leg + rel.y * r_sum) / dist_sq)
                d_y = (rel.x * r_sum - rel.y * leg) / dist_sq
            dot2 = rv.x * d_x + rv.y * d_y
            u = Vec2(dot2 * d_x - rv.x, dot2 * d_y - rv.y)
            normal = Vec2(-d_y, d_x)
    else:
        # Discs already overlap: push apart within one frame time.
        inv_dt = 1.0 / dt
        w = Vec2(rv.x - inv_dt * rel.x, rv.y - inv_dt * rel.y)
        w_len = w.norm()
        if w_len < _TINY:
            dist = math.sqrt(dist_sq)
            unit_w = Vec2(-(rel.x / dist), -(rel.y / dist))
            w_len = 0.0
        else:
            unit_w = Vec2(w.x / w_len, w.y / w_len)
        coef = r_sum * inv_dt - w_len
        u = Vec2(coef * unit_w.x, coef * unit_w.y)
        normal = unit_w

    point = Vec2(self_vel.x + 0.5 * u.x, self_vel.y + 0.5 * u.y)
    return HalfPlane(point, normal)


def compute_orca_halfplane(
    self_agent: AgentState, other: AgentState, tau: float, dt: float
) -> HalfPlane:
    """Permitted-velocity half-plane induced on self_agent by one neighbor."""
    rel = other.position - self_agent.position
    if rel.norm_sq() == 0.0:
        raise DegenerateGeometryError(
            f"coincident agent centers (ids {self_agent.id}, {other.id})"
        )
    rv = self_agent.velocity - other.velocity
    return _halfplane_from_relative(
        rel, rv, self_agent.radius + other.radius, self_agent.velocity, tau, dt
    )


def select_neighbors(
    agent: AgentState, others: list[AgentState], cfg: RvoConfig
) -> list[AgentState]:
    """At most max_neighbors nearest agents within neighbor_dist; ties by id."""
    nd_sq = cfg.neighbor_dist * cfg.neighbor_dist
    ranked = sorted(
        (
            ((o.position - agent.position).norm_sq(), o.id, o)
            for o in others
            if o.id != agent.id
        ),
    )
    return [o for d_sq, _, o in ranked if d_sq <= nd_sq][: cfg.max_neighbors]


def compute_new_velocity(
    agent: AgentState, neighbors: list[AgentState], cfg: RvoConfig
) -> Vec2:
    """Feasible velocity closest to the preferred one, or the least-bad
    velocity when the neighbors' constraints are jointly unsatisfiable."""
    v_pref = preferred_velocity(agent, cfg.goal_tolerance)
    constraints = [
        compute_orca_halfplane(agent, nb, cfg.time_horizon, cfg.dt) for nb in neighbors
    ]
    v, fail = solve_lp2(constraints, v_pref, agent.max_speed)
    if fail is not None:
        v = solve_lp3(constraints, fail, v, agent.max_speed)
    return v


def _synthetic_rel(self_id: int, other_id: int) -> tuple[float, float]:
    """Deterministic stand-in separation for exactly coincident centers."""
    along_x = (self_id - other_id) % 2 == 0
    sign = 1.0 if other_id > self_id else -1.0
    if along_x:
        return sign * COINCIDENT_SEPARATION, 0.0
    return 0.0, sign * COINCIDENT_SEPARATION


def step(crowd: Crowd, cfg: RvoConfig) -> Crowd:
    """Advance every agent by one frame.

    Two phases over an immutable snapshot: all new velocities are computed
    from frame-start state, then positions integrate with the new velocities.
    Coincident centers are separated by a deterministic COINCIDENT_SEPARATION
    nudge before the geometry is built.
    """
    agents = crowd.agents
    n = len(agents)
    if n == 0:
        return Crowd((), crowd.frame_index + 1)

    by_id = sorted(range(n), key=lambda i: agents[i].id)
    ordered = [agents[i] for i in by_id]
    pos = np.array([[a.position.x, a.position.y] for a in ordered])
    vel = np.array([[a.velocity.x, a.velocity.y] for a in ordered])
    rad = np.array([a.radius for a in ordered])
    ids = np.array([a.id for a in ordered], dtype=np.int64)
    max_speed = np.array([a.max_speed for a in ordered])
    goal = np.array([[a.goal.x, a.goal.y] for a in ordered])
    pref_speed = np.array([a.pref_speed for a in ordered])

    v_pref = batch_preferred_velocity(pos, goal, pref_speed, cfg.goal_tolerance)
    allowed = ~np.eye(n, dtype=bool)
    v_new = batch_rvo_velocities(
        pos, vel, rad, ids, max_speed, v_pref, pos, vel, rad, ids, allowed, cfg
    )

    new_agents: list[AgentState] = [None] * n  # type: ignore[list-item]
    dt = cfg.dt
    for row, i in enumerate(by_id):
        a = ordered[row]
        vx, vy = float(v_new[row, 0]), float(v_new[row, 1])
        new_agents[i] = replace(
            a,
            position=Vec2(a.position.x + vx * dt, a.position.y + vy * dt),
            velocity=Vec2(vx, vy),
        )
    return Crowd(tuple(new_agents), crowd.frame_index + 1)


# ---------------------------------------------------------------------------
# Batched driver (compiled kernel + scalar fallback for infeasible rows)
# ---------------------------------------------------------------------------


def batch_preferred_velocity(
    pos: np.ndarray, goal: np.ndarray, pref_speed: np.ndarray, goal_tolerance: float
) -> np.ndarray:
    to_goal = goal - pos
    norm = np.sqrt(to_goal[:, 0] * to_goal[:, 0] + to_goal[:, 1] * to_goal[:, 1])
    far = norm > goal_tolerance
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(far, pref_speed / norm, 0.0)
    return to_goal * scale[:, None]


def batch_rvo_velocities(
    self_pos: np.ndarray,
    self_vel: np.ndarray,
    self_rad: np.ndarray,
    self_ids: np.ndarray,
    max_speed: np.ndarray,
    v_pref: np.ndarray,
    cand_pos: np.ndarray,
    cand_vel: np.ndarray,
    cand_rad: np.ndarray,
    cand_ids: np.ndarray,
    allowed: np.ndarray,
    cfg: RvoConfig,
) -> np.ndarray:
    """New velocities for B independent agents against m shared candidates.

    Candidates must be in ascending-id order (neighbor ties break by id).
    allowed[b, j] masks candidate j for row b (e.g. an agent against
    itself). Matches compute_new_velocity row for row, bit for bit.
    """
    from . import _kernels

    B = self_pos.shape[0]
    ms = np.ascontiguousarray(np.broadcast_to(np.asarray(max_speed, dtype=float), (B,)))
    out_v = np.empty((B, 2))
    out_fail = np.empty(B, dtype=np.int64)
    allowed = np.ascontiguousarray(allowed, dtype=np.bool_)
    _kernels.rvo_velocities(
        np.ascontiguousarray(self_pos, dtype=float),
        np.ascontiguousarray(self_vel, dtype=float),
        np.ascontiguousarray(self_rad, dtype=float),
        np.ascontiguousarray(self_ids, dtype=np.int64),
        ms,
        np.ascontiguousarray(v_pref, dtype=float),
        np.ascontiguousarray(cand_pos, dtype=float),
        np.ascontiguousarray(cand_vel, dtype=float),
        np.ascontiguousarray(cand_rad, dtype=float),
        np.ascontiguousarray(cand_ids, dtype=np.int64),
        allowed,
        cfg.neighbor_dist * cfg.neighbor_dist,
        cfg.max_neighbors,
        cfg.time_horizon,
        cfg.dt,
        out_v,
        out_fail,
    )
    return out_v
