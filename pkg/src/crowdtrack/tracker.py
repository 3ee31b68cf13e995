"""Per-pedestrian particle filter with a pluggable motion model.

Each pedestrian runs an independent filter: particles advance through either
a constant-velocity model or the reciprocal-velocity-obstacle model (against
the previous frame's estimates of all other pedestrians), weights update
under a Gaussian position likelihood, and systematic resampling keeps the
set healthy. An adaptive variant grows and shrinks the particle budget from
the confidence metrics in `adapt`.

Determinism: every (pedestrian, frame) pair draws from its own substream, so
results are independent of thread count and pedestrian iteration order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .adapt import (
    BudgetController,
    lowest_weight_indices,
    motion_model_reliability,
    propagation_reliability,
    update_budget,
)
from .geometry import Vec2
from .rng import TAG_TRACKER, substream
from .rvo import RvoConfig, batch_rvo_velocities
from .scenario import ObservationFrame, ObsEntry

MOTION_MODELS = ("lin", "rvo")

TELEMETRY_HEADER = "frame,id,est_x,est_y,k,d,ess"


@dataclass(frozen=True)
class TrackerConfig:
    motion_model: str = "rvo"
    adaptive: bool = True  # multi-level (adaptive k) vs single-level (fixed k)
    q_sigma: float = 0.15  # m/s, process noise on particle velocity
    r_sigma: float = 0.1  # m, observation noise assumed by the likelihood
    p_min: int = 100
    p_max: int = 1000
    p_add: int = 100
    hold_frames: int = 10
    decay_fraction: float = 0.1
    d_threshold: float = 3.0
    w_threshold: float = 1e-6  # normalized-weight floor for pruning

    def __post_init__(self):
        if self.motion_model not in MOTION_MODELS:
            raise ValueError(f"motion_model must be one of {MOTION_MODELS}")
        if not 0 < self.p_min <= self.p_max:
            raise ValueError(f"need 0 < p_min <= p_max, got {self.p_min}, {self.p_max}")
        if self.p_add < 1:
            raise ValueError(f"p_add must be >= 1, got {self.p_add}")
        if not 0.0 < self.decay_fraction < 1.0:
            raise ValueError(f"decay_fraction must be in (0, 1), got {self.decay_fraction}")
        if self.q_sigma < 0.0:
            raise ValueError(f"q_sigma must be >= 0, got {self.q_sigma}")
        if self.r_sigma <= 0.0:
            raise ValueError(f"r_sigma must be > 0, got {self.r_sigma}")
        if self.w_threshold < 0.0:
            raise ValueError(f"w_threshold must be >= 0, got {self.w_threshold}")

    @property
    def initial_k(self) -> int:
        # Single-level filters pay the full budget; adaptive ones start small.
        return self.p_min if self.adaptive else self.p_max


@dataclass(frozen=True)
class Particle:
    position: Vec2
    velocity: Vec2
    weight: float


@dataclass
class ParticleSet:
    """Weighted hypotheses for one pedestrian, stored as arrays."""

    pedestrian_id: int
    positions: np.ndarray  # (k, 2)
    velocities: np.ndarray  # (k, 2)
    weights: np.ndarray  # (k,), summing to 1

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def particles(self) -> list[Particle]:
        return [
            Particle(
                Vec2(float(p[0]), float(p[1])),
                Vec2(float(v[0]), float(v[1])),
                float(w),
            )
            for p, v, w in zip(self.positions, self.velocities, self.weights)
        ]

    @staticmethod
    def spawn(pedestrian_id: int, position: Vec2, velocity: Vec2, k: int) -> "ParticleSet":
        return ParticleSet(
            pedestrian_id,
            np.tile([position.x, position.y], (k, 1)),
            np.tile([velocity.x, velocity.y], (k, 1)),
            np.full(k, 1.0 / k),
        )


@dataclass(frozen=True)
class NeighborSnapshot:
    """Previous-frame estimates of every tracked pedestrian, id-sorted."""

    ids: np.ndarray  # (m,)
    positions: np.ndarray  # (m, 2)
    velocities: np.ndarray  # (m, 2)
    radii: np.ndarray  # (m,)

    @staticmethod
    def empty() -> "NeighborSnapshot":
        return NeighborSnapshot(
            np.empty(0, dtype=np.int64), np.empty((0, 2)), np.empty((0, 2)), np.empty(0)
        )


def ess(weights: np.ndarray) -> float:
    """Effective sample size (sum of squared weights, inverted)."""
    return float(1.0 / np.sum(np.square(weights)))


def predict(
    ps: ParticleSet,
    model: str,
    neighbors: NeighborSnapshot,
    rvo_cfg: RvoConfig,
    dt: float,
    q_sigma: float,
    rng: np.random.Generator,
    pref_velocity: Vec2 | None = None,
    radius: float = 0.25,
    max_speed: float = 2.0,
) -> ParticleSet:
    """Advance every particle one frame through the motion model, then add
    process noise (q_sigma on velocity, q_sigma * dt on position)."""
    k = ps.k
    if model == "lin":
        new_pos = ps.positions + ps.velocities * dt
        new_vel = ps.velocities.copy()
    elif model == "rvo":
        if pref_velocity is None:
            raise ValueError("rvo prediction requires a preferred velocity")
        allowed = np.broadcast_to(neighbors.ids[None, :] != ps.pedestrian_id, (k, len(neighbors.ids)))
        v_new = batch_rvo_velocities(
            ps.positions,
            ps.velocities,
            np.full(k, radius),
            np.full(k, ps.pedestrian_id, dtype=np.int64),
            np.full(k, max_speed),
            np.tile([pref_velocity.x, pref_velocity.y], (k, 1)),
            neighbors.positions,
            neighbors.velocities,
            neighbors.radii,
            neighbors.ids,
            allowed,
            rvo_cfg,
        )
        new_pos = ps.positions + v_new * dt
        new_vel = v_new
    else:
        raise ValueError(f"unknown motion model {model!r}")

    new_vel = new_vel + q_sigma * rng.standard_normal((k, 2))
    new_pos = new_pos + (q_sigma * dt) * rng.standard_normal((k, 2))
    return ParticleSet(ps.pedestrian_id, new_pos, new_vel, ps.weights.copy())


def weight_update(
    ps: ParticleSet, obs_position: Vec2, r_sigma: float
) -> tuple[ParticleSet, bool]:
    """Gaussian position likelihood. Returns the reweighted set and an
    underflow flag (True when every particle's likelihood vanished and the
    weights were reset to uniform)."""
    if r_sigma <= 0.0:
        raise ValueError(f"r_sigma must be > 0, got {r_sigma}")
    dx = ps.positions[:, 0] - obs_position.x
    dy = ps.positions[:, 1] - obs_position.y
    log_like = -(dx * dx + dy * dy) / (2.0 * r_sigma * r_sigma)
    new_w = ps.weights * np.exp(log_like)
    total = new_w.sum()
    if total <= 0.0 or not np.isfinite(total):
        return (
            ParticleSet(
                ps.pedestrian_id,
                ps.positions.copy(),
                ps.velocities.copy(),
                np.full(ps.k, 1.0 / ps.k),
            ),
            True,
        )
    return ParticleSet(ps.pedestrian_id, ps.positions.copy(), ps.velocities.copy(), new_w / total), False


def systematic_indices(weights: np.ndarray, count: int, offset: float) -> np.ndarray:
    """Systematic selection: indices hit by offset + i/count on the CDF,
    offset in [0, 1/count)."""
    cum = np.cumsum(weights)
    points = offset + np.arange(count) / count
    idx = np.searchsorted(cum, points, side="right")
    return np.clip(idx, 0, len(weights) - 1)


def resample(ps: ParticleSet, rng: np.random.Generator, count: int | None = None) -> ParticleSet:
    """Systematic resampling to `count` particles (defaults to the current
    count) with one shared uniform offset; output weights are uniform."""
    k_new = ps.k if count is None else count
    offset = rng.random() / k_new
    idx = systematic_indices(ps.weights, k_new, offset)
    return ParticleSet(
        ps.pedestrian_id,
        ps.positions[idx],
        ps.velocities[idx],
        np.full(k_new, 1.0 / k_new),
    )


def estimate(ps: ParticleSet) -> Vec2:
    """Weighted mean particle position (the filter's tracked state)."""
    mean = ps.weights @ ps.positions
    return Vec2(float(mean[0]), float(mean[1]))


def estimate_velocity(ps: ParticleSet) -> Vec2:
    mean = ps.weights @ ps.velocities
    return Vec2(float(mean[0]), float(mean[1]))


@dataclass(frozen=True)
class TelemetryRow:
    frame: int
    id: int
    est_x: float
    est_y: float
    k: int
    d: float
    ess: float

    def as_csv(self) -> str:
        return (
            f"{self.frame},{self.id},{self.est_x!r},{self.est_y!r},"
            f"{self.k},{self.d!r},{self.ess!r}"
        )


class PedestrianTracker:
    """Filter state machine for a single pedestrian.

    Spawns its particle set from the first two sightings (position anchored
    to the newest observation, velocity by finite difference), then runs
    predict / update / adapt / resample each frame.
    """

    def __init__(
        self,
        ped_id: int,
        cfg: TrackerConfig,
        rvo_cfg: RvoConfig,
        radius: float,
        max_speed: float,
        seed: int,
    ):
        self.id = ped_id
        self.cfg = cfg
        self.rvo_cfg = rvo_cfg
        self.radius = radius
        self.max_speed = max_speed
        self.seed = seed
        self.ps: ParticleSet | None = None
        self.controller = BudgetController(
            k=cfg.initial_k,
            d_threshold=cfg.d_threshold,
            p_add=cfg.p_add,
            p_min=cfg.p_min,
            p_max=cfg.p_max,
            hold_frames=cfg.hold_frames,
            decay_fraction=cfg.decay_fraction,
        )
        self.pref_velocity: Vec2 | None = None  # learned preferred velocity
        self.est_pos: Vec2 | None = None
        self.est_vel: Vec2 = Vec2(0.0, 0.0)
        self._pending_obs: tuple[int, Vec2] | None = None
        self.propagated = 0  # total particles pushed through the motion model

    def model_prediction(self, snapshot: NeighborSnapshot) -> Vec2 | None:
        """One deterministic motion-model step from the last estimate (the
        untrained fallback for the disagreement metric)."""
        if self.est_pos is None:
            return None
        dt = self.rvo_cfg.dt
        if self.cfg.motion_model == "lin":
            return Vec2(self.est_pos.x + self.est_vel.x * dt, self.est_pos.y + self.est_vel.y * dt)
        pref = self.pref_velocity if self.pref_velocity is not None else self.est_vel
        allowed = (snapshot.ids != self.id)[None, :]
        v = batch_rvo_velocities(
            np.array([[self.est_pos.x, self.est_pos.y]]),
            np.array([[self.est_vel.x, self.est_vel.y]]),
            np.array([self.radius]),
            np.array([self.id], dtype=np.int64),
            np.array([self.max_speed]),
            np.array([[pref.x, pref.y]]),
            snapshot.positions,
            snapshot.velocities,
            snapshot.radii,
            snapshot.ids,
            allowed,
            self.rvo_cfg,
        )
        return Vec2(
            self.est_pos.x + float(v[0, 0]) * dt, self.est_pos.y + float(v[0, 1]) * dt
        )

    def step(
        self,
        frame_index: int,
        entry: ObsEntry | None,
        snapshot: NeighborSnapshot,
        t_model: Vec2 | None,
    ) -> TelemetryRow | None:
        visible = entry is not None and entry.visible
        if self.ps is None:
            return self._bootstrap(frame_index, entry if visible else None)

        cfg = self.cfg
        rng = substream(self.seed, TAG_TRACKER, self.id, frame_index)
        ps = predict(
            self.ps,
            cfg.motion_model,
            snapshot,
            self.rvo_cfg,
            self.rvo_cfg.dt,
            cfg.q_sigma,
            rng,
            pref_velocity=(
                self.pref_velocity if self.pref_velocity is not None else self.est_vel
            ),
            radius=self.radius,
            max_speed=self.max_speed,
        )
        self.propagated += ps.k

        if visible:
            assert entry is not None and entry.position is not None
            ps, _underflow = weight_update(ps, entry.position, cfg.r_sigma)

        t_pf = estimate(ps)
        if t_model is None:
            t_model = self.model_prediction(snapshot) or t_pf
        d = motion_model_reliability(t_pf, t_model, cfg.r_sigma)
        sample_size = ess(ps.weights)

        need_resample = sample_size < ps.k / 2.0
        if cfg.adaptive:
            ps, need_resample = self._adapt_budget(ps, d, need_resample)

        if need_resample:
            ps = resample(ps, rng, count=self.controller.k)

        self.ps = ps
        self.est_pos = estimate(ps)
        self.est_vel = estimate_velocity(ps)
        return TelemetryRow(
            frame_index, self.id, self.est_pos.x, self.est_pos.y, self.controller.k, d, sample_size
        )

    def _adapt_budget(
        self, ps: ParticleSet, d: float, need_resample: bool
    ) -> tuple[ParticleSet, bool]:
        cfg = self.cfg
        prune, short = propagation_reliability(ps.weights, cfg.w_threshold, cfg.p_min)
        if len(prune):
            keep = np.setdiff1d(np.arange(ps.k), prune, assume_unique=True)
            if len(keep) == 0:  # pathological threshold: keep the best particle
                keep = np.array([int(np.argmax(ps.weights))])
            ps = _take(ps, keep, renormalize=True)
            # Pruning shrinks the budget; dropping under p_min forces a redraw.
            self.controller = replace(self.controller, k=max(ps.k, cfg.p_min))
            need_resample = need_resample or short

        update = update_budget(self.controller, d)
        if update.removed > 0:
            keep = np.setdiff1d(
                np.arange(ps.k), lowest_weight_indices(ps.weights, update.removed), assume_unique=True
            )
            ps = _take(ps, keep, renormalize=True)
            need_resample = True  # any budget change redraws the set
        if update.resample:
            need_resample = True
        self.controller = update.controller
        return ps, need_resample

    def _bootstrap(self, frame_index: int, entry: ObsEntry | None) -> TelemetryRow | None:
        """Collect the first two sightings; no telemetry before the first."""
        if entry is not None:
            assert entry.position is not None
            z = entry.position
            if self._pending_obs is not None:
                prev_frame, z_prev = self._pending_obs
                span = (frame_index - prev_frame) * self.rvo_cfg.dt
                vel = Vec2((z.x - z_prev.x) / span, (z.y - z_prev.y) / span)
                self.ps = self._spawn(frame_index, z, vel, span)
                self.est_vel = vel
            else:
                self._pending_obs = (frame_index, z)
            self.est_pos = z
        if self.est_pos is None:
            return None
        k = self.ps.k if self.ps is not None else 0
        return TelemetryRow(
            frame_index, self.id, self.est_pos.x, self.est_pos.y, k, 0.0, float(k)
        )

    def _spawn(self, frame_index: int, z: Vec2, vel: Vec2, span: float) -> ParticleSet:
        """Particle set anchored at the newest sighting.

        With process noise enabled, positions spread by the assumed
        observation noise and velocities by the finite-difference noise
        (sigma * sqrt(2) / span), which the weight updates then thin out.
        A noise-free filter (q_sigma = 0) spawns deterministically.
        """
        if self.cfg.q_sigma == 0.0:
            return ParticleSet.spawn(self.id, z, vel, self.controller.k)
        speed = vel.norm()
        if speed > self.max_speed:
            vel = vel * (self.max_speed / speed)
        ps = ParticleSet.spawn(self.id, z, vel, self.controller.k)
        rng = substream(self.seed, TAG_TRACKER, self.id, frame_index)
        fd_sigma = min(math.sqrt(2.0) * self.cfg.r_sigma / span, self.max_speed)
        vel_sigma = min(math.hypot(self.cfg.q_sigma, fd_sigma), self.max_speed)
        ps.positions += self.cfg.r_sigma * rng.standard_normal((ps.k, 2))
        ps.velocities += vel_sigma * rng.standard_normal((ps.k, 2))
        return ps


def _take(ps: ParticleSet, idx: np.ndarray, renormalize: bool) -> ParticleSet:
    w = ps.weights[idx]
    if renormalize:
        total = w.sum()
        w = w / total if total > 0.0 else np.full(len(idx), 1.0 / len(idx))
    return ParticleSet(ps.pedestrian_id, ps.positions[idx], ps.velocities[idx], w)


class MultiTracker:
    """All per-pedestrian filters plus the shared estimate snapshot."""

    def __init__(
        self,
        ped_ids: list[int],
        cfg: TrackerConfig,
        rvo_cfg: RvoConfig,
        known: dict[int, tuple[float, float]],  # id -> (radius, max_speed)
        seed: int,
        threads: int = 1,
    ):
        self.cfg = cfg
        self.rvo_cfg = rvo_cfg
        self.threads = max(1, threads)
        self.trackers = {
            pid: PedestrianTracker(pid, cfg, rvo_cfg, known[pid][0], known[pid][1], seed)
            for pid in sorted(ped_ids)
        }

    def set_motion_params(self, pref_by_id: dict[int, Vec2]) -> None:
        for pid, pref in pref_by_id.items():
            self.trackers[pid].pref_velocity = pref

    @property
    def propagation_count(self) -> int:
        return sum(t.propagated for t in self.trackers.values())

    def estimates(self) -> dict[int, Vec2]:
        return {pid: t.est_pos for pid, t in self.trackers.items() if t.est_pos is not None}

    def _snapshot(self) -> NeighborSnapshot:
        rows = [
            (pid, t.est_pos, t.est_vel, t.radius)
            for pid, t in self.trackers.items()
            if t.est_pos is not None
        ]
        if not rows:
            return NeighborSnapshot.empty()
        return NeighborSnapshot(
            ids=np.array([r[0] for r in rows], dtype=np.int64),
            positions=np.array([[r[1].x, r[1].y] for r in rows]),
            velocities=np.array([[r[2].x, r[2].y] for r in rows]),
            radii=np.array([r[3] for r in rows]),
        )

    def step_frame(
        self,
        obs_frame: ObservationFrame,
        model_predictions: dict[int, Vec2] | None = None,
    ) -> list[TelemetryRow]:
        snapshot = self._snapshot()  # frozen previous-frame estimates
        by_id = obs_frame.by_id()
        preds = model_predictions or {}

        def run(pid: int) -> TelemetryRow | None:
            return self.trackers[pid].step(
                obs_frame.frame_index, by_id.get(pid), snapshot, preds.get(pid)
            )

        ids = list(self.trackers)
        if self.threads > 1 and len(ids) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                rows = list(pool.map(run, ids))
        else:
            rows = [run(pid) for pid in ids]
        return [r for r in rows if r is not None]


def write_telemetry(path: str, rows: list[TelemetryRow]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(TELEMETRY_HEADER + "\n")
        for row in rows:
            f.write(row.as_csv() + "\n")
