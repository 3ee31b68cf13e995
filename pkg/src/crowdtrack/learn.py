"""High-level motion model: per-pedestrian ensemble Kalman filtering with
the collision-avoidance dynamics, plus an expectation-maximization step that
re-estimates the model-error covariance from innovation statistics.

The ensemble state is (position, velocity, preferred velocity); carrying the
preferred velocity in the state is what lets the filter learn each
pedestrian's motion parameters from observations. A trained model supplies
the tracker's particle prediction with the learned preferred velocity and
the confidence level with its one-step state prediction; it is re-trained on
the tracker's own output every retrain_interval frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Vec2, psd_clip, require_covariance
from .rng import TAG_LEARN, substream
from .rvo import RvoConfig, batch_rvo_velocities
from .scenario import FORMAT_VERSION, ObservationFrame, ParseError
from .tracker import NeighborSnapshot


@dataclass(frozen=True)
class MotionParams:
    pref_velocity_est: Vec2
    Q: np.ndarray  # 2x2 process (model-error) covariance, position block
    R: np.ndarray  # 2x2 observation noise covariance
    retrain_interval: int = 50

    def __post_init__(self):
        require_covariance(self.Q)
        require_covariance(self.R)
        if self.retrain_interval < 1:
            raise ValueError(f"retrain_interval must be >= 1, got {self.retrain_interval}")


@dataclass
class Ensemble:
    """State samples for one pedestrian: columns (px, py, vx, vy, prefx, prefy)."""

    pedestrian_id: int
    members: np.ndarray  # (M, 6)

    def __post_init__(self):
        if self.members.ndim != 2 or self.members.shape[1] != 6:
            raise ValueError(f"members must be (M, 6), got {self.members.shape}")
        if self.members.shape[0] < 2:
            raise ValueError("ensemble needs at least 2 members")
        if not np.all(np.isfinite(self.members)):
            raise ValueError("ensemble members must be finite")

    @property
    def size(self) -> int:
        return self.members.shape[0]

    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)


@dataclass(frozen=True)
class LearnConfig:
    ensemble_size: int = 64
    train_frames: int = 50
    retrain_interval: int = 50
    r_sigma: float = 0.1  # observation noise std assumed by the filter
    q_init_sigma: float = 0.02  # m/frame, initial model-error std
    init_vel_sigma: float = 0.5  # m/s, prior spread on velocity
    init_pref_sigma: float = 0.5  # m/s, prior spread on preferred velocity
    # Random-walk std on the preferred velocity (m/s per frame). Keeps the
    # parameter ensemble from collapsing, so a pedestrian who turns or stops
    # can still be re-learned mid-run.
    pref_walk_sigma: float = 0.05

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValueError(f"ensemble_size must be >= 2, got {self.ensemble_size}")
        if self.train_frames < 2:
            raise ValueError(f"train_frames must be >= 2, got {self.train_frames}")
        if self.retrain_interval < 1:
            raise ValueError("retrain_interval must be >= 1")
        if self.r_sigma < 0.0 or self.q_init_sigma < 0.0 or self.pref_walk_sigma < 0.0:
            raise ValueError("noise scales must be >= 0")

    def r_matrix(self) -> np.ndarray:
        return self.r_sigma * self.r_sigma * np.eye(2)

    def q_matrix(self) -> np.ndarray:
        return self.q_init_sigma * self.q_init_sigma * np.eye(2)


def _sym_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root (eigenvalue form, so exact zeros are fine)."""
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T


def whitened_ensemble(
    mean: np.ndarray, spread: np.ndarray, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Gaussian samples re-centered and re-scaled so the sample mean is
    exactly `mean` and the sample covariance exactly diag(spread^2)."""
    dim = len(mean)
    if size <= dim:
        raise ValueError(f"ensemble size {size} must exceed state dimension {dim}")
    draws = rng.standard_normal((size, dim))
    anomalies = draws - draws.mean(axis=0)
    cov = anomalies.T @ anomalies / (size - 1)
    vals, vecs = np.linalg.eigh(cov)
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    return mean + (anomalies @ inv_sqrt) * spread


def _exact_noise_columns(anomalies: np.ndarray, n_cols: int) -> np.ndarray:
    """(M, n_cols) unit-covariance perturbation columns with exact sample
    mean 0, exact identity sample covariance, and exact zero cross-covariance
    with the given anomaly columns.

    Orthogonalizing deterministic basis vectors against [1, anomalies] makes
    injected model error carry precisely its nominal moments, so the
    ensemble covariance recursion matches the exact filter on linear
    problems (sampled noise would leave O(1/sqrt(M)) residuals).
    """
    M = anomalies.shape[0]
    protected = np.column_stack([np.ones(M), anomalies])
    m_idx = np.arange(M)
    for freq in range(1, M // 2):
        columns = []
        for c in range(n_cols):
            phase = 2.0 * np.pi * (freq + c // 2) * (m_idx + 0.5) / M
            columns.append(np.cos(phase) if c % 2 == 0 else np.sin(phase))
        stacked = np.column_stack([protected] + columns)
        q_full, r_diag = np.linalg.qr(stacked)
        # Full rank iff every wave column adds a direction of its own.
        lead = np.abs(np.diag(r_diag)[protected.shape[1] :])
        if lead.min() > 1e-8:
            return math.sqrt(M - 1) * q_full[:, protected.shape[1] :]
    raise ValueError("could not build noise directions orthogonal to the ensemble")


def enkf_predict(
    e: Ensemble,
    Q: np.ndarray,
    neighbors: NeighborSnapshot,
    rvo_cfg: RvoConfig,
    dt: float,
    radius: float = 0.25,
    max_speed: float = 2.0,
    pref_walk_sigma: float = 0.0,
) -> Ensemble:
    """Advance each member through one collision-avoidance step driven by its
    own preferred-velocity sample, then inject the model-error covariance Q
    into the position spread and the preferred-velocity random walk into the
    parameter spread (exact-moment deterministic injection)."""
    M = e.size
    allowed = np.broadcast_to(neighbors.ids[None, :] != e.pedestrian_id, (M, len(neighbors.ids)))
    v_new = batch_rvo_velocities(
        e.members[:, 0:2],
        e.members[:, 2:4],
        np.full(M, radius),
        np.full(M, e.pedestrian_id, dtype=np.int64),
        np.full(M, max_speed),
        e.members[:, 4:6],
        neighbors.positions,
        neighbors.velocities,
        neighbors.radii,
        neighbors.ids,
        allowed,
        rvo_cfg,
    )
    new = np.empty_like(e.members)
    new[:, 0:2] = e.members[:, 0:2] + v_new * dt
    new[:, 2:4] = v_new
    new[:, 4:6] = e.members[:, 4:6]
    inject_q = bool(np.any(Q))
    inject_pref = pref_walk_sigma > 0.0
    if inject_q or inject_pref:
        cols = _exact_noise_columns(new - new.mean(axis=0), 4)
        if inject_q:
            new[:, 0:2] += cols[:, 0:2] @ _sym_sqrt(Q).T
        if inject_pref:
            new[:, 4:6] += pref_walk_sigma * cols[:, 2:4]
    return Ensemble(e.pedestrian_id, new)


def enkf_update(e: Ensemble, z: Vec2, R: np.ndarray) -> tuple[Ensemble, bool]:
    """Deterministic square-root ensemble update toward the observed position.

    The mean moves by the Kalman gain built from the ensemble's sample
    covariances; the anomalies shrink through the serial square-root form,
    which reproduces the exact posterior covariance for any PSD R (the two
    observation components are processed independently in R's eigenbasis).
    Returns the updated ensemble and a flag set when the innovation variance
    needed regularization.
    """
    X = e.members.copy()
    M = e.size
    denom = M - 1

    # Rotate observation space so R is diagonal; process components serially.
    r_vals, W = np.linalg.eigh(0.5 * (R + R.T))
    r_vals = np.maximum(r_vals, 0.0)
    z_rot = W.T @ np.array([z.x, z.y])

    degenerate = False
    for comp in range(2):
        mean = X.mean(axis=0)
        anomalies = X - mean
        y = anomalies[:, 0:2] @ W[:, comp]  # observed-component anomalies
        s = y @ y / denom + r_vals[comp]
        if s <= 1e-12 * max(float(np.abs(X[:, 0:2]).max()) ** 2, 1.0):
            s += 1e-9
            degenerate = True
        gain = (anomalies.T @ y) / (denom * s)  # (6,)
        obs_mean = mean[0:2] @ W[:, comp]
        X += np.outer(np.ones(M), gain) * (z_rot[comp] - obs_mean)
        # Square-root anomaly shrink: exact posterior variance.
        alpha = 1.0 / (1.0 + math.sqrt(r_vals[comp] / s))
        X -= alpha * np.outer(y, gain)
    return Ensemble(e.pedestrian_id, X), degenerate


def em_update(innovations: np.ndarray, R: np.ndarray, prev_Q: np.ndarray) -> np.ndarray:
    """M-step for the model-error covariance: the innovation sample
    covariance minus R, projected onto the PSD cone. Windows shorter than 2
    leave Q unchanged."""
    innovations = np.asarray(innovations, dtype=float).reshape(-1, 2)
    if len(innovations) < 2:
        return prev_Q
    sample_cov = np.cov(innovations, rowvar=False, ddof=1)
    return psd_clip(sample_cov - R)


def predict_t_rvo(
    position: Vec2,
    velocity: Vec2,
    pref_velocity: Vec2,
    self_id: int,
    neighbors: NeighborSnapshot,
    rvo_cfg: RvoConfig,
    dt: float,
    radius: float = 0.25,
    max_speed: float = 2.0,
) -> Vec2:
    """One deterministic motion-model step from a state estimate; the
    prediction the confidence level compares the tracker against."""
    allowed = (neighbors.ids != self_id)[None, :]
    v = batch_rvo_velocities(
        np.array([[position.x, position.y]]),
        np.array([[velocity.x, velocity.y]]),
        np.array([radius]),
        np.array([self_id], dtype=np.int64),
        np.array([max_speed]),
        np.array([[pref_velocity.x, pref_velocity.y]]),
        neighbors.positions,
        neighbors.velocities,
        neighbors.radii,
        neighbors.ids,
        allowed,
        rvo_cfg,
    )
    return Vec2(position.x + float(v[0, 0]) * dt, position.y + float(v[0, 1]) * dt)


@dataclass
class _PedLearnState:
    ensemble: Ensemble | None = None
    pending: tuple[int, Vec2] | None = None
    last_pos: Vec2 | None = None  # best position guess even before init
    innovations: list[np.ndarray] = field(default_factory=list)
    Q: np.ndarray | None = None


class EnkfLearner:
    """Joint driver for all per-pedestrian ensembles.

    Runs against raw observations during training and against tracker
    estimates afterwards; pedestrians interact only through the frozen
    mean-state snapshot of the previous frame.
    """

    def __init__(
        self,
        ped_ids: list[int],
        known: dict[int, tuple[float, float]],  # id -> (radius, max_speed)
        rvo_cfg: RvoConfig,
        cfg: LearnConfig,
        seed: int,
    ):
        self.rvo_cfg = rvo_cfg
        self.cfg = cfg
        self.seed = seed
        self.known = known
        self.R = cfg.r_matrix()
        self.states = {pid: _PedLearnState(Q=cfg.q_matrix()) for pid in sorted(ped_ids)}
        self._frames_since_em = 0

    # -- snapshot of current best mean states, id-sorted ------------------

    def snapshot(self) -> NeighborSnapshot:
        ids, pos, vel, rad = [], [], [], []
        for pid, st in self.states.items():
            if st.ensemble is not None:
                m = st.ensemble.mean()
                ids.append(pid)
                pos.append([m[0], m[1]])
                vel.append([m[2], m[3]])
                rad.append(self.known[pid][0])
            elif st.last_pos is not None:
                ids.append(pid)
                pos.append([st.last_pos.x, st.last_pos.y])
                vel.append([0.0, 0.0])
                rad.append(self.known[pid][0])
        if not ids:
            return NeighborSnapshot.empty()
        return NeighborSnapshot(
            np.array(ids, dtype=np.int64), np.array(pos), np.array(vel), np.array(rad)
        )

    def model_predictions(self) -> dict[int, Vec2]:
        """Deterministic one-step predictions from the current means."""
        snap = self.snapshot()
        out: dict[int, Vec2] = {}
        for pid, st in self.states.items():
            if st.ensemble is None:
                continue
            m = st.ensemble.mean()
            radius, max_speed = self.known[pid]
            out[pid] = predict_t_rvo(
                Vec2(m[0], m[1]),
                Vec2(m[2], m[3]),
                Vec2(m[4], m[5]),
                pid,
                snap,
                self.rvo_cfg,
                self.rvo_cfg.dt,
                radius=radius,
                max_speed=max_speed,
            )
        return out

    # -- filtering ---------------------------------------------------------

    def advance(self, frame_index: int, observed: dict[int, Vec2]) -> None:
        """One filter step against whatever positions were observed this
        frame (raw detections during training, tracker output afterwards)."""
        snap = self.snapshot()
        dt = self.rvo_cfg.dt
        for pid, st in self.states.items():
            z = observed.get(pid)
            if st.ensemble is None:
                if z is not None:
                    rng = substream(self.seed, TAG_LEARN, pid, frame_index)
                    self._bootstrap(pid, st, frame_index, z, rng)
                continue
            radius, max_speed = self.known[pid]
            st.ensemble = enkf_predict(
                st.ensemble, st.Q, snap, self.rvo_cfg, dt,
                radius=radius, max_speed=max_speed,
                pref_walk_sigma=self.cfg.pref_walk_sigma,
            )
            if z is not None:
                mean = st.ensemble.mean()
                st.innovations.append(np.array([z.x - mean[0], z.y - mean[1]]))
                st.ensemble, _ = enkf_update(st.ensemble, z, self.R)
                st.last_pos = z
        self._frames_since_em += 1
        if self._frames_since_em >= self.cfg.retrain_interval:
            self.refresh_model_error()

    def _bootstrap(
        self, pid: int, st: _PedLearnState, frame_index: int, z: Vec2, rng: np.random.Generator
    ) -> None:
        st.last_pos = z
        if st.pending is None:
            st.pending = (frame_index, z)
            return
        prev_frame, z_prev = st.pending
        span = (frame_index - prev_frame) * self.rvo_cfg.dt
        max_speed = self.known[pid][1]
        fd = np.array([(z.x - z_prev.x) / span, (z.y - z_prev.y) / span])
        # The finite-difference velocity carries the differenced observation
        # noise (sigma * sqrt(2) / span); the prior spread must cover it or
        # the true velocity starts outside the ensemble. Both the mean and
        # the spread are capped at the known speed limit, beyond which the
        # dynamics clip and the radial component stops being identifiable.
        speed = float(np.hypot(fd[0], fd[1]))
        if speed > max_speed:
            fd = fd * (max_speed / speed)
        fd_sigma = min(math.sqrt(2.0) * self.cfg.r_sigma / span, max_speed)
        vel_sigma = min(math.hypot(self.cfg.init_vel_sigma, fd_sigma), max_speed)
        pref_sigma = min(math.hypot(self.cfg.init_pref_sigma, fd_sigma), max_speed)
        mean0 = np.concatenate([[z.x, z.y], fd, fd])
        spread = np.array(
            [self.cfg.r_sigma, self.cfg.r_sigma, vel_sigma, vel_sigma, pref_sigma, pref_sigma]
        )
        st.ensemble = Ensemble(
            pid, whitened_ensemble(mean0, spread, self.cfg.ensemble_size, rng)
        )

    def refresh_model_error(self) -> None:
        for st in self.states.values():
            if st.innovations:
                st.Q = em_update(np.array(st.innovations), self.R, st.Q)
                st.innovations.clear()
        self._frames_since_em = 0

    def motion_params(self) -> dict[int, MotionParams]:
        out = {}
        for pid, st in self.states.items():
            if st.ensemble is None:
                continue
            m = st.ensemble.mean()
            out[pid] = MotionParams(
                pref_velocity_est=Vec2(m[4], m[5]),
                Q=st.Q.copy(),
                R=self.R.copy(),
                retrain_interval=self.cfg.retrain_interval,
            )
        return out


def train(
    observations: list[ObservationFrame],
    known: dict[int, tuple[float, float]],
    rvo_cfg: RvoConfig,
    cfg: LearnConfig,
    seed: int,
) -> tuple[dict[int, MotionParams], EnkfLearner]:
    """Estimate per-pedestrian motion parameters from the first training
    frames. Returns the learned parameters and the live learner (so tracking
    can keep refining them)."""
    ped_ids = sorted({e.id for frame in observations for e in frame.entries})
    learner = EnkfLearner(ped_ids, known, rvo_cfg, cfg, seed)
    window = observations[: cfg.train_frames]
    for frame in window:
        observed = {
            e.id: e.position for e in frame.entries if e.visible and e.position is not None
        }
        learner.advance(frame.frame_index, observed)
    learner.refresh_model_error()
    return learner.motion_params(), learner


# ---------------------------------------------------------------------------
# Serialization (same line-oriented format as the scenario files)
# ---------------------------------------------------------------------------


def save_motion_params(path: str, params: dict[int, MotionParams]) -> None:
    lines = [f"version,{FORMAT_VERSION}"]
    for pid in sorted(params):
        p = params[pid]
        lines.append(
            "params,"
            + ",".join(
                [
                    str(pid),
                    repr(p.pref_velocity_est.x),
                    repr(p.pref_velocity_est.y),
                    repr(float(p.Q[0, 0])),
                    repr(float(p.Q[0, 1])),
                    repr(float(p.Q[1, 1])),
                    repr(float(p.R[0, 0])),
                    repr(float(p.R[0, 1])),
                    repr(float(p.R[1, 1])),
                    str(p.retrain_interval),
                ]
            )
        )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_motion_params(path: str) -> dict[int, MotionParams]:
    from .scenario import _parse_float, _parse_int, _read_lines

    out: dict[int, MotionParams] = {}
    for line_no, fields in _read_lines(path):
        if fields[0] != "params" or len(fields) != 11:
            raise ParseError(path, line_no, "expected params record with 10 fields")
        pid = _parse_int(path, line_no, "id", fields[1])
        vals = [_parse_float(path, line_no, f"f{i}", fields[i]) for i in range(2, 10)]
        out[pid] = MotionParams(
            pref_velocity_est=Vec2(vals[0], vals[1]),
            Q=np.array([[vals[2], vals[3]], [vals[3], vals[4]]]),
            R=np.array([[vals[5], vals[6]], [vals[6], vals[7]]]),
            retrain_interval=_parse_int(path, line_no, "retrain_interval", fields[10]),
        )
    return out
