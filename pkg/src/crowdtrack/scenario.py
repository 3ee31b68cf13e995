"""Synthetic crowd scenarios, ground-truth simulation, and the observation
model (isotropic Gaussian position noise plus renewal-process occlusion).

All randomness is seeded; a (scenario seed, observation seed) pair fixes
every byte of generated output. Files are line-oriented UTF-8 CSV with a
`version,1` header; floats are written with repr() so they parse back
bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Vec2
from .rng import TAG_OBS_NOISE, TAG_OCCLUSION, TAG_SCENARIO, substream
from .rvo import AgentState, Crowd, RvoConfig, step

FORMAT_VERSION = 1
SCENARIO_KINDS = ("circle", "crossing", "hallway", "random")

DEFAULT_RADIUS = 0.25
DEFAULT_PREF_SPEED = 1.2
DEFAULT_MAX_SPEED = 2.0


class ScenarioCapacityError(ValueError):
    """Raised when random placement cannot satisfy the non-overlap invariant."""


class ParseError(ValueError):
    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True)
class Scenario:
    name: str
    agents: tuple[AgentState, ...]
    cfg: RvoConfig
    frames: int
    seed: int

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        agents = self.agents
        for i in range(len(agents)):
            for j in range(i + 1, len(agents)):
                gap = (agents[i].position - agents[j].position).norm()
                r_sum = agents[i].radius + agents[j].radius
                if gap < r_sum:
                    raise ValueError(
                        f"agents {agents[i].id} and {agents[j].id} overlap at t=0 "
                        f"(distance {gap:.4f} < {r_sum:.4f})"
                    )


@dataclass(frozen=True)
class ObsModel:
    noise_sigma: float = 0.1  # m, isotropic Gaussian std dev
    occlusion_rate: float = 0.0  # per agent per visible frame
    occlusion_min: int = 3  # frames, contiguous dropout window
    occlusion_max: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0.0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.occlusion_rate <= 1.0:
            raise ValueError(f"occlusion_rate must be in [0, 1], got {self.occlusion_rate}")
        if not 0 <= self.occlusion_min <= self.occlusion_max:
            raise ValueError(
                f"need 0 <= occlusion_min <= occlusion_max, got "
                f"{self.occlusion_min}..{self.occlusion_max}"
            )


@dataclass(frozen=True)
class ObsEntry:
    id: int
    position: Vec2 | None  # None exactly when not visible
    visible: bool


@dataclass(frozen=True)
class ObservationFrame:
    frame_index: int
    entries: tuple[ObsEntry, ...] = field(default_factory=tuple)

    def by_id(self) -> dict[int, ObsEntry]:
        return {e.id: e for e in self.entries}


def _agent(i: int, pos: tuple[float, float], goal: tuple[float, float]) -> AgentState:
    return AgentState(
        id=i,
        position=Vec2(*pos),
        velocity=Vec2(0.0, 0.0),
        radius=DEFAULT_RADIUS,
        pref_speed=DEFAULT_PREF_SPEED,
        goal=Vec2(*goal),
        max_speed=DEFAULT_MAX_SPEED,
    )


def generate_scenario(
    kind: str,
    n_agents: int,
    seed: int,
    cfg: RvoConfig | None = None,
    frames: int = 500,
    name: str | None = None,
) -> Scenario:
    """Deterministic scenario of the given kind.

    circle: agents on a ring with antipodal goals; crossing: two
    perpendicular streams; hallway: two opposing streams; random: uniform
    placement with random goals, rejection-sampled to keep agents disjoint.
    """
    if n_agents < 1:
        raise ValueError(f"n_agents must be >= 1, got {n_agents}")
    if kind not in SCENARIO_KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}, expected one of {SCENARIO_KINDS}")
    cfg = cfg or RvoConfig()
    rng = substream(seed, TAG_SCENARIO)

    if kind == "circle":
        agents = _gen_circle(n_agents, rng)
    elif kind == "crossing":
        agents = _gen_streams(n_agents, rng, perpendicular=True)
    elif kind == "hallway":
        agents = _gen_streams(n_agents, rng, perpendicular=False)
    else:
        agents = _gen_random(n_agents, rng)

    return Scenario(
        name=name or f"{kind}-{n_agents}-{seed}",
        agents=tuple(agents),
        cfg=cfg,
        frames=frames,
        seed=seed,
    )


def _gen_circle(n: int, rng: np.random.Generator) -> list[AgentState]:
    ring = max(4.0, n * 1.0 / (2.0 * math.pi))
    agents = []
    for i in range(n):
        # Tiny radial jitter breaks the perfect symmetry that would
        # otherwise deadlock reciprocal avoidance at the center.
        r_i = ring + rng.uniform(0.0, 0.05)
        theta = 2.0 * math.pi * i / n
        pos = (r_i * math.cos(theta), r_i * math.sin(theta))
        goal = (-ring * math.cos(theta), -ring * math.sin(theta))
        agents.append(_agent(i, pos, goal))
    return agents


def _gen_streams(n: int, rng: np.random.Generator, perpendicular: bool) -> list[AgentState]:
    n_a = n - n // 2
    n_b = n // 2
    lane_w = 1.0
    file_w = 1.5
    agents = []

    def lane_offset(k: int, total: int) -> float:
        return (k - (total - 1) / 2.0) * lane_w

    lanes_a = max(1, int(math.ceil(math.sqrt(n_a))))
    for i in range(n_a):
        lane, rank = i % lanes_a, i // lanes_a
        y = lane_offset(lane, lanes_a) + rng.uniform(-0.15, 0.15)
        x = -8.0 - rank * file_w - rng.uniform(0.0, 0.5)
        agents.append(_agent(i, (x, y), (12.0, y)))

    lanes_b = max(1, int(math.ceil(math.sqrt(max(n_b, 1)))))
    for j in range(n_b):
        i = n_a + j
        lane, rank = j % lanes_b, j // lanes_b
        if perpendicular:
            x = lane_offset(lane, lanes_b) + rng.uniform(-0.15, 0.15)
            y = -8.0 - rank * file_w - rng.uniform(0.0, 0.5)
            agents.append(_agent(i, (x, y), (x, 12.0)))
        else:
            # Opposing stream, offset half a lane to avoid exact head-on rows.
            y = lane_offset(lane, lanes_b) + 0.5 * lane_w + rng.uniform(-0.15, 0.15)
            x = 8.0 + rank * file_w + rng.uniform(0.0, 0.5)
            agents.append(_agent(i, (x, y), (-12.0, y)))
    return agents


def _gen_random(n: int, rng: np.random.Generator) -> list[AgentState]:
    side = max(8.0, 1.8 * math.sqrt(n))
    half = side / 2.0
    min_gap = 2.0 * DEFAULT_RADIUS
    placed: list[tuple[float, float]] = []
    attempts = 0
    budget = 10 * n
    while len(placed) < n:
        if attempts >= budget:
            raise ScenarioCapacityError(
                f"could not place {n} agents in a {side:.1f} m square "
                f"after {budget} attempts"
            )
        attempts += 1
        cand = (rng.uniform(-half, half), rng.uniform(-half, half))
        if all(math.hypot(cand[0] - p[0], cand[1] - p[1]) >= min_gap for p in placed):
            placed.append(cand)
    return [
        _agent(i, p, (rng.uniform(-half, half), rng.uniform(-half, half)))
        for i, p in enumerate(placed)
    ]


def simulate_ground_truth(s: Scenario) -> list[Crowd]:
    """Frame 0 is the initial crowd; each later frame is one simulator step."""
    crowd = Crowd(s.agents, frame_index=0)
    frames = [crowd]
    for _ in range(s.frames - 1):
        crowd = step(crowd, s.cfg)
        frames.append(crowd)
    return frames


# ---------------------------------------------------------------------------
# Observation model
# ---------------------------------------------------------------------------


def visibility_schedule(m: ObsModel, agent_id: int, n_frames: int) -> np.ndarray:
    """Per-agent visibility over n_frames.

    Renewal process: at every visible frame, with probability occlusion_rate
    an occlusion window of uniform length [occlusion_min, occlusion_max]
    starts at the next frame. Driven by the (seed, agent_id) substream only,
    so schedules are independent of other agents and of the caller.
    """
    rng = substream(m.seed, TAG_OCCLUSION, agent_id)
    vis = np.ones(n_frames, dtype=bool)
    t = 0
    while t < n_frames:
        if m.occlusion_rate > 0.0 and rng.random() < m.occlusion_rate:
            length = int(rng.integers(m.occlusion_min, m.occlusion_max + 1))
            vis[t + 1 : t + 1 + length] = False
            t += length + 1
        else:
            t += 1
    return vis


def observe(truth: Crowd, m: ObsModel, frame_index: int) -> ObservationFrame:
    """Noisy, possibly occluded view of one ground-truth frame."""
    entries = []
    for agent in truth.agents:
        visible = bool(visibility_schedule(m, agent.id, frame_index + 1)[frame_index])
        if not visible:
            entries.append(ObsEntry(agent.id, None, False))
            continue
        noise = substream(m.seed, TAG_OBS_NOISE, agent.id, frame_index).standard_normal(2)
        entries.append(
            ObsEntry(
                agent.id,
                Vec2(
                    agent.position.x + m.noise_sigma * float(noise[0]),
                    agent.position.y + m.noise_sigma * float(noise[1]),
                ),
                True,
            )
        )
    return ObservationFrame(frame_index, tuple(entries))


def observe_all(truth_frames: list[Crowd], m: ObsModel) -> list[ObservationFrame]:
    """Observation stream for a whole trajectory (one schedule pass per agent)."""
    if not truth_frames:
        return []
    n_frames = len(truth_frames)
    schedules = {
        a.id: visibility_schedule(m, a.id, n_frames) for a in truth_frames[0].agents
    }
    out = []
    for k, crowd in enumerate(truth_frames):
        entries = []
        for agent in crowd.agents:
            if not schedules[agent.id][k]:
                entries.append(ObsEntry(agent.id, None, False))
                continue
            noise = substream(m.seed, TAG_OBS_NOISE, agent.id, k).standard_normal(2)
            entries.append(
                ObsEntry(
                    agent.id,
                    Vec2(
                        agent.position.x + m.noise_sigma * float(noise[0]),
                        agent.position.y + m.noise_sigma * float(noise[1]),
                    ),
                    True,
                )
            )
        out.append(ObservationFrame(k, tuple(entries)))
    return out


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_float(path: str, line_no: int, name: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ParseError(path, line_no, f"field {name!r}: cannot parse {raw!r} as float") from None


def _parse_int(path: str, line_no: int, name: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ParseError(path, line_no, f"field {name!r}: cannot parse {raw!r} as int") from None


def _read_lines(path: str) -> list[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as f:
        raw = f.read().splitlines()
    lines = [(i + 1, line.split(",")) for i, line in enumerate(raw) if line.strip()]
    if not lines:
        raise ParseError(path, 1, "empty file")
    line_no, fields = lines[0]
    if fields[0] != "version":
        raise ParseError(path, line_no, f"expected 'version' header, got {fields[0]!r}")
    if _parse_int(path, line_no, "version", fields[1]) != FORMAT_VERSION:
        raise ParseError(path, line_no, f"unsupported format version {fields[1]}")
    return lines[1:]


def save_scenario(s: Scenario, path: str) -> None:
    lines = [f"version,{FORMAT_VERSION}", f"name,{s.name}"]
    c = s.cfg
    lines.append(
        "config,"
        + ",".join(
            [
                _fmt(c.time_horizon),
                _fmt(c.dt),
                _fmt(c.neighbor_dist),
                str(c.max_neighbors),
                _fmt(c.goal_tolerance),
                str(s.frames),
                str(s.seed),
            ]
        )
    )
    for a in s.agents:
        lines.append(
            "agent,"
            + ",".join(
                [
                    str(a.id),
                    _fmt(a.position.x),
                    _fmt(a.position.y),
                    _fmt(a.velocity.x),
                    _fmt(a.velocity.y),
                    _fmt(a.radius),
                    _fmt(a.pref_speed),
                    _fmt(a.max_speed),
                    _fmt(a.goal.x),
                    _fmt(a.goal.y),
                ]
            )
        )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_scenario(path: str) -> Scenario:
    name = ""
    cfg: RvoConfig | None = None
    frames = 0
    seed = 0
    agents: list[AgentState] = []
    for line_no, fields in _read_lines(path):
        tag = fields[0]
        if tag == "name":
            name = ",".join(fields[1:])
        elif tag == "config":
            if len(fields) != 8:
                raise ParseError(path, line_no, f"config record needs 7 fields, got {len(fields) - 1}")
            cfg = RvoConfig(
                time_horizon=_parse_float(path, line_no, "tau", fields[1]),
                dt=_parse_float(path, line_no, "dt", fields[2]),
                neighbor_dist=_parse_float(path, line_no, "neighbor_dist", fields[3]),
                max_neighbors=_parse_int(path, line_no, "max_neighbors", fields[4]),
                goal_tolerance=_parse_float(path, line_no, "goal_tolerance", fields[5]),
            )
            frames = _parse_int(path, line_no, "frames", fields[6])
            seed = _parse_int(path, line_no, "seed", fields[7])
        elif tag == "agent":
            if len(fields) != 11:
                raise ParseError(path, line_no, f"agent record needs 10 fields, got {len(fields) - 1}")
            agents.append(
                AgentState(
                    id=_parse_int(path, line_no, "id", fields[1]),
                    position=Vec2(
                        _parse_float(path, line_no, "px", fields[2]),
                        _parse_float(path, line_no, "py", fields[3]),
                    ),
                    velocity=Vec2(
                        _parse_float(path, line_no, "vx", fields[4]),
                        _parse_float(path, line_no, "vy", fields[5]),
                    ),
                    radius=_parse_float(path, line_no, "radius", fields[6]),
                    pref_speed=_parse_float(path, line_no, "pref_speed", fields[7]),
                    max_speed=_parse_float(path, line_no, "max_speed", fields[8]),
                    goal=Vec2(
                        _parse_float(path, line_no, "gx", fields[9]),
                        _parse_float(path, line_no, "gy", fields[10]),
                    ),
                )
            )
        else:
            raise ParseError(path, line_no, f"unknown record tag {tag!r}")
    if cfg is None:
        raise ParseError(path, 1, "missing config record")
    return Scenario(name=name, agents=tuple(agents), cfg=cfg, frames=frames, seed=seed)


def save_trajectories(path: str, frames: list[Crowd]) -> None:
    lines = [f"version,{FORMAT_VERSION}"]
    for crowd in frames:
        for a in crowd.agents:
            lines.append(
                f"frame,{crowd.frame_index},{a.id},"
                f"{_fmt(a.position.x)},{_fmt(a.position.y)},"
                f"{_fmt(a.velocity.x)},{_fmt(a.velocity.y)}"
            )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_trajectories(path: str) -> list[tuple[int, int, float, float, float, float]]:
    """Records of (frame, id, px, py, vx, vy), in file order."""
    out = []
    for line_no, fields in _read_lines(path):
        if fields[0] != "frame" or len(fields) != 7:
            raise ParseError(path, line_no, "expected frame,<frame>,<id>,px,py,vx,vy")
        out.append(
            (
                _parse_int(path, line_no, "frame", fields[1]),
                _parse_int(path, line_no, "id", fields[2]),
                _parse_float(path, line_no, "px", fields[3]),
                _parse_float(path, line_no, "py", fields[4]),
                _parse_float(path, line_no, "vx", fields[5]),
                _parse_float(path, line_no, "vy", fields[6]),
            )
        )
    return out


def save_observations(path: str, obs: list[ObservationFrame]) -> None:
    lines = [f"version,{FORMAT_VERSION}"]
    for frame in obs:
        for e in frame.entries:
            if e.visible:
                assert e.position is not None
                lines.append(
                    f"obs,{frame.frame_index},{e.id},1,{_fmt(e.position.x)},{_fmt(e.position.y)}"
                )
            else:
                lines.append(f"obs,{frame.frame_index},{e.id},0,,")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_observations(path: str) -> list[ObservationFrame]:
    frames: dict[int, list[ObsEntry]] = {}
    for line_no, fields in _read_lines(path):
        if fields[0] != "obs" or len(fields) != 6:
            raise ParseError(path, line_no, "expected obs,<frame>,<id>,<visible>,ox,oy")
        k = _parse_int(path, line_no, "frame", fields[1])
        agent_id = _parse_int(path, line_no, "id", fields[2])
        visible = _parse_int(path, line_no, "visible", fields[3]) != 0
        if visible:
            pos = Vec2(
                _parse_float(path, line_no, "ox", fields[4]),
                _parse_float(path, line_no, "oy", fields[5]),
            )
        else:
            if fields[4] or fields[5]:
                raise ParseError(path, line_no, "occluded record must leave ox,oy empty")
            pos = None
        frames.setdefault(k, []).append(ObsEntry(agent_id, pos, visible))
    return [ObservationFrame(k, tuple(frames[k])) for k in sorted(frames)]
