"""Benchmark harness: tracking accuracy, throughput measurement, and the
four-variant comparison (single-level vs adaptive particle budget, crossed
with constant-velocity vs collision-avoidance motion models).

Timing is tracking-only: the clock covers the filter, confidence, and
motion-model levels, never scenario generation, observation synthesis, or
I/O. Metric fields are deterministic per seed; the three timing columns
(mean_fps, p50_ms, p95_ms) sit last in the report CSV so determinism checks
can strip them.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

from .geometry import Vec2
from .learn import EnkfLearner, LearnConfig, train
from .rvo import Crowd
from .scenario import FORMAT_VERSION, ObservationFrame, ObsModel, ParseError, Scenario, observe_all, simulate_ground_truth
from .tracker import MultiTracker, TelemetryRow, TrackerConfig

# Table order of the tracker variants under comparison.
VARIANTS = ("mlpf-rvo", "slpf-rvo", "mlpf-lin", "slpf-lin")

REPORT_NOTE = (
    "tracking-only throughput: timing covers the filter, confidence, and "
    "motion-model levels; detection and I/O are excluded"
)
REPORT_HEADER = (
    "scenario,variant,accuracy,mean_k,frames,scenario_seed,obs_seed,"
    "tracker_seed,total_propagations,mean_fps,p50_ms,p95_ms"
)


def variant_config(variant: str, **overrides) -> TrackerConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    level, model = variant.split("-")
    return TrackerConfig(motion_model=model, adaptive=(level == "mlpf"), **overrides)


@dataclass(frozen=True)
class BenchReport:
    scenario: str
    variant: str
    accuracy: float
    mean_k: float
    frames: int  # frames evaluated (tracking phase)
    scenario_seed: int
    obs_seed: int
    tracker_seed: int
    total_propagations: int
    mean_fps: float
    p50_ms: float
    p95_ms: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy must be in [0, 1], got {self.accuracy}")
        if self.mean_fps <= 0.0:
            raise ValueError(f"mean_fps must be positive, got {self.mean_fps}")

    def as_csv(self) -> str:
        return ",".join(
            [
                self.scenario,
                self.variant,
                repr(self.accuracy),
                repr(self.mean_k),
                str(self.frames),
                str(self.scenario_seed),
                str(self.obs_seed),
                str(self.tracker_seed),
                str(self.total_propagations),
                repr(self.mean_fps),
                repr(self.p50_ms),
                repr(self.p95_ms),
            ]
        )

    def metric_fields(self) -> tuple:
        """Everything except the timing columns (for determinism checks)."""
        return (
            self.scenario,
            self.variant,
            self.accuracy,
            self.mean_k,
            self.frames,
            self.scenario_seed,
            self.obs_seed,
            self.tracker_seed,
            self.total_propagations,
        )


def accuracy(
    estimates: dict[tuple[int, int], Vec2],
    truth: list[Crowd],
    eps: float,
    frame_range: tuple[int, int] | None = None,
) -> float:
    """Fraction of (pedestrian, frame) pairs with estimate within eps of the
    true position. Pairs without an estimate count as not tracked."""
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    start, stop = frame_range if frame_range is not None else (0, len(truth))
    tracked = 0
    total = 0
    for crowd in truth[start:stop]:
        for agent in crowd.agents:
            total += 1
            est = estimates.get((crowd.frame_index, agent.id))
            if est is None:
                continue
            if (est - agent.position).norm() <= eps:
                tracked += 1
    return tracked / total if total else 0.0


def estimates_from_telemetry(rows: list[TelemetryRow]) -> dict[tuple[int, int], Vec2]:
    return {(r.frame, r.id): Vec2(r.est_x, r.est_y) for r in rows}


@dataclass
class TrackingRun:
    rows: list[TelemetryRow]
    frame_seconds: list[float]
    propagations: int


def run_tracking(
    scenario: Scenario,
    variant: str,
    observations: list[ObservationFrame],
    tracker_cfg: TrackerConfig,
    learn_cfg: LearnConfig,
    tracker_seed: int,
    threads: int = 1,
) -> TrackingRun:
    """One full training + tracking pass over a shared observation stream."""
    known = {a.id: (a.radius, a.max_speed) for a in scenario.agents}
    ped_ids = [a.id for a in scenario.agents]
    tracker = MultiTracker(ped_ids, tracker_cfg, scenario.cfg, known, tracker_seed, threads)

    learner: EnkfLearner | None = None
    if tracker_cfg.motion_model == "rvo":
        params, learner = train(
            observations[: learn_cfg.train_frames], known, scenario.cfg, learn_cfg,
            tracker_seed,
        )
        tracker.set_motion_params({p: mp.pref_velocity_est for p, mp in params.items()})

    rows: list[TelemetryRow] = []
    frame_seconds: list[float] = []
    for frame in observations[learn_cfg.train_frames :]:
        t0 = time.perf_counter()
        preds = learner.model_predictions() if learner is not None else None
        frame_rows = tracker.step_frame(frame, preds)
        if learner is not None:
            visible = {e.id for e in frame.entries if e.visible}
            observed = {
                r.id: Vec2(r.est_x, r.est_y)
                for r in frame_rows
                if r.k > 0 and r.id in visible
            }
            learner.advance(frame.frame_index, observed)
            # Continuous feedback: refreshed preferred velocities flow back
            # into the particle predictions every frame.
            tracker.set_motion_params(
                {
                    pid: Vec2(st.ensemble.mean()[4], st.ensemble.mean()[5])
                    for pid, st in learner.states.items()
                    if st.ensemble is not None
                }
            )
        frame_seconds.append(time.perf_counter() - t0)
        rows.extend(frame_rows)
    return TrackingRun(rows, frame_seconds, tracker.propagation_count)


def run_benchmark(
    scenario: Scenario,
    variant: str,
    obs_model: ObsModel,
    tracker_cfg: TrackerConfig | None = None,
    learn_cfg: LearnConfig | None = None,
    repetitions: int = 3,
    eps: float = 0.5,
    tracker_seed: int = 0,
    threads: int = 1,
    warmup_frames: int = 50,
    observations: list[ObservationFrame] | None = None,
    truth: list[Crowd] | None = None,
) -> BenchReport:
    """Train (motion-model variants), track, and score one variant.

    Metrics come from the first repetition (they are seed-deterministic);
    throughput is the median over repetitions, with the first warmup_frames
    of each tracking phase excluded from the clock.
    """
    report, _ = run_benchmark_with_rows(
        scenario, variant, obs_model, tracker_cfg, learn_cfg, repetitions, eps,
        tracker_seed, threads, warmup_frames, observations, truth,
    )
    return report


def run_benchmark_with_rows(
    scenario: Scenario,
    variant: str,
    obs_model: ObsModel,
    tracker_cfg: TrackerConfig | None = None,
    learn_cfg: LearnConfig | None = None,
    repetitions: int = 3,
    eps: float = 0.5,
    tracker_seed: int = 0,
    threads: int = 1,
    warmup_frames: int = 50,
    observations: list[ObservationFrame] | None = None,
    truth: list[Crowd] | None = None,
) -> tuple[BenchReport, list[TelemetryRow]]:
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    tracker_cfg = tracker_cfg if tracker_cfg is not None else variant_config(variant)
    learn_cfg = learn_cfg or LearnConfig(r_sigma=tracker_cfg.r_sigma)
    truth = truth if truth is not None else simulate_ground_truth(scenario)
    observations = observations if observations is not None else observe_all(truth, obs_model)

    runs = [
        run_tracking(scenario, variant, observations, tracker_cfg, learn_cfg, tracker_seed, threads)
        for _ in range(repetitions)
    ]
    first = runs[0]

    fps_per_rep = []
    for run in runs:
        timed = run.frame_seconds[warmup_frames:] or run.frame_seconds
        fps_per_rep.append(len(timed) / sum(timed))
    median_rep = sorted(range(len(runs)), key=lambda i: fps_per_rep[i])[len(runs) // 2]
    timed = runs[median_rep].frame_seconds[warmup_frames:] or runs[median_rep].frame_seconds
    latencies_ms = sorted(t * 1000.0 for t in timed)

    start = learn_cfg.train_frames
    acc = accuracy(
        estimates_from_telemetry(first.rows), truth, eps, frame_range=(start, len(truth))
    )
    ks = [r.k for r in first.rows if r.k > 0]
    report = BenchReport(
        scenario=scenario.name,
        variant=variant,
        accuracy=acc,
        mean_k=sum(ks) / len(ks) if ks else 0.0,
        frames=len(observations) - start,
        scenario_seed=scenario.seed,
        obs_seed=obs_model.seed,
        tracker_seed=tracker_seed,
        total_propagations=first.propagations,
        mean_fps=statistics.median(fps_per_rep),
        p50_ms=_percentile(latencies_ms, 0.50),
        p95_ms=_percentile(latencies_ms, 0.95),
    )
    return report, first.rows


def _percentile(sorted_values: list[float], q: float) -> float:
    if not sorted_values:
        return 0.0
    idx = min(int(q * len(sorted_values)), len(sorted_values) - 1)
    return sorted_values[idx]


def compare_variants(
    scenario: Scenario,
    obs_model: ObsModel,
    tracker_overrides: dict | None = None,
    learn_cfg: LearnConfig | None = None,
    repetitions: int = 3,
    eps: float = 0.5,
    tracker_seed: int = 0,
    threads: int = 1,
    trace_paths: dict[str, str] | None = None,
) -> list[BenchReport]:
    """All four variants on one byte-identical observation stream.

    trace_paths optionally maps variant -> path for per-frame telemetry
    (k and d traces, one row per pedestrian per frame).
    """
    from .tracker import write_telemetry

    truth = simulate_ground_truth(scenario)
    observations = observe_all(truth, obs_model)
    overrides = tracker_overrides or {}
    reports = []
    for variant in VARIANTS:
        cfg = variant_config(variant, **overrides)
        report, rows = run_benchmark_with_rows(
            scenario,
            variant,
            obs_model,
            tracker_cfg=cfg,
            learn_cfg=learn_cfg,
            repetitions=repetitions,
            eps=eps,
            tracker_seed=tracker_seed,
            threads=threads,
            observations=observations,
            truth=truth,
        )
        reports.append(report)
        if trace_paths and variant in trace_paths:
            write_telemetry(trace_paths[variant], rows)
    return reports


def save_report(path: str, reports: list[BenchReport]) -> None:
    lines = [f"version,{FORMAT_VERSION}", f"note,{REPORT_NOTE}", REPORT_HEADER]
    lines.extend(r.as_csv() for r in reports)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_report(path: str) -> list[BenchReport]:
    from .scenario import _parse_float, _parse_int, _read_lines

    out = []
    header_cols = REPORT_HEADER.split(",")
    for line_no, fields in _read_lines(path):
        if fields[0] == "note" or fields == header_cols:
            continue
        if len(fields) != len(header_cols):
            raise ParseError(path, line_no, f"expected {len(header_cols)} fields, got {len(fields)}")
        out.append(
            BenchReport(
                scenario=fields[0],
                variant=fields[1],
                accuracy=_parse_float(path, line_no, "accuracy", fields[2]),
                mean_k=_parse_float(path, line_no, "mean_k", fields[3]),
                frames=_parse_int(path, line_no, "frames", fields[4]),
                scenario_seed=_parse_int(path, line_no, "scenario_seed", fields[5]),
                obs_seed=_parse_int(path, line_no, "obs_seed", fields[6]),
                tracker_seed=_parse_int(path, line_no, "tracker_seed", fields[7]),
                total_propagations=_parse_int(path, line_no, "total_propagations", fields[8]),
                mean_fps=_parse_float(path, line_no, "mean_fps", fields[9]),
                p50_ms=_parse_float(path, line_no, "p50_ms", fields[10]),
                p95_ms=_parse_float(path, line_no, "p95_ms", fields[11]),
            )
        )
    return out
