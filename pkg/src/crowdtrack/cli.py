"""crowdtrack command line: scenario generation, tracking, benchmarking,
and the oracle battery.

Exit codes: 0 on success, 1 when oracle-check finds a failure, 2 on any
error (reported to stderr as a machine-readable `error,<type>,<message>`
line). --seed and --threads fall back to the CROWDTRACK_SEED and
CROWDTRACK_THREADS environment variables.
"""

from __future__ import annotations

import argparse
import os
import sys

from .bench import VARIANTS, compare_variants, run_benchmark, save_report, variant_config
from .checks import run_all
from .learn import LearnConfig
from .rvo import RvoConfig
from .scenario import (
    ObsModel,
    SCENARIO_KINDS,
    generate_scenario,
    load_scenario,
    observe_all,
    save_scenario,
    simulate_ground_truth,
)
from .tracker import write_telemetry


def _env_default(name: str, fallback: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"environment variable {name} must be an integer, got {raw!r}") from None


def _add_seed_threads(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="seed for observation + tracker streams (env CROWDTRACK_SEED)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for per-pedestrian filters (env CROWDTRACK_THREADS)")


def _add_obs_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--occlusion-rate", type=float, default=0.0)
    p.add_argument("--occlusion-min", type=int, default=3)
    p.add_argument("--occlusion-max", type=int, default=10)


def _add_tracker_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--q-sigma", type=float, default=0.15)
    p.add_argument("--r-sigma", type=float, default=0.1)
    p.add_argument("--p-min", type=int, default=100)
    p.add_argument("--p-max", type=int, default=1000)
    p.add_argument("--p-add", type=int, default=100)
    p.add_argument("--hold-frames", type=int, default=10)
    p.add_argument("--decay-fraction", type=float, default=0.1)
    p.add_argument("--d-threshold", type=float, default=3.0)
    p.add_argument("--w-threshold", type=float, default=1e-6)
    p.add_argument("--train-frames", type=int, default=50)
    p.add_argument("--ensemble-size", type=int, default=64)
    p.add_argument("--retrain-interval", type=int, default=50)


def _tracker_overrides(args) -> dict:
    return dict(
        q_sigma=args.q_sigma,
        r_sigma=args.r_sigma,
        p_min=args.p_min,
        p_max=args.p_max,
        p_add=args.p_add,
        hold_frames=args.hold_frames,
        decay_fraction=args.decay_fraction,
        d_threshold=args.d_threshold,
        w_threshold=args.w_threshold,
    )


def _obs_model(args, seed: int) -> ObsModel:
    return ObsModel(
        noise_sigma=args.noise_sigma,
        occlusion_rate=args.occlusion_rate,
        occlusion_min=args.occlusion_min,
        occlusion_max=args.occlusion_max,
        seed=seed,
    )


def _resolve_seed_threads(args) -> tuple[int, int]:
    seed = args.seed if args.seed is not None else _env_default("CROWDTRACK_SEED", 0)
    threads = args.threads if args.threads is not None else _env_default("CROWDTRACK_THREADS", 1)
    return seed, threads


def cmd_gen(args) -> int:
    cfg = RvoConfig(
        time_horizon=args.tau,
        dt=args.dt,
        neighbor_dist=args.neighbor_dist,
        max_neighbors=args.max_neighbors,
        goal_tolerance=args.goal_tolerance,
    )
    seed, _ = _resolve_seed_threads(args)
    scenario = generate_scenario(args.kind, args.n, seed, cfg, frames=args.frames)
    save_scenario(scenario, args.output)
    print(f"wrote scenario {scenario.name!r} ({len(scenario.agents)} agents, "
          f"{scenario.frames} frames) to {args.output}")
    return 0


def cmd_track(args) -> int:
    from .bench import run_tracking

    scenario = load_scenario(args.scenario)
    seed, threads = _resolve_seed_threads(args)
    cfg = variant_config(args.variant, **_tracker_overrides(args))
    learn_cfg = LearnConfig(
        ensemble_size=args.ensemble_size,
        train_frames=args.train_frames,
        retrain_interval=args.retrain_interval,
        r_sigma=cfg.r_sigma,
    )
    truth = simulate_ground_truth(scenario)
    observations = observe_all(truth, _obs_model(args, seed))
    run = run_tracking(scenario, args.variant, observations, cfg, learn_cfg, seed, threads)
    write_telemetry(args.output, run.rows)
    print(f"tracked {len(scenario.agents)} pedestrians over "
          f"{len(observations) - learn_cfg.train_frames} frames "
          f"({args.variant}); telemetry in {args.output}")
    return 0


def cmd_bench(args) -> int:
    scenario = load_scenario(args.scenario)
    seed, threads = _resolve_seed_threads(args)
    obs_model = _obs_model(args, seed)
    overrides = _tracker_overrides(args)
    learn_cfg = LearnConfig(
        ensemble_size=args.ensemble_size,
        train_frames=args.train_frames,
        retrain_interval=args.retrain_interval,
        r_sigma=args.r_sigma,
    )
    if args.all_variants:
        trace_paths = None
        if args.traces:
            os.makedirs(args.traces, exist_ok=True)
            trace_paths = {
                v: os.path.join(args.traces, f"{scenario.name}_{v}_trace.csv") for v in VARIANTS
            }
        reports = compare_variants(
            scenario, obs_model, tracker_overrides=overrides, learn_cfg=learn_cfg,
            repetitions=args.reps, eps=args.eps, tracker_seed=seed, threads=threads,
            trace_paths=trace_paths,
        )
    else:
        reports = [
            run_benchmark(
                scenario, args.variant, obs_model,
                tracker_cfg=variant_config(args.variant, **overrides),
                learn_cfg=learn_cfg, repetitions=args.reps, eps=args.eps,
                tracker_seed=seed, threads=threads,
            )
        ]
    save_report(args.output, reports)
    print(f"{'variant':<10} {'acc':>6} {'fps':>8} {'mean_k':>8} {'p50 ms':>8} {'p95 ms':>8}")
    for r in reports:
        print(f"{r.variant:<10} {r.accuracy:>6.3f} {r.mean_fps:>8.1f} "
              f"{r.mean_k:>8.1f} {r.p50_ms:>8.2f} {r.p95_ms:>8.2f}")
    print(f"report written to {args.output}")
    return 0


def cmd_oracle_check(args) -> int:
    results = run_all()
    failures = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: {res.detail}")
        failures += 0 if res.passed else 1
    print(f"{len(results) - failures}/{len(results)} oracle checks passed")
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdtrack",
        description="Crowd tracking engine: adaptive particle filters over a "
                    "reciprocal-velocity-obstacle motion model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scenario file")
    p.add_argument("--kind", choices=SCENARIO_KINDS, required=True)
    p.add_argument("--n", type=int, required=True, help="number of agents")
    p.add_argument("--frames", type=int, default=500)
    p.add_argument("--tau", type=float, default=2.0, help="constraint time horizon (s)")
    p.add_argument("--dt", type=float, default=0.04)
    p.add_argument("--neighbor-dist", type=float, default=5.0)
    p.add_argument("--max-neighbors", type=int, default=10)
    p.add_argument("--goal-tolerance", type=float, default=0.1)
    p.add_argument("-o", "--output", required=True)
    _add_seed_threads(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("track", help="run one tracker variant, write telemetry CSV")
    p.add_argument("--scenario", required=True)
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("-o", "--output", required=True)
    _add_obs_flags(p)
    _add_tracker_flags(p)
    _add_seed_threads(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("bench", help="benchmark variants, write report CSV")
    p.add_argument("--scenario", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--all-variants", action="store_true")
    group.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--eps", type=float, default=0.5, help="tracked-if-within distance (m)")
    p.add_argument("--traces", help="directory for per-frame k/d trace CSVs")
    p.add_argument("-o", "--output", required=True)
    _add_obs_flags(p)
    _add_tracker_flags(p)
    _add_seed_threads(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle-check", help="run the independent-oracle battery")
    p.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        print(f"error,{type(exc).__name__},{exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
