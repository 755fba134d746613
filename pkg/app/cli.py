"""
MirrorBot command line.

Subcommands::

    simulate   world, trajectory and packets only
    run        one agent session
    judge      score an existing run
    ablate     full sensing plus the five single-input ablations
    sem        fit the self-recognition model on runs, a CSV or synthetic data
    report     summaries and per-dimension score series of judged runs

Results are printed to stdout as JSON; failures print one JSON object on
stderr and exit non-zero.
"""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from app.core.config import load_experiment_config, settings
from app.middleware.error_handler import ErrorBoundary
from app.models.agent import BackendConfig
from app.services import runner
from app.services.run_store import RunStore


logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, stream=sys.stderr)


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Experiment config JSON (supports ${VAR} interpolation)")
    parser.add_argument("--seed", type=int, help="Base seed")
    parser.add_argument("-n", "--iterations", type=int, dest="n_iterations", help="Number of iterations")
    parser.add_argument("--world", help="World JSON; generated from the seed when omitted")
    parser.add_argument("--ablate", action="append", default=None, metavar="INPUT",
                        help="Withhold an input (memory, camera, odometry, lidar, imu); repeatable")
    parser.add_argument("--run-id", help="Run directory name")
    parser.add_argument("--image-encoding", choices=["reference", "base64"])
    parser.add_argument("--packet-rate", type=int, dest="packet_rate_hz", help="Packets per second")


def _add_backend_flags(parser: argparse.ArgumentParser, replay: bool = True) -> None:
    kinds = ["mock", "live", "replay"] if replay else ["mock", "live"]
    parser.add_argument("--backend", choices=kinds, help="Model backend")
    parser.add_argument("--endpoint", help="Base URL of a chat-completions API")
    parser.add_argument("--model", help="Model name for the live backend")
    if replay:
        parser.add_argument("--transcript", help="Transcript JSONL for the replay backend")
        parser.add_argument("--fault-rate", type=float, help="Mock agent probability of a garbled reply")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mirrorbot", description="Embodied self-recognition experiments")
    parser.add_argument("--out", default=None, help=f"Runs directory (default {settings.runs_dir})")
    parser.add_argument("--log-level", default=settings.log_level)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="World, trajectory and packets only")
    _add_experiment_flags(p)

    p = sub.add_parser("run", help="Run one agent session")
    _add_experiment_flags(p)
    _add_backend_flags(p)

    p = sub.add_parser("judge", help="Score an existing run")
    p.add_argument("run_dir")
    _add_backend_flags(p, replay=False)
    p.add_argument("--concurrency", type=int)

    p = sub.add_parser("ablate", help="Run and score all ablation conditions")
    _add_experiment_flags(p)
    _add_backend_flags(p)
    p.add_argument("--parallel", action="store_true", help="Interleave the conditions")

    p = sub.add_parser("sem", help="Fit the self-recognition model")
    p.add_argument("--runs", help="A run directory or a directory of runs")
    p.add_argument("--csv", help="CSV with the ten model columns")
    p.add_argument("--synthetic", type=int, metavar="N", help="Simulate N rows from the canonical model")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="Summaries and score series of judged runs")
    p.add_argument("run_dir", help="A run directory or a directory of runs")
    return parser


def _backend_overrides(args: argparse.Namespace, base: Dict[str, Any]) -> Dict[str, Any]:
    overrides = dict(base)
    for flag, key in (("backend", "kind"), ("endpoint", "endpoint"), ("model", "model"),
                      ("transcript", "transcript_path"), ("fault_rate", "fault_rate")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return overrides


def build_config(args: argparse.Namespace):
    """ExperimentConfig from ``--config`` with command-line overrides applied."""
    base = load_experiment_config(args.config) if args.config else load_experiment_config({})
    payload = base.model_dump()
    for key in ("seed", "n_iterations", "run_id", "image_encoding", "packet_rate_hz"):
        value = getattr(args, key, None)
        if value is not None:
            payload[key] = value
    if args.ablate is not None:
        payload["ablation"] = args.ablate
    if args.world is not None:
        payload["sim"]["world_path"] = args.world
    payload["agent_backend"] = _backend_overrides(args, payload["agent_backend"])
    if getattr(args, "backend", None) in ("mock", "live"):
        judge = {k: v for k, v in payload["agent_backend"].items() if k not in ("transcript_path", "fault_rate")}
        payload["judge_backend"] = {**payload["judge_backend"], **judge}
    return load_experiment_config(payload)


def _judge_config(args: argparse.Namespace) -> Optional[BackendConfig]:
    overrides = _backend_overrides(args, {})
    return BackendConfig.model_validate(overrides) if overrides else None


def _print(payload: Any) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def cmd_simulate(args: argparse.Namespace) -> None:
    store = asyncio.run(runner.simulate(build_config(args), args.out))
    _print({"run_dir": str(store.root)})


def cmd_run(args: argparse.Namespace) -> None:
    store = asyncio.run(runner.run_experiment(build_config(args), args.out))
    records = store.read_records()
    _print({
        "run_dir": str(store.root),
        "iterations": len(records),
        "parse_failures": sum(1 for r in records if r.error is not None),
    })


def cmd_judge(args: argparse.Namespace) -> None:
    summary = asyncio.run(runner.judge_run(args.run_dir, _judge_config(args), args.concurrency))
    _print({"run_dir": args.run_dir, **summary.model_dump(exclude={"series"})})


def cmd_ablate(args: argparse.Namespace) -> None:
    config = build_config(args)
    table = asyncio.run(runner.ablate(config, args.out, parallel=args.parallel))
    _print({"conditions": table.reset_index().to_dict(orient="records")})


def cmd_sem(args: argparse.Namespace) -> None:
    data = runner.sem_sources(args.runs, args.csv, args.synthetic, args.seed)
    if args.runs:
        out_dir = Path(args.runs)
    else:
        out_dir = Path(args.out or settings.runs_dir) / ("sem-csv" if args.csv else f"sem-synthetic-{args.synthetic}")
    result = asyncio.run(runner.run_sem(data, out_dir, seed=args.seed))
    _print({**result.summary(), "report_dir": str(out_dir / RunStore.REPORT_DIR)})


def cmd_report(args: argparse.Namespace) -> None:
    run_dirs: List[Path] = RunStore.discover(args.run_dir)
    reports = {str(path): asyncio.run(runner.report(path)) for path in run_dirs}
    payload: Dict[str, Any] = {"runs": reports}
    if len(run_dirs) > 1:
        table = runner.ablation_report(runner.condition_summaries(run_dirs))
        table_path = Path(args.run_dir) / RunStore.REPORT_DIR / "conditions.csv"
        table_path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(table_path)
        payload["conditions"] = str(table_path)
    _print(payload)


COMMANDS = {
    "simulate": cmd_simulate,
    "run": cmd_run,
    "judge": cmd_judge,
    "ablate": cmd_ablate,
    "sem": cmd_sem,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    logger.debug(f"Running {args.command}", extra={"command": args.command})
    boundary = ErrorBoundary(args.command)
    return boundary.run(lambda: COMMANDS[args.command](args))


if __name__ == "__main__":
    sys.exit(main())
