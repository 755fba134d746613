"""
Experiment orchestration: simulate, run, judge, ablate, fit and report.

Every step reads and writes run directories through :class:`RunStore`, so
judging, reporting and model fitting work on persisted runs without
re-simulating.
"""

import asyncio
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.exceptions import ValidationError
from app.models.agent import BackendConfig
from app.models.experiment import ExperimentConfig
from app.models.judge import DIMENSIONS, ScoreSummary
from app.models.packets import FusedPacket
from app.services.agentloop import run_session
from app.services.backends import create_backend
from app.services.fusion import PacketStream
from app.services.judge import aggregate, load_rubrics, score_run
from app.services.performance_monitor import PerformanceMonitor
from app.services.run_store import RunStore
from app.services.sem import (
    CONTINUOUS_COLUMNS,
    XI_COLUMNS,
    Y_COLUMNS,
    FitResult,
    SemData,
    build_canonical_model,
    fit,
    population_parameters,
    simulate_data,
    zscore,
)
from app.services.simworld import Simulator, WorldMap, quaternion_to_yaw


logger = logging.getLogger(__name__)


# Complete sensing plus the single-input ablations
ABLATION_CONDITIONS: Dict[str, List[str]] = {
    "full": [],
    "no-memory": ["memory"],
    "no-camera": ["camera"],
    "no-odometry": ["odometry"],
    "no-lidar": ["lidar"],
    "no-imu": ["imu"],
}

# rubric dimension feeding each indicator column
RUBRIC_COLUMNS = {
    "rubric_Dimensions": "dimensions",
    "rubric_Movement": "movement",
    "rubric_Image": "environment",
    "rubric_Individual": "entity",
}


def resolve_world(config: ExperimentConfig) -> WorldMap:
    if config.sim.world_path:
        return WorldMap.load(config.sim.world_path)
    return WorldMap.generate(config.seed)


def effective_config(config: ExperimentConfig) -> ExperimentConfig:
    """Config as executed: a mock agent always runs on the experiment seed."""
    if config.agent_backend.kind != "mock":
        return config
    agent = config.agent_backend.model_copy(update={"seed": config.seed})
    return config.model_copy(update={"agent_backend": agent})


async def simulate(config: ExperimentConfig, runs_dir: Union[str, Path, None] = None) -> RunStore:
    """World, ground-truth trajectory and packets only; no model is called."""
    store = RunStore.create(runs_dir or settings.runs_dir, f"sim-{config.resolved_run_id()}", config.image_encoding)
    await store.write_config(config)
    world = resolve_world(config)
    world.save(store.root / "world.json")

    stream = PacketStream(
        Simulator(world, config.sim, config.seed), config.ablation_mask,
        config.packet_rate_hz, config.fusion_window,
    )
    trajectory = []
    for packet in stream.take(config.n_iterations):
        state = stream.simulator.state
        trajectory.append({
            "timestamp": packet.timestamp,
            "x": state.x, "y": state.y, "heading": state.heading,
            "vx": state.vx, "vy": state.vy, "omega": state.omega,
        })
        await store.append_packet(packet)
        packet.attach_frame(None)
    store.write_report_csv("trajectory.csv", pd.DataFrame(trajectory))
    logger.info(f"Simulated {len(trajectory)} packets into {store.root}")
    return store


async def run_experiment(config: ExperimentConfig, runs_dir: Union[str, Path, None] = None) -> RunStore:
    """Run the agent loop for one condition and persist every iteration."""
    config = effective_config(config)
    store = RunStore.create(runs_dir or settings.runs_dir, config.resolved_run_id(), config.image_encoding)
    await store.write_config(config)

    backend = create_backend(config.agent_backend, role="agent")
    monitor = PerformanceMonitor()
    try:
        await run_session(
            config.n_iterations, config.ablation_mask, backend, config.seed,
            world=resolve_world(config), sim_config=config.sim,
            packet_rate_hz=config.packet_rate_hz, window=config.fusion_window,
            store=store, monitor=monitor,
        )
    finally:
        await backend.aclose()
        performance = monitor.summary()
        performance["retries"] = backend.retry_snapshot()
        await store.write_report_json("performance.json", performance)
    logger.info(f"Run {store.run_id} finished", extra={"run_id": store.run_id, "condition": config.condition})
    return store


async def judge_run(run_dir: Union[str, Path], judge_config: Optional[BackendConfig] = None,
                    concurrency: Optional[int] = None) -> ScoreSummary:
    """Score a persisted run and write scores.jsonl."""
    store = RunStore.open(run_dir)
    config = store.read_config()
    backend = create_backend(judge_config or config.judge_backend, role="judge")
    predictions = [(r.iteration, r.prediction) for r in store.read_records() if r.prediction is not None]
    try:
        scores = await score_run(predictions, backend, load_rubrics(), concurrency or config.judge_concurrency)
    finally:
        await backend.aclose()
    await store.write_scores(scores)
    return aggregate(scores)


async def report(run_dir: Union[str, Path]) -> Dict[str, str]:
    """Summary CSV/JSON and one (iteration, score) series file per dimension."""
    store = RunStore.open(run_dir)
    config = store.read_config()
    summary = aggregate(store.read_scores())

    paths: Dict[str, str] = {}
    table = pd.DataFrame([
        {"dimension": d, **summary.dimensions[d].model_dump()} for d in DIMENSIONS
    ])
    paths["summary_csv"] = str(store.write_report_csv("summary.csv", table))
    payload = {
        "run_id": store.run_id,
        "condition": config.condition,
        "iterations": summary.iterations,
        "coverage": summary.coverage,
        "dimensions": {d: s.model_dump() for d, s in summary.dimensions.items()},
    }
    paths["summary_json"] = str(await store.write_report_json("summary.json", payload))
    for dimension in DIMENSIONS:
        series = pd.DataFrame(summary.series[dimension], columns=["iteration", "score"])
        paths[f"series_{dimension}"] = str(store.write_report_csv(f"series_{dimension}.csv", series))
    return paths


def ablation_report(summaries: Dict[str, ScoreSummary]) -> pd.DataFrame:
    """Condition x dimension table of mean and sd."""
    if len(summaries) < 2:
        raise ValidationError("An ablation report needs at least two conditions", field="conditions")
    rows = []
    for condition, summary in summaries.items():
        row = {"condition": condition}
        for dimension in DIMENSIONS:
            row[f"{dimension}_mean"] = summary.dimensions[dimension].mean
            row[f"{dimension}_sd"] = summary.dimensions[dimension].sd
        rows.append(row)
    return pd.DataFrame(rows).set_index("condition")


def radar_data(table: pd.DataFrame) -> Dict:
    """Per-condition mean profiles over the four dimensions."""
    return {
        "axes": list(DIMENSIONS),
        "series": [
            {"condition": condition, "values": [float(row[f"{d}_mean"]) for d in DIMENSIONS]}
            for condition, row in table.iterrows()
        ],
    }


async def ablate(base: ExperimentConfig, runs_dir: Union[str, Path, None] = None,
                 conditions: Optional[Dict[str, List[str]]] = None,
                 parallel: bool = False) -> pd.DataFrame:
    """
    Run, judge and summarize every ablation condition on the same seed.

    The table and radar data go to ``<runs_dir>/ablation-s<seed>/``.
    """
    runs_dir = Path(runs_dir or settings.runs_dir)
    conditions = conditions or ABLATION_CONDITIONS

    async def _condition(name: str, ablation: List[str]) -> ScoreSummary:
        config = ExperimentConfig.model_validate(
            {**base.model_dump(), "ablation": ablation, "run_id": f"{name}-s{base.seed}"}
        )
        store = await run_experiment(config, runs_dir)
        summary = await judge_run(store.root)
        await report(store.root)
        logger.info(f"Condition {name} done", extra={"condition": name})
        return summary

    if parallel:
        results = await asyncio.gather(*(_condition(n, a) for n, a in conditions.items()))
    else:
        results = [await _condition(n, a) for n, a in conditions.items()]
    summaries = dict(zip(conditions, results))

    table = ablation_report(summaries)
    out = RunStore(runs_dir / f"ablation-s{base.seed}")
    out.root.mkdir(parents=True, exist_ok=True)
    table_path = out.report_dir / "summary.csv"
    table.to_csv(table_path)
    await out.write_report_json("radar.json", radar_data(table))
    logger.info(f"Ablation summary written to {table_path}")
    return table


def _run_rows(store: RunStore) -> pd.DataFrame:
    config = store.read_config()
    memory_ablated = "memory" in config.ablation_mask
    scores = {s.iteration: s for s in store.read_scores()}
    packets: List[FusedPacket] = store.read_packets()
    records = store.read_records()

    rows = []
    previous_summary = ""
    for record, packet in zip(records, packets):
        # memory seen by this iteration's prompt is the state after the previous one
        had_memory = not memory_ablated and bool(previous_summary)
        previous_summary = record.memory.summary
        score = scores.get(record.iteration)
        if score is None or not score.complete:
            continue

        odometry, imu = packet.odometry, packet.imu
        position = orientation = velocity = acceleration = 0.0
        if odometry is not None:
            position = math.hypot(odometry.position.x, odometry.position.y)
            q = odometry.orientation
            orientation = quaternion_to_yaw(q.x, q.y, q.z, q.w)
            velocity = math.hypot(odometry.linear_velocity.x, odometry.linear_velocity.y)
        if imu is not None:
            acceleration = math.hypot(imu.linear_acceleration.x, imu.linear_acceleration.y)

        row = {column: score.get(dimension) for column, dimension in RUBRIC_COLUMNS.items()}
        row.update({
            "Memory": int(had_memory),
            "Image": int(packet.image is not None),
            "Position": position,
            "Orientation": orientation,
            "Velocity": velocity,
            "Acceleration": acceleration,
        })
        rows.append(row)
    return pd.DataFrame(rows, columns=list(Y_COLUMNS + XI_COLUMNS))


def build_sem_dataset(run_dirs: Iterable[Union[str, Path]], standardize: bool = True) -> SemData:
    """
    One row per scored iteration across runs, continuous inputs z-scored.

    Iterations without a complete score set are dropped.
    """
    frames = [_run_rows(RunStore.open(path)) for path in run_dirs]
    if not frames:
        raise ValidationError("No runs given", field="runs")
    frame = pd.concat(frames, ignore_index=True).astype(float)
    logger.info(f"SEM dataset: {len(frame)} rows from {len(frames)} runs")
    data = SemData(frame)
    return zscore(data, CONTINUOUS_COLUMNS) if standardize else data


def load_sem_csv(path: Union[str, Path]) -> SemData:
    frame = pd.read_csv(path)
    missing = [c for c in Y_COLUMNS + XI_COLUMNS if c not in frame.columns]
    if missing:
        raise ValidationError(f"CSV lacks columns: {', '.join(missing)}", field="csv")
    return zscore(SemData(frame[list(Y_COLUMNS + XI_COLUMNS)].astype(float)), CONTINUOUS_COLUMNS)


def synthetic_sem_data(n: int, seed: int = 0) -> SemData:
    """Rows drawn from the canonical model at its documented population parameters."""
    model = build_canonical_model()
    return simulate_data(model, population_parameters(model), n, np.random.default_rng(seed))


async def run_sem(data: SemData, out_dir: Union[str, Path, None] = None, seed: int = 0) -> FitResult:
    """Fit the canonical model and write fit.json, paths.csv and parameters.csv."""
    result = fit(build_canonical_model(), data, seed=seed)
    if out_dir is not None:
        store = RunStore(out_dir)
        store.root.mkdir(parents=True, exist_ok=True)
        await store.write_report_json("fit.json", result.summary())
        store.write_report_csv("paths.csv", result.path_table())
        store.write_report_csv("parameters.csv", result.parameter_table())
    return result


def sem_sources(runs: Optional[Union[str, Path]] = None, csv: Optional[Union[str, Path]] = None,
                synthetic: Optional[int] = None, seed: int = 0) -> SemData:
    """Dataset from exactly one of: run directories, a CSV file, a synthetic sample size."""
    chosen = [s for s in (runs, csv, synthetic) if s is not None]
    if len(chosen) != 1:
        raise ValidationError("Give exactly one of --runs, --csv, --synthetic", field="sem")
    if runs is not None:
        return build_sem_dataset(RunStore.discover(runs))
    if csv is not None:
        return load_sem_csv(csv)
    return synthetic_sem_data(int(synthetic), seed)


def condition_summaries(run_dirs: Sequence[Union[str, Path]]) -> Dict[str, ScoreSummary]:
    """Score summaries keyed by condition for already judged runs."""
    summaries = {}
    for path in run_dirs:
        store = RunStore.open(path)
        summaries[store.read_config().condition] = aggregate(store.read_scores())
    return summaries
