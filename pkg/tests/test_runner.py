"""
Tests for experiment orchestration: run directories, judging, reports,
ablation and the SEM dataset built from runs.
"""
import json

import numpy as np
import pandas as pd
import pytest

from app.core.exceptions import MissingScoresError, RunNotFoundError, ValidationError
from app.models.experiment import ExperimentConfig
from app.models.judge import DIMENSIONS
from app.services import runner
from app.services.performance_monitor import PerformanceMonitor
from app.services.run_store import RunStore
from app.services.sem import XI_COLUMNS, Y_COLUMNS


def _with(config, **update):
    return ExperimentConfig.model_validate({**config.model_dump(), **update})


class TestRunStore:
    """Run directory layout."""

    def test_create_replaces_existing(self, temp_directory):
        store = RunStore.create(temp_directory, "full-s1")
        (store.root / "stale.txt").write_text("old")
        store = RunStore.create(temp_directory, "full-s1")
        assert not (store.root / "stale.txt").exists()
        assert (store.root / RunStore.IMAGES_DIR).is_dir()

    def test_open_missing(self, temp_directory):
        with pytest.raises(RunNotFoundError):
            RunStore.open(temp_directory / "nothing")

    def test_discover_empty_directory(self, temp_directory):
        with pytest.raises(RunNotFoundError):
            RunStore.discover(temp_directory)

    def test_missing_scores(self, temp_directory):
        with pytest.raises(MissingScoresError):
            RunStore(temp_directory).read_scores()


class TestPerformanceMonitor:
    """Per-session latency and failure tracking."""

    def test_summary(self):
        monitor = PerformanceMonitor(sample_every=2)
        for latency, failed in ((10.0, False), (20.0, True), (30.0, False), (40.0, False)):
            monitor.record_iteration(latency, failed)
        summary = monitor.summary()
        assert summary["iterations"] == 4
        assert summary["failures"] == 1
        assert summary["failure_rate"] == 0.25
        assert summary["latency_ms"]["mean"] == 25.0
        assert summary["latency_ms"]["max"] == 40.0
        assert len(summary["snapshots"]) == 2
        assert [h["iteration"] for h in monitor.history()] == [1, 2, 3, 4]

    def test_empty_summary(self):
        summary = PerformanceMonitor().summary()
        assert summary["iterations"] == 0
        assert summary["latency_ms"]["mean"] is None


class TestSingleRun:
    """simulate, run, judge and report on one condition."""

    @pytest.mark.asyncio
    async def test_simulate(self, mock_config, temp_directory):
        store = await runner.simulate(_with(mock_config, n_iterations=4), temp_directory)
        assert store.run_id == "sim-full-s7"
        assert (store.root / "world.json").is_file()
        assert len(store.read_packets()) == 4
        trajectory = pd.read_csv(store.root / "report" / "trajectory.csv")
        assert list(trajectory["timestamp"]) == [0.0, 1.0, 2.0, 3.0]
        assert len(list((store.root / "images").glob("*.png"))) == 4

    @pytest.mark.asyncio
    async def test_run_writes_artifacts(self, mock_config, temp_directory):
        store = await runner.run_experiment(mock_config, temp_directory)
        assert store.run_id == "full-s7"
        assert len(store.read_packets()) == 12
        assert len(store.read_transcript()) == 12
        records = store.read_records()
        assert [r.iteration for r in records] == list(range(1, 13))
        assert store.read_config().agent_backend.seed == 7
        performance = json.loads((store.root / "report" / "performance.json").read_text())
        assert performance["iterations"] == 12
        assert performance["retries"] == {}

    @pytest.mark.asyncio
    async def test_same_config_same_bytes(self, mock_config, temp_directory):
        first = await runner.run_experiment(mock_config, temp_directory / "a")
        second = await runner.run_experiment(mock_config, temp_directory / "b")
        await runner.judge_run(first.root)
        await runner.judge_run(second.root)
        for name in (RunStore.CONFIG, RunStore.PACKETS, RunStore.TRANSCRIPT, RunStore.SCORES):
            assert (first.root / name).read_bytes() == (second.root / name).read_bytes()
        png = sorted((first.root / "images").glob("*.png"))[3].name
        assert (first.root / "images" / png).read_bytes() == (second.root / "images" / png).read_bytes()

    @pytest.mark.asyncio
    async def test_judge_and_report(self, mock_config, temp_directory):
        store = await runner.run_experiment(mock_config, temp_directory)
        summary = await runner.judge_run(store.root)
        assert summary.iterations == 12
        assert summary.coverage == 1.0

        paths = await runner.report(store.root)
        for dimension in DIMENSIONS:
            series = pd.read_csv(paths[f"series_{dimension}"])
            assert list(series.columns) == ["iteration", "score"]
            assert list(series["iteration"]) == list(range(1, 13))
        payload = json.loads((store.root / "report" / "summary.json").read_text())
        assert payload["condition"] == "full"
        assert set(payload["dimensions"]) == set(DIMENSIONS)

    @pytest.mark.asyncio
    async def test_report_needs_scores(self, mock_config, temp_directory):
        store = await runner.run_experiment(_with(mock_config, n_iterations=3), temp_directory)
        with pytest.raises(MissingScoresError):
            await runner.report(store.root)


class TestAblation:
    """All conditions on one seed."""

    def test_report_needs_two_conditions(self):
        with pytest.raises(ValidationError):
            runner.ablation_report({})

    @pytest.mark.asyncio
    async def test_ablate_writes_table(self, mock_config, temp_directory):
        table = await runner.ablate(_with(mock_config, n_iterations=20), temp_directory)
        assert list(table.index) == list(runner.ABLATION_CONDITIONS)
        assert {f"{d}_mean" for d in DIMENSIONS} <= set(table.columns)
        for condition in runner.ABLATION_CONDITIONS:
            assert (temp_directory / f"{condition}-s7" / RunStore.SCORES).is_file()
        assert (temp_directory / "ablation-s7" / "report" / "summary.csv").is_file()
        radar = json.loads((temp_directory / "ablation-s7" / "report" / "radar.json").read_text())
        assert radar["axes"] == list(DIMENSIONS)
        assert len(radar["series"]) == 6
        # the ablation summary directory is not itself a run
        assert len(RunStore.discover(temp_directory)) == 6

    @pytest.mark.asyncio
    async def test_parallel_matches_sequential(self, mock_config, temp_directory):
        conditions = {"full": [], "no-memory": ["memory"]}
        base = _with(mock_config, n_iterations=10)
        sequential = await runner.ablate(base, temp_directory / "seq", conditions)
        parallel = await runner.ablate(base, temp_directory / "par", conditions, parallel=True)
        pd.testing.assert_frame_equal(sequential, parallel)

    @pytest.mark.slow
    @pytest.mark.integration
    @pytest.mark.asyncio
    async def test_mock_condition_profile(self, mock_config, temp_directory):
        table = await runner.ablate(_with(mock_config, n_iterations=170), temp_directory)

        for dimension in DIMENSIONS:
            sds = table[f"{dimension}_sd"]
            assert sds.idxmax() == "no-memory"
            assert table.loc["full", f"{dimension}_mean"] >= 3.0
        assert table.loc["no-camera", "entity_mean"] <= table.loc["full", "entity_mean"] - 1.0

        series = pd.read_csv(temp_directory / "full-s7" / "report" / "series_entity.csv")
        late = series[series["iteration"] > 20]["score"].to_numpy()
        windows = [late[i:i + 50].mean() for i in range(0, len(late) - 49, 50)]
        assert len(windows) == 3
        assert all(b >= a for a, b in zip(windows, windows[1:]))


class TestSemDataset:
    """Rows for structural model estimation from judged runs."""

    @pytest.mark.asyncio
    async def test_columns_and_flags(self, mock_config, temp_directory):
        conditions = {"full": [], "no-camera": ["camera"]}
        await runner.ablate(_with(mock_config, n_iterations=30), temp_directory, conditions)
        runs = RunStore.discover(temp_directory)

        data = runner.build_sem_dataset(runs, standardize=False)
        frame = data.frame
        assert list(frame.columns) == list(Y_COLUMNS + XI_COLUMNS)
        assert data.n == 60

        full = frame.iloc[:30]
        no_camera = frame.iloc[30:]
        assert set(full["Image"]) == {1.0}
        assert set(no_camera["Image"]) == {0.0}
        assert full["Memory"].iloc[0] == 0.0
        assert full["Memory"].iloc[1:].eq(1.0).all()
        assert frame[list(Y_COLUMNS)].isin(range(6)).all().all()

        standardized = runner.build_sem_dataset(runs)
        assert standardized.frame["Velocity"].mean() == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.asyncio
    async def test_memory_flag_off_without_memory(self, mock_config, temp_directory):
        config = _with(mock_config, n_iterations=6, ablation=["memory"])
        store = await runner.run_experiment(config, temp_directory)
        await runner.judge_run(store.root)
        frame = runner.build_sem_dataset([store.root], standardize=False).frame
        assert set(frame["Memory"]) == {0.0}

    @pytest.mark.asyncio
    async def test_unjudged_run(self, mock_config, temp_directory):
        store = await runner.run_experiment(_with(mock_config, n_iterations=3), temp_directory)
        with pytest.raises(MissingScoresError):
            runner.build_sem_dataset([store.root])

    def test_sem_sources_needs_one(self):
        with pytest.raises(ValidationError):
            runner.sem_sources()
        with pytest.raises(ValidationError):
            runner.sem_sources(csv="a.csv", synthetic=100)

    def test_csv_source(self, temp_directory):
        data = runner.synthetic_sem_data(120, seed=3)
        path = temp_directory / "rows.csv"
        data.frame.to_csv(path, index=False)
        loaded = runner.load_sem_csv(path)
        assert loaded.n == 120
        assert np.isclose(loaded.frame["Position"].std(ddof=0), 1.0)

    def test_csv_missing_columns(self, temp_directory):
        path = temp_directory / "rows.csv"
        pd.DataFrame({"Memory": [0, 1]}).to_csv(path, index=False)
        with pytest.raises(ValidationError):
            runner.load_sem_csv(path)

    @pytest.mark.asyncio
    async def test_run_sem_writes_reports(self, temp_directory):
        result = await runner.run_sem(runner.synthetic_sem_data(400, seed=1), temp_directory, seed=1)
        fit_report = json.loads((temp_directory / "report" / "fit.json").read_text())
        assert fit_report["df"] == 17
        assert fit_report["cfi"] is not None
        paths = pd.read_csv(temp_directory / "report" / "paths.csv")
        assert "std_estimate" in paths.columns
        assert len(pd.read_csv(temp_directory / "report" / "parameters.csv")) == result.model.n_free
