"""
Run directory persistence for MirrorBot.

Layout of one run::

    runs/<id>/config.json
    runs/<id>/packets.jsonl       canonical packets, one per iteration
    runs/<id>/transcript.jsonl    prompt and raw reply per iteration
    runs/<id>/runlog.jsonl        parsed prediction, memory, errors, latency
    runs/<id>/scores.jsonl        judge scores (after ``judge``)
    runs/<id>/images/             PNG frames for ``reference`` image encoding
    runs/<id>/report/             summaries, series and fit reports
"""

import json
import logging
import shutil
from pathlib import Path
from typing import Any, Iterable, List, Optional, Union

import aiofiles
import pandas as pd

from app.core.config import settings
from app.core.exceptions import MissingScoresError, RunNotFoundError, StorageError
from app.models.agent import IterationRecord, TranscriptEntry
from app.models.experiment import ExperimentConfig
from app.models.judge import JudgeScore
from app.models.packets import FusedPacket
from app.services.fusion import parse_packet, serialize_packet


logger = logging.getLogger(__name__)


class RunStore:
    """
    Append-only store for one run directory.

    Features:
    - Incremental JSONL appends, so an aborted run keeps its prefix
    - PNG frames next to the packets that reference them
    - Stable JSON formatting (sorted keys) for byte-comparable artifacts
    - Typed read-back of every artifact for judging, reporting and SEM
    """

    CONFIG = "config.json"
    PACKETS = "packets.jsonl"
    TRANSCRIPT = "transcript.jsonl"
    RUNLOG = "runlog.jsonl"
    SCORES = "scores.jsonl"
    IMAGES_DIR = "images"
    REPORT_DIR = "report"

    def __init__(self, root: Union[str, Path], image_encoding: Optional[str] = None):
        self.root = Path(root)
        self.image_encoding = image_encoding or settings.image_encoding

    @classmethod
    def create(cls, runs_dir: Union[str, Path], run_id: str,
               image_encoding: Optional[str] = None) -> "RunStore":
        """Fresh run directory; artifacts of an earlier run with the same id are replaced."""
        root = Path(runs_dir) / run_id
        try:
            if root.exists():
                logger.info(f"Replacing existing run directory {root}")
                shutil.rmtree(root)
            (root / cls.IMAGES_DIR).mkdir(parents=True)
        except OSError as e:
            raise StorageError("create run directory", str(e))
        return cls(root, image_encoding)

    @classmethod
    def open(cls, path: Union[str, Path]) -> "RunStore":
        root = Path(path)
        if not (root / cls.CONFIG).is_file():
            raise RunNotFoundError(str(root))
        store = cls(root)
        store.image_encoding = store.read_config().image_encoding
        return store

    @staticmethod
    def discover(path: Union[str, Path]) -> List[Path]:
        """Agent runs at ``path``: the path itself, or its immediate children that hold a run log."""
        root = Path(path)
        if (root / RunStore.CONFIG).is_file():
            return [root]
        if not root.is_dir():
            raise RunNotFoundError(str(root))
        runs = sorted(
            p for p in root.iterdir() if (p / RunStore.CONFIG).is_file() and (p / RunStore.RUNLOG).is_file()
        )
        if not runs:
            raise RunNotFoundError(str(root))
        return runs

    @property
    def run_id(self) -> str:
        return self.root.name

    @property
    def report_dir(self) -> Path:
        path = self.root / self.REPORT_DIR
        path.mkdir(parents=True, exist_ok=True)
        return path

    @property
    def has_scores(self) -> bool:
        return (self.root / self.SCORES).is_file()

    async def _write(self, path: Path, data: bytes, mode: str = "wb") -> None:
        try:
            async with aiofiles.open(path, mode) as f:
                await f.write(data)
        except OSError as e:
            raise StorageError(f"write {path.name}", str(e))

    async def _append_line(self, name: str, line: str) -> None:
        await self._write(self.root / name, (line + "\n").encode("utf-8"), mode="ab")

    async def write_config(self, config: ExperimentConfig) -> None:
        payload = json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
        await self._write(self.root / self.CONFIG, payload.encode("utf-8"))

    async def append_packet(self, packet: FusedPacket) -> None:
        if self.image_encoding == "reference" and packet.image is not None and packet.frame is not None:
            await self._write(self.root / packet.image, packet.frame.to_png())
        await self._append_line(self.PACKETS, serialize_packet(packet, self.image_encoding).decode("utf-8"))

    async def append_iteration(self, packet: FusedPacket, entry: TranscriptEntry,
                               record: IterationRecord) -> None:
        """Persist one iteration: frame, packet line, transcript line, run-log line."""
        await self.append_packet(packet)
        await self._append_line(self.TRANSCRIPT, entry.model_dump_json())
        await self._append_line(self.RUNLOG, record.model_dump_json())

    async def write_scores(self, scores: Iterable[JudgeScore]) -> None:
        lines = "".join(
            json.dumps(score.model_dump(mode="json"), sort_keys=True) + "\n" for score in scores
        )
        await self._write(self.root / self.SCORES, lines.encode("utf-8"))

    async def write_report_json(self, name: str, payload: Any) -> Path:
        path = self.report_dir / name
        text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
        await self._write(path, text.encode("utf-8"))
        return path

    def write_report_csv(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.report_dir / name
        try:
            frame.to_csv(path, index=False)
        except OSError as e:
            raise StorageError(f"write {name}", str(e))
        return path

    def _read_lines(self, name: str) -> List[str]:
        path = self.root / name
        if not path.is_file():
            raise RunNotFoundError(str(path))
        with open(path, "r", encoding="utf-8") as handle:
            return [line for line in handle if line.strip()]

    def read_config(self) -> ExperimentConfig:
        with open(self.root / self.CONFIG, "r", encoding="utf-8") as handle:
            return ExperimentConfig.model_validate(json.load(handle))

    def read_packets(self) -> List[FusedPacket]:
        return [parse_packet(line) for line in self._read_lines(self.PACKETS)]

    def read_transcript(self) -> List[TranscriptEntry]:
        return [TranscriptEntry.model_validate_json(line) for line in self._read_lines(self.TRANSCRIPT)]

    def read_records(self) -> List[IterationRecord]:
        return [IterationRecord.model_validate_json(line) for line in self._read_lines(self.RUNLOG)]

    def read_scores(self) -> List[JudgeScore]:
        if not self.has_scores:
            raise MissingScoresError(str(self.root))
        return [JudgeScore.model_validate_json(line) for line in self._read_lines(self.SCORES)]


def _json_default(value: Any) -> Any:
    # numpy scalars and arrays in report payloads
    if hasattr(value, "tolist"):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
