"""
Judge: score each prediction against the ground truth on four rubrics.

Every scored iteration costs exactly four backend calls, one per dimension
(entity, dimensions, movement, environment), each answered with an integer
0..5. A reply without a valid score is re-asked once and then left missing.
Iterations are scored concurrently up to a configured bound.
"""

import asyncio
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import EmptyRunError, MalformedScoreError, NonPositiveDimensionError
from app.models.agent import NO_VISUAL_INFORMATION, BackendConfig, PredictionRecord
from app.models.judge import DIMENSIONS, DimensionSummary, JudgeScore, ScoreSummary
from app.services.backends import BackendRequest, GenerativeBackend
from app.services.simworld import ROBOT_HEIGHT, ROBOT_LENGTH, ROBOT_WIDTH


logger = logging.getLogger(__name__)


RUBRICS_PATH = Path(__file__).resolve().parent.parent / "assets" / "rubrics_v1.json"

ACTUAL_DIMENSIONS = (ROBOT_LENGTH, ROBOT_HEIGHT, ROBOT_WIDTH)

# (upper bound of mean relative error in percent, score)
DIMENSION_BANDS = ((5.0, 5), (20.0, 4), (50.0, 3), (80.0, 2), (150.0, 1))


@dataclass(frozen=True)
class Rubric:
    """Six level descriptors, index = score."""

    dimension: str
    levels: Tuple[str, ...]
    ground_truth: str

    def __post_init__(self):
        if len(self.levels) != 6:
            raise ValueError(f"Rubric {self.dimension} needs exactly 6 levels")


def load_rubrics(path: Optional[Path] = None) -> Dict[str, Rubric]:
    """Versioned rubric texts from the assets directory."""
    data = json.loads(Path(path or RUBRICS_PATH).read_text(encoding="utf-8"))
    return {
        dim: Rubric(dimension=dim, levels=tuple(data["rubrics"][dim]), ground_truth=data["ground_truth"][dim])
        for dim in DIMENSIONS
    }


def _answer_text(pred: PredictionRecord, dimension: str) -> str:
    if dimension == "dimensions":
        d = pred.dimensions
        return f"length {d.length} m, height {d.height} m, width {d.width} m"
    return getattr(pred, dimension)


def build_judge_prompt(pred: PredictionRecord, rubric: Rubric) -> str:
    levels = "\n".join(f"{score}: {text}" for score, text in enumerate(rubric.levels))
    return (
        f"You are grading one answer about the {rubric.dimension} of a robot.\n\n"
        f"Ground truth:\n{rubric.ground_truth}\n\n"
        f"Answer to grade:\n{_answer_text(pred, rubric.dimension)}\n\n"
        f"Scoring levels:\n{levels}\n\n"
        'Reply with one JSON object: {"score": <integer 0-5>, "rationale": "<one line>"}'
    )


def parse_score(raw: str, dimension: str) -> Tuple[int, str]:
    """Integer score and rationale from a judge reply."""
    match = re.search(r"\{[\s\S]*?\}", raw)
    if match:
        try:
            obj = json.loads(match.group(0))
            score = obj.get("score")
            if isinstance(score, int) and not isinstance(score, bool) and 0 <= score <= 5:
                return score, str(obj.get("rationale", "")).strip()
        except (json.JSONDecodeError, AttributeError):
            pass
    match = re.search(r"\bscore\b\D{0,5}(?<![-\d])([0-5])\b(?!\.\d)", raw, re.IGNORECASE)
    if match:
        return int(match.group(1)), ""
    raise MalformedScoreError(dimension, raw)


def relative_error(actual: Sequence[float], estimated: Sequence[float]) -> Tuple[float, float, float]:
    """Per-axis |estimate - actual| / actual, in percent."""
    actual = np.asarray(actual, dtype=float)
    if np.any(actual <= 0):
        raise NonPositiveDimensionError(actual)
    errors = np.abs(np.asarray(estimated, dtype=float) - actual) / actual * 100.0
    return tuple(float(e) for e in errors)


def dimension_score(mean_error_percent: float) -> int:
    for bound, score in DIMENSION_BANDS:
        if mean_error_percent <= bound:
            return score
    return 0


def _contains(text: str, *words: str) -> bool:
    return any(re.search(rf"\b{w}", text) for w in words)


def _entity_score(text: str) -> int:
    if _contains(text, "mecabot"):
        return 5
    if _contains(text, "drone", "quadcopter", "aerial", "flying", "uav", "aircraft", "airborne"):
        return 1
    if _contains(text, "static", "stationary", "sensing unit", "fixed installation",
                 "human", "person", "animal", "whale", "fish"):
        return 0
    if _contains(text, "robot"):
        if _contains(text, "indoor") and _contains(text, "wheel", "mobile"):
            return 4
        return 3
    if _contains(text, "vehicle", "car", "cart", "rover"):
        return 2
    return 0


def _movement_score(text: str) -> int:
    if _contains(text, "stationary", "static", "no displacement", "does not move"):
        return 0
    if _contains(text, "fly", "flies", "flight", "hover", "airborne", "aerial", "swim"):
        return 1
    if _contains(text, "walk", "legs", "crawl"):
        return 2
    if _contains(text, "omnidirectional", "holonomic", "mecanum", "sideways", "any direction"):
        return 5
    if _contains(text, "wheel", "roll"):
        return 4
    if _contains(text, "ground", "drive", "glide", "slide", "move"):
        return 3
    return 0


def _environment_score(text: str) -> int:
    if NO_VISUAL_INFORMATION.lower() in text:
        return 1
    if _contains(text, "outdoor", "forest", "sky", "underwater", "ocean", "street"):
        return 0
    if _contains(text, "indoor", "enclosed", "room", "hall", "warehouse", "gym", "corridor"):
        if _contains(text, "warehouse", "hall", "gym", "corridor", "garage"):
            if _contains(text, "wall", "obstacle", "box", "shel", "column"):
                return 5
            return 4
        return 3
    if _contains(text, "floor", "area", "space"):
        return 2
    return 0


def mock_judge(pred: PredictionRecord, dimension: str,
               actual: Sequence[float] = ACTUAL_DIMENSIONS) -> int:
    """
    Deterministic rubric score.

    Dimensions are banded by mean relative error; the text dimensions use
    ordered keyword classes, first match wins.
    """
    if dimension == "dimensions":
        errors = relative_error(actual, pred.dimensions.as_tuple())
        return dimension_score(sum(errors) / 3.0)
    text = getattr(pred, dimension).lower()
    if dimension == "entity":
        return _entity_score(text)
    if dimension == "movement":
        return _movement_score(text)
    if dimension == "environment":
        return _environment_score(text)
    raise KeyError(dimension)


class MockJudgeBackend(GenerativeBackend):
    """Offline judge that answers in the live reply format."""

    def __init__(self, config: Optional[BackendConfig] = None):
        self.config = config or BackendConfig()
        self.name = "mock-judge"

    async def generate(self, request: BackendRequest) -> str:
        if request.prediction is None or request.dimension is None:
            raise ValueError("Mock judge requests need the prediction and the dimension")
        value = mock_judge(request.prediction, request.dimension)
        return json.dumps({"score": value, "rationale": f"keyword class {value} for {request.dimension}"})


async def _score_dimension(pred: PredictionRecord, rubric: Rubric, backend: GenerativeBackend,
                           iteration: int) -> Tuple[Optional[int], str]:
    request = BackendRequest(
        role="judge", prompt=build_judge_prompt(pred, rubric), iteration=iteration,
        prediction=pred, dimension=rubric.dimension,
    )
    for attempt in range(2):
        raw = await backend.generate(request)
        try:
            return parse_score(raw, rubric.dimension)
        except MalformedScoreError as e:
            logger.warning(
                f"Iteration {iteration}: judge reply for {rubric.dimension} unusable (attempt {attempt + 1})",
                extra={"iteration": iteration, "dimension": rubric.dimension, "raw": e.details.get("raw_excerpt")},
            )
    return None, ""


async def score(pred: PredictionRecord, rubrics: Dict[str, Rubric], backend: GenerativeBackend,
                iteration: Optional[int] = None) -> JudgeScore:
    """Score one prediction on every dimension."""
    iteration = pred.iteration + 1 if iteration is None else iteration
    values: Dict[str, Optional[int]] = {}
    rationales: Dict[str, str] = {}
    for dimension in DIMENSIONS:
        value, rationale = await _score_dimension(pred, rubrics[dimension], backend, iteration)
        values[dimension] = value
        if rationale:
            rationales[dimension] = rationale
    return JudgeScore(iteration=iteration, rationales=rationales, **values)


async def score_run(predictions: Sequence[Tuple[int, PredictionRecord]], backend: GenerativeBackend,
                    rubrics: Optional[Dict[str, Rubric]] = None,
                    concurrency: Optional[int] = None) -> List[JudgeScore]:
    """Score all (iteration, prediction) pairs with bounded concurrency, in iteration order."""
    rubrics = rubrics or load_rubrics()
    semaphore = asyncio.Semaphore(concurrency or settings.judge_concurrency)

    async def _bounded(iteration: int, pred: PredictionRecord) -> JudgeScore:
        async with semaphore:
            return await score(pred, rubrics, backend, iteration)

    results = await asyncio.gather(*(_bounded(i, p) for i, p in predictions))
    logger.info(f"Scored {len(results)} iterations with {backend.name}")
    return sorted(results, key=lambda s: s.iteration)


def aggregate(scores: Sequence[JudgeScore]) -> ScoreSummary:
    """Mean and population standard deviation per dimension."""
    if not scores:
        raise EmptyRunError()
    ordered = sorted(scores, key=lambda s: s.iteration)
    summaries: Dict[str, DimensionSummary] = {}
    series: Dict[str, List[Tuple[int, int]]] = {}
    present = 0
    for dimension in DIMENSIONS:
        points = [(s.iteration, s.get(dimension)) for s in ordered if s.get(dimension) is not None]
        values = np.array([v for _, v in points], dtype=float)
        present += len(points)
        summaries[dimension] = DimensionSummary(
            mean=float(values.mean()) if len(values) else 0.0,
            sd=float(values.std(ddof=0)) if len(values) else 0.0,
            n=len(points),
            missing=len(ordered) - len(points),
        )
        series[dimension] = points
    return ScoreSummary(
        dimensions=summaries,
        series=series,
        iterations=len(ordered),
        coverage=present / (len(ordered) * len(DIMENSIONS)),
    )
