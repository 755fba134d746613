"""
Agent loop: prompt the model once per packet and keep a one-step memory.

Each iteration renders the masked four-phase prompt from the current packet
and the previous prediction, calls the backend, parses the reply into a
PredictionRecord and updates the memory. Unparseable replies are logged and
skipped; the memory is then carried forward unchanged.
"""

import hashlib
import json
import logging
import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from string import Template
from typing import Dict, Iterable, List, Optional, Tuple

from pydantic import ValidationError as PydanticValidationError

from app.core.exceptions import MalformedResponseError, ValidationError
from app.models.agent import (
    NO_VISUAL_INFORMATION,
    Dimensions,
    IterationRecord,
    MemoryState,
    PredictionRecord,
    TranscriptEntry,
)
from app.models.experiment import SimulationConfig
from app.models.packets import FusedPacket
from app.services.backends import BackendRequest, GenerativeBackend
from app.services.fusion import PacketStream
from app.services.simworld import Simulator, WorldMap


logger = logging.getLogger(__name__)


PROMPT_TEMPLATE_PATH = Path(__file__).resolve().parent.parent / "assets" / "self_prompt_v1.txt"

# Technical vocabulary that must never reach the model
MASKED_TERMS_PATTERN = re.compile(
    r"\b(lidar|imu|encoders?|sensors?|rgb-d camera|camera|odometry)\b", re.IGNORECASE
)

IMAGE_PRESENT_LINE = "An image is attached to this message."
IMAGE_ABSENT_LINE = "No image is provided with this message."

_UNIT_SCALE = {"mm": 0.001, "cm": 0.01, "m": 1.0}
_NUMBER_WITH_UNIT = re.compile(r"(-?\d+(?:\.\d+)?)\s*(mm|cm|m)?\b", re.IGNORECASE)
# uncertainty terms such as "240.0±0.10 mm"
_PLUS_MINUS = re.compile(r"\s*(?:±|\+/-)\s*\d+(?:\.\d+)?")
_FENCED_JSON = re.compile(r"```(?:json)?\s*([\s\S]*?)```")


@dataclass(frozen=True)
class TerminologyMask:
    """Replacement table from technical terms to plain descriptions."""

    table: Tuple[Tuple[str, str], ...] = (
        ("RGB-D camera", "image"),
        ("encoders", "position, linear velocity and orientation"),
        ("encoder", "position, linear velocity and orientation"),
        ("odometry", "position, linear velocity and orientation"),
        ("sensors", "sources of information"),
        ("sensor", "source of information"),
        ("LiDAR", "proximity to obstacles"),
        ("IMU", "linear acceleration"),
        ("camera", "image"),
    )

    def apply(self, text: str) -> str:
        """Replace every table term, longest first, case-insensitively."""
        for term, replacement in sorted(self.table, key=lambda item: -len(item[0])):
            text = re.sub(rf"\b{re.escape(term)}\b", replacement, text, flags=re.IGNORECASE)
        return text

    def packet_labels(self) -> Dict[str, str]:
        """Plain labels for the packet fields shown to the model."""
        return {
            "timestamp": "time (s)",
            "odometry": "position, linear velocity and orientation",
            "imu": "linear acceleration",
            "image": "image",
            "scan": "proximity to obstacles (m)",
        }


DEFAULT_MASK = TerminologyMask()


def contains_masked_terms(text: str) -> bool:
    return MASKED_TERMS_PATTERN.search(text) is not None


@dataclass
class AgentPrompt:
    """Rendered prompt text; the image stays with the packet."""

    text: str
    has_image: bool


def _load_template() -> Template:
    return Template(PROMPT_TEMPLATE_PATH.read_text(encoding="utf-8"))


_TEMPLATE = _load_template()


def render_reading(packet: FusedPacket, mask: TerminologyMask = DEFAULT_MASK) -> str:
    """Packet contents under plain labels; ablated modalities are left out."""
    labels = mask.packet_labels()
    view: Dict[str, object] = {labels["timestamp"]: packet.timestamp}
    for key, modality in (("odometry", "odometry"), ("imu", "imu"), ("image", "camera"), ("scan", "lidar")):
        if modality in packet.ablated:
            continue
        value = getattr(packet, key)
        if key == "image":
            view[labels[key]] = "attached" if value is not None else "not available"
        elif value is None:
            view[labels[key]] = "not available"
        else:
            view[labels[key]] = value.model_dump(mode="json", by_alias=True)
    return json.dumps(view, indent=1, ensure_ascii=False)


def build_prompt(packet: FusedPacket, memory: MemoryState,
                 mask: TerminologyMask = DEFAULT_MASK) -> AgentPrompt:
    """
    Render the four-phase prompt for one iteration.

    The authored text and the packet labels go through the mask; the memory
    summary is the model's own earlier reply and is inserted verbatim.
    """
    skeleton = _TEMPLATE.safe_substitute(
        image_line=IMAGE_PRESENT_LINE if packet.has_image else IMAGE_ABSENT_LINE,
        reading=render_reading(packet, mask),
    )
    text = Template(mask.apply(skeleton)).safe_substitute(memory=memory.summary)
    return AgentPrompt(text=text, has_image=packet.has_image)


def memory_section(prompt_text: str) -> str:
    """Content between the memory markers of a rendered prompt."""
    match = re.search(r"<<<\n([\s\S]*?)\n>>>", prompt_text)
    return match.group(1) if match else ""


def extract_json_object(raw: str) -> Optional[dict]:
    """First JSON object in a reply, fenced block preferred."""
    candidates: List[str] = [m.group(1) for m in _FENCED_JSON.finditer(raw)]
    candidates.append(raw)
    decoder = json.JSONDecoder()
    for text in candidates:
        for start in (i for i, ch in enumerate(text) if ch == "{"):
            try:
                obj, _ = decoder.raw_decode(text, start)
            except json.JSONDecodeError:
                continue
            if isinstance(obj, dict):
                return obj
    return None


def _finite(meters: float) -> float:
    if not math.isfinite(meters):
        raise MalformedResponseError(f"dimension {meters} is not finite")
    return meters


def _to_meters(value) -> float:
    if isinstance(value, bool):
        raise MalformedResponseError("dimension is not a number")
    if isinstance(value, (int, float)):
        return _finite(float(value))
    if isinstance(value, str):
        found = _NUMBER_WITH_UNIT.findall(_PLUS_MINUS.sub("", value))
        if found:
            number, unit = found[0]
            return _finite(float(number) * _UNIT_SCALE[(unit or "m").lower()])
    raise MalformedResponseError(f"cannot read dimension {value!r}")


def parse_dimensions(value) -> Tuple[float, float, float]:
    """(length, height, width) in meters from an object, a list or a 'L x H x W unit' string."""
    if isinstance(value, dict):
        lowered = {str(k).lower(): v for k, v in value.items()}
        try:
            return tuple(_to_meters(lowered[k]) for k in ("length", "height", "width"))
        except KeyError:
            raise MalformedResponseError("dimensions need length, height and width")
    if isinstance(value, (list, tuple)) and len(value) == 3:
        return tuple(_to_meters(v) for v in value)
    if isinstance(value, str):
        found = _NUMBER_WITH_UNIT.findall(_PLUS_MINUS.sub("", value))
        if len(found) == 3:
            trailing = next((unit for _, unit in reversed(found) if unit), "m").lower()
            return tuple(_finite(float(num) * _UNIT_SCALE[(unit or trailing).lower()]) for num, unit in found)
    raise MalformedResponseError(f"cannot read dimensions {value!r}")


def parse_prediction(raw: str, iteration: int, had_image: bool = True) -> PredictionRecord:
    """
    Parse a model reply into a PredictionRecord.

    Raises:
        MalformedResponseError: no JSON object, missing fields or bad values
    """
    obj = extract_json_object(raw)
    if obj is None:
        raise MalformedResponseError("no JSON object in reply", raw=raw)
    fields = {str(k).lower(): v for k, v in obj.items()}
    missing = [k for k in ("dimensions", "movement", "entity", "environment") if k not in fields]
    if missing:
        raise MalformedResponseError(f"missing fields: {', '.join(missing)}", raw=raw)

    length, height, width = parse_dimensions(fields["dimensions"])
    environment = fields["environment"]
    if not had_image and environment != NO_VISUAL_INFORMATION:
        logger.warning(
            f"Environment answered without an image at iteration {iteration}; replaced",
            extra={"iteration": iteration},
        )
        environment = NO_VISUAL_INFORMATION
    try:
        return PredictionRecord(
            iteration=iteration,
            dimensions=Dimensions(length=length, height=height, width=width),
            movement=str(fields["movement"]),
            entity=str(fields["entity"]),
            environment=str(environment),
        )
    except PydanticValidationError as e:
        raise MalformedResponseError("; ".join(err["msg"] for err in e.errors()), raw=raw)


def serialize_prediction(pred: PredictionRecord) -> str:
    return pred.model_dump_json()


def update_memory(prev: MemoryState, pred: PredictionRecord, memory_ablated: bool = False) -> MemoryState:
    """Memory for the next iteration: only the latest prediction survives."""
    if pred.iteration != prev.iteration:
        raise ValidationError(
            f"Prediction for iteration {pred.iteration} cannot update memory at {prev.iteration}",
            field="iteration",
        )
    summary = "" if memory_ablated else serialize_prediction(pred)
    return MemoryState(iteration=prev.iteration + 1, summary=summary)


def carry_memory(prev: MemoryState) -> MemoryState:
    """Memory after an iteration whose reply was unusable."""
    return MemoryState(iteration=prev.iteration + 1, summary=prev.summary)


@dataclass
class RunLog:
    """Everything one session produced, in iteration order."""

    records: List[IterationRecord] = field(default_factory=list)
    transcript: List[TranscriptEntry] = field(default_factory=list)
    packets: List[FusedPacket] = field(default_factory=list)

    @property
    def predictions(self) -> List[Tuple[int, PredictionRecord]]:
        return [(r.iteration, r.prediction) for r in self.records if r.prediction is not None]

    @property
    def parse_failures(self) -> int:
        return sum(1 for r in self.records if r.error is not None)


async def run_session(n_iterations: int, ablation_mask: Iterable[str], backend: GenerativeBackend,
                      seed: int, *, world: Optional[WorldMap] = None,
                      sim_config: Optional[SimulationConfig] = None,
                      packet_rate_hz: Optional[int] = None, window: Optional[float] = None,
                      mask: TerminologyMask = DEFAULT_MASK, store=None, monitor=None) -> RunLog:
    """
    Run ``n_iterations`` agent iterations on a fresh simulation.

    When a store is given every iteration is persisted as soon as it ends,
    so an aborted run keeps its prefix on disk.
    """
    if n_iterations < 1:
        raise ValidationError("n_iterations must be at least 1", field="n_iterations")
    ablation = frozenset(ablation_mask)
    memory_ablated = "memory" in ablation
    sim_config = sim_config or SimulationConfig()
    world = world or WorldMap.generate(seed)
    stream = PacketStream(Simulator(world, sim_config, seed), ablation, packet_rate_hz, window)

    log = RunLog()
    memory = MemoryState()
    logger.info(
        f"Starting session: {n_iterations} iterations, ablation={sorted(ablation) or 'none'}, backend={backend.name}",
        extra={"seed": seed, "ablation": sorted(ablation)},
    )

    packets = iter(stream)
    for loop_index in range(n_iterations):
        packet = next(packets)
        iteration = loop_index + 1
        prompt = build_prompt(packet, memory, mask)
        request = BackendRequest(
            role="agent", prompt=prompt.text, iteration=iteration, packet=packet,
            memory=memory, memory_ablated=memory_ablated,
        )

        started = time.perf_counter()
        raw = await backend.generate(request)
        latency_ms = (time.perf_counter() - started) * 1000.0

        prediction: Optional[PredictionRecord] = None
        error: Optional[str] = None
        try:
            prediction = parse_prediction(raw, loop_index, packet.has_image)
            memory = update_memory(memory, prediction, memory_ablated)
        except MalformedResponseError as e:
            logger.warning(
                f"Iteration {iteration}: {e.message}; keeping previous memory",
                extra={"iteration": iteration, "reason": e.details.get("reason")},
            )
            error = e.error_code.value
            memory = carry_memory(memory)

        record = IterationRecord(
            iteration=iteration,
            packet_timestamp=packet.timestamp,
            had_image=packet.has_image,
            prompt_sha256=hashlib.sha256(prompt.text.encode("utf-8")).hexdigest(),
            prediction=prediction,
            memory=memory,
            error=error,
            latency_ms=latency_ms,
        )
        entry = TranscriptEntry(
            iteration=iteration, prompt=prompt.text, image_attached=prompt.has_image, response=raw
        )

        if store is not None:
            await store.append_iteration(packet, entry, record)
        if monitor is not None:
            monitor.record_iteration(latency_ms, failed=error is not None)

        # the rendered frame is only needed until it is stored
        packet.attach_frame(None)
        log.records.append(record)
        log.transcript.append(entry)
        log.packets.append(packet)

    logger.info(
        f"Session finished: {len(log.records)} iterations, {log.parse_failures} unusable replies",
        extra={"iterations": len(log.records), "parse_failures": log.parse_failures},
    )
    return log
