"""
Sensor fusion: align raw streams and assemble one packet per second.

Raw samples are buffered per modality; at every packet time the nearest
sample of each modality inside the alignment window is taken, numbers are
truncated to one decimal and the timestamp is re-referenced to the session
start. Packets serialize to canonical JSON with a fixed key order.
"""

import base64
import bisect
import json
import logging
import math
from dataclasses import dataclass
from decimal import Decimal, ROUND_DOWN
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from app.core.config import settings
from app.core.exceptions import MalformedScanError, NegativeTimeError, OutOfOrderSampleError, ValidationError
from app.models.packets import FusedPacket, ImuReading, OdometryReading, Quaternion, ScanReading, Vector3
from app.models.validators import MODALITY_FIELDS
from app.services.simworld import (
    LIDAR_BEAMS,
    SECTOR_NAMES,
    LidarScan,
    Simulator,
    sector_clearances,
)


logger = logging.getLogger(__name__)


SENSOR_MODALITIES = ("odometry", "imu", "camera", "lidar")
PACKET_KEYS = ("odometry", "imu", "image", "scan")
_KEY_MODALITY = {field: modality for modality, field in MODALITY_FIELDS.items()}
_TOLERANCE = 1e-9


def truncate_one_decimal(x: float) -> float:
    """Truncate toward zero to one decimal; negative zero becomes 0.0."""
    if not math.isfinite(x):
        raise ValidationError(f"Cannot truncate non-finite value {x!r}")
    return float(Decimal(repr(float(x))).quantize(Decimal("0.1"), rounding=ROUND_DOWN)) + 0.0


def _truncate_all(values: Iterable[float]) -> List[float]:
    return [truncate_one_decimal(v) for v in values]


def rereference_timestamps(session_start: float, t: float) -> float:
    """Seconds since session start, truncated to one decimal."""
    if t < session_start:
        raise NegativeTimeError(timestamp=t, session_start=session_start)
    elapsed = Decimal(repr(float(t))) - Decimal(repr(float(session_start)))
    return float(elapsed.quantize(Decimal("0.1"), rounding=ROUND_DOWN)) + 0.0


def image_reference(timestamp: float) -> str:
    """Relative path of the PNG stored for a packet timestamp."""
    return f"images/{int(round(timestamp * 10)):06d}.png"


class SensorBuffers:
    """Per-modality time-ordered sample buffers with a retention horizon."""

    def __init__(self, horizon: Optional[float] = None):
        self.horizon = settings.buffer_horizon if horizon is None else horizon
        self._times: Dict[str, List[float]] = {m: [] for m in SENSOR_MODALITIES}
        self._samples: Dict[str, List[object]] = {m: [] for m in SENSOR_MODALITIES}

    def push(self, modality: str, sample) -> None:
        if modality not in self._times:
            raise ValidationError(f"Unknown modality: {modality}", field="modality")
        times = self._times[modality]
        t = float(sample.timestamp)
        if times and t <= times[-1]:
            raise OutOfOrderSampleError(modality, t, times[-1])
        times.append(t)
        self._samples[modality].append(sample)

        cutoff = bisect.bisect_left(times, t - self.horizon)
        if cutoff:
            del times[:cutoff]
            del self._samples[modality][:cutoff]

    def ingest(self, emitted: Iterable[Tuple[str, object]]) -> None:
        for modality, sample in emitted:
            self.push(modality, sample)

    def times(self, modality: str) -> List[float]:
        return self._times[modality]

    def samples(self, modality: str) -> List[object]:
        return self._samples[modality]

    def __len__(self) -> int:
        return sum(len(v) for v in self._times.values())


def align_nearest(buffers: SensorBuffers, modality: str, t_ref: float,
                  window: float = 0.050) -> Optional[object]:
    """
    Sample of ``modality`` nearest to ``t_ref`` within ``window`` seconds.

    Ties go to the earlier sample; returns None when nothing is close enough.
    """
    times = buffers.times(modality)
    if not times:
        return None
    i = bisect.bisect_left(times, t_ref)
    best: Optional[int] = None
    best_gap = math.inf
    for j in (i - 1, i):
        if 0 <= j < len(times):
            gap = abs(times[j] - t_ref)
            if gap < best_gap - _TOLERANCE:
                best, best_gap = j, gap
    if best is None or best_gap > window + _TOLERANCE:
        return None
    return buffers.samples(modality)[best]


@dataclass(frozen=True)
class SectorScan:
    """Untruncated minimum clearance per compass sector."""

    clearances: Tuple[float, ...]

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(SECTOR_NAMES, self.clearances))


def sectorize_scan(scan: LidarScan, expected_beams: int = LIDAR_BEAMS) -> SectorScan:
    """Reduce a sweep to the minimum range of each of the eight compass sectors."""
    ranges = np.asarray(scan.ranges, dtype=np.float64)
    if ranges.ndim != 1 or ranges.size != expected_beams:
        raise MalformedScanError(beams=int(ranges.size), expected=expected_beams)
    return SectorScan(tuple(float(v) for v in sector_clearances(ranges, scan.angle_increment_deg)))


def _odometry_reading(sample) -> OdometryReading:
    return OdometryReading(
        position=Vector3(**dict(zip("xyz", _truncate_all(sample.position)))),
        orientation=Quaternion(**dict(zip("xyzw", _truncate_all(sample.orientation)))),
        linear_velocity=Vector3(**dict(zip("xyz", _truncate_all(sample.linear_velocity)))),
        angular_velocity=Vector3(**dict(zip("xyz", _truncate_all(sample.angular_velocity)))),
    )


def make_packet(buffers: SensorBuffers, t_ref: float, session_start: float,
                ablation_mask: Iterable[str] = (), window: float = 0.050) -> FusedPacket:
    """Assemble the packet for ``t_ref`` from the buffered streams."""
    timestamp = rereference_timestamps(session_start, t_ref)
    masked = frozenset(ablation_mask) & set(SENSOR_MODALITIES)
    fields: Dict[str, object] = {}
    frame = None

    for modality in SENSOR_MODALITIES:
        if modality in masked:
            continue
        sample = align_nearest(buffers, modality, t_ref, window)
        if sample is None:
            logger.warning(
                f"No {modality} sample within {window}s of t={timestamp}",
                extra={"modality": modality, "timestamp": timestamp},
            )
            continue
        if modality == "odometry":
            fields["odometry"] = _odometry_reading(sample)
        elif modality == "imu":
            fields["imu"] = ImuReading(
                linear_acceleration=Vector3(**dict(zip("xyz", _truncate_all(sample.linear_acceleration))))
            )
        elif modality == "camera":
            fields["image"] = image_reference(timestamp)
            frame = sample
        else:
            sectors = sectorize_scan(sample)
            fields["scan"] = ScanReading.model_validate(
                {name: truncate_one_decimal(v) for name, v in sectors.as_dict().items()}
            )

    packet = FusedPacket(timestamp=timestamp, ablated=masked, **fields)
    return packet.attach_frame(frame)


def serialize_packet(packet: FusedPacket, image_encoding: str = "reference") -> bytes:
    """
    Canonical JSON: keys timestamp, odometry, imu, image, scan in that order.

    Ablated modalities are omitted; modalities without a sample are null.
    With ``base64`` encoding the in-memory frame is embedded as PNG.
    """
    data: Dict[str, object] = {"timestamp": packet.timestamp}
    for key in PACKET_KEYS:
        if _KEY_MODALITY[key] in packet.ablated:
            continue
        value = getattr(packet, key)
        if value is None:
            data[key] = None
        elif key == "image":
            if image_encoding == "base64" and packet.frame is not None:
                data[key] = base64.b64encode(packet.frame.to_png()).decode("ascii")
            else:
                data[key] = value
        else:
            data[key] = value.model_dump(mode="json", by_alias=True)
    return json.dumps(data, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def parse_packet(data: Union[bytes, str]) -> FusedPacket:
    """Inverse of :func:`serialize_packet`; absent modality keys mean ablated."""
    try:
        payload = json.loads(data)
    except json.JSONDecodeError as e:
        raise ValidationError(f"Packet is not valid JSON: {e}")
    if not isinstance(payload, dict):
        raise ValidationError("Packet must be a JSON object")
    ablated = frozenset(_KEY_MODALITY[key] for key in PACKET_KEYS if key not in payload)
    try:
        return FusedPacket.model_validate({**payload, "ablated": ablated})
    except PydanticValidationError as e:
        raise ValidationError(
            "Packet failed validation",
            details={"errors": [err["msg"] for err in e.errors()]},
        )


class PacketStream:
    """
    Drive a simulator and yield one fused packet per packet period.

    Packet k is stamped k / packet_rate seconds after the session start.
    """

    # extra simulated time so late-emitted samples reach the buffers
    SETTLE = 0.1

    def __init__(self, simulator: Simulator, ablation_mask: Iterable[str] = (),
                 packet_rate_hz: Optional[int] = None, window: Optional[float] = None):
        self.simulator = simulator
        self.ablation_mask: FrozenSet[str] = frozenset(ablation_mask)
        self.packet_rate_hz = packet_rate_hz or settings.packet_rate_hz
        self.window = settings.fusion_window if window is None else window
        self.buffers = SensorBuffers()

    def packet_time(self, k: int) -> float:
        return self.simulator.session_start + k / self.packet_rate_hz

    def __iter__(self) -> Iterator[FusedPacket]:
        k = 0
        while True:
            t_ref = self.packet_time(k)
            self.buffers.ingest(self.simulator.advance_to(t_ref + self.window + self.SETTLE))
            yield make_packet(self.buffers, t_ref, self.simulator.session_start, self.ablation_mask, self.window)
            k += 1

    def take(self, n: int) -> List[FusedPacket]:
        packets = []
        for packet in self:
            packets.append(packet)
            if len(packets) >= n:
                break
        return packets
