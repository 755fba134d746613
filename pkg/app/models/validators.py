"""
Shared validation helpers for MirrorBot models.
"""

from decimal import Decimal
from typing import FrozenSet, Iterable


# Ablatable inputs; the last four are packet modalities
MODALITIES = ("memory", "camera", "odometry", "lidar", "imu")

# Packet field carrying each sensing modality
MODALITY_FIELDS = {
    "odometry": "odometry",
    "imu": "imu",
    "camera": "image",
    "lidar": "scan",
}


def is_one_decimal(value: float) -> bool:
    """True when ``value`` is exactly representable as a number with one decimal."""
    text = repr(float(value))
    if "e" in text or "inf" in text or "nan" in text:
        return False
    return Decimal(text) == Decimal(text).quantize(Decimal("0.1"))


def validate_one_decimal(value: float) -> float:
    """Validator body for packet numbers; normalizes negative zero."""
    if not is_one_decimal(value):
        raise ValueError(f"Value {value!r} must carry exactly one decimal")
    return float(value) + 0.0


def normalize_ablation(names: Iterable[str]) -> FrozenSet[str]:
    """Validate and normalize an ablation mask given as modality names."""
    mask = frozenset(name.strip().lower() for name in names)
    unknown = sorted(mask - set(MODALITIES))
    if unknown:
        raise ValueError(
            f'Unknown modality: {", ".join(unknown)}; use one of: {", ".join(MODALITIES)}'
        )
    return mask
