"""
Fused sensor packet models for MirrorBot.

These are the wire types the agent sees once per second: every number is
truncated to one decimal and the timestamp is relative to session start.
"""

from typing import Any, FrozenSet, Optional

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from app.models.validators import MODALITY_FIELDS, validate_one_decimal


class Vector3(BaseModel):
    """Three-component vector."""

    model_config = ConfigDict(frozen=True)

    x: float = Field(..., description="x component")
    y: float = Field(..., description="y component")
    z: float = Field(..., description="z component")

    @field_validator('x', 'y', 'z')
    @classmethod
    def validate_decimals(cls, v):
        return validate_one_decimal(v)


class Quaternion(BaseModel):
    """Orientation quaternion in (x, y, z, w) order."""

    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    z: float
    w: float

    @field_validator('x', 'y', 'z', 'w')
    @classmethod
    def validate_decimals(cls, v):
        return validate_one_decimal(v)


class OdometryReading(BaseModel):
    """Pose and twist of the platform."""

    model_config = ConfigDict(frozen=True)

    position: Vector3
    orientation: Quaternion
    linear_velocity: Vector3 = Field(..., description="Body-frame linear velocity in m/s")
    angular_velocity: Vector3 = Field(..., description="Angular velocity in rad/s")


class ImuReading(BaseModel):
    """Linear acceleration in the body frame, gravity included on z."""

    model_config = ConfigDict(frozen=True)

    linear_acceleration: Vector3


class ScanReading(BaseModel):
    """Minimum clearance per compass sector, clockwise from the front."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    front: float
    front_right: float = Field(..., alias="front-right")
    right: float
    rear_right: float = Field(..., alias="rear-right")
    rear: float
    rear_left: float = Field(..., alias="rear-left")
    left: float
    front_left: float = Field(..., alias="front-left")

    @field_validator('*')
    @classmethod
    def validate_clearance(cls, v):
        """Clearances are one-decimal distances within the LiDAR range."""
        v = validate_one_decimal(v)
        if v < 0.0 or v > 30.0:
            raise ValueError(f'Clearance {v} must lie within [0, 30] m')
        return v


class FusedPacket(BaseModel):
    """
    One synchronized observation.

    Modalities removed by the ablation mask are listed in ``ablated`` and
    never carry data; modalities with no sample inside the alignment window
    are None but not ablated.
    """

    model_config = ConfigDict(frozen=True)

    timestamp: float = Field(..., ge=0.0, description="Seconds since session start")
    odometry: Optional[OdometryReading] = None
    imu: Optional[ImuReading] = None
    image: Optional[str] = Field(None, description="Relative PNG path or base64 PNG")
    scan: Optional[ScanReading] = None
    ablated: FrozenSet[str] = Field(default_factory=frozenset, exclude=True)

    _frame: Any = PrivateAttr(default=None)

    @field_validator('timestamp')
    @classmethod
    def validate_timestamp(cls, v):
        return validate_one_decimal(v)

    @model_validator(mode='after')
    def validate_ablated_fields(self):
        """A masked modality's field never carries data."""
        for modality in self.ablated:
            field = MODALITY_FIELDS.get(modality)
            if field and getattr(self, field) is not None:
                raise ValueError(f'Ablated modality {modality} must not carry data')
        return self

    @property
    def frame(self):
        """Rendered camera frame backing ``image``, when still in memory."""
        return self._frame

    def attach_frame(self, frame) -> "FusedPacket":
        self._frame = frame
        return self

    @property
    def has_image(self) -> bool:
        return self.image is not None
