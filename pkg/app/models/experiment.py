"""
Experiment and simulation configuration models for MirrorBot.
"""

import math
import re
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import settings
from app.models.agent import BackendConfig
from app.models.validators import normalize_ablation


class SimulationConfig(BaseModel):
    """Simulator clock, sensor and exploration parameters."""

    odometry_hz: int = Field(20, gt=0)
    imu_hz: int = Field(50, gt=0)
    camera_hz: int = Field(10, gt=0)
    lidar_hz: int = Field(12, gt=0)
    clock_origin: float = Field(1000.0, ge=0.0, description="Absolute time of tick 0")

    odometry_noise: bool = True
    position_sigma: float = Field(1e-3, ge=0.0, description="Odometry position noise, m")
    velocity_sigma: float = Field(5e-3, ge=0.0, description="Odometry velocity noise, m/s")
    yaw_sigma: float = Field(1e-3, ge=0.0, description="Odometry heading noise, rad")
    gravity: float = Field(9.81, gt=0.0)

    max_speed: float = Field(1.83, gt=0.0, description="Planar speed clamp, m/s")
    cruise_speed: float = Field(0.6, gt=0.0)
    safe_distance: float = Field(0.5, gt=0.0, description="Minimum clearance the policy keeps")
    turn_rate: float = Field(1.0, gt=0.0, description="Avoidance yaw rate, rad/s")

    world_path: Optional[str] = Field(None, description="World JSON; generated from the seed if unset")

    @model_validator(mode='after')
    def validate_speeds(self):
        if self.cruise_speed > self.max_speed:
            raise ValueError('cruise_speed cannot exceed max_speed')
        return self

    @property
    def clock_hz(self) -> int:
        """Tick rate at which every sensor period is a whole number of ticks."""
        return math.lcm(self.odometry_hz, self.imu_hz, self.camera_hz, self.lidar_hz)


class ExperimentConfig(BaseModel):
    """One experiment run: seed, length, ablation and backends."""

    run_id: Optional[str] = Field(None, description="Run directory name")
    seed: int = Field(default_factory=lambda: settings.default_seed)
    n_iterations: int = Field(default_factory=lambda: settings.default_iterations, ge=1)
    ablation: List[str] = Field(default_factory=list, description="Masked inputs")
    agent_backend: BackendConfig = Field(default_factory=BackendConfig)
    judge_backend: BackendConfig = Field(default_factory=BackendConfig)
    image_encoding: Literal['reference', 'base64'] = Field(default_factory=lambda: settings.image_encoding)
    packet_rate_hz: int = Field(default_factory=lambda: settings.packet_rate_hz, gt=0)
    fusion_window: float = Field(default_factory=lambda: settings.fusion_window, gt=0.0)
    judge_concurrency: int = Field(default_factory=lambda: settings.judge_concurrency, ge=1)
    sim: SimulationConfig = Field(default_factory=SimulationConfig)

    @field_validator('ablation')
    @classmethod
    def validate_ablation(cls, v):
        return sorted(normalize_ablation(v))

    @field_validator('run_id')
    @classmethod
    def validate_run_id(cls, v):
        if v is not None:
            if not re.match(r'^[a-zA-Z0-9_.-]+$', v):
                raise ValueError('Run ID must contain only alphanumeric characters, dots, hyphens, and underscores')
        return v

    @property
    def ablation_mask(self) -> frozenset:
        return frozenset(self.ablation)

    @property
    def condition(self) -> str:
        """Readable condition label, e.g. ``full`` or ``no-camera``."""
        if not self.ablation:
            return "full"
        return "no-" + "-".join(self.ablation)

    def resolved_run_id(self) -> str:
        return self.run_id or f"{self.condition}-s{self.seed}"
