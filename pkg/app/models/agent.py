"""
Agent-side data models for MirrorBot.

This module contains Pydantic models for the model's per-iteration
self-description, the episodic memory, backend configuration and the
records persisted for every iteration.
"""

import math
from typing import Optional, Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import settings


NO_VISUAL_INFORMATION = "No visual information available"


class Dimensions(BaseModel):
    """Estimated body size in meters."""

    model_config = ConfigDict(frozen=True)

    length: float = Field(..., description="Length along the heading, meters")
    height: float = Field(..., description="Height, meters")
    width: float = Field(..., description="Width across the heading, meters")

    @field_validator('length', 'height', 'width')
    @classmethod
    def validate_positive(cls, v):
        if not math.isfinite(v) or v <= 0:
            raise ValueError('Dimensions must be positive finite numbers')
        return float(v)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.length, self.height, self.width)


class PredictionRecord(BaseModel):
    """The model's answer for one iteration."""

    model_config = ConfigDict(frozen=True)

    iteration: int = Field(..., ge=0, description="0-based loop iteration that produced it")
    dimensions: Dimensions
    movement: str = Field(..., description="How the body moves")
    entity: str = Field(..., description="What the body is")
    environment: str = Field(..., description="Where the body is")

    @field_validator('movement', 'entity', 'environment')
    @classmethod
    def validate_text(cls, v):
        if not v or not v.strip():
            raise ValueError('Answer fields cannot be empty')
        return v.strip()


class MemoryState(BaseModel):
    """Episodic memory: the serialized previous prediction, or empty."""

    model_config = ConfigDict(frozen=True)

    iteration: int = Field(0, ge=0, description="Loop iteration this memory serves")
    summary: str = Field("", description="Serialized previous prediction")

    @model_validator(mode='after')
    def validate_initial_state(self):
        if self.iteration == 0 and self.summary:
            raise ValueError('Memory at iteration 0 must be empty')
        return self


class BackendConfig(BaseModel):
    """Configuration of one generative backend (agent or judge)."""

    kind: Literal['live', 'mock', 'replay'] = Field('mock', description="Backend implementation")
    endpoint: Optional[str] = Field(None, description="Base URL of a chat-completions API")
    model: str = Field('mock-1', description="Model name sent to the endpoint")
    api_key_env: str = Field(
        default_factory=lambda: settings.api_key_env, description="Environment variable holding the key"
    )
    timeout: float = Field(
        default_factory=lambda: settings.backend_timeout, gt=0, description="Per-request timeout in seconds"
    )
    retries: int = Field(
        default_factory=lambda: settings.backend_retries, ge=0, description="Retries after the first attempt"
    )
    temperature: float = Field(0.0, ge=0.0, le=2.0)
    transcript_path: Optional[str] = Field(None, description="Transcript for the replay backend")
    seed: int = Field(0, description="Mock backend seed")
    fault_rate: float = Field(0.0, ge=0.0, lt=1.0, description="Mock probability of a garbled reply")
    mock_dimension_asymptote: Tuple[float, float, float] = Field(
        (0.48, 0.26, 0.52), description="Mock converged (length, height, width) in meters"
    )
    mock_rung_period: int = Field(6, ge=1, description="Mock iterations per guaranteed refinement")

    @field_validator('endpoint')
    @classmethod
    def validate_endpoint(cls, v):
        if v is not None and not v.startswith(('http://', 'https://')):
            raise ValueError('Endpoint must be an http(s) URL')
        return v.rstrip('/') if v else v

    @model_validator(mode='after')
    def validate_kind_requirements(self):
        if self.kind == 'live' and not self.endpoint:
            raise ValueError('Live backend requires an endpoint')
        if self.kind == 'replay' and not self.transcript_path:
            raise ValueError('Replay backend requires a transcript_path')
        return self


class TranscriptEntry(BaseModel):
    """Exact prompt/response exchange of one iteration."""

    iteration: int = Field(..., ge=1)
    prompt: str
    image_attached: bool = False
    response: Optional[str] = None


class IterationRecord(BaseModel):
    """RunLog line: what happened in one loop iteration."""

    iteration: int = Field(..., ge=1, description="1-based iteration index")
    packet_timestamp: float
    had_image: bool
    prompt_sha256: str
    prediction: Optional[PredictionRecord] = None
    memory: MemoryState = Field(..., description="Memory after this iteration")
    error: Optional[str] = Field(None, description="Error code when the reply was unusable")
    latency_ms: float = Field(0.0, ge=0.0)
