"""
Data models package for MirrorBot.

This package contains Pydantic models for packets, predictions, judge
scores and experiment configuration.
"""

from .packets import Vector3, Quaternion, OdometryReading, ImuReading, ScanReading, FusedPacket
from .agent import (
    NO_VISUAL_INFORMATION,
    Dimensions,
    PredictionRecord,
    MemoryState,
    BackendConfig,
    TranscriptEntry,
    IterationRecord,
)
from .judge import DIMENSIONS, JudgeScore, DimensionSummary, ScoreSummary
from .experiment import SimulationConfig, ExperimentConfig
from .validators import MODALITIES, MODALITY_FIELDS, normalize_ablation

__all__ = [
    # Packet models
    'Vector3',
    'Quaternion',
    'OdometryReading',
    'ImuReading',
    'ScanReading',
    'FusedPacket',

    # Agent models
    'NO_VISUAL_INFORMATION',
    'Dimensions',
    'PredictionRecord',
    'MemoryState',
    'BackendConfig',
    'TranscriptEntry',
    'IterationRecord',

    # Judge models
    'DIMENSIONS',
    'JudgeScore',
    'DimensionSummary',
    'ScoreSummary',

    # Configuration
    'SimulationConfig',
    'ExperimentConfig',

    # Validators
    'MODALITIES',
    'MODALITY_FIELDS',
    'normalize_ablation',
]
