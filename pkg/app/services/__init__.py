"""
Services package for MirrorBot.

This package contains the simulation, fusion, agent loop, judge and
structural model services; orchestration lives in ``runner``.
"""

from .simworld import Simulator, WorldMap, step_kinematics, raycast_lidar, sample_odometry, sample_imu, render_camera
from .fusion import PacketStream, align_nearest, sectorize_scan, make_packet, serialize_packet, parse_packet
from .agentloop import build_prompt, parse_prediction, update_memory, run_session
from .judge import score, score_run, aggregate, relative_error, mock_judge
from .sem import (
    SemModel,
    FitResult,
    build_canonical_model,
    implied_covariance,
    ml_discrepancy,
    fit,
    fit_indices,
    simulate_data,
)

__all__ = [
    # Simulation
    'Simulator',
    'WorldMap',
    'step_kinematics',
    'raycast_lidar',
    'sample_odometry',
    'sample_imu',
    'render_camera',
    # Fusion
    'PacketStream',
    'align_nearest',
    'sectorize_scan',
    'make_packet',
    'serialize_packet',
    'parse_packet',
    # Agent loop
    'build_prompt',
    'parse_prediction',
    'update_memory',
    'run_session',
    # Judge
    'score',
    'score_run',
    'aggregate',
    'relative_error',
    'mock_judge',
    # Structural model
    'SemModel',
    'FitResult',
    'build_canonical_model',
    'implied_covariance',
    'ml_discrepancy',
    'fit',
    'fit_indices',
    'simulate_data',
]
