"""
Pytest configuration and fixtures for the MirrorBot test suite.

This module provides shared fixtures for worlds, packets, predictions and
experiment configs.
"""

import tempfile
from pathlib import Path

import pytest

from app.models.agent import Dimensions, PredictionRecord
from app.models.experiment import ExperimentConfig
from app.models.packets import FusedPacket, ImuReading, OdometryReading, Quaternion, ScanReading, Vector3
from app.services.simworld import WorldMap


REPO_ROOT = Path(__file__).resolve().parent.parent
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def temp_directory():
    """Create a temporary directory for test files."""
    with tempfile.TemporaryDirectory() as temp_dir:
        yield Path(temp_dir)


@pytest.fixture
def open_world():
    """Large empty room around the origin."""
    return WorldMap(bounds=(-50.0, -50.0, 50.0, 50.0), start=(0.0, 0.0, 0.0), name="open")


@pytest.fixture
def square_room():
    """Empty 10 x 10 m room with the robot in the middle."""
    return WorldMap(bounds=(0.0, 0.0, 10.0, 10.0), start=(5.0, 5.0, 0.0), name="square")


@pytest.fixture
def warehouse_world():
    return WorldMap.load(REPO_ROOT / "worlds" / "warehouse.json")


@pytest.fixture
def sample_packet():
    """Fully populated packet without an image."""
    return FusedPacket(
        timestamp=3.0,
        odometry=OdometryReading(
            position=Vector3(x=1.2, y=-0.5, z=0.0),
            orientation=Quaternion(x=0.0, y=0.0, z=0.7, w=0.7),
            linear_velocity=Vector3(x=0.6, y=0.0, z=0.0),
            angular_velocity=Vector3(x=0.0, y=0.0, z=0.1),
        ),
        imu=ImuReading(linear_acceleration=Vector3(x=0.1, y=-0.2, z=9.8)),
        scan=ScanReading.model_validate({
            "front": 2.0, "front-right": 1.5, "right": 0.7, "rear-right": 3.1,
            "rear": 4.0, "rear-left": 5.2, "left": 0.9, "front-left": 1.1,
        }),
    )


@pytest.fixture
def sample_prediction():
    return PredictionRecord(
        iteration=4,
        dimensions=Dimensions(length=0.5, height=0.25, width=0.55),
        movement="Rolls on wheels at about 0.6 m/s, turning in place to avoid obstacles",
        entity="Mobile indoor wheeled robot designed for autonomous navigation",
        environment="Indoor warehouse-like hall bounded by walls, with box obstacles nearby",
    )


@pytest.fixture
def mock_config():
    """Short mock experiment on the example warehouse."""
    return ExperimentConfig.model_validate({
        "seed": 7,
        "n_iterations": 12,
        "sim": {"world_path": str(REPO_ROOT / "worlds" / "warehouse.json")},
    })
