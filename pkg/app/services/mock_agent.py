"""
Deterministic stand-in for the generative model on the agent side.

The mock reproduces the qualitative behaviour seen with real models:

- with memory, answers are refined step by step from the previous answer
  and settle on a stable self-description
- without memory, every answer is drawn afresh, so answers contradict each
  other from one second to the next
- without an image, the self-description drifts towards something airborne

Replies are a function of (seed, iteration, packet, memory) only.
"""

import json
import logging
import math
from typing import Optional, Sequence

import numpy as np

from app.models.agent import NO_VISUAL_INFORMATION, BackendConfig, MemoryState
from app.models.packets import FusedPacket
from app.services.backends import BackendRequest, GenerativeBackend
from app.services.simworld import ROBOT_HEIGHT, ROBOT_LENGTH, ROBOT_WIDTH


logger = logging.getLogger(__name__)


ENTITY_LADDER = (
    "Static sensing unit observing its surroundings",
    "Ground vehicle exploring an enclosed space",
    "Mobile robot moving through its surroundings",
    "Mobile indoor wheeled robot designed for autonomous navigation within a structured environment",
)
AERIAL_ENTITY_LADDER = (
    "Static sensing unit observing its surroundings",
    "Autonomous inspection drone, holding a fixed position for environmental monitoring",
)
MOVEMENT_LADDER = (
    "Stationary; no displacement detected yet",
    "Moves along the ground between obstacles{speed}",
    "Rolls on wheels{speed}, turning in place to avoid obstacles",
)
AERIAL_MOVEMENT_LADDER = (
    "Stationary; no displacement detected yet",
    "Hovering flight with small lateral drifts",
)

ENTITY_POOL = (
    "Static sensing unit observing its surroundings",
    "Autonomous inspection drone, holding a fixed position for environmental monitoring",
    "Ground vehicle exploring an enclosed space",
    "Mobile robot moving through its surroundings",
    "Mobile indoor wheeled robot designed for autonomous navigation",
    "Mecabot Pro omnidirectional mecanum-wheeled robot",
)
MOVEMENT_POOL = (
    "Stationary; no displacement detected yet",
    "Hovering flight with small lateral drifts",
    "Walks on legs with short steps",
    "Moves along the ground between obstacles",
    "Rolls on wheels, turning in place to avoid obstacles",
    "Omnidirectional rolling on mecanum wheels, able to slide sideways",
)
ENVIRONMENT_POOL = (
    "Outdoor forest trail under open sky",
    "Open area with a flat floor",
    "Enclosed indoor area with a smooth floor",
    "Indoor warehouse-like hall with open floor space",
    "Indoor warehouse-like hall bounded by walls, with box obstacles{ahead}",
)
# environment draws with memory and image: pool entries 1..4
REMEMBERING_ENVIRONMENT_WEIGHTS = (0.0, 0.10, 0.40, 0.35, 0.15)

INITIAL_DIMENSIONS = (1.2, 0.9, 0.7)
AIRBORNE_DIMENSIONS = (0.40, 0.15, 0.40)
REFINEMENT_RATE = 0.5
ADVANCE_PROBABILITY = 0.5
AIRBORNE_BIAS = 0.7


def _speed_phrase(packet: FusedPacket) -> str:
    if packet.odometry is None:
        return ""
    v = packet.odometry.linear_velocity
    return f" at about {math.hypot(v.x, v.y):.1f} m/s"


def _ahead_phrase(packet: FusedPacket) -> str:
    if packet.scan is None:
        return " nearby"
    return f" about {packet.scan.front:.1f} m ahead"


def _stem(template: str) -> str:
    return template.split("{")[0]


def _rung_of(ladder: Sequence[str], text: Optional[str]) -> int:
    if not text:
        return 0
    for rung in range(len(ladder) - 1, -1, -1):
        if text.startswith(_stem(ladder[rung])):
            return rung
    return 0


def _advance(ladder: Sequence[str], previous: Optional[str], iteration: int,
             rng: np.random.Generator, period: int) -> int:
    """Next rung: never below the previous one or the iteration floor, maybe one higher."""
    draw = rng.random()
    if iteration == 0:
        return 0
    rung = max(_rung_of(ladder, previous), min(len(ladder) - 1, iteration // period))
    if rung < len(ladder) - 1 and draw < ADVANCE_PROBABILITY:
        rung += 1
    return rung


def _previous_answer(memory: MemoryState) -> Optional[dict]:
    if not memory.summary:
        return None
    try:
        answer = json.loads(memory.summary)
    except json.JSONDecodeError:
        return None
    return answer if isinstance(answer, dict) else None


def mock_predict(packet: FusedPacket, memory: MemoryState, seed: int, iteration: int,
                 memory_ablated: bool = False, config: Optional[BackendConfig] = None) -> str:
    """
    Reply text of the mock model for 0-based loop ``iteration``.

    With ``config.fault_rate`` > 0 some replies carry no JSON at all.
    """
    config = config or BackendConfig()
    rng = np.random.default_rng([seed, iteration, 17])
    if rng.random() < config.fault_rate:
        logger.debug(f"Injecting a garbled reply at iteration {iteration}", extra={"iteration": iteration})
        return "I could not settle on an answer this time."

    has_image = packet.has_image
    truth = np.array([ROBOT_LENGTH, ROBOT_HEIGHT, ROBOT_WIDTH])

    if not memory_ablated:
        previous = _previous_answer(memory) or {}
        entity_ladder = ENTITY_LADDER if has_image else AERIAL_ENTITY_LADDER
        movement_ladder = MOVEMENT_LADDER if has_image else AERIAL_MOVEMENT_LADDER
        period = config.mock_rung_period

        entity = entity_ladder[_advance(entity_ladder, previous.get("entity"), iteration, rng, period)]
        movement = movement_ladder[_advance(movement_ladder, previous.get("movement"), iteration, rng, 2 * period)]

        target = np.array(config.mock_dimension_asymptote if has_image else AIRBORNE_DIMENSIONS)
        prev_dims = previous.get("dimensions")
        if isinstance(prev_dims, dict) and all(k in prev_dims for k in ("length", "height", "width")):
            current = np.array([prev_dims["length"], prev_dims["height"], prev_dims["width"]], dtype=float)
            dims = target + (current - target) * REFINEMENT_RATE
        else:
            dims = np.array(INITIAL_DIMENSIONS)

        if has_image:
            environment = ENVIRONMENT_POOL[int(rng.choice(len(ENVIRONMENT_POOL), p=REMEMBERING_ENVIRONMENT_WEIGHTS))]
        else:
            environment = NO_VISUAL_INFORMATION
    else:
        if has_image or rng.random() >= AIRBORNE_BIAS:
            entity = ENTITY_POOL[int(rng.integers(len(ENTITY_POOL)))]
        else:
            entity = AERIAL_ENTITY_LADDER[1]
        movement = MOVEMENT_POOL[int(rng.integers(len(MOVEMENT_POOL)))]
        dims = truth * np.exp(rng.uniform(math.log(0.25), math.log(4.0), size=3))
        if has_image:
            environment = ENVIRONMENT_POOL[int(rng.integers(len(ENVIRONMENT_POOL)))]
        else:
            environment = NO_VISUAL_INFORMATION

    answer = {
        "dimensions": {
            "length": round(float(dims[0]), 3),
            "height": round(float(dims[1]), 3),
            "width": round(float(dims[2]), 3),
        },
        "movement": movement.format(speed=_speed_phrase(packet)),
        "entity": entity,
        "environment": environment.format(ahead=_ahead_phrase(packet)),
    }
    return "Final answer:\n```json\n" + json.dumps(answer) + "\n```"


class MockAgentBackend(GenerativeBackend):
    """Offline agent backend built on :func:`mock_predict`."""

    def __init__(self, config: Optional[BackendConfig] = None):
        self.config = config or BackendConfig()
        self.name = f"mock-agent:{self.config.seed}"

    async def generate(self, request: BackendRequest) -> str:
        if request.packet is None or request.memory is None:
            raise ValueError("Mock agent requests need the packet and the memory")
        return mock_predict(
            request.packet, request.memory, self.config.seed, request.iteration - 1,
            memory_ablated=request.memory_ablated, config=self.config,
        )
