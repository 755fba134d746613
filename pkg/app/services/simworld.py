"""
Deterministic planar simulation of an omnidirectional mecanum-wheeled robot.

The simulator produces the raw sensor streams the fusion pipeline consumes:
wheel odometry, an IMU, a 360-degree LiDAR and a forward RGB camera, all on
one integer tick clock so that every sample time is an exact multiple of its
sensor period.

Features:
- Omnidirectional kinematics with planar speed clamp and collision stop
- Vectorized ray casting against convex obstacles and room walls
- Lazily rendered depth-shaded camera frames exported as PNG
- Reactive exploration policy that keeps clear of close obstacles
- Seeded sensor noise; same seed and world give the same streams
"""

import io
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from app.core.exceptions import InsufficientHistoryError, MalformedScanError, ValidationError
from app.models.experiment import SimulationConfig


logger = logging.getLogger(__name__)


# Platform geometry and limits
ROBOT_LENGTH = 0.541
ROBOT_HEIGHT = 0.2255
ROBOT_WIDTH = 0.581
MAX_SPEED = 1.83

# LiDAR
LIDAR_BEAMS = 529
LIDAR_INCREMENT_DEG = 0.68
LIDAR_MAX_RANGE = 30.0

# Camera
CAMERA_WIDTH = 640
CAMERA_HEIGHT = 480
CAMERA_FOV_DEG = 60.0
CAMERA_VIEW_DISTANCE = 30.0
CAMERA_MOUNT_HEIGHT = ROBOT_HEIGHT
WALL_HEIGHT = 2.5
FADE_DISTANCE = 12.0

CEILING_COLOR = np.array([200, 210, 220], dtype=np.float64)
FLOOR_COLOR = np.array([60, 60, 60], dtype=np.float64)
WALL_COLOR = np.array([150, 150, 160], dtype=np.float64)
OBSTACLE_COLOR = np.array([170, 120, 70], dtype=np.float64)

SECTOR_NAMES = (
    "front", "front-right", "right", "rear-right",
    "rear", "rear-left", "left", "front-left",
)

Command = Tuple[float, float, float]


def wrap_angle(angle: float) -> float:
    """Wrap an angle in radians to [-pi, pi]."""
    return math.remainder(angle, 2.0 * math.pi)


def yaw_to_quaternion(yaw: float) -> Tuple[float, float, float, float]:
    """Quaternion (x, y, z, w) of a rotation about z."""
    return (0.0, 0.0, math.sin(yaw / 2.0), math.cos(yaw / 2.0))


def quaternion_to_yaw(x: float, y: float, z: float, w: float) -> float:
    return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def sector_indices(beams: int = LIDAR_BEAMS, increment_deg: float = LIDAR_INCREMENT_DEG) -> np.ndarray:
    """
    Compass sector of every beam, 0 = front, then clockwise.

    Beam k points k * increment counter-clockwise of the heading. The front
    sector spans [-22.5, +22.5) degrees measured clockwise; a beam on an edge
    belongs to the sector whose lower edge it touches. Arithmetic runs in
    hundredths of a degree so edges are decided exactly.
    """
    step = int(round(increment_deg * 100))
    if abs(step - increment_deg * 100) > 1e-9:
        raise ValidationError("Beam increment must be a whole number of hundredths of a degree")
    ccw = np.arange(beams, dtype=np.int64) * step
    clockwise = (-ccw) % 36000
    return ((clockwise + 2250) % 36000) // 4500


def _rectangle(cx: float, cy: float, width: float, depth: float) -> Tuple[Tuple[float, float], ...]:
    hw, hd = width / 2.0, depth / 2.0
    return ((cx - hw, cy - hd), (cx + hw, cy - hd), (cx + hw, cy + hd), (cx - hw, cy + hd))


def _convex_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons; touching counts as overlap."""
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
        pa = a @ normals.T
        pb = b @ normals.T
        if np.any((pa.max(axis=0) < pb.min(axis=0)) | (pb.max(axis=0) < pa.min(axis=0))):
            return False
    return True


@dataclass(frozen=True)
class WorldMap:
    """Rectangular room with convex polygonal obstacles."""

    bounds: Tuple[float, float, float, float]
    obstacles: Tuple[Tuple[Tuple[float, float], ...], ...] = ()
    start: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    name: str = "world"

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValidationError("World bounds must have positive extent", field="bounds")
        for i, poly in enumerate(self.obstacles):
            pts = np.asarray(poly, dtype=np.float64)
            if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
                raise ValidationError(f"Obstacle {i} needs at least 3 (x, y) vertices", field="obstacles")
            if (pts[:, 0].min() < xmin or pts[:, 0].max() > xmax
                    or pts[:, 1].min() < ymin or pts[:, 1].max() > ymax):
                raise ValidationError(f"Obstacle {i} lies outside the world bounds", field="obstacles")
            edges = np.roll(pts, -1, axis=0) - pts
            turns = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
            if not (np.all(turns >= -1e-12) or np.all(turns <= 1e-12)):
                raise ValidationError(f"Obstacle {i} is not convex", field="obstacles")
        if not self.footprint_free(*self.start):
            raise ValidationError("Start pose is not collision free", field="start")

    @cached_property
    def _polygons(self) -> List[np.ndarray]:
        return [np.asarray(poly, dtype=np.float64) for poly in self.obstacles]

    @cached_property
    def _boxes(self) -> np.ndarray:
        if not self.obstacles:
            return np.empty((0, 4))
        return np.array([[p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max()] for p in self._polygons])

    @cached_property
    def segments(self) -> np.ndarray:
        """All wall and obstacle edges, shape (M, 2, 2)."""
        xmin, ymin, xmax, ymax = self.bounds
        corners = np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])
        segs = [np.stack([corners, np.roll(corners, -1, axis=0)], axis=1)]
        for poly in self._polygons:
            segs.append(np.stack([poly, np.roll(poly, -1, axis=0)], axis=1))
        return np.concatenate(segs, axis=0)

    @cached_property
    def segment_is_wall(self) -> np.ndarray:
        flags = np.zeros(len(self.segments), dtype=bool)
        flags[:4] = True
        return flags

    def footprint(self, x: float, y: float, heading: float) -> np.ndarray:
        """Corners of the robot rectangle at a pose."""
        c, s = math.cos(heading), math.sin(heading)
        hl, hw = ROBOT_LENGTH / 2.0, ROBOT_WIDTH / 2.0
        body = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
        rot = np.array([[c, -s], [s, c]])
        return body @ rot.T + np.array([x, y])

    def footprint_free(self, x: float, y: float, heading: float) -> bool:
        """True when the robot rectangle at this pose touches neither walls nor obstacles."""
        corners = self.footprint(x, y, heading)
        xmin, ymin, xmax, ymax = self.bounds
        if (corners[:, 0].min() <= xmin or corners[:, 0].max() >= xmax
                or corners[:, 1].min() <= ymin or corners[:, 1].max() >= ymax):
            return False
        if not self.obstacles:
            return True
        radius = math.hypot(ROBOT_LENGTH, ROBOT_WIDTH) / 2.0
        boxes = self._boxes
        near = ((boxes[:, 0] - radius <= x) & (x <= boxes[:, 2] + radius)
                & (boxes[:, 1] - radius <= y) & (y <= boxes[:, 3] + radius))
        for idx in np.flatnonzero(near):
            if _convex_overlap(corners, self._polygons[idx]):
                return False
        return True

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "bounds": list(self.bounds),
            "start": list(self.start),
            "obstacles": [[list(v) for v in poly] for poly in self.obstacles],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "WorldMap":
        try:
            return cls(
                bounds=tuple(float(v) for v in data["bounds"]),
                obstacles=tuple(tuple((float(p[0]), float(p[1])) for p in poly) for poly in data.get("obstacles", [])),
                start=tuple(float(v) for v in data.get("start", (0.0, 0.0, 0.0))),
                name=str(data.get("name", "world")),
            )
        except (KeyError, TypeError, IndexError) as e:
            raise ValidationError(f"Malformed world description: {e}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "WorldMap":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def generate(cls, seed: int, width: float = 20.0, depth: float = 14.0, n_obstacles: int = 8) -> "WorldMap":
        """Seeded warehouse-like room with box obstacles and a clear start area."""
        rng = np.random.default_rng(seed)
        sx, sy = width / 2.0, depth / 2.0
        boxes: List[Tuple[float, float, float, float]] = []
        attempts = 0
        while len(boxes) < n_obstacles and attempts < 1000:
            attempts += 1
            w, d = rng.uniform(0.4, 2.0, size=2)
            cx = rng.uniform(1.0 + w / 2.0, width - 1.0 - w / 2.0)
            cy = rng.uniform(1.0 + d / 2.0, depth - 1.0 - d / 2.0)
            if math.hypot(cx - sx, cy - sy) < 2.0 + max(w, d) / 2.0:
                continue
            # leave a passage wider than the robot between boxes
            if any(abs(cx - bx) < (w + bw) / 2.0 + 1.0 and abs(cy - by) < (d + bd) / 2.0 + 1.0
                   for bx, by, bw, bd in boxes):
                continue
            boxes.append((float(cx), float(cy), float(w), float(d)))
        return cls(
            bounds=(0.0, 0.0, width, depth),
            obstacles=tuple(_rectangle(*box) for box in boxes),
            start=(sx, sy, 0.0),
            name=f"generated-{seed}",
        )


@dataclass(frozen=True)
class RobotState:
    """Pose in the world frame and twist in the body frame."""

    x: float
    y: float
    heading: float
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0


@dataclass(frozen=True)
class OdometrySample:
    timestamp: float
    position: Tuple[float, float, float]
    orientation: Tuple[float, float, float, float]
    linear_velocity: Tuple[float, float, float]
    angular_velocity: Tuple[float, float, float]


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    linear_acceleration: Tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class LidarScan:
    timestamp: float
    ranges: np.ndarray
    angle_increment_deg: float = LIDAR_INCREMENT_DEG

    def __post_init__(self):
        if self.ranges.ndim != 1:
            raise MalformedScanError(beams=int(self.ranges.size), expected=LIDAR_BEAMS)


@dataclass(frozen=True, eq=False)
class ImageFrame:
    """Camera frame; pixels are rendered on first access."""

    timestamp: float
    world: WorldMap
    pose: Tuple[float, float, float]
    width: int = CAMERA_WIDTH
    height: int = CAMERA_HEIGHT

    @cached_property
    def pixels(self) -> np.ndarray:
        return _render_pixels(self.world, self.pose, self.width, self.height)

    def to_png(self) -> bytes:
        buffer = io.BytesIO()
        Image.fromarray(self.pixels).save(buffer, format="PNG")
        return buffer.getvalue()


def clamp_speed(vx: float, vy: float, max_speed: float = MAX_SPEED) -> Tuple[float, float]:
    speed = math.hypot(vx, vy)
    if speed > max_speed:
        scale = max_speed / speed
        return vx * scale, vy * scale
    return vx, vy


def step_kinematics(state: RobotState, command: Command, dt: float, world: WorldMap,
                    max_speed: float = MAX_SPEED) -> RobotState:
    """
    Advance the robot by ``dt`` seconds under a body-frame velocity command.

    Planar speed is clamped to ``max_speed``. When the footprint would hit
    something, translation stops at the last free point along the way and the
    blocked world-axis velocity components are zeroed.
    """
    if dt < 0:
        raise ValidationError(f"Time step must be non-negative, got {dt}", field="dt")
    vx, vy = clamp_speed(float(command[0]), float(command[1]), max_speed)
    omega = float(command[2])
    if dt == 0:
        return replace(state, vx=vx, vy=vy, omega=omega)

    c, s = math.cos(state.heading), math.sin(state.heading)
    dx = (c * vx - s * vy) * dt
    dy = (s * vx + c * vy) * dt
    heading = wrap_angle(state.heading + omega * dt)

    if world.footprint_free(state.x + dx, state.y + dy, heading):
        return RobotState(state.x + dx, state.y + dy, heading, vx, vy, omega)

    if not world.footprint_free(state.x, state.y, heading):
        heading, omega = state.heading, 0.0

    lo, hi = 0.0, 1.0
    for _ in range(24):
        mid = (lo + hi) / 2.0
        if world.footprint_free(state.x + mid * dx, state.y + mid * dy, heading):
            lo = mid
        else:
            hi = mid
    nx, ny = state.x + lo * dx, state.y + lo * dy

    wvx, wvy = c * vx - s * vy, s * vx + c * vy
    probe = 1e-3
    if wvx != 0.0 and not world.footprint_free(nx + math.copysign(probe, wvx), ny, heading):
        wvx = 0.0
    if wvy != 0.0 and not world.footprint_free(nx, ny + math.copysign(probe, wvy), heading):
        wvy = 0.0
    ch, sh = math.cos(heading), math.sin(heading)
    logger.debug(f"Contact at ({nx:.3f}, {ny:.3f}); blocked world velocity zeroed")
    return RobotState(nx, ny, heading, ch * wvx + sh * wvy, -sh * wvx + ch * wvy, omega)


def cast_rays(world: WorldMap, origin: Tuple[float, float], angles: np.ndarray,
              max_range: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Distance to the first segment hit by each ray, saturated at ``max_range``.

    Returns (distances, segment index or -1 when nothing was hit in range).
    """
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    segs = world.segments
    p = segs[:, 0]
    e = segs[:, 1] - segs[:, 0]
    q = p - np.asarray(origin, dtype=np.float64)

    denom = d[:, 0, None] * e[None, :, 1] - d[:, 1, None] * e[None, :, 0]
    q_cross_e = q[:, 0] * e[:, 1] - q[:, 1] * e[:, 0]
    q_cross_d = q[None, :, 0] * d[:, None, 1] - q[None, :, 1] * d[:, None, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = q_cross_e[None, :] / denom
        u = q_cross_d / denom
    valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
    t = np.where(valid, t, np.inf)
    idx = np.argmin(t, axis=1)
    dist = t[np.arange(len(angles)), idx]
    hit = dist < max_range
    return np.where(hit, dist, max_range), np.where(hit, idx, -1)


def raycast_lidar(world: WorldMap, state: RobotState, t: float,
                  beams: int = LIDAR_BEAMS, increment_deg: float = LIDAR_INCREMENT_DEG,
                  max_range: float = LIDAR_MAX_RANGE) -> LidarScan:
    """Simulate one LiDAR sweep; beam k points k * increment CCW of the heading."""
    angles = state.heading + np.deg2rad(np.arange(beams) * increment_deg)
    ranges, _ = cast_rays(world, (state.x, state.y), angles, max_range)
    return LidarScan(timestamp=t, ranges=ranges, angle_increment_deg=increment_deg)


def sample_odometry(state: RobotState, t: float, rng: Optional[np.random.Generator] = None,
                    position_sigma: float = 1e-3, velocity_sigma: float = 5e-3,
                    yaw_sigma: float = 1e-3) -> OdometrySample:
    """Encoder odometry; noiseless when ``rng`` is None."""
    x, y, yaw = state.x, state.y, state.heading
    vx, vy = state.vx, state.vy
    if rng is not None:
        nx, ny, nvx, nvy, nyaw = rng.normal(
            0.0, [position_sigma, position_sigma, velocity_sigma, velocity_sigma, yaw_sigma]
        )
        x, y, vx, vy, yaw = x + nx, y + ny, vx + nvx, vy + nvy, yaw + nyaw
    return OdometrySample(
        timestamp=t,
        position=(x, y, 0.0),
        orientation=yaw_to_quaternion(yaw),
        linear_velocity=(vx, vy, 0.0),
        angular_velocity=(0.0, 0.0, state.omega),
    )


def sample_imu(history: Sequence[Tuple[float, RobotState]], t: float, gravity: float = 9.81,
               rng: Optional[np.random.Generator] = None, sigma: float = 0.0) -> ImuSample:
    """
    Body-frame acceleration at time ``t`` from the state history.

    Uses the central difference of body velocity around ``t``, or a one-sided
    difference at either end of the history. Gravity appears on z.
    """
    if len(history) < 2:
        raise InsufficientHistoryError(available=len(history))
    times = np.array([entry[0] for entry in history])
    i = int(np.argmin(np.abs(times - t)))
    lo = i - 1 if i > 0 else i
    hi = i + 1 if i + 1 < len(history) else i
    t_lo, s_lo = history[lo]
    t_hi, s_hi = history[hi]
    span = t_hi - t_lo
    if span <= 0:
        raise InsufficientHistoryError(available=len(history))
    ax = (s_hi.vx - s_lo.vx) / span
    ay = (s_hi.vy - s_lo.vy) / span
    if rng is not None and sigma > 0:
        ax, ay = ax + rng.normal(0.0, sigma), ay + rng.normal(0.0, sigma)
    return ImuSample(timestamp=t, linear_acceleration=(ax, ay, gravity))


def render_camera(world: WorldMap, state: RobotState, t: float) -> ImageFrame:
    """Forward camera frame at the robot pose; rasterized lazily."""
    return ImageFrame(timestamp=t, world=world, pose=(state.x, state.y, state.heading))


def _render_pixels(world: WorldMap, pose: Tuple[float, float, float], width: int, height: int) -> np.ndarray:
    x, y, heading = pose
    fov = math.radians(CAMERA_FOV_DEG)
    offsets = fov / 2.0 - (np.arange(width) + 0.5) * fov / width
    dist, seg = cast_rays(world, (x, y), heading + offsets, CAMERA_VIEW_DISTANCE)
    hit = seg >= 0
    perp = np.maximum(dist * np.cos(offsets), 1e-6)

    focal = (width / 2.0) / math.tan(fov / 2.0)
    horizon = height / 2.0
    top = horizon - focal * (WALL_HEIGHT - CAMERA_MOUNT_HEIGHT) / perp
    bottom = horizon + focal * CAMERA_MOUNT_HEIGHT / perp

    rows = np.arange(height)[:, None] + 0.5
    wall = hit[None, :] & (rows >= top[None, :]) & (rows <= bottom[None, :])

    # closer surfaces are darker, far ones fade towards the haze
    shade = 0.3 + 0.7 * np.clip(dist / FADE_DISTANCE, 0.0, 1.0)
    is_wall = np.zeros(width, dtype=bool)
    is_wall[hit] = world.segment_is_wall[seg[hit]]
    base = np.where(is_wall[:, None], WALL_COLOR[None, :], OBSTACLE_COLOR[None, :])
    column_color = base * shade[:, None]

    image = np.empty((height, width, 3), dtype=np.float64)
    image[: height // 2] = CEILING_COLOR
    image[height // 2:] = FLOOR_COLOR
    image = np.where(wall[:, :, None], column_color[None, :, :], image)
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def sector_clearances(ranges: np.ndarray, increment_deg: float = LIDAR_INCREMENT_DEG) -> np.ndarray:
    """Minimum range per compass sector, clockwise from the front."""
    if ranges.ndim != 1 or ranges.size == 0:
        raise MalformedScanError(beams=int(ranges.size), expected=LIDAR_BEAMS)
    idx = sector_indices(ranges.size, increment_deg)
    out = np.full(8, np.inf)
    np.minimum.at(out, idx, ranges)
    return out


def explore_policy(state: RobotState, scan: LidarScan, rng: np.random.Generator,
                   config: Optional[SimulationConfig] = None) -> Command:
    """
    Reactive exploration: cruise forward, slow down near obstacles, turn
    towards the more open side and sidestep away from close sectors.
    """
    config = config or SimulationConfig()
    clear = sector_clearances(scan.ranges, scan.angle_increment_deg)
    front, front_right, right, rear_right, rear, rear_left, left, front_left = clear
    safe = config.safe_distance
    slow_zone = safe + 1.0

    if front <= safe:
        vx = 0.0 if rear <= safe else -0.1
    elif front < slow_zone:
        vx = config.cruise_speed * (front - safe) / (slow_zone - safe)
    else:
        vx = config.cruise_speed

    vy = float(rng.normal(0.0, 0.05))
    margin = safe + 0.3
    if left < margin or front_left < safe or rear_left < safe:
        vy -= 0.3
    if right < margin or front_right < safe or rear_right < safe:
        vy += 0.3

    if min(front, front_left, front_right) < slow_zone:
        omega = config.turn_rate if (front_left + left) >= (front_right + right) else -config.turn_rate
    else:
        omega = float(rng.normal(0.0, 0.25))

    vx, vy = clamp_speed(vx, vy, config.max_speed)
    return (float(vx), float(vy), float(omega))


class Simulator:
    """
    Event-driven simulation session over one world.

    Physics advances only between sensor events; the command is refreshed by
    the exploration policy after each LiDAR sweep. IMU samples need the state
    after their own tick for the central difference, so each one is emitted at
    the following event with its original timestamp.
    """

    HISTORY_LENGTH = 8

    def __init__(self, world: WorldMap, config: Optional[SimulationConfig] = None, seed: int = 0):
        self.world = world
        self.config = config or SimulationConfig()
        self.seed = seed
        self.clock_hz = self.config.clock_hz
        self.periods = {
            "odometry": self.clock_hz // self.config.odometry_hz,
            "imu": self.clock_hz // self.config.imu_hz,
            "camera": self.clock_hz // self.config.camera_hz,
            "lidar": self.clock_hz // self.config.lidar_hz,
        }
        self.state = RobotState(*world.start)
        self.command: Command = (0.0, 0.0, 0.0)
        self._policy_rng = np.random.default_rng([seed, 1])
        self._noise_rng = np.random.default_rng([seed, 2]) if self.config.odometry_noise else None
        self._history: deque = deque(maxlen=self.HISTORY_LENGTH)
        self._pending_imu: List[float] = []
        self._next_tick = 0
        self._last_tick: Optional[int] = None

        logger.info(
            f"Simulator ready: world={world.name} seed={seed} clock={self.clock_hz} Hz",
            extra={"world": world.name, "seed": seed},
        )

    @property
    def session_start(self) -> float:
        return self.config.clock_origin

    def time_of(self, tick: int) -> float:
        return self.config.clock_origin + tick / self.clock_hz

    def _following_tick(self, tick: int) -> int:
        return min((tick // p + 1) * p for p in self.periods.values())

    def advance_to(self, t_target: float) -> List[Tuple[str, object]]:
        """Run every event up to ``t_target`` and return (modality, sample) in emission order."""
        emitted: List[Tuple[str, object]] = []
        while self.time_of(self._next_tick) <= t_target + 1e-12:
            emitted.extend(self._process(self._next_tick))
            self._next_tick = self._following_tick(self._next_tick)
        return emitted

    def _process(self, tick: int) -> List[Tuple[str, object]]:
        t = self.time_of(tick)
        if self._last_tick is not None:
            dt = (tick - self._last_tick) / self.clock_hz
            self.state = step_kinematics(self.state, self.command, dt, self.world, self.config.max_speed)
        self._last_tick = tick
        self._history.append((t, self.state))

        samples: List[Tuple[str, object]] = []
        for pending in [p for p in self._pending_imu if p < t]:
            samples.append(("imu", sample_imu(list(self._history), pending, self.config.gravity)))
            self._pending_imu.remove(pending)

        if tick % self.periods["lidar"] == 0:
            scan = raycast_lidar(self.world, self.state, t)
            samples.append(("lidar", scan))
            self.command = explore_policy(self.state, scan, self._policy_rng, self.config)
        if tick % self.periods["odometry"] == 0:
            samples.append(("odometry", sample_odometry(
                self.state, t, self._noise_rng,
                self.config.position_sigma, self.config.velocity_sigma, self.config.yaw_sigma,
            )))
        if tick % self.periods["camera"] == 0:
            samples.append(("camera", render_camera(self.world, self.state, t)))
        if tick % self.periods["imu"] == 0:
            self._pending_imu.append(t)
        return samples
