"""Point-mass projectile dynamics under gravity and quadratic drag.

The simulation plane is 2D: x is horizontal range, y is height. A 3D target is
reduced to this plane by its horizontal distance and height, and the azimuth
of the firing plane is carried separately.

Integration is explicit (forward) Euler by default. The per-step kernel used
by :func:`simulate` is compiled with numba and performs the same floating
point operations, in the same order, as the pure-Python :func:`step`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

__all__ = [
    "ProjectileParams",
    "Environment",
    "State2",
    "SimConfig",
    "Termination",
    "Trajectory",
    "PROFILES",
    "get_profile",
    "load_profile_file",
    "drag_factor",
    "drag_acceleration",
    "step",
    "launch_velocity",
    "simulate",
    "map_3d_to_2d",
    "map_2d_to_3d",
]


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class ProjectileParams:
    mass: float  # kg
    drag_coeff: float  # dimensionless
    ref_area: float  # m^2
    muzzle_speed: float  # m/s

    def __post_init__(self):
        for name in ("mass", "drag_coeff", "ref_area", "muzzle_speed"):
            _finite(name, getattr(self, name))
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.muzzle_speed <= 0:
            raise ValueError("muzzle_speed must be positive")
        if self.drag_coeff < 0 or self.ref_area < 0:
            raise ValueError("drag_coeff and ref_area must be non-negative")


@dataclass(frozen=True)
class Environment:
    gravity: float = 9.81  # m/s^2
    air_density: float = 1.225  # kg/m^3

    def __post_init__(self):
        _finite("gravity", self.gravity)
        _finite("air_density", self.air_density)
        if self.gravity <= 0:
            raise ValueError("gravity must be positive")
        if self.air_density < 0:
            raise ValueError("air_density must be non-negative")


@dataclass(frozen=True)
class State2:
    position: tuple[float, float] = (0.0, 0.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    time: float = 0.0


INTEGRATORS = ("euler", "semi_implicit")


@dataclass(frozen=True)
class SimConfig:
    angular_density: int = 500
    max_radius: float = 2000.0
    dt: float = 1e-4
    max_steps: int = 10_000_000
    profile_name: str = "plausible-rifle"
    integrator: str = "euler"

    def __post_init__(self):
        if int(self.angular_density) != self.angular_density or self.angular_density < 2:
            raise ValueError(f"angular_density must be an integer >= 2, got {self.angular_density!r}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not (math.isfinite(self.max_radius) and self.max_radius > 0):
            raise ValueError(f"max_radius must be positive, got {self.max_radius!r}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ValueError(f"max_steps must be a positive integer, got {self.max_steps!r}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")


# Literal large-area constants. With ref_area = 0.02641 m^2 the muzzle drag
# deceleration is ~8.3e4 m/s^2 and nothing reaches a 2 km radius.
_LARGE_AREA_PROJECTILE = ProjectileParams(mass=0.042, drag_coeff=0.295, ref_area=0.02641, muzzle_speed=853.0)
_STANDARD_AIR = Environment(gravity=9.81, air_density=1.225)

PROFILES: dict[str, tuple[ProjectileParams, Environment]] = {
    "paper-verbatim": (_LARGE_AREA_PROJECTILE, _STANDARD_AIR),
    # 7.62 mm cross-section: pi * 0.00391^2 ~= 4.8e-5 m^2
    "plausible-rifle": (
        ProjectileParams(mass=0.042, drag_coeff=0.295, ref_area=4.8e-5, muzzle_speed=853.0),
        _STANDARD_AIR,
    ),
    "vacuum": (
        ProjectileParams(mass=0.042, drag_coeff=0.0, ref_area=4.8e-5, muzzle_speed=853.0),
        _STANDARD_AIR,
    ),
}

PROFILE_KEYS = ("mass", "drag_coeff", "ref_area", "muzzle_speed", "gravity", "air_density")
SIM_KEYS = ("dt", "max_radius", "max_steps")


def get_profile(name: str) -> tuple[ProjectileParams, Environment]:
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def parse_key_values(text: str, allowed: tuple[str, ...]) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment. Unknown keys raise."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in allowed:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load_profile_file(path: str | Path) -> tuple[ProjectileParams, Environment, dict]:
    """Read a profile from a key=value file.

    All six physical keys are required. ``dt``, ``max_radius`` and ``max_steps``
    are optional and returned as a dict of SimConfig overrides.
    """
    values = parse_key_values(Path(path).read_text(), PROFILE_KEYS + SIM_KEYS)
    missing = [k for k in PROFILE_KEYS if k not in values]
    if missing:
        raise ValueError(f"profile file {path} is missing keys: {', '.join(missing)}")
    proj = ProjectileParams(*(float(values[k]) for k in PROFILE_KEYS[:4]))
    env = Environment(*(float(values[k]) for k in PROFILE_KEYS[4:]))
    sim = {}
    for key in SIM_KEYS:
        if key in values:
            sim[key] = int(values[key]) if key == "max_steps" else float(values[key])
    return proj, env, sim


def drag_factor(env: Environment, proj: ProjectileParams) -> float:
    """rho * Cd * A / (2 m), so that the drag deceleration is factor * |v|^2."""
    return 0.5 * env.air_density * proj.drag_coeff * proj.ref_area / proj.mass


def drag_acceleration(velocity, env: Environment, proj: ProjectileParams) -> tuple[float, float]:
    vx, vy = float(velocity[0]), float(velocity[1])
    k = drag_factor(env, proj)
    speed = math.sqrt(vx * vx + vy * vy)
    return (-k * speed * vx, -k * speed * vy)


def step(state: State2, dt: float, env: Environment, proj: ProjectileParams) -> State2:
    """One explicit Euler step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, y = state.position
    vx, vy = state.velocity
    ax, ay = drag_acceleration((vx, vy), env, proj)
    ay = ay - env.gravity
    return State2(
        position=(x + vx * dt, y + vy * dt),
        velocity=(vx + ax * dt, vy + ay * dt),
        time=state.time + dt,
    )


class Termination(enum.IntEnum):
    RADIUS = 0
    GROUND = 1
    STEP_CAP = 2


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered positions of one simulated shot; ``points[0]`` is the origin.

    ``stride`` is the subsampling stride applied to the raw integration steps
    (1 for a raw trajectory). ``bound_ok`` is False when subsampling could not
    meet the requested spacing bound and the points were left untouched.
    """

    initial_angle: float
    angle_index: int
    points: np.ndarray = field(repr=False)  # (N, 2) float64
    termination: Termination
    stride: int = 1
    bound_ok: bool = True

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
            raise ValueError("points must be a non-empty (N, 2) array")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def last_point(self) -> np.ndarray:
        return self.points[-1]


def launch_velocity(angle: float, speed: float) -> tuple[float, float]:
    """Muzzle velocity components for an elevation angle in [0, pi].

    Angles past pi/2 are evaluated through their mirror pi - angle so that
    simulate(a) and simulate(pi - a) are exact x-mirror images; in particular
    angle = pi gives vy == 0 exactly instead of speed * sin(pi) ~ 1e-13.
    """
    if angle <= math.pi / 2:
        return speed * math.cos(angle), speed * math.sin(angle)
    mirrored = math.pi - angle
    return -(speed * math.cos(mirrored)), speed * math.sin(mirrored)


@njit(cache=True, nogil=True)
def _integrate(vx, vy, dt, gravity, k, max_radius, max_steps, semi_implicit):
    cap = 4096
    xs = np.empty(cap)
    ys = np.empty(cap)
    xs[0] = 0.0
    ys[0] = 0.0
    n = 1
    x = 0.0
    y = 0.0
    airborne = False
    cause = 2
    for _ in range(max_steps):
        speed = np.sqrt(vx * vx + vy * vy)
        ax = -k * speed * vx
        ay = -k * speed * vy - gravity
        if semi_implicit:
            vx = vx + ax * dt
            vy = vy + ay * dt
            x = x + vx * dt
            y = y + vy * dt
        else:
            x = x + vx * dt
            y = y + vy * dt
            vx = vx + ax * dt
            vy = vy + ay * dt
        if n == cap:
            cap *= 2
            nx = np.empty(cap)
            ny = np.empty(cap)
            nx[:n] = xs
            ny[:n] = ys
            xs = nx
            ys = ny
        xs[n] = x
        ys[n] = y
        n += 1
        if np.sqrt(x * x + y * y) >= max_radius:
            cause = 0
            break
        if y > 0.0:
            airborne = True
        elif y < 0.0 and airborne:
            cause = 1
            break
    out = np.empty((n, 2))
    out[:, 0] = xs[:n]
    out[:, 1] = ys[:n]
    return out, cause


def simulate(
    elevation_angle: float,
    cfg: SimConfig,
    env: Environment,
    proj: ProjectileParams,
    angle_index: int = 0,
) -> Trajectory:
    """Integrate one shot from the origin and record every step.

    Stops at the first step where the range from the origin reaches
    ``cfg.max_radius``, where the projectile drops below y = 0 after having
    been above it, or after ``cfg.max_steps`` steps. Grazing shots launched
    along the ground (angle 0 or pi) are never airborne and run to the radius.
    """
    theta = _finite("elevation_angle", elevation_angle)
    if not 0.0 <= theta <= math.pi:
        raise ValueError(f"elevation angle {theta} outside [0, pi]")
    vx, vy = launch_velocity(theta, proj.muzzle_speed)
    points, cause = _integrate(
        vx,
        vy,
        float(cfg.dt),
        float(env.gravity),
        drag_factor(env, proj),
        float(cfg.max_radius),
        int(cfg.max_steps),
        cfg.integrator == "semi_implicit",
    )
    return Trajectory(theta, int(angle_index), points, Termination(cause))


def map_3d_to_2d(point) -> tuple[tuple[float, float], float]:
    """Reduce a 3D point to (horizontal range, height) and its azimuth.

    The origin and points on the vertical axis get azimuth 0 (atan2(0, 0) == 0).
    """
    X, Y, Z = (_finite("coordinate", c) for c in point)
    return (math.hypot(X, Y), Z), math.atan2(Y, X)


def map_2d_to_3d(point2, azimuth: float) -> tuple[float, float, float]:
    r, z = float(point2[0]), float(point2[1])
    if r < 0:
        raise ValueError("in-plane range must be non-negative")
    return (r * math.cos(azimuth), r * math.sin(azimuth), z)
