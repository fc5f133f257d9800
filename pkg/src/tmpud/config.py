"""Parameter blocks for the planner, controller, safety estimator and
simulation, with JSON round-tripping for scenario/config files."""

import json
from dataclasses import asdict, dataclass, field, fields

from .geometry import ControlEnvelope

KMH_20 = 20.0 / 3.6  # the stack's default cruising speed


@dataclass
class VehicleParams:
    length: float = 4.5
    width: float = 2.0

    @property
    def wheelbase(self):
        # kinematic model convention used throughout
        return 0.6 * self.length


@dataclass
class ControllerGains:
    steer_kp: float = 0.45
    steer_ki: float = 0.0
    steer_kd: float = 0.12
    heading_kp: float = 1.2
    speed_kp: float = 1.2
    speed_ki: float = 0.05
    speed_kd: float = 0.0
    target_speed: float = KMH_20
    lookahead: float = 4.0

    def __post_init__(self):
        gains = (self.steer_kp, self.steer_ki, self.steer_kd,
                 self.speed_kp, self.speed_ki, self.speed_kd)
        if any(g < 0 for g in gains):
            raise ValueError("PID gains must be nonnegative")
        if self.target_speed <= 0:
            raise ValueError("target speed must be positive")


@dataclass
class EstimatorParams:
    horizon: float = 3.0          # T, seconds
    interval: float = 0.5         # omega, seconds
    samples: int = 2000           # M
    d_safe: float = 2.0           # meters of required footprint separation
    sensing_radius: float = 50.0  # meters

    def __post_init__(self):
        if self.horizon <= 0 or not 0 < self.interval <= self.horizon:
            raise ValueError("need horizon > 0 and 0 < interval <= horizon")
        if self.samples < 1:
            raise ValueError("need at least one control sample")


@dataclass
class PlannerParams:
    gamma: float = 50.0
    cost_source: str = "astar"  # or "euclidean"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.cost_source not in ("astar", "euclidean"):
            raise ValueError(f"unknown cost source {self.cost_source!r}")


@dataclass
class SimParams:
    dt: float = 0.05
    completion_pos_tol: float = 1.5     # meters to the sampled goal pose
    completion_heading_tol: float = 0.3  # radians
    action_timeout: float = 120.0        # seconds of motion per action
    max_replans: int = 100


@dataclass
class StackConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    envelope: ControlEnvelope = field(default_factory=ControlEnvelope)
    gains: ControllerGains = field(default_factory=ControllerGains)
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    sim: SimParams = field(default_factory=SimParams)

    def to_dict(self):
        return asdict(self)

    @staticmethod
    def from_dict(doc):
        cfg = StackConfig()
        for f in fields(StackConfig):
            block = doc.get(f.name)
            if block is None:
                continue
            current = getattr(cfg, f.name)
            known = {x.name for x in fields(current)}
            unknown = set(block) - known
            if unknown:
                raise ValueError(f"unknown keys in config block {f.name!r}: {sorted(unknown)}")
            setattr(cfg, f.name, type(current)(**{**asdict(current), **block}))
        return cfg

    @staticmethod
    def load(path):
        with open(path) as fh:
            return StackConfig.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
