"""Run configuration: one YAML document with four sections (env, trpo,
curriculum, eval), full schema validation, and a stable content hash.

Unknown keys are rejected and every value is range-checked so a typo fails
loudly instead of silently training with defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields

import yaml

from .envs import ENV_IDS, Env, EnvGeometry, default_geometry
from .trainer import CurriculumConfig
from .trpo import TrpoConfig

FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Malformed, unknown, or out-of-range configuration input."""


@dataclass
class GeometryOverrides:
    bounds: list | None = None
    lane_centers: list | None = None
    lane_goal_x: float | None = None
    nav_goals: list | None = None
    start_regions: list | None = None
    barriers: list | None = None


@dataclass
class EnvConfig:
    id: str = "c2_fixed"
    dt: float = 0.1
    horizon: int = 300
    own_noise: float = 0.01
    other_noise: float = 0.1
    action_noise: float = 0.1
    shaping_sign: float = -1.0
    reward_scale: float = 3.0
    agent_radius: float = 0.2
    goal_radius: float = 0.4
    wheelbase: float = 0.3
    geometry: GeometryOverrides = field(default_factory=GeometryOverrides)

    def validate(self):
        if self.id not in ENV_IDS:
            raise ConfigError(f"env.id must be one of {ENV_IDS}, got {self.id!r}")
        positive = ["dt", "reward_scale", "agent_radius", "goal_radius", "wheelbase"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"env.{name} must be positive: {getattr(self, name)}")
        if self.horizon < 1:
            raise ConfigError(f"env.horizon must be >= 1: {self.horizon}")
        for name in ["own_noise", "other_noise", "action_noise"]:
            if getattr(self, name) < 0:
                raise ConfigError(f"env.{name} must be >= 0: {getattr(self, name)}")
        if self.shaping_sign not in (-1.0, 1.0):
            raise ConfigError(f"env.shaping_sign must be -1 or 1: {self.shaping_sign}")


@dataclass
class EvalConfig:
    n_episodes: int = 1000
    deterministic: bool = True
    n_pairs: int = 20

    def validate(self):
        if self.n_episodes < 1:
            raise ConfigError(f"eval.n_episodes must be >= 1: {self.n_episodes}")
        if self.n_pairs < 1:
            raise ConfigError(f"eval.n_pairs must be >= 1: {self.n_pairs}")


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    trpo: TrpoConfig = field(default_factory=TrpoConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        self.env.validate()
        try:
            self.trpo.validate()
            self.curriculum.validate()
        except ValueError as e:  # re-tag with the config error category
            raise ConfigError(str(e)) from e
        self.eval.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


_FLOATISH = (int, float)


def _coerce(path: str, value, target_type):
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, _FLOATISH):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported value {value!r}")


_GEOMETRY_SHAPES = {
    "bounds": (4, float),
    "lane_centers": (None, float),
    "lane_goal_x": None,
    "nav_goals": (None, "point"),
    "start_regions": (None, "rect"),
    "barriers": (None, "rect"),
}


def _parse_geometry(path: str, data) -> GeometryOverrides:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    geo = GeometryOverrides()
    for key, value in data.items():
        if key not in _GEOMETRY_SHAPES:
            raise ConfigError(f"unknown key {path}.{key}")
        if key == "lane_goal_x":
            geo.lane_goal_x = _coerce(f"{path}.{key}", value, float)
            continue
        length, kind = _GEOMETRY_SHAPES[key]
        if not isinstance(value, list):
            raise ConfigError(f"{path}.{key}: expected a list")
        if length is not None and len(value) != length:
            raise ConfigError(f"{path}.{key}: expected {length} numbers")
        if kind is float:
            setattr(geo, key, [_coerce(f"{path}.{key}[{i}]", v, float)
                               for i, v in enumerate(value)])
        else:
            width = 2 if kind == "point" else 4
            rows = []
            for i, row in enumerate(value):
                if not isinstance(row, list) or len(row) != width:
                    raise ConfigError(f"{path}.{key}[{i}]: expected {width} numbers")
                rows.append([_coerce(f"{path}.{key}[{i}][{j}]", v, float)
                             for j, v in enumerate(row)])
            setattr(geo, key, rows)
    return geo


def _fill_section(obj, path: str, data: dict):
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {path}.{key}")
        current = getattr(obj, key)
        if isinstance(current, GeometryOverrides):
            setattr(obj, key, _parse_geometry(f"{path}.{key}", value))
        else:
            setattr(obj, key, _coerce(f"{path}.{key}", value, type(current)))


def parse_config(text: str) -> RunConfig:
    """Parse and validate a YAML config; defaults apply for absent keys."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML: {e}") from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping of sections")
    cfg = RunConfig()
    sections = {"env": cfg.env, "trpo": cfg.trpo, "curriculum": cfg.curriculum,
                "eval": cfg.eval}
    for key, value in data.items():
        if key not in sections:
            raise ConfigError(f"unknown section {key!r}; expected one of {sorted(sections)}")
        if value is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        _fill_section(sections[key], key, value)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text)


def build_geometry(env_cfg: EnvConfig) -> EnvGeometry:
    geom = default_geometry(env_cfg.id, dt=env_cfg.dt, horizon=env_cfg.horizon)
    updates = {
        "agent_radius": env_cfg.agent_radius,
        "goal_radius": env_cfg.goal_radius,
        "wheelbase": env_cfg.wheelbase,
    }
    geo = env_cfg.geometry
    if geo.bounds is not None:
        updates["bounds"] = tuple(geo.bounds)
    if geo.lane_centers is not None:
        updates["lane_centers"] = tuple(geo.lane_centers)
    if geo.lane_goal_x is not None:
        updates["lane_goal_x"] = geo.lane_goal_x
    if geo.nav_goals is not None:
        updates["nav_goals"] = tuple(tuple(p) for p in geo.nav_goals)
    if geo.start_regions is not None:
        updates["start_regions"] = tuple(tuple(r) for r in geo.start_regions)
    if geo.barriers is not None:
        updates["barriers"] = tuple(tuple(r) for r in geo.barriers)
    return dataclasses.replace(geom, **updates)


def build_env(env_cfg: EnvConfig, roles: tuple[int, ...] | None = None) -> Env:
    return Env(env_cfg.id, build_geometry(env_cfg), roles=roles,
               own_noise=env_cfg.own_noise, other_noise=env_cfg.other_noise,
               action_noise=env_cfg.action_noise,
               shaping_sign=env_cfg.shaping_sign,
               reward_scale=env_cfg.reward_scale)
