"""Two-stage curriculum multi-agent TRPO for lane-change and robot
navigation: goal-conditioned single-agent training, frozen-single-plus-
modifier composition, the centralized-critic baseline, and the evaluation
battery (success, first arrival, Fréchet compromise, mixed pairings)."""

from .config import RunConfig, load_config, parse_config
from .envs import Env, default_geometry
from .trainer import train_iatrpo, train_matrpo, train_single

__all__ = [
    "Env",
    "RunConfig",
    "default_geometry",
    "load_config",
    "parse_config",
    "train_iatrpo",
    "train_matrpo",
    "train_single",
]

__version__ = "0.1.0"
