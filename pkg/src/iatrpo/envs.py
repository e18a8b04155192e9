"""Lane-change and robot-navigation simulators.

Four variants: ``c2_fixed`` and ``c2`` are two-car lane-change courses with
bicycle kinematics; ``r2`` and ``r3`` are two- and three-robot navigation
courses with unicycle kinematics. Every stochastic element (starts, goals,
observation noise, action noise) is drawn from generators passed in by the
caller, so an episode is a pure function of its seeds.

Conventions: agents are discs; collisions use strict inequalities (exact
tangency is not a collision); ``broken`` and ``reached`` are absorbing and
freeze the agent in place while the rest of the episode continues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

ENV_IDS = ("c2_fixed", "c2", "r2", "r3")

# non-adjacent lane index pairs (low, high) on the 4-lane course
_NONADJACENT_PAIRS = ((0, 2), (0, 3), (1, 3))


@dataclass
class AgentState:
    x: float
    y: float
    v: float = 0.0
    omega: float = 0.0
    heading: float = 0.0
    broken: bool = False
    reached: bool = False

    @property
    def frozen(self) -> bool:
        return self.broken or self.reached


@dataclass
class WorldState:
    agents: list[AgentState]
    goals: list[np.ndarray]
    t: int
    env_id: str


@dataclass(frozen=True)
class EnvGeometry:
    """Course layout and integration constants. Defaults via ``default_geometry``."""

    bounds: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max
    start_regions: tuple[tuple[float, float, float, float], ...]  # per role
    lane_centers: tuple[float, ...] = ()
    lane_goal_x: float = 7.5
    nav_goals: tuple[tuple[float, float], ...] = ()
    barriers: tuple[tuple[float, float, float, float], ...] = ()
    agent_radius: float = 0.2
    goal_radius: float = 0.4
    dt: float = 0.1
    horizon: int = 300
    wheelbase: float = 0.3

    def __post_init__(self):
        for name in ("agent_radius", "goal_radius", "dt", "wheelbase"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"geometry.{name} must be positive")
        if self.horizon < 1:
            raise ValueError("geometry.horizon must be >= 1")


def default_geometry(env_id: str, dt: float = 0.1, horizon: int = 300) -> EnvGeometry:
    if env_id == "c2":
        return EnvGeometry(
            bounds=(0.0, 0.0, 8.0, 4.0),
            start_regions=((0.3, 0.3, 3.7, 1.7), (0.3, 2.3, 3.7, 3.7)),
            lane_centers=(0.5, 1.5, 2.5, 3.5),
            lane_goal_x=7.5,
            dt=dt, horizon=horizon,
        )
    if env_id == "c2_fixed":
        return EnvGeometry(
            bounds=(0.0, 0.0, 8.0, 4.0),
            start_regions=((0.3, 1.0, 3.7, 1.0), (0.3, 3.0, 3.7, 3.0)),
            lane_centers=(0.5, 1.5, 2.5, 3.5),
            lane_goal_x=7.5,
            dt=dt, horizon=horizon,
        )
    if env_id in ("r2", "r3"):
        regions = [(0.4, 3.0, 2.4, 5.0), (5.6, 3.0, 7.6, 5.0)]
        goals = [(7.2, 4.0), (0.8, 4.0)]
        if env_id == "r3":
            regions.append((3.0, 0.4, 5.0, 2.4))
            goals.append((4.0, 7.2))
        return EnvGeometry(
            bounds=(0.0, 0.0, 8.0, 8.0),
            start_regions=tuple(regions),
            nav_goals=tuple(goals),
            dt=dt, horizon=horizon,
        )
    raise ValueError(f"unknown env id {env_id!r}; expected one of {ENV_IDS}")


def n_roles(env_id: str) -> int:
    return 3 if env_id == "r3" else 2


def kinematics_kind(env_id: str) -> str:
    return "bicycle" if env_id.startswith("c2") else "unicycle"


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def bicycle_step(s: AgentState, action, geom: EnvGeometry) -> AgentState:
    """Kinematic bicycle Euler update; caller has already applied action noise."""
    accel, steer = float(action[0]), float(action[1])
    dt = geom.dt
    v = min(1.0, max(-1.0, s.v + accel * dt))
    beta = math.atan(0.5 * math.tan(steer))
    yaw_rate = min(1.0, max(-1.0, (v / geom.wheelbase) * math.sin(beta)))
    x = s.x + v * math.cos(s.heading + beta) * dt
    y = s.y + v * math.sin(s.heading + beta) * dt
    heading = _wrap_angle(s.heading + yaw_rate * dt)
    return AgentState(x, y, v, yaw_rate, heading, s.broken, s.reached)


def unicycle_step(s: AgentState, action, geom: EnvGeometry) -> AgentState:
    """Unicycle Euler update; caller has already applied action noise."""
    accel, ang_accel = float(action[0]), float(action[1])
    dt = geom.dt
    omega = min(1.0, max(-1.0, s.omega + ang_accel * dt))
    v = min(1.0, max(-1.0, s.v + accel * dt))
    heading = _wrap_angle(s.heading + omega * dt)
    x = s.x + v * math.cos(heading) * dt
    y = s.y + v * math.sin(heading) * dt
    return AgentState(x, y, v, omega, heading, s.broken, s.reached)


def reward_single(s: AgentState, goal, env_collision: bool, scale: float = 3.0,
                  goal_radius: float = 0.4, shaping_sign: float = -1.0) -> float:
    """Piecewise goal reward: -1 on course collision, +1 inside the goal disc,
    distance/1000 shaping otherwise; everything multiplied by ``scale``."""
    if env_collision:
        return -scale
    d = math.hypot(s.x - goal[0], s.y - goal[1])
    if d < goal_radius:
        return scale
    return scale * shaping_sign * d / 1000.0


def reward_multi(s: AgentState, goal, env_collision: bool, agent_collision: bool,
                 scale: float = 3.0, goal_radius: float = 0.4,
                 shaping_sign: float = -1.0) -> float:
    """Same as ``reward_single`` plus the conflict penalty; course collisions
    take precedence over agent collisions."""
    if env_collision:
        return -scale
    if agent_collision:
        return -scale
    return reward_single(s, goal, False, scale, goal_radius, shaping_sign)


def collision_check(world: WorldState, geom: EnvGeometry):
    """Per-agent (env_collision, agent_collision) flags; strict inequalities."""
    x_min, y_min, x_max, y_max = geom.bounds
    r = geom.agent_radius
    n = len(world.agents)
    env_c = [False] * n
    agent_c = [False] * n
    for i, a in enumerate(world.agents):
        hit = (a.x - r < x_min or a.x + r > x_max or
               a.y - r < y_min or a.y + r > y_max)
        if not hit:
            for bx0, by0, bx1, by1 in geom.barriers:
                # distance from disc center to rectangle
                dx = max(bx0 - a.x, 0.0, a.x - bx1)
                dy = max(by0 - a.y, 0.0, a.y - by1)
                if dx * dx + dy * dy < r * r:
                    hit = True
                    break
        env_c[i] = hit
    for i in range(n):
        ai = world.agents[i]
        for j in range(i + 1, n):
            aj = world.agents[j]
            dx = ai.x - aj.x
            dy = ai.y - aj.y
            if dx * dx + dy * dy < (2.0 * r) ** 2:
                agent_c[i] = True
                agent_c[j] = True
    return list(zip(env_c, agent_c))


@dataclass
class Observation:
    """What one agent senses: noisy own state, exact goal, noisy other agents."""

    own: np.ndarray     # (7,) x, y, v, omega, heading, broken, reached
    goal: np.ndarray    # (2,)
    others: np.ndarray  # (k, 5) rows of x, y, v, heading, omega


class Env:
    """One simulator instance. Not shareable for concurrent mutation; cheap to
    construct one per rollout worker."""

    def __init__(self, env_id: str, geometry: EnvGeometry | None = None, *,
                 roles: tuple[int, ...] | None = None,
                 own_noise: float = 0.01, other_noise: float = 0.1,
                 action_noise: float = 0.1, shaping_sign: float = -1.0,
                 reward_scale: float = 3.0):
        if env_id not in ENV_IDS:
            raise ValueError(f"unknown env id {env_id!r}; expected one of {ENV_IDS}")
        self.env_id = env_id
        self.geom = geometry if geometry is not None else default_geometry(env_id)
        all_roles = tuple(range(n_roles(env_id)))
        self.roles = all_roles if roles is None else tuple(roles)
        if any(r not in all_roles for r in self.roles) or len(set(self.roles)) != len(self.roles):
            raise ValueError(f"invalid role subset {self.roles} for {env_id}")
        self.own_noise = float(own_noise)
        self.other_noise = float(other_noise)
        self.action_noise = float(action_noise)
        self.shaping_sign = float(shaping_sign)
        self.reward_scale = float(reward_scale)
        self.kind = kinematics_kind(env_id)
        self._step_fn = bicycle_step if self.kind == "bicycle" else unicycle_step
        # clamp applied to the policy action before noise
        self.action_bounds = (1.0, 0.6) if self.kind == "bicycle" else (1.0, 1.0)

    @property
    def n_agents(self) -> int:
        return len(self.roles)

    @property
    def action_dim(self) -> int:
        return 2

    def _joint_sample(self, rng: np.random.Generator):
        """Starts and goals for every role of the full environment."""
        geom = self.geom
        nr = n_roles(self.env_id)
        starts = []
        for r in range(nr):
            x0, y0, x1, y1 = geom.start_regions[r]
            x = float(rng.uniform(x0, x1)) if x1 > x0 else x0
            y = float(rng.uniform(y0, y1)) if y1 > y0 else y0
            starts.append((x, y))
        if self.env_id == "c2":
            lo, hi = _NONADJACENT_PAIRS[int(rng.integers(len(_NONADJACENT_PAIRS)))]
            # agents cross: the bottom starter aims at the upper lane
            goals = [
                np.array([geom.lane_goal_x, geom.lane_centers[hi]]),
                np.array([geom.lane_goal_x, geom.lane_centers[lo]]),
            ]
        elif self.env_id == "c2_fixed":
            goals = [
                np.array([geom.lane_goal_x, geom.lane_centers[2]]),
                np.array([geom.lane_goal_x, geom.lane_centers[0]]),
            ]
        else:
            goals = [np.array(g, dtype=np.float64) for g in geom.nav_goals]
        return starts, goals

    def sample_initial(self, rng: np.random.Generator) -> WorldState:
        """Fresh world: random starts per region, goals per variant, zero motion.

        The full joint configuration is always drawn so that a role-subset
        environment (single-agent training) sees the same marginal start and
        goal distributions as the full one.
        """
        starts, goals = self._joint_sample(rng)
        agents = [AgentState(x=starts[r][0], y=starts[r][1]) for r in self.roles]
        return WorldState(agents=agents, goals=[goals[r] for r in self.roles],
                          t=0, env_id=self.env_id)

    def observe(self, world: WorldState, agent_index: int, rng: np.random.Generator,
                rng_others: np.random.Generator | None = None) -> Observation:
        """Noisy own state (flags exact), exact goal, noisy views of the others.

        ``rng_others``, when given, supplies the other-agent noise from its own
        stream so a lone replay of this agent consumes identical own-noise
        draws (used by the trajectory-compromise evaluation).
        """
        if not 0 <= agent_index < len(world.agents):
            raise IndexError(f"agent index {agent_index} out of range")
        if rng_others is None:
            rng_others = rng
        a = world.agents[agent_index]
        own = np.array([a.x, a.y, a.v, a.omega, a.heading], dtype=np.float64)
        own = own + rng.uniform(-self.own_noise, self.own_noise, 5)
        own = np.concatenate([own, [float(a.broken), float(a.reached)]])
        others = np.empty((len(world.agents) - 1, 5), dtype=np.float64)
        k = 0
        for j, o in enumerate(world.agents):
            if j == agent_index:
                continue
            row = np.array([o.x, o.y, o.v, o.heading, o.omega], dtype=np.float64)
            others[k] = row + rng_others.uniform(-self.other_noise, self.other_noise, 5)
            k += 1
        return Observation(own=own, goal=world.goals[agent_index].copy(), others=others)

    def clamp_action(self, action: np.ndarray) -> np.ndarray:
        b0, b1 = self.action_bounds
        return np.array([min(b0, max(-b0, float(action[0]))),
                         min(b1, max(-b1, float(action[1])))])

    def step(self, world: WorldState, actions: dict[int, np.ndarray],
             rng):
        """Advance one tick: noise the active agents' actions, integrate, collide,
        reward. Returns (new world, per-agent rewards, per-agent done flags).

        ``rng`` is either one shared generator or a per-agent-index dict of
        generators (private action-noise streams for replay alignment)."""
        if world.t >= self.geom.horizon or all(a.frozen for a in world.agents):
            raise ValueError("cannot step a finished episode")
        active = [i for i, a in enumerate(world.agents) if not a.frozen]
        missing = [i for i in active if i not in actions]
        if missing:
            raise ValueError(f"missing actions for active agents {missing}")

        new_agents = []
        for i, a in enumerate(world.agents):
            if a.frozen:
                new_agents.append(a)
                continue
            gen = rng[i] if isinstance(rng, dict) else rng
            act = self.clamp_action(actions[i])
            act = act + gen.uniform(-self.action_noise, self.action_noise, 2)
            new_agents.append(self._step_fn(a, act, self.geom))
        new_world = WorldState(agents=new_agents, goals=world.goals,
                               t=world.t + 1, env_id=world.env_id)

        flags = collision_check(new_world, self.geom)
        multi = len(world.agents) > 1
        rewards = np.zeros(len(world.agents))
        dones = [True] * len(world.agents)
        for i, a in enumerate(new_world.agents):
            if i not in active:
                continue
            env_c, agent_c = flags[i]
            if multi:
                r = reward_multi(a, new_world.goals[i], env_c, agent_c,
                                 self.reward_scale, self.geom.goal_radius,
                                 self.shaping_sign)
                hit = env_c or agent_c
            else:
                r = reward_single(a, new_world.goals[i], env_c,
                                  self.reward_scale, self.geom.goal_radius,
                                  self.shaping_sign)
                hit = env_c
            if hit:
                a.broken = True
            elif math.hypot(a.x - new_world.goals[i][0], a.y - new_world.goals[i][1]) < self.geom.goal_radius:
                a.reached = True
            rewards[i] = r
            dones[i] = a.frozen or new_world.t >= self.geom.horizon
        return new_world, rewards, dones

    def feature_norms(self):
        """Fixed affine input scaling derived from the course geometry.

        Returns (shift, scale) pairs for own, goal, and per-other feature
        blocks; policies divide (value - shift) by scale before the network.
        """
        x_min, y_min, x_max, y_max = self.geom.bounds
        cx, cy = (x_min + x_max) / 2.0, (y_min + y_max) / 2.0
        sx, sy = (x_max - x_min) / 2.0, (y_max - y_min) / 2.0
        own_shift = np.array([cx, cy, 0.0, 0.0, 0.0, 0.0, 0.0])
        own_scale = np.array([sx, sy, 1.0, 1.0, math.pi, 1.0, 1.0])
        goal_shift = np.array([cx, cy])
        goal_scale = np.array([sx, sy])
        other_shift = np.array([cx, cy, 0.0, 0.0, 0.0])
        other_scale = np.array([sx, sy, 1.0, math.pi, 1.0])
        return (own_shift, own_scale), (goal_shift, goal_scale), (other_shift, other_scale)
