"""Policy handles: single-agent, composed (frozen single + modifier), and the
centralized-critic baseline.

A handle owns actor and critic parameters plus the fixed input scaling for its
environment, and exposes the differentiable surface ``trpo`` expects. The
composed kind carries the stage-1 networks verbatim; those parameters are
never written by any update path.

Raw feature layout fed to the heads (before scaling): own state is the 7-
vector (x, y, v, omega, heading, broken, reached); each other agent
contributes the 5-vector (x, y, v, heading, omega); the goal is its 2-D
point. Scaling maps positions and heading into O(1) ranges using the course
geometry and is stored with the handle.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .nnet import (GaussianAction, MlpSpec, ParameterVector, init_params,
                   mlp_backward, mlp_forward, mlp_jvp)

OWN_DIM = 7
GOAL_DIM = 2
OTHER_DIM = 5

KINDS = ("single", "composed", "matrpo")


class NetActor:
    """Diagonal-Gaussian actor backed by one MLP over the full feature row."""

    def __init__(self, params: ParameterVector):
        if params.extra is None:
            raise ValueError("actor parameters need a log-std block")
        self.params = params

    @property
    def log_std(self) -> np.ndarray:
        return self.params.extra

    @property
    def n_mean_params(self) -> int:
        return self.params.spec.n_params()

    def mean_batch(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self.params, x)

    def grad_mean(self, x, u) -> np.ndarray:
        return mlp_backward(self.params, x, u)

    def jvp_mean(self, x, v) -> np.ndarray:
        return mlp_jvp(self.params, x, v)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params.values, self.params.extra])

    def set_flat(self, flat: np.ndarray):
        n = self.n_mean_params
        self.params.values[:] = flat[:n]
        self.params.extra[:] = flat[n:]


class ComposedActor:
    """Frozen single-agent actor plus trainable modifier, combined by summation.

    Feature rows are [own, goal, others]; the frozen net reads (own, goal),
    the modifier reads (own, others) and optionally the goal. Gradients flow
    only through the modifier and the trainable log-std.
    """

    def __init__(self, frozen: ParameterVector, modifier: ParameterVector,
                 n_others: int, modifier_sees_goal: bool = False):
        if modifier.extra is None:
            raise ValueError("modifier parameters need a log-std block")
        self.frozen = frozen
        self.modifier = modifier
        self.n_others = n_others
        self.modifier_sees_goal = modifier_sees_goal

    def _split(self, x: np.ndarray):
        sg = OWN_DIM + GOAL_DIM
        frozen_in = x[..., :sg]
        if self.modifier_sees_goal:
            mod_in = x
        else:
            mod_in = np.concatenate([x[..., :OWN_DIM], x[..., sg:]], axis=-1)
        return frozen_in, mod_in

    @property
    def log_std(self) -> np.ndarray:
        return self.modifier.extra

    @property
    def n_mean_params(self) -> int:
        return self.modifier.spec.n_params()

    def mean_batch(self, x: np.ndarray) -> np.ndarray:
        frozen_in, mod_in = self._split(x)
        return mlp_forward(self.frozen, frozen_in) + mlp_forward(self.modifier, mod_in)

    def grad_mean(self, x, u) -> np.ndarray:
        _, mod_in = self._split(x)
        return mlp_backward(self.modifier, mod_in, u)

    def jvp_mean(self, x, v) -> np.ndarray:
        _, mod_in = self._split(x)
        return mlp_jvp(self.modifier, mod_in, v)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.modifier.values, self.modifier.extra])

    def set_flat(self, flat: np.ndarray):
        n = self.n_mean_params
        self.modifier.values[:] = flat[:n]
        self.modifier.extra[:] = flat[n:]


class NetValue:
    """Scalar value head backed by one MLP."""

    def __init__(self, params: ParameterVector):
        self.params = params

    def value_batch(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self.params, x)[..., 0]

    def grad(self, x, u) -> np.ndarray:
        return mlp_backward(self.params, x, u)

    def get_flat(self) -> np.ndarray:
        return self.params.values.copy()

    def set_flat(self, flat: np.ndarray):
        self.params.values[:] = flat


class ComposedValue:
    """Frozen single-agent critic plus trainable modifier critic (summed)."""

    def __init__(self, frozen: ParameterVector, modifier: ParameterVector,
                 modifier_sees_goal: bool = False):
        self.frozen = frozen
        self.modifier = modifier
        self.modifier_sees_goal = modifier_sees_goal

    def _split(self, x: np.ndarray):
        sg = OWN_DIM + GOAL_DIM
        if self.modifier_sees_goal:
            return x[..., :sg], x
        return x[..., :sg], np.concatenate([x[..., :OWN_DIM], x[..., sg:]], axis=-1)

    def value_batch(self, x: np.ndarray) -> np.ndarray:
        frozen_in, mod_in = self._split(x)
        return mlp_forward(self.frozen, frozen_in)[..., 0] + mlp_forward(self.modifier, mod_in)[..., 0]

    def grad(self, x, u) -> np.ndarray:
        _, mod_in = self._split(x)
        return mlp_backward(self.modifier, mod_in, u)

    def get_flat(self) -> np.ndarray:
        return self.modifier.values.copy()

    def set_flat(self, flat: np.ndarray):
        self.modifier.values[:] = flat


@dataclass
class FeatureNorms:
    own_shift: np.ndarray
    own_scale: np.ndarray
    goal_shift: np.ndarray
    goal_scale: np.ndarray
    other_shift: np.ndarray
    other_scale: np.ndarray

    @classmethod
    def from_env(cls, env) -> "FeatureNorms":
        (osh, osc), (gsh, gsc), (tsh, tsc) = env.feature_norms()
        return cls(osh, osc, gsh, gsc, tsh, tsc)


class PolicyHandle:
    """A tagged policy for one agent role, evaluable as mean plus log-std.

    ``kind`` is one of ``single`` (actor/critic on own obs + goal),
    ``composed`` (frozen single + modifier on own obs + others), or
    ``matrpo`` (actor on own obs + goal + others; critic additionally on the
    other agents' executed actions).
    """

    def __init__(self, kind: str, role: int, n_others: int, norms: FeatureNorms,
                 actor, critic, frozen_actor: ParameterVector | None = None,
                 frozen_critic: ParameterVector | None = None,
                 modifier_sees_goal: bool = False):
        if kind not in KINDS:
            raise ValueError(f"unknown policy kind {kind!r}")
        if kind == "composed" and (frozen_actor is None or frozen_critic is None):
            raise ValueError("composed policy requires frozen single-agent networks")
        if kind == "matrpo" and n_others < 1:
            raise ValueError("matrpo requires at least one other agent")
        self.kind = kind
        self.role = role
        self.n_others = n_others
        self.norms = norms
        self.actor = actor
        self.critic = critic
        self.frozen_actor = frozen_actor
        self.frozen_critic = frozen_critic
        self.modifier_sees_goal = modifier_sees_goal

    # -- featurization ---------------------------------------------------

    def _scaled_parts(self, own, goal, others):
        n = self.norms
        own = (np.asarray(own, dtype=np.float64) - n.own_shift) / n.own_scale
        goal = (np.asarray(goal, dtype=np.float64) - n.goal_shift) / n.goal_scale
        if others is None or len(others) == 0:
            others = np.zeros((0,))
        else:
            others = ((np.asarray(others, dtype=np.float64) - n.other_shift) / n.other_scale).ravel()
        return own, goal, others

    def actor_features(self, tr) -> np.ndarray:
        """Feature row for the actor from a transition."""
        return self.actor_features_raw(tr.observation, tr.goal, tr.other_obs)

    def actor_features_raw(self, own, goal, others) -> np.ndarray:
        own, goal, others = self._scaled_parts(own, goal, others)
        if self.kind == "single":
            return np.concatenate([own, goal])
        return np.concatenate([own, goal, others])

    def value_features(self, tr) -> np.ndarray:
        return self.value_features_raw(tr.observation, tr.goal, tr.other_obs,
                                       tr.other_actions)

    def value_features_raw(self, own, goal, others, other_actions) -> np.ndarray:
        row = self.actor_features_raw(own, goal, others)
        if self.kind != "matrpo":
            return row
        if other_actions is None or len(other_actions) == 0:
            raise ValueError("matrpo critic requires the other agents' actions")
        return np.concatenate([row, np.asarray(other_actions, dtype=np.float64).ravel()])

    # -- evaluation ------------------------------------------------------

    def act(self, own, goal, others=None) -> GaussianAction:
        """Gaussian over actions for one observation."""
        if self.kind != "single" and (others is None or len(others) == 0):
            raise ValueError(f"{self.kind} policy requires other-agent observations")
        row = self.actor_features_raw(own, goal, others if self.kind != "single" else None)
        mean = self.actor.mean_batch(row)
        return GaussianAction(mean=mean, log_std=self.actor.log_std.copy())

    def value(self, own, goal, others=None, other_actions=None) -> float:
        row = self.value_features_raw(own, goal,
                                      others if self.kind != "single" else None,
                                      other_actions)
        return float(self.critic.value_batch(row))

    # -- bookkeeping -----------------------------------------------------

    def frozen_fingerprint(self) -> str:
        """Digest of the frozen stage-1 parameters (empty for other kinds)."""
        if self.kind != "composed":
            return ""
        h = hashlib.sha256()
        h.update(self.frozen_actor.values.tobytes())
        h.update(self.frozen_critic.values.tobytes())
        return h.hexdigest()


def act_single(handle: PolicyHandle, obs, goal) -> GaussianAction:
    if handle.kind != "single":
        raise ValueError(f"expected a single-agent policy, got {handle.kind}")
    return handle.act(obs, goal)


def act_composed(handle: PolicyHandle, obs, goal, other_obs) -> GaussianAction:
    if handle.kind != "composed":
        raise ValueError(f"expected a composed policy, got {handle.kind}")
    return handle.act(obs, goal, other_obs)


def act_matrpo(handle: PolicyHandle, obs, goal, other_obs) -> GaussianAction:
    if handle.kind != "matrpo":
        raise ValueError(f"expected a matrpo policy, got {handle.kind}")
    return handle.act(obs, goal, other_obs)


def value_matrpo(handle: PolicyHandle, obs, goal, other_obs, other_actions) -> float:
    if handle.kind != "matrpo":
        raise ValueError(f"expected a matrpo policy, got {handle.kind}")
    return handle.value(obs, goal, other_obs, other_actions)


# -- construction --------------------------------------------------------

ACTION_DIM = 2


def make_single_handle(env, role: int, rng: np.random.Generator) -> PolicyHandle:
    """Fresh stage-1 policy: actor and critic on (own obs, goal)."""
    in_dim = OWN_DIM + GOAL_DIM
    actor_pv = init_params(MlpSpec(in_dim, ACTION_DIM), rng, final_scale=0.01)
    actor_pv.extra = np.zeros(ACTION_DIM)
    critic_pv = init_params(MlpSpec(in_dim, 1), rng)
    return PolicyHandle("single", role, n_others=0, norms=FeatureNorms.from_env(env),
                        actor=NetActor(actor_pv), critic=NetValue(critic_pv))


def make_composed_handle(env, role: int, single: PolicyHandle,
                         rng: np.random.Generator,
                         modifier_sees_goal: bool = False) -> PolicyHandle:
    """Stage-2 policy: the stage-1 networks, frozen, plus a fresh modifier pair."""
    if single.kind != "single":
        raise ValueError("stage-2 composition needs a single-agent checkpoint")
    n_others = env.n_agents - 1
    if n_others < 1:
        raise ValueError("composed policy needs a multi-agent environment")
    mod_in = OWN_DIM + n_others * OTHER_DIM + (GOAL_DIM if modifier_sees_goal else 0)
    frozen_actor = single.actor.params.copy()
    frozen_critic = single.critic.params.copy()
    mod_actor = init_params(MlpSpec(mod_in, ACTION_DIM), rng, final_scale=0.01)
    mod_actor.extra = single.actor.log_std.copy()
    mod_critic = init_params(MlpSpec(mod_in, 1), rng)
    actor = ComposedActor(frozen_actor, mod_actor, n_others, modifier_sees_goal)
    critic = ComposedValue(frozen_critic, mod_critic, modifier_sees_goal)
    return PolicyHandle("composed", role, n_others, FeatureNorms.from_env(env),
                        actor=actor, critic=critic,
                        frozen_actor=frozen_actor, frozen_critic=frozen_critic,
                        modifier_sees_goal=modifier_sees_goal)


def make_matrpo_handle(env, role: int, rng: np.random.Generator) -> PolicyHandle:
    """Baseline policy: actor on (own, goal, others); critic adds their actions."""
    n_others = env.n_agents - 1
    actor_in = OWN_DIM + GOAL_DIM + n_others * OTHER_DIM
    critic_in = actor_in + n_others * ACTION_DIM
    actor_pv = init_params(MlpSpec(actor_in, ACTION_DIM), rng, final_scale=0.01)
    actor_pv.extra = np.zeros(ACTION_DIM)
    critic_pv = init_params(MlpSpec(critic_in, 1), rng)
    return PolicyHandle("matrpo", role, n_others, FeatureNorms.from_env(env),
                        actor=NetActor(actor_pv), critic=NetValue(critic_pv))
