"""Training orchestration: stage-1 goal-conditioned single agents, stage-2
frozen-single-plus-modifier composition, and the from-scratch centralized-
critic baseline.

All stochasticity flows through named generator streams keyed by
(seed, purpose, stage, role, iteration, episode), so a run is a pure function
of (config, seed) and retraining reproduces checkpoints bit for bit. Every
agent is updated from its own transitions only, simultaneously each
iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import Env
from .evalr import derived_seed, evaluate, rng_stream
from .nnet import log_prob_arrays
from .policies import (PolicyHandle, make_composed_handle, make_matrpo_handle,
                       make_single_handle)
from .trpo import Batch, Transition, TrpoConfig, fit_value, trpo_step

TAG_INIT = 0
TAG_ROLLOUT = 1
TAG_PROBE = 3

STAGE_SINGLE = 1
STAGE_COMPOSED = 2
STAGE_MATRPO = 3


@dataclass
class CurriculumConfig:
    stage1_iterations: int = 500
    stage2_iterations: int = 1000
    seed: int = 0
    probe_every: int = 1
    probe_episodes: int = 100
    early_stop_success: float = 0.98
    early_stop_window: int = 20
    modifier_sees_goal: bool = False

    def validate(self):
        checks = [
            ("stage1_iterations", self.stage1_iterations >= 0),
            ("stage2_iterations", self.stage2_iterations >= 0),
            ("probe_every", self.probe_every >= 0),
            ("probe_episodes", self.probe_episodes >= 1),
            ("early_stop_success", 0.0 < self.early_stop_success <= 1.0),
            ("early_stop_window", self.early_stop_window >= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ValueError(f"curriculum.{name} out of range: {getattr(self, name)}")


def rollout(env: Env, handles, n_timesteps: int, seed: int, stage: int,
            role_tag: int, iteration: int, deterministic: bool = False):
    """Collect whole episodes until the world-step budget is met.

    Returns (episodes per agent slot, episode lengths per slot, world steps,
    episode count). Transition streams are keyed per episode so results do
    not depend on how episodes are scheduled across workers.
    """
    n = env.n_agents
    if len(handles) != n:
        raise ValueError(f"need {n} policies, got {len(handles)}")
    episodes = [[] for _ in range(n)]
    lengths = [[] for _ in range(n)]
    total = 0
    ep = 0
    act_dim = env.action_dim
    zero_action = np.zeros(act_dim)
    while total < n_timesteps:
        key = (seed, TAG_ROLLOUT, stage, role_tag, iteration, ep)
        rng_init = rng_stream(*key, 0)
        rng_obs = rng_stream(*key, 1)
        rng_act = rng_stream(*key, 2)
        rng_dyn = rng_stream(*key, 3)
        world = env.sample_initial(rng_init)
        trans = [[] for _ in range(n)]
        while world.t < env.geom.horizon and not all(a.frozen for a in world.agents):
            active = [i for i, a in enumerate(world.agents) if not a.frozen]
            obs = {i: env.observe(world, i, rng_obs) for i in active}
            actions = {}
            logps = {}
            for i in active:
                g = handles[i].act(obs[i].own, obs[i].goal, obs[i].others)
                if deterministic:
                    a = g.mean.copy()
                else:
                    a = g.mean + np.exp(g.log_std) * rng_act.standard_normal(act_dim)
                actions[i] = a
                logps[i] = float(log_prob_arrays(g.mean, g.log_std, a))
            other_acts = {}
            values = {}
            for i in active:
                oa = None
                if handles[i].kind == "matrpo":
                    oa = np.stack([actions.get(j, zero_action) for j in range(n) if j != i])
                other_acts[i] = oa
                values[i] = handles[i].value(
                    obs[i].own, obs[i].goal,
                    obs[i].others if handles[i].kind != "single" else None, oa)
            world, rewards, dones = env.step(world, actions, rng_dyn)
            for i in active:
                trans[i].append(Transition(
                    observation=obs[i].own,
                    goal=obs[i].goal,
                    action=actions[i],
                    log_prob=logps[i],
                    reward=float(rewards[i]),
                    value_estimate=values[i],
                    done=bool(dones[i]),
                    other_obs=obs[i].others if n > 1 else None,
                    other_actions=other_acts[i],
                ))
            total += 1
        for i in range(n):
            if trans[i]:
                episodes[i].append(trans[i])
                lengths[i].append(len(trans[i]))
        ep += 1
    return episodes, lengths, total, ep


def run_stage(env: Env, handles, trpo_cfg: TrpoConfig, cur_cfg: CurriculumConfig,
              seed: int, stage: int, role_tag: int, iterations: int,
              on_row=None, freeze_check=None) -> list[dict]:
    """Shared decentralized update loop: one joint rollout per iteration, then
    each agent steps from its own transitions. Early-stops once the probe
    success holds above the threshold for the configured window."""
    rows = []
    probe_seed = derived_seed(seed, TAG_PROBE, stage, role_tag)
    streak = 0
    for it in range(iterations):
        episodes, lengths, _, _ = rollout(
            env, handles, trpo_cfg.batch_timesteps, seed, stage, role_tag, it)
        reports = []
        for slot, handle in enumerate(handles):
            batch = Batch.from_episodes(
                episodes[slot], handle.role, handle.actor_features,
                handle.value_features, trpo_cfg.gamma, trpo_cfg.lam)
            assert batch.agent_index == handle.role
            report = trpo_step(handle.actor, batch, trpo_cfg)
            vmse = fit_value(handle.critic, batch, trpo_cfg)
            reports.append((report, vmse))
        if freeze_check is not None:
            freeze_check()
        probe = None
        if cur_cfg.probe_every > 0 and it % cur_cfg.probe_every == 0:
            probe = evaluate(env, handles, cur_cfg.probe_episodes, probe_seed)
        for slot, handle in enumerate(handles):
            report, vmse = reports[slot]
            row = {
                "iteration": it,
                "agent": handle.role,
                "mean_episode_length": float(np.mean(lengths[slot])) if lengths[slot] else 0.0,
                "success_probe": probe.per_agent_success[slot] if probe else "",
                "joint_success_probe": probe.joint_success if probe else "",
                "kl": report.kl,
                "improvement": report.improvement,
                "backtracks": report.backtracks,
                "accepted": int(report.accepted),
                "value_mse": vmse,
            }
            rows.append(row)
            if on_row is not None:
                on_row(row)
        if probe is not None:
            if probe.joint_success >= cur_cfg.early_stop_success:
                streak += 1
            else:
                streak = 0
            if streak * max(cur_cfg.probe_every, 1) >= cur_cfg.early_stop_window:
                break
    return rows


def train_single(env_builder, role: int, trpo_cfg: TrpoConfig,
                 cur_cfg: CurriculumConfig, seed: int, on_row=None):
    """Stage 1: train one role alone against its own goal distribution."""
    env = env_builder(roles=(role,))
    handle = make_single_handle(env, role, rng_stream(seed, TAG_INIT, STAGE_SINGLE, role))
    rows = run_stage(env, [handle], trpo_cfg, cur_cfg, seed, STAGE_SINGLE,
                     role_tag=role, iterations=cur_cfg.stage1_iterations,
                     on_row=on_row)
    return handle, rows


def train_iatrpo(env_builder, singles: dict[int, PolicyHandle],
                 trpo_cfg: TrpoConfig, cur_cfg: CurriculumConfig, seed: int,
                 on_row=None):
    """Stage 2: freeze the stage-1 networks and train modifier policies for
    all agents simultaneously in the full environment."""
    env = env_builder(roles=None)
    missing = [r for r in env.roles if r not in singles]
    if missing:
        raise ValueError(f"missing stage-1 checkpoints for roles {missing}")
    handles = []
    for role in env.roles:
        rng = rng_stream(seed, TAG_INIT, STAGE_COMPOSED, role)
        handles.append(make_composed_handle(env, role, singles[role], rng,
                                            cur_cfg.modifier_sees_goal))
    fingerprints = [h.frozen_fingerprint() for h in handles]

    def check_frozen():
        now = [h.frozen_fingerprint() for h in handles]
        if now != fingerprints:
            raise AssertionError("frozen single-agent parameters changed during stage 2")

    rows = run_stage(env, handles, trpo_cfg, cur_cfg, seed, STAGE_COMPOSED,
                     role_tag=0, iterations=cur_cfg.stage2_iterations,
                     on_row=on_row, freeze_check=check_frozen)
    check_frozen()
    return {h.role: h for h in handles}, rows


def train_matrpo(env_builder, trpo_cfg: TrpoConfig, cur_cfg: CurriculumConfig,
                 seed: int, on_row=None):
    """Baseline: from-scratch simultaneous training in the full environment
    with the conflict-penalized reward and action-augmented critics."""
    env = env_builder(roles=None)
    handles = []
    for role in env.roles:
        rng = rng_stream(seed, TAG_INIT, STAGE_MATRPO, role)
        handles.append(make_matrpo_handle(env, role, rng))
    rows = run_stage(env, handles, trpo_cfg, cur_cfg, seed, STAGE_MATRPO,
                     role_tag=0, iterations=cur_cfg.stage2_iterations,
                     on_row=on_row)
    return {h.role: h for h in handles}, rows
