"""Evaluation protocols: success rate, first-arrival interactiveness,
trajectory-compromise analysis, and mixed cross-seed pairings.

Evaluation rolls policies with mean actions (no exploration noise); the
environment's own action and observation noise stay on. Episodes are keyed
by (seed, episode index) so any metric is reproducible and parallelizable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs import Env

TAG_EVAL = 2
TAG_PAIRING = 7


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for a (seed, purpose...) key."""
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key)))


def derived_seed(seed: int, *key: int) -> int:
    """Stable scalar sub-seed for nested evaluation phases."""
    return int(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key)).generate_state(1)[0])


@dataclass
class EpisodeTrace:
    """Positions and outcomes of one evaluated episode."""

    positions: list[np.ndarray]      # per agent, (steps_i + 1, 2) until frozen
    outcomes: list[str]              # per agent: reached | broken | timeout
    first_arrival: int | None        # agent index, None on tie or no arrival
    goals: list[np.ndarray]
    seed: int
    episode: int
    env_id: str
    steps: list[dict] = field(default_factory=list)  # optional per-step records


def play_episode(env: Env, handles, seed: int, episode: int,
                 deterministic: bool = True, record_steps: bool = False) -> EpisodeTrace:
    """Roll one episode with mean (or sampled) actions and record positions.

    Noise streams are private per agent and keyed by role, so replaying one
    role alone from the same (seed, episode) consumes identical draws for
    that agent; the trajectory-compromise metric relies on this alignment.
    """
    if len(handles) != env.n_agents:
        raise ValueError(f"need {env.n_agents} policies, got {len(handles)}")
    rng_init = rng_stream(seed, TAG_EVAL, episode, 0)
    n = env.n_agents
    rng_own = {i: rng_stream(seed, TAG_EVAL, episode, 1, env.roles[i]) for i in range(n)}
    rng_oth = {i: rng_stream(seed, TAG_EVAL, episode, 4, env.roles[i]) for i in range(n)}
    rng_act = {i: rng_stream(seed, TAG_EVAL, episode, 2, env.roles[i]) for i in range(n)}
    rng_dyn = {i: rng_stream(seed, TAG_EVAL, episode, 3, env.roles[i]) for i in range(n)}
    world = env.sample_initial(rng_init)
    positions = [[np.array([a.x, a.y])] for a in world.agents]
    reach_step = [None] * n
    step_records = []
    while world.t < env.geom.horizon and not all(a.frozen for a in world.agents):
        active = [i for i, a in enumerate(world.agents) if not a.frozen]
        obs = {i: env.observe(world, i, rng_own[i], rng_oth[i]) for i in active}
        actions = {}
        for i in active:
            g = handles[i].act(obs[i].own, obs[i].goal, obs[i].others)
            if deterministic:
                actions[i] = g.mean
            else:
                actions[i] = g.mean + np.exp(g.log_std) * rng_act[i].standard_normal(len(g.mean))
        world, rewards, dones = env.step(world, actions, rng_dyn)
        for i in active:
            a = world.agents[i]
            positions[i].append(np.array([a.x, a.y]))
            if a.reached and reach_step[i] is None:
                reach_step[i] = world.t
        if record_steps:
            step_records.append({
                "t": world.t,
                "agents": [[a.x, a.y, a.v, a.omega, a.heading, int(a.broken), int(a.reached)]
                           for a in world.agents],
                "actions": [list(map(float, actions[i])) if i in actions else None
                            for i in range(n)],
                "rewards": [float(rewards[i]) for i in range(n)],
            })
    outcomes = []
    for a in world.agents:
        if a.reached:
            outcomes.append("reached")
        elif a.broken:
            outcomes.append("broken")
        else:
            outcomes.append("timeout")
    arrived = [(s, i) for i, s in enumerate(reach_step) if s is not None]
    first = None
    if arrived:
        best = min(s for s, _ in arrived)
        winners = [i for s, i in arrived if s == best]
        first = winners[0] if len(winners) == 1 else None
    return EpisodeTrace(positions=[np.array(p) for p in positions],
                        outcomes=outcomes, first_arrival=first,
                        goals=[g.copy() for g in world.goals],
                        seed=seed, episode=episode, env_id=env.env_id,
                        steps=step_records)


@dataclass
class EvalStats:
    joint_success: float
    per_agent_success: list[float]
    mean_episode_lengths: list[float]
    first_arrival_counts: list[int]
    n_episodes: int


def evaluate(env: Env, handles, n_episodes: int, seed: int,
             deterministic: bool = True) -> EvalStats:
    """Success and arrival statistics over seeded episodes."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    n = env.n_agents
    joint = 0
    per_agent = [0] * n
    lengths = [0.0] * n
    first_counts = [0] * n
    for ep in range(n_episodes):
        trace = play_episode(env, handles, seed, ep, deterministic)
        reached = [o == "reached" for o in trace.outcomes]
        joint += int(all(reached))
        for i in range(n):
            per_agent[i] += int(reached[i])
            lengths[i] += len(trace.positions[i]) - 1
        if trace.first_arrival is not None:
            first_counts[trace.first_arrival] += 1
    return EvalStats(
        joint_success=joint / n_episodes,
        per_agent_success=[c / n_episodes for c in per_agent],
        mean_episode_lengths=[s / n_episodes for s in lengths],
        first_arrival_counts=first_counts,
        n_episodes=n_episodes,
    )


def success_rate(env: Env, handles, n_episodes: int, seed: int) -> float:
    """Fraction of episodes in which every agent reached its goal."""
    return evaluate(env, handles, n_episodes, seed).joint_success


def first_arrival_stats(traces_by_seed: dict[int, list[EpisodeTrace]]):
    """Per-agent first-arrival share: mean and std (in %) across seed groups.

    Ties and episodes without any arrival count toward no agent, so the
    shares within one group sum to at most 100%.
    """
    if not traces_by_seed:
        raise ValueError("no trace groups")
    n_agents = None
    shares = []
    for s, traces in sorted(traces_by_seed.items()):
        if not traces:
            raise ValueError(f"empty trace group for seed {s}")
        if n_agents is None:
            n_agents = len(traces[0].positions)
        counts = [0] * n_agents
        for tr in traces:
            if tr.first_arrival is not None:
                counts[tr.first_arrival] += 1
        shares.append([100.0 * c / len(traces) for c in counts])
    shares = np.asarray(shares)
    return shares.mean(axis=0), shares.std(axis=0)


def discrete_frechet(p, q) -> float:
    """Discrete Fréchet distance between two polylines via the standard
    O(|p| |q|) dynamic program."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if len(p) == 0 or len(q) == 0:
        raise ValueError("empty point sequence")
    d = np.sqrt(((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=2))
    n, m = d.shape
    c = np.empty((n, m))
    c[0, 0] = d[0, 0]
    for j in range(1, m):
        c[0, j] = max(c[0, j - 1], d[0, j])
    for i in range(1, n):
        c[i, 0] = max(c[i - 1, 0], d[i, 0])
        row = c[i]
        prev = c[i - 1]
        for j in range(1, m):
            row[j] = max(min(prev[j], prev[j - 1], row[j - 1]), d[i, j])
    return float(c[n - 1, m - 1])


def compromise_analysis(env: Env, single_handles, composed_handles,
                        n_episodes: int, seed: int):
    """Fréchet distance between each agent's frozen single-agent replay and its
    multi-agent trajectory, from identical starts and seeds.

    Returns (mean distance per agent, compromise percentages, degenerate flag).
    When every distance is zero the split is reported as uniform with the
    flag set.
    """
    n = env.n_agents
    if len(single_handles) != n or len(composed_handles) != n:
        raise ValueError("need one single and one composed policy per agent")
    single_envs = [Env(env.env_id, env.geom, roles=(env.roles[i],),
                       own_noise=env.own_noise, other_noise=env.other_noise,
                       action_noise=env.action_noise, shaping_sign=env.shaping_sign,
                       reward_scale=env.reward_scale) for i in range(n)]
    sums = np.zeros(n)
    for ep in range(n_episodes):
        multi = play_episode(env, composed_handles, seed, ep)
        for i in range(n):
            solo = play_episode(single_envs[i], [single_handles[i]], seed, ep)
            sums[i] += discrete_frechet(multi.positions[i], solo.positions[0])
    means = sums / n_episodes
    total = means.sum()
    if total <= 0.0:
        return means, np.full(n, 100.0 / n), True
    return means, 100.0 * means / total, False


def mixed_pairing_eval(handles_by_seed: dict[int, dict[int, object]], env: Env,
                       n_pairs: int, n_episodes: int, seed: int):
    """Evaluate policies trained under different seeds against each other.

    With two roles all ordered pairs of distinct training seeds are used
    (5 seeds -> 20 pairings); with three roles ``n_pairs`` all-distinct
    triples are drawn without replacement from a seeded enumeration.
    Returns a list of (assignment tuple, success rate) plus (mean, std).
    """
    train_seeds = sorted(handles_by_seed)
    if len(train_seeds) < 2:
        raise ValueError("need at least two training seeds")
    n = env.n_agents
    assignments = []
    if n == 2:
        for a in train_seeds:
            for b in train_seeds:
                if a != b:
                    assignments.append((a, b))
        if n_pairs != len(assignments):
            assignments = assignments[:n_pairs]
    else:
        pool = [(a, b, c) for a in train_seeds for b in train_seeds for c in train_seeds
                if len({a, b, c}) == 3]
        rng = rng_stream(seed, TAG_PAIRING)
        idx = rng.choice(len(pool), size=min(n_pairs, len(pool)), replace=False)
        assignments = [pool[i] for i in sorted(idx)]
    results = []
    for k, assign in enumerate(assignments):
        handles = [handles_by_seed[assign[i]][env.roles[i]] for i in range(n)]
        rate = success_rate(env, handles, n_episodes, derived_seed(seed, TAG_PAIRING, k))
        results.append((assign, rate))
    rates = np.array([r for _, r in results])
    return results, float(rates.mean()), float(rates.std())


def convergence_iteration(rows, agent, threshold: float = 0.9):
    """First iteration whose probe success exceeds the threshold and never
    drops below it afterwards; None if that never happens."""
    probes = [(r["iteration"], r["success_probe"]) for r in rows
              if r.get("agent") == agent and r.get("success_probe") not in (None, "")]
    if not probes:
        return None
    conv = None
    for it, ps in probes:
        if float(ps) > threshold:
            if conv is None:
                conv = it
        else:
            conv = None
    return conv


@dataclass
class EvalReport:
    """Aggregated metric outputs for one evaluation invocation."""

    success_mean: float | None = None
    success_std: float | None = None
    per_seed_success: dict | None = None
    first_arrival_mean: list | None = None
    first_arrival_std: list | None = None
    frechet_means: list | None = None
    compromise_percent: list | None = None
    compromise_degenerate: bool = False
    pairing_results: list | None = None
    pairing_mean: float | None = None
    pairing_std: float | None = None
