"""Trust-region policy optimization for a single agent.

The optimizer is agnostic to how a policy computes its mean: it talks to a
policy object through a small duck-typed surface (see ``policies``):

* ``mean_batch(X)``          -> (B, act_dim) means for actor-input rows X
* ``log_std``                -> (act_dim,) trainable log-std array
* ``n_mean_params``          -> number of trainable mean parameters
* ``get_flat() / set_flat``  -> trainable vector [mean params..., log_std...]
* ``grad_mean(X, U)``        -> d(sum_b U_b . mean_b)/d(mean params), flat
* ``jvp_mean(X, v)``         -> directional derivative of means along v

Value models expose ``value_batch``, ``grad(X, U)``, ``get_flat``/``set_flat``
analogously (without a log-std block).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nnet import kl_arrays, log_prob_arrays


@dataclass
class Transition:
    """One step of one agent's experience."""

    observation: np.ndarray
    goal: np.ndarray
    action: np.ndarray
    log_prob: float
    reward: float
    value_estimate: float
    done: bool
    other_obs: np.ndarray | None = None
    other_actions: np.ndarray | None = None


@dataclass
class TrpoConfig:
    gamma: float = 0.99
    lam: float = 0.98
    max_kl: float = 0.01
    cg_iters: int = 10
    cg_damping: float = 0.1
    backtrack_steps: int = 10
    backtrack_ratio: float = 0.5
    vf_iters: int = 5
    vf_step: float = 1e-3
    batch_timesteps: int = 4096
    ent_coeff: float = 0.0
    fvp_subsample: float = 1.0

    def validate(self):
        checks = [
            ("gamma", 0.0 <= self.gamma <= 1.0),
            ("lam", 0.0 <= self.lam <= 1.0),
            ("max_kl", self.max_kl > 0.0),
            ("cg_iters", self.cg_iters >= 1),
            ("cg_damping", self.cg_damping >= 0.0),
            ("backtrack_steps", self.backtrack_steps >= 1),
            ("backtrack_ratio", 0.0 < self.backtrack_ratio < 1.0),
            ("vf_iters", self.vf_iters >= 0),
            ("vf_step", self.vf_step > 0.0),
            ("batch_timesteps", self.batch_timesteps >= 1),
            ("fvp_subsample", 0.0 < self.fvp_subsample <= 1.0),
        ]
        for name, ok in checks:
            if not ok:
                raise ValueError(f"trpo.{name} out of range: {getattr(self, name)}")


@dataclass
class StepReport:
    """Outcome of one TRPO policy update."""

    kl: float
    improvement: float
    accepted: bool
    backtracks: int
    grad_norm: float = 0.0
    step_norm: float = 0.0


def compute_gae(rewards, values, bootstrap, dones, gamma, lam):
    """GAE(gamma, lam) advantages and returns over one reward/value sequence.

    ``dones[t]`` marks transitions after which no value bootstraps; the value
    after the final transition is ``bootstrap`` (ignored when dones[-1]).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if n == 0:
        raise ValueError("empty reward sequence")
    if len(values) != n or len(dones) != n:
        raise ValueError("rewards/values/dones length mismatch")
    adv = np.zeros(n)
    last = 0.0
    next_value = float(bootstrap)
    for t in range(n - 1, -1, -1):
        nonterm = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterm - values[t]
        last = delta + gamma * lam * nonterm * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Shift to zero mean and scale to unit variance (no-op scale if degenerate)."""
    adv = np.asarray(adv, dtype=np.float64)
    centered = adv - adv.mean()
    std = centered.std()
    if std > 1e-12:
        centered = centered / std
    return centered


@dataclass
class Batch:
    """Prepared per-agent rollout data consumed by the optimizer."""

    episodes: list[list[Transition]]
    agent_index: int
    actor_inputs: np.ndarray = field(default=None, repr=False)
    value_inputs: np.ndarray = field(default=None, repr=False)
    actions: np.ndarray = field(default=None, repr=False)
    log_probs: np.ndarray = field(default=None, repr=False)
    advantages: np.ndarray = field(default=None, repr=False)
    returns: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_episodes(cls, episodes, agent_index, actor_features, value_features,
                      gamma, lam):
        """Materialize arrays: featurize transitions, run GAE per episode, normalize."""
        if not episodes or all(len(ep) == 0 for ep in episodes):
            raise ValueError("empty batch")
        episodes = [ep for ep in episodes if ep]
        adv_chunks, ret_chunks = [], []
        for ep in episodes:
            rewards = [tr.reward for tr in ep]
            values = [tr.value_estimate for tr in ep]
            dones = [tr.done for tr in ep]
            a, r = compute_gae(rewards, values, 0.0, dones, gamma, lam)
            adv_chunks.append(a)
            ret_chunks.append(r)
        flat = [tr for ep in episodes for tr in ep]
        batch = cls(
            episodes=episodes,
            agent_index=agent_index,
            actor_inputs=np.stack([actor_features(tr) for tr in flat]),
            value_inputs=np.stack([value_features(tr) for tr in flat]),
            actions=np.stack([tr.action for tr in flat]),
            log_probs=np.array([tr.log_prob for tr in flat]),
            advantages=normalize_advantages(np.concatenate(adv_chunks)),
            returns=np.concatenate(ret_chunks),
        )
        return batch

    def __len__(self):
        return len(self.log_probs)


def conjugate_gradient(matvec, b, iters=10, residual_tol=1e-10):
    """Solve A x = b for a symmetric positive-definite operator A."""
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rdotr = float(r @ r)
    if rdotr == 0.0:
        return x
    for _ in range(iters):
        ap = matvec(p)
        if not np.all(np.isfinite(ap)):
            raise FloatingPointError("non-finite matrix-vector product in CG")
        alpha = rdotr / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        new_rdotr = float(r @ r)
        if new_rdotr < residual_tol:
            break
        p = r + (new_rdotr / rdotr) * p
        rdotr = new_rdotr
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite CG solution")
    return x


def surrogate_loss(policy, batch: Batch) -> float:
    """Importance-weighted policy objective at the policy's current parameters.

    Gradient at the rollout parameters equals the vanilla policy gradient.
    Higher is better.
    """
    mean = policy.mean_batch(batch.actor_inputs)
    logp = log_prob_arrays(mean, policy.log_std, batch.actions)
    ratio = np.exp(logp - batch.log_probs)
    if not np.all(np.isfinite(ratio)):
        raise FloatingPointError("non-finite importance ratio")
    return float(np.mean(ratio * batch.advantages))


def policy_gradient(policy, batch: Batch, ent_coeff: float = 0.0) -> np.ndarray:
    """Gradient of the surrogate at the current parameters, flat over
    [mean params..., log_std...]."""
    x = batch.actor_inputs
    mean = policy.mean_batch(x)
    log_std = policy.log_std
    inv_var = np.exp(-2.0 * log_std)
    diff = batch.actions - mean
    n = len(batch)
    # d surrogate / d mean_b = A_b * (a_b - mu_b) / sigma^2 / N  (ratio == 1 here)
    u = (batch.advantages[:, None] * diff * inv_var) / n
    g_mean = policy.grad_mean(x, u)
    g_ls = np.mean(batch.advantages[:, None] * (diff * diff * inv_var - 1.0), axis=0)
    if ent_coeff != 0.0:
        g_ls = g_ls + ent_coeff  # d entropy / d log_std = 1 per dimension
    return np.concatenate([g_mean, g_ls])


def fisher_vector_product(policy, batch: Batch, v: np.ndarray, damping: float,
                          subsample: float = 1.0) -> np.ndarray:
    """(Hessian of mean KL(old || new) at old) @ v, plus damping * v.

    For a diagonal Gaussian with network mean and free log-std the exact KL
    Hessian at the expansion point is J^T diag(1/sigma^2) J averaged over
    states for the mean block and 2*I for the log-std block (cross terms
    vanish), so the product is computed from one JVP and one VJP.
    """
    v = np.asarray(v, dtype=np.float64)
    nm = policy.n_mean_params
    act_dim = policy.log_std.shape[0]
    if v.shape != (nm + act_dim,):
        raise ValueError(f"tangent has length {v.shape}, expected {nm + act_dim}")
    x = batch.actor_inputs
    if subsample < 1.0:
        stride = max(1, int(round(1.0 / subsample)))
        x = x[::stride]
    v_mean, v_ls = v[:nm], v[nm:]
    jv = policy.jvp_mean(x, v_mean)
    inv_var = np.exp(-2.0 * policy.log_std)
    hv_mean = policy.grad_mean(x, jv * inv_var / x.shape[0])
    hv_ls = 2.0 * v_ls
    return np.concatenate([hv_mean, hv_ls]) + damping * v


def mean_kl(policy, batch: Batch, old_mean: np.ndarray, old_log_std: np.ndarray) -> float:
    new_mean = policy.mean_batch(batch.actor_inputs)
    return float(np.mean(kl_arrays(old_mean, old_log_std, new_mean, policy.log_std)))


def trpo_step(policy, batch: Batch, cfg: TrpoConfig) -> StepReport:
    """One KL-constrained natural-gradient update of the policy in place.

    Computes the CG step direction, scales it to the trust-region boundary,
    then backtracks until the surrogate improves and the empirical KL stays
    within ``cfg.max_kl``. On failure the parameters are left unchanged.
    """
    g = policy_gradient(policy, batch, cfg.ent_coeff)
    grad_norm = float(np.linalg.norm(g))
    if not np.isfinite(grad_norm):
        return StepReport(kl=0.0, improvement=0.0, accepted=False, backtracks=0,
                          grad_norm=grad_norm)
    if grad_norm < 1e-12:
        return StepReport(kl=0.0, improvement=0.0, accepted=False, backtracks=0,
                          grad_norm=grad_norm)

    def fvp(v):
        return fisher_vector_product(policy, batch, v, cfg.cg_damping, cfg.fvp_subsample)

    direction = conjugate_gradient(fvp, g, cfg.cg_iters)
    shs = float(direction @ fvp(direction))
    if shs <= 0.0 or not np.isfinite(shs):
        return StepReport(kl=0.0, improvement=0.0, accepted=False, backtracks=0,
                          grad_norm=grad_norm)
    full_step = np.sqrt(2.0 * cfg.max_kl / shs) * direction

    old_flat = policy.get_flat()
    old_mean = policy.mean_batch(batch.actor_inputs)
    old_log_std = policy.log_std.copy()
    surr_before = surrogate_loss(policy, batch)

    for k in range(cfg.backtrack_steps):
        policy.set_flat(old_flat + (cfg.backtrack_ratio ** k) * full_step)
        try:
            surr = surrogate_loss(policy, batch)
        except FloatingPointError:
            continue
        kl = mean_kl(policy, batch, old_mean, old_log_std)
        improvement = surr - surr_before
        if np.isfinite(kl) and kl <= cfg.max_kl and improvement > 0.0:
            return StepReport(kl=kl, improvement=improvement, accepted=True,
                              backtracks=k, grad_norm=grad_norm,
                              step_norm=float(np.linalg.norm(
                                  (cfg.backtrack_ratio ** k) * full_step)))
    policy.set_flat(old_flat)
    return StepReport(kl=0.0, improvement=0.0, accepted=False,
                      backtracks=cfg.backtrack_steps, grad_norm=grad_norm)


def fit_value(value_model, batch: Batch, cfg: TrpoConfig) -> float:
    """Plain full-batch gradient descent on MSE against returns. Returns final MSE."""
    x = batch.value_inputs
    target = batch.returns
    n = x.shape[0]
    mse = float(np.mean((value_model.value_batch(x) - target) ** 2))
    for _ in range(cfg.vf_iters):
        pred = value_model.value_batch(x)
        resid = (pred - target)[:, None]
        grad = value_model.grad(x, 2.0 * resid / n)
        value_model.set_flat(value_model.get_flat() - cfg.vf_step * grad)
        mse = float(np.mean((value_model.value_batch(x) - target) ** 2))
    return mse
