import math

import numpy as np
import pytest

from iatrpo.nnet import MlpSpec, ParameterVector, kl_arrays, log_prob_arrays
from iatrpo.policies import NetActor, NetValue
from iatrpo.trpo import (Batch, Transition, TrpoConfig, compute_gae,
                         conjugate_gradient, fisher_vector_product, fit_value,
                         normalize_advantages, policy_gradient, surrogate_loss,
                         trpo_step)


# ---------------------------------------------------------------- GAE

def gae_oracle(rewards, values, bootstrap, dones, gamma, lam):
    """Direct evaluation of the recursive definition, independent of the
    implementation's loop."""
    n = len(rewards)
    deltas = []
    for t in range(n):
        nxt = bootstrap if t == n - 1 else values[t + 1]
        nonterm = 0.0 if dones[t] else 1.0
        deltas.append(rewards[t] + gamma * nxt * nonterm - values[t])
    adv = [0.0] * n
    for t in range(n):
        acc = 0.0
        coef = 1.0
        for k in range(t, n):
            acc += coef * deltas[k]
            if dones[k]:
                break
            coef *= gamma * lam
        adv[t] = acc
    return np.array(adv), np.array(adv) + np.array(values)


def test_gae_undiscounted_sum():
    adv, ret = compute_gae([1, 1, 1], [0, 0, 0], 0.0, [False, False, True], 1.0, 1.0)
    assert np.allclose(adv, [3, 2, 1])
    assert np.allclose(ret, [3, 2, 1])


def test_gae_gamma_zero_is_one_step():
    rewards = [0.5, -1.0, 2.0]
    values = [0.1, 0.2, 0.3]
    adv, _ = compute_gae(rewards, values, 0.0, [False, False, True], 0.0, 0.9)
    assert np.allclose(adv, np.array(rewards) - np.array(values))


def test_gae_derived_example_matches_oracle():
    rewards = [1.0, 0.0, 2.0]
    values = [0.5, 0.5, 0.5]
    dones = [False, False, True]
    adv, ret = compute_gae(rewards, values, 0.0, dones, 0.9, 0.95)
    o_adv, o_ret = gae_oracle(rewards, values, 0.0, dones, 0.9, 0.95)
    assert np.allclose(adv, o_adv, atol=1e-12)
    assert np.allclose(ret, o_ret, atol=1e-12)
    # frozen values from the oracle
    assert adv == pytest.approx([2.0037875, 1.2325, 1.5], abs=1e-9)


def test_gae_random_episodes_match_oracle():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(1, 21))
        rewards = rng.standard_normal(n)
        values = rng.standard_normal(n)
        dones = rng.random(n) < 0.2
        dones[-1] = bool(rng.random() < 0.7)
        bootstrap = float(rng.standard_normal()) if not dones[-1] else 0.0
        gamma, lam = rng.uniform(0, 1), rng.uniform(0, 1)
        adv, ret = compute_gae(rewards, values, bootstrap, dones, gamma, lam)
        o_adv, o_ret = gae_oracle(rewards, values, bootstrap, dones, gamma, lam)
        assert np.allclose(adv, o_adv, atol=1e-10)
        assert np.allclose(ret, o_ret, atol=1e-10)


def test_gae_lambda_one_equals_discounted_mc_minus_values():
    rng = np.random.default_rng(8)
    gamma = 0.97
    for _ in range(30):
        n = int(rng.integers(1, 21))
        rewards = rng.standard_normal(n)
        values = rng.standard_normal(n)
        dones = np.zeros(n, dtype=bool)
        dones[-1] = True
        adv, _ = compute_gae(rewards, values, 0.0, dones, gamma, 1.0)
        mc = np.array([sum(gamma ** (k - t) * rewards[k] for k in range(t, n))
                       for t in range(n)])
        assert np.allclose(adv, mc - values, atol=1e-10)


def test_gae_rejects_empty():
    with pytest.raises(ValueError):
        compute_gae([], [], 0.0, [], 0.9, 0.9)


def test_advantage_normalization_properties():
    rng = np.random.default_rng(10)
    adv = normalize_advantages(rng.standard_normal(257) * 5 + 3)
    assert abs(adv.mean()) <= 1e-10
    assert abs(adv.std() - 1.0) <= 1e-6
    zeros = normalize_advantages(np.zeros(8))
    assert np.all(zeros == 0.0)


# ---------------------------------------------------------------- CG

def test_cg_identity_one_iteration():
    b = np.array([1.0, -2.0, 3.0])
    x = conjugate_gradient(lambda v: v, b, iters=1)
    assert np.allclose(x, b, atol=1e-12)


def test_cg_zero_rhs():
    x = conjugate_gradient(lambda v: 2 * v, np.zeros(4), iters=5)
    assert np.all(x == 0.0)


def test_cg_2x2_matches_direct_solve():
    a = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    x = conjugate_gradient(lambda v: a @ v, b, iters=10)
    direct = np.linalg.solve(a, b)  # [1/11, 7/11]
    assert np.allclose(direct, [0.0909090909, 0.6363636364], atol=1e-9)
    assert np.allclose(x, direct, atol=1e-10)


def test_cg_random_spd_systems():
    rng = np.random.default_rng(12)
    for _ in range(20):
        n = int(rng.integers(2, 51))
        m = rng.standard_normal((n, n))
        a = m @ m.T + n * np.eye(n)
        b = rng.standard_normal(n)
        x = conjugate_gradient(lambda v: a @ v, b, iters=n, residual_tol=1e-20)
        assert np.linalg.norm(a @ x - b) <= 1e-8 * max(1.0, np.linalg.norm(b))
        assert np.allclose(x, np.linalg.solve(a, b), atol=1e-6)


# ---------------------------------------------------------------- policy fixtures

def tiny_actor(seed=0, input_dim=2, hidden=(3,), act_dim=2):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(input_dim, act_dim, hidden)
    pv = ParameterVector(spec, rng.uniform(-0.8, 0.8, spec.n_params()),
                         extra=rng.uniform(-0.3, 0.3, act_dim))
    return NetActor(pv)


def make_batch(policy, seed=1, n=64, input_dim=2):
    """Simulated one-episode batch sampled from the given policy."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-1, 1, (n, input_dim))
    means = policy.mean_batch(xs)
    actions = means + np.exp(policy.log_std) * rng.standard_normal(means.shape)
    logps = log_prob_arrays(means, policy.log_std, actions)
    rewards = rng.standard_normal(n)
    values = rng.standard_normal(n)
    dones = np.zeros(n, dtype=bool)
    dones[-1] = True
    trans = [Transition(observation=xs[i], goal=np.zeros(0), action=actions[i],
                        log_prob=float(logps[i]), reward=float(rewards[i]),
                        value_estimate=float(values[i]), done=bool(dones[i]))
             for i in range(n)]
    return Batch.from_episodes([trans], 0, lambda tr: tr.observation,
                               lambda tr: tr.observation, 0.99, 0.95)


def test_surrogate_at_old_params_is_mean_advantage():
    policy = tiny_actor()
    batch = make_batch(policy)
    assert surrogate_loss(policy, batch) == pytest.approx(float(batch.advantages.mean()), abs=1e-12)
    assert surrogate_loss(policy, batch) == pytest.approx(0.0, abs=1e-10)


def test_surrogate_zero_advantages_zero_loss_and_grad():
    policy = tiny_actor()
    batch = make_batch(policy)
    batch.advantages = np.zeros_like(batch.advantages)
    assert surrogate_loss(policy, batch) == 0.0
    g = policy_gradient(policy, batch)
    assert np.all(g == 0.0)


def test_policy_gradient_matches_score_function_oracle():
    policy = tiny_actor(seed=3)
    batch = make_batch(policy, seed=4, n=32)
    analytic = policy_gradient(policy, batch)
    # oracle: mean_b A_b * d log pi(a_b | x_b) / d theta by central differences
    flat0 = policy.get_flat()
    eps = 1e-6

    def mean_weighted_logp(flat):
        policy.set_flat(flat)
        means = policy.mean_batch(batch.actor_inputs)
        logps = log_prob_arrays(means, policy.log_std, batch.actions)
        policy.set_flat(flat0)
        return float(np.mean(batch.advantages * logps))

    fd = np.zeros_like(flat0)
    for i in range(len(flat0)):
        up = flat0.copy()
        up[i] += eps
        dn = flat0.copy()
        dn[i] -= eps
        fd[i] = (mean_weighted_logp(up) - mean_weighted_logp(dn)) / (2 * eps)
    assert np.allclose(analytic, fd, atol=1e-6)


# ---------------------------------------------------------------- FVP

def mean_kl_at(policy, batch, flat, old_mean, old_ls):
    flat0 = policy.get_flat()
    policy.set_flat(flat)
    val = float(np.mean(kl_arrays(old_mean, old_ls,
                                  policy.mean_batch(batch.actor_inputs),
                                  policy.log_std)))
    policy.set_flat(flat0)
    return val


def kl_grad_fd(policy, batch, flat, old_mean, old_ls, eps=1e-5):
    g = np.zeros_like(flat)
    for i in range(len(flat)):
        up = flat.copy()
        up[i] += eps
        dn = flat.copy()
        dn[i] -= eps
        g[i] = (mean_kl_at(policy, batch, up, old_mean, old_ls)
                - mean_kl_at(policy, batch, dn, old_mean, old_ls)) / (2 * eps)
    return g


def test_fvp_zero_vector():
    policy = tiny_actor()
    batch = make_batch(policy)
    n = policy.n_mean_params + 2
    out = fisher_vector_product(policy, batch, np.zeros(n), damping=0.1)
    assert np.all(out == 0.0)


def test_fvp_damping_linearity():
    policy = tiny_actor(seed=5)
    batch = make_batch(policy, seed=6)
    rng = np.random.default_rng(7)
    v = rng.standard_normal(policy.n_mean_params + 2)
    with_d = fisher_vector_product(policy, batch, v, damping=0.37)
    without = fisher_vector_product(policy, batch, v, damping=0.0)
    assert np.allclose(with_d - without, 0.37 * v, atol=1e-12)


def test_fvp_linearity_in_v():
    policy = tiny_actor(seed=15)
    batch = make_batch(policy, seed=16)
    rng = np.random.default_rng(17)
    n = policy.n_mean_params + 2
    u, v = rng.standard_normal(n), rng.standard_normal(n)
    a, b = 0.7, -1.3

    def fvp(w):
        return fisher_vector_product(policy, batch, w, damping=0.05)

    assert np.allclose(fvp(a * u + b * v), a * fvp(u) + b * fvp(v), atol=1e-9)


def test_fvp_matches_finite_difference_hessian_vector_product():
    # tiny network so the full FD Hessian-vector product is affordable
    policy = tiny_actor(seed=23, input_dim=1, hidden=(2,), act_dim=1)
    batch = make_batch(policy, seed=24, n=16, input_dim=1)
    flat0 = policy.get_flat()
    old_mean = policy.mean_batch(batch.actor_inputs)
    old_ls = policy.log_std.copy()
    rng = np.random.default_rng(25)
    for _ in range(5):
        v = rng.standard_normal(len(flat0))
        hv = fisher_vector_product(policy, batch, v, damping=0.0)
        eps = 1e-4
        gp = kl_grad_fd(policy, batch, flat0 + eps * v, old_mean, old_ls)
        gm = kl_grad_fd(policy, batch, flat0 - eps * v, old_mean, old_ls)
        fd_hv = (gp - gm) / (2 * eps)
        assert np.linalg.norm(hv - fd_hv) / max(np.linalg.norm(fd_hv), 1e-8) < 1e-3


# ---------------------------------------------------------------- trpo_step

def test_trpo_step_zero_gradient_leaves_params():
    policy = tiny_actor(seed=30)
    batch = make_batch(policy, seed=31)
    batch.advantages = np.zeros_like(batch.advantages)
    before = policy.get_flat()
    report = trpo_step(policy, batch, TrpoConfig())
    assert not report.accepted
    assert np.array_equal(policy.get_flat(), before)


def test_trpo_step_accepted_respects_kl_constraint():
    cfg = TrpoConfig(max_kl=0.01)
    for seed in range(5):
        policy = tiny_actor(seed=40 + seed)
        batch = make_batch(policy, seed=50 + seed)
        report = trpo_step(policy, batch, cfg)
        if report.accepted:
            assert report.kl <= cfg.max_kl + 1e-6
            assert report.improvement > 0.0


def test_trpo_step_bandit_mean_increases_monotonically():
    # maximize E[a] with a Gaussian policy: the sign of the gradient on the
    # mean is positive, so every accepted step must raise the mean action
    spec = MlpSpec(1, 1, (1,))
    pv = ParameterVector(spec, np.array([1.0, 0.5, 1.0, 0.0]), extra=np.zeros(1))
    policy = NetActor(pv)
    cfg = TrpoConfig(max_kl=0.05, cg_iters=10)
    x = np.ones((256, 1))
    rng = np.random.default_rng(60)
    means = []
    for it in range(8):
        mean = policy.mean_batch(x)
        actions = mean + np.exp(policy.log_std) * rng.standard_normal(mean.shape)
        logps = log_prob_arrays(mean, policy.log_std, actions)
        trans = [Transition(observation=x[i], goal=np.zeros(0), action=actions[i],
                            log_prob=float(logps[i]), reward=float(actions[i][0]),
                            value_estimate=0.0, done=(i == 255))
                 for i in range(256)]
        batch = Batch.from_episodes([trans], 0, lambda tr: tr.observation,
                                    lambda tr: tr.observation, 1.0, 1.0)
        # bandit: the advantage of an arm is its own payoff
        batch.advantages = normalize_advantages(actions[:, 0])
        means.append(float(policy.mean_batch(np.ones((1, 1)))[0, 0]))
        report = trpo_step(policy, batch, cfg)
        assert report.accepted
    means.append(float(policy.mean_batch(np.ones((1, 1)))[0, 0]))
    assert all(b > a for a, b in zip(means, means[1:]))


# ---------------------------------------------------------------- fit_value

def test_fit_value_constant_target_reduces_mse():
    rng = np.random.default_rng(70)
    spec = MlpSpec(2, 1, (8,))
    value = NetValue(ParameterVector(spec, rng.uniform(-0.5, 0.5, spec.n_params())))
    batch = make_batch(tiny_actor(seed=71), seed=72)
    batch.returns = np.full(len(batch), 1.7)
    before = float(np.mean((value.value_batch(batch.value_inputs) - batch.returns) ** 2))
    after = fit_value(value, batch, TrpoConfig(vf_iters=50, vf_step=0.05))
    assert after < before


def test_fit_value_zero_step_leaves_params():
    rng = np.random.default_rng(73)
    spec = MlpSpec(2, 1, (4,))
    value = NetValue(ParameterVector(spec, rng.standard_normal(spec.n_params())))
    before = value.get_flat()
    batch = make_batch(tiny_actor(seed=74), seed=75)
    fit_value(value, batch, TrpoConfig(vf_iters=10, vf_step=0.0))
    assert np.array_equal(value.get_flat(), before)


def test_fit_value_linear_regression_reaches_lstsq_floor():
    # inputs in the positive orthant with a large hidden bias keep every ReLU
    # active, so the model is affine and the least-squares fit is attainable
    rng = np.random.default_rng(76)
    n = 64
    xs = rng.uniform(0.1, 1.0, (n, 2))
    target = 0.3 * xs[:, 0] - 0.2 * xs[:, 1] + 0.1
    design = np.column_stack([xs, np.ones(n)])
    resid = np.linalg.lstsq(design, target, rcond=None)[1]
    assert float(resid[0]) if len(resid) else 0.0 <= 1e-12  # oracle: exactly representable

    spec = MlpSpec(2, 1, (4,))
    pv = ParameterVector(spec, rng.uniform(-0.5, 0.5, spec.n_params()))
    (w1, b1), (w2, b2) = pv.layers()
    b1 += 1.0  # keep pre-activations positive over the input box
    value = NetValue(pv)
    trans = [Transition(observation=xs[i], goal=np.zeros(0), action=np.zeros(1),
                        log_prob=0.0, reward=0.0, value_estimate=0.0,
                        done=(i == n - 1)) for i in range(n)]
    batch = Batch.from_episodes([trans], 0, lambda tr: tr.observation,
                                lambda tr: tr.observation, 0.99, 0.95)
    batch.returns = target
    mse = fit_value(value, batch, TrpoConfig(vf_iters=10000, vf_step=0.1))
    assert mse < 1e-3


# ---------------------------------------------------------------- batch prep

def test_batch_respects_episode_boundaries():
    policy = tiny_actor(seed=80)
    rng = np.random.default_rng(81)

    def episode(n, seed):
        xs = rng.uniform(-1, 1, (n, 2))
        means = policy.mean_batch(xs)
        actions = means
        logps = log_prob_arrays(means, policy.log_std, actions)
        return [Transition(observation=xs[i], goal=np.zeros(0), action=actions[i],
                           log_prob=float(logps[i]), reward=float(rng.standard_normal()),
                           value_estimate=float(rng.standard_normal()),
                           done=(i == n - 1)) for i in range(n)]

    eps = [episode(5, 0), episode(7, 1)]
    batch = Batch.from_episodes(eps, 0, lambda tr: tr.observation,
                                lambda tr: tr.observation, 0.9, 0.9)
    # per-episode GAE then concat, then normalization: recompute independently
    chunks = []
    for ep in eps:
        a, _ = gae_oracle([t.reward for t in ep], [t.value_estimate for t in ep],
                          0.0, [t.done for t in ep], 0.9, 0.9)
        chunks.append(a)
    expected = normalize_advantages(np.concatenate(chunks))
    assert np.allclose(batch.advantages, expected, atol=1e-10)


def test_batch_rejects_empty():
    with pytest.raises(ValueError):
        Batch.from_episodes([], 0, lambda tr: tr.observation,
                            lambda tr: tr.observation, 0.9, 0.9)
