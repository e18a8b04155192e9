import numpy as np
import pytest

from iatrpo.envs import Env
from iatrpo.policies import (act_composed, act_matrpo, act_single,
                             make_composed_handle, make_matrpo_handle,
                             make_single_handle, value_matrpo)

OWN = np.array([1.0, 2.0, 0.1, 0.0, 0.3, 0.0, 0.0])
GOAL = np.array([7.5, 2.5])


def rng(seed=0):
    return np.random.default_rng(seed)


def others(k=1):
    return np.tile(np.array([3.0, 1.0, 0.2, -0.1, 0.05]), (k, 1))


def test_single_zero_weights_zero_mean():
    env = Env("c2_fixed", roles=(0,))
    handle = make_single_handle(env, 0, rng(1))
    handle.actor.params.values[:] = 0.0
    g = act_single(handle, OWN, GOAL)
    assert np.all(g.mean == 0.0)


def test_single_actor_input_dim_is_obs_plus_goal():
    env = Env("c2_fixed", roles=(0,))
    handle = make_single_handle(env, 0, rng(2))
    assert handle.actor.params.spec.input_dim == 7 + 2


def test_single_deterministic_mean():
    env = Env("c2_fixed", roles=(0,))
    handle = make_single_handle(env, 0, rng(3))
    a = act_single(handle, OWN, GOAL)
    b = act_single(handle, OWN, GOAL)
    assert np.array_equal(a.mean, b.mean)
    assert np.array_equal(a.log_std, b.log_std)


def test_act_single_rejects_wrong_kind():
    env = Env("c2_fixed")
    handle = make_matrpo_handle(env, 0, rng(4))
    with pytest.raises(ValueError):
        act_single(handle, OWN, GOAL)


def test_composed_zero_modifier_equals_frozen_single():
    env_solo = Env("c2_fixed", roles=(0,))
    env = Env("c2_fixed")
    single = make_single_handle(env_solo, 0, rng(5))
    composed = make_composed_handle(env, 0, single, rng(6))
    composed.actor.modifier.values[:] = 0.0
    single_mean = act_single(single, OWN, GOAL).mean
    composed_mean = act_composed(composed, OWN, GOAL, others()).mean
    assert np.array_equal(single_mean, composed_mean)


def test_composed_zero_final_layer_is_exact_identity():
    env_solo = Env("c2_fixed", roles=(0,))
    env = Env("c2_fixed")
    single = make_single_handle(env_solo, 0, rng(7))
    composed = make_composed_handle(env, 0, single, rng(8))
    w, b = composed.actor.modifier.layers()[-1]
    w[:] = 0.0
    b[:] = 0.0
    single_mean = act_single(single, OWN, GOAL).mean
    composed_mean = act_composed(composed, OWN, GOAL, others()).mean
    assert np.array_equal(single_mean, composed_mean)


def test_composed_is_sum_of_module_outputs():
    from iatrpo.nnet import mlp_forward
    env_solo = Env("c2_fixed", roles=(0,))
    env = Env("c2_fixed")
    single = make_single_handle(env_solo, 0, rng(9))
    composed = make_composed_handle(env, 0, single, rng(10))
    row = composed.actor_features_raw(OWN, GOAL, others())
    frozen_part = mlp_forward(composed.frozen_actor, row[:9])
    mod_part = mlp_forward(composed.actor.modifier, np.concatenate([row[:7], row[9:]]))
    total = act_composed(composed, OWN, GOAL, others()).mean
    assert np.allclose(total, frozen_part + mod_part, atol=0.0)


def test_composed_update_never_touches_frozen_params():
    env_solo = Env("c2_fixed", roles=(0,))
    env = Env("c2_fixed")
    single = make_single_handle(env_solo, 0, rng(11))
    composed = make_composed_handle(env, 0, single, rng(12))
    before = composed.frozen_actor.values.copy()
    fingerprint = composed.frozen_fingerprint()
    flat = composed.actor.get_flat()
    composed.actor.set_flat(flat + 1.0)
    composed.critic.set_flat(composed.critic.get_flat() - 2.0)
    assert np.array_equal(composed.frozen_actor.values, before)
    assert composed.frozen_fingerprint() == fingerprint


def test_composed_requires_other_obs():
    env_solo = Env("c2_fixed", roles=(0,))
    env = Env("c2_fixed")
    single = make_single_handle(env_solo, 0, rng(13))
    composed = make_composed_handle(env, 0, single, rng(14))
    with pytest.raises(ValueError):
        composed.act(OWN, GOAL, None)


def test_composed_log_std_starts_from_single():
    env_solo = Env("c2_fixed", roles=(0,))
    env = Env("c2_fixed")
    single = make_single_handle(env_solo, 0, rng(15))
    single.actor.params.extra[:] = [-0.3, 0.2]
    composed = make_composed_handle(env, 0, single, rng(16))
    assert np.array_equal(composed.actor.log_std, [-0.3, 0.2])
    composed.actor.log_std[:] = 0.9  # trainable copy, not a view
    assert np.array_equal(single.actor.params.extra, [-0.3, 0.2])


def test_matrpo_critic_input_dim_adds_other_actions():
    env3 = Env("r3")
    handle = make_matrpo_handle(env3, 1, rng(17))
    actor_dim = handle.actor.params.spec.input_dim
    critic_dim = handle.critic.params.spec.input_dim
    assert actor_dim == 7 + 2 + 2 * 5
    assert critic_dim == actor_dim + 2 * 2


def test_matrpo_rejects_no_others():
    env_solo = Env("c2_fixed", roles=(0,))
    with pytest.raises(ValueError):
        make_matrpo_handle(env_solo, 0, rng(18))


def test_matrpo_value_requires_other_actions():
    env = Env("c2_fixed")
    handle = make_matrpo_handle(env, 0, rng(19))
    with pytest.raises(ValueError):
        value_matrpo(handle, OWN, GOAL, others(), None)
    v = value_matrpo(handle, OWN, GOAL, others(), np.zeros((1, 2)))
    assert np.isfinite(v)
    g = act_matrpo(handle, OWN, GOAL, others())
    g2 = act_matrpo(handle, OWN, GOAL, others())
    assert np.array_equal(g.mean, g2.mean)
