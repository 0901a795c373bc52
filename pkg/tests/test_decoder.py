import math

import numpy as np
import pytest

from deepssm import gradcheck
from deepssm import numeric as nm
from deepssm.decoder import (
    PAPER_LITERAL,
    DecoderParams,
    decode_step,
    integrate_pose,
    memory_members,
    rollout,
    to_numpy,
    update_memory,
)
from deepssm.encoder import init_state
from oracles import memory_members_loop

B, N, J, T1 = 2, 3, 4, 5


@pytest.fixture
def setup():
    store = nm.ParamStore(seed=1)
    params = DecoderParams.create(store, N, J, T1, max_horizon=10)
    rng = np.random.default_rng(2)
    h0 = nm.Tensor(rng.uniform(-1, 1, size=(B, N, J, T1)))
    pose = rng.normal(size=(B, J, 3))
    return store, params, h0, pose, rng


def test_decode_step_shapes(setup):
    _, params, h0, pose, _ = setup
    h_hat, v_hat = decode_step(init_state(pose, h0), 1, params)
    assert h_hat.shape == (B, N, J, T1)
    assert v_hat.shape == (B, J, 3)


def test_zero_parameters_emit_head_bias(setup):
    store, params, h0, pose, _ = setup
    for path, t in store.params.items():
        if path != "decoder.head.bias":
            store.assign(path, np.zeros(t.shape))
    _, v_hat = decode_step(init_state(pose, h0), 1, params)
    for b in range(B):
        np.testing.assert_array_equal(v_hat.data[b], params.head.bias.data.reshape(J, 3))


def test_velocity_gradient_reaches_both_paths(setup):
    _, params, h0, pose, rng = setup
    state = init_state(pose, h0, last_velocity=rng.normal(size=(B, J, 3)))
    c = nm.Tensor(rng.uniform(-1, 1, size=(B, J, 3)))

    def f():
        return nm.sum_all(nm.mul(decode_step(state, 1, params)[1], c))

    with nm.Tape() as tape:
        out = f()
    grads = tape.backward(out)
    for w in (params.hist1.weight, params.vel.weight):
        assert np.any(grads[w] != 0)
        num = gradcheck.finite_difference(lambda: f().data, w, range(0, w.data.size, 7))
        mask = ~np.isnan(num)
        assert np.any(num[mask] != 0)
        assert gradcheck.relative_error(grads[w][mask], num[mask]) <= 1e-4


def test_velocity_path_is_lighter_than_history_path(setup):
    _, params, *_ = setup
    history_convs = [params.hist1, params.hist2]
    velocity_convs = [params.vel]
    assert len(velocity_convs) < len(history_convs)


@pytest.mark.parametrize("t", range(1, 11))
def test_memory_membership_matches_rule(t):
    assert memory_members(t) == memory_members_loop(t)


def test_memory_values(setup):
    _, params, h0, _, rng = setup
    hs = {t: nm.Tensor(rng.uniform(-1, 1, size=(B, N, J, T1))) for t in range(1, 5)}
    history = []
    log = []
    f1 = update_memory(history, hs[1], h0, 1, params, log)
    assert f1 is hs[1]
    f2 = update_memory(history, hs[2], h0, 2, params, log)
    w = params.mem1.weight.data
    slope = params.slope

    def hm(blocks, kernel):
        x = nm.conv2d(nm.concat_channels(blocks), nm.Tensor(kernel), params.mem1.bias)
        return nm.leaky_relu(params.mem2(nm.leaky_relu(x, slope)), slope).data

    expected2 = hm([hs[1], nm.add(hs[2], h0)], np.concatenate([w[:, N:2 * N], w[:, :N]], axis=1))
    np.testing.assert_allclose(f2.data, expected2, rtol=0, atol=1e-13)
    f3 = update_memory(history, hs[3], h0, 3, params, log)
    assert f3 is hs[3]
    f4 = update_memory(history, hs[4], h0, 4, params, log)
    expected4 = hm([hs[1], hs[3], nm.add(hs[4], h0)],
                   np.concatenate([w[:, N:2 * N], w[:, 2 * N:3 * N], w[:, :N]], axis=1))
    np.testing.assert_allclose(f4.data, expected4, rtol=0, atol=1e-13)
    assert log == [[1, "2+h0"], [1, 3, "4+h0"]]
    assert history == [hs[1], hs[3]]


def test_memory_missing_history(setup):
    _, params, h0, _, rng = setup
    h = nm.Tensor(rng.normal(size=(B, N, J, T1)))
    with pytest.raises(nm.ContractError):
        update_memory([], h, h0, 2, params)
    with pytest.raises(nm.ContractError):
        update_memory([], h, h0, 3, params)


def test_integrate_pose_zero_velocity():
    p = nm.Tensor(np.random.default_rng(0).normal(size=(1, J, 3)))
    np.testing.assert_array_equal(integrate_pose(p, nm.Tensor(np.zeros((1, J, 3)))).data, p.data)


def test_rollout_single_step_has_no_fusion(setup):
    _, params, h0, pose, _ = setup
    state = init_state(pose, h0)
    obs = rollout(state, 1, params)
    assert len(obs) == 1 and state.memory_log == []


@pytest.mark.parametrize("horizon", [1, 2, 5, 10])
def test_rollout_memory_bookkeeping(setup, horizon):
    _, params, h0, pose, _ = setup
    state = init_state(pose, h0)
    obs = rollout(state, horizon, params)
    assert len(obs) == horizon
    assert len(state.memory_log) == horizon // 2
    assert len(state.odd_step_history) == math.ceil(horizon / 2)
    assert sum(1 for m in state.memory_log if str(m[-1]).endswith("+h0")) == horizon // 2


def test_rollout_pose_integration_loop_oracle(setup):
    _, params, h0, pose, _ = setup
    obs = rollout(init_state(pose, h0), 10, params)
    poses, vels = to_numpy(obs)
    acc = pose.copy()
    for t in range(10):
        for b in range(B):
            for j in range(J):
                for k in range(3):
                    acc[b, j, k] = acc[b, j, k] + vels[b, t, j, k]
        assert poses[:, t].tobytes() == acc.tobytes()


def test_rollout_deterministic(setup):
    _, params, h0, pose, _ = setup
    a = to_numpy(rollout(init_state(pose, h0), 6, params))
    b = to_numpy(rollout(init_state(pose, h0), 6, params))
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_paper_literal_integration_lags_one_step(setup):
    _, params, h0, pose, _ = setup
    poses, vels = to_numpy(rollout(init_state(pose, h0), 4, params, integration=PAPER_LITERAL))
    np.testing.assert_array_equal(poses[:, 0], pose)
    for t in range(1, 4):
        np.testing.assert_array_equal(poses[:, t], poses[:, t - 1] + vels[:, t - 1])


def test_horizon_beyond_maximum(setup):
    _, params, h0, pose, _ = setup
    with pytest.raises(nm.ContractError):
        rollout(init_state(pose, h0), 11, params)
