import numpy as np
import pytest

from xmpose.autodiff import Tensor
from xmpose.errors import ContractError, DimensionError
from xmpose.networks import (
    NetSpec, f_color_forward, f_depth_forward, g_map_forward, h_pose_forward, init_params,
    init_scale, load_checkpoint, save_checkpoint,
)
from xmpose.optimizer import AdamState, adam_step

SMALL = NetSpec(input_dim=16, hidden_dims=[8], feature_dim=4)


def test_zero_window_with_zero_final_layer_gives_zero_feature():
    p = init_params(SMALL, 0)
    p.D["w1"].data[:] = 0.0
    p.C["w1"].data[:] = 0.0
    assert not f_depth_forward(Tensor(np.zeros((1, 16))), p.D, SMALL).data.any()
    assert not f_color_forward(Tensor(np.zeros((1, 48))), p.C, SMALL).data.any()


def test_forwards_are_deterministic():
    x = np.random.default_rng(0).uniform(-1, 1, size=(2, 16))
    a = f_depth_forward(Tensor(x), init_params(SMALL, 5).D, SMALL).data
    b = f_depth_forward(Tensor(x), init_params(SMALL, 5).D, SMALL).data
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("stream", ["depth", "color"])
def test_lipschitz_bound_from_spectral_norms(stream):
    spec = NetSpec(input_dim=64, hidden_dims=[32, 16], feature_dim=8)
    p = init_params(spec, 3)
    coll, fwd, dim = (p.D, f_depth_forward, 64) if stream == "depth" else (p.C, f_color_forward, 192)
    L = np.prod([np.linalg.norm(coll[f"w{i}"].data, 2) for i in range(3)])
    rng = np.random.default_rng(4)
    for _ in range(20):
        x = rng.uniform(-1, 1, size=(1, dim))
        y = x.copy()
        y[0, rng.integers(dim)] += 1e-6
        diff = np.linalg.norm(fwd(Tensor(y), coll, spec).data - fwd(Tensor(x), coll, spec).data)
        assert diff <= L * 1e-6 * (1 + 1e-9)


def test_input_dim_mismatch():
    p = init_params(SMALL, 0)
    with pytest.raises(DimensionError):
        f_depth_forward(Tensor(np.zeros((1, 15))), p.D, SMALL)
    with pytest.raises(DimensionError):
        f_color_forward(Tensor(np.zeros((1, 16))), p.C, SMALL)


def test_g_with_zero_blocks_is_identity():
    p = init_params(SMALL, 1)
    p.set_identity_mapping()
    x = np.random.default_rng(2).normal(size=(3, 4))
    assert g_map_forward(Tensor(x), p.g, SMALL).data.tobytes() == x.tobytes()


def test_g_one_block_matches_hand_computation():
    spec = NetSpec(input_dim=4, hidden_dims=[2], feature_dim=2, residual_blocks_g=1)
    p = init_params(spec, 0)
    W1 = np.array([[1.0, -2.0], [0.5, 1.0]])
    W2 = np.array([[2.0, 0.0], [-1.0, 3.0]])
    p.g["w0a"].data[:] = W1
    p.g["w0b"].data[:] = W2
    x = np.array([[0.3, 0.4]])
    # row-vector convention: x + relu(x W1) W2
    expected = x + np.maximum(x @ W1, 0) @ W2
    hand = np.array([[0.3 + 0.5 * 2.0 + 0.0 * -1.0, 0.4 + 0.5 * 0.0 + 0.0 * 3.0]])
    np.testing.assert_allclose(expected, hand)
    np.testing.assert_allclose(g_map_forward(Tensor(x), p.g, spec).data, hand, atol=1e-15)
    with pytest.raises(DimensionError):
        g_map_forward(Tensor(np.zeros((1, 3))), p.g, spec)


def test_head_shapes_and_zero_weights():
    for d in (3, 17):
        obj = NetSpec(input_dim=4, hidden_dims=[4], feature_dim=d)
        hand = NetSpec(input_dim=4, hidden_dims=[4], feature_dim=d, head_mode="hand_joints", n_joints=21)
        assert h_pose_forward(Tensor(np.ones((2, d))), init_params(obj, 0).h, obj).shape == (2, 16)
        assert h_pose_forward(Tensor(np.ones((2, d))), init_params(hand, 0).h, hand).shape == (2, 63)
    p = init_params(obj, 0)
    p.h["w"].data[:] = 0.0
    assert not h_pose_forward(Tensor(np.ones((1, 17))), p.h, obj).data.any()
    with pytest.raises(ContractError):
        h_pose_forward(Tensor(np.ones((1, 17))), p.h, obj, mode="hand_joints")


def test_hand_bottleneck_rank():
    spec = NetSpec(input_dim=4, hidden_dims=[4], feature_dim=32, head_mode="hand_joints",
                   bottleneck_dim=5, n_joints=21)
    p = init_params(spec, 9)
    composed = p.h["w_bottleneck"].data @ p.h["w"].data
    assert composed.shape == (32, 63)
    assert np.linalg.matrix_rank(composed) <= 5
    # the affine map's image also lies in a 5-dim subspace
    outs = h_pose_forward(Tensor(np.random.default_rng(0).normal(size=(40, 32))), p.h, spec).data
    assert np.linalg.matrix_rank(outs - outs[0]) <= 5


def test_init_reproducible_and_scaled():
    a, b, c = init_params(SMALL, 7), init_params(SMALL, 7), init_params(SMALL, 8)
    for k, t in a.named().items():
        assert t.data.tobytes() == b.named()[k].data.tobytes()
    assert any(t.data.tobytes() != c.named()[k].data.tobytes()
               for k, t in a.named().items() if ".w" in k)
    assert not a.D["b0"].data.any()
    spec = NetSpec(input_dim=64, hidden_dims=[64], feature_dim=64)
    w = init_params(spec, 0).D["w1"].data
    target = init_scale(64, "relu") / np.sqrt(3.0)
    assert abs(w.std() - target) <= 0.2 * target


def test_invalid_netspec():
    with pytest.raises(ContractError):
        NetSpec(input_dim=0)
    with pytest.raises(ContractError):
        NetSpec(residual_blocks_g=0)


def test_every_parameter_in_exactly_one_collection():
    p = init_params(NetSpec(input_dim=9, hidden_dims=[3], feature_dim=2, head_mode="hand_joints"), 0)
    ids = [id(t) for c in ("D", "C", "g", "h") for t in p.collection(c).values()]
    assert len(ids) == len(set(ids))


def test_checkpoint_roundtrip(tmp_path):
    spec = NetSpec(input_dim=9, hidden_dims=[3], feature_dim=2, head_mode="hand_joints", n_joints=4)
    p = init_params(spec, 0)
    state = AdamState()
    named = p.named()
    adam_step(named, {k: np.ones_like(t.data) for k, t in named.items()}, state)
    path = tmp_path / "m.xmpw"
    save_checkpoint(path, p, state, {"note": "x"})
    assert path.read_bytes()[:4] == b"XMPW"
    q, s2, meta = load_checkpoint(path)
    assert q.spec == spec and meta == {"note": "x"}
    for k, t in p.named().items():
        assert t.data.tobytes() == q.named()[k].data.tobytes()
    assert s2.step_count == 1 and s2.m.keys() == state.m.keys()
    assert all(s2.v[k].tobytes() == state.v[k].tobytes() for k in state.v)
