import math

import numpy as np
import pytest

from conftest import model_fd_check
from modelsplit.nn import (ALEXNET_SCHEDULE, LrSchedule, ModelSpec, NonFiniteError, OptimizerState, ParamStore,
                           PartitionSpec, SpecError, StaleActivationsError, backward, build_overparam,
                           count_parameters, dense, evaluate_loss, forward, halve_schedule, init_params, lr_at, mlp,
                           partition_mask, reinitialize, relu, residual_block, scale_widths, sgd_step,
                           softmax_xent, transfer_params)
from modelsplit.nn.layers import conv2d, flatten
from modelsplit.nn import zoo
from modelsplit.runs import Dataset, TaskData, TrainConfig
from modelsplit.splitproto.monolithic import run_training
from modelsplit.tensor import STREAM_INIT, RngStream


def single(layer, shape):
    return ModelSpec((layer,), shape)


# ---- counting ----------------------------------------------------------------

@pytest.mark.parametrize("layer,shape,expect", [
    (conv2d("c", 3, 96, 11), (11, 11, 3), 34_944),
    (dense("d", 4096, 4096), (4096,), 16_781_312),
    (conv2d("c", 4, 32, 8, stride=4, bias=False), (80, 80, 4), 8_192),
    (dense("v", 512, 1, bias=False), (512,), 512),
])
def test_layer_counts(layer, shape, expect):
    assert count_parameters(single(layer, shape))[1] == expect


def test_residual_block_counts_both_convs():
    blk = residual_block("r", 8, kernel=3)
    assert blk.count() == 2 * (3 * 3 * 8 * 8 + 8)
    assert count_parameters(ModelSpec((blk,), (5, 5, 8)))[1] == blk.count()


def test_activation_layers_have_no_parameters():
    per, _ = count_parameters(mlp([4, 3], 2))
    assert per["relu1"] == 0 and per["xent"] == 0


def test_segments_match_counts():
    for model in (zoo.toy_mlp(), zoo.gridworld_net(), mlp([5, 7, 7], 3)):
        store = ParamStore.for_model(model)
        per, total = count_parameters(model)
        assert len(store) == total
        for name, seg in store.segments.items():
            assert seg.length == per[name]


def test_spec_roundtrip_and_strictness():
    m = zoo.gridworld_net()
    assert ModelSpec.from_dict(m.to_dict()) == m
    d = m.to_dict()
    d["layers"][0]["colour"] = "red"
    with pytest.raises((SpecError, TypeError, KeyError)):
        ModelSpec.from_dict(d)


def test_shape_chain_mismatch_rejected():
    with pytest.raises(SpecError):
        ModelSpec((dense("a", 4, 3), dense("b", 5, 2), softmax_xent()), (4,))


# ---- forward -----------------------------------------------------------------

def test_identity_dense_passes_input_through():
    m = single(dense("d", 3, 3), (3,))
    p = ParamStore.for_model(m)
    t = p.tensors(m, "d")
    t["w"][...] = np.eye(3)
    x = RngStream(0).generator().normal(size=(4, 3))
    assert np.array_equal(forward(m, p, x).output, x)


def test_uniform_logits_give_ln_k():
    m = ModelSpec((dense("d", 2, 10), softmax_xent()), (2,))
    p = ParamStore.for_model(m)
    loss = evaluate_loss(m, p, np.ones((3, 2)), np.array([0, 4, 9]))
    assert loss == pytest.approx(math.log(10), abs=1e-12)


def test_zero_residual_block_is_identity():
    m = single(residual_block("r", 4), (5, 5, 4))
    p = ParamStore.for_model(m)
    x = RngStream(1).generator().normal(size=(2, 5, 5, 4))
    assert np.array_equal(forward(m, p, x).output, x)


# ---- backward ------------------------------------------------------------------

def test_two_layer_net_matches_finite_differences():
    m = mlp([4, 5], 3)
    p = init_params(m, RngStream(3, STREAM_INIT))
    g = RngStream(3).generator()
    x, y = g.normal(size=(6, 4)), g.integers(3, size=6)
    assert model_fd_check(m, p, x, y).max() < 1e-6


def test_conv_and_residual_net_match_finite_differences():
    m = ModelSpec((conv2d("c1", 2, 3, 3, stride=2, padding=1), relu("r1"), residual_block("res", 3),
                   flatten("f"), dense("out", 3 * 3 * 3, 4), softmax_xent()), (5, 5, 2))
    p = init_params(m, RngStream(4, STREAM_INIT))
    g = RngStream(4).generator()
    x, y = g.normal(size=(3, 5, 5, 2)), g.integers(4, size=3)
    assert model_fd_check(m, p, x, y).max() < 1e-6


def test_perfect_prediction_has_vanishing_gradient():
    m = ModelSpec((dense("d", 3, 3, bias=False), softmax_xent()), (3,))
    p = ParamStore.for_model(m)
    p.tensors(m, "d")["w"][...] = 200.0 * np.eye(3)
    x = np.eye(3)
    fwd = forward(m, p, x, np.arange(3))
    assert np.linalg.norm(backward(m, p, fwd).data) < 1e-8


def test_duplicated_batch_gives_same_mean_gradient():
    m = mlp([3, 4], 2)
    p = init_params(m, RngStream(5, STREAM_INIT))
    g = RngStream(5).generator()
    x, y = g.normal(size=(4, 3)), g.integers(2, size=4)
    g1 = backward(m, p, forward(m, p, x, y)).data
    g2 = backward(m, p, forward(m, p, np.repeat(x, 2, axis=0), np.repeat(y, 2))).data
    np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-15)


def test_stale_activations_rejected():
    m = mlp([3, 4], 2)
    p = init_params(m, RngStream(6, STREAM_INIT))
    fwd = forward(m, p, np.ones((2, 3)), np.array([0, 1]))
    with pytest.raises(StaleActivationsError):
        backward(m, p.copy(), fwd)


# ---- optimizer and schedules ------------------------------------------------------

def _one(value):
    m = single(dense("d", 1, 1, bias=False), (1,))
    return ParamStore.for_model(m).with_data(np.array([value]))


def test_plain_sgd_step():
    p, g = _one(1.0), _one(0.5)
    new, _ = sgd_step(p, g, OptimizerState.zeros(p, 0.0, 0.0), 0.1)
    assert new.data[0] == pytest.approx(0.95)


def test_momentum_two_steps():
    p, g = _one(0.0), _one(1.0)
    st = OptimizerState.zeros(p, 0.9, 0.0)
    p, st = sgd_step(p, g, st, 1.0)
    assert p.data[0] == pytest.approx(-1.0)
    p, st = sgd_step(p, g, st, 1.0)
    assert p.data[0] == pytest.approx(-2.9)


def test_zero_gradient_no_decay_leaves_params():
    p = _one(3.0)
    new, _ = sgd_step(p, _one(0.0), OptimizerState.zeros(p, 0.9, 0.0), 0.5)
    assert new.data[0] == 3.0


def test_non_finite_gradient_aborts():
    p = _one(1.0)
    with pytest.raises(NonFiniteError):
        sgd_step(p, _one(float("nan")), OptimizerState.zeros(p), 0.1)


def test_frozen_coordinates_untouched():
    m = mlp([3, 4], 2)
    p = init_params(m, RngStream(7, STREAM_INIT))
    grads = p.with_data(np.ones_like(p.data))
    mask = np.zeros(len(p), dtype=bool)
    mask[::2] = True
    new, st = sgd_step(p, grads, OptimizerState.zeros(p), 0.1, trainable=mask)
    assert np.array_equal(new.data[~mask], p.data[~mask])
    assert np.all(new.data[mask] != p.data[mask])
    assert np.all(st.velocity[~mask] == 0)


def test_alexnet_schedule():
    s = ALEXNET_SCHEDULE
    assert lr_at(s, 0) == 5e-2
    assert lr_at(s, 59_999) == 5e-2
    assert lr_at(s, 60_000) == 5e-3
    assert lr_at(s, 200_000) == 5e-5


def test_halved_schedule():
    h = halve_schedule(ALEXNET_SCHEDULE)
    assert h.entries[:3] == ((0, 5e-2), (30_000, 5e-3), (45_000, 5e-4))
    assert halve_schedule(LrSchedule.constant(0.1)).entries == ((0, 0.1),)
    twice = halve_schedule(h)
    assert twice.entries[1][0] == 15_000 and twice != h


@pytest.mark.parametrize("entries", [((1, 0.1),), ((0, 0.1), (0, 0.2)), ((0, -0.1),), ()])
def test_invalid_schedules(entries):
    with pytest.raises(ValueError):
        LrSchedule(entries)


# ---- partitions and reinitialization -----------------------------------------------

def test_empty_vertical_partition_is_identity():
    m = mlp([4, 6, 6], 3)
    p = init_params(m, RngStream(8, STREAM_INIT))
    out = reinitialize(m, p, PartitionSpec.vertical(), None, RngStream(1))
    assert out.data.tobytes() == p.data.tobytes()


def test_reset_all_layers_equals_fresh_init():
    m = mlp([4, 6, 6], 3)
    p = init_params(m, RngStream(8, STREAM_INIT))
    names = [m.layers[i].name for i in m.parametric_indices()]
    out = reinitialize(m, p, PartitionSpec.vertical(*names), None, RngStream(2))
    assert np.array_equal(out.data, init_params(m, RngStream(2)).data)


def test_vertical_reinit_conserves_other_layers():
    m = mlp([4, 6, 6], 3)
    p = init_params(m, RngStream(9, STREAM_INIT))
    out = reinitialize(m, p, PartitionSpec.vertical("fc2"), None, RngStream(3))
    for n in ("fc1", "fc3"):
        assert out.segment(n).tobytes() == p.segment(n).tobytes()
    assert not np.array_equal(out.tensors(m, "fc2")["w"], p.tensors(m, "fc2")["w"])
    assert np.all(out.tensors(m, "fc2")["b"] == 0)


def test_horizontal_half_of_ten_parameters():
    m = ModelSpec((dense("d", 3, 2, bias=True), dense("e", 2, 2), softmax_xent()), (3,))
    assert m.layer("d").count() == 8
    m = ModelSpec((dense("d", 4, 2, bias=True), dense("e", 2, 2), softmax_xent()), (4,))
    assert m.layer("d").count() == 10
    p = ParamStore.for_model(m).with_data(np.full(16, 7.0))
    out = reinitialize(m, p, PartitionSpec.horizontal(0.5, mask_seed=3, layers=("d",)), "msra", RngStream(4))
    d_old, d_new = p.segment("d"), out.segment("d")
    assert int(np.sum(d_old != d_new)) == 5
    assert out.segment("e").tobytes() == p.segment("e").tobytes()


def test_horizontal_mask_fixed_by_seed():
    m = mlp([4, 6], 3)
    p = ParamStore.for_model(m)
    part = PartitionSpec.horizontal(0.3, mask_seed=11)
    assert np.array_equal(partition_mask(m, p, part), partition_mask(m, p, part))
    other = PartitionSpec.horizontal(0.3, mask_seed=12)
    assert not np.array_equal(partition_mask(m, p, part), partition_mask(m, p, other))


def test_unknown_layer_in_partition():
    m = mlp([4, 6], 3)
    with pytest.raises(KeyError):
        reinitialize(m, ParamStore.for_model(m), PartitionSpec.vertical("nope"), None, RngStream(0))


@pytest.mark.parametrize("bad", [0.0, 1.5, -0.2])
def test_fraction_bounds(bad):
    with pytest.raises(ValueError):
        PartitionSpec.horizontal(bad)


# ---- overparametrization ------------------------------------------------------------

def test_width_factor_one_is_identity():
    m = mlp([4, 6, 6], 3)
    assert build_overparam(m, PartitionSpec.vertical("fc1"), 1.0) == m


def test_dense_widening_repairs_successor():
    m = ModelSpec((dense("a", 256, 512), relu("r"), dense("b", 512, 10), softmax_xent()), (256,))
    w = build_overparam(m, PartitionSpec.vertical("a"), 2.0)
    assert w.layer("a").out_features == 1024
    assert w.layer("b").in_features == 1024
    assert w.layer("b").out_features == 10


def test_output_head_cannot_widen():
    m = mlp([4, 6], 3)
    with pytest.raises(SpecError):
        build_overparam(m, PartitionSpec.vertical("fc2"), 2.0)


def test_overparam_rejects_horizontal_and_small_factor():
    m = mlp([4, 6, 6], 3)
    with pytest.raises(ValueError):
        build_overparam(m, PartitionSpec.horizontal(0.5), 2.0)
    with pytest.raises(ValueError):
        build_overparam(m, PartitionSpec.vertical("fc1"), 0.5)


def test_large_alexnet_conv_counts_from_shape_arithmetic():
    per, _ = count_parameters(zoo.alexnet_table4(1.5))
    arith = {
        "conv1": 11 * 11 * 3 * 144 + 144,
        "conv2": 5 * 5 * 144 * 384 + 384,
        "conv3": 3 * 3 * 384 * 576 + 576,
        "conv4": 3 * 3 * 576 * 576 + 576,
        "conv5": 3 * 3 * 576 * 384 + 384,
    }
    for name, n in arith.items():
        assert per[name] == n
    # the published "Large" cells that shape arithmetic reproduces
    assert (per["conv1"], per["conv2"], per["conv3"], per["conv4"]) == (52_416, 1_382_784, 1_991_232, 2_986_560)


def test_transfer_keeps_trained_weights_and_zero_pads():
    m = mlp([4, 6, 6], 3)
    p = init_params(m, RngStream(10, STREAM_INIT))
    w = build_overparam(m, PartitionSpec.vertical("fc2"), 2.0)
    q = transfer_params(m, w, p, ["fc2"], RngStream(11))
    assert q.segment("fc1").tobytes() == p.segment("fc1").tobytes()
    old3, new3 = p.tensors(m, "fc3"), q.tensors(w, "fc3")
    assert np.array_equal(new3["w"][:6], old3["w"])
    assert np.all(new3["w"][6:] == 0)
    assert np.array_equal(new3["b"], old3["b"])
    assert q.tensors(w, "fc2")["w"].shape == (6, 12)


def test_transfer_through_flatten_pads_channels():
    m = ModelSpec((conv2d("c1", 1, 2, 3, padding=1), relu("r"), conv2d("c2", 2, 3, 3, padding=1), flatten("f"),
                   dense("out", 4 * 4 * 3, 2), softmax_xent()), (4, 4, 1))
    p = init_params(m, RngStream(12, STREAM_INIT))
    w = build_overparam(m, PartitionSpec.vertical("c2"), 2.0)
    q = transfer_params(m, w, p, ["c2"], RngStream(13))
    old = p.tensors(m, "out")["w"].reshape(4, 4, 3, 2)
    new = q.tensors(w, "out")["w"].reshape(4, 4, 6, 2)
    assert np.array_equal(new[:, :, :3], old)
    assert np.all(new[:, :, 3:] == 0)


def test_scale_widths_on_residual_block_changes_mid_only():
    m = ModelSpec((conv2d("c", 1, 4, 3, padding=1), residual_block("r", 4), flatten("f"),
                   dense("o", 3 * 3 * 4, 2), softmax_xent()), (3, 3, 1))
    w = scale_widths(m, ["r"], 2.0)
    assert w.layer("r").mid == 8 and w.layer("r").out_channels == 4
    assert w.layer("o") == m.layer("o")


# ---- monolithic training reference --------------------------------------------------

def test_one_hand_computed_step():
    # two logits w0*x, w1*x, label 0, momentum 0.9 (first step v = g + wd*theta)
    m = ModelSpec((dense("d", 1, 2, bias=False), softmax_xent()), (1,))
    w0, w1, x, lr, wd = 0.3, -0.2, 1.5, 0.1, 1e-4
    p = ParamStore.for_model(m).with_data(np.array([w0, w1]))
    data = TaskData(Dataset(np.array([[x]]), np.array([0])), Dataset(np.array([[x]]), np.array([0])))
    run = run_training(m, p, data, TrainConfig(budget=1, batch_size=1, eval_every=1, schedule=((0, lr),),
                                               momentum=0.9, weight_decay=wd))
    p0 = math.exp(w0 * x) / (math.exp(w0 * x) + math.exp(w1 * x))
    g0, g1 = x * (p0 - 1.0), x * (1.0 - p0)
    expect = [w0 - lr * (g0 + wd * w0), w1 - lr * (g1 + wd * w1)]
    np.testing.assert_allclose(run.params.data, expect, rtol=0, atol=1e-15)


def test_training_is_deterministic(toy_data):
    m = mlp([6, 8], 3)
    cfg = TrainConfig(budget=40, batch_size=16, eval_every=10, seed=1, data_seed=1)
    a = run_training(m, init_params(m, RngStream(1, STREAM_INIT)), toy_data, cfg)
    b = run_training(m, init_params(m, RngStream(1, STREAM_INIT)), toy_data, cfg)
    assert a.points == b.points and a.params.data.tobytes() == b.params.data.tobytes()
    assert a.steps == [0, 10, 20, 30, 40]


def test_separable_problem_learned_within_2000_steps():
    g = RngStream(20).generator()
    x = g.normal(size=(200, 2))
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    x = x + np.where(y[:, None] == 1, 0.5, -0.5)  # margin so the set is strictly separable
    data = TaskData(Dataset(x[:150], y[:150]), Dataset(x[150:], y[150:]))
    m = ModelSpec((dense("d", 2, 2), softmax_xent()), (2,))
    cfg = TrainConfig(budget=2000, batch_size=32, eval_every=100, schedule=((0, 0.1),), weight_decay=0.0)
    run = run_training(m, init_params(m, RngStream(0, STREAM_INIT)), data, cfg)
    assert min(run.losses) < 0.1
