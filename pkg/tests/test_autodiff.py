import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ptformer.autodiff as ad
from ptformer.autodiff import Tape, Tensor
from ptformer.errors import ConfigError, ContractError, DegenerateInputError, DimensionError
from ptformer.graph import from_edge_list, sym_norm_weights

from gradcheck import central_difference, max_rel_err


def loss_of(build):
    """Run build() under a tape, return (loss_value, tape, loss_tensor)."""
    with Tape() as tape:
        loss = build()
    return loss, tape


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    rng = np.random.default_rng(0)
    m = Tensor(rng.normal(size=(2, 2)))
    out = ad.matmul(Tensor(np.eye(2)), m)
    np.testing.assert_array_equal(out.values, m.values)


def test_matmul_hand_sum():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.values, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    a = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (4, 2)), requires_grad=True)

    with Tape() as tape:
        loss = ad.sum_all(ad.matmul(a, b))
    tape.backward(loss)

    fd_a, fd_b = central_difference(
        lambda: float((a.values @ b.values).sum()), [a.values, b.values]
    )
    assert max_rel_err(a.grad, fd_a) < 1e-4
    assert max_rel_err(b.grad, fd_b) < 1e-4


# ---------------------------------------------------------------------------
# elementwise ops


def test_swish_at_zero():
    assert ad.swish(Tensor([[0.0]])).values[0, 0] == 0.0


def test_relu_clamps():
    out = ad.relu(Tensor([[-3.0, 3.0]]))
    np.testing.assert_array_equal(out.values, [[0.0, 3.0]])


@pytest.mark.parametrize("op", ["relu", "sigmoid", "swish", "gelu"])
def test_unary_gradients_match_finite_differences(op):
    rng = np.random.default_rng(2)
    x = Tensor(rng.uniform(-1, 1, (4, 5)) + 0.01, requires_grad=True)  # keep clear of the ReLU kink
    with Tape() as tape:
        loss = ad.sum_all(ad.elementwise(op, x))
    tape.backward(loss)

    def f():
        return float(ad.elementwise(op, Tensor(x.values)).values.sum())

    (fd,) = central_difference(f, [x.values])
    assert max_rel_err(x.grad, fd) < 1e-4


def test_swish_derivative_at_one():
    x = Tensor([[1.0]], requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.swish(x))
    tape.backward(loss)
    (fd,) = central_difference(lambda: float(ad.swish(Tensor(x.values)).values.sum()), [x.values])
    assert max_rel_err(x.grad, fd) < 1e-5


def test_binary_elementwise_gradients():
    rng = np.random.default_rng(3)
    a = Tensor(rng.uniform(-1, 1, (3, 3)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (3, 3)), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.mul(ad.add(a, b), b))
    tape.backward(loss)
    fd_a, fd_b = central_difference(
        lambda: float(((a.values + b.values) * b.values).sum()), [a.values, b.values]
    )
    assert max_rel_err(a.grad, fd_a) < 1e-4
    assert max_rel_err(b.grad, fd_b) < 1e-4


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.add(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))


def test_elementwise_dispatcher_rejects_unknown():
    with pytest.raises(ConfigError):
        ad.elementwise("tanhish", Tensor([[1.0]]))


# ---------------------------------------------------------------------------
# layer norm


def _ln_identity_affine(d):
    return Tensor(np.ones((1, d))), Tensor(np.zeros((1, d)))


def test_layer_norm_constant_row_is_zero():
    gain, bias = _ln_identity_affine(4)
    out = ad.layer_norm(Tensor(np.full((2, 4), 3.7)), gain, bias, eps=1e-5)
    np.testing.assert_allclose(out.values, 0.0)


def test_layer_norm_symmetric_row():
    gain, bias = _ln_identity_affine(2)
    out = ad.layer_norm(Tensor([[1.0, 3.0]]), gain, bias, eps=1e-12)
    np.testing.assert_allclose(out.values, [[-1.0, 1.0]], atol=1e-9)


def test_layer_norm_row_moments():
    rng = np.random.default_rng(4)
    # Rows with variance >= ~4 keep the eps adjustment below the 1e-5 bound.
    h = Tensor(2.0 * rng.normal(size=(6, 32)))
    gain, bias = _ln_identity_affine(32)
    out = ad.layer_norm(h, gain, bias, eps=1e-5).values
    assert np.abs(out.mean(axis=1)).max() < 1e-7
    assert np.abs(out.var(axis=1) - 1.0).max() < 1e-5


def test_layer_norm_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    h = Tensor(rng.uniform(-1, 1, (5, 8)), requires_grad=True)
    gain = Tensor(rng.uniform(0.5, 1.5, (1, 8)), requires_grad=True)
    bias = Tensor(rng.uniform(-0.5, 0.5, (1, 8)), requires_grad=True)
    weight = np.linspace(0.5, 1.5, 40).reshape(5, 8)  # non-uniform downstream weighting

    with Tape() as tape:
        loss = ad.sum_all(ad.mul(ad.layer_norm(h, gain, bias, 1e-5), Tensor(weight)))
    tape.backward(loss)

    def f():
        return float((ad.layer_norm(Tensor(h.values), Tensor(gain.values), Tensor(bias.values), 1e-5).values * weight).sum())

    fd_h, fd_g, fd_b = central_difference(f, [h.values, gain.values, bias.values])
    assert max_rel_err(h.grad, fd_h) < 1e-4
    assert max_rel_err(gain.grad, fd_g) < 1e-4
    assert max_rel_err(bias.grad, fd_b) < 1e-4


# ---------------------------------------------------------------------------
# row softmax


def test_row_softmax_uniform():
    out = ad.row_softmax(Tensor(np.full((1, 4), 2.5)))
    np.testing.assert_allclose(out.values, 0.25)


def test_row_softmax_single_survivor_mask():
    mask = np.array([[False, True, False]])
    out = ad.row_softmax(Tensor([[5.0, -1.0, 2.0]]), mask)
    np.testing.assert_array_equal(out.values, [[0.0, 1.0, 0.0]])


def test_row_softmax_fully_masked_row_errors():
    with pytest.raises(DegenerateInputError):
        ad.row_softmax(Tensor(np.zeros((2, 3))), np.array([[True, True, True], [False, False, False]]))


def test_row_softmax_gradient():
    rng = np.random.default_rng(6)
    x = Tensor(rng.uniform(-1, 1, (4, 4)), requires_grad=True)
    weight = rng.uniform(0.5, 1.5, (4, 4))
    with Tape() as tape:
        loss = ad.sum_all(ad.mul(ad.row_softmax(x), Tensor(weight)))
    tape.backward(loss)
    (fd,) = central_difference(
        lambda: float((ad.row_softmax(Tensor(x.values)).values * weight).sum()), [x.values]
    )
    assert max_rel_err(x.grad, fd) < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 8))
def test_row_softmax_rows_are_stochastic(seed, n, m):
    rng = np.random.default_rng(seed)
    p = ad.row_softmax(Tensor(rng.uniform(-30, 30, (n, m)))).values
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# spmm


def test_spmm_self_loop_identity():
    g = from_edge_list(3, [])
    g_loops = sym_norm_weights(g, add_self_loops=True)  # isolated nodes, loops only -> weights 1
    h = Tensor(np.arange(6.0).reshape(3, 2))
    out = ad.spmm(g_loops, h)
    np.testing.assert_allclose(out.values, h.values)


def test_spmm_two_node_path_swaps_rows():
    g = from_edge_list(2, [(0, 1)])
    h = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = ad.spmm(g, h)
    np.testing.assert_array_equal(out.values, [[3.0, 4.0], [1.0, 2.0]])


def test_spmm_matches_dense_product():
    rng = np.random.default_rng(7)
    edges = [(i, j) for i in range(10) for j in range(i + 1, 10) if rng.random() < 0.4]
    g = sym_norm_weights(from_edge_list(10, edges), add_self_loops=True)
    h = Tensor(rng.normal(size=(10, 5)))
    out = ad.spmm(g, h)
    np.testing.assert_allclose(out.values, g.to_dense() @ h.values, atol=1e-10)


def test_spmm_gradient_through_asymmetric_weights():
    # Mean-normalized weights are not symmetric, so this exercises the
    # transpose routing in the backward pass.
    from ptformer.graph import mean_norm_weights

    rng = np.random.default_rng(8)
    g = mean_norm_weights(from_edge_list(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 4)]))
    h = Tensor(rng.uniform(-1, 1, (5, 3)), requires_grad=True)
    weight = rng.uniform(0.5, 1.5, (5, 3))
    with Tape() as tape:
        loss = ad.sum_all(ad.mul(ad.spmm(g, h), Tensor(weight)))
    tape.backward(loss)
    (fd,) = central_difference(lambda: float((g.to_dense() @ h.values * weight).sum()), [h.values])
    assert max_rel_err(h.grad, fd) < 1e-4


def test_spmm_node_count_mismatch():
    g = from_edge_list(3, [(0, 1)])
    with pytest.raises(DimensionError):
        ad.spmm(g, Tensor(np.zeros((4, 2))))


# ---------------------------------------------------------------------------
# dropout


def test_dropout_rate_zero_is_identity():
    rng = np.random.default_rng(9)
    h = Tensor(rng.normal(size=(4, 4)))
    out = ad.dropout(h, 0.0, training=True, rng=rng)
    np.testing.assert_array_equal(out.values, h.values)


def test_dropout_eval_mode_is_identity():
    rng = np.random.default_rng(10)
    h = Tensor(rng.normal(size=(4, 4)))
    out = ad.dropout(h, 0.9, training=False, rng=rng)
    np.testing.assert_array_equal(out.values, h.values)


def test_dropout_survivor_fraction():
    rng = np.random.default_rng(11)
    h = Tensor(np.ones((100, 100)))
    out = ad.dropout(h, 0.5, training=True, rng=rng)
    survivors = (out.values != 0).mean()
    assert abs(survivors - 0.5) < 0.02
    np.testing.assert_allclose(out.values[out.values != 0], 2.0)  # inverted scaling


def test_dropout_rejects_rate_one():
    with pytest.raises(ConfigError):
        ad.dropout(Tensor([[1.0]]), 1.0, training=True, rng=np.random.default_rng(0))


# ---------------------------------------------------------------------------
# backward / tape mechanics


def test_backward_of_sum_gives_ones():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_of_square():
    x = Tensor([[2.0]], requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.mul(x, x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [[4.0]])


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, x)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_backward_rejects_repeat_without_reset():
    x = Tensor([[1.0]], requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(x)
    tape.backward(loss)
    with pytest.raises(ContractError):
        tape.backward(loss)


def test_gradients_accumulate_across_tapes_until_zeroed():
    x = Tensor([[1.0]], requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            loss = ad.sum_all(x)
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [[2.0]])
    ad.zero_grad([x])
    assert x.grad is None


def test_no_grad_written_without_requires_grad():
    x = Tensor([[1.0, 2.0]])
    y = Tensor([[3.0, 4.0]], requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.mul(x, y))
    tape.backward(loss)
    assert x.grad is None
    np.testing.assert_array_equal(y.grad, [[1.0, 2.0]])


def test_fanout_gradients_add():
    x = Tensor([[3.0]], requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.add(ad.mul(x, x), x))  # d/dx (x^2 + x) = 2x + 1
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [[7.0]])


def test_backward_outside_tape_errors():
    x = Tensor([[1.0]], requires_grad=True)
    loss = ad.sum_all(x)  # no tape active
    with pytest.raises(ContractError):
        ad.backward(loss)


def test_tape_replay_is_deterministic():
    def run():
        rng = np.random.default_rng(42)
        x = Tensor(rng.normal(size=(5, 3)))
        h = ad.dropout(ad.relu(x), 0.3, training=True, rng=rng)
        return ad.row_softmax(h).values

    np.testing.assert_array_equal(run(), run())


# ---------------------------------------------------------------------------
# segment/gather ops used by attention


def test_gather_scatter_roundtrip_gradient():
    rng = np.random.default_rng(12)
    t = Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
    idx = np.array([0, 2, 2, 3, 1])
    offsets = np.array([0, 2, 3, 5])
    weight = rng.uniform(0.5, 1.5, (3, 3))

    def compute(values):
        gathered = values[idx]
        acc = np.zeros((3, 3))
        np.add.at(acc, np.repeat(np.arange(3), np.diff(offsets)), gathered)
        return float((acc * weight).sum())

    with Tape() as tape:
        loss = ad.sum_all(ad.mul(ad.segment_sum(ad.gather_rows(t, idx), offsets), Tensor(weight)))
    tape.backward(loss)
    (fd,) = central_difference(lambda: compute(t.values), [t.values])
    assert max_rel_err(t.grad, fd) < 1e-4


def test_segment_softmax_sums_to_one_per_segment():
    rng = np.random.default_rng(13)
    offsets = np.array([0, 3, 3, 7, 9])
    s = Tensor(rng.uniform(-5, 5, (9, 1)))
    p = ad.segment_softmax(s, offsets).values[:, 0]
    for i in range(4):
        seg = p[offsets[i]:offsets[i + 1]]
        if len(seg):
            assert abs(seg.sum() - 1.0) < 1e-12


def test_segment_softmax_gradient():
    rng = np.random.default_rng(14)
    offsets = np.array([0, 3, 7, 9])
    s = Tensor(rng.uniform(-2, 2, (9, 1)), requires_grad=True)
    weight = rng.uniform(0.5, 1.5, (9, 1))

    def f():
        seg_ids = np.repeat(np.arange(3), np.diff(offsets))
        vals = s.values[:, 0]
        seg_max = np.full(3, -np.inf)
        np.maximum.at(seg_max, seg_ids, vals)
        e = np.exp(vals - seg_max[seg_ids])
        denom = np.zeros(3)
        np.add.at(denom, seg_ids, e)
        return float(((e / denom[seg_ids])[:, None] * weight).sum())

    with Tape() as tape:
        loss = ad.sum_all(ad.mul(ad.segment_softmax(s, offsets), Tensor(weight)))
    tape.backward(loss)
    (fd,) = central_difference(f, [s.values])
    assert max_rel_err(s.grad, fd) < 1e-4


def test_logit_mix_halfway_at_zero():
    a = Tensor(np.full((2, 2), 4.0))
    b = Tensor(np.zeros((2, 2)))
    out = ad.logit_mix(Tensor([[0.0]]), a, b)
    np.testing.assert_array_equal(out.values, np.full((2, 2), 2.0))


def test_logit_mix_gradient():
    rng = np.random.default_rng(15)
    logit = Tensor([[0.3]], requires_grad=True)
    a = Tensor(rng.uniform(-1, 1, (3, 2)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (3, 2)), requires_grad=True)
    weight = rng.uniform(0.5, 1.5, (3, 2))

    def f():
        s = 1.0 / (1.0 + np.exp(-logit.values[0, 0]))
        return float(((s * a.values + (1 - s) * b.values) * weight).sum())

    with Tape() as tape:
        loss = ad.sum_all(ad.mul(ad.logit_mix(logit, a, b), Tensor(weight)))
    tape.backward(loss)
    fd_l, fd_a, fd_b = central_difference(f, [logit.values, a.values, b.values])
    assert max_rel_err(logit.grad, fd_l) < 1e-4
    assert max_rel_err(a.grad, fd_a) < 1e-4
    assert max_rel_err(b.grad, fd_b) < 1e-4


def test_concat_and_transpose_gradients():
    rng = np.random.default_rng(16)
    a = Tensor(rng.uniform(-1, 1, (3, 2)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (3, 1)), requires_grad=True)
    weight = rng.uniform(0.5, 1.5, (3, 3))

    with Tape() as tape:
        loss = ad.sum_all(ad.mul(ad.transpose(ad.transpose(ad.concat_cols([a, b]))), Tensor(weight)))
    tape.backward(loss)
    fd_a, fd_b = central_difference(
        lambda: float((np.hstack([a.values, b.values]) * weight).sum()), [a.values, b.values]
    )
    assert max_rel_err(a.grad, fd_a) < 1e-4
    assert max_rel_err(b.grad, fd_b) < 1e-4
