import numpy as np
import pytest

from stepsumm import autograd as ag


def _loop_matmul(a, b):
    """Independent triple-loop matmul oracle."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def _loop_conv_maxpool(seq, weight, bias, width):
    """Independent sliding-window conv + relu + maxpool oracle."""
    t, din = seq.shape
    nf = weight.shape[1]
    pooled = np.full(nf, -np.inf)
    for i in range(t - width + 1):
        window = seq[i : i + width].reshape(-1)
        for f in range(nf):
            z = float(window @ weight[:, f]) + bias[f]
            pooled[f] = max(pooled[f], max(z, 0.0))
    return pooled


def test_matmul_identity():
    a = ag.tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = ag.tensor(np.eye(2))
    assert np.array_equal((a @ eye).data, a.data)


def test_matmul_annihilating():
    a = ag.tensor([[1.0, 0.0], [0.0, 0.0]])
    b = ag.tensor([[0.0, 0.0], [0.0, 1.0]])
    assert np.array_equal((a @ b).data, np.zeros((2, 2)))


def test_matmul_matches_loop_oracle():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    got = ag.matmul(ag.tensor(a), ag.tensor(b)).data
    assert np.max(np.abs(got - _loop_matmul(a, b))) < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ag.ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        ag.matmul(ag.tensor(np.zeros((2, 3))), ag.tensor(np.zeros((2, 2))))


def test_elementwise_basics():
    assert ag.sigmoid(ag.tensor([[0.0]])).item() == 0.5
    r = ag.relu(ag.tensor([[-3.0, 3.0]]))
    assert r.data.tolist() == [[0.0, 3.0]]
    c = ag.concat([ag.tensor([[1.0, 2.0]]), ag.tensor([[3.0]])], axis=1)
    assert c.data.tolist() == [[1.0, 2.0, 3.0]]
    with pytest.raises(ag.ShapeError):
        ag.add(ag.tensor([[1.0]]), ag.tensor([[1.0, 2.0]]))


def test_softmax_contracts():
    s = ag.softmax(ag.tensor([[0.0, 0.0]]), axis=1)
    assert np.allclose(s.data, [[0.5, 0.5]])
    single = ag.softmax(ag.tensor([[3.7]]), axis=1)
    assert single.item() == 1.0
    big = ag.softmax(ag.tensor([[1000.0, 1000.0]]), axis=1)
    assert np.all(np.isfinite(big.data))
    assert np.allclose(big.data, [[0.5, 0.5]])


@pytest.mark.parametrize("seed", range(5))
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    x = ag.tensor(rng.normal(size=(4, 6)) * 10)
    s = ag.softmax(x, axis=1)
    assert np.all(s.data > 0)
    assert np.max(np.abs(s.data.sum(axis=1) - 1.0)) < 1e-9


def test_conv_constant_input_equals_single_response():
    rng = np.random.default_rng(0)
    row = rng.normal(size=3)
    seq = np.tile(row, (5, 1))
    w = ag.tensor(rng.normal(size=(2 * 3, 4)))
    b = ag.tensor(rng.normal(size=4))
    pooled = ag.conv1d_relu_maxpool(ag.tensor(seq), w, b, 2)
    one = np.concatenate([row, row]) @ w.data + b.data
    assert np.allclose(pooled.data[0], np.maximum(one, 0.0))


def test_conv_width1_identity_filter_takes_max():
    seq = ag.tensor([[1.0], [5.0], [2.0]])
    w = ag.tensor([[1.0]])
    b = ag.tensor([0.0])
    pooled = ag.conv1d_relu_maxpool(seq, w, b, 1)
    assert pooled.item() == 5.0


def test_conv_matches_sliding_window_oracle():
    rng = np.random.default_rng(11)
    seq = rng.normal(size=(6, 3))
    kernels = []
    for width in (2, 3):
        kernels.append(
            (width, ag.tensor(rng.normal(size=(width * 3, 2))), ag.tensor(rng.normal(size=2)))
        )
    got = ag.conv1d_maxpool(ag.tensor(seq), kernels).data[0]
    want = np.concatenate(
        [_loop_conv_maxpool(seq, w.data, b.data, width) for width, w, b in kernels]
    )
    assert np.allclose(got, want, atol=1e-12)


def test_conv_too_short_names_width():
    seq = ag.tensor(np.zeros((2, 3)))
    w = ag.tensor(np.zeros((4 * 3, 2)))
    b = ag.tensor(np.zeros(2))
    with pytest.raises(ag.InputTooShortError, match="width 4"):
        ag.conv1d_relu_maxpool(seq, w, b, 4)


def test_conv_output_length_independent_of_t():
    rng = np.random.default_rng(3)
    w = ag.tensor(rng.normal(size=(2 * 3, 4)))
    b = ag.tensor(rng.normal(size=4))
    shapes = set()
    for t in (2, 5, 11):
        pooled = ag.conv1d_relu_maxpool(ag.tensor(rng.normal(size=(t, 3))), w, b, 2)
        shapes.add(pooled.shape)
    assert shapes == {(1, 4)}


def test_backward_square():
    x = ag.tensor([[3.0]], requires_grad=True)
    with ag.Tape():
        y = ag.sum_all(x * x)
        ag.backward(y)
    assert x.grad[0, 0] == pytest.approx(6.0)


def test_backward_sigmoid_at_zero():
    x = ag.tensor(np.zeros((1, 4)), requires_grad=True)
    with ag.Tape():
        y = ag.sum_all(ag.sigmoid(x))
        ag.backward(y)
    assert np.allclose(x.grad, 0.25)


def test_backward_requires_scalar():
    x = ag.tensor(np.ones((2, 2)), requires_grad=True)
    with ag.Tape():
        y = x * x
        with pytest.raises(ag.ContractError):
            ag.backward(y)


def test_backward_linearity_of_accumulation():
    rng = np.random.default_rng(5)
    x = ag.tensor(rng.normal(size=(3, 3)), requires_grad=True)

    def loss_a():
        return ag.sum_all(ag.tanh(x))

    def loss_b():
        return ag.sum_all(x * x)

    x.zero_grad()
    with ag.Tape():
        ag.backward(loss_a())
    ga = x.grad.copy()
    x.zero_grad()
    with ag.Tape():
        ag.backward(loss_b())
    gb = x.grad.copy()
    x.zero_grad()
    with ag.Tape():
        ag.backward(ag.add(loss_a(), loss_b()))
    assert np.allclose(x.grad, ga + gb, atol=1e-12)


def test_finite_diff_linear_is_exact():
    rng = np.random.default_rng(2)
    p = ag.tensor(rng.normal(size=(4,)).reshape(1, 4), requires_grad=True)
    c = ag.tensor(rng.normal(size=(1, 4)))

    def f():
        return ag.sum_all(p * c)

    res = ag.finite_diff_check(f, {"p": p})
    assert res.max_rel_err < 1e-10


def test_finite_diff_tanh():
    rng = np.random.default_rng(4)
    p = ag.tensor(rng.normal(size=(2, 3)), requires_grad=True)

    def f():
        return ag.sum_all(ag.tanh(p))

    res = ag.finite_diff_check(f, {"p": p}, h=1e-5)
    assert res.max_rel_err < 1e-7


def test_finite_diff_flags_corrupted_gradient():
    p = ag.tensor([[0.3, -0.7]], requires_grad=True)

    def doubled_grad(x):
        out = ag.Tensor(x.data.copy())
        return ag.record(out, (x,), lambda g: (2.0 * g,))

    def f():
        return ag.sum_all(doubled_grad(p))

    res = ag.finite_diff_check(f, {"p": p})
    assert res.max_rel_err == pytest.approx(0.5, abs=1e-6)


def test_finite_diff_detects_nondeterminism():
    p = ag.tensor([[1.0]], requires_grad=True)
    state = {"n": 0}

    def f():
        state["n"] += 1
        return ag.sum_all(ag.scale(p, float(state["n"])))

    with pytest.raises(ag.DeterminismError):
        ag.finite_diff_check(f, {"p": p})


OPS = {
    "matmul": lambda rng: _binary(rng, (4, 3), (3, 5), ag.matmul),
    "add": lambda rng: _binary(rng, (4, 4), (4, 4), ag.add),
    "mul": lambda rng: _binary(rng, (4, 4), (4, 4), ag.mul),
    "sub": lambda rng: _binary(rng, (4, 4), (4, 4), ag.sub),
    "sigmoid": lambda rng: _unary(rng, (3, 4), ag.sigmoid),
    "tanh": lambda rng: _unary(rng, (3, 4), ag.tanh),
    "relu": lambda rng: _unary(rng, (3, 4), ag.relu),
    "softmax0": lambda rng: _unary(rng, (4, 3), lambda x: ag.softmax(x, axis=0)),
    "softmax1": lambda rng: _unary(rng, (4, 3), lambda x: ag.softmax(x, axis=1)),
    "layer_norm": lambda rng: _layer_norm(rng),
    "add_bias": lambda rng: _add_bias(rng),
    "concat": lambda rng: _concat(rng),
    "mean_rows": lambda rng: _unary(rng, (5, 3), ag.mean_rows),
    "tile_rows": lambda rng: _unary(rng, (1, 4), lambda x: ag.tile_rows(x, 5)),
    "rows": lambda rng: _unary(rng, (6, 3), lambda x: ag.rows(x, [0, 2, 2, 5])),
    "cols": lambda rng: _unary(rng, (3, 6), lambda x: ag.cols(x, 1, 4)),
    "pad_rows": lambda rng: _unary(rng, (3, 4), lambda x: ag.pad_rows(x, 6)),
    "transpose": lambda rng: _unary(rng, (3, 4), ag.transpose),
    "conv": lambda rng: _conv(rng),
    "nll": lambda rng: _nll(rng),
}


def _unary(rng, shape, op):
    # outer tanh keeps the objective sensitive even for ops whose plain sum
    # is constant (softmax rows always sum to one)
    p = ag.tensor(rng.normal(size=shape), requires_grad=True)
    return {"x": p}, lambda: ag.sum_all(ag.tanh(op(ag.tanh(p))))


def _binary(rng, sa, sb, op):
    a = ag.tensor(rng.normal(size=sa), requires_grad=True)
    b = ag.tensor(rng.normal(size=sb), requires_grad=True)
    return {"a": a, "b": b}, lambda: ag.sum_all(ag.tanh(op(a, b)))


def _layer_norm(rng):
    x = ag.tensor(rng.normal(size=(4, 5)), requires_grad=True)
    g = ag.tensor(rng.normal(size=5), requires_grad=True)
    b = ag.tensor(rng.normal(size=5), requires_grad=True)
    return {"x": x, "g": g, "b": b}, lambda: ag.sum_all(ag.tanh(ag.layer_norm(x, g, b)))


def _add_bias(rng):
    x = ag.tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b = ag.tensor(rng.normal(size=5), requires_grad=True)
    return {"x": x, "b": b}, lambda: ag.sum_all(ag.tanh(ag.add_bias(x, b)))


def _concat(rng):
    a = ag.tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = ag.tensor(rng.normal(size=(4, 3)), requires_grad=True)
    return {"a": a, "b": b}, lambda: ag.sum_all(ag.tanh(ag.concat([a, b], axis=0)))


def _conv(rng):
    seq = ag.tensor(rng.normal(size=(6, 3)), requires_grad=True)
    w = ag.tensor(rng.normal(size=(2 * 3, 4)), requires_grad=True)
    b = ag.tensor(rng.normal(size=4), requires_grad=True)
    return {"seq": seq, "w": w, "b": b}, lambda: ag.sum_all(
        ag.conv1d_relu_maxpool(seq, w, b, 2)
    )


def _nll(rng):
    logits = ag.tensor(rng.normal(size=(5, 7)), requires_grad=True)
    targets = rng.integers(0, 7, size=5)
    return {"logits": logits}, lambda: ag.nll_from_logits(logits, targets)


@pytest.mark.parametrize("name", sorted(OPS))
def test_every_op_gradient_many_seeds(name):
    """Analytic vs central-difference gradients across 100 seeds per op."""
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        params, f = OPS[name](rng)
        res = ag.finite_diff_check(f, params, h=1e-5, max_coords_per_tensor=4,
                                   rng=np.random.default_rng(seed + 1))
        worst = max(worst, res.max_rel_err)
    assert worst < 1e-4, f"{name}: worst rel err {worst:.3e}"


def test_nll_uniform_logits():
    logits = ag.tensor(np.zeros((4, 10)))
    loss = ag.nll_from_logits(logits, [1, 2, 3, 4])
    assert loss.item() == pytest.approx(4 * np.log(10))


def test_nll_ignores_padding_positions():
    rng = np.random.default_rng(9)
    logits = ag.tensor(rng.normal(size=(3, 5)))
    full = ag.nll_from_logits(logits, [1, 2, 3]).item()
    masked = ag.nll_from_logits(logits, [1, -1, 3]).item()
    only_mid = ag.nll_from_logits(logits, [-1, 2, -1]).item()
    assert full == pytest.approx(masked + only_mid)
