import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckg_traffic import engine as E
from ckg_traffic.errors import GraphConsumed, NonScalarOutput, ShapeMismatch


def central_diff(fn, x, step=1e-5):
    """Independent numeric gradient of a numpy scalar function."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + step
        fp = fn(x)
        flat[i] = o - step
        fm = fn(x)
        flat[i] = o
        gflat[i] = (fp - fm) / (2 * step)
    return g


def test_softmax_uniform():
    out = E.softmax(E.Tensor([[0.0, 0.0]]), axis=-1)
    np.testing.assert_array_equal(out.data, [[0.5, 0.5]])


def test_tanh_zero():
    assert E.tanh(E.Tensor([0.0])).data[0] == 0.0


def test_matmul_shape():
    out = E.matmul(E.Tensor(np.ones((2, 3))), E.Tensor(np.ones((3, 1))))
    assert out.shape == (2, 1)


def test_matmul_mismatch():
    with pytest.raises(ShapeMismatch):
        E.matmul(E.Tensor(np.ones((2, 3))), E.Tensor(np.ones((2, 1))))
    with pytest.raises(ShapeMismatch):
        E.add(E.Tensor(np.ones((2, 3))), E.Tensor(np.ones((4,))))


def test_square_grad():
    x = E.parameter([3.0])
    (x * x).sum().backward()
    assert x.grad[0] == 6.0


def test_sum_grad_is_ones():
    a = E.parameter(np.random.default_rng(0).normal(size=(3, 4)))
    a.sum().backward()
    np.testing.assert_array_equal(a.grad, np.ones((3, 4)))


def test_nonscalar_backward():
    a = E.parameter(np.ones(3))
    with pytest.raises(NonScalarOutput):
        (a * 2.0).backward()


def test_repeated_backward_is_error():
    a = E.parameter(np.ones(3))
    loss = (a * a).sum()
    loss.backward()
    with pytest.raises(GraphConsumed):
        loss.backward()


def test_no_grad_records_nothing():
    a = E.parameter(np.ones(3))
    with E.no_grad():
        out = (a * a).sum()
    assert not out.requires_grad


def _random_graph(params):
    a, b, c, d, e = (params[k] for k in "abcde")
    h = E.tanh(E.matmul(a, b) + c)
    s = E.softmax(h * d, axis=-1)
    z = E.concat([s, E.sigmoid(h)], axis=1)
    w = E.softplus(z[:, 1:4]) * E.exp(e * 0.3)
    return (E.log(w + 1.0).sum() + E.l2norm(h, axis=1).mean()
            + E.transpose(h).mean() * E.mean(E.relu(h)))


def test_random_five_parameter_graph_matches_central_differences():
    rng = np.random.default_rng(11)
    shapes = {"a": (3, 4), "b": (4, 5), "c": (1, 5), "d": (3, 5), "e": (3, 3)}
    params = {k: E.parameter(rng.uniform(-1, 1, s)) for k, s in shapes.items()}
    _random_graph(params).backward()
    for name, p in params.items():
        def fn(x, name=name):
            saved = params[name].data
            params[name].data = x
            with E.no_grad():
                v = _random_graph(params).item()
            params[name].data = saved
            return v
        num = central_diff(fn, p.data.copy())
        rel = np.abs(p.grad - num) / np.maximum(np.maximum(np.abs(p.grad), np.abs(num)), 1e-6)
        assert rel.max() < 1e-6, name


OPS = {
    "add": lambda x, y: E.add(x, y),
    "sub": lambda x, y: E.sub(x, y),
    "mul": lambda x, y: E.mul(x, y),
    "div": lambda x, y: E.div(x, y + 3.0),
    "matmul": lambda x, y: E.matmul(x, E.transpose(y)),
    "tanh": lambda x, y: E.tanh(x) * y,
    "sigmoid": lambda x, y: E.sigmoid(x) * y,
    "softplus": lambda x, y: E.softplus(x) * y,
    "exp": lambda x, y: E.exp(x) * y,
    "log": lambda x, y: E.log(x + 2.0) * y,
    "softmax0": lambda x, y: E.softmax(x, axis=0) * y,
    "softmax1": lambda x, y: E.softmax(x, axis=1) * y,
    "concat": lambda x, y: E.concat([x, y], axis=1),
    "slice": lambda x, y: x[1:, ::2] * y[1:, ::2],
    "fancy": lambda x, y: E.take(x, [0, 2, 0], axis=0) * 2.0,
    "transpose": lambda x, y: E.transpose(x) * E.transpose(y),
    "l2norm": lambda x, y: E.l2norm(x + 2.0, axis=1),
    "mean": lambda x, y: E.mean(x * y, axis=0),
    "sum": lambda x, y: E.sum_(x * y, axis=1, keepdims=True),
    "bcast": lambda x, y: x * y[:1],
}


@pytest.mark.parametrize("op", sorted(OPS))
def test_op_gradients_random_inputs(op):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = E.parameter(rng.uniform(-1, 1, (3, 4)))
        y = E.parameter(rng.uniform(-1, 1, (3, 4)))
        w = rng.normal(size=OPS[op](x, y).shape)
        rep = E.grad_check(lambda: (OPS[op](x, y) * w).sum(), {"x": x, "y": y}, step=1e-5, tol=1e-4)
        assert rep.passed, (op, seed, rep.errors, rep.worst)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(vals):
    out = E.softmax(E.Tensor(np.array(vals)[None, :]), axis=-1)
    assert abs(out.data.sum() - 1.0) < 1e-12


def test_masked_softmax_zero_weight():
    mask = np.triu(np.ones((3, 3), dtype=bool), 1)
    out = E.softmax(E.Tensor(np.zeros((3, 3))), axis=-1, mask=mask)
    assert np.all(out.data[mask] == 0.0)
    np.testing.assert_allclose(out.data.sum(-1), 1.0, atol=1e-12)


def test_backward_linearity():
    rng = np.random.default_rng(3)
    p = E.parameter(rng.normal(size=(4,)))

    def l1():
        return E.tanh(p).sum()

    def l2():
        return (p * p * p).sum()

    l1().backward()
    g1 = p.grad.copy()
    p.zero_grad()
    l2().backward()
    g2 = p.grad.copy()
    p.zero_grad()
    (l1() + l2()).backward()
    np.testing.assert_allclose(p.grad, g1 + g2, rtol=1e-14, atol=1e-14)


def test_grad_check_linear_is_exact():
    w = np.array([1.5, -2.0, 0.25])
    x = E.parameter([0.3, 0.1, -0.4])
    rep = E.grad_check(lambda: (x * w).sum(), {"x": x})
    assert rep.max_error < 1e-9


def test_grad_check_reports_corrupted_gradient():
    x = E.parameter([0.3, 0.1, -0.4])

    def bad_square(t):
        return E.Tensor.from_op(t.data ** 2, (t,), lambda g: (g * 3.0 * t.data,))

    rep = E.grad_check(lambda: bad_square(x).sum(), {"x": x})
    assert not rep.passed


def test_adam_zero_gradient_leaves_parameters():
    p = {"w": np.array([1.0, -2.0])}
    st_ = E.AdamState()
    E.adam_step(p, {"w": np.zeros(2)}, st_, lr=0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_magnitude_is_lr():
    p = {"w": np.array([1.0, -2.0, 0.5])}
    g = np.array([0.3, -7.0, 1e-3])
    E.adam_step(p, {"w": g}, E.AdamState(), lr=1e-3)
    # bias-corrected first step: m_hat/sqrt(v_hat) = sign(g) up to eps
    expected = np.array([1.0, -2.0, 0.5]) - 1e-3 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p["w"], expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(np.abs(p["w"] - [1.0, -2.0, 0.5])[:2], 1e-3, rtol=1e-6)


def test_adam_two_steps_match_scalar_trace():
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.01
    gs = [0.5, -0.25]
    # hand-rolled scalar oracle
    w, m, v = 2.0, 0.0, 0.0
    for t, g in enumerate(gs, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    p = {"w": np.array([2.0])}
    s = E.AdamState()
    for g in gs:
        E.adam_step(p, {"w": np.array([g])}, s, lr=lr, betas=(b1, b2), eps=eps)
    assert p["w"][0] == pytest.approx(w, abs=1e-15)


def test_multistep_lr_table():
    assert E.multistep_lr(1e-3, 0) == 1e-3
    assert E.multistep_lr(1e-3, 149) == 1e-3
    assert E.multistep_lr(1e-3, 150) == 5e-4
    assert E.multistep_lr(1e-3, 250) == 2.5e-4
    assert E.multistep_lr(1e-3, 499) == 1e-3 / 16


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    params = {"a": rng.normal(size=(3, 4)) * 1e-7, "b": np.array([np.pi, 1 / 3, -0.0, 1e300])}
    path = tmp_path / "ck.json"
    E.save_params(path, params)
    back = E.load_params(path)
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()
    rec = json.loads(path.read_text())
    assert [r["name"] for r in rec] == ["a", "b"] and rec[0]["shape"] == [3, 4]


def test_binary_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    params = {"w": rng.normal(size=(2, 3, 4)), "b": np.array([-0.0, 1e-310, np.pi])}
    E.save_params(tmp_path / "ck.bin", params, meta={"family": "X"})
    back, meta = E.load_params_with_meta(tmp_path / "ck.bin")
    assert meta == {"family": "X"}
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()


def test_sparse_adam_matches_dense_on_touched_rows():
    rng = np.random.default_rng(2)
    p = rng.normal(size=(5, 3))
    g = np.zeros((5, 3))
    g[[1, 3]] = rng.normal(size=(2, 3))
    dense = {"p": p.copy()}
    E.adam_step(dense, {"p": g}, E.AdamState(), lr=0.01)
    sp, m, v = p.copy(), np.zeros((5, 3)), np.zeros((5, 3))
    E.adam_step_rows(sp, m, v, np.array([1, 3]), g[[1, 3]], 1, lr=0.01)
    np.testing.assert_array_equal(sp, dense["p"])


def test_softmax_extreme_range_and_row_independence():
    x = np.array([[0.0, 900.0, 899.0], [-1000.0, 0.0, 5.0]])
    out = E.softmax(E.Tensor(x), axis=-1).data
    e = np.exp(x - x.max(axis=1, keepdims=True))
    np.testing.assert_allclose(out, e / e.sum(axis=1, keepdims=True), rtol=1e-14)
    y = x.copy()
    y[1] *= 3.0
    assert E.softmax(E.Tensor(y)).data[0].tobytes() == out[0].tobytes()
    masked = E.softmax(E.Tensor(x), mask=np.array([[True, False, False]] * 2)).data
    assert np.all(masked[:, 0] == 0.0)
    np.testing.assert_allclose(masked.sum(axis=1), 1.0)
