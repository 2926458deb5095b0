import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atbrg import autodiff as ad
from atbrg.autodiff import (OPS, ParameterStore, Primitive, Tape, adagrad_step, grad_check,
                            load_checkpoint, save_checkpoint)
from atbrg.errors import ContractError, NumericError, ShapeError

SEGMENTS = np.array([0, 0, 1, 1, 1, 3])


def store_of(**arrays):
    s = ParameterStore()
    for k, v in arrays.items():
        s.add(k, v)
    return s


def project(tape, node, seed=1):
    """Scalar loss sum(out * R) with a fixed random R, so every output entry matters."""
    value = tape.value(node)
    if value.ndim == 0:
        return node
    r = np.random.default_rng(seed).uniform(-1, 1, size=value.shape)
    flat = tape.reshape(node, (1, value.size))
    return tape.sum(tape.rowdot(flat, tape.const(r.reshape(1, -1))))


def case(name, rng):
    u = lambda *shape: rng.uniform(-2, 2, size=shape)
    if name == "gather":
        return {"x": u(5, 3)}, lambda t: t.gather(t.param("x"), [0, 2, 2, 4])
    if name == "concat":
        return {"x": u(4, 2), "y": u(4, 3)}, lambda t: t.concat(t.param("x"), t.param("y"))
    if name == "affine":
        return ({"x": u(4, 3), "w": u(3, 2), "b": u(2)},
                lambda t: t.concat(t.affine(t.param("x"), t.param("w"), t.param("b")),
                                   t.affine(t.param("x"), t.param("w"))))
    if name in ("tanh", "sigmoid", "exp"):
        return {"x": u(4, 3)}, lambda t: getattr(t, name)(t.param("x"))
    if name == "masked_softmax":
        mask = np.array([[1, 0, 1, 1], [0, 1, 0, 0], [1, 1, 1, 1]], dtype=bool)
        return {"x": u(3, 4)}, lambda t: t.masked_softmax(t.param("x"), mask)
    if name == "segment_softmax":
        return {"x": u(6)}, lambda t: t.segment_softmax(t.param("x"), SEGMENTS, 4)
    if name == "weighted_sum":
        return ({"x": u(6, 3), "w": u(6)},
                lambda t: t.concat(t.weighted_sum(t.param("x"), t.param("w"), SEGMENTS, 4),
                                   t.weighted_sum(t.param("x"), None, SEGMENTS, 4)))
    if name == "mean":
        return {"x": u(6, 3)}, lambda t: t.mean(t.param("x"), SEGMENTS, 4)
    if name == "sum":
        return {"x": u(4, 3)}, lambda t: t.sum(t.param("x"))
    if name == "rowdot":
        return {"x": u(4, 3), "y": u(4, 3)}, lambda t: t.rowdot(t.param("x"), t.param("y"))
    if name == "reshape":
        return {"x": u(4, 3)}, lambda t: t.reshape(t.param("x"), (3, 4))
    if name == "bce":
        labels = np.array([1, 0, 1, 0, 1])
        return ({"p": rng.uniform(0.05, 0.95, size=5)}, lambda t: t.bce(t.param("p"), labels))
    raise KeyError(name)


def check(name, seed):
    arrays, fn = case(name, np.random.default_rng(seed))
    store = store_of(**arrays)

    def builder(s):
        t = Tape(s)
        return t, project(t, fn(t))
    return grad_check(builder, store, tolerance=1e-6)


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", range(3))
def test_primitive_gradients(name, seed):
    report = check(name, seed)
    assert report.passed, report.max_rel_error


def test_mean_over_axis_zero():
    store = store_of(x=np.random.default_rng(0).uniform(-2, 2, size=(5, 3)))

    def builder(s):
        t = Tape(s)
        return t, project(t, t.mean(t.param("x")))
    assert grad_check(builder, store, tolerance=1e-6).passed


def test_affine_on_vector():
    rng = np.random.default_rng(0)
    store = store_of(v=rng.uniform(-2, 2, 3), w=rng.uniform(-2, 2, (3, 2)), b=rng.uniform(-2, 2, 2))

    def builder(s):
        t = Tape(s)
        return t, project(t, t.affine(t.param("v"), t.param("w"), t.param("b")))
    assert grad_check(builder, store, tolerance=1e-6).passed


def test_corrupted_vjp_is_caught(monkeypatch):
    good = OPS["tanh"]
    monkeypatch.setitem(OPS, "tanh", Primitive(good.forward, lambda g, out, x: (g * (1.0 - out),)))
    assert not check("tanh", 0).passed


def test_three_layer_composite():
    rng = np.random.default_rng(3)
    store = store_of(**{f"w{k}": rng.uniform(-1, 1, (3, 3)) for k in range(3)}, x=rng.uniform(-1, 1, (2, 3)))

    def builder(s):
        t = Tape(s)
        h = t.param("x")
        for k in range(3):
            h = t.tanh(t.affine(h, t.param(f"w{k}")))
        return t, t.sum(h)
    report = grad_check(builder, store)
    assert report.passed and report.worst < 1e-4


def test_identity_sum_is_exact():
    store = store_of(w=np.arange(6.0).reshape(2, 3))

    def builder(s):
        t = Tape(s)
        return t, t.sum(t.param("w"))
    assert grad_check(builder, store).worst < 1e-9


def test_forward_examples():
    t = Tape()
    assert t.value(t.sigmoid(t.const(0.0))) == 0.5
    assert t.value(t.concat(t.const(np.ones(4)), t.const(np.ones(4)))).shape == (8,)
    np.testing.assert_array_equal(t.value(t.masked_softmax(t.const([1.0, 1.0]), np.array([True, True]))),
                                  [0.5, 0.5])


def test_backward_examples():
    store = store_of(w=np.array(0.0), unused=np.ones(3))
    t = Tape(store)
    grads = t.backward(t.sigmoid(t.param("w")))
    assert grads["w"] == 0.25
    np.testing.assert_array_equal(grads["unused"], np.zeros(3))


def test_backward_needs_scalar():
    t = Tape(store_of(w=np.ones(2)))
    with pytest.raises(ContractError):
        t.backward(t.tanh(t.param("w")))


def test_shape_and_numeric_errors():
    t = Tape()
    with pytest.raises(ShapeError):
        t.concat(t.const(np.ones((2, 2))), t.const(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        t.affine(t.const(np.ones(3)), t.const(np.ones((2, 2))))
    with pytest.raises(NumericError):
        t.exp(t.const([1000.0]))
    with pytest.raises(ContractError):
        t.masked_softmax(t.const([[1.0, 2.0]]), np.array([[False, False]]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_masked_softmax_normalized(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-30, 30, size=(4, 6))
    mask = rng.random((4, 6)) < 0.6
    mask[np.arange(4), rng.integers(6, size=4)] = True
    t = Tape()
    p = t.value(t.masked_softmax(t.const(x), mask))
    assert (p >= 0).all() and (p[~mask] == 0).all()
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-9


def test_bce_values():
    t = Tape()
    assert math.isclose(float(t.value(t.bce(t.const([0.5, 0.5]), [1, 0]))), math.log(2), rel_tol=1e-12)
    mixed = float(t.value(t.bce(t.const([0.9, 0.2]), [1, 0])))
    assert math.isclose(mixed, -(math.log(0.9) + math.log(0.8)) / 2, rel_tol=1e-12)
    assert round(mixed, 6) == 0.164252
    exact = float(t.value(t.bce(t.const([1.0, 0.0]), [1, 0])))
    assert math.isclose(exact, -math.log(1 - 1e-7), rel_tol=1e-9)


def test_bce_gradient_zero_outside_clamp():
    t = Tape(store_of(p=np.array([0.0, 1.0, 0.5])))
    g = t.backward(t.bce(t.param("p"), [1, 0, 1]))["p"]
    assert g[0] == 0 and g[1] == 0 and g[2] != 0


def test_adagrad_examples():
    s = store_of(w=np.array([0.0, 0.0]))
    adagrad_step(s, {"w": np.array([3.0, 0.0])}, lr=0.001)
    assert math.isclose(s["w"][0], -0.001 * 3 / (3 + 1e-8))
    assert s["w"][1] == 0 and s.accum["w"][1] == 0
    s = store_of(w=np.array([1.0]))
    adagrad_step(s, {"w": np.array([1.0])}, lr=0.1)
    first = s["w"][0]
    adagrad_step(s, {"w": np.array([1.0])}, lr=0.1)
    assert math.isclose(1.0 - first, 0.1, rel_tol=1e-7)
    assert math.isclose(first - s["w"][0], 0.1 / math.sqrt(2), rel_tol=1e-7)


def test_adagrad_shape_mismatch():
    with pytest.raises(ShapeError):
        adagrad_step(store_of(w=np.zeros(2)), {"w": np.zeros(3)}, lr=0.1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_accumulator_non_decreasing(gs):
    s = store_of(w=np.zeros(1))
    prev = 0.0
    for g in gs:
        adagrad_step(s, {"w": np.array([g])}, lr=0.01)
        assert s.accum["w"][0] >= prev >= 0
        prev = s.accum["w"][0]


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    s = ParameterStore()
    s.uniform("a", (3, 2), rng, 0.05)
    s.zeros("b", (2,))
    adagrad_step(s, {"a": np.ones((3, 2)), "b": np.ones(2)}, lr=0.1)
    save_checkpoint(tmp_path / "c.json", s, note="x")
    back, extra = load_checkpoint(tmp_path / "c.json")
    assert extra == {"note": "x"}
    for name in s.names():
        np.testing.assert_array_equal(back[name], s[name])
        np.testing.assert_array_equal(back.accum[name], s.accum[name])
    assert set(json.loads((tmp_path / "c.json").read_text())["params"]) == {"a", "b"}


def test_uniform_init_range():
    s = ParameterStore()
    v = s.uniform("w", (100, 10), np.random.default_rng(0), 0.05)
    assert np.abs(v).max() <= 0.05


def test_module_level_forward_backward():
    s = store_of(w=np.array([0.3, -0.2]))
    t = Tape(s)
    loss = ad.forward(t, "sum", ad.forward(t, "tanh", t.param("w")))
    g = ad.backward(t, loss)["w"]
    np.testing.assert_allclose(g, 1 - np.tanh([0.3, -0.2]) ** 2)
