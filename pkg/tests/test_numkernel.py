import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynmtl.metricsoracle import finite_diff
from dynmtl.numkernel import (AdamState, NumericError, Rng, ShapeError, adam_step, forward_backward,
                              gumbel_from_uniform, parameter, sample_dirichlet, sample_gumbel)
from dynmtl.numkernel import autodiff as ad

from factories import rel_err


def test_square_value_and_grad():
    x = parameter(np.array(3.0))
    val, g = forward_backward(lambda p: ad.mul(p["x"], p["x"]), {"x": x})
    assert val == 9.0 and g["x"] == 6.0


def test_constant_graph_has_zero_grads():
    params = {"a": parameter(np.ones(3)), "b": parameter(np.ones((2, 2)))}
    val, g = forward_backward(lambda p: ad.as_tensor(5.0), params)
    assert val == 5.0
    assert all(np.all(v == 0) for v in g.values())


def _two_layer_loss(arrays, x, y):
    h = ad.relu(ad.affine(x, arrays["W1"], arrays["b1"]))
    return ad.mse(ad.affine(h, arrays["W2"], arrays["b2"]), y)


def test_two_layer_graph_matches_finite_differences():
    rng = Rng(3)
    shapes = {"W1": (4, 6), "b1": (6,), "W2": (6, 2), "b2": (2,)}
    params = {k: parameter(rng.child(k).normal(s)) for k, s in shapes.items()}
    x, y = rng.child("x").normal((8, 4)), rng.child("y").normal((8, 2))
    _, grads = forward_backward(_two_layer_loss, params, x, y)
    picks = rng.child("pick")
    for _ in range(20):
        name = list(shapes)[int(picks.integers(4))]
        idx = int(picks.integers(params[name].data.size))

        def f(v, name=name):
            arrays = {k: ad.constant(p.data) for k, p in params.items()}
            arrays[name] = ad.constant(v)
            return _two_layer_loss(arrays, x, y).item()

        fd = finite_diff(f, params[name].data, coords=[idx]).ravel()[idx]
        assert rel_err(grads[name].ravel()[idx], fd) <= 1e-6


@pytest.mark.parametrize("op", ["softmax", "batch_normalize", "convex_combination",
                                "squared_distance", "tmin", "getitem", "stack", "tanh"])
def test_composite_ops_match_finite_differences(op):
    rng = Rng(11).child(op)
    a0 = rng.child("a").normal((3, 4))
    b0 = rng.child("b").normal((3, 4))
    w = np.abs(rng.child("w").normal((2, 3)))
    w /= w.sum(axis=1, keepdims=True)
    coef = rng.child("c").normal((3, 4)) if op != "convex_combination" else rng.child("c").normal((2, 4))
    build = {
        "softmax": lambda a: ad.softmax(a, axis=-1),
        "batch_normalize": lambda a: ad.batch_normalize(a, np.full(4, 1.3), np.full(4, 0.2)),
        "convex_combination": lambda a: ad.convex_combination(w, a),
        "squared_distance": lambda a: ad.reshape(ad.squared_distance(a, b0), (3, 1)) * np.ones((3, 4)),
        "tmin": lambda a: ad.stack([ad.tmin(a, axis=0)] * 3, axis=0),
        "getitem": lambda a: ad.concatenate([a[1:], a[:1]], axis=0),
        "stack": lambda a: ad.stack([a[0], ad.square(a[1]), a[2]], axis=0),
        "tanh": ad.tanh,
    }[op]
    loss = lambda a: ad.tsum(ad.mul(coef, build(a)))
    _, g = forward_backward(lambda p: loss(p["a"]), {"a": parameter(a0)})
    fd = finite_diff(lambda v: loss(ad.constant(v)).item(), a0)
    assert rel_err(g["a"], fd, floor=1e-3) <= 1e-6


def test_non_finite_result_names_the_op():
    with pytest.raises(NumericError, match="log"):
        ad.log(ad.as_tensor(np.array([-1.0])))


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        ad.add(np.ones((2, 3)), np.ones((4, 3)))
    with pytest.raises(ShapeError):
        forward_backward(lambda p: ad.mul(p["x"], 2.0), {"x": parameter(np.ones(2))})


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.integers(0, 2**32))
def test_softmax_rows_sum_to_one(vals, seed):
    out = ad.softmax(ad.as_tensor(np.array(vals)[None, :])).data
    assert abs(out.sum() - 1.0) <= 1e-12 and np.all(out >= 0)


# ---------------------------------------------------------------- adam

def test_adam_zero_grad_leaves_params():
    p = parameter(np.array([1.0, -2.0]))
    adam_step(AdamState({"p": p}), {"p": np.zeros(2)})
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_descends():
    p = parameter(np.array(1.0))
    adam_step(AdamState({"p": p}, lr=1e-3), {"p": np.array(1.0)})
    assert p.data < 1.0


def test_adam_matches_hand_recurrence():
    p = parameter(np.array(1.0))
    state = AdamState({"p": p}, lr=1e-3)
    x, m, v = 1.0, 0.0, 0.0
    for t in range(1, 4):
        adam_step(state, {"p": np.array(1.0)})
        m = 0.9 * m + 0.1
        v = 0.999 * v + 0.001
        x -= 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert abs(float(p.data) - x) <= 1e-15


def test_adam_rejects_bad_grads():
    p = parameter(np.ones(2))
    with pytest.raises(ShapeError):
        adam_step(AdamState({"p": p}), {"p": np.ones(3)})
    with pytest.raises(FloatingPointError):
        adam_step(AdamState({"p": p}), {"p": np.array([np.nan, 0.0])})


# ---------------------------------------------------------------- sampling

def test_gumbel_closed_form():
    assert abs(gumbel_from_uniform(0.5) - (-np.log(np.log(2.0)))) <= 1e-15
    assert abs(gumbel_from_uniform(0.5) - 0.3665) <= 1e-4


def test_gumbel_mean_is_euler_mascheroni():
    assert abs(sample_gumbel(Rng(0), (10**6,)).mean() - 0.5772) <= 0.005


def test_streams_are_reproducible_and_independent():
    a = sample_gumbel(Rng(5).child("x").child(3), (10,))
    b = sample_gumbel(Rng(5).child("x").child(3), (10,))
    c = sample_gumbel(Rng(5).child("x").child(4), (10,))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_child_stream_unaffected_by_sibling_draws():
    root = Rng(9)
    root.child("a").normal((100,))
    assert np.array_equal(root.child("b").normal((4,)), Rng(9).child("b").normal((4,)))


@given(st.lists(st.floats(0.05, 5.0), min_size=2, max_size=6), st.integers(0, 2**32))
def test_dirichlet_on_simplex(eta, seed):
    r = sample_dirichlet(Rng(seed), np.array(eta))
    assert abs(r.sum() - 1.0) <= 1e-12 and np.all(r >= 0)


def test_dirichlet_moments():
    draws = np.array([sample_dirichlet(Rng(1).child(k), np.full(3, 0.2)) for k in range(20000)])
    assert np.all(np.abs(draws.mean(axis=0) - 1 / 3) <= 0.01)
    assert np.all(np.abs(draws.var(axis=0) - (1 / 3) * (2 / 3) / 1.6) <= 0.005)


def test_dirichlet_rejects_bad_eta():
    with pytest.raises(ValueError):
        sample_dirichlet(Rng(0), np.array([0.2, -1.0]))


def test_seed_range_checked():
    with pytest.raises(ValueError):
        Rng(-1)
