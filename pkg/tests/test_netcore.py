import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dilar.errors import DataError, InvalidArgument, UnsupportedOperation
from dilar.netcore import autodiff as ad
from dilar.netcore.mlp import MlpSpec, init_params, mlp_forward
from dilar.netcore.params import ParamStore


def fd_grad(f, x, eps=1e-6):
    g = np.empty_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


def assert_grad_close(a, b, rel=1e-5, floor=1e-8):
    err = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    assert err.max() <= rel, err.max()


# --- ParamStore ---------------------------------------------------------------

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(a=arrays(float, st.integers(1, 6), elements=finite), b=arrays(float, st.integers(0, 4), elements=finite))
def test_json_roundtrip_is_exact(a, b):
    store = ParamStore([("theta", a), ("x0_lat", b)])
    back = ParamStore.from_json(store.to_json())
    assert back.names == ("theta", "x0_lat")
    assert np.array_equal(back.flatten(), store.flatten())


def test_flatten_unflatten_and_views():
    store = ParamStore([("a", [1.0, 2.0]), ("b", np.arange(6.0).reshape(2, 3))])
    assert store.total_dim == 8
    flat = store.flatten()
    parts = store.unflatten(flat)
    assert parts["b"].shape == (6,)
    with pytest.raises(ValueError):
        store["a"][0] = 5.0
    other = store.with_flat(flat * 2)
    assert other.same_layout(store)
    assert np.array_equal(other["a"], [2.0, 4.0])
    assert np.array_equal(store["a"], [1.0, 2.0])


def test_duplicate_names_rejected():
    with pytest.raises(InvalidArgument):
        ParamStore([("a", [1.0]), ("a", [2.0])])


def test_save_load_with_meta(tmp_path):
    store = ParamStore([("theta", [0.1, 1 / 3])])
    path = tmp_path / "ck.json"
    store.save(path, meta={"variant": "npm"})
    raw = json.loads(path.read_text())
    assert raw["meta"] == {"variant": "npm"}
    assert np.array_equal(ParamStore.load(path)["theta"], [0.1, 1 / 3])


def test_malformed_checkpoint():
    with pytest.raises(DataError):
        ParamStore.from_json("{\"entries\": [{\"nome\": 1}]}")
    with pytest.raises(DataError):
        ParamStore.from_json("not json")


# --- MLP ----------------------------------------------------------------------


def test_mlp_param_count_and_init():
    spec = MlpSpec(4, (12, 12), 1)
    assert spec.param_count == 4 * 12 + 12 + 12 * 12 + 12 + 12 + 1
    p = init_params(spec, np.random.default_rng(0))
    assert p.shape == (spec.param_count,)
    # first layer weights bounded by 1/sqrt(fan_in), biases zero
    assert np.abs(p[:48]).max() <= 0.5
    assert np.all(p[48:60] == 0.0)


def test_mlp_dimension_error_names_mismatch():
    spec = MlpSpec(4, (8,), 2)
    p = init_params(spec, np.random.default_rng(0))
    with pytest.raises(InvalidArgument, match="4"):
        mlp_forward(spec, p, np.zeros(3))


def test_mlp_softplus_output_positive():
    spec = MlpSpec(3, (5,), 2, output_activation="softplus")
    p = np.random.default_rng(1).normal(0, 3, spec.param_count)
    out = mlp_forward(spec, p, np.array([1.0, -2.0, 0.5]))
    assert np.all(out > 0)


def test_mlp_spec_roundtrip_and_validation():
    spec = MlpSpec(4, (3, 2), 1, output_activation="softplus")
    assert MlpSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(InvalidArgument):
        MlpSpec(4, (3,), 1, output_activation="relu6")
    with pytest.raises(InvalidArgument):
        MlpSpec(0, (3,), 1)


# --- tape autodiff ------------------------------------------------------------


def test_gradient_of_mlp_matches_fd():
    spec = MlpSpec(3, (6, 5), 2)
    rng = np.random.default_rng(3)
    store = ParamStore([("w", init_params(spec, rng)), ("x", rng.normal(size=3))])

    def loss(p):
        out = mlp_forward(spec, p["w"], p["x"])
        return ad.square(out).sum() + ad.softplus(out[0]) * ad.sin(p["x"][1])

    res = ad.gradient_of(loss, store)
    fd = fd_grad(lambda v: float(loss(store.unflatten(v))), store.flatten())
    assert_grad_close(res.gradient, fd)


def test_elementwise_ops_gradients():
    x0 = np.array([0.3, -0.7, 1.2])
    store = ParamStore([("x", x0)])

    def loss(p):
        x = p["x"]
        y = ad.stack([x[0] * x[1], x[2] / (1.0 + x[0] * x[0]), ad.cos(x[1]) - x[2] ** 3])
        z = ad.concatenate([y, ad.tanh(x), ad.relu(x)])
        return (z @ z) + 2.0 - x.sum()

    res = ad.gradient_of(loss, store)
    fd = fd_grad(lambda v: float(loss(store.unflatten(v))), x0.copy())
    assert_grad_close(res.gradient, fd)


def test_numpy_dispatch_through_var():
    store = ParamStore([("x", [0.5, 2.0])])

    def loss(p):
        x = p["x"]
        return np.sum(np.tanh(x) * np.sin(x)) + np.dot(x, x)

    res = ad.gradient_of(loss, store)
    fd = fd_grad(lambda v: float(loss(store.unflatten(v))), np.array([0.5, 2.0]))
    assert_grad_close(res.gradient, fd)


def test_unsupported_primitive_raises():
    store = ParamStore([("x", [0.5, 2.0])])
    with pytest.raises(UnsupportedOperation):
        ad.gradient_of(lambda p: np.exp(p["x"]).sum(), store)
    with pytest.raises(UnsupportedOperation):
        ad.gradient_of(lambda p: float(p["x"][0]), store)


def test_np_softplus_is_stable():
    v = ad.np_softplus(np.array([-800.0, 0.0, 800.0]))
    assert np.all(np.isfinite(v))
    assert v[1] == pytest.approx(np.log(2.0))
    assert v[2] == 800.0
