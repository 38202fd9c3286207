import math

import numpy as np
import pytest

from dilar.dynamics import StateVector, eval_dynamics, helicopter_energy_gradient, helicopter_nominal
from dilar.errors import InvalidArgument
from dilar.models import build_model, init_param_store

THETA = np.array([2.5, -5.0, -1.0, 20.0, 9.81])


def test_helicopter_nominal_closed_form():
    model = build_model("npm")
    params = init_param_store(model, THETA)
    x = np.array([0.3, 0.2, -0.1])
    f = eval_dynamics(model, x, [0.7], params)
    w, a, ad = x
    expected = [
        THETA[1] * w + THETA[2] * w * w + THETA[0] * 0.7,
        ad,
        THETA[3] * w * w - THETA[4] * math.sin(a),
    ]
    assert np.allclose(f, expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize("variant", ["dilar", "dilar_soft"])
def test_latent_residual_leaves_observed_block_bitwise(variant):
    npm = build_model("npm")
    model = build_model(variant, (6,))
    params = init_param_store(model, THETA, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.normal(size=3)
        u = rng.normal(size=1)
        f = model.eval(x, u, params)
        f0 = npm.eval(x, u, {"theta": params["theta"]})
        assert np.array_equal(f[:2], f0[:2])


def test_full_state_residual_touches_every_coordinate():
    model = build_model("ude", (6,))
    params = init_param_store(model, THETA, np.random.default_rng(1))
    x = np.array([0.3, 0.2, -0.1])
    r = model.eval(x, [0.5], params) - build_model("npm").eval(x, [0.5], params)
    assert np.all(r != 0.0)


def test_dimension_errors():
    model = build_model("npm")
    params = init_param_store(model, THETA)
    with pytest.raises(InvalidArgument):
        model.eval(np.zeros(2), [0.0], params)
    with pytest.raises(InvalidArgument):
        model.eval(np.zeros(3), [0.0, 1.0], params)


def test_state_vector_roundtrip():
    s = StateVector.from_flat([1.0, 2.0, 3.0], obs_dim=2)
    assert np.array_equal(s.obs, [1.0, 2.0])
    assert np.array_equal(s.lat, [3.0])
    model = build_model("npm")
    params = init_param_store(model, THETA)
    assert np.array_equal(model.eval(s, [0.1], params), model.eval(s.flat, [0.1], params))


def test_energy_gradient_is_pitch_rate():
    g = helicopter_energy_gradient()
    assert g.lat_dim == 1
    assert np.array_equal(g(np.array([0.4, 0.1, -0.25])), [-0.25])
    assert helicopter_nominal().theta_names == ("k1", "k2", "k3", "k4", "k5")
