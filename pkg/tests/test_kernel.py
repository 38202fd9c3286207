import os
import subprocess
import sys

import numpy as np
import pytest

from dilar import kernel
from dilar.benchmark import ChirpSpec, GroundTruthSpec, generate_ground_truth
from dilar.dynamics import EnergyGradient, NominalModel, ComposedDynamics, helicopter_energy_gradient
from dilar.errors import NumericalDivergence
from dilar.integrator import rollout
from dilar.models import build_model, init_param_store
from dilar.training import cmse_weights

IMPLS = kernel.backends()
THETA0 = (2.4, -4.8, -1.1, 19.0, 9.5)


@pytest.fixture(scope="module")
def data():
    return generate_ground_truth(GroundTruthSpec(), ChirpSpec(duration=20.0))


def _inputs(data, l):
    x0 = np.r_[data.x_obs[0], 0.03]
    return x0, data.u[: l + 1], data.x_obs[1 : l + 1], cmse_weights(data.x_obs).w


def test_backend_selected():
    assert kernel.BACKEND in ("compiled", "python")
    assert "python" in IMPLS


def test_env_var_forces_fallback():
    env = dict(os.environ, DILAR_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from dilar import kernel; print(kernel.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("variant", ["npm", "ude", "dilar_soft", "dilar"])
@pytest.mark.parametrize("lam", [0.0, 5.0])
def test_backends_agree(data, variant, lam):
    if "compiled" not in IMPLS:
        pytest.skip("compiled kernel not built")
    model = build_model(variant, (7, 5))
    params = init_param_store(model, THETA0, np.random.default_rng(11))
    x0, u, y, w = _inputs(data, 80)
    lp, gp = kernel.loss_and_grad(model, params, x0, u, y, w, 0.1, lam, impl=IMPLS["python"])
    lc, gc = kernel.loss_and_grad(model, params, x0, u, y, w, 0.1, lam, impl=IMPLS["compiled"])
    assert lc == pytest.approx(lp, rel=1e-13)
    assert np.abs(gc - gp).max() <= 1e-12 * max(1.0, np.abs(gp).max())


@pytest.mark.parametrize("variant", ["npm", "ude", "dilar"])
def test_simulate_matches_generic_rollout(data, variant):
    model = build_model(variant, (6,))
    params = init_param_store(model, THETA0, np.random.default_rng(2))
    x0 = np.r_[data.x_obs[0], 0.0]
    inputs = data.u[:50]
    ref = rollout(model, x0, [np.atleast_1d(v) for v in inputs], 0.1, params).states
    for impl in IMPLS.values():
        out = kernel.simulate(model, params, x0, inputs, 0.1, impl=impl)
        assert np.allclose(out, ref, rtol=1e-13, atol=1e-14)


def test_divergence_raised_by_every_backend(data):
    model = build_model("npm")
    params = init_param_store(model, (2.0, -4.0, 1e8, 16.0, 8.0))
    x0, u, y, w = _inputs(data, 50)
    for impl in IMPLS.values():
        with pytest.raises(NumericalDivergence):
            kernel.loss_and_grad(model, params, x0, u, y, w, 0.1, impl=impl)
        with pytest.raises(NumericalDivergence):
            kernel.simulate(model, params, x0, u, 0.1, impl=impl)


def test_plan_rejects_foreign_models():
    nominal = NominalModel("lin", 2, 1, 1, ("a",), lambda x, u, th: -th[0] * x)
    model = ComposedDynamics(nominal, helicopter_energy_gradient())
    assert kernel.plan(model) is None
    other = ComposedDynamics(build_model("npm").nominal, EnergyGradient(1, lambda x: 2 * x[2:]))
    assert kernel.plan(other) is None
    assert kernel.plan(build_model("dilar"))[0] == 3
