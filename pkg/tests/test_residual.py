import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dilar.dynamics import EnergyGradient, helicopter_energy_gradient
from dilar.errors import DegenerateGradient, InvalidArgument, NotInCone
from dilar.netcore.autodiff import np_softplus
from dilar.netcore.mlp import mlp_forward
from dilar.residual import (
    DissipativeResidual,
    FullStateResidual,
    SoftResidual,
    assemble_psd,
    assemble_skew,
    cone_decompose,
    lower_factor,
)


def quad_grad(n):
    return EnergyGradient(lat_dim=n, fn=lambda x: x[2:])


def test_skew_layout_row_major():
    S = assemble_skew(np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(S, [[0, -1, -2], [1, 0, -3], [2, 3, 0]])


def test_psd_factor_diagonal_softplus():
    L = lower_factor(np.array([0.0, 0.5, -1.0]))
    assert L[0, 0] == pytest.approx(np.log(2.0))
    assert L[1, 0] == 0.5
    assert L[1, 1] == pytest.approx(np_softplus(-1.0))
    assert L[0, 1] == 0.0
    K = assemble_psd(np.array([0.0, 0.5, -1.0]))
    assert np.allclose(K, L @ L.T)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_dissipative_power_nonpositive(n, seed):
    rng = np.random.default_rng(seed)
    res = DissipativeResidual(2, n, 1, (8,), quad_grad(n))
    phi = rng.normal(0, 2, res.param_count)
    x = rng.normal(0, 3, 2 + n)
    u = rng.normal(size=1)
    S, K = res.matrices(x, u, phi)
    assert np.array_equal(S, -S.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-12 * max(1.0, np.abs(K).max())
    assert res.power(x, u, phi) <= 1e-12


def test_lat_dim_one_is_negative_damping():
    res = DissipativeResidual(2, 1, 1, (6,), helicopter_energy_gradient())
    assert res.n_skew == 0
    rng = np.random.default_rng(5)
    phi = rng.normal(size=res.param_count)
    x = np.array([0.2, 0.1, 0.7])
    o = mlp_forward(res.net, phi, np.r_[x, 0.3])[0]
    r = res.eval(x, [0.3], phi)
    assert r[0] == pytest.approx(-np_softplus(o) ** 2 * 0.7, rel=1e-14)
    assert r[0] < 0


def test_residual_shapes():
    g = helicopter_energy_gradient()
    assert SoftResidual(2, 1, 1, (4,), g).net.output_dim == 1
    full = FullStateResidual(2, 1, 1, (4,), g)
    assert full.net.output_dim == 3
    phi = np.random.default_rng(0).normal(size=full.param_count)
    assert full.latent_part(np.zeros(3), [0.0], phi).shape == (1,)
    with pytest.raises(InvalidArgument):
        DissipativeResidual(2, 2, 1, (4,), g)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 6), seed=st.integers(0, 2**32 - 1), depth=st.floats(0.0, 3.0))
def test_cone_decompose_reconstructs(n, seed, depth):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=n)
    r = rng.normal(size=n)
    r = r - (g @ r / (g @ g)) * g - depth * g
    if g @ r > 0:
        r = r - 1e-9 * g
    S, K = cone_decompose(r, g)
    assert np.abs((S - K) @ g - r).max() <= 1e-10
    assert np.allclose(S, -S.T, atol=0)
    assert np.linalg.eigvalsh(K).min() >= -1e-12


def test_cone_decompose_errors():
    with pytest.raises(DegenerateGradient):
        cone_decompose(np.ones(2), np.zeros(2))
    with pytest.raises(NotInCone):
        cone_decompose(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
    with pytest.raises(InvalidArgument):
        cone_decompose(np.ones(2), np.ones(3))
