"""The four model variants compared on the helicopter benchmark."""

from __future__ import annotations

import numpy as np

from dilar.dynamics import ComposedDynamics, helicopter_energy_gradient, helicopter_nominal
from dilar.errors import InvalidArgument
from dilar.netcore.mlp import init_params
from dilar.netcore.params import ParamStore
from dilar.residual import DissipativeResidual, FullStateResidual, SoftResidual

VARIANTS = ("npm", "ude", "dilar_soft", "dilar")
DISPLAY_NAMES = {"npm": "NPM", "ude": "UDE", "dilar_soft": "DiLaR-Soft", "dilar": "DiLaR"}
DEFAULT_HIDDEN = (12, 12)

_RESIDUALS = {"ude": FullStateResidual, "dilar_soft": SoftResidual, "dilar": DissipativeResidual}


def build_model(variant: str, hidden=DEFAULT_HIDDEN, nominal=None, energy_grad=None) -> ComposedDynamics:
    if variant not in VARIANTS:
        raise InvalidArgument(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    nominal = nominal or helicopter_nominal()
    energy_grad = energy_grad or helicopter_energy_gradient()
    residual = None
    if variant != "npm":
        residual = _RESIDUALS[variant](
            nominal.obs_dim, nominal.lat_dim, nominal.input_dim, tuple(hidden), energy_grad
        )
    return ComposedDynamics(nominal, energy_grad, residual)


def init_param_store(model: ComposedDynamics, theta0, rng=None, x0_lat=None) -> ParamStore:
    """Entries ``theta``, ``phi`` (if the model has a residual) and ``x0_lat``."""
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (len(model.nominal.theta_names),):
        raise InvalidArgument(
            f"theta has shape {theta0.shape}, model needs ({len(model.nominal.theta_names)},)"
        )
    rng = rng if rng is not None else np.random.default_rng(0)
    entries = [("theta", theta0)]
    if model.residual is not None:
        entries.append(("phi", init_params(model.residual.net, rng)))
    lat = np.zeros(model.lat_dim) if x0_lat is None else np.asarray(x0_lat, dtype=float)
    entries.append(("x0_lat", lat))
    return ParamStore(entries)
