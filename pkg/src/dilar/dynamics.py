"""State-space models: nominal physics plus an optional residual.

State vectors are flat arrays ordered ``[observed; latent]``. Every function
here is written against numpy operations so it also runs on
:class:`~dilar.netcore.autodiff.Var` inputs for differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from dilar.errors import InvalidArgument
from dilar.netcore import autodiff as ad


@dataclass(frozen=True)
class StateVector:
    obs: np.ndarray
    lat: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(self.obs), np.atleast_1d(self.lat)]).astype(float)

    @classmethod
    def from_flat(cls, x, obs_dim: int) -> "StateVector":
        x = np.asarray(x, dtype=float)
        return cls(x[:obs_dim].copy(), x[obs_dim:].copy())


@dataclass(frozen=True)
class NominalModel:
    """First-principles dynamics ``f_phys(x, u | theta)``."""

    name: str
    obs_dim: int
    lat_dim: int
    input_dim: int
    theta_names: tuple
    fn: Callable

    @property
    def state_dim(self) -> int:
        return self.obs_dim + self.lat_dim

    def eval(self, x, u, theta):
        return self.fn(x, u, theta)


@dataclass(frozen=True)
class EnergyGradient:
    """Gradient of the energy function with respect to the latent block."""

    lat_dim: int
    fn: Callable

    def __call__(self, x):
        return self.fn(x)


def _as_state(x, n):
    if isinstance(x, StateVector):
        x = x.flat
    if not isinstance(x, ad.Var):
        x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != n:
        raise InvalidArgument(f"state has shape {np.shape(x)}, model expects ({n},)")
    return x


def _as_input(u, m):
    if not isinstance(u, ad.Var):
        u = np.atleast_1d(np.asarray(u, dtype=float))
    if len(u) != m:
        raise InvalidArgument(f"input has length {len(u)}, model expects {m}")
    return u


@dataclass(frozen=True)
class ComposedDynamics:
    """``f(x, u) = f_phys(x, u | theta) + residual``.

    Latent-only residuals are added to the latent block; a full-state residual
    (the UDE baseline) is added to every coordinate.
    """

    nominal: NominalModel
    energy_grad: EnergyGradient
    residual: object = None

    @property
    def obs_dim(self) -> int:
        return self.nominal.obs_dim

    @property
    def lat_dim(self) -> int:
        return self.nominal.lat_dim

    @property
    def state_dim(self) -> int:
        return self.nominal.state_dim

    @property
    def input_dim(self) -> int:
        return self.nominal.input_dim

    def eval(self, x, u, params):
        x = _as_state(x, self.state_dim)
        u = _as_input(u, self.input_dim)
        f = self.nominal.eval(x, u, params["theta"])
        if self.residual is None:
            return f
        r = self.residual.eval(x, u, params["phi"])
        if self.residual.latent_only:
            k = self.obs_dim
            return ad.concatenate([f[:k], f[k:] + r])
        return f + r


def eval_dynamics(d: ComposedDynamics, x, u, params):
    return d.eval(x, u, params)


def _helicopter(x, u, theta):
    omega, alpha, alpha_dot = x[0], x[1], x[2]
    k1, k2, k3, k4, k5 = theta[0], theta[1], theta[2], theta[3], theta[4]
    return ad.stack([
        k2 * omega + k3 * omega * omega + k1 * u[0],
        alpha_dot,
        k4 * omega * omega - k5 * ad.sin(alpha),
    ])


def helicopter_nominal() -> NominalModel:
    """Rotor speed ``omega`` (krad/s) and pitch ``alpha`` observed, pitch rate latent."""
    return NominalModel(
        name="helicopter",
        obs_dim=2,
        lat_dim=1,
        input_dim=1,
        theta_names=("k1", "k2", "k3", "k4", "k5"),
        fn=_helicopter,
    )


def _helicopter_energy_grad(x):
    # dV/d(alpha_dot) = I_h * alpha_dot with I_h = 1
    return x[2:3]


def helicopter_energy_gradient() -> EnergyGradient:
    return EnergyGradient(lat_dim=1, fn=_helicopter_energy_grad)
