"""Fixed-step RK4 with the input held constant over each step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dilar.errors import InvalidArgument, NumericalDivergence
from dilar.netcore import autodiff as ad


@dataclass(frozen=True)
class RolloutResult:
    """``states[i]`` is the state after ``i`` steps; ``states[0]`` is the initial state.

    ``states`` is an ``(l + 1, n)`` array for numeric rollouts and a list of
    tape variables when the rollout is being differentiated.
    """

    states: object
    h: float

    def __len__(self):
        return len(self.states)


def _finite(x) -> bool:
    return bool(np.all(np.isfinite(ad.value_of(x))))


def rk4_step(d, x, u, h: float, params, step: int = 0):
    """One classical RK4 step of ``x' = d.eval(x, u, params)``."""
    if not h > 0:
        raise InvalidArgument(f"step size must be positive, got {h}")
    k1 = d.eval(x, u, params)
    k2 = d.eval(x + (0.5 * h) * k1, u, params)
    k3 = d.eval(x + (0.5 * h) * k2, u, params)
    k4 = d.eval(x + h * k3, u, params)
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not _finite(x_next):
        raise NumericalDivergence(step, np.array(ad.value_of(x), dtype=float))
    return x_next


def rollout(d, x0, inputs, h: float, params) -> RolloutResult:
    """Apply :func:`rk4_step` once per input sample."""
    if len(inputs) == 0:
        raise InvalidArgument("rollout needs at least one input sample")
    if not isinstance(x0, ad.Var):
        x0 = np.asarray(getattr(x0, "flat", x0), dtype=float)
    if not _finite(x0):
        raise InvalidArgument("initial state is not finite")
    states = [x0]
    x = x0
    for i, u in enumerate(inputs):
        x = rk4_step(d, x, u, h, params, step=i)
        states.append(x)
    if any(isinstance(s, ad.Var) for s in states):
        return RolloutResult(states, h)
    return RolloutResult(np.array(states, dtype=float), h)
