"""Backend selection for the helicopter rollout kernel.

The compiled extension is used when it imports; otherwise, or when the
``DILAR_PURE_PYTHON`` environment variable is set, the pure-Python module
with the same contract is used. Models the kernel does not cover (other
nominal models, multi-dimensional latent blocks) go through the generic
tape-based path in :mod:`dilar.training`.
"""

from __future__ import annotations

import os

import numpy as np

from dilar import _rollout_py
from dilar.errors import NumericalDivergence

if os.environ.get("DILAR_PURE_PYTHON"):
    _impl = _rollout_py
else:
    try:
        from dilar import _rollout as _impl
    except ImportError:  # extension not built
        _impl = _rollout_py

BACKEND = "python" if _impl is _rollout_py else "compiled"

_KIND_CODES = {"full": 1, "soft": 2, "dissipative": 3}


def backends() -> dict:
    """All importable implementations keyed by name."""
    out = {"python": _rollout_py}
    try:
        from dilar import _rollout
        out["compiled"] = _rollout
    except ImportError:
        pass
    return out


def plan(model):
    """``(kind_code, layer_sizes)`` if the kernel covers ``model``, else ``None``."""
    from dilar.dynamics import _helicopter, _helicopter_energy_grad

    if model.nominal.fn is not _helicopter or model.energy_grad.fn is not _helicopter_energy_grad:
        return None
    res = model.residual
    if res is None:
        return 0, (4, 1)
    code = _KIND_CODES.get(getattr(res, "kind", None))
    if code is None or res.net.output_activation != "identity":
        return None
    if res.energy_grad.fn is not _helicopter_energy_grad:
        return None
    return code, res.net.sizes


def _phi(params):
    return np.asarray(params["phi"], dtype=float) if "phi" in params else np.zeros(0)


def simulate(model, params, x0, inputs, h, impl=None):
    """States ``(len(inputs) + 1, 3)``; raises :class:`NumericalDivergence`."""
    kind, sizes = plan(model)
    impl = impl or _impl
    states, bad = impl.simulate(
        np.asarray(params["theta"], dtype=float), _phi(params), np.asarray(x0, dtype=float),
        np.asarray(inputs, dtype=float).reshape(-1), float(h), sizes, kind,
    )
    if bad >= 0:
        raise NumericalDivergence(bad, states[-1])
    return states


def loss_and_grad(model, params, x0, u, y, w, h, lam=0.0, want_grad=True, impl=None):
    """Windowed rollout loss and its gradient laid out like ``params``.

    ``u`` holds ``u_0 .. u_l`` and ``y`` the measurements ``y_1 .. y_l``.
    """
    kind, sizes = plan(model)
    impl = impl or _impl
    loss, gt, gp, gx, bad, last = impl.rollout_loss_grad(
        np.asarray(params["theta"], dtype=float), _phi(params), np.asarray(x0, dtype=float),
        np.asarray(u, dtype=float).reshape(-1), np.asarray(y, dtype=float),
        np.asarray(w, dtype=float), float(h), sizes, kind, float(lam), want_grad,
    )
    if bad >= 0:
        raise NumericalDivergence(bad, last)
    if not want_grad:
        return loss, None
    grad = np.zeros(params.total_dim)
    grad[params.slice_of("theta")] = gt
    if "phi" in params:
        grad[params.slice_of("phi")] = gp
    if "x0_lat" in params:
        grad[params.slice_of("x0_lat")] = gx[model.obs_dim:]
    return loss, grad
