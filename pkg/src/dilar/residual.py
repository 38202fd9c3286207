"""Residual networks that augment the nominal dynamics.

:class:`DissipativeResidual` is the structured form ``r = (S - K) g(x)`` with
``S`` skew-symmetric and ``K = L L^T``; whatever the network weights, the
residual never adds energy (``g^T r <= 0``). :class:`SoftResidual` and
:class:`FullStateResidual` are the unconstrained baselines.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from dilar.dynamics import EnergyGradient
from dilar.errors import DegenerateGradient, InvalidArgument, NotInCone
from dilar.netcore import autodiff as ad
from dilar.netcore.mlp import MlpSpec, mlp_forward


def _triangular_root(m: int, strict: bool) -> int:
    # m = n(n-1)/2 (strict) or n(n+1)/2
    disc = 1 + 8 * m
    r = math.isqrt(disc)
    if r * r != disc:
        return -1
    return (1 + r) // 2 if strict else (r - 1) // 2


@lru_cache(maxsize=None)
def _skew_scatter(n: int) -> np.ndarray:
    m = n * (n - 1) // 2
    P = np.zeros((n * n, m))
    k = 0
    for i in range(n):
        for j in range(i):
            P[i * n + j, k] = 1.0
            P[j * n + i, k] = -1.0
            k += 1
    P.setflags(write=False)
    return P


@lru_cache(maxsize=None)
def _lower_scatter(n: int):
    diag_idx, off_idx = [], []
    k = 0
    for i in range(n):
        for j in range(i + 1):
            (diag_idx if i == j else off_idx).append((k, i * n + j))
            k += 1
    Pd = np.zeros((n * n, len(diag_idx)))
    Po = np.zeros((n * n, len(off_idx)))
    for c, (_, pos) in enumerate(diag_idx):
        Pd[pos, c] = 1.0
    for c, (_, pos) in enumerate(off_idx):
        Po[pos, c] = 1.0
    for P in (Pd, Po):
        P.setflags(write=False)
    return Pd, Po, np.array([k for k, _ in diag_idx]), np.array([k for k, _ in off_idx], dtype=int)


def assemble_skew(entries, n: int | None = None):
    """Skew-symmetric matrix from its strict lower triangle (row-major order)."""
    m = len(entries)
    if n is None:
        n = _triangular_root(m, strict=True)
        if n < 0:
            raise InvalidArgument(f"{m} entries is not a triangular number n(n-1)/2")
    elif m != n * (n - 1) // 2:
        raise InvalidArgument(f"skew matrix of size {n} needs {n * (n - 1) // 2} entries, got {m}")
    if m == 0:
        return np.zeros((n, n))
    return (_skew_scatter(n) @ entries).reshape(n, n)


def lower_factor(entries, n: int | None = None):
    """Lower-triangular ``L`` with softplus on the diagonal."""
    m = len(entries)
    if n is None:
        n = _triangular_root(m, strict=False)
        if n < 1:
            raise InvalidArgument(f"{m} entries is not a triangular number n(n+1)/2")
    elif m != n * (n + 1) // 2:
        raise InvalidArgument(f"factor of size {n} needs {n * (n + 1) // 2} entries, got {m}")
    Pd, Po, di, oi = _lower_scatter(n)
    L = Pd @ ad.softplus(entries[di])
    if len(oi):
        L = L + Po @ entries[oi]
    return L.reshape(n, n)


def assemble_psd(entries, n: int | None = None):
    """``K = L L^T``; symmetric positive definite for any finite entries."""
    L = lower_factor(entries, n)
    return L @ L.T


class _ResidualBase:
    latent_only = True

    def __init__(self, net: MlpSpec, energy_grad: EnergyGradient, state_dim: int, input_dim: int):
        if net.input_dim != state_dim + input_dim:
            raise InvalidArgument(
                f"network input_dim {net.input_dim} != state_dim + input_dim = {state_dim + input_dim}"
            )
        self.net = net
        self.energy_grad = energy_grad
        self.state_dim = state_dim
        self.input_dim = input_dim
        self.lat_dim = energy_grad.lat_dim

    @property
    def param_count(self) -> int:
        return self.net.param_count

    def _net(self, x, u, phi):
        if len(x) != self.state_dim:
            raise InvalidArgument(f"state has length {len(x)}, residual expects {self.state_dim}")
        if len(u) != self.input_dim:
            raise InvalidArgument(f"input has length {len(u)}, residual expects {self.input_dim}")
        return mlp_forward(self.net, phi, ad.concatenate([x, u]))

    def latent_part(self, x, u, phi):
        return self.eval(x, u, phi)

    def power(self, x, u, phi):
        """``g(x)^T r_lat(x, u)``; positive values inject energy."""
        g = self.energy_grad(x)
        return g @ self.latent_part(x, u, phi)

    def describe(self) -> dict:
        return {"kind": self.kind, "net": self.net.to_dict()}


class DissipativeResidual(_ResidualBase):
    """``r(x, u) = (S(x, u) - K(x, u)) g(x)`` from a single network.

    The network output is split into the strict lower triangle of ``S``
    followed by the lower triangle of ``L`` (diagonal through softplus).
    """

    kind = "dissipative"

    def __init__(self, obs_dim, lat_dim, input_dim, hidden_dims, energy_grad):
        if energy_grad.lat_dim != lat_dim:
            raise InvalidArgument("energy gradient dimension does not match lat_dim")
        self.n_skew = lat_dim * (lat_dim - 1) // 2
        self.n_factor = lat_dim * (lat_dim + 1) // 2
        net = MlpSpec(obs_dim + lat_dim + input_dim, tuple(hidden_dims), self.n_skew + self.n_factor)
        super().__init__(net, energy_grad, obs_dim + lat_dim, input_dim)

    def matrices(self, x, u, phi):
        out = self._net(x, u, phi)
        n = self.lat_dim
        S = assemble_skew(out[: self.n_skew], n)
        K = assemble_psd(out[self.n_skew:], n)
        return S, K

    def eval(self, x, u, phi):
        S, K = self.matrices(x, u, phi)
        g = self.energy_grad(x)
        if self.n_skew == 0:
            return -(K @ g)
        return (S - K) @ g


class SoftResidual(_ResidualBase):
    """Unconstrained latent residual; dissipativity is only penalised in the loss."""

    kind = "soft"

    def __init__(self, obs_dim, lat_dim, input_dim, hidden_dims, energy_grad):
        net = MlpSpec(obs_dim + lat_dim + input_dim, tuple(hidden_dims), lat_dim)
        super().__init__(net, energy_grad, obs_dim + lat_dim, input_dim)

    def eval(self, x, u, phi):
        return self._net(x, u, phi)


class FullStateResidual(_ResidualBase):
    """Unconstrained residual on every state coordinate (UDE baseline)."""

    kind = "full"
    latent_only = False

    def __init__(self, obs_dim, lat_dim, input_dim, hidden_dims, energy_grad):
        n = obs_dim + lat_dim
        net = MlpSpec(n + input_dim, tuple(hidden_dims), n)
        super().__init__(net, energy_grad, n, input_dim)
        self.obs_dim = obs_dim

    def eval(self, x, u, phi):
        return self._net(x, u, phi)

    def latent_part(self, x, u, phi):
        return self.eval(x, u, phi)[self.obs_dim:]


def eval_residual(r, x, u, phi):
    return r.eval(x, u, phi)


def cone_decompose(r, g, slack: float = 1e-12):
    """Skew ``S`` and rank-one PSD ``K`` with ``(S - K) g = r``.

    ``r`` must lie in the dissipative cone ``g^T r <= 0``; values of ``g^T r``
    up to ``slack * |g| |r|`` are treated as rounding and clipped to zero.
    """
    r = np.asarray(r, dtype=float)
    g = np.asarray(g, dtype=float)
    if r.shape != g.shape or r.ndim != 1:
        raise InvalidArgument(f"r and g must be vectors of equal length, got {r.shape}, {g.shape}")
    gg = float(g @ g)
    if gg == 0.0:
        raise DegenerateGradient("energy gradient is zero; every direction is admissible")
    gr = float(g @ r)
    if gr > slack * math.sqrt(gg) * float(np.linalg.norm(r)):
        raise NotInCone(f"g^T r = {gr:.6g} > 0: direction injects energy")
    beta = gr / gg
    r_perp = r - beta * g
    gamma = max(-beta, 0.0)
    K = gamma * np.outer(g, g) / gg
    S = (np.outer(r_perp, g) - np.outer(g, r_perp)) / gg
    return S, K
