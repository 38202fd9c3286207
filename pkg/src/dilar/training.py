"""Rollout losses, the Adam optimiser and the curriculum fit loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from dilar import kernel
from dilar.errors import DegenerateChannel, FitFailure, InvalidArgument, NumericalDivergence
from dilar.integrator import rk4_step
from dilar.netcore import autodiff as ad
from dilar.netcore.params import ParamStore

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class CmseWeights:
    w: np.ndarray
    variances: np.ndarray


def cmse_weights(x_obs, names=None) -> CmseWeights:
    """Per-channel weights ``w_j = sum_k Var_k / Var_j`` (population variance)."""
    x_obs = np.asarray(x_obs, dtype=float)
    if x_obs.ndim == 1:
        x_obs = x_obs[:, None]
    if x_obs.shape[0] < 2:
        raise InvalidArgument("need at least two samples per channel")
    var = x_obs.var(axis=0)
    for j, v in enumerate(var):
        if not v >= VARIANCE_FLOOR:
            raise DegenerateChannel(names[j] if names else j, float(v))
    return CmseWeights(var.sum() / var, var)


def cmse(pred, meas, weights):
    w = weights.w if isinstance(weights, CmseWeights) else np.asarray(weights, dtype=float)
    if len(pred) != len(w) or len(meas) != len(w):
        raise InvalidArgument(f"pred/meas lengths {len(pred)}/{len(meas)} do not match {len(w)} weights")
    e = pred - np.asarray(meas, dtype=float)
    return w @ (e * e)


def _window(dataset, l):
    if not 1 <= l <= len(dataset) - 1:
        raise InvalidArgument(f"window length {l} outside 1..{len(dataset) - 1}")
    return dataset.u[: l + 1], dataset.x_obs[1 : l + 1]


def rollout_loss(model, dataset, l, params, weights, lam=0.0):
    """Sum of CMSE over predictions ``1..l`` plus the optional dissipativity penalty.

    The observed part of the initial state is pinned to the first measurement
    and the latent part is read from ``params["x0_lat"]``. Works with numeric
    params and with tape variables (see :func:`dilar.netcore.gradient_of`).
    """
    u, y = _window(dataset, l)
    x = ad.concatenate([np.asarray(dataset.x_obs[0], dtype=float), params["x0_lat"]])
    m = model.obs_dim
    penalise = lam > 0.0 and model.residual is not None
    total = 0.0
    for i in range(l):
        x = rk4_step(model, x, u[i : i + 1], dataset.h, params, step=i)
        total = total + cmse(x[:m], y[i], weights)
        if penalise:
            p = model.residual.power(x, u[i + 1 : i + 2], params["phi"])
            total = total + lam * ad.relu(p)
    return total


def loss_and_grad(model, dataset, l, params: ParamStore, weights, lam=0.0, use_kernel=True):
    """Loss value and flat gradient; uses the rollout kernel when it covers ``model``."""
    if use_kernel and kernel.plan(model) is not None:
        u, y = _window(dataset, l)
        x0 = np.concatenate([dataset.x_obs[0], params["x0_lat"]])
        w = weights.w if isinstance(weights, CmseWeights) else weights
        return kernel.loss_and_grad(model, params, x0, u, y, w, dataset.h, lam)
    res = ad.gradient_of(lambda p: rollout_loss(model, dataset, l, p, weights, lam), params)
    return res.loss_value, res.gradient


class Adam:
    def __init__(self, size, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, clip_norm=10.0):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x, grad, lr=None, mask=None):
        lr = self.lr if lr is None else lr
        g = np.array(grad, dtype=float)
        if mask is not None:
            g = g * mask
        norm = float(np.linalg.norm(g))
        if self.clip_norm and norm > self.clip_norm:
            g *= self.clip_norm / norm
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return x - lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class CurriculumState:
    l: int
    dl: int
    n: int
    thr_scale: float = 1e-3
    loss_thr: float | None = None
    obs_dim: int = 1

    def __post_init__(self):
        if self.l < 1 or self.dl < 1:
            raise InvalidArgument("initial length and increment must be >= 1")
        self.l = min(self.l, self.n)

    def threshold(self) -> float:
        if self.loss_thr is not None:
            return self.loss_thr
        return self.thr_scale * self.l * self.obs_dim

    def update(self, loss: float) -> bool:
        """Extend the window if ``loss`` is under the threshold; return whether it grew."""
        if loss < self.threshold() and self.l < self.n:
            self.l = min(self.l + self.dl, self.n)
            return True
        return False


@dataclass
class FitConfig:
    max_iters: int = 2000
    lr: float = 1e-3
    lr_final: float | None = None
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float = 10.0
    l0: int = 50
    dl: int = 50
    loss_thr: float | None = None
    loss_thr_scale: float = 1e-3
    lam_diss: float = 0.0
    seed: int = 0
    retry_budget: int = 5
    train: tuple = ("theta", "phi", "x0_lat")
    log_every: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.train = tuple(self.train)
        if self.lam_diss < 0:
            raise InvalidArgument("lam_diss must be >= 0")
        if self.l0 < 1 or self.dl < 1:
            raise InvalidArgument("l0 and dl must be >= 1")
        if self.max_iters < 0:
            raise InvalidArgument("max_iters must be >= 0")

    def lr_at(self, it: int) -> float:
        if self.lr_final is None or self.max_iters <= 1:
            return self.lr
        # cosine decay from lr to lr_final
        frac = it / (self.max_iters - 1)
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1 + math.cos(math.pi * frac))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["train"] = list(self.train)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown fit options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FitReport:
    losses: list
    lengths: list
    extensions: list
    params: ParamStore
    seconds: float
    retries: int = 0
    backend: str = ""
    final_length: int = 0
    weights: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "losses": self.losses,
            "lengths": self.lengths,
            "extensions": self.extensions,
            "final_length": self.final_length,
            "retries": self.retries,
            "backend": self.backend,
            "seconds": self.seconds,
            "cmse_weights": self.weights,
            "params": self.params.to_dict(),
        }


def fit(model, dataset, config: FitConfig, params: ParamStore, weights=None, use_kernel=True) -> FitReport:
    """Curriculum training of ``params`` on the training region of ``dataset``.

    Each iteration rolls the model over the current window, takes one Adam
    step on the parameters listed in ``config.train`` and extends the window
    by ``config.dl`` once the loss drops below the threshold.
    """
    n = dataset.train_steps
    if n < 1:
        raise InvalidArgument("training region needs at least two samples")
    if weights is None:
        weights = cmse_weights(dataset.x_obs[: dataset.split_index])
    mask = np.zeros(params.total_dim)
    for name in config.train:
        if name in params:
            mask[params.slice_of(name)] = 1.0
    cur = CurriculumState(config.l0, config.dl, n, config.loss_thr_scale, config.loss_thr, dataset.obs_dim)
    opt = Adam(params.total_dim, config.lr, config.betas, config.eps, config.clip_norm)
    use_kernel = use_kernel and kernel.plan(model) is not None
    x = params.flatten()
    losses, lengths, extensions = [], [], []
    retries = 0
    lr_factor = 1.0
    prev_x = x
    t0 = time.perf_counter()
    for it in range(config.max_iters):
        store = params.with_flat(x)
        try:
            loss, grad = loss_and_grad(model, dataset, cur.l, store, weights, config.lam_diss, use_kernel)
        except NumericalDivergence as exc:
            retries += 1
            log.warning("iteration %d: rollout diverged at step %d (retry %d)", it, exc.step, retries)
            if retries > config.retry_budget:
                raise FitFailure(
                    f"rollout kept diverging after {config.retry_budget} retries",
                    {"iteration": it, "step": exc.step, "window": cur.l, "params": store.to_dict()},
                ) from exc
            x = prev_x
            lr_factor *= 0.5
            continue
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            retries += 1
            if retries > config.retry_budget:
                raise FitFailure("non-finite loss or gradient", {"iteration": it, "window": cur.l})
            lr_factor *= 0.5
            continue
        losses.append(float(loss))
        lengths.append(cur.l)
        prev_x = x
        x = opt.step(x, grad, config.lr_at(it) * lr_factor, mask)
        if cur.update(loss):
            extensions.append([it, cur.l])
        if config.log_every and it % config.log_every == 0:
            log.info("iter %d  l=%d  loss=%.6g", it, lengths[-1], loss)
    return FitReport(
        losses=losses,
        lengths=lengths,
        extensions=extensions,
        params=params.with_flat(x),
        seconds=time.perf_counter() - t0,
        retries=retries,
        backend=kernel.BACKEND if use_kernel else "tape",
        final_length=cur.l,
        weights=list(map(float, weights.w)),
    )
