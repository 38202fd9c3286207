"""Synthetic helicopter benchmark.

A chirp-driven ground-truth simulator adds friction on the pitch joint and a
stray loss on the rotor to the nominal model, the four model variants are
fitted on the first half of the trajectory, and every variant is then rolled
out over the whole trajectory and scored by RMSE on both halves.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from dilar import kernel
from dilar.data import Dataset
from dilar.errors import FitFailure, InvalidArgument, NumericalDivergence
from dilar.integrator import rollout
from dilar.models import DISPLAY_NAMES, VARIANTS, build_model, init_param_store
from dilar.netcore.params import ParamStore, atomic_write_text
from dilar.training import FitConfig, cmse_weights, fit

log = logging.getLogger(__name__)

CHANNELS = ("omega", "alpha")
REGIONS = ("train", "test")


@dataclass(frozen=True)
class ChirpSpec:
    f_start: float = 0.0
    f_end: float = 0.4
    duration: float = 100.0
    amplitude: float = 0.5
    offset: float = 0.5
    h: float = 0.1

    def __post_init__(self):
        if self.f_start > self.f_end:
            raise InvalidArgument("f_start must not exceed f_end")
        if not (self.h > 0 and self.duration > 0):
            raise InvalidArgument("duration and h must be positive")
        self.n_samples  # validates the count

    @property
    def n_samples(self) -> int:
        n = self.duration / self.h
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise InvalidArgument(f"duration {self.duration} is not a multiple of h={self.h}")
        return int(round(n))


def chirp(spec: ChirpSpec):
    """Linear chirp sampled at ``t_i = i h``; returns ``(t, u)``."""
    n = spec.n_samples
    t = np.arange(n) * spec.h
    sweep = (spec.f_end - spec.f_start) / (2.0 * spec.duration)
    u = spec.offset + spec.amplitude * np.sin(2.0 * np.pi * (spec.f_start * t + sweep * t * t))
    return t, u


@dataclass(frozen=True)
class GroundTruthSpec:
    """Truth parameters; the friction and stray-loss terms are absent from the nominal model."""

    theta: tuple = (2.5, -5.0, -1.0, 20.0, 9.81)
    c_viscous: float = 0.3
    c_coulomb: float = 0.02
    eps: float = 0.05
    d_stray: float = 0.2
    noise_std: tuple = (0.002, 0.005)
    seed: int = 0
    substeps: int = 10
    split_index: int = 500
    x0: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        object.__setattr__(self, "noise_std", tuple(float(v) for v in self.noise_std))
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if len(self.theta) != 5:
            raise InvalidArgument("theta needs five values k1..k5")
        for name in ("c_viscous", "c_coulomb", "d_stray"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be >= 0")
        if self.eps <= 0:
            raise InvalidArgument("eps must be > 0")
        if any(s < 0 for s in self.noise_std) or len(self.noise_std) != 2:
            raise InvalidArgument("noise_std needs two non-negative values")
        if self.substeps < 1:
            raise InvalidArgument("substeps must be >= 1")


def _truth_rhs(spec: GroundTruthSpec):
    k1, k2, k3, k4, k5 = spec.theta
    cv, cc, eps, d = spec.c_viscous, spec.c_coulomb, spec.eps, spec.d_stray

    def f(w, a, ad, u):
        return (
            k2 * w + k3 * w * w + k1 * u - d * w * abs(w),
            ad,
            k4 * w * w - k5 * math.sin(a) - cv * ad - cc * math.tanh(ad / eps),
        )

    return f


def simulate_truth(spec: GroundTruthSpec, u, h: float, x0=None) -> np.ndarray:
    """Full truth state ``(omega, alpha, alpha_dot)`` at every sample, ``(len(u), 3)``."""
    f = _truth_rhs(spec)
    w, a, ad = spec.x0 if x0 is None else x0
    dt = h / spec.substeps
    out = np.empty((len(u), 3))
    out[0] = (w, a, ad)
    for i in range(len(u) - 1):
        ui = float(u[i])
        for _ in range(spec.substeps):
            k1 = f(w, a, ad, ui)
            k2 = f(w + 0.5 * dt * k1[0], a + 0.5 * dt * k1[1], ad + 0.5 * dt * k1[2], ui)
            k3 = f(w + 0.5 * dt * k2[0], a + 0.5 * dt * k2[1], ad + 0.5 * dt * k2[2], ui)
            k4 = f(w + dt * k3[0], a + dt * k3[1], ad + dt * k3[2], ui)
            w += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            a += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            ad += dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if not (math.isfinite(w) and math.isfinite(a) and math.isfinite(ad)):
            raise NumericalDivergence(i, out[i].copy(), f"truth simulation diverged at step {i}: {spec}")
        out[i + 1] = (w, a, ad)
    return out


def truth_energy(spec: GroundTruthSpec, states) -> np.ndarray:
    """``V = R_m + P_h + R_h`` with unit inertias and gravity term ``k5 (1 - cos alpha)``."""
    s = np.asarray(states, dtype=float)
    k5 = spec.theta[4]
    return 0.5 * s[:, 0] ** 2 + k5 * (1.0 - np.cos(s[:, 1])) + 0.5 * s[:, 2] ** 2


def generate_ground_truth(spec: GroundTruthSpec, chirp_spec: ChirpSpec) -> Dataset:
    t, u = chirp(chirp_spec)
    states = simulate_truth(spec, u, chirp_spec.h)
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal((len(t), 2)) * np.asarray(spec.noise_std)
    x_obs = states[:, :2] + noise
    return Dataset(t, u, x_obs, chirp_spec.h, min(spec.split_index, len(t)))


# --- evaluation -------------------------------------------------------------


def rmse_block(pred, meas) -> dict:
    """Per-channel RMSE and the pooled RMSE over both channels."""
    e = np.asarray(pred, dtype=float) - np.asarray(meas, dtype=float)
    sq = e * e
    out = {c: float(np.sqrt(sq[:, j].mean())) for j, c in enumerate(CHANNELS)}
    out["overall"] = float(np.sqrt(sq.mean()))
    return out


@dataclass
class EvalResult:
    variant: str
    states: np.ndarray
    train: dict | None
    test: dict | None
    diverged_at: int | None = None
    status: str = "ok"
    residual_power: np.ndarray | None = None

    def test_overall(self) -> float:
        return self.test["overall"] if self.test else math.inf


def predict(model, params, dataset: Dataset) -> np.ndarray:
    """Free-run the model over every sample of ``dataset`` (shape ``(N, state_dim)``)."""
    x0 = np.concatenate([dataset.x_obs[0], params["x0_lat"]])
    inputs = dataset.u[:-1]
    if kernel.plan(model) is not None:
        return kernel.simulate(model, params, x0, inputs, dataset.h)
    return rollout(model, x0, [np.atleast_1d(v) for v in inputs], dataset.h, params).states


def residual_power(model, params, states, u) -> np.ndarray:
    """``g(x_t)^T r(x_t, u_t)`` along a trajectory (zeros without a residual)."""
    if model.residual is None:
        return np.zeros(len(states))
    phi = params["phi"]
    return np.array([
        float(model.residual.power(x, np.atleast_1d(ui), phi)) for x, ui in zip(states, u)
    ])


def evaluate(variant: str, model, params, dataset: Dataset) -> EvalResult:
    split = dataset.split_index
    try:
        states = predict(model, params, dataset)
    except NumericalDivergence as exc:
        log.warning("%s: evaluation rollout diverged at step %d", variant, exc.step)
        return EvalResult(variant, np.empty((0, model.state_dim)), None, None, exc.step, "diverged")
    obs = states[:, : model.obs_dim]
    train = rmse_block(obs[:split], dataset.x_obs[:split])
    test = rmse_block(obs[split:], dataset.x_obs[split:]) if split < len(dataset) else None
    power = residual_power(model, params, states, dataset.u)
    return EvalResult(variant, states, train, test, residual_power=power)


@dataclass
class RmseTable:
    rows: list = field(default_factory=list)

    def add(self, result: EvalResult):
        self.rows.append(result)

    def get(self, variant: str) -> EvalResult:
        for r in self.rows:
            if r.variant == variant:
                return r
        raise KeyError(variant)

    def records(self) -> list:
        out = []
        for r in self.rows:
            for region in REGIONS:
                block = getattr(r, region)
                rec = {"variant": r.variant, "region": region, "status": r.status}
                for key in (*CHANNELS, "overall"):
                    rec[key] = block[key] if block else None
                rec["diverged_at"] = r.diverged_at
                out.append(rec)
        return out

    def to_json(self) -> str:
        return json.dumps({"rows": self.records()}, indent=1)

    def to_csv(self) -> str:
        lines = ["variant,region,omega,alpha,overall,status"]
        for rec in self.records():
            vals = [repr(rec[k]) if rec[k] is not None else "" for k in (*CHANNELS, "overall")]
            status = rec["status"] if rec["diverged_at"] is None else f"diverged@{rec['diverged_at']}"
            lines.append(",".join([rec["variant"], rec["region"], *vals, status]))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        names = [DISPLAY_NAMES.get(r.variant, r.variant) for r in self.rows]
        width = max([10, *(len(n) + 2 for n in names)])
        head = f"{'':6}{'':9}" + "".join(f"{n:>{width}}" for n in names)
        lines = [head, "-" * len(head)]
        for region in REGIONS:
            for key, label in (("omega", "omega"), ("alpha", "alpha"), ("overall", "Overall")):
                cells = []
                for r in self.rows:
                    block = getattr(r, region)
                    if r.status != "ok":
                        cells.append(f"{r.status:>{width}}")
                    elif block is None:
                        cells.append(f"{'-':>{width}}")
                    else:
                        cells.append(f"{block[key]:>{width}.4f}")
                tag = region.capitalize() if key == "omega" else ""
                lines.append(f"{tag:6}{label:9}" + "".join(cells))
            lines.append("-" * len(head))
        return "\n".join(lines)


def trajectory_csv(dataset: Dataset, states) -> str:
    lines = ["t,u,omega_pred,alpha_pred,alphadot_pred"]
    for i in range(len(states)):
        lines.append(",".join(repr(float(v)) for v in (dataset.t[i], dataset.u[i], *states[i])))
    return "\n".join(lines) + "\n"


# --- comparison ---------------------------------------------------------------

_COMPONENTS = {"noise": 0, "npm": 1, "ude": 2, "dilar_soft": 3, "dilar": 4}


def derive_seed(seed: int, component: str) -> int:
    """Independent per-component seed expanded from one top-level seed."""
    ss = np.random.SeedSequence([int(seed), _COMPONENTS[component]])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _default_fit() -> dict:
    return {
        "npm": FitConfig(max_iters=3000, lr=2e-2, lr_final=1e-4, train=("theta", "x0_lat")),
        "ude": FitConfig(max_iters=4000, lr=3e-3, lr_final=1e-4),
        "dilar_soft": FitConfig(max_iters=4000, lr=3e-3, lr_final=1e-4, lam_diss=10.0),
        "dilar": FitConfig(max_iters=4000, lr=3e-3, lr_final=1e-4),
    }


@dataclass
class ComparisonConfig:
    chirp: ChirpSpec = field(default_factory=ChirpSpec)
    truth: GroundTruthSpec = field(default_factory=GroundTruthSpec)
    theta_init: tuple = (2.0, -4.0, -1.5, 16.0, 8.0)
    hidden: tuple = (12, 12)
    fit: dict = field(default_factory=_default_fit)
    variants: tuple = VARIANTS
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.variants = tuple(self.variants)
        for v in self.variants:
            if v not in VARIANTS:
                raise InvalidArgument(f"unknown variant {v!r}")
        missing = [v for v in self.variants if v not in self.fit]
        if missing:
            raise InvalidArgument(f"no fit config for {missing}")

    @classmethod
    def from_dict(cls, d: dict) -> "ComparisonConfig":
        d = dict(d)
        kw = {}
        if "chirp" in d:
            kw["chirp"] = ChirpSpec(**d.pop("chirp"))
        if "truth" in d:
            kw["truth"] = GroundTruthSpec(**d.pop("truth"))
        fits = _default_fit()
        for name, opts in d.pop("fit", {}).items():
            base = fits[name].to_dict() if name in fits else {}
            fits[name] = FitConfig.from_dict({**base, **opts})
        kw["fit"] = fits
        for key in ("theta_init", "hidden", "variants"):
            if key in d:
                kw[key] = tuple(d.pop(key))
        for key in ("seed", "workers"):
            if key in d:
                kw[key] = int(d.pop(key))
        if d:
            raise InvalidArgument(f"unknown comparison options: {sorted(d)}")
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "chirp": asdict(self.chirp),
            "truth": asdict(self.truth),
            "theta_init": list(self.theta_init),
            "hidden": list(self.hidden),
            "fit": {k: v.to_dict() for k, v in self.fit.items()},
            "variants": list(self.variants),
            "seed": self.seed,
            "workers": self.workers,
        }


@dataclass
class ComparisonResult:
    table: RmseTable
    dataset: Dataset
    params: dict
    reports: dict
    failures: dict
    hidden: tuple = (12, 12)


def fit_variant(variant, dataset, fit_config, theta0, hidden, seed):
    """Build, initialise and fit one variant; returns ``(params, report)``."""
    model = build_model(variant, hidden)
    rng = np.random.default_rng(seed)
    params = init_param_store(model, theta0, rng)
    report = fit(model, dataset, fit_config, params)
    return report.params, report


def _fit_job(args):
    variant = args[0]
    try:
        return variant, fit_variant(*args), None
    except FitFailure as exc:
        return variant, None, str(exc)


def run_comparison(config: ComparisonConfig) -> ComparisonResult:
    truth = replace(config.truth, seed=derive_seed(config.seed, "noise"))
    dataset = generate_ground_truth(truth, config.chirp)
    train = dataset.head(dataset.split_index)
    params, reports, failures = {}, {}, {}

    theta_seed = tuple(config.theta_init)
    jobs = []
    if "npm" in config.variants:
        v, res, err = _fit_job(("npm", train, config.fit["npm"], theta_seed, config.hidden,
                                derive_seed(config.seed, "npm")))
        if err is None:
            params["npm"], reports["npm"] = res
            theta_seed = tuple(res[0]["theta"])
        else:
            failures["npm"] = err
    for v in config.variants:
        if v != "npm":
            jobs.append((v, train, config.fit[v], theta_seed, config.hidden, derive_seed(config.seed, v)))

    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_fit_job, jobs))
    else:
        outcomes = [_fit_job(j) for j in jobs]
    for v, res, err in outcomes:
        if err is None:
            params[v], reports[v] = res
        else:
            failures[v] = err

    table = RmseTable()
    for v in config.variants:
        if v in params:
            table.add(evaluate(v, build_model(v, config.hidden), params[v], dataset))
        else:
            table.add(EvalResult(v, np.empty((0, 3)), None, None, status="failed"))
    return ComparisonResult(table, dataset, params, reports, failures, tuple(config.hidden))


def write_comparison(result: ComparisonResult, out_dir) -> dict:
    """Write table (CSV, JSON, text), per-variant trajectories and checkpoints."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "table_csv": os.path.join(out_dir, "rmse_table.csv"),
        "table_json": os.path.join(out_dir, "rmse_table.json"),
        "table_txt": os.path.join(out_dir, "rmse_table.txt"),
        "dataset": os.path.join(out_dir, "dataset.csv"),
    }
    atomic_write_text(paths["table_csv"], result.table.to_csv())
    atomic_write_text(paths["table_json"], result.table.to_json())
    atomic_write_text(paths["table_txt"], result.table.to_text() + "\n")
    result.dataset.save(paths["dataset"])
    for row in result.table.rows:
        if row.status == "ok":
            p = os.path.join(out_dir, f"trajectory_{row.variant}.csv")
            atomic_write_text(p, trajectory_csv(result.dataset, row.states))
            paths[f"trajectory_{row.variant}"] = p
    for v, params in result.params.items():
        p = os.path.join(out_dir, f"checkpoint_{v}.json")
        params.save(p, meta={"variant": v, "hidden": list(result.hidden)})
        paths[f"checkpoint_{v}"] = p
    return paths
