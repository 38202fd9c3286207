"""Command-line front end: ``dilar generate|fit|eval|compare``.

Every command reads one JSON config (``--config``) whose top level holds a
``seed`` and one section per command. ``--set a.b=value`` overrides any key by
its dotted path; the value is parsed as JSON when possible, otherwise kept as a
string. Exit codes: 0 success, 1 I/O error, 2 usage or config error, 3 data
error, 4 fit failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from dilar import benchmark
from dilar.data import Dataset
from dilar.errors import (
    DataError,
    DegenerateChannel,
    FitFailure,
    InvalidArgument,
    NumericalDivergence,
)
from dilar.models import DEFAULT_HIDDEN, VARIANTS, build_model, init_param_store
from dilar.netcore.params import ParamStore, atomic_write_text
from dilar.training import FitConfig, fit

log = logging.getLogger("dilar")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_DATA, EXIT_FIT = 0, 1, 2, 3, 4

COMMANDS = ("generate", "fit", "eval", "compare")

DEFAULTS = {
    "seed": 0,
    "generate": {"chirp": {}, "truth": {}, "out": "dataset.csv"},
    "fit": {
        "variant": "dilar",
        "dataset": "dataset.csv",
        "split_index": None,
        "hidden": list(DEFAULT_HIDDEN),
        "theta_init": list(benchmark.ComparisonConfig().theta_init),
        "options": None,
        "checkpoint": "checkpoint.json",
        "report": "fit_report.json",
    },
    "eval": {
        "checkpoint": "checkpoint.json",
        "dataset": "dataset.csv",
        "split_index": None,
        "report": "eval_report.json",
        "trajectory": None,
    },
    "compare": {"out_dir": "compare_out"},
}


class UsageError(InvalidArgument):
    pass


# --- config -------------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply one ``dotted.path=value`` override in place."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise UsageError(f"--set expects key=value, got {assignment!r}")
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        child = node.get(p)
        if child is None:
            child = node[p] = {}
        elif not isinstance(child, dict):
            raise UsageError(f"--set {key}: {p!r} is not a section")
        node = child
    node[parts[-1]] = _parse_value(raw)


def load_config(path=None, overrides=(), seed=None, workers=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise UsageError("config must be a JSON object")
        cfg = _merge(cfg, user)
    for item in overrides:
        apply_override(cfg, item)
    if seed is not None:
        cfg["seed"] = seed
    if workers is not None:
        cfg["compare"]["workers"] = workers
    if not isinstance(cfg["seed"], int):
        raise UsageError(f"seed must be an integer, got {cfg['seed']!r}")
    return cfg


def _spec(cls, d, what):
    try:
        return cls(**(d or {}))
    except TypeError as exc:
        raise UsageError(f"bad {what} section: {exc}") from exc


def _writable(path, what):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UsageError(f"{what}: directory {parent} does not exist")
    if not os.access(parent, os.W_OK):
        raise UsageError(f"{what}: directory {parent} is not writable")


def _existing(path, what):
    if not path or not os.path.isfile(path):
        raise UsageError(f"{what} {path!r} not found")


def sidecar_path(dataset_path) -> str:
    return os.path.splitext(dataset_path)[0] + ".json"


def _load_dataset(path, split_index):
    if split_index is None:
        side = sidecar_path(path)
        if os.path.isfile(side):
            try:
                with open(side) as fh:
                    split_index = json.load(fh).get("split_index")
            except (OSError, json.JSONDecodeError) as exc:
                raise DataError(f"cannot read sidecar {side}: {exc}") from exc
    return Dataset.load(path, split_index)


def _write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=1) + "\n")


# --- commands -----------------------------------------------------------------


def cmd_generate(cfg: dict) -> int:
    sec = cfg["generate"]
    out = sec["out"]
    _writable(out, "generate.out")
    chirp = _spec(benchmark.ChirpSpec, sec.get("chirp"), "generate.chirp")
    truth = _spec(benchmark.GroundTruthSpec, sec.get("truth"), "generate.truth")
    truth = replace(truth, seed=benchmark.derive_seed(cfg["seed"], "noise"))
    try:
        dataset = benchmark.generate_ground_truth(truth, chirp)
    except NumericalDivergence as exc:
        raise DataError(f"ground truth diverged at step {exc.step} with {asdict(truth)}") from exc
    dataset.save(out)
    _write_json(sidecar_path(out), {
        "seed": cfg["seed"],
        "split_index": dataset.split_index,
        "samples": len(dataset),
        "chirp": asdict(chirp),
        "truth": asdict(truth),
    })
    print(f"wrote {len(dataset)} samples to {out}")
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    sec = cfg["fit"]
    variant = sec["variant"]
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    _existing(sec["dataset"], "dataset")
    _writable(sec["checkpoint"], "fit.checkpoint")
    _writable(sec["report"], "fit.report")
    options = sec.get("options")
    if options is None:
        fit_config = benchmark.ComparisonConfig().fit[variant]
    else:
        base = benchmark.ComparisonConfig().fit[variant].to_dict()
        fit_config = FitConfig.from_dict({**base, **options})

    dataset = _load_dataset(sec["dataset"], sec.get("split_index"))
    train = dataset.head(dataset.split_index)
    hidden = tuple(sec["hidden"])
    model = build_model(variant, hidden)
    rng = np.random.default_rng(benchmark.derive_seed(cfg["seed"], variant))
    params = init_param_store(model, sec["theta_init"], rng)
    report = fit(model, train, fit_config, params)

    report.params.save(sec["checkpoint"], meta={"variant": variant, "hidden": list(hidden)})
    body = report.to_dict()
    body.update(
        variant=variant,
        seed=cfg["seed"],
        final_loss=report.losses[-1] if report.losses else None,
        loss_threshold=_final_threshold(fit_config, report, dataset.obs_dim),
        config=fit_config.to_dict(),
    )
    _write_json(sec["report"], body)
    print(f"{variant}: final loss {body['final_loss']:.6g} at window {report.final_length}")
    return EXIT_OK


def _final_threshold(fc: FitConfig, report, obs_dim) -> float:
    if fc.loss_thr is not None:
        return fc.loss_thr
    return fc.loss_thr_scale * report.final_length * obs_dim


def _read_checkpoint(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    meta = raw.get("meta") or {}
    return ParamStore.from_dict(raw), meta


def cmd_eval(cfg: dict) -> int:
    sec = cfg["eval"]
    _existing(sec["checkpoint"], "checkpoint")
    _existing(sec["dataset"], "dataset")
    _writable(sec["report"], "eval.report")
    if sec.get("trajectory"):
        _writable(sec["trajectory"], "eval.trajectory")
    params, meta = _read_checkpoint(sec["checkpoint"])
    variant = sec.get("variant") or meta.get("variant")
    if variant not in VARIANTS:
        raise UsageError(f"checkpoint does not name a known variant (got {variant!r})")
    hidden = tuple(sec.get("hidden") or meta.get("hidden") or DEFAULT_HIDDEN)
    model = build_model(variant, hidden)
    expected = init_param_store(model, np.zeros(len(model.nominal.theta_names)))
    if not params.same_layout(expected):
        raise DataError(f"checkpoint layout does not match variant {variant} with hidden {list(hidden)}")
    dataset = _load_dataset(sec["dataset"], sec.get("split_index"))

    res = benchmark.evaluate(variant, model, params, dataset)
    table = benchmark.RmseTable([res])
    body = {
        "variant": variant,
        "status": res.status,
        "diverged_at": res.diverged_at,
        "train": res.train,
        "test": res.test,
        "max_residual_power": float(res.residual_power.max()) if res.residual_power is not None else None,
    }
    _write_json(sec["report"], body)
    if sec.get("trajectory") and res.status == "ok":
        atomic_write_text(sec["trajectory"], benchmark.trajectory_csv(dataset, res.states))
    print(table.to_text())
    return EXIT_OK


def compare_config(cfg: dict) -> benchmark.ComparisonConfig:
    body = {k: v for k, v in cfg["compare"].items() if k != "out_dir"}
    body["seed"] = cfg["seed"]
    try:
        return benchmark.ComparisonConfig.from_dict(body)
    except TypeError as exc:
        raise UsageError(f"bad compare section: {exc}") from exc


def cmd_compare(cfg: dict) -> int:
    out_dir = cfg["compare"]["out_dir"]
    target = os.path.join(out_dir, "rmse_table.csv") if os.path.isdir(out_dir) else out_dir
    _writable(target, "compare.out_dir")
    config = compare_config(cfg)
    result = benchmark.run_comparison(config)
    benchmark.write_comparison(result, out_dir)
    _write_json(os.path.join(out_dir, "config.json"), config.to_dict())
    print(result.table.to_text())
    for v, msg in sorted(result.failures.items()):
        print(f"{v}: {msg}", file=sys.stderr)
    if not any(r.status == "ok" for r in result.table.rows):
        return EXIT_FIT
    return EXIT_OK


_HANDLERS = {"generate": cmd_generate, "fit": cmd_fit, "eval": cmd_eval, "compare": cmd_compare}


# --- entry point --------------------------------------------------------------


def _setup_logging():
    level = os.environ.get("DILAR_LOG", "WARNING").strip()
    if level.isdigit():
        value = int(level)
    else:
        value = logging.getLevelName(level.upper())
        if not isinstance(value, int):
            value = logging.WARNING
    logging.basicConfig(level=value, format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dilar", description="Grey-box helicopter identification benchmark.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry by dotted path (repeatable)")
    p.add_argument("--seed", type=int, help="top-level seed")
    p.add_argument("--workers", type=int, help="parallel fits for compare")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        cfg = load_config(args.config, args.overrides, args.seed, args.workers)
        return _HANDLERS[args.command](cfg)
    except FitFailure as exc:
        print(f"dilar: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (DataError, DegenerateChannel) as exc:
        print(f"dilar: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidArgument as exc:
        print(f"dilar: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"dilar: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
