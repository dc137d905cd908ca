"""Command-line driver: ``antiadv {train,attack,ablate,theory,report}``.

Every subcommand reads a JSON config (``schema_version: 1``), validates it
before doing any work and writes its outputs under ``--out``. Exit codes:
0 success, 2 bad config or inputs, 3 a verification check failed,
4 runtime failure (e.g. training diverged).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import theory
from .anti_adversary import AntiAdvConfig
from .attacks import AttackSpec
from .classifier import (
    DATASETS,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    load_checkpoint,
    make_dataset,
    save_checkpoint,
    train_adversarial,
    train_nominal,
)
from .core_math import NonFiniteError
from .experiments import (
    ATTACKS,
    DEFENSES,
    RESULT_COLUMNS,
    AttackPlan,
    ablation_sweep,
    attack_campaign,
    config_hash,
    input_alpha,
)

log = logging.getLogger("antiadv")

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_RUNTIME = 0, 2, 3, 4
SWEEP_COLUMNS = ("parameter", "value") + RESULT_COLUMNS


class ConfigError(Exception):
    pass


class VerificationFailed(Exception):
    pass


# ---------------------------------------------------------------- schemas

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}
_count = {"type": "integer", "minimum": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


DATASET_SCHEMA = _obj(
    {"name": {"enum": list(DATASETS)}, "m": {"type": "integer", "minimum": 2}, "noise": {"type": "number", "minimum": 0}, "seed": _int},
    ["name", "m", "noise", "seed"],
)
ANTI_SCHEMA = _obj(
    {
        "alpha": _pos,
        "alpha_units": {"enum": ["range", "input"]},
        "K": {"type": "integer", "minimum": 0},
        "guard": {"type": "boolean"},
    }
)
ATTACK_SCHEMA = _obj(
    {
        "name": {"type": "string"},
        "eps": _pos,
        "step": _pos,
        "budget": _count,
        "variant": {"enum": ["original", "both-directions"]},
        "loss": {"enum": ["ce", "margin"]},
        "sigma": _pos,
        "samples": {"type": "integer", "minimum": 2, "multipleOf": 2},
    },
    ["name"],
)
_common = {"schema_version": {"const": 1}, "seed": _int}

SCHEMAS = {
    "train": _obj(
        {
            **_common,
            "dataset": DATASET_SCHEMA,
            "train": _obj(
                {
                    "epochs": {"type": "integer", "minimum": 0},
                    "batch_size": _count,
                    "lr": _pos,
                    "weight_decay": {"type": "number", "minimum": 0},
                    "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                    "hidden": {"type": "array", "items": _count},
                }
            ),
            "adversarial": {"oneOf": [{"type": "null"}, _obj({"eps": _pos, "step": _pos, "steps": _count}, ["eps", "step", "steps"])]},
            "checkpoint": {"type": "string", "minLength": 1},
        },
        ["schema_version"],
    ),
    "attack": _obj(
        {
            **_common,
            "checkpoint": {"type": "string"},
            "test_set": DATASET_SCHEMA,
            "samples": _count,
            "defenses": {"type": "array", "items": {"enum": list(DEFENSES)}, "minItems": 1, "uniqueItems": True},
            "anti_adversary": ANTI_SCHEMA,
            "attacks": {"type": "array", "items": ATTACK_SCHEMA, "minItems": 1},
        },
        ["schema_version", "checkpoint", "test_set", "attacks"],
    ),
    "ablate": _obj(
        {
            **_common,
            "checkpoint": {"type": "string"},
            "test_set": DATASET_SCHEMA,
            "samples": _count,
            "anti_adversary": ANTI_SCHEMA,
            "attack": ATTACK_SCHEMA,
            "sweep": _obj({"parameter": {"enum": ["K", "alpha"]}, "values": {"type": "array", "items": _num}}, ["parameter", "values"]),
        },
        ["schema_version", "checkpoint", "test_set", "attack", "sweep"],
    ),
    "theory": _obj(
        {
            **_common,
            "parameter_sets": {
                "type": "array",
                "items": _obj(
                    {"name": {"type": "string"}, "L": _num, "rho": _num, "n": _int, "eps": _num, "loss_gap": _num, "c": _num, "alpha": _num},
                    ["name", "L", "rho", "n", "eps", "loss_gap"],
                ),
            },
            "c_grid": {"type": "array", "items": _num, "minItems": 2},
            "random_checks": _count,
            "empirical": _obj(
                {
                    "n": _count,
                    "objectives": _count,
                    "trials": _count,
                    "c_values": {"type": "array", "items": _num, "minItems": 1},
                    "max_rounds": _count,
                    "rho": _pos,
                }
            ),
            "corners": _obj({"n": _count, "steps": _count, "eps": _pos, "seeds": _count}),
        },
        ["schema_version"],
    ),
    "report": _obj({**_common, "results": {"type": "string"}}, ["schema_version"]),
}

DEFAULTS = {
    "train": {
        "schema_version": 1,
        "seed": 0,
        "dataset": {"name": "two-moons", "m": 2000, "noise": 0.1, "seed": 0},
        "train": {"epochs": 60, "batch_size": 64, "lr": 0.1, "weight_decay": 0.0, "momentum": 0.0, "hidden": [32, 32]},
        "adversarial": None,
        "checkpoint": "model.json",
    },
    "attack": {
        "schema_version": 1,
        "seed": 0,
        "samples": 60,
        "defenses": ["f", "g"],
        "anti_adversary": {"alpha": 0.15, "alpha_units": "range", "K": 2, "guard": True},
    },
    "ablate": {
        "schema_version": 1,
        "seed": 0,
        "samples": 60,
        "anti_adversary": {"alpha": 0.15, "alpha_units": "range", "K": 2, "guard": True},
    },
    "theory": {
        "schema_version": 1,
        "seed": 0,
        "parameter_sets": [{"name": "reference", "L": 1.0, "rho": 0.2, "n": 2, "eps": 0.05, "loss_gap": 1.0, "c": 0.5, "alpha": 1.0}],
        "c_grid": [round(0.05 * i, 2) for i in range(1, 20)],
        "random_checks": 10000,
        "empirical": {"n": 4, "objectives": 3, "trials": 50, "c_values": [0.25, 0.5, 0.75], "max_rounds": 20000, "rho": 0.5},
        "corners": {"n": 4, "steps": 500, "eps": 0.05, "seeds": 5},
    },
    "report": {"schema_version": 1, "seed": 0},
}
ATTACK_DEFAULTS = {"variant": "original", "loss": "ce", "sigma": 0.01, "samples": 10}
TRAIN_DEFAULTS = DEFAULTS["train"]["train"]


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(command: str, path: str | None, seed: int | None) -> dict:
    """Validate the user's config against the schema, then fill defaults."""
    raw: dict = {"schema_version": 1}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(raw, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid {command} config at {where}: {exc.message}") from exc
    cfg = _merge(DEFAULTS[command], raw)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


# ---------------------------------------------------------------- outputs


def _finite_or_str(value):
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _finite_or_str(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite_or_str(v) for v in value]
    if isinstance(value, np.generic):
        return _finite_or_str(value.item())
    if isinstance(value, np.ndarray):
        return _finite_or_str(value.tolist())
    return value


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_finite_or_str(doc), indent=1, allow_nan=False))


def write_csv(path: Path, columns, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def _cell(value) -> str:
    # repr round-trips floats exactly
    return repr(value) if isinstance(value, float) else str(value)


def _emit_table(out: Path, columns, rows, records, cfg, chash) -> None:
    write_csv(out / "results.csv", columns, rows)
    write_json(out / "results.json", {"columns": list(columns), "rows": rows, "records": records, "config": cfg, "config_hash": chash})


# ---------------------------------------------------------------- commands


def _dataset(spec: dict):
    return make_dataset(spec["name"], spec["m"], spec["noise"], spec["seed"])


def cmd_train(cfg: dict, out: Path, jobs: int) -> dict:
    chash = config_hash(cfg)
    data = _dataset(cfg["dataset"])
    tc = _merge(TRAIN_DEFAULTS, cfg.get("train", {}))
    train_cfg = TrainConfig(
        epochs=tc["epochs"],
        batch_size=tc["batch_size"],
        lr=tc["lr"],
        weight_decay=tc["weight_decay"],
        momentum=tc["momentum"],
        hidden=tuple(tc["hidden"]),
        seed=cfg["seed"],
    )
    adv = cfg.get("adversarial")
    if adv is None:
        params = train_nominal(data, train_cfg)
    else:
        spec = AttackSpec(norm="inf", eps=adv["eps"], step=adv["step"], budget=adv["steps"])
        params = train_adversarial(data, train_cfg, spec)
    accuracy = evaluate(params, data)
    path = out / cfg["checkpoint"]
    save_checkpoint(path, params, {"config": cfg, "config_hash": chash, "train_accuracy": accuracy})
    metrics = {"event": "trained", "checkpoint": str(path), "train_accuracy": accuracy, "config_hash": chash, "seed": cfg["seed"]}
    print(json.dumps(metrics))
    return metrics


def _load_model(cfg: dict):
    path = Path(cfg["checkpoint"])
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)[0]
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"unreadable checkpoint {path}: {exc}") from exc


def _anti_config(spec: dict) -> AntiAdvConfig:
    return AntiAdvConfig(alpha=input_alpha(spec["alpha"], spec["alpha_units"]), K=spec["K"], guard=spec["guard"])


def _plan(spec: dict) -> AttackPlan:
    if spec["name"] not in ATTACKS:
        raise ConfigError(f"unknown attack {spec['name']!r}; choose from {', '.join(ATTACKS)}")
    if "eps" not in spec:
        raise ConfigError(f"attack {spec['name']!r} needs eps")
    s = {**ATTACK_DEFAULTS, **spec}
    gradient_based = spec["name"] in ("pgd", "adaptive")
    budget = spec.get("budget", 20 if gradient_based else 200)
    step = spec.get("step", s["eps"] / (4 if spec["name"] == "simba" else 10))
    attack = AttackSpec(norm="inf", eps=s["eps"], step=step, budget=budget, loss=s["loss"])
    return AttackPlan(spec["name"], attack, s["variant"], s["sigma"], s["samples"])


def _test_subset(cfg: dict):
    data = _dataset(cfg["test_set"])
    return data.subset(min(cfg["samples"], len(data)))


def cmd_attack(cfg: dict, out: Path, jobs: int) -> dict:
    plans = [_plan(a) for a in cfg["attacks"]]
    f = _load_model(cfg)
    data = _test_subset(cfg)
    chash = config_hash(cfg)
    rows, records = attack_campaign(f, _anti_config(cfg["anti_adversary"]), data, plans, cfg["defenses"], cfg["seed"], chash, jobs)
    _emit_table(out, RESULT_COLUMNS, rows, records, cfg, chash)
    return {"rows": len(rows), "config_hash": chash}


def cmd_ablate(cfg: dict, out: Path, jobs: int) -> dict:
    sweep = cfg["sweep"]
    if not sweep["values"]:
        raise ConfigError("ablation grid is empty")
    param = sweep["parameter"]
    values = sweep["values"]
    if param == "K" and any(v != int(v) or v < 0 for v in values):
        raise ConfigError("K grid values must be non-negative integers")
    if param == "K":
        values = [int(v) for v in values]
    if param == "alpha" and any(v <= 0 for v in values):
        raise ConfigError("alpha grid values must be positive")
    plan = _plan(cfg["attack"])
    f = _load_model(cfg)
    data = _test_subset(cfg)
    chash = config_hash(cfg)
    anti = cfg["anti_adversary"]
    rows = ablation_sweep(
        f, _anti_config(anti), data, plan, param, values, cfg["seed"], chash, jobs, alpha_units=anti["alpha_units"]
    )
    _emit_table(out, SWEEP_COLUMNS, rows, [], cfg, chash)
    plot = out / "plotdata"
    plot.mkdir(exist_ok=True)
    series = []
    for v in values:
        at = {r["defense"]: r for r in rows if r["value"] == v}
        series.append(
            {
                param: v,
                "clean_f": at["f"]["clean_accuracy"],
                "clean_g": at["g"]["clean_accuracy"],
                "robust_f": at["f"]["robust_accuracy"],
                "robust_g": at["g"]["robust_accuracy"],
            }
        )
    write_csv(plot / f"{param}_sweep.csv", (param, "clean_f", "clean_g", "robust_f", "robust_g"), series)
    return {"rows": len(rows), "config_hash": chash}


def _evaluate_parameter_set(ps: dict) -> dict:
    try:
        t = theory.TheoryInputs(
            L=ps["L"], rho=ps["rho"], n=ps["n"], eps=ps["eps"], loss_gap=ps["loss_gap"], c=ps.get("c"), alpha=ps.get("alpha")
        )
        row = {"name": ps["name"], "k_base": theory.k_base(t)}
        if t.c is not None:
            row["k_anti"] = theory.k_anti(t)
            if 0 < t.c < 1:
                row["G_blackbox"] = theory.g_blackbox(t)
        if t.alpha is not None:
            row["k_base_whitebox"] = theory.k_base_whitebox(t)
            if t.c is not None:
                row["k_anti_whitebox"] = theory.k_anti_whitebox(t)
                if 0 < t.c < 1:
                    row["G_whitebox"] = theory.g_whitebox(t.alpha, t.c)
        return row
    except theory.RegimeError as exc:
        return {"name": ps["name"], "error": str(exc)}


def cmd_theory(cfg: dict, out: Path, jobs: int) -> dict:
    sets = [_evaluate_parameter_set(ps) for ps in cfg["parameter_sets"]]
    bad = [s for s in sets if "error" in s]
    if bad:
        write_json(out / "report.json", {"parameter_sets": sets, "config_hash": config_hash(cfg)})
        raise ConfigError("out-of-regime parameter sets: " + "; ".join(f"{s['name']}: {s['error']}" for s in bad))

    started = time.perf_counter()
    grid = cfg["c_grid"]
    if any(not 0 < c < 1 for c in grid):
        raise ConfigError("c_grid values must lie in (0, 1)")
    formulas = theory.formula_checks(cfg["random_checks"], cfg["seed"], grid)
    emp = cfg["empirical"]
    empirical = theory.empirical_checks(emp["n"], emp["objectives"], emp["trials"], tuple(emp["c_values"]), emp["max_rounds"], emp["rho"])
    cor = cfg["corners"]
    corners = theory.corner_checks(cor["n"], cor["steps"], cor["eps"], range(cfg["seed"], cfg["seed"] + cor["seeds"]))
    checks = {
        **{f"formula.{k}": v for k, v in formulas["passed"].items()},
        **{f"empirical.{k}": v for k, v in empirical["passed"].items()},
        **{f"corners.{k}": v for k, v in corners["passed"].items()},
    }
    chash = config_hash(cfg)
    report = {
        "config": cfg,
        "config_hash": chash,
        "parameter_sets": sets,
        "formulas": formulas,
        "empirical": empirical,
        "corners": corners,
        "checks": checks,
        "passed": all(checks.values()),
        "seconds": time.perf_counter() - started,
    }
    write_json(out / "report.json", report)
    plot = out / "plotdata"
    plot.mkdir(exist_ok=True)
    write_csv(
        plot / "G_vs_c.csv",
        ("c", "G_blackbox", "G_whitebox"),
        [{"c": c, "G_blackbox": b, "G_whitebox": w} for c, b, w in zip(grid, formulas["G_blackbox"], formulas["G_whitebox"])],
    )
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    if not report["passed"]:
        raise VerificationFailed("theory checks failed: " + ", ".join(k for k, v in checks.items() if not v))
    return {"passed": True, "config_hash": chash}


def _parse_cell(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def cmd_report(cfg: dict, out: Path, jobs: int) -> dict:
    """Check that results.csv and results.json agree cell for cell."""
    src = Path(cfg.get("results", out))
    csv_path, json_path = src / "results.csv", src / "results.json"
    if not csv_path.is_file() or not json_path.is_file():
        raise ConfigError(f"no results.csv/results.json under {src}")
    doc = json.loads(json_path.read_text())
    with csv_path.open(newline="") as fh:
        table = list(csv.reader(fh))
    header, body = table[0], table[1:]
    mismatches = []
    if header != doc["columns"]:
        mismatches.append("column order differs")
    if len(body) != len(doc["rows"]):
        mismatches.append(f"{len(body)} CSV rows vs {len(doc['rows'])} JSON rows")
    for i, (line, row) in enumerate(zip(body, doc["rows"])):
        for col, text in zip(header, line):
            if _parse_cell(text) != row.get(col):
                mismatches.append(f"row {i} column {col}: {text!r} vs {row.get(col)!r}")
    if any(not r.get("config_hash") for r in doc["rows"]):
        mismatches.append("rows without a config hash")
    report = {"results": str(src), "rows": len(body), "mismatches": mismatches, "passed": not mismatches}
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report)
    if mismatches:
        raise VerificationFailed(f"{len(mismatches)} CSV/JSON mismatches, first: {mismatches[0]}")
    print(f"PASS {len(body)} rows agree")
    return report


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "ablate": cmd_ablate, "theory": cmd_theory, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="antiadv", description="Anti-adversary robustness laboratory.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (schema_version 1)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for per-sample attacks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.command in ("attack", "ablate") and args.config is None:
            raise ConfigError(f"{args.command} needs --config (a checkpoint and attack list)")
        cfg = load_config(args.command, args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
