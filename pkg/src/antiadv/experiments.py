"""Evaluation campaigns shared by the CLI and the acceptance suite:
fixture models, per-sample attack runs, results tables and ablation sweeps.

Per-sample work may fan out over a process pool; results are always reduced
in sample order so every number is independent of worker scheduling.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .anti_adversary import AntiAdvConfig, AntiAdversaryClassifier
from .attacks import AttackSpec, QueryOracle, adaptive_transfer_attack, nes_attack, pgd_attack, simba
from .classifier import Dataset, TrainConfig, make_dataset, train_adversarial, train_nominal
from .core_math import MlpParams

ATTACKS = ("simba", "nes", "pgd", "adaptive")
DEFENSES = ("f", "g")
RESULT_COLUMNS = (
    "defense",
    "attack",
    "clean_accuracy",
    "robust_accuracy",
    "mean_queries",
    "success_rate",
    "samples",
    "config_hash",
    "seed",
)
INPUT_RANGE = (-1.0, 1.0)

# two-moons fixture used across tests, CLI defaults and the acceptance suite
FIXTURE_TRAIN = TrainConfig(epochs=60, batch_size=64, lr=0.1, hidden=(32, 32))
FIXTURE_AT = AttackSpec(norm="inf", eps=0.1, step=0.025, budget=7)
FIXTURE_EPS = 0.3


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def input_alpha(alpha: float, units: str = "range", value_range=INPUT_RANGE) -> float:
    """Convert a step quoted as a fraction of the input range (the [0, 1]
    pixel convention) into input units; ``units='input'`` passes through."""
    if units == "input":
        return float(alpha)
    if units != "range":
        raise ValueError("alpha units must be 'range' or 'input'")
    return float(alpha) * (value_range[1] - value_range[0])


@dataclass(frozen=True)
class AttackPlan:
    """One named attack with everything needed to rerun it on a sample."""

    name: str
    spec: AttackSpec
    variant: str = "original"
    sigma: float = 0.01
    samples: int = 10

    def __post_init__(self):
        if self.name not in ATTACKS:
            raise ValueError(f"unknown attack {self.name!r}; choose from {ATTACKS}")


def default_plans(eps: float = FIXTURE_EPS, budget: int = 200) -> dict[str, AttackPlan]:
    return {
        "simba": AttackPlan("simba", AttackSpec(eps=eps, step=eps / 4, budget=budget)),
        "nes": AttackPlan("nes", AttackSpec(eps=eps, step=eps / 10, budget=budget), sigma=0.01, samples=10),
        "pgd": AttackPlan("pgd", AttackSpec(eps=eps, step=eps / 10, budget=20)),
        "adaptive": AttackPlan("adaptive", AttackSpec(eps=eps, step=eps / 10, budget=20)),
    }


def run_attack(plan: AttackPlan, f: MlpParams, g_cfg: AntiAdvConfig | None, x, y: int, seed: int):
    """Attack ``f`` (``g_cfg is None``) or ``g = f + layer`` on one sample."""
    spec = replace(plan.spec, seed=seed)
    view = f if g_cfg is None else AntiAdversaryClassifier(f, g_cfg)
    if plan.name == "simba":
        return simba(QueryOracle(view, "score", spec.budget), x, y, spec, plan.variant)
    if plan.name == "nes":
        return nes_attack(QueryOracle(view, "score", spec.budget), x, y, spec, plan.sigma, plan.samples)
    if plan.name == "pgd":
        return pgd_attack(QueryOracle(view, "gradient"), x, y, spec)
    if g_cfg is None:
        # crafting on f and replaying on f is plain PGD
        return pgd_attack(QueryOracle(f, "gradient"), x, y, spec)
    return adaptive_transfer_attack(f, g_cfg, x, y, spec)


def _sample_job(args):
    plan, f, g_cfg, x, y, seed, idx = args
    out = run_attack(plan, f, g_cfg, x, y, seed)
    return {
        "sample": idx,
        "label": y,
        "success": bool(out.success),
        "queries": int(out.queries),
        "predicted": None if out.label is None else int(out.label),
        "delta": [float(v) for v in out.delta],
    }


def _map(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def clean_accuracy(f: MlpParams, g_cfg: AntiAdvConfig | None, data: Dataset) -> float:
    if g_cfg is None:
        from .classifier import evaluate

        return evaluate(f, data)
    g = AntiAdversaryClassifier(f, g_cfg)
    return float(np.mean([g.predict(x) == y for x, y in zip(data.X, data.y)]))


def attack_records(plan: AttackPlan, f: MlpParams, g_cfg, data: Dataset, seed: int, workers: int = 1) -> list[dict]:
    jobs = [(plan, f, g_cfg, data.X[i], int(data.y[i]), seed + i, i) for i in range(len(data))]
    return _map(_sample_job, jobs, workers)


def summarize(defense: str, attack: str, clean: float, records: list[dict], chash: str, seed: int) -> dict:
    n = len(records)
    wins = sum(r["success"] for r in records)
    return {
        "defense": defense,
        "attack": attack,
        "clean_accuracy": clean,
        "robust_accuracy": (n - wins) / n,
        "mean_queries": sum(r["queries"] for r in records) / n,
        "success_rate": wins / n,
        "samples": n,
        "config_hash": chash,
        "seed": seed,
    }


def attack_campaign(
    f: MlpParams,
    g_cfg: AntiAdvConfig,
    data: Dataset,
    plans: list[AttackPlan],
    defenses=DEFENSES,
    seed: int = 0,
    chash: str = "",
    workers: int = 1,
) -> tuple[list[dict], list[dict]]:
    """One row per (defense, attack) plus the per-sample records."""
    rows, records = [], []
    for defense in defenses:
        if defense not in DEFENSES:
            raise ValueError(f"unknown defense {defense!r}")
        cfg = g_cfg if defense == "g" else None
        clean = clean_accuracy(f, cfg, data)
        for plan in plans:
            recs = attack_records(plan, f, cfg, data, seed, workers)
            rows.append(summarize(defense, plan.name, clean, recs, chash, seed))
            records.extend({"defense": defense, "attack": plan.name, **r} for r in recs)
    return rows, records


def ablation_sweep(
    f: MlpParams,
    base_cfg: AntiAdvConfig,
    data: Dataset,
    plan: AttackPlan,
    parameter: str,
    values,
    seed: int = 0,
    chash: str = "",
    workers: int = 1,
    alpha_units: str = "range",
) -> list[dict]:
    """Rows for ``f`` and ``g`` at every grid value of ``K`` or ``alpha``."""
    values = list(values)
    if not values:
        raise ValueError("ablation grid is empty")
    if parameter not in ("K", "alpha"):
        raise ValueError("can only sweep 'K' or 'alpha'")
    f_clean = clean_accuracy(f, None, data)
    f_rows = summarize("f", plan.name, f_clean, attack_records(plan, f, None, data, seed, workers), chash, seed)
    rows = []
    for v in values:
        if parameter == "K":
            cfg = replace(base_cfg, K=int(v))
        else:
            cfg = replace(base_cfg, alpha=input_alpha(v, alpha_units))
        recs = attack_records(plan, f, cfg, data, seed, workers)
        g_row = summarize("g", plan.name, clean_accuracy(f, cfg, data), recs, chash, seed)
        for row in (dict(f_rows), g_row):
            rows.append({"parameter": parameter, "value": v, **row})
    return rows


@lru_cache(maxsize=32)
def fixture(seed: int, m: int = 2000, noise: float = 0.1, test_m: int = 2000) -> dict:
    """Two-moons train/test sets with a nominal and a PGD-trained model."""
    train = make_dataset("two-moons", m, noise, seed)
    test = make_dataset("two-moons", test_m, noise, 1000 + seed)
    cfg = replace(FIXTURE_TRAIN, seed=seed)
    return {
        "train": train,
        "test": test,
        "nominal": train_nominal(train, cfg),
        "robust": train_adversarial(train, cfg, FIXTURE_AT),
    }

