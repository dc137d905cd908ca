"""Toy datasets, SGD training (nominal and PGD adversarial) and evaluation of
the base MLP classifiers.

All synthetic inputs live in [-1, 1] per coordinate; attack radii and
anti-adversary step sizes are expressed in those units.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_math import MlpParams, ShapeError, batch_loss_grads, init_mlp, mlp_forward_batch

log = logging.getLogger(__name__)

DATASETS = ("two-gaussians", "two-moons", "rings")
CHECKPOINT_FORMAT = "antiadv-mlp"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    name: str
    seed: int
    noise: float = 0.0

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] < 1 or self.y.shape != (self.X.shape[0],):
            raise ShapeError(f"bad dataset shapes X={self.X.shape} y={self.y.shape}")
        if self.y.min() < 0 or self.y.max() >= self.n_classes:
            raise ValueError("labels out of range")
        self.X.setflags(write=False)
        self.y.setflags(write=False)

    def __len__(self):
        return self.X.shape[0]

    def subset(self, count: int) -> "Dataset":
        return Dataset(self.X[:count].copy(), self.y[:count].copy(), self.n_classes, self.name, self.seed, self.noise)


def _class_sizes(m: int) -> tuple[int, int]:
    return m - m // 2, m // 2


def make_dataset(name: str, m: int, noise: float, seed: int) -> Dataset:
    """Generate a balanced two-class toy set, deterministic in ``seed``.

    Noiseless supports are mapped into [-1, 1]; noisy samples are clipped back
    into that box.
    """
    if name not in DATASETS:
        raise ValueError(f"unknown dataset {name!r}; choose from {DATASETS}")
    if m < 2:
        raise ValueError("need at least two samples")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    m0, m1 = _class_sizes(m)

    if name == "two-gaussians":
        X0 = np.array([-0.5, 0.0]) + noise * rng.standard_normal((m0, 2))
        X1 = np.array([0.5, 0.0]) + noise * rng.standard_normal((m1, 2))
    elif name == "two-moons":
        t0 = np.linspace(0.0, np.pi, m0)
        t1 = np.linspace(0.0, np.pi, m1)
        X0 = np.column_stack([np.cos(t0), np.sin(t0)])
        X1 = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
        X0 = X0 + noise * rng.standard_normal(X0.shape)
        X1 = X1 + noise * rng.standard_normal(X1.shape)
        # raw support is [-1, 2] x [-0.5, 1]
        X0 = (X0 - [0.5, 0.25]) / [1.5, 0.75]
        X1 = (X1 - [0.5, 0.25]) / [1.5, 0.75]
    else:
        a0 = rng.uniform(0.0, 2 * np.pi, m0)
        a1 = rng.uniform(0.0, 2 * np.pi, m1)
        r0 = 0.35 + noise * rng.standard_normal(m0)
        r1 = 0.8 + noise * rng.standard_normal(m1)
        X0 = r0[:, None] * np.column_stack([np.cos(a0), np.sin(a0)])
        X1 = r1[:, None] * np.column_stack([np.cos(a1), np.sin(a1)])

    X = np.clip(np.vstack([X0, X1]), -1.0, 1.0)
    y = np.concatenate([np.zeros(m0, dtype=np.int64), np.ones(m1, dtype=np.int64)])
    order = rng.permutation(m)
    return Dataset(np.ascontiguousarray(X[order]), y[order], 2, name, seed, float(noise))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 0.1
    weight_decay: float = 0.0
    seed: int = 0
    hidden: tuple[int, ...] = (32, 32)
    momentum: float = 0.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0 or self.batch_size < 1:
            raise ValueError("lr must be positive and batch_size >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def initial_params(data: Dataset, cfg: TrainConfig) -> MlpParams:
    return init_mlp((data.X.shape[1],) + tuple(cfg.hidden) + (data.n_classes,), cfg.seed)


def _sgd(data: Dataset, cfg: TrainConfig, perturb=None) -> MlpParams:
    params = initial_params(data, cfg)
    weights = [w.copy() for w in params.weights]
    biases = [b.copy() for b in params.biases]
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(weights, biases)]
    rng = np.random.default_rng([cfg.seed, 1])
    m = len(data)
    for epoch in range(cfg.epochs):
        order = rng.permutation(m)
        epoch_loss = 0.0
        for start in range(0, m, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            current = MlpParams(tuple(weights), tuple(biases))
            Xb, yb = data.X[idx], data.y[idx]
            if perturb is not None:
                Xb = perturb(current, Xb, yb)
            with np.errstate(over="ignore", invalid="ignore"):
                # overflow shows up as a non-finite loss, reported below
                loss, grads, _ = batch_loss_grads(current, Xb, yb)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            epoch_loss += loss * len(idx)
            for i, (dw, db) in enumerate(grads):
                if cfg.weight_decay:
                    dw = dw + cfg.weight_decay * weights[i]
                if cfg.momentum:
                    vw, vb = velocity[i]
                    vw = cfg.momentum * vw + dw
                    vb = cfg.momentum * vb + db
                    velocity[i] = (vw, vb)
                    dw, db = vw, vb
                weights[i] = weights[i] - cfg.lr * dw
                biases[i] = biases[i] - cfg.lr * db
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(epoch, epoch_loss)
        if log.isEnabledFor(logging.DEBUG):
            log.debug("epoch %d loss %.6f", epoch, epoch_loss / m)
    return MlpParams(tuple(weights), tuple(biases))


def train_nominal(data: Dataset, cfg: TrainConfig) -> MlpParams:
    """Plain minibatch SGD on the clean training set."""
    params = _sgd(data, cfg)
    log.info("nominal training done: train accuracy %.4f", evaluate(params, data))
    return params


def train_adversarial(data: Dataset, cfg: TrainConfig, attack) -> MlpParams:
    """PGD adversarial training: every minibatch is replaced by its PGD perturbation.

    ``attack`` is an ``AttackSpec`` with ``norm='inf'``; its ``budget`` is the
    number of inner PGD steps.
    """
    from .attacks import pgd_batch

    if attack.norm != "inf":
        raise ValueError("adversarial training uses the l_inf PGD attack")

    def perturb(params, Xb, yb):
        return pgd_batch(params, Xb, yb, attack)

    params = _sgd(data, cfg, perturb)
    log.info("adversarial training done: train accuracy %.4f", evaluate(params, data))
    return params


def predict_batch(params: MlpParams, X) -> np.ndarray:
    return np.argmax(mlp_forward_batch(params, X), axis=1)


def evaluate(params: MlpParams, data: Dataset) -> float:
    """Fraction of samples whose lowest-index argmax equals the label."""
    if data.X.shape[1] != params.n_inputs:
        raise ShapeError(f"dataset has {data.X.shape[1]} features, network expects {params.n_inputs}")
    return float(np.mean(predict_batch(params, data.X) == data.y))


def params_to_dict(params: MlpParams, provenance: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "activation": params.activation,
        "layer_sizes": list(params.layer_sizes),
        "layers": [
            {"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(params.weights, params.biases)
        ],
        "provenance": provenance or {},
    }


def params_from_dict(doc: dict) -> MlpParams:
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} checkpoint")
    params = MlpParams(
        tuple(np.array(layer["weight"], dtype=np.float64) for layer in doc["layers"]),
        tuple(np.array(layer["bias"], dtype=np.float64) for layer in doc["layers"]),
        doc.get("activation", "relu"),
    )
    if list(params.layer_sizes) != list(doc["layer_sizes"]):
        raise ShapeError("checkpoint layer_sizes disagree with its weight arrays")
    return params


def save_checkpoint(path, params: MlpParams, provenance: dict | None = None) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params, provenance), indent=1))


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    doc = json.loads(Path(path).read_text())
    return params_from_dict(doc), doc.get("provenance", {})
