"""Attackers driven through a query-metered oracle.

Black-box: ``simba`` (original and both-directions variants), ``nes_attack``.
White-box: ``pgd_attack``, ``gradient_ascent_attack``.
Adaptive: ``adaptive_transfer_attack`` (craft on ``f``, replay on ``g``).
``stp_maximize`` is a plain stochastic-three-points maximizer kept separate
from ``simba`` so the two can be checked against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .anti_adversary import AntiAdvConfig, AntiAdversaryClassifier, CoupledAntiAdversary
from .core_math import MlpParams, as_scalar_field, as_vector, batch_loss_grads

ACCESS_LEVELS = ("decision", "score", "gradient")
LOSSES = ("ce", "margin")
_TINY = np.finfo(np.float64).tiny


class BudgetExhausted(RuntimeError):
    pass


class QueryOracle:
    """Metered access to a classifier view or a scalar objective.

    Classifier views (anything with ``predict_proba``) answer with the
    probability vector at ``score`` access and the label at ``decision``
    access; scalar objectives (anything with ``value``) answer with the value.
    ``gradient`` access additionally allows ``gradient`` calls. Every answered
    call costs exactly one query; calls past ``budget`` raise
    ``BudgetExhausted`` without being counted.
    """

    def __init__(self, model, access: str = "score", budget: int | None = None):
        if access not in ACCESS_LEVELS:
            raise ValueError(f"access must be one of {ACCESS_LEVELS}")
        if budget is not None and budget < 0:
            raise ValueError("budget must be non-negative")
        self.model = model
        self.access = access
        self.budget = budget
        self.count = 0
        self.is_classifier = hasattr(model, "predict_proba")
        if not self.is_classifier and not hasattr(model, "value"):
            raise TypeError(f"cannot query a {type(model).__name__}")

    @property
    def remaining(self) -> float:
        return math.inf if self.budget is None else self.budget - self.count

    def _spend(self):
        if self.budget is not None and self.count >= self.budget:
            raise BudgetExhausted(f"query budget of {self.budget} exhausted")
        self.count += 1

    def query(self, x):
        self._spend()
        if not self.is_classifier:
            return float(self.model.value(x))
        probs = self.model.predict_proba(x)
        if self.access == "decision":
            return int(np.argmax(probs))
        return probs

    def gradient(self, x, label: int | None = None):
        """``(loss, gradient, output)``; needs gradient access."""
        if self.access != "gradient":
            raise PermissionError("gradient queries need gradient access")
        self._spend()
        if not self.is_classifier:
            return float(self.model.value(x)), self.model.gradient(x), None
        return self.model.loss_grad(x, label)


@dataclass(frozen=True)
class AttackSpec:
    """Threat model and attacker settings.

    ``eps`` is the radius of the ``norm`` ball (``math.inf`` for the
    unconstrained problem); ``step`` defaults to ``eps``. ``budget`` counts
    oracle queries for black-box attacks and iterations for white-box ones.
    ``box`` optionally clips adversarial inputs to a valid range.
    """

    norm: str = "inf"
    eps: float = 0.1
    step: float | None = None
    budget: int = 1000
    loss: str = "ce"
    seed: int = 0
    box: tuple[float, float] | None = None

    def __post_init__(self):
        if self.norm not in ("inf", "2"):
            raise ValueError("norm must be 'inf' or '2'")
        if not self.eps >= 0:
            raise ValueError("eps must be >= 0")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.step is not None and not self.step >= 0:
            raise ValueError("step must be >= 0")

    @property
    def step_size(self) -> float:
        return self.eps if self.step is None else self.step

    @property
    def constrained(self) -> bool:
        return math.isfinite(self.eps)


@dataclass
class AttackOutcome:
    success: bool
    queries: int
    delta: np.ndarray
    label: int | None
    losses: list[float] = field(default_factory=list)
    iterates: list[np.ndarray] = field(default_factory=list)
    accepted: int = 0
    rounds: int = 0
    truncated: bool = False


def canonical_directions(n: int, seed: int) -> Iterator[int]:
    """Endless stream of basis indices drawn uniformly with replacement."""
    rng = np.random.default_rng(seed)
    while True:
        yield int(rng.integers(n))


def project(delta: np.ndarray, norm: str, eps: float) -> np.ndarray:
    if not math.isfinite(eps):
        return delta
    if norm == "inf":
        return np.clip(delta, -eps, eps)
    size = np.linalg.norm(delta)
    return delta if size <= eps else delta * (eps / size)


def attack_loss(output, y: int | None, kind: str = "ce") -> float:
    """Loss the attacker maximizes, computed from an oracle answer."""
    if np.isscalar(output):
        return float(output)
    logp = np.log(np.maximum(output, _TINY))
    if kind == "ce":
        return float(-logp[y])
    others = np.delete(logp, y)
    return float(np.max(others) - logp[y])


def _constrain(x0, point, spec: AttackSpec) -> np.ndarray:
    if spec.constrained:
        point = x0 + project(point - x0, spec.norm, spec.eps)
    if spec.box is not None:
        point = np.clip(point, spec.box[0], spec.box[1])
    return point


def _is_adversarial(output, y) -> bool:
    label = _label_of(output)
    return label is not None and label != y


def _label_of(output) -> int | None:
    if isinstance(output, (int, np.integer)):
        return int(output)
    if output is None or np.isscalar(output):
        return None
    return int(np.argmax(output))


def simba(
    oracle: QueryOracle,
    x,
    y: int | None,
    spec: AttackSpec,
    variant: str = "original",
    coupled: CoupledAntiAdversary | None = None,
    stop: Callable[[np.ndarray], bool] | None = None,
) -> AttackOutcome:
    """Simple black-box attack along random canonical directions.

    ``original`` tries ``+step`` first and only queries ``-step`` when that
    fails; ``both-directions`` always evaluates both and keeps the best of the
    three points, two queries per round. A move needs a strict loss increase.
    The clean point costs one query up front.

    With ``coupled``, the defender's perturbation for the current iterate and
    direction is added to every update (theory mode); the round then reserves
    a third query to re-score the combined iterate. ``stop`` is an analysis
    probe evaluated on each new iterate outside the budget; for scalar
    objectives reaching it counts as success.
    """
    if variant not in ("original", "both-directions"):
        raise ValueError("variant must be 'original' or 'both-directions'")
    if oracle.access == "decision":
        raise PermissionError("simba needs score access")
    x0 = as_vector(x)
    n = x0.shape[0]
    start = oracle.count
    step = spec.step_size
    if not 0 < step < math.inf:
        raise ValueError("simba needs a finite positive step; set spec.step when eps is unbounded")
    limit = min(spec.budget, oracle.remaining)

    def used():
        return oracle.count - start

    if limit < 1:
        return AttackOutcome(False, 0, np.zeros(n), None)
    dirs = canonical_directions(n, spec.seed)
    xk = x0.copy()
    out = oracle.query(xk)
    loss = attack_loss(out, y, spec.loss)
    success = _is_adversarial(out, y) if oracle.is_classifier else bool(stop and stop(xk))
    outcome = AttackOutcome(False, 0, np.zeros(n), _label_of(out), [loss], [xk])
    per_round = 2 if variant == "both-directions" else 1
    if coupled is not None:
        per_round += 1

    while not success and used() + per_round <= limit:
        q = np.zeros(n)
        q[next(dirs)] = 1.0
        sign, best, best_out, best_loss = 0.0, xk, out, loss
        plus = _constrain(x0, xk + step * q, spec)
        out_p = oracle.query(plus)
        loss_p = attack_loss(out_p, y, spec.loss)
        if loss_p > best_loss:
            sign, best, best_out, best_loss = 1.0, plus, out_p, loss_p
        if variant == "both-directions" or (sign == 0.0 and used() + (coupled is not None) < limit):
            minus = _constrain(x0, xk - step * q, spec)
            out_m = oracle.query(minus)
            loss_m = attack_loss(out_m, y, spec.loss)
            if loss_m > best_loss:
                sign, best, best_out, best_loss = -1.0, minus, out_m, loss_m

        if coupled is not None:
            gamma = coupled.perturbation(xk, q)
            if np.any(gamma != 0):
                move = sign * step * q + gamma
                if np.any(move != 0):
                    best = _constrain(x0, xk + move, spec)
                    best_out = oracle.query(best)
                    best_loss = attack_loss(best_out, y, spec.loss)
                else:
                    best, best_out, best_loss = xk, out, loss

        outcome.rounds += 1
        if not np.array_equal(best, xk):
            outcome.accepted += 1
        xk, out, loss = best, best_out, best_loss
        outcome.iterates.append(xk)
        outcome.losses.append(loss)
        if oracle.is_classifier:
            success = _is_adversarial(out, y)
            if stop is not None and stop(xk):
                break
        else:
            success = bool(stop and stop(xk))

    outcome.success = bool(success)
    outcome.queries = used()
    outcome.delta = xk - x0
    outcome.label = _label_of(out)
    return outcome


def stp_maximize(objective, x0, eps: float, iters: int, seed: int) -> list[np.ndarray]:
    """Stochastic three points ascent; returns the ``iters + 1`` iterates.

    Each step moves to the best of ``x + eps*q``, ``x - eps*q`` and ``x``
    (ties keep ``x``, then prefer ``+``), with ``q`` drawn from the same
    seeded canonical-direction stream as ``simba``.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    value = objective.value if hasattr(objective, "value") else objective
    x = as_vector(x0).copy()
    fx = value(x)
    dirs = canonical_directions(x.shape[0], seed)
    path = [x]
    for _ in range(iters):
        q = np.zeros(x.shape[0])
        q[next(dirs)] = 1.0
        up, down = x + eps * q, x - eps * q
        f_up, f_down = value(up), value(down)
        if f_up > fx and f_up >= f_down:
            x, fx = up, f_up
        elif f_down > fx:
            x, fx = down, f_down
        path.append(x)
    return path


def nes_gradient(oracle: QueryOracle, x, y: int | None, sigma: float, samples: int, rng: np.random.Generator, loss: str = "ce") -> np.ndarray:
    """Antithetic Gaussian-smoothing estimate of the attack-loss gradient at
    ``x``; costs ``samples`` queries."""
    x = as_vector(x)
    grad = np.zeros_like(x)
    for _ in range(samples // 2):
        u = rng.standard_normal(x.shape[0])
        hi = attack_loss(oracle.query(x + sigma * u), y, loss)
        lo = attack_loss(oracle.query(x - sigma * u), y, loss)
        grad += (hi - lo) * u
    return grad / (samples * sigma)


def nes_attack(oracle: QueryOracle, x, y: int, spec: AttackSpec, sigma: float, samples: int) -> AttackOutcome:
    """Antithetic Gaussian-smoothing gradient estimate plus signed ascent.

    Each round spends ``samples`` queries on the estimate and one more to
    score the projected iterate. A round that no longer fits in the budget is
    not started and the outcome is flagged ``truncated``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if samples < 2 or samples % 2:
        raise ValueError("samples must be a positive even number")
    if oracle.access == "decision":
        raise PermissionError("nes needs score access")
    x0 = as_vector(x)
    n = x0.shape[0]
    start = oracle.count
    limit = min(spec.budget, oracle.remaining)
    if limit < 1:
        return AttackOutcome(False, 0, np.zeros(n), None)
    rng = np.random.default_rng(spec.seed)
    xk = x0.copy()
    out = oracle.query(xk)
    outcome = AttackOutcome(False, 0, np.zeros(n), _label_of(out), [attack_loss(out, y, spec.loss)], [xk])
    success = _is_adversarial(out, y)
    while not success:
        left = limit - (oracle.count - start)
        if left < samples + 1:
            outcome.truncated = left > 0
            break
        grad = nes_gradient(oracle, xk, y, sigma, samples, rng, spec.loss)
        nxt = _constrain(x0, xk + spec.step_size * np.sign(grad), spec)
        out = oracle.query(nxt)
        outcome.rounds += 1
        if not np.array_equal(nxt, xk):
            outcome.accepted += 1
        xk = nxt
        outcome.iterates.append(xk)
        outcome.losses.append(attack_loss(out, y, spec.loss))
        success = _is_adversarial(out, y)
    outcome.success = bool(success)
    outcome.queries = oracle.count - start
    outcome.delta = xk - x0
    outcome.label = _label_of(out)
    return outcome


def _gradient_oracle(target) -> QueryOracle:
    if isinstance(target, QueryOracle):
        if target.access != "gradient":
            raise PermissionError("white-box attacks need gradient access")
        return target
    return QueryOracle(target, access="gradient")


def pgd_attack(f_or_g, x, y: int, spec: AttackSpec) -> AttackOutcome:
    """l_inf projected signed-gradient ascent on the cross-entropy.

    ``f_or_g`` is a classifier view (``MlpParams``,
    ``AntiAdversaryClassifier``) or a gradient-access ``QueryOracle`` over one.
    Runs ``spec.budget`` steps from ``delta = 0`` and stops early once the
    prediction flips; every gradient call and the final scoring cost a query.
    """
    if spec.norm != "inf":
        raise ValueError("pgd_attack is the l_inf attack")
    step = spec.step_size
    if step > spec.eps:
        raise ValueError("pgd step must not exceed eps")
    oracle = _gradient_oracle(f_or_g)
    x0 = as_vector(x)
    start = oracle.count
    delta = np.zeros_like(x0)
    outcome = AttackOutcome(False, 0, delta, None)
    probs = None
    for _ in range(spec.budget):
        loss, grad, probs = oracle.gradient(x0 + delta, y)
        outcome.losses.append(loss)
        if int(np.argmax(probs)) != y:
            break
        delta = np.clip(delta + step * np.sign(grad), -spec.eps, spec.eps)
        if spec.box is not None:
            delta = np.clip(x0 + delta, spec.box[0], spec.box[1]) - x0
        outcome.rounds += 1
        probs = None
    if probs is None:
        probs = oracle.query(x0 + delta)
    outcome.label = int(np.argmax(probs))
    outcome.success = outcome.label != y
    outcome.delta = delta
    outcome.queries = oracle.count - start
    return outcome


def pgd_batch(params: MlpParams, X: np.ndarray, Y: np.ndarray, spec: AttackSpec) -> np.ndarray:
    """Vectorized l_inf PGD on a batch (no early stop); returns ``X + delta``."""
    delta = np.zeros_like(X)
    for _ in range(spec.budget):
        _, _, grads = batch_loss_grads(params, X + delta, Y, want_params=False, want_input=True)
        delta = np.clip(delta + spec.step_size * np.sign(grads), -spec.eps, spec.eps)
        if spec.box is not None:
            delta = np.clip(X + delta, spec.box[0], spec.box[1]) - X
    return X + delta


def gradient_ascent_attack(f_or_g, x, y: int | None, alpha_over_L: float, iters: int) -> AttackOutcome:
    """Unconstrained ascent ``x <- x + (alpha/L) * grad`` for ``iters`` steps.

    ``f_or_g`` may be a classifier view, a scalar objective, or a
    ``CoupledAntiAdversary`` in single-gd mode, whose gradient step at the
    current iterate is added to each update. Every iterate is recorded. For
    scalar objectives ``success`` means the objective strictly increased.
    """
    if not 0 < alpha_over_L:
        raise ValueError("alpha_over_L must be positive")
    coupled = f_or_g if isinstance(f_or_g, CoupledAntiAdversary) else None
    if coupled is not None and coupled.cfg.mode != "single-gd":
        raise ValueError("gradient ascent couples with a single-gd defender")
    target = coupled.field if coupled is not None else f_or_g
    if isinstance(target, MlpParams) or hasattr(target, "predict_proba"):
        oracle = QueryOracle(target, access="gradient")
    else:
        oracle = QueryOracle(as_scalar_field(target), access="gradient")
    xk = as_vector(x).copy()
    x0 = xk
    outcome = AttackOutcome(False, 0, np.zeros_like(xk), None, iterates=[xk])
    for _ in range(iters):
        loss, grad, _ = oracle.gradient(xk, y)
        outcome.losses.append(loss)
        move = alpha_over_L * grad
        if coupled is not None:
            move = move + coupled.perturbation(xk)
        xk = xk + move
        outcome.iterates.append(xk)
        outcome.rounds += 1
        if np.any(move != 0):
            outcome.accepted += 1
    final = oracle.query(xk)
    if oracle.is_classifier:
        outcome.losses.append(attack_loss(final, y))
        outcome.label = int(np.argmax(final))
        outcome.success = outcome.label != y
    else:
        outcome.losses.append(final)
        outcome.success = final > outcome.losses[0]
    outcome.delta = xk - x0
    outcome.queries = oracle.count
    return outcome


def adaptive_transfer_attack(f: MlpParams, g_cfg: AntiAdvConfig, x, y: int, inner: AttackSpec) -> AttackOutcome:
    """Craft ``delta`` against the bare ``f`` with white-box PGD, then replay
    it once against the defended classifier.

    Queries are the inner attack's plus the single replay evaluation.
    """
    x0 = as_vector(x)
    crafted = pgd_attack(QueryOracle(f, access="gradient"), x0, y, inner)
    replay = QueryOracle(AntiAdversaryClassifier(f, g_cfg), access="score")
    probs = replay.query(x0 + crafted.delta)
    label = int(np.argmax(probs))
    return AttackOutcome(
        success=label != y,
        queries=crafted.queries + replay.count,
        delta=crafted.delta,
        label=label,
        losses=crafted.losses,
        rounds=crafted.rounds,
    )
