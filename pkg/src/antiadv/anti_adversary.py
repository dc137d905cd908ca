"""The anti-adversary layer: before classifying ``x``, nudge it towards higher
confidence in the network's own prediction and classify the nudged point.

``anti_forward`` is the K-step signed gradient descent solver used in
practice. ``anti_single_stp`` and ``anti_single_gd`` are the one-step solvers
the query-complexity analysis is stated for; ``CoupledAntiAdversary`` wires
them to an attacker for those theory experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import (
    MlpParams,
    NonFiniteError,
    _backprop_input,
    _check_input,
    _forward_cache,
    as_scalar_field,
    as_vector,
    loss_and_input_gradient,
    mlp_forward,
    softmax_ce,
)

MODES = ("signed-gd", "single-stp", "single-gd")


@dataclass(frozen=True)
class AntiAdvConfig:
    """Solver settings for the anti-adversary layer.

    ``alpha`` and ``K`` drive the signed-gd solver; ``eps_g`` and
    ``alpha_g_over_L`` are the step sizes of the single-step theory modes.
    ``guard`` only accepts steps that lower the pseudo-label loss while
    keeping the pseudo-label on top; a rejected step halves the step size.
    ``clip`` optionally boxes ``x + gamma`` (e.g. ``(0.0, 1.0)`` for images).
    """

    alpha: float = 0.15
    K: int = 2
    guard: bool = True
    mode: str = "signed-gd"
    eps_g: float | None = None
    alpha_g_over_L: float | None = None
    clip: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if int(self.K) != self.K or self.K < 0:
            raise ValueError("K must be a non-negative integer")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "single-stp" and (self.eps_g is None or self.eps_g < 0):
            raise ValueError("single-stp mode needs eps_g >= 0")
        if self.mode == "single-gd" and (self.alpha_g_over_L is None or self.alpha_g_over_L < 0):
            raise ValueError("single-gd mode needs alpha_g_over_L >= 0")
        if self.clip is not None and not self.clip[0] < self.clip[1]:
            raise ValueError("clip must be an increasing (low, high) pair")


@dataclass
class AntiAdvTrace:
    pseudo_label: int
    gammas: list[np.ndarray] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)
    forwards: int = 0
    backwards: int = 0

    @property
    def gamma(self) -> np.ndarray:
        return self.gammas[-1]


def pseudo_label(f: MlpParams, x) -> int:
    """Lowest-index argmax of the network's prediction at ``x``."""
    return int(np.argmax(mlp_forward(f, x)))


def anti_forward(f: MlpParams, x, cfg: AntiAdvConfig) -> tuple[np.ndarray, AntiAdvTrace]:
    """Probabilities of ``f`` at ``x + gamma`` after ``cfg.K`` signed descent
    steps on the cross-entropy of the pseudo-label, starting from ``gamma = 0``.

    Costs exactly ``K + 1`` forward and ``K`` backward passes whatever the
    guard decides, so the layer's cost does not depend on the input.
    """
    if cfg.mode != "signed-gd":
        raise ValueError(f"anti_forward runs the signed-gd solver, config has mode {cfg.mode!r}")
    x = _check_input(f, x)
    logits, inputs, pre = _forward_cache(f, x)
    yhat = int(np.argmax(logits))
    probs, loss = softmax_ce(logits, yhat)
    gamma = np.zeros_like(x)
    trace = AntiAdvTrace(yhat, [gamma], [loss], [], forwards=1)
    step = float(cfg.alpha)

    for k in range(cfg.K):
        dlogits = probs.copy()
        dlogits[yhat] -= 1.0
        grad = _backprop_input(f, inputs, pre, dlogits)
        trace.backwards += 1

        candidate = gamma - step * np.sign(grad)
        point = x + candidate
        if cfg.clip is not None:
            point = np.clip(point, cfg.clip[0], cfg.clip[1])
            candidate = point - x
        c_logits, c_inputs, c_pre = _forward_cache(f, point)
        trace.forwards += 1
        if not np.all(np.isfinite(c_logits)):
            raise NonFiniteError(f"anti-adversary iterate {k + 1} produced non-finite logits")
        c_probs, c_loss = softmax_ce(c_logits, yhat)

        ok = not cfg.guard or (c_loss < loss and int(np.argmax(c_logits)) == yhat)
        if ok:
            gamma, probs, loss, inputs, pre = candidate, c_probs, c_loss, c_inputs, c_pre
        else:
            step *= 0.5
        trace.accepted.append(ok)
        trace.gammas.append(gamma)
        trace.losses.append(loss)
    return probs, trace


def anti_single_stp(f, x, q, eps_g: float, label: int | None = None) -> np.ndarray:
    """One stochastic-three-points descent step along ``q`` from ``x``.

    Returns whichever of ``+eps_g*q``, ``-eps_g*q`` and ``0`` gives the lowest
    loss. Ties keep ``0``, then prefer ``+``.
    """
    if eps_g < 0:
        raise ValueError("eps_g must be non-negative")
    field_ = as_scalar_field(f, label)
    x = as_vector(x)
    q = as_vector(q, "q")
    best = np.zeros_like(x)
    if eps_g == 0:
        return best
    best_loss = field_.value(x)
    for cand in (eps_g * q, -eps_g * q):
        val = field_.value(x + cand)
        if val < best_loss:
            best, best_loss = cand, val
    return best


def anti_single_gd(f, x, alpha_g_over_L: float, label: int | None = None) -> np.ndarray:
    """One gradient descent step on the loss: ``-(alpha_g / L) * grad``."""
    if alpha_g_over_L < 0:
        raise ValueError("alpha_g_over_L must be non-negative")
    field_ = as_scalar_field(f, label)
    return -alpha_g_over_L * field_.gradient(as_vector(x))


class AntiAdversaryClassifier:
    """The defended classifier ``g``: ``f`` with the anti-adversary layer in front.

    Exposes the same ``predict_proba`` / ``predict`` / ``loss_grad`` surface as
    ``MlpParams`` and keeps running totals of the layer's internal passes.
    """

    def __init__(self, f: MlpParams, cfg: AntiAdvConfig):
        if cfg.mode != "signed-gd":
            raise ValueError("the deployable layer uses the signed-gd solver")
        self.f = f
        self.cfg = cfg
        self.forwards = 0
        self.backwards = 0

    @property
    def n_inputs(self) -> int:
        return self.f.n_inputs

    @property
    def n_classes(self) -> int:
        return self.f.n_classes

    def forward(self, x) -> tuple[np.ndarray, AntiAdvTrace]:
        probs, trace = anti_forward(self.f, x, self.cfg)
        self.forwards += trace.forwards
        self.backwards += trace.backwards
        return probs, trace

    def predict_proba(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def predict(self, x) -> int:
        return int(np.argmax(self.predict_proba(x)))

    def loss_grad(self, x, label: int) -> tuple[float, np.ndarray, np.ndarray]:
        """Loss of ``g`` and its exact input gradient.

        ``gamma`` is piecewise constant in ``x`` (sign steps, argmax, guard
        decisions), so almost everywhere the gradient through the unrolled
        solver is the gradient of ``f`` at ``x + gamma``. Coordinates pinned by
        the clip box get zero gradient.
        """
        x = as_vector(x)
        _, trace = self.forward(x)
        point = x + trace.gamma
        loss, grad, probs = loss_and_input_gradient(self.f, point, label)
        self.forwards += 1
        self.backwards += 1
        if self.cfg.clip is not None:
            lo, hi = self.cfg.clip
            pinned = (point <= lo) | (point >= hi)
            grad = np.where(pinned, 0.0, grad)
        return loss, grad, probs


class CoupledAntiAdversary:
    """Theory-mode defender that shares the attacker's state.

    In ``single-stp`` mode it answers ``perturbation(x_k, q_k)`` with one STP
    descent step along the attacker's current direction; in ``single-gd`` mode
    with one gradient step at the attacker's current iterate. Attackers that
    receive one of these add the returned perturbation to their own update.
    Never used outside the query-complexity experiments.
    """

    def __init__(self, f, cfg: AntiAdvConfig, label: int | None = None):
        if cfg.mode not in ("single-stp", "single-gd"):
            raise ValueError("coupling is defined for the single-step modes only")
        self.field = as_scalar_field(f, label)
        self.f = f
        self.label = label
        self.cfg = cfg
        self.evaluations = 0

    def perturbation(self, x, q=None) -> np.ndarray:
        if self.cfg.mode == "single-stp":
            if q is None:
                raise ValueError("single-stp coupling needs the attacker's direction")
            self.evaluations += 3
            return anti_single_stp(self.field, x, q, self.cfg.eps_g)
        self.evaluations += 1
        return anti_single_gd(self.field, x, self.cfg.alpha_g_over_L)
