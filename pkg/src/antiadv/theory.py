"""Query-complexity bounds for SimBA and gradient ascent against a bare
classifier ``f`` and against the anti-adversary classifier ``g``, plus the
empirical checks that go with them.

Black-box track (SimBA == STP on canonical directions): gradient precision is
measured in the l1 norm. White-box track (gradient ascent with step
``alpha / L``): squared l2 norm. The two never mix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .anti_adversary import AntiAdvConfig, CoupledAntiAdversary
from .attacks import AttackSpec, QueryOracle, canonical_directions, simba
from .core_math import as_vector


class RegimeError(ValueError):
    """Inputs outside the regime a bound is stated for."""


@dataclass(frozen=True)
class TheoryInputs:
    """Constants of the bounds.

    ``L`` smoothness, ``rho`` target gradient precision, ``n`` dimension,
    ``eps`` SimBA step, ``c`` relative attacker/defender step
    (defender step ``(1 - c) * eps``), ``loss_gap`` distance of the starting
    loss to the supremum, ``alpha`` white-box step in units of ``1/L``.
    """

    L: float
    rho: float
    n: int
    eps: float
    loss_gap: float
    c: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if not self.L > 0:
            raise RegimeError("L must be positive")
        if not self.rho > 0:
            raise RegimeError("rho must be positive")
        if self.n < 1:
            raise RegimeError("n must be >= 1")
        if not self.loss_gap >= 0:
            raise RegimeError("loss_gap must be non-negative")


def _check_blackbox_regime(t: TheoryInputs) -> None:
    limit = t.rho / (t.n * t.L)
    if not 0 < t.eps < limit:
        raise RegimeError(f"need 0 < eps < rho/(n*L) = {limit:.6g}, got eps = {t.eps:.6g}")


def k_base(t: TheoryInputs) -> float:
    """SimBA budget after which min E||grad||_1 < rho is guaranteed on ``f``."""
    _check_blackbox_regime(t)
    return t.loss_gap / ((t.rho / t.n - t.L * t.eps / 2) * t.eps)


def k_anti(t: TheoryInputs) -> float:
    """Same budget against ``g`` with a coupled single-STP layer; ``inf`` for c <= 0."""
    _check_blackbox_regime(t)
    if t.c is None or t.c >= 1:
        raise RegimeError(f"need c < 1, got c = {t.c}")
    if t.c <= 0:
        return math.inf
    return t.loss_gap / ((t.rho / t.n - t.L * t.eps * t.c / 2) * t.eps * t.c)


def g_blackbox(t: TheoryInputs) -> float:
    """Robustness factor ``K_g / K_f`` for c in (0, 1)."""
    _check_blackbox_regime(t)
    if t.c is None or not 0 < t.c < 1:
        raise RegimeError(f"need 0 < c < 1, got c = {t.c}")
    head = t.rho / t.n - t.L * t.eps / 2
    return head / ((t.rho / t.n - t.L * t.eps * t.c / 2) * t.c)


def _check_whitebox_regime(alpha: float | None) -> None:
    if alpha is None or not 0 < alpha <= 1:
        raise RegimeError(f"need 0 < alpha <= 1, got alpha = {alpha}")


def k_base_whitebox(t: TheoryInputs) -> float:
    """Gradient-ascent iterations after which min ||grad||_2^2 < rho on ``f``."""
    _check_whitebox_regime(t.alpha)
    return 2 * t.L * t.loss_gap / ((2 - t.alpha) * t.alpha * t.rho)


def k_anti_whitebox(t: TheoryInputs) -> float:
    """Same against ``g`` with a coupled single gradient step; ``inf`` for c <= 0."""
    _check_whitebox_regime(t.alpha)
    if t.c is None or t.c >= 1:
        raise RegimeError(f"need c < 1, got c = {t.c}")
    if t.c <= 0:
        return math.inf
    return 2 * t.L * t.loss_gap / ((2 - t.alpha * t.c) * t.alpha * t.rho * t.c)


def g_whitebox(alpha: float, c: float) -> float:
    _check_whitebox_regime(alpha)
    if not 0 < c < 1:
        raise RegimeError(f"need 0 < c < 1, got c = {c}")
    return (2 - alpha) / ((2 - alpha * c) * c)


class SyntheticObjective:
    """Concave quadratic ``top - 0.5 (x - x*)^T A (x - x*)``."""

    def __init__(self, A, x_star, top: float = 0.0):
        A = np.array(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.allclose(A, A.T, rtol=0, atol=1e-12):
            raise ValueError("A must be a symmetric square matrix")
        eig = np.linalg.eigvalsh(A)
        if eig[0] <= 0:
            raise ValueError("A must be positive definite")
        self.A = A
        self.x_star = as_vector(x_star, "x_star")
        self.top = float(top)
        self.L = float(eig[-1])

    @classmethod
    def random(cls, n: int, seed: int, spread: tuple[float, float] = (0.5, 2.0)) -> "SyntheticObjective":
        rng = np.random.default_rng(seed)
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        lam = rng.uniform(*spread, size=n)
        A = (Q * lam) @ Q.T
        return cls((A + A.T) / 2, rng.uniform(-1, 1, size=n))

    @property
    def n(self) -> int:
        return self.x_star.shape[0]

    def value(self, x) -> float:
        d = np.asarray(x, dtype=np.float64) - self.x_star
        return float(self.top - 0.5 * d @ self.A @ d)

    def gradient(self, x) -> np.ndarray:
        return -self.A @ (np.asarray(x, dtype=np.float64) - self.x_star)

    def gap(self, x0) -> float:
        return self.top - self.value(x0)


class LinearObjective:
    """``w . x + b``: globally monotone along every direction."""

    def __init__(self, w, b: float = 0.0):
        self.w = as_vector(w, "w")
        self.b = float(b)

    def value(self, x) -> float:
        return float(self.w @ np.asarray(x, dtype=np.float64) + self.b)

    def gradient(self, x) -> np.ndarray:
        return self.w.copy()


def check_local_monotonicity(obj, x, dirs=None, beta: float = 0.1, grid: int = 16, both_signs: bool = True) -> bool:
    """Grid certificate of local monotonicity at ``x``.

    For every direction ``r`` (canonical basis when ``dirs`` is None, and
    ``-r`` too when ``both_signs``) and every pair of step lengths on the grid
    ``beta * m / grid``, ``m = 1 .. grid-1``, require
    ``f(x) <= f(x + a r)  <=>  f(x) >= f(x - b r)``. Sampled, not exhaustive.
    """
    if not beta > 0 or grid < 2:
        raise ValueError("need beta > 0 and grid >= 2")
    value = obj.value if hasattr(obj, "value") else obj
    x = as_vector(x)
    if dirs is None:
        dirs = list(np.eye(x.shape[0]))
    steps = beta * np.arange(1, grid) / grid
    f0 = value(x)
    for r in dirs:
        r = as_vector(r, "direction")
        for s in ((1.0, -1.0) if both_signs else (1.0,)):
            ups = [f0 <= value(x + a * s * r) for a in steps]
            downs = [f0 >= value(x - a * s * r) for a in steps]
            # the biconditional holds for every (a, b) pair iff all flags agree
            if len(set(ups) | set(downs)) != 1:
                return False
    return True


def verify_iterate_identity(obj, x0, eps: float, c: float, steps: int, seed: int, grid: int = 16, tol: float = 1e-12) -> dict:
    """Run SimBA (both directions) against a coupled single-STP defender with
    step ``(1 - c) * eps`` and compare every displacement with
    ``c * eps * s_k * q_k``, where ``s_k`` is the sign of the directional
    derivative along the drawn direction ``q_k``.

    Only steps certified locally monotone at ``x_k`` (radius twice the larger
    step) are held to ``tol``; the rest are listed.
    """
    x0 = as_vector(x0)
    n = x0.shape[0]
    eps_g = (1.0 - c) * eps
    defender = CoupledAntiAdversary(obj, AntiAdvConfig(mode="single-stp", eps_g=eps_g))
    spec = AttackSpec(eps=math.inf, step=eps, budget=3 * steps + 1, seed=seed)
    out = simba(QueryOracle(obj), x0, None, spec, variant="both-directions", coupled=defender)
    dirs = canonical_directions(n, seed)
    beta = 2 * max(eps, eps_g)
    errors, uncertified = [], []
    for k in range(out.rounds):
        q = np.zeros(n)
        q[next(dirs)] = 1.0
        xk, xn = out.iterates[k], out.iterates[k + 1]
        if not check_local_monotonicity(obj, xk, [q], beta, grid):
            uncertified.append(k)
            continue
        sign = np.sign(obj.gradient(xk) @ q)
        errors.append(float(np.linalg.norm((xn - xk) - c * eps * sign * q)))
    max_error = max(errors) if errors else 0.0
    return {
        "steps": out.rounds,
        "certified": len(errors),
        "uncertified": uncertified,
        "max_error": max_error,
        "accepted": out.accepted,
        "tolerance": tol,
        "passed": bool(max_error <= tol),
        "iterates": out.iterates,
    }


def l1_precision_stop(obj, rho: float):
    """Analysis probe: true once ||grad||_1 < rho."""
    return lambda x: float(np.abs(obj.gradient(x)).sum()) < rho


def simba_to_precision(obj, x0, eps: float, rho: float, seed: int, max_rounds: int, c: float | None = None) -> tuple[float, float]:
    """Rounds and attacker queries until SimBA first reaches ||grad||_1 < rho.

    With ``c`` the attacker faces a coupled single-STP defender with step
    ``(1 - c) * eps``. Returns ``(inf, inf)`` if the cap is hit first.
    """
    coupled = None
    per_round = 2
    if c is not None:
        coupled = CoupledAntiAdversary(obj, AntiAdvConfig(mode="single-stp", eps_g=(1.0 - c) * eps))
        per_round = 3
    spec = AttackSpec(eps=math.inf, step=eps, budget=per_round * max_rounds + 1, seed=seed)
    out = simba(QueryOracle(obj), x0, None, spec, "both-directions", coupled, l1_precision_stop(obj, rho))
    if not out.success:
        return math.inf, math.inf
    return float(out.rounds), float(out.queries)


def bound_fixture(n: int, seed: int, rho: float = 0.5, eps_fraction: float = 0.5) -> tuple[SyntheticObjective, np.ndarray, TheoryInputs]:
    """Random concave quadratic, a start point on the unit sphere around the
    optimum, and the matching in-regime ``TheoryInputs``."""
    obj = SyntheticObjective.random(n, seed)
    rng = np.random.default_rng([seed, 7])
    u = rng.standard_normal(n)
    x0 = obj.x_star + u / np.linalg.norm(u)
    eps = eps_fraction * rho / (n * obj.L)
    t = TheoryInputs(L=obj.L, rho=rho, n=n, eps=eps, loss_gap=obj.gap(x0))
    return obj, x0, t


def random_inputs(rng: np.random.Generator) -> TheoryInputs:
    """Random black-box inputs strictly inside the regime, with c in (0, 1)."""
    n = int(rng.integers(1, 101))
    L = float(rng.uniform(0.1, 10.0))
    rho = float(rng.uniform(0.01, 10.0))
    eps = float(rng.uniform(0.01, 0.99)) * rho / (n * L)
    return TheoryInputs(L=L, rho=rho, n=n, eps=eps, loss_gap=float(rng.uniform(0.0, 10.0)),
                        c=float(rng.uniform(0.01, 0.99)), alpha=float(rng.uniform(0.01, 1.0)))


def formula_checks(count: int = 10_000, seed: int = 0, c_grid=None, limit_c: float = 1 - 1e-6) -> dict:
    """Consistency of the closed forms: ``G * K_f == K_g`` on random inputs,
    monotone decrease and ``G > 1`` on the c grid, ``G -> 1`` as ``c -> 1``."""
    rng = np.random.default_rng(seed)
    worst_bb = worst_wb = 0.0
    for _ in range(count):
        t = random_inputs(rng)
        kf, kg = k_base(t), k_anti(t)
        if kg > 0:
            worst_bb = max(worst_bb, abs(g_blackbox(t) * kf - kg) / kg)
        kf_w, kg_w = k_base_whitebox(t), k_anti_whitebox(t)
        if kg_w > 0:
            worst_wb = max(worst_wb, abs(g_whitebox(t.alpha, t.c) * kf_w - kg_w) / kg_w)

    if c_grid is None:
        c_grid = [round(0.05 * i, 2) for i in range(1, 20)]
    probe = TheoryInputs(L=1.0, rho=0.2, n=2, eps=0.05, loss_gap=1.0)
    g_bb = [g_blackbox(replace_c(probe, c)) for c in c_grid]
    g_wb = [g_whitebox(1.0, c) for c in c_grid]
    lim_bb = g_blackbox(replace_c(probe, limit_c))
    lim_wb = g_whitebox(1.0, limit_c)

    def decreasing_above_one(vals):
        return all(a > b for a, b in zip(vals, vals[1:])) and all(v > 1 for v in vals)

    return {
        "random_inputs": count,
        "max_rel_error_blackbox": worst_bb,
        "max_rel_error_whitebox": worst_wb,
        "c_grid": list(c_grid),
        "G_blackbox": g_bb,
        "G_whitebox": g_wb,
        "limit_c": limit_c,
        "limit_gap_blackbox": abs(lim_bb - 1),
        "limit_gap_whitebox": abs(lim_wb - 1),
        "passed": {
            "product_identity": worst_bb <= 1e-12 and worst_wb <= 1e-12,
            "decreasing_blackbox": decreasing_above_one(g_bb),
            "decreasing_whitebox": decreasing_above_one(g_wb),
            "limit": abs(lim_bb - 1) < 1e-3 and abs(lim_wb - 1) < 1e-3,
        },
    }


def replace_c(t: TheoryInputs, c: float) -> TheoryInputs:
    return TheoryInputs(L=t.L, rho=t.rho, n=t.n, eps=t.eps, loss_gap=t.loss_gap, c=c, alpha=t.alpha)


def empirical_checks(n: int = 4, objectives: int = 3, trials: int = 50, c_values=(0.25, 0.5, 0.75),
                     max_rounds: int = 20_000, rho: float = 0.5) -> dict:
    """Observed SimBA behaviour on random concave quadratics in the regime.

    Per objective: mean rounds to ``||grad||_1 < rho`` against the bound
    ``k_base``, and the median attacker queries against coupled defenders at
    each ``c`` compared with the undefended baseline.
    """
    per_objective = []
    bound_ok = ordering_ok = True
    for k in range(objectives):
        obj, x0, t = bound_fixture(n, k, rho=rho)
        kf = k_base(t)
        base = [simba_to_precision(obj, x0, t.eps, rho, s, max_rounds) for s in range(trials)]
        mean_rounds = float(np.mean([r for r, _ in base]))
        median_f = float(np.median([q for _, q in base]))
        medians, trial_queries = {}, {"f": [q for _, q in base]}
        for c in c_values:
            runs = [simba_to_precision(obj, x0, t.eps, rho, s, max_rounds, c=c) for s in range(trials)]
            medians[c] = float(np.median([q for _, q in runs]))
            trial_queries[str(c)] = [q for _, q in runs]
        ordered = [medians[c] for c in sorted(c_values)]
        mono = all(a >= b for a, b in zip(ordered, ordered[1:])) and all(m >= median_f for m in ordered)
        bound_ok &= mean_rounds <= kf
        ordering_ok &= mono
        per_objective.append({
            "objective": k,
            "k_base": kf,
            "mean_rounds": mean_rounds,
            "median_queries_f": median_f,
            "median_queries_g": {str(c): v for c, v in medians.items()},
            "bound_holds": mean_rounds <= kf,
            "ordering_holds": mono,
            "regime": {"L": t.L, "rho": t.rho, "n": t.n, "eps": t.eps, "loss_gap": t.loss_gap},
            "trial_rounds_f": [r for r, _ in base],
            "trial_queries": trial_queries,
        })
    return {"objectives": per_objective, "passed": {"bound": bool(bound_ok), "ordering": bool(ordering_ok)}}


def corner_checks(n: int = 4, steps: int = 500, eps: float = 0.05, seeds=range(5)) -> dict:
    """c = 0 never moves, c = 1 reproduces plain SimBA, c = 0.5 follows the
    iterate identity, all on linear fixtures (locally monotone everywhere)."""
    stuck = same = True
    identity_error = 0.0
    for seed in seeds:
        rng = np.random.default_rng([seed, 11])
        w = rng.choice([-1.0, 1.0], size=n) * rng.uniform(0.5, 2.0, size=n)
        obj = LinearObjective(w, float(rng.normal()))
        x0 = rng.uniform(-1, 1, size=n)
        spec = AttackSpec(eps=math.inf, step=eps, budget=3 * steps + 1, seed=seed)
        c0 = CoupledAntiAdversary(obj, AntiAdvConfig(mode="single-stp", eps_g=eps))
        out0 = simba(QueryOracle(obj), x0, None, spec, "both-directions", c0)
        stuck &= out0.accepted == 0 and all(np.array_equal(x, x0) for x in out0.iterates)
        c1 = CoupledAntiAdversary(obj, AntiAdvConfig(mode="single-stp", eps_g=0.0))
        spec_f = AttackSpec(eps=math.inf, step=eps, budget=2 * steps + 1, seed=seed)
        out1 = simba(QueryOracle(obj), x0, None, spec, "both-directions", c1)
        plain = simba(QueryOracle(obj), x0, None, spec_f, "both-directions")
        # an inert defender skips the re-score query, so compare the first steps
        same &= len(out1.iterates) > steps and len(plain.iterates) == steps + 1 and all(
            np.array_equal(a, b) for a, b in zip(out1.iterates[: steps + 1], plain.iterates)
        )
        rep = verify_iterate_identity(obj, x0, eps, 0.5, steps, seed)
        identity_error = max(identity_error, rep["max_error"])
        same &= rep["certified"] == steps
    return {
        "c0_zero_accepted": bool(stuck),
        "c1_matches_plain": bool(same),
        "identity_max_error": identity_error,
        "passed": {"c0": bool(stuck), "c1": bool(same), "identity": identity_error <= 1e-12},
    }
