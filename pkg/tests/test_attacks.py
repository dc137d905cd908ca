import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from antiadv.anti_adversary import AntiAdvConfig, AntiAdversaryClassifier, CoupledAntiAdversary
from antiadv.attacks import (
    AttackSpec,
    BudgetExhausted,
    QueryOracle,
    adaptive_transfer_attack,
    attack_loss,
    gradient_ascent_attack,
    nes_attack,
    nes_gradient,
    pgd_attack,
    simba,
    stp_maximize,
)
from antiadv.core_math import MlpParams, init_mlp, mlp_forward
from antiadv.theory import LinearObjective, SyntheticObjective

UNBOUNDED = dict(eps=math.inf)


class Constant:
    def value(self, x):
        return 1.0

    def gradient(self, x):
        return np.zeros_like(x)


def linear_classifier(w_gap, bias=0.0):
    """Two-class linear softmax model whose logit gap z0 - z1 is w_gap . x + bias."""
    w_gap = np.asarray(w_gap, dtype=float)
    return MlpParams((np.vstack([w_gap / 2, -w_gap / 2]),), (np.array([bias / 2, -bias / 2]),))


# ---------------------------------------------------------------- oracle


def test_oracle_counts_and_enforces_budget(tiny_mlp):
    oracle = QueryOracle(tiny_mlp, budget=2)
    oracle.query([0.0, 0.0])
    oracle.query([0.1, 0.0])
    with pytest.raises(BudgetExhausted):
        oracle.query([0.2, 0.0])
    assert oracle.count == 2 and oracle.remaining == 0


def test_oracle_access_levels(tiny_mlp):
    assert QueryOracle(tiny_mlp, "decision").query([0.5, -0.5]) == 0
    assert QueryOracle(tiny_mlp, "score").query([0.5, -0.5]).shape == (2,)
    with pytest.raises(PermissionError):
        QueryOracle(tiny_mlp, "score").gradient([0.5, -0.5], 0)
    with pytest.raises(PermissionError):
        simba(QueryOracle(tiny_mlp, "decision"), [0.5, -0.5], 0, AttackSpec())


def test_oracle_counts_one_query_per_g_evaluation(tiny_mlp):
    g = AntiAdversaryClassifier(tiny_mlp, AntiAdvConfig(K=3))
    oracle = QueryOracle(g)
    oracle.query([0.5, -0.5])
    assert oracle.count == 1 and (g.forwards, g.backwards) == (4, 3)


def test_spec_validation():
    for bad in (dict(eps=-1.0), dict(budget=-1), dict(norm="1"), dict(loss="hinge"), dict(step=-0.1)):
        with pytest.raises(ValueError):
            AttackSpec(**bad)


def test_attack_losses():
    probs = np.array([0.7, 0.2, 0.1])
    assert attack_loss(probs, 0) == pytest.approx(-math.log(0.7))
    assert attack_loss(probs, 0, "margin") == pytest.approx(math.log(0.2) - math.log(0.7))
    assert attack_loss(2.5, None) == 2.5


# ---------------------------------------------------------------- simba / stp


def test_simba_zero_budget_is_immediate_failure(tiny_mlp):
    oracle = QueryOracle(tiny_mlp)
    out = simba(oracle, [0.5, -0.5], 0, AttackSpec(budget=0))
    assert not out.success and out.queries == 0 and oracle.count == 0


@pytest.mark.parametrize("B", [1, 5, 40])
def test_simba_both_directions_spends_two_queries_per_round(B):
    obj = SyntheticObjective.random(3, B)
    oracle = QueryOracle(obj)
    out = simba(oracle, np.zeros(3), None, AttackSpec(budget=2 * B, step=0.01, **UNBOUNDED), "both-directions")
    assert out.rounds <= B
    assert out.queries == oracle.count == 1 + 2 * out.rounds


def test_simba_linear_steps_follow_weight_signs():
    w = np.array([2.0, -0.5, 1.0, -3.0])
    obj = LinearObjective(w)
    eps = 0.1
    out = simba(QueryOracle(obj), np.zeros(4), None, AttackSpec(budget=201, step=eps, **UNBOUNDED), "both-directions")
    for a, b in zip(out.iterates, out.iterates[1:]):
        d = b - a
        i = int(np.argmax(np.abs(d)))
        np.testing.assert_allclose(d, eps * np.sign(w[i]) * np.eye(4)[i], rtol=0, atol=1e-15)
        assert obj.value(b) - obj.value(a) == pytest.approx(eps * abs(w[i]), rel=1e-12)


def test_simba_original_variant_skips_minus_after_success():
    obj = LinearObjective([1.0])
    oracle = QueryOracle(obj)
    out = simba(oracle, [0.0], None, AttackSpec(budget=11, step=0.1, **UNBOUNDED))
    # every + probe improves, so each round costs a single query
    assert out.rounds == 10 and out.queries == 11 and out.accepted == 10


def test_simba_rejects_unbounded_step():
    with pytest.raises(ValueError):
        simba(QueryOracle(Constant()), [0.0], None, AttackSpec(budget=5, **UNBOUNDED))


def test_simba_against_matched_stp_defender_never_moves():
    obj = LinearObjective([1.0, -2.0, 0.5])
    defender = CoupledAntiAdversary(obj, AntiAdvConfig(mode="single-stp", eps_g=0.05))
    x0 = np.array([0.2, 0.1, -0.3])
    out = simba(QueryOracle(obj), x0, None, AttackSpec(budget=301, step=0.05, **UNBOUNDED), "both-directions", defender)
    assert out.accepted == 0 and not out.success
    assert all(np.array_equal(x, x0) for x in out.iterates)


@given(st.integers(0, 3000), st.sampled_from(["original", "both-directions"]), st.integers(0, 60))
def test_simba_classifier_invariants(seed, variant, budget):
    f = init_mlp((3, 8, 3), seed)
    x = np.random.default_rng(seed).uniform(-1, 1, 3)
    y = int(np.argmax(mlp_forward(f, x)))
    spec = AttackSpec(eps=0.2, step=0.07, budget=budget, seed=seed)
    oracle = QueryOracle(f)
    out = simba(oracle, x, y, spec, variant)
    assert out.queries == oracle.count <= budget
    assert np.max(np.abs(out.delta), initial=0.0) <= 0.2 + 1e-12
    assert all(b >= a for a, b in zip(out.losses, out.losses[1:]))
    if out.queries:
        assert out.success == (out.label != y)
        assert out.label == int(np.argmax(mlp_forward(f, x + out.delta)))


@given(st.integers(0, 10_000), st.integers(1, 6), st.floats(0.001, 0.5))
def test_simba_matches_stp_bit_for_bit(seed, n, eps):
    obj = SyntheticObjective.random(n, seed)
    x0 = np.random.default_rng(seed + 1).uniform(-1, 1, n)
    steps = 60
    out = simba(QueryOracle(obj), x0, None, AttackSpec(budget=2 * steps + 1, step=eps, seed=seed, **UNBOUNDED), "both-directions")
    path = stp_maximize(obj, x0, eps, steps, seed)
    assert len(path) == len(out.iterates) == steps + 1
    assert all(a.tobytes() == b.tobytes() for a, b in zip(path, out.iterates))
    moved = sum(not np.array_equal(a, b) for a, b in zip(path, path[1:]))
    assert moved == out.accepted


def test_stp_constant_objective_never_moves():
    path = stp_maximize(Constant(), [0.1, 0.2], 0.3, 50, 0)
    assert all(np.array_equal(p, [0.1, 0.2]) for p in path)


@given(st.integers(0, 1000))
def test_stp_objective_non_decreasing(seed):
    obj = SyntheticObjective.random(3, seed)
    path = stp_maximize(obj, np.zeros(3), 0.01, 100, seed)
    vals = [obj.value(p) for p in path]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_stp_rejects_negative_iterations():
    with pytest.raises(ValueError):
        stp_maximize(Constant(), [0.0], 0.1, -1, 0)


# ---------------------------------------------------------------- nes


def test_nes_estimate_aligns_with_linear_gradient():
    w = np.array([1.0, -2.0, 0.5, 3.0, -1.0])
    est = nes_gradient(QueryOracle(LinearObjective(w)), np.zeros(5), None, 0.01, 4000, np.random.default_rng(0))
    assert est @ w / (np.linalg.norm(est) * np.linalg.norm(w)) > 0.9


def test_nes_rejects_bad_smoothing(tiny_mlp):
    with pytest.raises(ValueError):
        nes_attack(QueryOracle(tiny_mlp), [0.0, 0.0], 0, AttackSpec(), sigma=0.0, samples=10)
    with pytest.raises(ValueError):
        nes_attack(QueryOracle(tiny_mlp), [0.0, 0.0], 0, AttackSpec(), sigma=0.01, samples=3)


def test_nes_truncates_rounds_that_do_not_fit():
    f = linear_classifier([4.0, 4.0], bias=3.0)
    oracle = QueryOracle(f)
    out = nes_attack(oracle, [0.0, 0.0], 0, AttackSpec(eps=0.1, step=0.01, budget=30), sigma=0.01, samples=10)
    # 1 initial query + two rounds of 11; a third round would need 11 more
    assert out.rounds == 2 and out.queries == oracle.count == 23 and out.truncated and not out.success


@given(st.integers(0, 2000), st.integers(0, 80))
def test_nes_accounting_and_feasibility(seed, budget):
    f = init_mlp((2, 8, 2), seed)
    x = np.random.default_rng(seed).uniform(-1, 1, 2)
    y = int(np.argmax(mlp_forward(f, x)))
    oracle = QueryOracle(f)
    out = nes_attack(oracle, x, y, AttackSpec(eps=0.15, step=0.05, budget=budget, seed=seed), 0.01, 4)
    assert out.queries == oracle.count <= budget
    assert np.max(np.abs(out.delta), initial=0.0) <= 0.15 + 1e-12


# ---------------------------------------------------------------- pgd


def test_pgd_zero_radius(tiny_mlp):
    x = np.array([0.5, -0.5])
    for y in (0, 1):
        out = pgd_attack(tiny_mlp, x, y, AttackSpec(eps=0.0, step=0.0, budget=5))
        np.testing.assert_array_equal(out.delta, 0.0)
        assert out.success == (int(np.argmax(mlp_forward(tiny_mlp, x))) != y)


@pytest.mark.parametrize("eps", [0.1, 0.2, 0.3, 0.45])
def test_pgd_linear_worst_corner(eps):
    w = np.array([1.5, -1.0])
    f = linear_classifier(w, bias=0.5)
    x = np.array([0.1, 0.1])
    margin = w @ x + 0.5
    out = pgd_attack(f, x, 0, AttackSpec(eps=eps, step=eps, budget=1))
    np.testing.assert_array_equal(out.delta, -eps * np.sign(w))
    assert out.success == (margin - eps * np.abs(w).sum() < 0)


def test_pgd_requires_small_step(tiny_mlp):
    with pytest.raises(ValueError):
        pgd_attack(tiny_mlp, [0.0, 0.0], 0, AttackSpec(eps=0.1, step=0.2))


@given(st.integers(0, 2000))
def test_pgd_feasible_and_metered(seed):
    f = init_mlp((3, 8, 2), seed)
    x = np.random.default_rng(seed).uniform(-1, 1, 3)
    oracle = QueryOracle(f, "gradient")
    out = pgd_attack(oracle, x, 0, AttackSpec(eps=0.2, step=0.05, budget=10, box=(-1.0, 1.0)))
    assert np.max(np.abs(out.delta)) <= 0.2 + 1e-12
    assert np.all(np.abs(x + out.delta) <= 1.0)
    assert out.queries == oracle.count


# ---------------------------------------------------------------- gradient ascent


def test_gradient_ascent_against_matched_defender_is_stationary():
    obj = SyntheticObjective.random(3, 4)
    defender = CoupledAntiAdversary(obj, AntiAdvConfig(mode="single-gd", alpha_g_over_L=0.5 / obj.L))
    x0 = np.array([0.3, -0.2, 0.9])
    out = gradient_ascent_attack(defender, x0, None, 0.5 / obj.L, 25)
    assert all(np.array_equal(x, x0) for x in out.iterates) and not out.success


def test_gradient_ascent_half_defender_displacement():
    obj = SyntheticObjective.random(3, 8)
    alpha, c = 0.8, 0.5
    defender = CoupledAntiAdversary(obj, AntiAdvConfig(mode="single-gd", alpha_g_over_L=(1 - c) * alpha / obj.L))
    out = gradient_ascent_attack(defender, np.array([1.0, -1.0, 0.5]), None, alpha / obj.L, 30)
    for a, b in zip(out.iterates, out.iterates[1:]):
        np.testing.assert_allclose(b - a, c * alpha / obj.L * obj.gradient(a), rtol=1e-12, atol=1e-15)


def test_gradient_ascent_reaches_maximizer():
    obj = SyntheticObjective.random(4, 2)
    out = gradient_ascent_attack(obj, np.zeros(4), None, 0.5 / obj.L, 600)
    assert np.max(np.abs(out.iterates[-1] - obj.x_star)) < 1e-6
    assert out.queries == 601


# ---------------------------------------------------------------- adaptive


def test_adaptive_failed_inner_attack_returns_delta(tiny_mlp):
    out = adaptive_transfer_attack(tiny_mlp, AntiAdvConfig(), [0.5, -0.5], 0, AttackSpec(eps=0.01, step=0.005, budget=3))
    assert not out.success and out.delta.shape == (2,)
    # three gradient steps, the final scoring query, one replay on g
    assert out.queries == 5


@given(st.integers(0, 3000))
def test_adaptive_dominates_inner_attack_on_guarded_layer(seed):
    f = init_mlp((2, 16, 2), seed)
    x = np.random.default_rng(seed).uniform(-1, 1, 2)
    y = int(np.argmax(mlp_forward(f, x)))
    spec = AttackSpec(eps=0.3, step=0.05, budget=10)
    inner = pgd_attack(f, x, y, spec)
    out = adaptive_transfer_attack(f, AntiAdvConfig(K=2, alpha=0.3, guard=True), x, y, spec)
    np.testing.assert_array_equal(out.delta, inner.delta)
    if inner.success:
        assert out.success
