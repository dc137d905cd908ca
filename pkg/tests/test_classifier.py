from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from antiadv.attacks import AttackSpec, pgd_attack
from antiadv.classifier import (
    TrainConfig,
    TrainingDiverged,
    evaluate,
    initial_params,
    load_checkpoint,
    make_dataset,
    predict_batch,
    save_checkpoint,
    train_adversarial,
    train_nominal,
)
from antiadv.core_math import MlpParams, ShapeError, mlp_forward

SMALL = TrainConfig(epochs=40, batch_size=32, lr=0.1, hidden=(16, 16), seed=3)


def test_noiseless_gaussians_are_the_means():
    d = make_dataset("two-gaussians", 10, 0.0, 5)
    for x, y in zip(d.X, d.y):
        np.testing.assert_array_equal(x, [-0.5, 0.0] if y == 0 else [0.5, 0.0])


@pytest.mark.parametrize("name", ["two-gaussians", "two-moons", "rings"])
def test_dataset_regenerates_identically(name):
    a, b = make_dataset(name, 101, 0.2, 9), make_dataset(name, 101, 0.2, 9)
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()


@given(st.sampled_from(["two-gaussians", "two-moons", "rings"]), st.integers(2, 300), st.floats(0, 0.5), st.integers(0, 99))
def test_dataset_balanced_and_in_box(name, m, noise, seed):
    d = make_dataset(name, m, noise, seed)
    counts = np.bincount(d.y, minlength=2)
    assert abs(int(counts[0]) - int(counts[1])) <= 1
    assert len(d) == m and np.all(np.abs(d.X) <= 1.0)


def test_dataset_errors():
    with pytest.raises(ValueError):
        make_dataset("spirals", 10, 0.1, 0)
    with pytest.raises(ValueError):
        make_dataset("rings", 1, 0.1, 0)
    with pytest.raises(ValueError):
        make_dataset("rings", 10, -0.1, 0)


def test_moons_fixture_trains_well():
    d = make_dataset("two-moons", 200, 0.1, 7)
    params = train_nominal(d, TrainConfig(epochs=200, batch_size=32, lr=0.1, seed=0))
    assert evaluate(params, d) >= 0.95


def test_separable_gaussians_train_to_near_perfect():
    d = make_dataset("two-gaussians", 400, 0.1, 2)
    assert evaluate(train_nominal(d, SMALL), d) >= 0.99


def test_zero_epochs_returns_initialization():
    d = make_dataset("rings", 50, 0.05, 0)
    cfg = replace(SMALL, epochs=0)
    assert train_nominal(d, cfg).same_as(initial_params(d, cfg))


def test_training_is_deterministic():
    d = make_dataset("two-moons", 120, 0.1, 1)
    assert train_nominal(d, SMALL).same_as(train_nominal(d, SMALL))
    spec = AttackSpec(eps=0.05, step=0.02, budget=3)
    assert train_adversarial(d, SMALL, spec).same_as(train_adversarial(d, SMALL, spec))


def test_zero_radius_adversarial_training_is_nominal():
    d = make_dataset("two-moons", 120, 0.1, 1)
    spec = AttackSpec(eps=0.0, step=0.0, budget=3)
    assert train_adversarial(d, SMALL, spec).same_as(train_nominal(d, SMALL))


def test_divergence_reports_epoch():
    d = make_dataset("two-gaussians", 64, 0.1, 0)
    with pytest.raises(TrainingDiverged) as info:
        train_nominal(d, replace(SMALL, lr=1e200))
    assert info.value.epoch == 0


def _pgd_robust_accuracy(params, data, eps):
    spec = AttackSpec(eps=eps, step=eps / 4, budget=10)
    return np.mean([not pgd_attack(params, x, int(y), spec).success for x, y in zip(data.X, data.y)])


def test_adversarial_training_beats_nominal_under_pgd(moons_models):
    test = moons_models["test"].subset(300)
    nominal = _pgd_robust_accuracy(moons_models["nominal"], test, 0.1)
    robust = _pgd_robust_accuracy(moons_models["robust"], test, 0.1)
    assert robust > nominal


def test_evaluate_matches_recount(moons_models):
    f, test = moons_models["nominal"], moons_models["test"]
    recount = sum(int(np.argmax(mlp_forward(f, x))) == int(y) for x, y in zip(test.X, test.y)) / len(test)
    assert evaluate(f, test) == recount


def test_constant_classifier_scores_half():
    d = make_dataset("two-gaussians", 100, 0.1, 0)
    const = MlpParams((np.zeros((2, 2)),), (np.array([1.0, 0.0]),))
    assert evaluate(const, d) == 0.5


def test_ties_go_to_lowest_index():
    d = make_dataset("two-gaussians", 10, 0.1, 0)
    flat = MlpParams((np.zeros((2, 2)),), (np.zeros(2),))
    assert np.all(predict_batch(flat, d.X) == 0)


def test_memorizer_scores_one():
    d = make_dataset("two-gaussians", 40, 0.0, 0)
    # noiseless means are split by the sign of the first coordinate
    perfect = MlpParams((np.array([[-1.0, 0.0], [1.0, 0.0]]),), (np.zeros(2),))
    assert evaluate(perfect, d) == 1.0


def test_evaluate_rejects_dimension_mismatch():
    d = make_dataset("two-gaussians", 10, 0.1, 0)
    with pytest.raises(ShapeError):
        evaluate(MlpParams((np.zeros((2, 3)),), (np.zeros(2),)), d)


def test_checkpoint_round_trip(tmp_path):
    d = make_dataset("rings", 80, 0.05, 4)
    params = train_nominal(d, replace(SMALL, epochs=5))
    save_checkpoint(tmp_path / "m.json", params, {"seed": 3})
    loaded, prov = load_checkpoint(tmp_path / "m.json")
    assert loaded.same_as(params) and prov == {"seed": 3}


def test_checkpoint_rejects_foreign_format(tmp_path):
    (tmp_path / "m.json").write_text('{"format": "other", "version": 1}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "m.json")
