"""Core SVM math: hand-computed cases plus property tests.

The signed-label convention maps normal (0) to +1 and attack (1) to -1, so
all expected values below were derived by hand with that mapping.
"""

import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, assume
from hypothesis import strategies as st

from streamrank.model import (
    Hyperparams,
    LabeledExample,
    RunningNorm,
    empirical_risk,
    hinge_loss,
    init_model,
    load_checkpoint,
    predict,
    predict_batch,
    rank_features,
    save_checkpoint,
    select_top_k,
    sgd_step,
    signed_label,
    subgradient,
)


def make_model(w, lam=0.0, alpha=0.5, batch_size=32):
    names = [f"x{i}" for i in range(len(w) - 1)]
    model = init_model(names, Hyperparams(lam=lam, alpha=alpha, batch_size=batch_size))
    return replace(model, weights=np.asarray(w, dtype=float))


def ex(x, label):
    return LabeledExample(x=np.asarray(x, dtype=float), label=label)


def fd_gradient(w, batch, lam, h=1e-5):
    """Central-difference gradient of the batch loss; the independent oracle."""
    w = np.asarray(w, dtype=float)
    g = np.zeros_like(w)
    for j in range(w.shape[0]):
        wp, wm = w.copy(), w.copy()
        wp[j] += h
        wm[j] -= h
        g[j] = (empirical_risk(wp, batch, lam) - empirical_risk(wm, batch, lam)) / (2 * h)
    return g


class TestHingeLoss:
    def test_zero_weights_give_unit_hinge(self):
        x = np.array([3.0, -1.0, 1.0])
        for label in (0, 1):
            assert hinge_loss(np.zeros(3), x, label, 0.1) == pytest.approx(1.0)

    def test_satisfied_margin_leaves_only_regularizer(self):
        # margin 3 >= 1 kills the hinge term; (2/2)*9 remains
        assert hinge_loss(np.array([3.0, 0.0]), np.array([1.0, 0.0]), 0, 2.0) == 9.0

    def test_wrong_side_counts_double(self):
        assert hinge_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]), 1, 0.0) == 2.0

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError):
            hinge_loss(np.zeros(3), np.zeros(2), 0, 0.1)

    def test_non_finite_raises(self):
        with pytest.raises(ValueError):
            hinge_loss(np.array([np.nan, 0.0]), np.zeros(2), 0, 0.1)


class TestPredict:
    def test_nonnegative_decision_is_normal(self):
        assert predict(np.array([1.0, -1.0, 0.0]), np.array([2.0, 1.0, 1.0])) == 0

    def test_negative_decision_is_attack(self):
        assert predict(np.array([-1.0, 0.0, 0.0]), np.array([2.0, 1.0, 1.0])) == 1

    def test_tie_at_zero_is_normal(self):
        assert predict(np.zeros(3), np.array([5.0, 1.0, 1.0])) == 0

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=4)
        rows = rng.normal(size=(20, 4))
        batch = predict_batch(w, rows)
        assert [predict(w, r) for r in rows] == batch.tolist()


class TestSubgradient:
    def test_violated_margin_pulls_toward_example(self):
        g = subgradient(np.zeros(2), [ex([1.0, 2.0], 0)], 0.0)
        assert g.tolist() == [-1.0, -2.0]

    def test_satisfied_margin_contributes_nothing(self):
        g = subgradient(np.array([5.0, 0.0]), [ex([1.0, 0.0], 0)], 0.0)
        assert g.tolist() == [0.0, 0.0]

    def test_only_regularizer_survives_when_margins_met(self):
        w = np.array([2.0, -3.0])
        batch = [ex([1.0, 0.0], 0), ex([-1.0, 0.0], 1)]  # margins 2 and 2
        g = subgradient(w, batch, 0.7)
        np.testing.assert_array_equal(g, 0.7 * w)

    def test_empty_batch_raises(self):
        with pytest.raises(ValueError):
            subgradient(np.zeros(2), [], 0.0)

    @settings(max_examples=300, deadline=None)
    @given(st.data())
    def test_matches_finite_differences(self, data):
        d = data.draw(st.integers(2, 6))
        n = data.draw(st.integers(1, 5))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
        w = rng.normal(size=d)
        lam = data.draw(st.sampled_from([0.0, 0.3, 1.0]))
        batch = [
            ex(rng.normal(size=d), int(rng.integers(2))) for _ in range(n)
        ]
        margins = [signed_label(b.label) * float(w @ b.x) for b in batch]
        assume(all(abs(1.0 - m) > 1e-3 for m in margins))
        analytic = subgradient(w, batch, lam)
        numeric = fd_gradient(w, batch, lam)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)


class TestSgdStep:
    def test_hand_computed_update(self):
        model = make_model([0.0, 0.0], lam=0.0, alpha=0.5)
        model = sgd_step(model, [ex([1.0, 2.0], 0)])
        assert model.weights.tolist() == [0.5, 1.0]
        assert model.iteration == 1

    def test_hand_computed_update_matches_fd_oracle(self):
        w = np.zeros(2)
        batch = [ex([1.0, 2.0], 0)]
        expected = w - 0.5 * fd_gradient(w, batch, 0.0)
        model = sgd_step(make_model(w, lam=0.0, alpha=0.5), batch)
        np.testing.assert_allclose(model.weights, expected, rtol=1e-9)

    def test_satisfied_batch_is_bitwise_fixed_point(self):
        w = np.array([0.1, -2.7, 3.3])
        model = make_model(w, lam=0.0, alpha=0.5)
        batch = [ex([100.0, 0.0, 0.0], 0), ex([-100.0, 0.0, 0.0], 1)]
        stepped = sgd_step(model, batch)
        assert stepped.weights.tobytes() == w.tobytes()

    def test_pure_weight_decay(self):
        model = make_model([1.0, 0.0], lam=0.2, alpha=0.5)
        model = sgd_step(model, [ex([10.0, 0.0], 0)])  # margin 10 >= 1
        np.testing.assert_allclose(model.weights, [0.9, 0.0])

    def test_oversized_batch_rejected(self):
        model = make_model([0.0, 0.0], batch_size=2)
        batch = [ex([1.0, 1.0], 0)] * 3
        with pytest.raises(ValueError):
            sgd_step(model, batch)

    def test_divergence_detected(self):
        model = make_model([1e308, 0.0], lam=10.0, alpha=1.0)
        with np.errstate(over="ignore"), pytest.raises((FloatingPointError, ValueError)):
            sgd_step(model, [ex([1.0, 0.0], 1)])

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_small_step_does_not_increase_batch_loss(self, seed):
        rng = np.random.default_rng(seed)
        d, n = 4, 8
        w = rng.normal(size=d)
        batch = [ex(rng.normal(size=d), int(rng.integers(2))) for _ in range(n)]
        model = make_model(w, lam=0.0, alpha=1e-3, batch_size=n)
        before = empirical_risk(w, batch, 0.0)
        after = empirical_risk(sgd_step(model, batch).weights, batch, 0.0)
        assert after <= before + 1e-12


class TestEmpiricalRisk:
    def test_zero_weights(self):
        data = [ex([1.0, 2.0], 0), ex([-3.0, 0.5], 1)]
        assert empirical_risk(np.zeros(2), data, 0.0) == 1.0

    def test_separated_data_has_zero_risk(self):
        data = [ex([2.0, 0.0], 0), ex([-2.0, 0.0], 1)]
        assert empirical_risk(np.array([1.0, 0.0]), data, 0.0) == 0.0

    def test_mean_of_hinge_terms(self):
        # terms: 1 - (-1) = 2 for the first, 0 for the second
        data = [ex([1.0, 0.0], 1), ex([5.0, 0.0], 0)]
        assert empirical_risk(np.array([1.0, 0.0]), data, 0.0) == 1.0

    def test_regularizer_counted_once(self):
        w = np.array([3.0, 4.0])  # ||w||^2 = 25
        data = [ex([100.0, 0.0], 0)] * 7
        assert empirical_risk(w, data, 2.0) == pytest.approx(25.0)

    def test_empty_data_raises(self):
        with pytest.raises(ValueError):
            empirical_risk(np.zeros(2), [], 0.0)


class TestRanking:
    def test_sorted_by_magnitude(self):
        model = make_model([0.5, -2.0, 0.1, 7.0])
        ranking = rank_features(model)
        assert [e.index for e in ranking.entries] == [2, 1, 3]
        assert [e.rank for e in ranking.entries] == [1, 2, 3]
        assert ranking.entries[0].weight == -2.0
        assert ranking.bias == 7.0

    def test_tie_broken_by_ascending_index(self):
        model = make_model([1.0, 1.0, 0.0])
        ranking = rank_features(model)
        assert [e.index for e in ranking.entries] == [1, 2]

    def test_all_zero_weights_keep_identity_order(self):
        model = make_model([0.0, 0.0, 0.0, 0.0])
        ranking = rank_features(model)
        assert [e.index for e in ranking.entries] == [1, 2, 3]

    def test_ranks_are_a_permutation(self):
        rng = np.random.default_rng(3)
        model = make_model(rng.normal(size=10))
        ranking = rank_features(model)
        assert sorted(e.rank for e in ranking.entries) == list(range(1, 10))
        mags = [abs(e.weight) for e in ranking.entries]
        assert mags == sorted(mags, reverse=True)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**31), scale=st.floats(1e-6, 1e6))
    def test_positive_scaling_leaves_order_unchanged(self, seed, scale):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=7)
        base = [e.index for e in rank_features(make_model(w)).entries]
        scaled = [e.index for e in rank_features(make_model(w * scale)).entries]
        assert base == scaled

    def test_select_top_k(self):
        model = make_model([0.5, -2.0, 0.1, 7.0])
        ranking = rank_features(model)
        assert select_top_k(ranking, 2) == {2, 1}
        assert select_top_k(ranking, 3) == {1, 2, 3}
        assert select_top_k(rank_features(make_model([0.0, 3.0, 0.0, 1.0])), 1) == {2}

    def test_select_top_k_range_checked(self):
        ranking = rank_features(make_model([1.0, 2.0, 3.0]))
        for bad in (0, 3, -1):
            with pytest.raises(ValueError):
                select_top_k(ranking, bad)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_zero_hinge_implies_correct_prediction(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=5)
    x = rng.normal(size=5)
    label = int(rng.integers(2))
    assume(hinge_loss(w, x, label, 0.0) == 0.0)
    assert predict(w, x) == label


class TestRunningNorm:
    def test_matches_numpy_population_moments(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(57, 4)) * np.array([1.0, 10.0, 0.1, 1000.0])
        norm = RunningNorm.initial(4).update(X[:30]).update(X[30:])
        np.testing.assert_allclose(norm.mean, X.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(norm.var, X.var(axis=0), rtol=1e-10)

    def test_transform_standardizes(self):
        rng = np.random.default_rng(12)
        X = rng.normal(loc=5.0, scale=3.0, size=(200, 2))
        norm = RunningNorm.initial(2).update(X)
        Z = norm.transform(X)
        np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(Z.var(axis=0), 1.0, rtol=1e-10)

    def test_zero_variance_centered_not_scaled(self):
        X = np.column_stack([np.full(10, 42.0), np.arange(10.0)])
        norm = RunningNorm.initial(2).update(X)
        Z = norm.transform(X)
        np.testing.assert_array_equal(Z[:, 0], 0.0)
        assert Z[:, 1].var() == pytest.approx(1.0)

    def test_identity_before_any_update(self):
        X = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(RunningNorm.initial(2).transform(X), X)


class TestCheckpoint:
    def test_round_trip_is_value_exact(self, tmp_path):
        rng = np.random.default_rng(21)
        model = make_model(rng.normal(size=6) * 1e-7, lam=1e-4, alpha=0.01)
        model = replace(
            model,
            iteration=1234,
            norm=RunningNorm.initial(5).update(rng.normal(size=(37, 5)) * 100),
        )
        path = tmp_path / "ck.json"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.weights.tobytes() == model.weights.tobytes()
        assert loaded.norm.mean.tobytes() == model.norm.mean.tobytes()
        assert loaded.norm.var.tobytes() == model.norm.var.tobytes()
        assert loaded.norm.count == model.norm.count
        assert loaded.iteration == model.iteration
        assert loaded.hyper == model.hyper
        assert loaded.feature_names == model.feature_names

    def test_save_load_save_is_byte_identical(self, tmp_path):
        model = make_model([0.1, -0.2, 1e-17, 4.0], lam=1e-4, alpha=0.01)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_checkpoint(model, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_required_fields_present(self, tmp_path):
        model = make_model([1.0, 2.0])
        path = tmp_path / "ck.json"
        save_checkpoint(model, path)
        doc = json.loads(path.read_text())
        for key in ("schema_version", "d", "weights", "lambda", "alpha", "batch_size",
                    "iteration", "norm_means", "norm_vars", "feature_names"):
            assert key in doc
        assert doc["d"] == 2

    def test_unknown_schema_version_rejected(self, tmp_path):
        model = make_model([1.0, 2.0])
        path = tmp_path / "ck.json"
        save_checkpoint(model, path)
        doc = json.loads(path.read_text())
        doc["schema_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError):
            load_checkpoint(path)
