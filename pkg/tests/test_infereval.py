import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphppd.diffcore import Tensor
from graphppd.distributions import Categorical, Gaussian
from graphppd.encoder import EncoderConfig
from graphppd.graphdata import Task, random_split, synth_er_classification, synth_triangle_regression
from graphppd.infereval import (
    ContextPool,
    EvalReport,
    MetricTaskMismatch,
    accuracy,
    brier,
    ece,
    evaluate,
    mae,
    mc_predict,
    mc_predict_embedding,
    mc_predict_many,
    n_reviewed,
    nll,
    point_prediction,
    review_order,
    roc_auc,
    selective_curve,
    uncertainty,
)
from graphppd.models import GraphPPDModel
from graphppd.ppdhead import PPDConfig


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y != 1]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def cats(rows):
    return [Categorical(np.asarray(r, dtype=float)) for r in rows]


@pytest.fixture(scope="module")
def random_model():
    ds = synth_er_classification(40, 8, 0.2, 0.5, 0)
    model = GraphPPDModel.init(ds.task, EncoderConfig(num_layers=1, hidden_dim=6), PPDConfig(head_dim=3), ds.node_dim, 0, 0)
    rng = np.random.default_rng(0)
    for p in model.phi.values():
        p.data[...] = 0.3 * rng.normal(size=p.shape)
    return ds, model


# -- point predictions and metrics ------------------------------------------------------


def test_point_prediction_examples():
    assert point_prediction(Categorical([0.2, 0.8])) == 1
    assert point_prediction(Categorical([0.5, 0.5])) == 0
    assert point_prediction(Gaussian(3.2, 7.0)) == 3.2


def test_perfect_and_uniform_predictions():
    perfect = cats([[1, 0], [0, 1], [1, 0]])
    y = [0, 1, 0]
    assert accuracy(perfect, y) == 1.0 and brier(perfect, y) == 0.0 and nll(perfect, y) == 0.0
    uniform = cats([[0.5, 0.5]] * 4)
    y = [0, 1, 1, 0]
    assert brier(uniform, y) == 0.5
    assert nll(uniform, y) == pytest.approx(math.log(2), abs=1e-15)


def test_brier_multiclass_form():
    assert brier(cats([[0.2, 0.5, 0.3]]), [1]) == pytest.approx(0.04 + 0.25 + 0.09)


def test_mae_example():
    assert mae([Gaussian(1.0, 1.0), Gaussian(2.0, 1.0)], [0.0, 4.0]) == 1.5


def test_brier_confident_miss_reaches_two():
    assert brier(cats([[1.0, 0.0]]), [1]) == 2.0


def test_gaussian_nll():
    assert nll([Gaussian(1.0, 4.0)], [3.0]) == pytest.approx(0.5 * math.log(2 * math.pi * 4.0) + 0.5)


def test_metric_type_errors():
    with pytest.raises(TypeError):
        accuracy([Gaussian(0.0, 1.0)], [0])
    with pytest.raises(TypeError):
        mae(cats([[1, 0]]), [0.0])


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.4] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(ValueError, match="AUC undefined"):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_brute_force_200_pairs():
    rng = np.random.default_rng(200)
    scores = np.round(rng.uniform(size=200), 2)  # rounding forces ties
    labels = rng.integers(0, 2, 200)
    assert roc_auc(scores, labels) == brute_auc(scores, labels)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 80))
def test_auc_matches_brute_force_and_is_rank_invariant(seed, n):
    rng = np.random.default_rng(seed)
    labels = np.r_[0, 1, rng.integers(0, 2, n - 2)]
    scores = rng.integers(0, 6, n) / 5.0
    value = roc_auc(scores, labels)
    assert value == brute_auc(scores, labels)
    assert roc_auc(np.exp(3 * scores) - 2, labels) == value


def test_ece_single_bin_and_perfect():
    preds = cats([[0.8, 0.2]] * 10)
    assert ece(preds, [0] * 5 + [1] * 5) == pytest.approx(0.3, abs=1e-15)
    assert ece(cats([[1, 0], [0, 1]]), [0, 1]) == 0.0


def test_ece_three_bin_hand_example():
    preds = cats([
        [0.25, 0.25, 0.25, 0.25],  # conf 0.25, argmax 0, label 0: right   bin 1
        [0.3, 0.3, 0.2, 0.2],      # conf 0.30, argmax 0, label 2: wrong   bin 1
        [0.5, 0.2, 0.2, 0.1],      # conf 0.50, right                      bin 2
        [0.1, 0.6, 0.2, 0.1],      # conf 0.60, wrong                      bin 2
        [0.9, 0.05, 0.05, 0.0],    # conf 0.90, right                      bin 3
        [0.0, 0.0, 0.2, 0.8],      # conf 0.80, right                      bin 3
    ])
    labels = [0, 2, 0, 2, 0, 3]
    # bins (0, 1/3], (1/3, 2/3], (2/3, 1]: gaps |0.5-0.275|, |0.5-0.55|, |1-0.85|, each weighted 2/6
    hand = (0.225 + 0.05 + 0.15) / 3
    assert ece(preds, labels, bins=3) == pytest.approx(hand, abs=1e-15)


def test_ece_right_closed_bins():
    # confidence exactly 0.5 sits in the (0.4, 0.5] bin with 10 bins; acc 1 gives gap 0.5
    assert ece(cats([[0.5, 0.5]]), [0]) == pytest.approx(0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 40), st.integers(2, 5))
def test_metric_ranges(seed, n, c):
    rng = np.random.default_rng(seed)
    preds = cats(rng.dirichlet(np.ones(c) * 0.5, size=n))
    labels = rng.integers(0, c, n)
    assert 0.0 <= ece(preds, labels) <= 1.0
    # the full multiclass form is bounded by 2 (a confident miss costs 1 + 1)
    assert 0.0 <= brier(preds, labels) <= 2.0
    assert nll(preds, labels) >= 0.0


# -- selective prediction ----------------------------------------------------------------


def test_n_reviewed_rounding():
    assert n_reviewed(0.3, 10) == 3
    assert n_reviewed(0.25, 10) == 3
    assert n_reviewed(0.0, 10) == 0 and n_reviewed(1.0, 7) == 7


def test_review_order_uniform_first_and_ties_by_index():
    preds = cats([[0.9, 0.1], [0.5, 0.5], [0.1, 0.9], [0.5, 0.5], [0.7, 0.3]])
    order = review_order(preds)
    assert list(order[:2]) == [1, 3]
    assert list(order) == [1, 3, 4, 0, 2]
    assert uncertainty(preds[1]) == pytest.approx(math.log(2))


def test_selective_endpoints_accuracy_and_auc():
    preds = cats([[0.9, 0.1], [0.6, 0.4], [0.45, 0.55], [0.2, 0.8], [0.55, 0.45]])
    labels = [0, 1, 0, 1, 1]
    curve = dict(selective_curve(preds, labels, [0.0, 0.4, 1.0], "accuracy"))
    assert curve[0.0] == accuracy(preds, labels) and curve[1.0] == 1.0
    auc_curve = dict(selective_curve(preds, labels, [0.0, 1.0], "roc_auc"))
    assert auc_curve[0.0] == roc_auc([p.probs[1] for p in preds], labels) and auc_curve[1.0] == 1.0


def test_selective_regression_uses_variance():
    preds = [Gaussian(0.0, 5.0), Gaussian(1.0, 0.1), Gaussian(2.0, 1.0)]
    labels = [3.0, 1.5, 2.0]
    curve = dict(selective_curve(preds, labels, [0.0, 0.34, 1.0]))
    assert curve[0.0] == pytest.approx((3 + 0.5 + 0) / 3)
    assert curve[0.34] == pytest.approx((0 + 0.5 + 0) / 3)  # the variance-5 instance is fixed first
    assert curve[1.0] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 60))
def test_selective_accuracy_is_monotone(seed, n):
    rng = np.random.default_rng(seed)
    preds = cats(rng.dirichlet(np.ones(3), size=n))
    labels = rng.integers(0, 3, n)
    fractions = np.sort(rng.uniform(size=8)).tolist() + [1.0]
    values = [v for _, v in selective_curve(preds, labels, fractions)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert values[-1] == 1.0


def test_selective_rejects_bad_fraction():
    with pytest.raises(ValueError):
        selective_curve(cats([[1, 0]]), [0], [1.5])


# -- Monte-Carlo inference ------------------------------------------------------------------


def test_p1_equals_single_forward_pass(random_model):
    ds, model = random_model
    pool = ContextPool.build(model, ds, range(30))
    emb = model.embed([ds.graphs[35]]).data[0]
    got = mc_predict_embedding(model, emb, pool, 1, 10, np.random.default_rng(42))
    rows = np.random.default_rng(42).choice(len(pool), size=10, replace=False)
    ref = model.predict(Tensor(emb.reshape(1, -1)), pool.context(rows))[0]
    assert np.array_equal(got.probs, ref.probs)


def test_identical_contexts_average_to_same_distribution(random_model):
    ds, model = random_model
    pool = ContextPool.build(model, ds, range(10))
    emb = model.embed([ds.graphs[20]]).data[0]
    # context size equal to the pool: every draw is the same set in some order
    a = mc_predict_embedding(model, emb, pool, 1, 10, np.random.default_rng(0))
    b = mc_predict_embedding(model, emb, pool, 7, 10, np.random.default_rng(1))
    np.testing.assert_allclose(a.probs, b.probs, atol=1e-12)


def test_mc_predict_graph_and_many_agree(random_model):
    ds, model = random_model
    pool = ContextPool.build(model, ds, range(30))
    many = mc_predict_many(model, ds.subset([30, 31, 32]), pool, 3, 8, seed=5)
    for i, gi in enumerate([30, 31, 32]):
        single = mc_predict(model, ds.graphs[gi], pool, 3, 8, np.random.default_rng([5, i]))
        np.testing.assert_allclose(single.probs, many[i].probs, rtol=1e-12)
    again = mc_predict_many(model, ds.subset([30, 31, 32]), pool, 3, 8, seed=5)
    assert all(np.array_equal(a.probs, b.probs) for a, b in zip(many, again))


def test_mc_predict_errors(random_model):
    ds, model = random_model
    pool = ContextPool.build(model, ds, range(5))
    emb = model.embed([ds.graphs[0]]).data[0]
    with pytest.raises(ValueError):
        mc_predict_embedding(model, emb, pool, 0, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mc_predict_embedding(model, emb, pool, 1, 6, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ContextPool.build(model, ds, [])


def test_mc_predict_regression_is_valid_gaussian():
    ds = synth_triangle_regression(20, 8, (0.2, 0.6), 0)
    model = GraphPPDModel.init(ds.task, EncoderConfig(num_layers=1, hidden_dim=6), PPDConfig(head_dim=3), ds.node_dim, 0, 0)
    rng = np.random.default_rng(3)
    for p in model.phi.values():
        p.data[...] = 0.3 * rng.normal(size=p.shape)
    pool = ContextPool.build(model, ds, range(15))
    d = mc_predict(model, ds.graphs[18], pool, 5, 6, np.random.default_rng(0))
    assert isinstance(d, Gaussian) and d.variance >= 1e-6


# -- reports ------------------------------------------------------------------------------------


def test_evaluate_classification_report(tmp_path):
    preds = cats([[0.9, 0.1], [0.3, 0.7], [0.6, 0.4], [0.2, 0.8]])
    labels = [0, 1, 1, 1]
    rep = evaluate(preds, labels, Task.classification(2))
    assert set(rep.metrics) == {"accuracy", "roc_auc", "nll", "ece", "brier"}
    assert rep.metrics["accuracy"] == 0.75
    assert rep.curve[0] == (0.0, 0.75) and rep.curve_metric == "accuracy"
    assert rep.records[2] == {"prediction": 0, "uncertainty": uncertainty(preds[2]), "label": 1, "probs": [0.6, 0.4]}
    rep.write_json(tmp_path / "r.json")
    rep.write_curve_csv(tmp_path / "c.csv")
    import json

    back = EvalReport.from_json(json.loads((tmp_path / "r.json").read_text()))
    assert back.metrics == rep.metrics and back.curve == [tuple(p) for p in rep.curve]
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "fraction,accuracy" and lines[1] == "0.0,0.75"


def test_evaluate_regression_and_mismatch():
    preds = [Gaussian(0.0, 1.0), Gaussian(1.0, 2.0)]
    rep = evaluate(preds, [0.5, 1.0], Task.regression())
    assert set(rep.metrics) == {"mae", "nll"} and rep.curve_metric == "mae"
    with pytest.raises(MetricTaskMismatch):
        evaluate(preds, [0.5, 1.0], Task.regression(), ["accuracy"])
    with pytest.raises(MetricTaskMismatch):
        evaluate(cats([[0.2, 0.3, 0.5]]), [0], Task.classification(3), ["roc_auc"])
    rep3 = evaluate(cats([[0.2, 0.3, 0.5], [0.1, 0.1, 0.8]]), [2, 1], Task.classification(3))
    assert "roc_auc" not in rep3.metrics


def test_selective_gain_when_classes_overlap():
    """With overlapping classes and one-class label noise, reviewing the most uncertain third helps."""
    from dataclasses import replace

    from graphppd.graphdata import Dataset
    from graphppd.trainer import TrainConfig, train

    ds = synth_er_classification(700, 20, 0.1, 0.14, 0)
    sp = random_split(700, 500, 0, 200, 0)
    rng = np.random.default_rng(11)
    cls1 = [i for i in sp.train if ds.graphs[i].label == 1]
    flip = set(rng.choice(cls1, size=round(0.2 * len(cls1)), replace=False).tolist())
    noisy = Dataset(tuple(replace(g, label=0) if i in flip else g for i, g in enumerate(ds.graphs)), ds.task)
    res = train(noisy, sp, EncoderConfig(num_layers=2, hidden_dim=32), PPDConfig(head_dim=16),
                TrainConfig(n_iter=400, seed=0))
    pool = ContextPool.build(res.model, noisy, sp.train)
    preds = mc_predict_many(res.model, ds.subset(sp.test), pool, 10, 64, 0)
    curve = dict(selective_curve(preds, ds.labels(sp.test)))
    values = list(curve.values())
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert curve[0.3] - curve[0.0] >= 0.02
