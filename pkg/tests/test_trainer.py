import importlib
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphppd.diffcore import Param, Tape, Tensor
from graphppd.distributions import Categorical, Gaussian, mixture
from graphppd.encoder import EncoderConfig
from graphppd.graphdata import Task, random_split, synth_er_classification, synth_triangle_regression
from graphppd.models import Ensemble, GraphPPDModel, PlainModel, outputs_to_dists
from graphppd.ppdhead import ContextSet, PPDConfig, label_matrix
from graphppd.trainer import (
    SGD,
    Adam,
    TrainConfig,
    TrainingDiverged,
    auto_ensemble_size,
    iter_target_context,
    load_checkpoint,
    loss_tensor,
    make_optimizer,
    mc_dropout_predict,
    nll_loss,
    nll_terms,
    sample_context,
    sample_target_context,
    save_checkpoint,
    train,
    train_ensemble,
    train_plain,
)

SMALL_ENC = EncoderConfig(num_layers=2, hidden_dim=8)
SMALL_PPD = PPDConfig(head_dim=4)


@pytest.fixture(scope="module")
def er_small():
    ds = synth_er_classification(60, 10, 0.1, 0.4, 0)
    return ds, random_split(60, 40, 0, 20, 0)


# -- loss ------------------------------------------------------------------------


def test_nll_trivial_values():
    assert nll_loss([Categorical([0.0, 1.0])], [1]) == 0.0
    assert nll_loss([Gaussian(0.3, 1.0)], [0.3]) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-15)
    assert nll_loss([Categorical(np.full(5, 0.2))], [3]) == pytest.approx(math.log(5), abs=1e-15)


def test_nll_clamp_warns_and_counts():
    with pytest.warns(RuntimeWarning, match="clamped"):
        value = nll_loss([Categorical([1.0, 0.0]), Categorical([0.5, 0.5])], [1, 0])
    assert value == pytest.approx((-math.log(1e-12) + math.log(2)) / 2)
    assert nll_terms([Categorical([1.0, 0.0])], [1])[1] == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.booleans())
def test_loss_tensor_matches_reference_nll(seed, classification):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    if classification:
        task = Task.classification(3)
        outs = (Tensor(rng.normal(size=(n, 3)) * 3),)
        labels = rng.integers(0, 3, n)
    else:
        task = Task.regression()
        outs = (Tensor(rng.normal(size=(n, 1))), Tensor(rng.uniform(1e-3, 3, size=(n, 1))))
        labels = rng.normal(size=n)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ref = nll_loss(outputs_to_dists(outs, task), labels)
    assert abs(loss_tensor(outs, labels, task).item() - ref) < 1e-12


# -- sampling ----------------------------------------------------------------------


def test_context_disjoint_and_forced_complement():
    rng = np.random.default_rng(0)
    t, c = sample_target_context(range(10), 4, 6, rng)
    assert not set(t) & set(c)
    assert set(t) | set(c) == set(range(10))


def test_sampling_size_errors():
    with pytest.raises(ValueError):
        sample_target_context(range(10), 5, 6, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_context(range(5), [0, 1], 4, np.random.default_rng(0))


def test_context_frequency_within_three_sigma():
    rng = np.random.default_rng(2024)
    train, targets, size, draws = np.arange(30), np.arange(5), 8, 10_000
    counts = np.zeros(30)
    for _ in range(draws):
        counts[sample_context(train, targets, size, rng)] += 1
    p = size / (30 - 5)
    sigma = math.sqrt(p * (1 - p) / draws)
    assert np.all(counts[:5] == 0)
    assert np.all(np.abs(counts[5:] / draws - p) <= 3 * sigma)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 40), st.data())
def test_target_sweep_covers_each_epoch(n, data):
    t = data.draw(st.integers(1, n - 1))
    c = data.draw(st.integers(1, n - t))
    stream = iter_target_context(range(n), t, c, np.random.default_rng(data.draw(st.integers(0, 99))))
    seen = []
    for _ in range(math.ceil(n / t)):
        targets, ctx = next(stream)
        assert not set(targets) & set(ctx) and len(ctx) == c
        seen.extend(targets.tolist())
    assert sorted(seen) == list(range(n))


# -- optimizers ----------------------------------------------------------------------


@pytest.mark.parametrize("name", ["sgd", "adam"])
def test_zero_gradient_step_is_noop(name):
    p = Param(np.arange(6.0).reshape(2, 3))
    before = p.data.copy()
    opt = make_optimizer(name, [p], lr=0.1)
    opt.zero_grad()
    opt.step()
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_moves_by_lr():
    p = Param([[1.0, -2.0]])
    p.grad = np.array([[0.5, -3.0]])
    Adam([p], lr=0.01).step()
    np.testing.assert_allclose(p.data, [[0.99, -1.99]], rtol=1e-6)


def test_sgd_step_and_frozen_params():
    p, q = Param([[1.0]]), Param([[1.0]], trainable=False)
    p.grad = np.array([[2.0]])
    q.grad = np.array([[2.0]])
    SGD([p, q], lr=0.5).step()
    assert p.data[0, 0] == 0.0 and q.data[0, 0] == 1.0
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", [p], 0.1)


# -- training --------------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="joint")
    with pytest.raises(ValueError):
        TrainConfig(context_size=0)
    assert TrainConfig(lr=1.0, lr_decay=0.5).lr_at(2) == 0.5


def test_zero_iterations_returns_initialisation(er_small):
    ds, sp = er_small
    res = train(ds, sp, SMALL_ENC, SMALL_PPD, TrainConfig(n_iter=0, context_size=8, seed=5))
    init = GraphPPDModel.init(ds.task, SMALL_ENC, SMALL_PPD, ds.node_dim, 0, 5)
    assert res.trace == []
    for k, p in init.params.items():
        assert np.array_equal(res.model.params[k].data, p.data)


def test_training_is_bitwise_deterministic(er_small):
    ds, sp = er_small
    cfg = TrainConfig(n_iter=15, batch_size=8, context_size=8, seed=3)
    a, b = train(ds, sp, SMALL_ENC, SMALL_PPD, cfg), train(ds, sp, SMALL_ENC, SMALL_PPD, cfg)
    assert a.trace == b.trace
    for k in a.model.params:
        assert np.array_equal(a.model.params[k].data, b.model.params[k].data)
    c = train(ds, sp, SMALL_ENC, SMALL_PPD, TrainConfig(n_iter=15, batch_size=8, context_size=8, seed=4))
    assert c.trace != a.trace


def test_trace_is_finite_and_decreases(er_small):
    ds, sp = er_small
    res = train(ds, sp, SMALL_ENC, SMALL_PPD, TrainConfig(n_iter=120, batch_size=8, context_size=8, lr=3e-3))
    tr = np.array(res.trace)
    assert np.all(np.isfinite(tr))
    assert tr[-30:].mean() < tr[:30].mean()


def test_early_stopping_stalls_without_learning():
    ds = synth_er_classification(60, 10, 0.1, 0.4, 0)
    sp = random_split(60, 30, 10, 20, 0)
    cfg = TrainConfig(n_iter=100, batch_size=8, context_size=8, lr=0.0, patience=2, eval_every=5)
    res = train(ds, sp, SMALL_ENC, SMALL_PPD, cfg)
    # first check sets the best; two more without improvement stop the run
    assert res.iterations == 15 and len(res.trace) == 15 and len(res.valid_trace) == 3
    assert len(set(res.valid_trace)) == 1


def test_early_stopping_restores_best_and_keeps_trace():
    T = importlib.import_module("graphppd.trainer.train")
    ds = synth_er_classification(60, 10, 0.1, 0.4, 0)
    sp = random_split(60, 30, 10, 20, 0)
    base = TrainConfig(n_iter=120, batch_size=8, context_size=8, lr=0.05, seed=1)
    full = train(ds, sp, SMALL_ENC, SMALL_PPD, base)
    cfg = TrainConfig(**{**base.__dict__, "patience": 2, "eval_every": 4})
    res = train(ds, sp, SMALL_ENC, SMALL_PPD, cfg)
    assert res.iterations < 120 and res.valid_trace[-1] > min(res.valid_trace)
    assert res.trace == full.trace[: res.iterations]
    assert T._valid_loss(res.model, ds, sp, cfg, None) == min(res.valid_trace)


def test_early_stopping_needs_a_validation_split(er_small):
    ds, sp = er_small
    res = train(ds, sp, SMALL_ENC, SMALL_PPD, TrainConfig(n_iter=12, batch_size=8, context_size=8, lr=0.0, patience=1, eval_every=2))
    assert res.iterations == 12 and res.valid_trace == []
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


def test_two_stage_never_touches_theta(er_small):
    ds, sp = er_small
    pre = train_plain(ds, sp, SMALL_ENC, TrainConfig(n_iter=10, batch_size=8))
    before = {k: p.data.copy() for k, p in pre.model.theta.items()}
    cfg = TrainConfig(n_iter=20, batch_size=8, context_size=8, mode="two_stage", debug_freeze_check=True)
    res = train(ds, sp, SMALL_ENC, SMALL_PPD, cfg, pretrained_theta=pre.model.theta)
    for k, v in before.items():
        assert np.array_equal(res.model.theta[k].data, v)
        assert not res.model.theta[k].trainable


def test_two_stage_pretrains_when_no_encoder_given(er_small, monkeypatch):
    ds, sp = er_small
    T = importlib.import_module("graphppd.trainer.train")
    calls = []
    real = T.train_plain
    monkeypatch.setattr(T, "train_plain", lambda *a, **k: calls.append(a[3].n_iter) or real(*a, **k))
    cfg = TrainConfig(n_iter=5, pretrain_iters=7, batch_size=8, context_size=8, mode="two_stage")
    res = train(ds, sp, SMALL_ENC, SMALL_PPD, cfg)
    assert calls == [7] and len(res.trace) == 5


def test_two_stage_encoder_not_reinvoked(er_small, monkeypatch):
    ds, sp = er_small
    pre = train_plain(ds, sp, SMALL_ENC, TrainConfig(n_iter=2, batch_size=8))
    import graphppd.models as M

    counter = {"n": 0}
    real = M.encode_batch

    def counting(graphs, *a, **k):
        counter["n"] += len(graphs)
        return real(graphs, *a, **k)

    monkeypatch.setattr(M, "encode_batch", counting)
    train(ds, sp, SMALL_ENC, SMALL_PPD, TrainConfig(n_iter=25, batch_size=8, context_size=8, mode="two_stage"),
          pretrained_theta=pre.model.theta)
    assert counter["n"] == len(ds)


def test_divergence_aborts(er_small):
    ds, sp = er_small
    cfg = TrainConfig(n_iter=200, batch_size=8, context_size=8, optimizer="sgd", lr=1e12)
    with pytest.raises(TrainingDiverged):
        train(ds, sp, SMALL_ENC, SMALL_PPD, cfg)


def test_separable_embeddings_are_learned():
    """PPD parameters alone, trained on fixed linearly separable embeddings."""
    rng = np.random.default_rng(0)
    n, d = 240, 6
    y = np.arange(n) % 2
    u = rng.normal(size=d)
    u /= np.linalg.norm(u)
    noise = rng.normal(size=(n, d))
    noise -= np.outer(noise @ u, u)
    # margin of at least 1 along u
    x = noise + np.outer(np.where(y == 1, 1.0, -1.0) * (1.0 + rng.uniform(size=n)), u)
    task = Task.classification(2)
    cfg = PPDConfig(head_dim=8)
    model = GraphPPDModel.init(task, EncoderConfig(hidden_dim=d), cfg, 1, 0, 0)
    rows = label_matrix(y, task)
    train_idx, test_idx = np.arange(160), np.arange(160, n)
    opt = Adam(list(model.phi.values()), lr=3e-3)
    for _ in range(300):
        t, c = sample_target_context(train_idx, 16, 32, rng)
        opt.zero_grad()
        with Tape() as tape:
            loss = loss_tensor(model.outputs(Tensor(x[t]), ContextSet(Tensor(x[c]), Tensor(rows[c]))), y[t], task)
        tape.backward(loss)
        opt.step()
    ctx = ContextSet(Tensor(x[train_idx[:64]]), Tensor(rows[train_idx[:64]]))
    preds = np.array([d.probs.argmax() for d in model.predict(Tensor(x[test_idx]), ctx)])
    assert (preds == y[test_idx]).mean() >= 0.95


# -- baselines ---------------------------------------------------------------------------


def test_auto_ensemble_size_rule():
    assert auto_ensemble_size(1000, 2500) == 3
    assert auto_ensemble_size(1000, 2000) == 3
    assert auto_ensemble_size(1000, 999) == 1
    with pytest.raises(ValueError):
        auto_ensemble_size(0, 10)


@settings(max_examples=50)
@given(st.integers(1, 10_000), st.integers(1, 100_000))
def test_auto_ensemble_size_is_smallest_strict_excess(single, ppd):
    m = auto_ensemble_size(single, ppd)
    assert m * single > ppd and (m - 1) * single <= ppd


def test_mixture_rules():
    mixed = mixture([Categorical([1.0, 0.0]), Categorical([0.0, 1.0])])
    np.testing.assert_array_equal(mixed.probs, [0.5, 0.5])
    g = mixture([Gaussian(0.0, 1.0), Gaussian(2.0, 3.0)])
    assert g.mean == 1.0 and g.variance == pytest.approx((1 + 0 + 3 + 4) / 2 - 1)
    single = Gaussian(1.0, 2.0)
    assert mixture([single]) is single


def test_ensemble_of_one_equals_single_model(er_small):
    ds, sp = er_small
    cfg = TrainConfig(n_iter=10, batch_size=8, seed=2)
    ens, _ = train_ensemble(1, ds, sp, SMALL_ENC, cfg)
    single = train_plain(ds, sp, SMALL_ENC, cfg)
    for a, b in zip(ens.predict(ds.subset(sp.test)), single.model.predict(ds.subset(sp.test))):
        np.testing.assert_array_equal(a.probs, b.probs)


def test_auto_ensemble_exceeds_ppd_parameter_count(er_small, caplog):
    ds, sp = er_small
    caplog.set_level("INFO")
    ens, traces = train_ensemble("auto", ds, sp, SMALL_ENC, TrainConfig(n_iter=3, batch_size=8), SMALL_PPD)
    ppd = GraphPPDModel.init(ds.task, SMALL_ENC, SMALL_PPD, ds.node_dim, 0, 0)
    assert ens.num_params() > ppd.num_params()
    assert (len(ens.members) - 1) * ens.members[0].num_params() <= ppd.num_params()
    assert len(traces) == len(ens.members)
    assert f"M={len(ens.members)}" in caplog.text


def test_mc_dropout_p0_and_single_sample(er_small):
    ds, _ = er_small
    model = PlainModel.init(ds.task, SMALL_ENC, ds.node_dim, 0, 1)
    for p in model.head.values():
        p.data[...] = np.random.default_rng(1).normal(size=p.shape)
    g = ds.graphs[3]
    det = model.predict([g])[0]
    np.testing.assert_array_equal(mc_dropout_predict(model, g, 25, 0.0, np.random.default_rng(0)).probs, det.probs)
    one = mc_dropout_predict(model, g, 1, 0.4, np.random.default_rng(9))
    ref = model.with_dropout(0.4).predict([g], train=True, rng=np.random.default_rng(9))[0]
    np.testing.assert_array_equal(one.probs, ref.probs)


def test_mc_dropout_regression_returns_gaussian():
    ds = synth_triangle_regression(6, 8, (0.2, 0.6), 0)
    model = PlainModel.init(ds.task, SMALL_ENC, ds.node_dim, 0, 0)
    out = mc_dropout_predict(model, ds.subset([0, 1]), 5, 0.3, np.random.default_rng(0))
    assert len(out) == 2 and all(isinstance(d, Gaussian) for d in out)


def test_mc_dropout_estimate_stabilises():
    ds = synth_er_classification(4, 6, 0.2, 0.6, 0)
    model = PlainModel.init(ds.task, EncoderConfig(num_layers=1, hidden_dim=8), ds.node_dim, 0, 0)
    rng = np.random.default_rng(0)
    for p in model.head.values():
        p.data[...] = 0.1 * rng.normal(size=p.shape)
    g = ds.graphs[1]
    spread = {}
    for s in (100, 1000):
        r = np.random.default_rng([1, s])
        spread[s] = np.std([mc_dropout_predict(model, g, s, 0.3, r).probs[1] for _ in range(1500)], ddof=1)
    # 1/sqrt(S) predicts a ratio of 0.316
    assert spread[1000] < spread[100] / 3


# -- checkpoints -----------------------------------------------------------------------------


def test_checkpoint_round_trip_is_bitwise(tmp_path, er_small):
    ds, sp = er_small
    res = train(ds, sp, SMALL_ENC, PPDConfig(attn_layers=2, attn_heads=2, head_dim=3),
                TrainConfig(n_iter=5, batch_size=8, context_size=8, mode="two_stage", pretrain_iters=3))
    path = tmp_path / "ck.json"
    save_checkpoint(path, res.model, {"echo": 1}, res.rng_state, 5)
    model, doc = load_checkpoint(path)
    assert doc["config"] == {"echo": 1} and doc["iteration"] == 5 and doc["version"] == 1
    assert doc["rng_state"] == res.rng_state
    for k, p in res.model.params.items():
        assert np.array_equal(model.params[k].data, p.data) and model.params[k].trainable == p.trainable
    save_checkpoint(tmp_path / "ck2.json", model, doc["config"], doc["rng_state"], 5)
    assert path.read_bytes() == (tmp_path / "ck2.json").read_bytes()


def test_ensemble_checkpoint_round_trip(tmp_path, er_small):
    ds, sp = er_small
    ens, _ = train_ensemble(2, ds, sp, SMALL_ENC, TrainConfig(n_iter=2, batch_size=8))
    save_checkpoint(tmp_path / "e.json", ens)
    back, doc = load_checkpoint(tmp_path / "e.json")
    assert isinstance(back, Ensemble) and doc["kind"] == "ensemble" and len(back.members) == 2
    for a, b in zip(back.predict(ds.subset(sp.test)), ens.predict(ds.subset(sp.test))):
        np.testing.assert_array_equal(a.probs, b.probs)


def test_checkpoint_rejects_foreign_file(tmp_path):
    from graphppd.trainer import CheckpointError

    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.json")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.json")
