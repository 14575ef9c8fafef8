"""Training loops: GraphPPD (end-to-end or two-stage), plain models, ensembles."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..diffcore import NonFiniteError, Param, Tape, Tensor, ops
from ..distributions import mixture
from ..encoder import EncoderConfig
from ..graphdata import Dataset, Split
from ..models import Ensemble, GraphPPDModel, PlainModel, embed_in_chunks
from ..ppdhead import ContextSet, PPDConfig, label_matrix
from .loss import loss_tensor
from .optim import make_optimizer
from .sampling import iter_minibatches, iter_target_context

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    n_iter: int = 1000
    lr: float = 1e-3
    lr_decay: float = 0.0  # lr_j = lr / (1 + lr_decay * j)
    batch_size: int = 32
    context_size: int = 64
    optimizer: str = "adam"
    weight_decay: float = 0.0
    seed: int = 0
    mode: str = "e2e"  # "e2e" | "two_stage"
    pretrain_iters: int | None = None  # two-stage encoder pre-training; defaults to n_iter
    patience: int | None = None  # early stopping on validation NLL; None disables it
    eval_every: int = 50
    debug_freeze_check: bool = False

    def __post_init__(self):
        if self.n_iter < 0:
            raise ValueError("n_iter must be >= 0")
        if self.mode not in ("e2e", "two_stage"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.batch_size < 1 or self.context_size < 1:
            raise ValueError("batch_size and context_size must be >= 1")
        if self.eval_every < 1 or (self.patience is not None and self.patience < 1):
            raise ValueError("eval_every and patience must be >= 1")

    def lr_at(self, j: int) -> float:
        return self.lr / (1.0 + self.lr_decay * j)


@dataclass
class TrainResult:
    model: GraphPPDModel | PlainModel
    trace: list[float]
    rng_state: dict
    iterations: int
    valid_trace: list[float] = field(default_factory=list)


def _step(loss: Tensor, tape: Tape, opt, cfg: TrainConfig, j: int) -> float:
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingDiverged(f"loss is not finite at iteration {j}")
    tape.backward(loss)
    opt.step(cfg.lr_at(j))
    return value


def train_plain(
    dataset: Dataset,
    split: Split,
    encoder_config: EncoderConfig,
    cfg: TrainConfig,
    head_layers: int = 2,
    seed: int | None = None,
) -> TrainResult:
    """Encoder + direct head trained on mini-batches with the matching NLL."""
    seed = cfg.seed if seed is None else seed
    model = PlainModel.init(dataset.task, encoder_config, dataset.node_dim, dataset.edge_dim, seed, head_layers)
    rng = np.random.default_rng([seed, 1])
    opt = make_optimizer(cfg.optimizer, list(model.params.values()), cfg.lr, cfg.weight_decay)
    labels = dataset.labels()
    batches = iter_minibatches(split.train, cfg.batch_size, rng)
    trace: list[float] = []
    for j in range(cfg.n_iter):
        idx = next(batches)
        opt.zero_grad()
        try:
            with Tape() as tape:
                outs = model.outputs(dataset.subset(idx), train=True, rng=rng)
                loss = loss_tensor(outs, labels[idx], dataset.task)
            trace.append(_step(loss, tape, opt, cfg, j))
        except NonFiniteError as exc:
            raise TrainingDiverged(f"non-finite value at iteration {j}: {exc}") from exc
    return TrainResult(model, trace, rng.bit_generator.state, cfg.n_iter)


def _valid_loss(model: GraphPPDModel, dataset: Dataset, split: Split, cfg: TrainConfig, cache) -> float:
    """Validation NLL against one context draw that is identical at every check."""
    rng = np.random.default_rng([cfg.seed, 3])
    c_idx = rng.choice(np.asarray(split.train), size=min(cfg.context_size, len(split.train)), replace=False)
    v_idx = np.asarray(split.valid)
    rows = np.concatenate([v_idx, c_idx])
    emb = cache[rows] if cache is not None else embed_in_chunks(model.embed, dataset.subset(rows))
    labels = dataset.labels()
    ctx = ContextSet(Tensor(emb[len(v_idx):]), Tensor(label_matrix(labels[c_idx], dataset.task)))
    return loss_tensor(model.outputs(Tensor(emb[: len(v_idx)]), ctx), labels[v_idx], dataset.task).item()


def train(
    dataset: Dataset,
    split: Split,
    encoder_config: EncoderConfig,
    ppd_config: PPDConfig,
    cfg: TrainConfig,
    pretrained_theta: dict[str, Param] | None = None,
) -> TrainResult:
    """Fit GraphPPD by minimising the stochastic target NLL given sampled contexts.

    ``two_stage`` mode freezes the encoder: its parameters come from
    ``pretrained_theta`` or, when absent, from a plain encoder + head model
    trained first for ``pretrain_iters`` iterations. All graph embeddings are
    then computed once and only the PPD parameters are optimised.

    With ``cfg.patience`` set and a non-empty validation split, validation NLL
    is checked every ``cfg.eval_every`` iterations; training stops after
    ``patience`` checks without improvement and the best parameters are restored.
    """
    task = dataset.task
    model = GraphPPDModel.init(task, encoder_config, ppd_config, dataset.node_dim, dataset.edge_dim, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    two_stage = cfg.mode == "two_stage"
    frozen = cache = None
    if two_stage:
        if pretrained_theta is None:
            pre_cfg = replace(cfg, n_iter=cfg.pretrain_iters if cfg.pretrain_iters is not None else cfg.n_iter)
            log.info("two-stage: pre-training encoder for %d iterations", pre_cfg.n_iter)
            pretrained_theta = train_plain(dataset, split, encoder_config, pre_cfg).model.theta
        model.theta = {k: Param(p.data.copy(), k, trainable=False) for k, p in pretrained_theta.items()}
        frozen = {k: p.data.copy() for k, p in model.theta.items()} if cfg.debug_freeze_check else None
        cache = embed_in_chunks(model.embed, dataset.graphs)

    params = list(model.phi.values()) if two_stage else list(model.params.values())
    opt = make_optimizer(cfg.optimizer, params, cfg.lr, cfg.weight_decay)
    labels = dataset.labels()
    label_rows = label_matrix(labels, task)
    stream = iter_target_context(split.train, cfg.batch_size, cfg.context_size, rng)
    trace: list[float] = []
    early = cfg.patience is not None and len(split.valid) > 0
    valid_trace: list[float] = []
    best, stale, snapshot = np.inf, 0, None
    for j in range(cfg.n_iter):
        t_idx, c_idx = next(stream)
        opt.zero_grad()
        try:
            with Tape() as tape:
                if two_stage:
                    targets, ctx_emb = Tensor(cache[t_idx]), Tensor(cache[c_idx])
                else:
                    emb = model.embed(dataset.subset(np.concatenate([t_idx, c_idx])), train=True, rng=rng)
                    targets = ops.take_rows(emb, np.arange(len(t_idx)))
                    ctx_emb = ops.take_rows(emb, np.arange(len(t_idx), len(t_idx) + len(c_idx)))
                outs = model.outputs(targets, ContextSet(ctx_emb, Tensor(label_rows[c_idx])))
                loss = loss_tensor(outs, labels[t_idx], task)
            trace.append(_step(loss, tape, opt, cfg, j))
        except NonFiniteError as exc:
            raise TrainingDiverged(f"non-finite value at iteration {j}: {exc}") from exc
        if two_stage and frozen is not None:
            for k, p in model.theta.items():
                if not np.array_equal(p.data, frozen[k]):
                    raise AssertionError(f"frozen encoder parameter {k} changed at iteration {j}")
        if early and (j + 1) % cfg.eval_every == 0:
            valid_trace.append(_valid_loss(model, dataset, split, cfg, cache))
            if valid_trace[-1] < best:
                best, stale = valid_trace[-1], 0
                snapshot = {k: p.data.copy() for k, p in model.params.items()}
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop at iteration %d, best validation NLL %.6g", j + 1, best)
                    for k, p in model.params.items():
                        p.data[...] = snapshot[k]
                    return TrainResult(model, trace, rng.bit_generator.state, j + 1, valid_trace)
    return TrainResult(model, trace, rng.bit_generator.state, cfg.n_iter, valid_trace)


def auto_ensemble_size(single_params: int, ppd_params: int) -> int:
    """Smallest M with ``M * single_params`` strictly greater than ``ppd_params``."""
    if single_params < 1:
        raise ValueError("single model must have parameters")
    return ppd_params // single_params + 1


def train_ensemble(
    size: int | str,
    dataset: Dataset,
    split: Split,
    encoder_config: EncoderConfig,
    cfg: TrainConfig,
    ppd_config: PPDConfig | None = None,
    head_layers: int = 2,
) -> tuple[Ensemble, list[list[float]]]:
    """Independently seeded plain models whose predictions are mixed at inference.

    ``size="auto"`` sizes the ensemble to just exceed the parameter count of a
    GraphPPD model built from ``ppd_config``.
    """
    if size == "auto":
        if ppd_config is None:
            raise ValueError("auto ensemble sizing needs ppd_config")
        single = PlainModel.init(dataset.task, encoder_config, dataset.node_dim, dataset.edge_dim, 0, head_layers)
        ppd = GraphPPDModel.init(dataset.task, encoder_config, ppd_config, dataset.node_dim, dataset.edge_dim, 0)
        size = auto_ensemble_size(single.num_params(), ppd.num_params())
        log.info(
            "ensemble auto-size M=%d: member params %d, GraphPPD params %d, ensemble params %d",
            size, single.num_params(), ppd.num_params(), size * single.num_params(),
        )
    if int(size) < 1:
        raise ValueError("ensemble size must be >= 1")
    members, traces = [], []
    for m in range(int(size)):
        res = train_plain(dataset, split, encoder_config, cfg, head_layers, seed=cfg.seed + m)
        members.append(res.model)
        traces.append(res.trace)
    return Ensemble(members), traces


def mc_dropout_predict(
    model: PlainModel, graphs: Sequence, samples: int, dropout_p: float, rng: np.random.Generator
):
    """Average of ``samples`` stochastic forward passes with dropout active, per graph.

    Accepts one graph or a list; returns one distribution or a list accordingly.
    """
    single = not isinstance(graphs, (list, tuple))
    graphs = [graphs] if single else list(graphs)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    noisy = model.with_dropout(dropout_p)
    out = []
    for g in graphs:
        if dropout_p == 0.0:
            out.append(model.predict([g])[0])
            continue
        dists = noisy.predict([g] * samples, train=True, rng=rng)
        out.append(mixture(dists))
    return out[0] if single else out
