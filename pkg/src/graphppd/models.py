"""Model containers: GraphPPD (encoder + PPD module) and the plain encoder + head baseline."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .diffcore import Tensor, ops
from .distributions import VARIANCE_FLOOR, Categorical, Gaussian, PredictiveDistribution, mixture
from .encoder import EncoderConfig, encode_batch, init_encoder_params
from .graphdata import Graph, Task
from .nn import Params, count_params, init_mlp, mlp
from .ppdhead import ContextSet, PPDConfig, init_ppd_params, ppd_outputs


def outputs_to_dists(outputs: tuple[Tensor, ...], task: Task) -> list[PredictiveDistribution]:
    if task.is_classification:
        (logits,) = outputs
        return [Categorical(row) for row in ops.softmax_rows(logits).data]
    mean, var = outputs
    return [Gaussian(m, v) for m, v in zip(mean.data[:, 0], var.data[:, 0])]


def embed_in_chunks(embed, graphs: Sequence[Graph], chunk: int = 256) -> np.ndarray:
    parts = [embed(graphs[i : i + chunk]).data for i in range(0, len(graphs), chunk)]
    return np.concatenate(parts, axis=0)


@dataclass
class GraphPPDModel:
    """Parameters ``theta`` (encoder) and ``phi`` (attention + heads) with their configs."""

    task: Task
    encoder_config: EncoderConfig
    ppd_config: PPDConfig
    theta: Params
    phi: Params

    @classmethod
    def init(
        cls,
        task: Task,
        encoder_config: EncoderConfig,
        ppd_config: PPDConfig,
        node_dim: int,
        edge_dim: int,
        seed: int,
    ) -> "GraphPPDModel":
        rng = np.random.default_rng([seed, 0])
        theta = init_encoder_params(encoder_config, node_dim, edge_dim, rng)
        phi = init_ppd_params(ppd_config, encoder_config.hidden_dim, task, rng)
        return cls(task, encoder_config, ppd_config, theta, phi)

    @property
    def params(self) -> Params:
        return {**self.theta, **self.phi}

    def num_params(self) -> int:
        return count_params(self.params)

    def embed(self, graphs: Sequence[Graph], train: bool = False, rng=None) -> Tensor:
        return encode_batch(graphs, self.theta, self.encoder_config, train=train, rng=rng)

    def outputs(self, targets: Tensor, context: ContextSet) -> tuple[Tensor, ...]:
        return ppd_outputs(targets, context, self.phi, self.ppd_config, self.task)

    def predict(self, targets: Tensor, context: ContextSet) -> list[PredictiveDistribution]:
        return outputs_to_dists(self.outputs(targets, context), self.task)


@dataclass
class PlainModel:
    """Encoder followed by a direct prediction head (no context)."""

    task: Task
    encoder_config: EncoderConfig
    theta: Params
    head: Params
    head_layers: int = 2

    @classmethod
    def init(
        cls, task: Task, encoder_config: EncoderConfig, node_dim: int, edge_dim: int, seed: int, head_layers: int = 2
    ) -> "PlainModel":
        rng = np.random.default_rng([seed, 0])
        theta = init_encoder_params(encoder_config, node_dim, edge_dim, rng)
        d = encoder_config.hidden_dim
        widths = [d] * head_layers
        head: Params = {}
        if task.is_classification:
            init_mlp(head, "plain.cls", widths + [task.num_classes], rng, zero_last=True)
        else:
            init_mlp(head, "plain.mean", widths + [1], rng, zero_last=True)
            init_mlp(head, "plain.var", widths + [1], rng, zero_last=True)
        return cls(task, encoder_config, theta, head, head_layers)

    @property
    def params(self) -> Params:
        return {**self.theta, **self.head}

    def num_params(self) -> int:
        return count_params(self.params)

    def head_outputs(self, emb: Tensor) -> tuple[Tensor, ...]:
        if self.task.is_classification:
            return (mlp(emb, self.head, "plain.cls", self.head_layers),)
        mean = mlp(emb, self.head, "plain.mean", self.head_layers)
        raw = mlp(emb, self.head, "plain.var", self.head_layers)
        return mean, ops.add_const(ops.softplus(raw), VARIANCE_FLOOR)

    def outputs(self, graphs: Sequence[Graph], train: bool = False, rng=None) -> tuple[Tensor, ...]:
        emb = encode_batch(graphs, self.theta, self.encoder_config, train=train, rng=rng)
        return self.head_outputs(emb)

    def predict(self, graphs: Sequence[Graph], train: bool = False, rng=None) -> list[PredictiveDistribution]:
        return outputs_to_dists(self.outputs(graphs, train=train, rng=rng), self.task)

    def with_dropout(self, p: float) -> "PlainModel":
        return replace(self, encoder_config=replace(self.encoder_config, dropout_p=p))


@dataclass
class Ensemble:
    members: list[PlainModel] = field(default_factory=list)

    @property
    def task(self) -> Task:
        return self.members[0].task

    def num_params(self) -> int:
        return sum(m.num_params() for m in self.members)

    def predict(self, graphs: Sequence[Graph]) -> list[PredictiveDistribution]:
        per_member = [m.predict(graphs) for m in self.members]
        return [mixture([pm[i] for pm in per_member]) for i in range(len(graphs))]
