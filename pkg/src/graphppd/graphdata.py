"""Graph datasets: JSON-lines I/O, synthetic generators and index splits."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from math import comb
from pathlib import Path
from typing import Sequence, Union

import numpy as np

Label = Union[int, float]


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Task:
    kind: str  # "classification" | "regression"
    num_classes: int = 0

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "classification" and self.num_classes < 1:
            raise ValueError("classification task needs num_classes >= 1")

    @property
    def is_classification(self) -> bool:
        return self.kind == "classification"

    @property
    def label_dim(self) -> int:
        """Width of the label vector fed to the context encoder (one-hot or scalar)."""
        return self.num_classes if self.is_classification else 1

    @classmethod
    def classification(cls, num_classes: int) -> "Task":
        return cls("classification", num_classes)

    @classmethod
    def regression(cls) -> "Task":
        return cls("regression")


@dataclass(frozen=True, eq=False)
class Graph:
    """An undirected graph; each edge is stored once as ``(u, v)``."""

    num_nodes: int
    edges: np.ndarray
    node_features: np.ndarray
    label: Label
    edge_features: np.ndarray | None = None

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        x = np.asarray(self.node_features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.num_nodes:
            raise DatasetError(f"node_features must be [{self.num_nodes} x f], got {x.shape}")
        if edges.size and (edges.min() < 0 or edges.max() >= self.num_nodes):
            raise DatasetError(f"edge endpoint out of range for {self.num_nodes} nodes")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "node_features", x)
        if self.edge_features is not None:
            e = np.asarray(self.edge_features, dtype=np.float64)
            if e.ndim != 2 or e.shape[0] != len(edges):
                raise DatasetError(f"edge_features must have one row per edge, got {e.shape}")
            object.__setattr__(self, "edge_features", e)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def directed(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(src, dst, edge_row) with every undirected edge expanded to both directions."""
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.arange(len(self.edges))
        return np.concatenate([u, v]), np.concatenate([v, u]), np.concatenate([rows, rows])

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph(
            num_nodes=self.num_nodes,
            edges=perm[self.edges] if self.num_edges else self.edges,
            node_features=self.node_features[inv],
            label=self.label,
            edge_features=self.edge_features,
        )

    def to_record(self) -> dict:
        rec = {
            "n": int(self.num_nodes),
            "edges": self.edges.tolist(),
            "x": self.node_features.tolist(),
        }
        if self.edge_features is not None:
            rec["e"] = self.edge_features.tolist()
        rec["y"] = self.label
        return rec

    def same_as(self, other: "Graph") -> bool:
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.node_features, other.node_features)
            and type(self.label) is type(other.label)
            and self.label == other.label
            and (
                (self.edge_features is None and other.edge_features is None)
                or (
                    self.edge_features is not None
                    and other.edge_features is not None
                    # zero-row arrays carry no data, whatever their declared width
                    and (
                        np.array_equal(self.edge_features, other.edge_features)
                        or (self.edge_features.shape[0] == 0 and other.edge_features.shape[0] == 0)
                    )
                )
            )
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    graphs: tuple[Graph, ...]
    task: Task
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        if not self.graphs:
            raise DatasetError("empty dataset")
        widths = {g.node_features.shape[1] for g in self.graphs}
        if len(widths) != 1:
            raise DatasetError(f"inconsistent node feature widths {sorted(widths)}")
        if len({g.edge_features is None for g in self.graphs}) != 1:
            raise DatasetError("edge features present on some graphs but not others")
        e_widths = {g.edge_features.shape[1] for g in self.graphs if g.edge_features is not None and g.num_edges}
        if len(e_widths) > 1:
            raise DatasetError(f"inconsistent edge feature widths {sorted(e_widths)}")
        if e_widths:
            # an edgeless graph cannot carry its edge-feature width through JSON; restore it
            w = e_widths.pop()
            object.__setattr__(self, "graphs", tuple(
                replace(g, edge_features=np.zeros((0, w))) if g.edge_features is not None and not g.num_edges else g
                for g in self.graphs
            ))
        for g in self.graphs:
            if self.task.is_classification:
                if not isinstance(g.label, (int, np.integer)) or not 0 <= g.label < self.task.num_classes:
                    raise DatasetError(f"bad class label {g.label!r}")
            elif not isinstance(g.label, float):
                raise DatasetError(f"regression label must be float, got {g.label!r}")

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, i: int) -> Graph:
        return self.graphs[i]

    @property
    def node_dim(self) -> int:
        return self.graphs[0].node_features.shape[1]

    @property
    def edge_dim(self) -> int:
        for g in self.graphs:
            if g.edge_features is not None and g.num_edges:
                return g.edge_features.shape[1]
        return 0

    def labels(self, indices: Sequence[int] | None = None) -> np.ndarray:
        idx = range(len(self)) if indices is None else indices
        dtype = np.int64 if self.task.is_classification else np.float64
        return np.array([self.graphs[i].label for i in idx], dtype=dtype)

    def subset(self, indices: Sequence[int]) -> list[Graph]:
        return [self.graphs[i] for i in indices]

    def same_as(self, other: "Dataset") -> bool:
        return (
            self.task == other.task
            and len(self) == len(other)
            and all(a.same_as(b) for a, b in zip(self.graphs, other.graphs))
        )


# -- JSON lines ---------------------------------------------------------------

def parse_record(rec: dict) -> Graph:
    for key in ("n", "edges", "x", "y"):
        if key not in rec:
            raise DatasetError(f"missing key {key!r}")
    y = rec["y"]
    if isinstance(y, bool) or not isinstance(y, (int, float)):
        raise DatasetError(f"label must be int or float, got {y!r}")
    n = rec["n"]
    if not isinstance(n, int) or n < 1:
        raise DatasetError(f"'n' must be a positive int, got {n!r}")
    x = np.asarray(rec["x"], dtype=np.float64)
    if x.ndim != 2:
        raise DatasetError("'x' must be a list of equal-width float lists")
    edges = np.asarray(rec["edges"], dtype=np.int64)
    if edges.size and (edges.ndim != 2 or edges.shape[1] != 2):
        raise DatasetError("'edges' must be a list of [u, v] pairs")
    e = None
    if "e" in rec:
        e = np.asarray(rec["e"], dtype=np.float64)
        if e.size == 0:
            e = e.reshape(len(edges.reshape(-1, 2)), 0)
    return Graph(num_nodes=n, edges=edges.reshape(-1, 2), node_features=x, label=y, edge_features=e)


def load_jsonl(path: str | Path, name: str | None = None) -> Dataset:
    """Read one graph per line. Errors name the 1-based line number."""
    path = Path(path)
    graphs: list[Graph] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                graphs.append(parse_record(json.loads(line)))
            except (json.JSONDecodeError, DatasetError, ValueError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    if not graphs:
        raise DatasetError("empty dataset")
    kinds = {isinstance(g.label, float) for g in graphs}
    if len(kinds) != 1:
        raise DatasetError("dataset mixes class (int) and real (float) labels")
    if kinds.pop():
        task = Task.regression()
    else:
        task = Task.classification(max(int(g.label) for g in graphs) + 1)
    return Dataset(tuple(graphs), task, name or path.stem)


def save_jsonl(dataset: Dataset, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for g in dataset.graphs:
            rec = g.to_record()
            rec["y"] = int(g.label) if dataset.task.is_classification else float(g.label)
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


# -- synthetic generators -----------------------------------------------------

def _er_edges(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return np.stack([iu[keep], ju[keep]], axis=1)


def _degree_features(n: int, edges: np.ndarray) -> np.ndarray:
    deg = np.bincount(edges.reshape(-1), minlength=n).astype(np.float64)
    norm = deg / (n - 1) if n > 1 else deg
    return np.stack([np.ones(n), norm], axis=1)


def count_triangles(n: int, edges: np.ndarray) -> int:
    adj = np.zeros((n, n), dtype=np.int64)
    if len(edges):
        adj[edges[:, 0], edges[:, 1]] = 1
        adj[edges[:, 1], edges[:, 0]] = 1
    return int(np.trace(adj @ adj @ adj)) // 6


def synth_er_classification(n_graphs: int, nodes_per_graph: int, p0: float, p1: float, seed: int) -> Dataset:
    """Balanced two-class Erdos-Renyi task: class ``c`` graphs use edge probability ``p_c``.

    Classes alternate 0, 1, 0, ... by graph index. Node features are
    ``[1, degree / (n - 1)]``.
    """
    if not (0.0 <= p0 < p1 <= 1.0):
        raise ValueError(f"need 0 <= p0 < p1 <= 1, got p0={p0}, p1={p1}")
    if n_graphs < 1 or nodes_per_graph < 1:
        raise ValueError("n_graphs and nodes_per_graph must be positive")
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(n_graphs):
        c = i % 2
        edges = _er_edges(nodes_per_graph, (p0, p1)[c], rng)
        graphs.append(Graph(nodes_per_graph, edges, _degree_features(nodes_per_graph, edges), c))
    return Dataset(tuple(graphs), Task.classification(2), f"er-class-{p0}-{p1}")


def synth_triangle_regression(
    n_graphs: int, nodes_per_graph: int, p_range: tuple[float, float], seed: int
) -> Dataset:
    """ER graphs with ``p ~ U(p_range)``, labelled by triangle count / C(n, 3)."""
    lo, hi = p_range
    if not (0.0 < lo <= hi < 1.0):
        raise ValueError(f"p_range must lie inside (0, 1), got {p_range}")
    if nodes_per_graph < 3:
        raise ValueError("triangle regression needs at least 3 nodes per graph")
    rng = np.random.default_rng(seed)
    total = comb(nodes_per_graph, 3)
    graphs = []
    for _ in range(n_graphs):
        p = rng.uniform(lo, hi)
        edges = _er_edges(nodes_per_graph, p, rng)
        label = count_triangles(nodes_per_graph, edges) / total
        graphs.append(Graph(nodes_per_graph, edges, _degree_features(nodes_per_graph, edges), float(label)))
    return Dataset(tuple(graphs), Task.regression(), f"triangles-{lo}-{hi}")


# -- splits -------------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    valid: tuple[int, ...] = ()
    test: tuple[int, ...] = ()

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))
        if not self.train:
            raise ValueError("train split is empty")
        everything = self.train + self.valid + self.test
        if len(set(everything)) != len(everything):
            raise ValueError("split index lists overlap or repeat")

    def check(self, dataset_size: int) -> None:
        for i in self.train + self.valid + self.test:
            if not 0 <= i < dataset_size:
                raise ValueError(f"split index {i} outside dataset of size {dataset_size}")

    def to_json(self) -> dict:
        return {"train": list(self.train), "valid": list(self.valid), "test": list(self.test)}

    @classmethod
    def from_json(cls, obj: dict) -> "Split":
        return cls(obj["train"], obj.get("valid", []), obj.get("test", []))


def load_split(path: str | Path) -> Split:
    return Split.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def save_split(split: Split, path: str | Path) -> None:
    Path(path).write_text(json.dumps(split.to_json()) + "\n", encoding="utf-8")


def kfold_split(dataset_size: int, k: int, fold_index: int, seed: int) -> Split:
    """Fold ``fold_index`` of a seeded shuffle is the test set; the other folds train.

    The first ``dataset_size % k`` folds get one extra element.
    """
    if not 2 <= k <= dataset_size:
        raise ValueError(f"need 2 <= k <= {dataset_size}, got k={k}")
    if not 0 <= fold_index < k:
        raise ValueError(f"fold_index must be in [0, {k}), got {fold_index}")
    perm = np.random.default_rng(seed).permutation(dataset_size)
    base, extra = divmod(dataset_size, k)
    sizes = [base + (1 if f < extra else 0) for f in range(k)]
    start = sum(sizes[:fold_index])
    test = perm[start : start + sizes[fold_index]]
    train = np.concatenate([perm[:start], perm[start + sizes[fold_index] :]])
    return Split(train=tuple(sorted(train.tolist())), test=tuple(sorted(test.tolist())))


def random_split(dataset_size: int, n_train: int, n_valid: int, n_test: int, seed: int) -> Split:
    if n_train + n_valid + n_test > dataset_size:
        raise ValueError("requested split sizes exceed dataset size")
    perm = np.random.default_rng(seed).permutation(dataset_size)
    a, b = n_train, n_train + n_valid
    return Split(
        train=tuple(sorted(perm[:a].tolist())),
        valid=tuple(sorted(perm[a:b].tolist())),
        test=tuple(sorted(perm[b : b + n_test].tolist())),
    )
