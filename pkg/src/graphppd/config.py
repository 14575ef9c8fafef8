"""Run configuration: one JSON document deep-merged over a built-in default profile.

Layout::

    {"seed": 0,
     "task": {"dataset": path | null, "generator": {...} | null, "split": {...}},
     "model": {"encoder": {...}, "ppd": {...}, "head_layers": 2},
     "train": {..., "baseline": null | "mc_dropout" | "ensemble"},
     "eval": {"P": 10, "context_size": null, "metrics": null, "fractions": [...]}}

``null`` context sizes resolve by task: 64 for classification, 32 for regression.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .encoder import EncoderConfig
from .graphdata import (
    Dataset,
    Split,
    Task,
    kfold_split,
    load_jsonl,
    load_split,
    random_split,
    synth_er_classification,
    synth_triangle_regression,
)
from .infereval.report import CLASSIFICATION_METRICS, REGRESSION_METRICS, check_metrics
from .infereval.selective import DEFAULT_FRACTIONS
from .ppdhead import PPDConfig
from .trainer import TrainConfig

CONTEXT_SIZE_BY_KIND = {"classification": 64, "regression": 32}
BASELINES = (None, "mc_dropout", "ensemble")

DEFAULT_PROFILE: dict[str, Any] = {
    "seed": 0,
    "task": {
        "dataset": None,
        "generator": None,
        "split": {"kind": "random", "train": 0.7, "valid": 0.0, "test": 0.3},
    },
    "model": {
        "encoder": {"num_layers": 3, "hidden_dim": 64, "mlp_layers": 2, "dropout_p": 0.0, "use_edge_features": False},
        "ppd": {"attn_layers": 1, "attn_heads": 1, "head_dim": 32, "head_layers": 2, "head_hidden": None},
        "head_layers": 2,
    },
    "train": {
        "n_iter": 1000,
        "lr": 1e-3,
        "lr_decay": 0.0,
        "batch_size": 32,
        "context_size": None,
        "optimizer": "adam",
        "weight_decay": 0.0,
        "mode": "e2e",
        "pretrain_iters": None,
        "pretrained": None,
        "patience": None,
        "eval_every": 50,
        "baseline": None,
        "ensemble_size": "auto",
        "mc_dropout_p": 0.1,
    },
    "eval": {
        "P": 10,
        "context_size": None,
        "metrics": None,
        "fractions": list(DEFAULT_FRACTIONS),
        "curve_metric": None,
        "mc_samples": 30,
        "split": "test",
    },
}


class ConfigError(ValueError):
    pass


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(obj: dict, allowed: dict, where: str) -> None:
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) {extra} in {where}")
    for k, v in obj.items():
        if isinstance(allowed[k], dict) and isinstance(v, dict) and k not in ("generator", "split"):
            _check_keys(v, allowed[k], f"{where}.{k}")


def _build(cls, values: dict, where: str):
    names = {f.name for f in fields(cls)}
    try:
        return cls(**{k: v for k, v in values.items() if k in names})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def generate_dataset(spec: dict) -> Dataset:
    """Build a synthetic dataset from ``{"kind": "er-class" | "triangles", ...}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    seed = int(spec.pop("seed", 0))
    try:
        if kind == "er-class":
            allowed = {"graphs", "nodes", "p0", "p1"}
            _reject_extra(spec, allowed, kind)
            return synth_er_classification(
                int(spec.get("graphs", 700)), int(spec.get("nodes", 20)),
                float(spec.get("p0", 0.1)), float(spec.get("p1", 0.3)), seed,
            )
        if kind == "triangles":
            allowed = {"graphs", "nodes", "p_lo", "p_hi"}
            _reject_extra(spec, allowed, kind)
            return synth_triangle_regression(
                int(spec.get("graphs", 1300)), int(spec.get("nodes", 20)),
                (float(spec.get("p_lo", 0.1)), float(spec.get("p_hi", 0.5))), seed,
            )
    except ValueError as exc:
        raise ConfigError(f"bad generator spec: {exc}") from exc
    raise ConfigError(f"unknown generator kind {kind!r}; expected 'er-class' or 'triangles'")


def _reject_extra(spec: dict, allowed: set, kind: str) -> None:
    extra = sorted(set(spec) - allowed)
    if extra:
        raise ConfigError(f"unknown field(s) {extra} for generator {kind!r}")


def _counts(n: int, spec: dict) -> tuple[int, int, int]:
    vals = [spec.get(k, 0) for k in ("train", "valid", "test")]
    if all(isinstance(v, int) and not isinstance(v, bool) for v in vals):
        return tuple(vals)
    fracs = [float(v) for v in vals]
    n_train = int(round(fracs[0] * n))
    n_valid = int(round(fracs[1] * n))
    return n_train, n_valid, min(n - n_train - n_valid, int(round(fracs[2] * n)))


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def task_block(self) -> dict:
        return self.raw["task"]

    @property
    def train_block(self) -> dict:
        return self.raw["train"]

    @property
    def eval_block(self) -> dict:
        return self.raw["eval"]

    @property
    def baseline(self) -> str | None:
        return self.train_block["baseline"]

    def resolve_path(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def encoder_config(self) -> EncoderConfig:
        return _build(EncoderConfig, self.raw["model"]["encoder"], "model.encoder")

    def ppd_config(self) -> PPDConfig:
        return _build(PPDConfig, self.raw["model"]["ppd"], "model.ppd")

    @property
    def head_layers(self) -> int:
        return int(self.raw["model"]["head_layers"])

    def train_config(self, task: Task) -> TrainConfig:
        values = dict(self.train_block, seed=self.seed)
        if values["context_size"] is None:
            values["context_size"] = CONTEXT_SIZE_BY_KIND[task.kind]
        return _build(TrainConfig, values, "train")

    def eval_context_size(self, task: Task) -> int:
        cs = self.eval_block["context_size"]
        if cs is None:
            cs = self.train_block["context_size"]
        return int(cs if cs is not None else CONTEXT_SIZE_BY_KIND[task.kind])

    def load_dataset(self) -> Dataset:
        tb = self.task_block
        if tb["dataset"] is not None:
            return load_jsonl(self.resolve_path(tb["dataset"]))
        if tb["generator"] is not None:
            return generate_dataset(tb["generator"])
        raise ConfigError("task block needs either 'dataset' or 'generator'")

    def load_split(self, dataset: Dataset) -> Split:
        spec = dict(self.task_block["split"])
        kind = spec.get("kind", "random")
        seed = int(spec.get("seed", self.seed))
        try:
            if kind == "file":
                split = load_split(self.resolve_path(spec["path"]))
            elif kind == "kfold":
                split = kfold_split(len(dataset), int(spec["k"]), int(spec["fold"]), seed)
            elif kind == "random":
                split = random_split(len(dataset), *_counts(len(dataset), spec), seed)
            else:
                raise ConfigError(f"unknown split kind {kind!r}")
            split.check(len(dataset))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad split spec: missing or invalid {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"bad split spec: {exc}") from exc
        return split

    def task_kind(self) -> str | None:
        """Task kind known without loading the data (generator specs only)."""
        gen = self.task_block.get("generator")
        if gen:
            return {"er-class": "classification", "triangles": "regression"}.get(gen.get("kind"))
        return None

    def validate(self, task: Task | None = None) -> None:
        """Cross-field checks that can run before any data is touched."""
        tb = self.task_block
        if tb["dataset"] is not None and tb["generator"] is not None:
            raise ConfigError("task block takes 'dataset' or 'generator', not both")
        if tb["dataset"] is not None and not self.resolve_path(tb["dataset"]).is_file():
            raise ConfigError(f"dataset file not found: {tb['dataset']}")
        split = tb["split"]
        if split.get("kind") == "file" and not self.resolve_path(split.get("path", "")).is_file():
            raise ConfigError(f"split file not found: {split.get('path')}")
        trb = self.train_block
        if trb["baseline"] not in BASELINES:
            raise ConfigError(f"unknown baseline {trb['baseline']!r}")
        if trb["pretrained"] is not None and not self.resolve_path(trb["pretrained"]).is_file():
            raise ConfigError(f"pretrained checkpoint not found: {trb['pretrained']}")
        if not (trb["ensemble_size"] == "auto" or (isinstance(trb["ensemble_size"], int) and trb["ensemble_size"] >= 1)):
            raise ConfigError("train.ensemble_size must be 'auto' or a positive integer")
        if not 0.0 <= float(trb["mc_dropout_p"]) < 1.0:
            raise ConfigError("train.mc_dropout_p must lie in [0, 1)")
        if trb["n_iter"] < 1:
            raise ConfigError("train.n_iter must be >= 1")
        if trb["optimizer"] not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {trb['optimizer']!r}")
        eb = self.eval_block
        if int(eb["P"]) < 1:
            raise ConfigError("eval.P must be >= 1")
        if int(eb["mc_samples"]) < 1:
            raise ConfigError("eval.mc_samples must be >= 1")
        if eb["split"] not in ("train", "valid", "test"):
            raise ConfigError("eval.split must be train, valid or test")
        for f in eb["fractions"]:
            if not 0.0 <= float(f) <= 1.0:
                raise ConfigError(f"review fraction {f} outside [0, 1]")
        self.encoder_config()
        self.ppd_config()
        kind = task.kind if task is not None else self.task_kind()
        if kind is not None:
            allowed = CLASSIFICATION_METRICS if kind == "classification" else REGRESSION_METRICS
            names = list(eb["metrics"] or [])
            if eb["curve_metric"] is not None:
                names.append(eb["curve_metric"])
            bad = [m for m in names if m not in allowed]
            if bad:
                raise ConfigError(f"metric(s) {bad} not available for {kind} tasks; choose from {allowed}")
            if task is not None and eb["metrics"] is not None:
                try:
                    check_metrics(eb["metrics"], task)
                except ValueError as exc:
                    raise ConfigError(str(exc)) from exc
            self.train_config(task or (Task.classification(2) if kind == "classification" else Task.regression()))


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    user: dict = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        base_dir = path.resolve().parent
    _check_keys(user, DEFAULT_PROFILE, "config")
    raw = deep_merge(DEFAULT_PROFILE, user)
    if overrides:
        raw = deep_merge(raw, overrides)
    cfg = RunConfig(raw, base_dir)
    cfg.validate()
    return cfg
