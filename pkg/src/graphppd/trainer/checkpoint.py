"""Versioned JSON checkpoints with little-endian float64 parameter payloads.

Layout::

    {"format": "graphppd-checkpoint", "version": 1, "kind": "graphppd" | "plain" | "ensemble",
     "config": {...}, "iteration": int, "rng_state": {...},
     "params": {name: {"shape": [...], "data": base64(<f8 bytes)}}}

Keys are sorted and no timestamps are written, so equal inputs give equal bytes.
"""
from __future__ import annotations

import base64
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..diffcore import Param
from ..encoder import EncoderConfig
from ..graphdata import Task
from ..models import Ensemble, GraphPPDModel, PlainModel
from ..ppdhead import PPDConfig

FORMAT = "graphppd-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _encode(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode(obj: dict, name: str, trainable: bool = True) -> Param:
    raw = np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8")
    return Param(raw.reshape(obj["shape"]).astype(np.float64), name, trainable=trainable)


def _model_meta(model) -> dict:
    meta = {"task": asdict(model.task), "encoder": asdict(model.encoder_config)}
    if isinstance(model, GraphPPDModel):
        meta["ppd"] = asdict(model.ppd_config)
    else:
        meta["head_layers"] = model.head_layers
    return meta


def save_checkpoint(
    path: str | Path,
    model: GraphPPDModel | PlainModel | Ensemble,
    config: dict | None = None,
    rng_state: dict | None = None,
    iteration: int = 0,
) -> None:
    if isinstance(model, Ensemble):
        kind = "ensemble"
        params = {f"member{m}/{k}": p for m, mem in enumerate(model.members) for k, p in mem.params.items()}
        meta = {"members": len(model.members), **_model_meta(model.members[0])}
    else:
        kind = "graphppd" if isinstance(model, GraphPPDModel) else "plain"
        params = model.params
        meta = _model_meta(model)
    frozen = sorted(k for k, p in params.items() if not p.trainable)
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "model": meta,
        "config": config or {},
        "iteration": int(iteration),
        "rng_state": rng_state or {},
        "frozen": frozen,
        "params": {k: _encode(p.data) for k, p in params.items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _split_params(params: dict[str, Param], model_meta: dict, kind: str) -> GraphPPDModel | PlainModel:
    task = Task(**model_meta["task"])
    enc = EncoderConfig(**model_meta["encoder"])
    theta = {k: p for k, p in params.items() if k.startswith("enc.")}
    rest = {k: p for k, p in params.items() if not k.startswith("enc.")}
    if kind == "graphppd":
        return GraphPPDModel(task, enc, PPDConfig(**model_meta["ppd"]), theta, rest)
    return PlainModel(task, enc, theta, rest, model_meta["head_layers"])


def load_checkpoint(path: str | Path) -> tuple[GraphPPDModel | PlainModel | Ensemble, dict]:
    """Return ``(model, document)``; the document carries config, rng state and iteration."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise CheckpointError(f"{path} is not a version-{VERSION} {FORMAT}")
    frozen = set(doc.get("frozen", []))
    params = {k: _decode(v, k, trainable=k not in frozen) for k, v in doc["params"].items()}
    kind, meta = doc["kind"], doc["model"]
    if kind == "ensemble":
        members = []
        for m in range(meta["members"]):
            pre = f"member{m}/"
            sub = {k[len(pre):]: p for k, p in params.items() if k.startswith(pre)}
            for k, p in sub.items():
                p.name = k
            members.append(_split_params(sub, meta, "plain"))
        return Ensemble(members), doc
    if kind not in ("graphppd", "plain"):
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    return _split_params(params, meta, kind), doc
