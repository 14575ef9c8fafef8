"""Command-line front end: generate, train, eval, selective, gradcheck, predict.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, RunConfig, generate_dataset, load_config
from .diffcore import Tensor, grad_check, ops
from .encoder import EncoderConfig
from .graphdata import Dataset, DatasetError, Graph, Task, parse_record, save_jsonl, save_split
from .infereval import ContextPool, MetricTaskMismatch, evaluate, mc_predict_many
from .infereval.selective import DEFAULT_FRACTIONS
from .models import Ensemble, GraphPPDModel
from .ppdhead import ContextSet, PPDConfig, label_matrix
from .trainer import (
    CheckpointError,
    TrainingDiverged,
    load_checkpoint,
    mc_dropout_predict,
    save_checkpoint,
    train,
    train_ensemble,
    train_plain,
)
from .trainer.loss import loss_tensor

log = logging.getLogger("graphppd")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


# -- helpers --------------------------------------------------------------------


def _config(args) -> RunConfig:
    overrides = {"seed": args.seed} if getattr(args, "seed", None) is not None else None
    return load_config(args.config, overrides)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data(cfg: RunConfig):
    dataset = cfg.load_dataset()
    cfg.validate(dataset.task)
    return dataset, cfg.load_split(dataset)


def write_trace(path: Path, traces: Sequence[Sequence[float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if len(traces) == 1:
            w.writerow(["iteration", "loss"])
            w.writerows([j, repr(v)] for j, v in enumerate(traces[0]))
        else:
            w.writerow(["member", "iteration", "loss"])
            for m, tr in enumerate(traces):
                w.writerows([m, j, repr(v)] for j, v in enumerate(tr))


def _check_compatible(model, dataset: Dataset) -> None:
    if model.task != dataset.task:
        raise UsageError(f"checkpoint task {model.task} does not match dataset task {dataset.task}")
    enc_in = (model.members[0] if isinstance(model, Ensemble) else model).theta["enc.in.W"].shape[0]
    if enc_in != dataset.node_dim:
        raise UsageError(f"checkpoint expects node feature width {enc_in}, dataset has {dataset.node_dim}")


def predict_split(model, dataset: Dataset, train_idx, eval_idx, cfg: RunConfig) -> list:
    """Predictive distributions for ``eval_idx`` according to the checkpoint kind."""
    graphs = dataset.subset(eval_idx)
    eb = cfg.eval_block
    if isinstance(model, GraphPPDModel):
        pool = ContextPool.build(model, dataset, train_idx)
        cs = min(cfg.eval_context_size(dataset.task), len(pool))
        return mc_predict_many(model, graphs, pool, int(eb["P"]), cs, cfg.seed)
    if isinstance(model, Ensemble):
        return model.predict(graphs)
    rng = np.random.default_rng([cfg.seed, 2])
    return mc_dropout_predict(model, graphs, int(eb["mc_samples"]), model.encoder_config.dropout_p, rng)


# -- commands -------------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.config:
        spec = dict(_config(args).task_block.get("generator") or {})
        if not spec:
            raise UsageError("config has no task.generator block")
    else:
        spec = {"kind": args.kind}
    for key in ("graphs", "nodes", "p0", "p1", "p_lo", "p_hi"):
        val = getattr(args, key)
        if val is not None:
            spec[key] = val
    if args.seed is not None:
        spec["seed"] = args.seed
    if spec.get("kind") is None:
        raise UsageError("generate needs --kind or a config with task.generator")
    if not args.out:
        raise UsageError("generate needs --out FILE")
    dataset = generate_dataset(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_jsonl(dataset, out)
    print(f"wrote {len(dataset)} graphs ({dataset.task.kind}) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    dataset, split = _data(cfg)
    out = _out_dir(args)
    tcfg = cfg.train_config(dataset.task)
    enc = cfg.encoder_config()
    baseline = cfg.baseline
    t0 = time.perf_counter()
    if baseline == "ensemble":
        size = cfg.train_block["ensemble_size"]
        model, traces = train_ensemble(size, dataset, split, enc, tcfg, cfg.ppd_config(), cfg.head_layers)
        single = model.members[0].num_params()
        ppd_params = GraphPPDModel.init(dataset.task, enc, cfg.ppd_config(), dataset.node_dim, dataset.edge_dim, 0).num_params()
        print(
            f"ensemble M={len(model.members)}: member params {single}, "
            f"ensemble params {model.num_params()}, GraphPPD params {ppd_params}"
        )
        rng_state, iters = {}, tcfg.n_iter
    elif baseline == "mc_dropout":
        enc = replace(enc, dropout_p=float(cfg.train_block["mc_dropout_p"]))
        res = train_plain(dataset, split, enc, tcfg, cfg.head_layers)
        model, traces, rng_state, iters = res.model, [res.trace], res.rng_state, res.iterations
    else:
        pretrained = None
        if tcfg.mode == "two_stage" and cfg.train_block["pretrained"] is not None:
            pre_model, _ = load_checkpoint(cfg.resolve_path(cfg.train_block["pretrained"]))
            if isinstance(pre_model, Ensemble):
                raise UsageError("pretrained encoder checkpoint must hold a single model")
            pretrained = pre_model.theta
        elif tcfg.mode == "two_stage":
            print("two-stage: no pretrained encoder given, pre-training encoder with a direct head first")
        res = train(dataset, split, enc, cfg.ppd_config(), tcfg, pretrained_theta=pretrained)
        model, traces, rng_state, iters = res.model, [res.trace], res.rng_state, res.iterations
    log.info("training took %.1fs", time.perf_counter() - t0)
    save_checkpoint(out / "checkpoint.json", model, cfg.raw, rng_state, iters)
    write_trace(out / "trace.csv", traces)
    save_split(split, out / "split.json")
    final = [tr[-1] for tr in traces if tr]
    print(f"wrote {out / 'checkpoint.json'} and {out / 'trace.csv'}; final loss {final}")
    return EXIT_OK


def cmd_eval(args, force_curve: bool = False) -> int:
    cfg = _config(args)
    dataset, split = _data(cfg)
    out = _out_dir(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.json"
    model, _ = load_checkpoint(ckpt)
    _check_compatible(model, dataset)
    eb = cfg.eval_block
    eval_idx = getattr(split, eb["split"])
    if len(eval_idx) == 0:
        raise UsageError(f"split {eb['split']!r} is empty")
    fractions = eb["fractions"] or (list(DEFAULT_FRACTIONS) if force_curve else None)
    preds = predict_split(model, dataset, split.train, eval_idx, cfg)
    try:
        report = evaluate(preds, dataset.labels(eval_idx), dataset.task, eb["metrics"], fractions, eb["curve_metric"])
    except MetricTaskMismatch as exc:
        raise UsageError(str(exc)) from exc
    report.write_json(out / "report.json")
    written = [out / "report.json"]
    if report.curve:
        report.write_curve_csv(out / "selective.csv")
        written.append(out / "selective.csv")
    metrics = ", ".join(f"{k}={v:.6g}" for k, v in report.metrics.items())
    print(f"{metrics}; wrote {', '.join(map(str, written))}")
    return EXIT_OK


def cmd_selective(args) -> int:
    return cmd_eval(args, force_curve=True)


def _tiny_dataset(task_kind: str, seed: int, n: int = 6, edge_dim: int = 2) -> Dataset:
    rng = np.random.default_rng([seed, 7])
    graphs = []
    for i in range(n):
        nodes = int(rng.integers(3, 7))
        pairs = [(a, b) for a in range(nodes) for b in range(a + 1, nodes) if rng.random() < 0.5]
        edges = np.array(pairs or [(0, 1)], dtype=np.int64).reshape(-1, 2)
        label = i % 2 if task_kind == "classification" else float(rng.normal())
        graphs.append(Graph(nodes, edges, rng.normal(size=(nodes, 3)), label, rng.normal(size=(len(edges), edge_dim))))
    task = Task.classification(2) if task_kind == "classification" else Task.regression()
    return Dataset(tuple(graphs), task, f"gradcheck-{task_kind}")


def pipeline_gradcheck(
    task_kind: str,
    encoder_config: EncoderConfig,
    ppd_config: PPDConfig,
    seed: int = 0,
    n_coords: int = 150,
    tol: float = 1e-4,
):
    """Finite-difference check of the target NLL through encoder, attention and head."""
    ds = _tiny_dataset(task_kind, seed)
    model = GraphPPDModel.init(ds.task, encoder_config, ppd_config, ds.node_dim, ds.edge_dim, seed)
    # zero-initialised tensors (head output layers, biases, eps) would make upstream gradients vanish
    rng = np.random.default_rng([seed, 8])
    for p in model.params.values():
        if not p.data.any():
            p.data[...] = 0.3 * rng.normal(size=p.shape)
    t_idx, c_idx = np.arange(3), np.arange(3, len(ds))
    labels = ds.labels()
    rows = label_matrix(labels, ds.task)
    graphs = ds.subset(np.concatenate([t_idx, c_idx]))

    def closure():
        emb = model.embed(graphs)
        targets = ops.take_rows(emb, np.arange(len(t_idx)))
        ctx = ContextSet(ops.take_rows(emb, np.arange(len(t_idx), len(graphs))), Tensor(rows[c_idx]))
        return loss_tensor(model.outputs(targets, ctx), labels[t_idx], ds.task)

    return grad_check(closure, list(model.params.values()), h=1e-5, tol=tol, n_coords=n_coords, seed=seed)


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    enc = cfg.encoder_config()
    ppd = cfg.ppd_config()
    # a tiny instance keeps the finite-difference sweep fast; depth and head counts follow the config
    enc = replace(enc, hidden_dim=min(enc.hidden_dim, 6), dropout_p=0.0, use_edge_features=True)
    ppd = replace(ppd, head_dim=min(ppd.head_dim, 4), head_hidden=None)
    kinds = ["classification", "regression"] if args.task == "both" else [args.task]
    ok = True
    summary = {}
    for kind in kinds:
        t0 = time.perf_counter()
        rep = pipeline_gradcheck(kind, enc, ppd, seed=cfg.seed, n_coords=args.coords)
        dt = time.perf_counter() - t0
        status = "PASS" if rep.passed else "FAIL"
        print(
            f"{kind}: {status} max_rel_error={rep.max_rel_error:.3e} coords={rep.n_coords} "
            f"kinks_skipped={rep.kinks_skipped} time={dt:.1f}s"
        )
        if not rep.passed:
            ok = False
            for name, err in rep.worst(5):
                print(f"  {name}: {err:.3e}")
        summary[kind] = {"max_rel_error": rep.max_rel_error, "n_coords": rep.n_coords, "passed": bool(rep.passed),
                         "kinks_skipped": rep.kinks_skipped,
                         "worst": rep.worst(5)}
    if args.out:
        out = _out_dir(args)
        (out / "gradcheck.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK if ok else EXIT_NUMERIC


def _load_graph(args, cfg: RunConfig, dataset: Dataset) -> Graph:
    if args.graph:
        try:
            line = Path(args.graph).read_text(encoding="utf-8").strip().splitlines()[0]
            rec = json.loads(line)
            if "y" not in rec:
                rec["y"] = 0 if dataset.task.is_classification else 0.0
            return parse_record(rec)
        except (OSError, IndexError, json.JSONDecodeError, DatasetError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot read graph from {args.graph}: {exc}") from exc
    if args.index is None:
        raise UsageError("predict needs --index N or --graph FILE")
    if not 0 <= args.index < len(dataset):
        raise UsageError(f"--index {args.index} out of range for {len(dataset)} graphs")
    return dataset[args.index]


def cmd_predict(args) -> int:
    cfg = _config(args)
    dataset, split = _data(cfg)
    model, _ = load_checkpoint(args.checkpoint)
    _check_compatible(model, dataset)
    graph = _load_graph(args, cfg, dataset)
    dist = predict_split(model, Dataset(dataset.graphs + (graph,), dataset.task), split.train, [len(dataset)], cfg)[0]
    if dataset.task.is_classification:
        payload = {"type": "categorical", "probs": dist.probs.tolist(), "prediction": int(np.argmax(dist.probs)),
                   "entropy": dist.entropy()}
    else:
        payload = {"type": "gaussian", "mean": dist.mean, "variance": dist.variance}
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphppd", description="Graph posterior predictive models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required: bool):
        sp.add_argument("--config", required=config_required, help="run configuration JSON")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory")

    g = sub.add_parser("generate", help="write a synthetic dataset as JSONL")
    common(g, False)
    g.add_argument("--kind", choices=["er-class", "triangles"])
    g.add_argument("--graphs", type=int)
    g.add_argument("--nodes", type=int)
    g.add_argument("--p0", type=float)
    g.add_argument("--p1", type=float)
    g.add_argument("--p-lo", dest="p_lo", type=float)
    g.add_argument("--p-hi", dest="p_hi", type=float)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train GraphPPD or a baseline; writes checkpoint.json, trace.csv")
    common(t, True)
    t.set_defaults(func=cmd_train)

    for name, func, text in (
        ("eval", cmd_eval, "evaluate a checkpoint; writes report.json (+ selective.csv)"),
        ("selective", cmd_selective, "eval with the selective-prediction curve always written"),
    ):
        e = sub.add_parser(name, help=text)
        common(e, True)
        e.add_argument("--checkpoint", help="checkpoint file (default OUT/checkpoint.json)")
        e.set_defaults(func=func)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline")
    common(gc, False)
    gc.add_argument("--task", choices=["both", "classification", "regression"], default="both")
    gc.add_argument("--coords", type=int, default=150, help="coordinates sampled per task")
    gc.set_defaults(func=cmd_gradcheck)

    pr = sub.add_parser("predict", help="print the predictive distribution for one graph")
    common(pr, True)
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--index", type=int, help="graph index in the configured dataset")
    pr.add_argument("--graph", help="JSONL file whose first record is the graph")
    pr.set_defaults(func=cmd_predict)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, CheckpointError, DatasetError, MetricTaskMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
