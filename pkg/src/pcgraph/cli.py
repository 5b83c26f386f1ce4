"""Command-line experiment harness.

    pcgraph train    --config cfg.toml            fit a graph, save checkpoint
    pcgraph query    --config cfg.toml --checkpoint m.ckpt   run [[task]] queries
    pcgraph evaluate --config cfg.toml --checkpoint m.ckpt   test-set accuracy
    pcgraph am       --config cfg.toml            associative-memory protocol
    pcgraph baseline --config cfg.toml            backprop twin on the same data

Exit codes: 0 success, 2 invalid configuration, 3 missing dataset,
4 training diverged. Reports exclude wall-clock timings so repeated runs
with the same seed produce identical files; timings live in the trace CSV.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import baseline as bp
from . import data as dataio
from . import engine, tasks, topology
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .core import ConfigurationError, DimensionError, PCGraph

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _apply_threads(n: int | None):
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)  # affects pools created after this point
    try:
        import numba
        numba.set_num_threads(n)
    except (ImportError, ValueError):
        pass


def _load_split(cfg: ExperimentConfig, split: str, args) -> dataio.ImageDataset:
    root = args.data_dir or cfg.data.dir or None
    ds = dataio.load_split(split, data_dir=root, synthesize=cfg.data.synthesize)
    limit = cfg.data.train_limit if split == "train" else cfg.data.test_limit
    if limit:
        ds = ds.subset(limit, seed=cfg.data.subset_seed)
    return ds


def _sensory_rows(cfg: ExperimentConfig, ds: dataio.ImageDataset) -> np.ndarray:
    X = ds.images
    if cfg.data.with_labels:
        hot = np.zeros((len(ds), tasks.N_CLASSES))
        hot[np.arange(len(ds)), ds.labels] = 1.0
        X = np.hstack([X, hot])
    return X


def build_graph(cfg: ExperimentConfig, d_data: int) -> PCGraph:
    t = cfg.topology
    if t.kind == "fully_connected":
        return topology.fully_connected(t.n, d_data, activation=t.activation, seed=t.seed)
    if t.kind == "layered":
        return topology.layered(tuple(t.dims), direction=t.direction,
                                lateral=t.lateral, recurrent=t.recurrent,
                                label_layer=t.label_layer,
                                activation=t.activation, seed=t.seed)
    return topology.assembly(tuple(t.cluster_sizes),
                             tuple(tuple(e) for e in t.inter_edges),
                             t.p, t.k_frac, seed=t.seed, d=d_data,
                             activation=t.activation)


def _out_dir(cfg: ExperimentConfig, args) -> Path:
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_report(path: Path, payload: dict):
    def clean(v):
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, (np.integer,)):
            return int(v)
        if isinstance(v, (np.floating,)):
            return float(v)
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v
    path.write_text(json.dumps(clean(payload), indent=2, sort_keys=True) + "\n")


def cmd_train(cfg: ExperimentConfig, args) -> int:
    ds = _load_split(cfg, "train", args)
    rows = _sensory_rows(cfg, ds)
    graph = build_graph(cfg, rows.shape[1])
    if args.seed is not None:
        cfg.schedule.seed = args.seed
    trained, trace = engine.train(graph, rows, cfg.schedule)
    out = _out_dir(cfg, args)
    save_checkpoint(trained, out / "model.ckpt")
    trace.to_csv(out / "trace.csv")
    _write_report(out / "train_report.json", {
        "name": cfg.name, "config_digest": cfg.digest,
        "n": trained.n, "d": trained.d, "edges": trained.edge_count,
        "examples": rows.shape[0], "epochs": cfg.schedule.epochs,
        "updates": len(trace), "final_energy": trace.energies[-1] if len(trace) else None,
        "data_source": ds.source, "converged": engine.converged(trace),
    })
    print(f"trained {cfg.name}: {rows.shape[0]} examples, "
          f"final energy {trace.energies[-1]:.6g} -> {out / 'model.ckpt'}")
    return EXIT_OK


def _run_task(graph: PCGraph, cfg: ExperimentConfig, tc, ds, out: Path, idx: int):
    q = cfg.query
    name = f"{tc.kind}_{idx}"
    if tc.kind == "classify":
        limit = tc.limit or min(len(ds), 256)
        images, labels = ds.images[:limit], ds.labels[:limit]
        acc, confusion = tasks.evaluate_accuracy(graph, images, labels,
                                                 T=q.T, gamma=q.gamma_values,
                                                 chunk=q.chunk)
        res = tasks.TaskResult("classify", {"accuracy": acc, "count": int(limit)},
                               seed=tc.seed, config_digest=cfg.digest,
                               outputs={"confusion": confusion})
    elif tc.kind == "generate":
        imgs = [tasks.generate(graph, lab, T=q.T, gamma=q.gamma_values,
                               init_policy=q.init_policy, init_seed=q.init_seed + lab)
                for lab in range(tasks.N_CLASSES)]
        dataio.export_image_grid(np.stack(imgs), (2, 5), out / f"{name}.pgm")
        res = tasks.TaskResult("generate", {"labels": list(range(10))},
                               seed=tc.seed, config_digest=cfg.digest)
    elif tc.kind in ("reconstruct", "denoise"):
        limit = tc.limit or 8
        rng = np.random.default_rng(tc.seed)
        pick = rng.permutation(len(ds))[:limit]
        originals, corrupted, restored = [], [], []
        for j in pick:
            img = ds.images[j]
            c = dataio.Corruption(kind=tc.corruption, variance=tc.variance,
                                  fraction=tc.fraction, region=tc.region,
                                  seed=tc.seed + int(j))
            bad, masked = dataio.corrupt(img, c)
            if tc.kind == "denoise" or masked is None:
                fixed = tasks.denoise(graph, bad, T=q.T, gamma=q.gamma_values)
            else:
                known = np.setdiff1d(np.arange(img.size), masked)
                fixed = tasks.reconstruct(graph, bad, known, T=q.T,
                                          gamma=q.gamma_values)
            originals.append(img)
            corrupted.append(bad)
            restored.append(fixed)
        before = float(np.mean([tasks.mse(b, o) for b, o in zip(corrupted, originals)]))
        after = float(np.mean([tasks.mse(r, o) for r, o in zip(restored, originals)]))
        grid = np.stack(originals + corrupted + restored)
        dataio.export_image_grid(grid, (3, limit), out / f"{name}.pgm")
        res = tasks.TaskResult(tc.kind, {"mse_corrupted": before, "mse_restored": after,
                                         "count": int(limit)},
                               seed=tc.seed, config_digest=cfg.digest)
    else:
        raise ConfigurationError(f"task kind {tc.kind!r} not runnable by `query`")
    res.save(out / f"{name}.json")
    return res


def cmd_query(cfg: ExperimentConfig, args) -> int:
    graph = load_checkpoint(args.checkpoint)
    ds = _load_split(cfg, "test", args)
    out = _out_dir(cfg, args)
    ran = []
    for i, tc in enumerate(cfg.tasks):
        if tc.kind == "am":
            continue
        res = _run_task(graph, cfg, tc, ds, out, i)
        ran.append(res.task)
        print(f"{res.task}: {json.dumps(res.metrics, sort_keys=True)}")
    if not ran:
        print("no [[task]] entries to run", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    graph = load_checkpoint(args.checkpoint)
    ds = _load_split(cfg, "test", args)
    q = cfg.query
    acc, confusion = tasks.evaluate_accuracy(graph, ds.images, ds.labels,
                                             T=q.T, gamma=q.gamma_values,
                                             chunk=q.chunk)
    out = _out_dir(cfg, args)
    _write_report(out / "evaluate_report.json", {
        "name": cfg.name, "config_digest": cfg.digest, "accuracy": acc,
        "count": len(ds), "confusion": confusion, "data_source": ds.source,
    })
    print(f"accuracy {acc:.4f} on {len(ds)} test examples")
    return EXIT_OK


def cmd_am(cfg: ExperimentConfig, args) -> int:
    ds = _load_split(cfg, "train", args)
    out = _out_dir(cfg, args)
    tc = next((t for t in cfg.tasks if t.kind == "am"), None)
    if tc is None:
        print("config has no [[task]] with kind = \"am\"", file=sys.stderr)
        return EXIT_CONFIG
    k = tc.memories
    memories = ds.images[:k]
    graph = build_graph(cfg, memories.shape[1])
    trained, trace = engine.train(graph, memories, cfg.schedule)
    save_checkpoint(trained, out / "am_model.ckpt")
    trace.to_csv(out / "am_trace.csv")
    q = cfg.query
    hits, errs = 0, []
    shown = []
    for j in range(k):
        c = dataio.Corruption(kind=tc.corruption, variance=tc.variance,
                              fraction=tc.fraction, region=tc.region, seed=tc.seed + j)
        cue, masked = dataio.corrupt(memories[j], c)
        kind = "noise" if masked is None else "fragment"
        known = None if masked is None else np.setdiff1d(np.arange(memories.shape[1]), masked)
        got, hit, err = tasks.am_retrieve(trained, cue, memories[j], kind=kind,
                                          known_idx=known, T=tc.retrieval_T,
                                          gamma=q.gamma_values)
        hits += hit
        errs.append(err)
        if len(shown) < 8:
            shown.append((memories[j], cue, got))
    if shown:
        grid = np.stack([row[i] for i in range(3) for row in shown])
        dataio.export_image_grid(grid, (3, len(shown)), out / "am_grid.pgm")
    _write_report(out / "am_report.json", {
        "name": cfg.name, "config_digest": cfg.digest, "memories": int(k),
        "hit_rate": hits / k, "mean_mse": float(np.mean(errs)),
        "median_mse": float(np.median(errs)), "corruption": tc.corruption,
    })
    print(f"associative recall: {hits}/{k} hits, mean mse {np.mean(errs):.3g}")
    return EXIT_OK


def cmd_baseline(cfg: ExperimentConfig, args) -> int:
    train = _load_split(cfg, "train", args)
    test = _load_split(cfg, "test", args)
    dims = cfg.baseline_dims or [train.images.shape[1], 128, tasks.N_CLASSES]
    sched = bp.BpSchedule(epochs=cfg.baseline_epochs, batch_size=cfg.schedule.batch_size,
                          alpha=cfg.baseline_alpha, seed=args.seed if args.seed is not None
                          else cfg.seed)
    model = bp.train_classifier(dims, train.images, train.labels, sched)
    acc = bp.accuracy(model, test.images, test.labels)
    out = _out_dir(cfg, args)
    _write_report(out / "baseline_report.json", {
        "name": cfg.name, "config_digest": cfg.digest, "dims": list(dims),
        "accuracy": acc, "count": len(test), "epochs": sched.epochs,
        "data_source": test.source,
    })
    print(f"backprop baseline accuracy {acc:.4f} on {len(test)} test examples")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcgraph",
                                 description="predictive-coding graph experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("train", cmd_train), ("query", cmd_query),
                     ("evaluate", cmd_evaluate), ("am", cmd_am),
                     ("baseline", cmd_baseline)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--data-dir", default=None,
                       help="dataset directory (default: $PCGRAPH_DATA_DIR)")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--threads", type=int, default=None)
        if name in ("query", "evaluate"):
            p.add_argument("--checkpoint", required=True)
        p.set_defaults(fn=fn)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    _apply_threads(args.threads)
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(cfg, args)
    except FileNotFoundError as e:
        print(f"dataset not found: {e}", file=sys.stderr)
        return EXIT_DATA
    except dataio.IdxFormatError as e:
        print(f"dataset unreadable: {e}", file=sys.stderr)
        return EXIT_DATA
    except engine.DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, DimensionError, CheckpointError) as e:
        print(f"invalid setup: {e}", file=sys.stderr)
        return EXIT_CONFIG


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
