"""Timing comparison of the two inference kernels.

The backend is fixed at import time by PCGRAPH_BACKEND, so the parent
process re-runs itself once per backend and merges the results into one
table. Workloads cover the three shapes that dominate real runs: a layered
classifier chain, a dense fully connected graph, and a clustered graph
whose top-k gate exercises the sorting path.

Usage: python benchmarks/bench_backends.py [--T 32] [--batch 32] [--repeats 3]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

WORKLOADS = ("layered-784-256-256-10", "fully-connected-1000", "assembly-4x250")


def build(name: str):
    from pcgraph import topology

    if name == "layered-784-256-256-10":
        return topology.layered((784, 256, 256, 10), label_layer=True,
                                activation="relu", seed=0)
    if name == "fully-connected-1000":
        return topology.fully_connected(1000, 794, activation="hardtanh", seed=0)
    if name == "assembly-4x250":
        return topology.assembly((250, 250, 250, 250),
                                 ((0, 1), (1, 2), (2, 3)),
                                 p=0.1, k_frac=0.2, seed=0, d=94)
    raise ValueError(name)


def run_backend(args) -> list[dict]:
    import numpy as np

    from pcgraph import backend

    rows = []
    for name in WORKLOADS:
        g = build(name)
        rng = np.random.default_rng(0)
        X = rng.uniform(0.0, 1.0, (args.batch, g.n))
        cond = np.zeros((args.batch, g.n), dtype=bool)
        cond[:, :g.d] = True
        clusters = None
        if g.cluster_spec is not None:
            spec = g.cluster_spec
            starts = np.array([r[0] for r in spec.ranges], dtype=np.int64)
            ends = np.array([r[1] for r in spec.ranges], dtype=np.int64)
            clusters = (starts, ends, spec.keep_counts())
        # one untimed call: numba compiles here, numpy warms caches
        backend.inference_phase(X.copy(), g.masked_weights, g.activation.code,
                                0.1, 2, cond, X.copy(), clusters, False)
        best = float("inf")
        for _ in range(args.repeats):
            Xw = X.copy()
            t0 = time.perf_counter()
            backend.inference_phase(Xw, g.masked_weights, g.activation.code,
                                    0.1, args.T, cond, X.copy(), clusters, False)
            best = min(best, time.perf_counter() - t0)
        rows.append({"workload": name, "backend": backend.BACKEND,
                     "seconds": best,
                     "steps_per_s": args.T * args.batch / best})
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=32, help="inference steps per call")
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--backend", choices=("numpy", "numba"),
                    help="internal: run one backend and emit JSON")
    args = ap.parse_args(argv)

    if args.backend:
        if os.environ.get("PCGRAPH_BACKEND") != args.backend:
            raise SystemExit("run via the parent process")
        print(json.dumps(run_backend(args)))
        return 0

    results = {}
    for be in ("numpy", "numba"):
        env = dict(os.environ, PCGRAPH_BACKEND=be)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--backend", be,
             "--T", str(args.T), "--batch", str(args.batch),
             "--repeats", str(args.repeats)],
            capture_output=True, text=True, env=env)
        if proc.returncode != 0:
            print(f"{be}: failed\n{proc.stderr}", file=sys.stderr)
            if be == "numba":
                print("numba unavailable; only numpy timed", file=sys.stderr)
                continue
            return 1
        results[be] = {r["workload"]: r for r in json.loads(proc.stdout)}

    hdr = f"{'workload':28s} {'numpy s':>9s} {'numba s':>9s} {'speedup':>8s}"
    print(hdr)
    print("-" * len(hdr))
    for name in WORKLOADS:
        np_s = results.get("numpy", {}).get(name, {}).get("seconds")
        nb_s = results.get("numba", {}).get(name, {}).get("seconds")
        ratio = f"{np_s / nb_s:7.2f}x" if np_s and nb_s else "     n/a"
        np_txt = f"{np_s:9.4f}" if np_s else "      n/a"
        nb_txt = f"{nb_s:9.4f}" if nb_s else "      n/a"
        print(f"{name:28s} {np_txt} {nb_txt} {ratio}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
