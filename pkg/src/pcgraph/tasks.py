"""Task wrappers: classification, generation, reconstruction, denoising,
and associative retrieval, all phrased as clamped inference queries.

Sensory layout convention: pixels occupy sensory indices [0, p) and the
10-way label block, when present, occupies the last 10 sensory indices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import PCGraph
from .data import onehot
from .engine import (ClampSpec, query_batch, query_by_conditioning,
                     query_by_initialization)

N_CLASSES = 10


@dataclass
class TaskResult:
    task: str
    metrics: dict
    seed: int = 0
    config_digest: str = ""
    outputs: dict = field(default_factory=dict)

    def to_json(self) -> str:
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
        return json.dumps(clean({"task": self.task, "metrics": self.metrics,
                                 "seed": self.seed, "config_digest": self.config_digest,
                                 "outputs": self.outputs}), indent=2, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return float(np.mean((a - b) ** 2))


def _pixel_count(graph: PCGraph, expect_labels: bool) -> int:
    if expect_labels:
        p = graph.d - N_CLASSES
        if p <= 0:
            raise ValueError(
                f"graph has d={graph.d} sensory vertices; no room for a "
                f"{N_CLASSES}-vertex label block")
        return p
    return graph.d


def label_indices(graph: PCGraph) -> np.ndarray:
    return np.arange(graph.d - N_CLASSES, graph.d)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def classify(graph: PCGraph, image: np.ndarray, T: int = 128,
             gamma: float = 0.5) -> int:
    """Pin the pixels, relax, and read the strongest label vertex."""
    image = np.asarray(image, dtype=np.float64).ravel()
    p = _pixel_count(graph, expect_labels=True)
    if image.size != p:
        raise ValueError(f"image has {image.size} pixels, graph expects {p}")
    clamp = ClampSpec.conditioning(np.arange(p), image)
    state, _ = query_by_conditioning(graph, clamp, T, gamma, record=False)
    return int(np.argmax(state.x[label_indices(graph)]))


def classify_batch(graph: PCGraph, images: np.ndarray, T: int = 128,
                   gamma: float = 0.5, chunk: int = 512) -> np.ndarray:
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    p = _pixel_count(graph, expect_labels=True)
    if images.shape[1] != p:
        raise ValueError(f"images have {images.shape[1]} pixels, graph expects {p}")
    lab = label_indices(graph)
    out = np.empty(images.shape[0], dtype=np.int64)
    cond = np.zeros(graph.n, dtype=bool)
    cond[:p] = True
    for lo in range(0, images.shape[0], chunk):
        part = images[lo:lo + chunk]
        X0 = np.zeros((part.shape[0], graph.n))
        X0[:, :p] = part
        X = query_batch(graph, X0, cond, T, gamma)
        out[lo:lo + chunk] = np.argmax(X[:, lab], axis=1)
    return out


def evaluate_accuracy(graph: PCGraph, images: np.ndarray, labels: np.ndarray,
                      T: int = 128, gamma: float = 0.5, chunk: int = 512,
                      predict_fn=None):
    """Accuracy plus a 10x10 confusion matrix (rows true, cols predicted).

    predict_fn(images) -> labels overrides the graph query path, which lets
    tests drive the bookkeeping with a stub predictor.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if predict_fn is None:
        pred = classify_batch(graph, images, T=T, gamma=gamma, chunk=chunk)
    else:
        pred = np.asarray(predict_fn(images), dtype=np.int64)
    if pred.shape != labels.shape:
        raise ValueError(f"predictions {pred.shape} do not match labels {labels.shape}")
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    acc = float(np.mean(pred == labels)) if labels.size else 0.0
    return acc, confusion


# ---------------------------------------------------------------------------
# Generation and completion
# ---------------------------------------------------------------------------


def generate(graph: PCGraph, label: int, T: int = 512, gamma: float = 0.5,
             init_policy: str = "zeros", init_seed: int = 0) -> np.ndarray:
    """Pin the label one-hot and let the pixels settle; returns (p,) in [0,1]."""
    p = _pixel_count(graph, expect_labels=True)
    clamp = ClampSpec.conditioning(label_indices(graph), onehot(label),
                                   init_policy=init_policy, init_seed=init_seed)
    state, _ = query_by_conditioning(graph, clamp, T, gamma, record=False)
    return np.clip(state.x[:p], 0.0, 1.0)


def reconstruct(graph: PCGraph, image: np.ndarray, known_idx: np.ndarray,
                label: int | None = None, T: int = 512,
                gamma: float = 0.5) -> np.ndarray:
    """Fill in missing pixels by conditioning on the surviving ones.

    known_idx lists the trusted pixel indices; the rest relax freely. Pass
    the label to disambiguate heavily occluded images.
    """
    image = np.asarray(image, dtype=np.float64).ravel()
    p = _pixel_count(graph, expect_labels=label is not None)
    known_idx = np.asarray(known_idx, dtype=np.int64)
    idx = known_idx
    val = image[known_idx]
    if label is not None:
        idx = np.concatenate([idx, label_indices(graph)])
        val = np.concatenate([val, onehot(label)])
    clamp = ClampSpec.conditioning(idx, val)
    state, _ = query_by_conditioning(graph, clamp, T, gamma, record=False)
    out = np.clip(state.x[:image.size], 0.0, 1.0)
    out[known_idx] = image[known_idx]
    return out


def denoise(graph: PCGraph, noisy: np.ndarray, T: int = 256,
            gamma: float = 0.5) -> np.ndarray:
    """Start the pixels at the noisy values and relax everything."""
    noisy = np.asarray(noisy, dtype=np.float64).ravel()
    if noisy.size > graph.d:
        raise ValueError(f"image has {noisy.size} pixels but d={graph.d}")
    clamp = ClampSpec.initialization(np.arange(noisy.size), noisy)
    state, _ = query_by_initialization(graph, clamp, T, gamma, record=False)
    return np.clip(state.x[:noisy.size], 0.0, 1.0)


# ---------------------------------------------------------------------------
# Associative retrieval
# ---------------------------------------------------------------------------


def am_retrieve(graph: PCGraph, cue: np.ndarray, memory: np.ndarray,
                kind: str = "noise", known_idx: np.ndarray | None = None,
                T: int = 256, gamma: float = 0.5, threshold: float = 1e-3):
    """Recover a stored image from a degraded cue.

    kind "noise" treats every cue pixel as unreliable (initialization
    query); kind "fragment" pins the pixels in known_idx and relaxes the
    rest. memory is the stored original used to score the retrieval.
    Returns (retrieved, hit, err) with hit = err < threshold.
    """
    cue = np.asarray(cue, dtype=np.float64).ravel()
    if kind == "noise":
        out = denoise(graph, cue, T=T, gamma=gamma)
    elif kind == "fragment":
        if known_idx is None:
            raise ValueError("fragment retrieval needs known_idx")
        clamp = ClampSpec.conditioning(np.asarray(known_idx, dtype=np.int64),
                                       cue[np.asarray(known_idx, dtype=np.int64)])
        state, _ = query_by_conditioning(graph, clamp, T, gamma, record=False)
        out = np.clip(state.x[:cue.size], 0.0, 1.0)
    else:
        raise ValueError(f"unknown retrieval kind {kind!r}")
    err = mse(out, memory)
    return out, bool(err < threshold), err
