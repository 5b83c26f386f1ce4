"""Binary checkpoints for trained graphs.

Layout (little-endian):

    8s   magic  b"PCGRAPH\\0"
    u32  format version (1)
    u32  n, u32 d, u32 descriptor length
    ...  descriptor JSON (activation, clusters, meta)
    ...  mask as packed bits, ceil(n*n/8) bytes, row-major
    ...  surviving weights as float64, row-major order where mask == 1
    32s  sha256 over everything above

Only masked-in weights are stored, so sparse graphs stay small. The
trailing digest turns truncation or bit rot into a load-time error.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .core import ACTIVATIONS, ClusterSpec, PCGraph

MAGIC = b"PCGRAPH\x00"
VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable, mismatched, or corrupted checkpoint files."""


def _jsonable(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def save_checkpoint(graph: PCGraph, path):
    desc = {
        "activation": graph.activation.name,
        "clusters": None,
        "meta": _jsonable(graph.meta),
    }
    if graph.cluster_spec is not None:
        desc["clusters"] = {"ranges": [list(r) for r in graph.cluster_spec.ranges],
                            "k_frac": graph.cluster_spec.k_frac}
    desc_bytes = json.dumps(desc, sort_keys=True).encode("utf-8")
    mask_bits = np.packbits(graph.mask.ravel().astype(np.uint8)).tobytes()
    weights = np.ascontiguousarray(
        graph.weights[graph.mask.astype(bool)], dtype="<f8").tobytes()
    body = (MAGIC
            + struct.pack("<4I", VERSION, graph.n, graph.d, len(desc_bytes))
            + desc_bytes + mask_bits + weights)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


def load_checkpoint(path) -> PCGraph:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint: {e}") from e
    if len(blob) < len(MAGIC) + 16 + 32:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:8]!r}")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    off = len(MAGIC)
    version, n, d, desc_len = struct.unpack_from("<4I", body, off)
    off += 16
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    try:
        desc = json.loads(body[off:off + desc_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: bad descriptor: {e}") from e
    off += desc_len
    mask_bytes = (n * n + 7) // 8
    mask = np.unpackbits(np.frombuffer(body, dtype=np.uint8,
                                       count=mask_bytes, offset=off))[:n * n]
    mask = mask.reshape(n, n).astype(np.uint8)
    off += mask_bytes
    nnz = int(mask.sum())
    want = nnz * 8
    if len(body) - off != want:
        raise CheckpointError(
            f"{path}: weight payload is {len(body) - off} bytes, expected {want}")
    vals = np.frombuffer(body, dtype="<f8", count=nnz, offset=off)
    W = np.zeros((n, n))
    W[mask.astype(bool)] = vals
    spec = None
    if desc.get("clusters"):
        spec = ClusterSpec(ranges=tuple(tuple(r) for r in desc["clusters"]["ranges"]),
                           k_frac=float(desc["clusters"]["k_frac"]))
    return PCGraph(n=n, d=d, weights=W, mask=mask,
                   activation=ACTIVATIONS[desc["activation"]],
                   cluster_spec=spec, meta=desc.get("meta", {}))
