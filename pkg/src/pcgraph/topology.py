"""Graph constructors: connectivity masks plus seeded weight initialization.

All constructors follow the same vertex-index convention: sensory vertices
occupy indices [0, d) with any label block at the end of that range, and
internal vertices fill [d, n). Masks use mask[post, pre] = 1 for an edge
pre -> post, diagonal forced to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ACTIVATIONS, ClusterSpec, ConfigurationError, DimensionError, PCGraph


@dataclass
class TopologyMask:
    """A connectivity pattern, optionally with firing clusters attached."""

    mask: np.ndarray
    clusters: tuple[tuple[int, int], ...] | None = None
    k_frac: float | None = None
    p: float | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        if self.mask.ndim != 2 or self.mask.shape[0] != self.mask.shape[1]:
            raise DimensionError(f"mask must be square, got {self.mask.shape}")
        if np.any(np.diagonal(self.mask)):
            raise ConfigurationError("self-loops are not allowed (diagonal must be zero)")

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    @property
    def edge_count(self) -> int:
        return int(self.mask.sum())


def init_weights(mask: np.ndarray, seed: int) -> np.ndarray:
    # row std 1/sqrt(fan_in) keeps predictions O(1) regardless of in-degree
    rng = np.random.default_rng(seed)
    n = mask.shape[0]
    W = rng.standard_normal((n, n))
    W *= mask
    fan_in = mask.sum(axis=1).astype(np.float64)
    W *= (1.0 / np.sqrt(np.maximum(fan_in, 1.0)))[:, None]
    return W


def _build(tm: TopologyMask, d: int, activation: str, seed: int) -> PCGraph:
    spec = None
    if tm.clusters is not None:
        spec = ClusterSpec(ranges=tm.clusters, k_frac=tm.k_frac if tm.k_frac is not None else 1.0)
    W = init_weights(tm.mask, seed)
    meta = dict(tm.meta)
    meta["seed"] = seed
    return PCGraph(n=tm.n, d=d, weights=W, mask=tm.mask,
                   activation=ACTIVATIONS[activation], cluster_spec=spec, meta=meta)


# ---------------------------------------------------------------------------
# Fully connected
# ---------------------------------------------------------------------------


def fully_connected_mask(n: int) -> TopologyMask:
    if n < 2:
        raise ConfigurationError(f"need at least 2 vertices, got {n}")
    mask = np.ones((n, n), dtype=np.uint8)
    np.fill_diagonal(mask, 0)
    return TopologyMask(mask=mask, meta={"topology": "fully_connected", "n": n})


def fully_connected(n: int, d: int, activation: str = "hardtanh", seed: int = 0) -> PCGraph:
    """Every ordered pair of distinct vertices is an edge: n*(n-1) total."""
    tm = fully_connected_mask(n)
    tm.meta["d"] = d
    return _build(tm, d, activation, seed)


# ---------------------------------------------------------------------------
# Layered (hierarchical) graphs
# ---------------------------------------------------------------------------


def layered_mask(dims: tuple[int, ...], direction: str = "from_sensory",
                 lateral: bool = False, recurrent: bool = False,
                 label_layer: bool = False) -> TopologyMask:
    """Chain connectivity dims[l] -> dims[l+1] with optional intra-layer edges.

    direction picks which end of the chain holds the image vertices:
    "from_sensory" puts them at dims[0] (predictions flow away from the
    image, the discriminative layout), "toward_sensory" puts them at
    dims[-1] (predictions flow into the image, the generative layout).
    With label_layer=True the opposite end of the chain is a label block
    and counts as sensory too.

    Vertex indices: image block first, label block next (when sensory),
    hidden layers after that in chain order. lateral adds all-to-all
    intra-layer edges on every layer; recurrent adds them on hidden layers
    only. Both exclude self-loops.
    """
    dims = tuple(int(w) for w in dims)
    if len(dims) < 2:
        raise ConfigurationError(f"need at least 2 layers, got {dims}")
    if any(w < 1 for w in dims):
        raise ConfigurationError(f"layer widths must be positive, got {dims}")
    if direction not in ("from_sensory", "toward_sensory"):
        raise ConfigurationError(f"unknown direction {direction!r}")

    K = len(dims)
    if direction == "from_sensory":
        image_layer, label_lid = 0, K - 1
    else:
        image_layer, label_lid = K - 1, 0
    sensory_layers = [image_layer] + ([label_lid] if label_layer else [])
    if label_layer and K < 3:
        raise ConfigurationError("label_layer needs at least one hidden layer")

    # assign index blocks: image, then labels, then hidden layers in chain order
    start = {}
    cursor = 0
    for lid in sensory_layers + [l for l in range(K) if l not in sensory_layers]:
        start[lid] = cursor
        cursor += dims[lid]
    n = cursor

    mask = np.zeros((n, n), dtype=np.uint8)

    def block(dst: int, src: int):
        r0, r1 = start[dst], start[dst] + dims[dst]
        c0, c1 = start[src], start[src] + dims[src]
        mask[r0:r1, c0:c1] = 1

    for l in range(K - 1):
        block(l + 1, l)
    if lateral:
        for l in range(K):
            block(l, l)
    if recurrent:
        for l in range(K):
            if l not in sensory_layers:
                block(l, l)
    np.fill_diagonal(mask, 0)

    meta = {"topology": "layered", "dims": list(dims), "direction": direction,
            "lateral": lateral, "recurrent": recurrent, "label_layer": label_layer}
    return TopologyMask(mask=mask, meta=meta)


def layered_edge_count(dims: tuple[int, ...], lateral: bool = False,
                       recurrent: bool = False, label_layer: bool = False,
                       direction: str = "from_sensory") -> int:
    """Closed-form edge count matching layered_mask."""
    dims = tuple(int(w) for w in dims)
    K = len(dims)
    total = sum(dims[l] * dims[l + 1] for l in range(K - 1))
    image_layer = 0 if direction == "from_sensory" else K - 1
    sensory = {image_layer}
    if label_layer:
        sensory.add(K - 1 - image_layer)
    intra = set()
    if lateral:
        intra.update(range(K))
    if recurrent:
        intra.update(l for l in range(K) if l not in sensory)
    total += sum(dims[l] * (dims[l] - 1) for l in intra)
    return total


def layered(dims: tuple[int, ...], direction: str = "from_sensory",
            lateral: bool = False, recurrent: bool = False,
            label_layer: bool = False, activation: str = "hardtanh",
            seed: int = 0) -> PCGraph:
    tm = layered_mask(dims, direction, lateral, recurrent, label_layer)
    K = len(dims)
    image_layer = 0 if direction == "from_sensory" else K - 1
    d = dims[image_layer] + (dims[K - 1 - image_layer] if label_layer else 0)
    if d >= tm.n:
        raise ConfigurationError("layered graph needs at least one hidden vertex")
    tm.meta["d"] = d
    return _build(tm, d, activation, seed)


# ---------------------------------------------------------------------------
# Assembly (clustered random) graphs
# ---------------------------------------------------------------------------


def assembly_mask(cluster_sizes: tuple[int, ...], inter_edges: tuple[tuple[int, int], ...],
                  p: float, k_frac: float, seed: int = 0, d: int = 1,
                  sensory_in: int | None = 0, sensory_out: int | None = -1) -> TopologyMask:
    """Random clustered connectivity with Bernoulli(p) edges.

    Internal vertices form len(cluster_sizes) clusters in consecutive index
    ranges after the d sensory vertices. Within each cluster every ordered
    pair is an edge with probability p; each (a, b) in inter_edges wires
    cluster a -> cluster b the same way. sensory_in names the cluster that
    receives edges from the sensory block, sensory_out the cluster whose
    edges predict it (None disables either attachment).
    """
    cluster_sizes = tuple(int(s) for s in cluster_sizes)
    if not cluster_sizes or any(s < 1 for s in cluster_sizes):
        raise ConfigurationError(f"cluster sizes must be positive, got {cluster_sizes}")
    if not 0.0 < p <= 1.0:
        raise ConfigurationError(f"edge probability must be in (0, 1], got {p}")
    if not 0.0 < k_frac <= 1.0:
        raise ConfigurationError(f"k_frac must be in (0, 1], got {k_frac}")
    if d < 0:
        raise ConfigurationError(f"sensory count must be nonnegative, got {d}")

    m = len(cluster_sizes)
    ranges = []
    cursor = d
    for s in cluster_sizes:
        ranges.append((cursor, cursor + s))
        cursor += s
    n = cursor

    def resolve(c: int) -> int:
        c = m + c if c < 0 else c
        if not 0 <= c < m:
            raise ConfigurationError(f"cluster index out of range: {c} with {m} clusters")
        return c

    rng = np.random.default_rng(seed)
    mask = np.zeros((n, n), dtype=np.uint8)

    def bern_block(rows: tuple[int, int], cols: tuple[int, int]):
        r0, r1 = rows
        c0, c1 = cols
        mask[r0:r1, c0:c1] = rng.random((r1 - r0, c1 - c0)) < p

    for r in ranges:
        bern_block(r, r)
    for a, b in inter_edges:
        a, b = resolve(a), resolve(b)
        if a == b:
            continue  # intra edges always present
        bern_block(ranges[b], ranges[a])
    if d > 0:
        if sensory_in is not None:
            bern_block(ranges[resolve(sensory_in)], (0, d))
        if sensory_out is not None:
            bern_block((0, d), ranges[resolve(sensory_out)])
    np.fill_diagonal(mask, 0)

    meta = {"topology": "assembly", "cluster_sizes": list(cluster_sizes),
            "inter_edges": [list(e) for e in inter_edges], "p": p,
            "k_frac": k_frac, "d": d,
            "sensory_in": sensory_in, "sensory_out": sensory_out}
    return TopologyMask(mask=mask, clusters=tuple(ranges), k_frac=k_frac,
                        p=p, seed=seed, meta=meta)


def assembly(cluster_sizes: tuple[int, ...], inter_edges: tuple[tuple[int, int], ...],
             p: float, k_frac: float, seed: int = 0, d: int = 1,
             sensory_in: int | None = 0, sensory_out: int | None = -1,
             activation: str = "hardtanh") -> PCGraph:
    tm = assembly_mask(cluster_sizes, inter_edges, p, k_frac, seed=seed, d=d,
                       sensory_in=sensory_in, sensory_out=sensory_out)
    if d == 0:
        raise ConfigurationError("assembly graph needs at least one sensory vertex")
    return _build(tm, d, activation, seed)


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------


def prune(graph: PCGraph, tm) -> PCGraph:
    """Restrict a graph to the edges of tm: W <- W * M, mask <- M.

    tm may be a TopologyMask or a raw 0/1 array. Surviving weights keep
    their values, so pruning a fully connected graph to a layered mask
    yields a graph whose predictions match the layered one under equal
    weights on the shared edges.
    """
    if isinstance(tm, TopologyMask):
        mask, clusters, k_frac = tm.mask, tm.clusters, tm.k_frac
    else:
        mask = np.ascontiguousarray(tm, dtype=np.uint8)
        clusters, k_frac = None, None
    if mask.shape != (graph.n, graph.n):
        raise DimensionError(f"mask shape {mask.shape} does not match graph n={graph.n}")
    spec = graph.cluster_spec
    if clusters is not None:
        spec = ClusterSpec(ranges=clusters, k_frac=k_frac if k_frac is not None else 1.0)
    g = PCGraph(n=graph.n, d=graph.d, weights=graph.weights * mask, mask=mask,
                activation=graph.activation, cluster_spec=spec, meta=dict(graph.meta))
    return g
