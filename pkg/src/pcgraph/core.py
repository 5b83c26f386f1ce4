"""Core predictive-coding math: energy, predictions, errors, and their exact gradients.

A PC graph is a directed graph on n vertices. Vertex i holds a value node
x[i], computes a prediction mu[i] = sum_j W[i, j] * f(x[j]) over incoming
edges, and carries the error eps[i] = x[i] - mu[i]. Everything (inference
and learning) is gradient descent on the quadratic energy

    E = 0.5 * sum_i eps[i]**2

Weight convention: W[i, j] is the weight of the edge j -> i (post, pre).
Under this convention the value-node update and the weight update below are
the exact negative gradients of E, which the finite-difference tests verify.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when an operand's shape does not match the graph."""


class ConfigurationError(ValueError):
    """Raised for invalid structural parameters (overlapping clusters, bad d, ...)."""


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

# Codes shared with the compiled kernels in backend.py.
ACT_IDENTITY = 0
ACT_HARDTANH = 1
ACT_TANH = 2
ACT_RELU = 3

_ACT_CODES = {"identity": ACT_IDENTITY, "hardtanh": ACT_HARDTANH, "tanh": ACT_TANH,
              "relu": ACT_RELU}


@dataclass(frozen=True)
class Activation:
    """Pointwise nonlinearity f with its exact derivative f'.

    At the hardtanh kinks (|x| = 1) the derivative is fixed to 1.0, the
    value from the interior, so tests are deterministic. Same convention
    at the relu kink: f'(0) = 1.
    """

    name: str

    def __post_init__(self):
        if self.name not in _ACT_CODES:
            raise ConfigurationError(f"unknown activation {self.name!r}")

    @property
    def code(self) -> int:
        return _ACT_CODES[self.name]

    def f(self, x: np.ndarray) -> np.ndarray:
        if self.name == "identity":
            return np.asarray(x, dtype=np.float64).copy()
        if self.name == "hardtanh":
            return np.clip(x, -1.0, 1.0)
        if self.name == "relu":
            return np.maximum(x, 0.0)
        return np.tanh(x)

    def fprime(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.name == "identity":
            return np.ones_like(x)
        if self.name == "hardtanh":
            return (np.abs(x) <= 1.0).astype(np.float64)
        if self.name == "relu":
            return (x >= 0.0).astype(np.float64)
        t = np.tanh(x)
        return 1.0 - t * t


IDENTITY = Activation("identity")
HARDTANH = Activation("hardtanh")
TANH = Activation("tanh")
RELU = Activation("relu")

ACTIVATIONS = {"identity": IDENTITY, "hardtanh": HARDTANH, "tanh": TANH,
               "relu": RELU}


# ---------------------------------------------------------------------------
# Cluster structure (assemblies of neurons)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterSpec:
    """Disjoint half-open index ranges with a shared top-k firing fraction.

    Within each cluster only the ceil(k_frac * size) vertices with the
    largest activation fire; the rest contribute nothing to predictions.
    Vertices outside every cluster always fire.
    """

    ranges: tuple[tuple[int, int], ...]
    k_frac: float

    def __post_init__(self):
        if not 0.0 < self.k_frac <= 1.0:
            raise ConfigurationError(f"k_frac must be in (0, 1], got {self.k_frac}")
        spans = sorted(self.ranges)
        for (s, e) in spans:
            if e <= s:
                raise ConfigurationError(f"empty cluster range ({s}, {e})")
        for (_, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ConfigurationError("cluster ranges overlap")

    def keep_counts(self) -> list[int]:
        return [int(np.ceil(self.k_frac * (e - s))) for s, e in self.ranges]


def topk_fire(x_activated: np.ndarray, clusters: Sequence[tuple[int, int]],
              k_frac: float) -> np.ndarray:
    """Zero all but the top ceil(k_frac*size) entries inside each cluster.

    Ties are broken by keeping the lower index first. Entries outside every
    cluster pass through unchanged.
    """
    spec = ClusterSpec(tuple((int(s), int(e)) for s, e in clusters), k_frac)
    out = np.array(x_activated, dtype=np.float64, copy=True)
    for (s, e), keep in zip(spec.ranges, spec.keep_counts()):
        seg = out[s:e]
        order = np.argsort(-seg, kind="stable")  # stable: lower index wins ties
        kill = order[keep:]
        seg[kill] = 0.0
    return out


def _gate_batch(act: np.ndarray, deriv: np.ndarray, spec: ClusterSpec) -> None:
    """In-place top-k gating of activations and derivatives, batched rows."""
    for (s, e), keep in zip(spec.ranges, spec.keep_counts()):
        seg = act[..., s:e]
        order = np.argsort(-seg, axis=-1, kind="stable")
        fire = np.zeros(seg.shape, dtype=bool)
        np.put_along_axis(fire, order[..., :keep], True, axis=-1)
        seg[~fire] = 0.0
        deriv[..., s:e][~fire] = 0.0


# ---------------------------------------------------------------------------
# The model
# ---------------------------------------------------------------------------


@dataclass
class PCGraph:
    """Masked weight matrix plus activation and sensory/internal partition.

    weights[i, j] is the weight of edge j -> i; mask[i, j] = 1 iff that edge
    exists. The first d vertices are sensory. weights respect the mask at
    all times (enforced by apply_mask after every update).
    """

    n: int
    d: int
    weights: np.ndarray
    mask: np.ndarray
    activation: Activation = HARDTANH
    cluster_spec: Optional[ClusterSpec] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.d < self.n:
            raise ConfigurationError(f"need 0 < d < n, got d={self.d}, n={self.n}")
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        if self.weights.shape != (self.n, self.n):
            raise DimensionError(f"weights must be {self.n}x{self.n}")
        if self.mask.shape != (self.n, self.n):
            raise DimensionError(f"mask must be {self.n}x{self.n}")
        if not np.isin(self.mask, (0, 1)).all():
            raise ConfigurationError("mask entries must be 0 or 1")
        if self.mask.trace() != 0:
            raise ConfigurationError("self-loops are not allowed (mask diagonal must be 0)")
        if self.cluster_spec is not None:
            for s, e in self.cluster_spec.ranges:
                if s < 0 or e > self.n:
                    raise ConfigurationError(f"cluster range ({s}, {e}) out of bounds")
        self.apply_mask()

    def apply_mask(self) -> None:
        """Zero weights wherever the mask is 0. Call after every weight update."""
        self.weights *= self.mask

    @property
    def masked_weights(self) -> np.ndarray:
        return self.weights * self.mask

    def activations(self, x: np.ndarray) -> np.ndarray:
        """f(x) with top-k firing applied when the graph carries clusters."""
        a = self.activation.f(x)
        if self.cluster_spec is not None:
            a = topk_fire(a, self.cluster_spec.ranges, self.cluster_spec.k_frac)
        return a

    def copy(self) -> "PCGraph":
        return replace(self, weights=self.weights.copy(), mask=self.mask.copy(),
                       meta=dict(self.meta))

    @property
    def edge_count(self) -> int:
        return int(self.mask.sum())


@dataclass
class NodeState:
    """Value nodes, predictions and errors of every vertex at one step.

    act caches the (gated) presynaptic activations used to form mu, so the
    weight gradient can be read straight off the state.
    """

    x: np.ndarray
    mu: np.ndarray
    eps: np.ndarray
    act: np.ndarray
    t: int = 0


def _check_len(v: np.ndarray, n: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise DimensionError(f"{name} must have length {n}, got shape {v.shape}")
    return v


def predict(graph: PCGraph, x: np.ndarray) -> np.ndarray:
    """mu[i] = sum_j mask[i, j] * W[i, j] * f(x[j])."""
    x = _check_len(x, graph.n, "x")
    return graph.masked_weights @ graph.activations(x)


def compute_errors(x: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """eps = x - mu, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if x.shape != mu.shape:
        raise DimensionError(f"shape mismatch: x {x.shape} vs mu {mu.shape}")
    return x - mu


def energy(eps: np.ndarray) -> float:
    """E = 0.5 * sum(eps**2)."""
    eps = np.asarray(eps, dtype=np.float64)
    return 0.5 * float(np.sum(eps * eps))


def make_state(graph: PCGraph, x: np.ndarray, t: int = 0) -> NodeState:
    """Fresh NodeState with mu, eps and act recomputed from x."""
    x = _check_len(x, graph.n, "x").copy()
    a = graph.activation.f(x)
    deriv = graph.activation.fprime(x)
    if graph.cluster_spec is not None:
        _gate_batch(a, deriv, graph.cluster_spec)
    mu = graph.masked_weights @ a
    return NodeState(x=x, mu=mu, eps=x - mu, act=a, t=t)


def inference_step(graph: PCGraph, state: NodeState, gamma: float,
                   clamp=None) -> NodeState:
    """One synchronous gradient step on the value nodes.

    Every unclamped vertex moves by gamma * (-dE/dx_i):

        x'[i] = x[i] + gamma * (-eps[i] + f'(x[i]) * sum_k eps[k] * Wm[k, i])

    computed entirely from the pre-step snapshot. Conditioned vertices keep
    their values bit-identically; mu/eps/act are refreshed from x'.
    """
    x = state.x
    Wm = graph.masked_weights
    deriv = graph.activation.fprime(x)
    a = graph.activation.f(x)
    if graph.cluster_spec is not None:
        _gate_batch(a, deriv, graph.cluster_spec)
    eps = state.eps
    dx = -eps + deriv * (eps @ Wm)  # (eps @ Wm)[i] = sum_k eps[k] * Wm[k, i]
    x_new = x + gamma * dx
    if clamp is not None and len(clamp.cond_idx) > 0:
        x_new[clamp.cond_idx] = clamp.cond_val
    new = make_state(graph, x_new, t=state.t + 1)
    return new


def weight_gradient(state: NodeState) -> np.ndarray:
    """G[i, j] = eps[i] * act[j]: the exact negative gradient -dE/dW[i, j].

    The caller masks with M before applying (rank-1 outer product).
    """
    return np.outer(state.eps, state.act)
