"""Training and query execution on predictive-coding graphs.

Training alternates a T-step inference phase (value nodes relax toward
lower energy while the sensory vertices stay clamped to data) with a
single weight update from the relaxed state. Queries run the same
inference phase with task-specific clamping and read answers off the free
vertices.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import backend
from .core import ConfigurationError, DimensionError, NodeState, PCGraph, make_state


class DivergenceError(RuntimeError):
    """Raised when the total energy becomes non-finite during training."""


# ---------------------------------------------------------------------------
# Clamping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClampSpec:
    """Which vertices are pinned during a query, and how free ones start.

    Conditioned vertices are re-imposed after every inference step;
    initialized vertices are set at t=0 only and relax afterward. Free
    vertices start per init_policy: "zeros", "gaussian" (std sigma), or
    "uniform" on [low, high), drawn from init_seed.
    """

    cond_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cond_val: np.ndarray = field(default_factory=lambda: np.zeros(0))
    init_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    init_val: np.ndarray = field(default_factory=lambda: np.zeros(0))
    init_policy: str = "zeros"
    sigma: float = 1.0
    low: float = -1.0
    high: float = 1.0
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cond_idx", np.asarray(self.cond_idx, dtype=np.int64))
        object.__setattr__(self, "cond_val", np.asarray(self.cond_val, dtype=np.float64))
        object.__setattr__(self, "init_idx", np.asarray(self.init_idx, dtype=np.int64))
        object.__setattr__(self, "init_val", np.asarray(self.init_val, dtype=np.float64))
        if self.cond_idx.shape != self.cond_val.shape:
            raise DimensionError("conditioned indices and values must align")
        if self.init_idx.shape != self.init_val.shape:
            raise DimensionError("initialized indices and values must align")
        if self.init_policy not in ("zeros", "gaussian", "uniform"):
            raise ConfigurationError(f"unknown init policy {self.init_policy!r}")
        both = np.intersect1d(self.cond_idx, self.init_idx)
        if both.size:
            raise ConfigurationError(f"vertices both conditioned and initialized: {both[:8]}")
        for name, idx in (("conditioned", self.cond_idx), ("initialized", self.init_idx)):
            if idx.size and len(np.unique(idx)) != idx.size:
                raise ConfigurationError(f"duplicate {name} vertices")

    @classmethod
    def conditioning(cls, indices, values, **kw) -> "ClampSpec":
        return cls(cond_idx=np.asarray(indices), cond_val=np.asarray(values), **kw)

    @classmethod
    def initialization(cls, indices, values, **kw) -> "ClampSpec":
        return cls(init_idx=np.asarray(indices), init_val=np.asarray(values), **kw)

    def validate_for(self, n: int):
        for idx in (self.cond_idx, self.init_idx):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise DimensionError(f"clamp index out of range for n={n}")
        if self.cond_idx.size >= n:
            raise ConfigurationError("every vertex is conditioned; nothing to infer")

    def initial_state(self, n: int) -> np.ndarray:
        rng = np.random.default_rng(self.init_seed)
        if self.init_policy == "zeros":
            x = np.zeros(n)
        elif self.init_policy == "gaussian":
            x = rng.normal(0.0, self.sigma, n)
        else:
            x = rng.uniform(self.low, self.high, n)
        if self.init_idx.size:
            x[self.init_idx] = self.init_val
        if self.cond_idx.size:
            x[self.cond_idx] = self.cond_val
        return x


# ---------------------------------------------------------------------------
# Energy traces
# ---------------------------------------------------------------------------


@dataclass
class EnergyTrace:
    """(step, energy, seconds) samples with strictly increasing steps."""

    steps: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def append(self, step: int, energy: float, sec: float):
        if self.steps and step <= self.steps[-1]:
            raise ValueError(f"trace steps must increase: {step} after {self.steps[-1]}")
        self.steps.append(int(step))
        self.energies.append(float(energy))
        self.seconds.append(float(sec))

    def extend_phase(self, start_step: int, energies: np.ndarray, t0: float):
        now = time.perf_counter() - t0
        for j, e in enumerate(energies):
            self.append(start_step + j, float(e), now)

    def __len__(self) -> int:
        return len(self.steps)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "energy", "seconds"])
            for row in zip(self.steps, self.energies, self.seconds):
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "EnergyTrace":
        tr = cls()
        with open(path) as fh:
            for row in csv.DictReader(fh):
                tr.append(int(row["step"]), float(row["energy"]), float(row["seconds"]))
        return tr


def converged(trace: EnergyTrace, window: int = 20, rel_tol: float = 1e-3) -> bool:
    """True when the windowed tail of the trace has flattened out.

    The last `window` samples must show no net increase, and the final
    step-to-step change must be within rel_tol of the window's starting
    magnitude. A constant trace converges immediately; a monotonically
    shrinking geometric trace converges once its decay falls below rel_tol.
    """
    if window < 2:
        raise ConfigurationError(f"window must be >= 2, got {window}")
    e = trace.energies if isinstance(trace, EnergyTrace) else list(trace)
    if len(e) < 2:
        return False
    w = e[-window:]
    tiny = 1e-12
    if w[-1] > w[0] + tiny:
        return False
    scale = max(abs(w[0]), tiny)
    return abs(w[-1] - w[-2]) <= rel_tol * scale


# ---------------------------------------------------------------------------
# Optimizers (weights only; value nodes always take plain gradient steps)
# ---------------------------------------------------------------------------


class SgdWeights:
    def __init__(self, alpha: float):
        self.alpha = alpha

    def step(self, W: np.ndarray, G: np.ndarray):
        W += self.alpha * G


class AdamWeights:
    def __init__(self, alpha: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.alpha, self.beta1, self.beta2, self.eps = alpha, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, W: np.ndarray, G: np.ndarray):
        if self.m is None:
            self.m = np.zeros_like(W)
            self.v = np.zeros_like(W)
        self.t += 1
        self.m += (1.0 - self.beta1) * (G - self.m)
        self.v += (1.0 - self.beta2) * (G * G - self.v)
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        W += self.alpha * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name: str, alpha: float):
    if name == "sgd":
        return SgdWeights(alpha)
    if name == "adam":
        return AdamWeights(alpha)
    raise ConfigurationError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainSchedule:
    """Hyperparameters for energy-based training.

    gamma is the value-node step size, alpha the weight step size; T is the
    number of inference steps before each weight update. weight_decay is
    decoupled: W <- (1 - alpha*weight_decay) * W before the gradient step.

    init controls where internal nodes start each batch: "zeros" (default),
    "gaussian" (sigma init_sigma), or "forward", which runs `sweeps` rounds
    of mu = Wm f(x) writing predictions into the internal nodes, so a
    layered graph begins at its own feedforward values and only the nodes
    whose predictions disagree with the clamped data carry error.
    """

    T: int = 32
    gamma: float = 0.5
    alpha: float = 1e-4
    epochs: int = 1
    batch_size: int = 128
    optimizer: str = "adam"
    weight_decay: float = 0.0
    shuffle: bool = True
    seed: int = 0
    trace_every: int = 1
    init: str = "zeros"
    init_sigma: float = 0.01
    sweeps: int = 4

    def __post_init__(self):
        if self.T < 1:
            raise ConfigurationError(f"T must be >= 1, got {self.T}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.alpha <= 0.0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.weight_decay < 0.0:
            raise ConfigurationError("weight_decay must be nonnegative")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.init not in ("zeros", "gaussian", "forward"):
            raise ConfigurationError(f"unknown init {self.init!r}")
        if self.init_sigma <= 0.0:
            raise ConfigurationError(f"init_sigma must be positive, got {self.init_sigma}")
        if self.sweeps < 1:
            raise ConfigurationError(f"sweeps must be >= 1, got {self.sweeps}")


def _clusters_arg(graph: PCGraph):
    if graph.cluster_spec is None:
        return None
    spec = graph.cluster_spec
    starts = np.array([r[0] for r in spec.ranges], dtype=np.int64)
    ends = np.array([r[1] for r in spec.ranges], dtype=np.int64)
    return starts, ends, spec.keep_counts()


def run_phase(graph: PCGraph, X: np.ndarray, T: int, gamma: float,
              cond_mask=None, cond_vals=None, record: bool = False):
    """Batched inference phase; thin wrapper over the backend kernel."""
    return backend.inference_phase(X, graph.masked_weights, graph.activation.code,
                                   gamma, T, cond_mask, cond_vals,
                                   _clusters_arg(graph), record)


def train(graph: PCGraph, data: np.ndarray, schedule: TrainSchedule):
    """Fit weights to data by local energy minimization.

    data is (m, d): one row per sensory observation (pixels, or pixels with
    a label block appended, depending on the graph). Returns a new trained
    graph plus an EnergyTrace with one sample per weight update, recording
    the per-example energy at the end of that batch's inference phase.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    m, d = data.shape
    if d != graph.d:
        raise DimensionError(f"data has {d} columns, graph expects d={graph.d}")
    g = graph.copy()
    W = g.weights
    maskf = g.mask.astype(np.float64)
    opt = make_optimizer(schedule.optimizer, schedule.alpha)
    rng = np.random.default_rng(schedule.seed)
    trace = EnergyTrace()
    t0 = time.perf_counter()
    step = 0
    decay = schedule.weight_decay
    update = 0
    for _ in range(schedule.epochs):
        order = rng.permutation(m) if schedule.shuffle else np.arange(m)
        for lo in range(0, m, schedule.batch_size):
            batch = order[lo:lo + schedule.batch_size]
            B = batch.size
            X = np.zeros((B, g.n))
            X[:, :d] = data[batch]
            if schedule.init == "gaussian":
                X[:, d:] = rng.normal(0.0, schedule.init_sigma, (B, g.n - d))
            cond_mask = np.zeros((B, g.n), dtype=bool)
            cond_mask[:, :d] = True
            Wm = W * maskf
            if schedule.init == "forward":
                for _ in range(schedule.sweeps):
                    X[:, d:] = (g.activation.f(X) @ Wm.T)[:, d:]
            X, A, MU, EPS, _ = backend.inference_phase(
                X, Wm, g.activation.code, schedule.gamma, schedule.T,
                cond_mask, X.copy(), _clusters_arg(g), False)
            energy = 0.5 * float(np.sum(EPS * EPS)) / B
            step += schedule.T
            if not np.isfinite(energy):
                raise DivergenceError(
                    f"energy became non-finite at step {step} "
                    f"(update {update}); lower gamma or alpha")
            update += 1
            if update % schedule.trace_every == 0:
                trace.append(step, energy, time.perf_counter() - t0)
            G = (EPS.T @ A) / B
            G *= maskf
            if decay > 0.0:
                W *= 1.0 - schedule.alpha * decay
            opt.step(W, G)
            W *= maskf
    g.apply_mask()
    return g, trace


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


def _query(graph: PCGraph, clamp: ClampSpec, T: int, gamma: float,
           condition: bool, record: bool):
    clamp.validate_for(graph.n)
    x0 = clamp.initial_state(graph.n)
    X = x0[None, :].copy()
    cond_mask = cond_vals = None
    if condition and clamp.cond_idx.size:
        cond_mask = np.zeros((1, graph.n), dtype=bool)
        cond_mask[0, clamp.cond_idx] = True
        cond_vals = np.zeros((1, graph.n))
        cond_vals[0, clamp.cond_idx] = clamp.cond_val
    trace = EnergyTrace()
    t0 = time.perf_counter()
    X, A, MU, EPS, energies = run_phase(graph, X, T, gamma, cond_mask, cond_vals,
                                        record=record)
    if record:
        trace.extend_phase(0, energies, t0)
    state = NodeState(x=X[0], mu=MU[0], eps=EPS[0], act=A[0], t=T)
    return state, trace


def query_by_conditioning(graph: PCGraph, clamp: ClampSpec, T: int,
                          gamma: float, record: bool = True):
    """Pin the conditioned vertices for all T steps and relax the rest.

    Use for classification (pin pixels, read labels), generation (pin
    labels, read pixels) and any other query where the evidence should
    keep overriding the dynamics.
    """
    if clamp.cond_idx.size == 0:
        raise ConfigurationError("query_by_conditioning needs conditioned vertices")
    return _query(graph, clamp, T, gamma, condition=True, record=record)


def query_by_initialization(graph: PCGraph, clamp: ClampSpec, T: int,
                            gamma: float, record: bool = True):
    """Set vertices at t=0 then let every vertex relax freely.

    Use for denoising and associative recall, where the cue is informative
    but not trustworthy enough to pin.
    """
    if clamp.init_idx.size == 0:
        raise ConfigurationError("query_by_initialization needs initialized vertices")
    clamp = replace(clamp, cond_idx=np.zeros(0, dtype=np.int64), cond_val=np.zeros(0),
                    init_idx=clamp.init_idx, init_val=clamp.init_val)
    return _query(graph, clamp, T, gamma, condition=False, record=record)


def query_batch(graph: PCGraph, X0: np.ndarray, cond_mask, T: int, gamma: float):
    """Many conditioning queries at once: X0 rows hold the clamped values.

    cond_mask is (B, n) or (n,) boolean; returns the final value matrix.
    """
    X = np.ascontiguousarray(X0, dtype=np.float64).copy()
    if X.ndim != 2 or X.shape[1] != graph.n:
        raise DimensionError(f"X0 must be (B, {graph.n})")
    cm = np.asarray(cond_mask, dtype=bool)
    if cm.ndim == 1:
        cm = np.broadcast_to(cm, X.shape).copy()
    X, A, MU, EPS, _ = run_phase(graph, X, T, gamma, cm, X.copy(), record=False)
    return X
