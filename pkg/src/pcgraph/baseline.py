"""Plain feedforward networks trained with backpropagation.

Self-contained reference point for the energy-based models: same data,
matched layer sizes, standard softmax cross-entropy (classifier) or MSE
(autoencoder) losses, minibatch Adam or SGD. Gradients are written out by
hand and checked against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _act(name: str):
    if name == "relu":
        return (lambda z: np.maximum(z, 0.0)), (lambda z: (z > 0.0).astype(np.float64))
    if name == "tanh":
        return np.tanh, (lambda z: 1.0 - np.tanh(z) ** 2)
    if name == "hardtanh":
        return (lambda z: np.clip(z, -1.0, 1.0)), (lambda z: (np.abs(z) <= 1.0).astype(np.float64))
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class BpSchedule:
    epochs: int = 10
    batch_size: int = 128
    alpha: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    l2: float = 0.0


class Mlp:
    """dims[0] inputs through len(dims)-2 hidden layers to dims[-1] outputs."""

    def __init__(self, dims, activation: str = "hardtanh", head: str = "softmax",
                 seed: int = 0):
        if len(dims) < 2:
            raise ValueError(f"need at least input and output sizes, got {dims}")
        if head not in ("softmax", "linear", "cliplin"):
            raise ValueError(f"unknown head {head!r}")
        rng = np.random.default_rng(seed)
        self.dims = tuple(int(w) for w in dims)
        self.head = head
        self.activation = activation
        self.f, self.fprime = _act(activation)
        self.W = [rng.standard_normal((a, b)) / np.sqrt(a)
                  for a, b in zip(self.dims[:-1], self.dims[1:])]
        self.b = [np.zeros(b) for b in self.dims[1:]]

    def forward(self, X: np.ndarray):
        """Returns (output, caches); caches hold per-layer pre-activations."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        H, Zs, Hs = X, [], [X]
        last = len(self.W) - 1
        for l, (W, b) in enumerate(zip(self.W, self.b)):
            Z = H @ W + b
            Zs.append(Z)
            if l < last:
                H = self.f(Z)
            elif self.head == "cliplin":
                H = np.clip(Z, 0.0, 1.0)
            else:
                H = Z  # softmax applied inside the loss; linear head as-is
            Hs.append(H)
        return Hs[-1], (Zs, Hs)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out, _ = self.forward(X)
        return np.argmax(out, axis=1)

    def loss_and_grads(self, X: np.ndarray, Y: np.ndarray):
        """Mean loss and gradients; Y is int labels (softmax) or targets."""
        out, (Zs, Hs) = self.forward(X)
        B = out.shape[0]
        if self.head == "softmax":
            y = np.asarray(Y, dtype=np.int64)
            logits = out - out.max(axis=1, keepdims=True)
            expz = np.exp(logits)
            probs = expz / expz.sum(axis=1, keepdims=True)
            loss = float(-np.mean(np.log(probs[np.arange(B), y] + 1e-300)))
            delta = probs.copy()
            delta[np.arange(B), y] -= 1.0
            delta /= B
        else:
            target = np.atleast_2d(np.asarray(Y, dtype=np.float64))
            diff = out - target
            loss = float(0.5 * np.mean(np.sum(diff * diff, axis=1)))
            delta = diff / B
            if self.head == "cliplin":
                Z = Zs[-1]
                delta = delta * ((Z > 0.0) & (Z < 1.0)).astype(np.float64)
        gW = [None] * len(self.W)
        gb = [None] * len(self.W)
        for l in range(len(self.W) - 1, -1, -1):
            gW[l] = Hs[l].T @ delta
            gb[l] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ self.W[l].T) * self.fprime(Zs[l - 1])
        return loss, gW, gb


class _Adam:
    def __init__(self, params, alpha):
        self.alpha = alpha
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p -= self.alpha * (m / (1.0 - b1 ** self.t)) / (
                np.sqrt(v / (1.0 - b2 ** self.t)) + eps)


class _Sgd:
    def __init__(self, params, alpha):
        self.alpha = alpha

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.alpha * g


def train_bp(model: Mlp, X: np.ndarray, Y: np.ndarray, sched: BpSchedule):
    """Minibatch training; returns per-epoch mean losses."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y)
    rng = np.random.default_rng(sched.seed)
    params = model.W + model.b
    opt = (_Adam if sched.optimizer == "adam" else _Sgd)(params, sched.alpha)
    history = []
    m = X.shape[0]
    for _ in range(sched.epochs):
        order = rng.permutation(m)
        losses = []
        for lo in range(0, m, sched.batch_size):
            idx = order[lo:lo + sched.batch_size]
            loss, gW, gb = model.loss_and_grads(X[idx], Y[idx])
            if sched.l2 > 0.0:
                gW = [g + sched.l2 * W for g, W in zip(gW, model.W)]
            opt.step(params, gW + gb)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def train_classifier(dims, X, y, sched: BpSchedule, activation: str = "hardtanh") -> Mlp:
    model = Mlp(dims, activation=activation, head="softmax", seed=sched.seed)
    train_bp(model, X, np.asarray(y, dtype=np.int64), sched)
    return model


def train_autoencoder(dims, X, sched: BpSchedule, activation: str = "hardtanh") -> Mlp:
    """Symmetric in/out; output clipped to [0, 1] to match pixel range."""
    model = Mlp(dims, activation=activation, head="cliplin", seed=sched.seed)
    train_bp(model, X, np.asarray(X, dtype=np.float64), sched)
    return model


def accuracy(model: Mlp, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(model.predict(X) == np.asarray(y, dtype=np.int64)))
