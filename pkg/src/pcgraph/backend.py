"""Hot inference kernels: numba-compiled by default, pure numpy as fallback.

The T-step inference loop dominates runtime (two dense matmuls plus
elementwise work per step, repeated thousands of times), so it is the one
piece that gets a compiled path. Backend selection is controlled by the
environment variable PCGRAPH_BACKEND:

    auto   (default) use numba when importable, else numpy
    numba  require numba, fail if missing
    numpy  force the pure-numpy path

Both paths implement identical semantics (same update order, same top-k
tie rule); tests assert their outputs agree to float64 roundoff and
benchmarks/bench_backends.py compares their speed.
"""

from __future__ import annotations

import os

import numpy as np

ACT_IDENTITY = 0
ACT_HARDTANH = 1
ACT_TANH = 2
ACT_RELU = 3

_EMPTY_I64 = np.zeros(0, dtype=np.int64)


def _resolve_backend() -> str:
    choice = os.environ.get("PCGRAPH_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"PCGRAPH_BACKEND must be auto|numba|numpy, got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _resolve_backend()


# ---------------------------------------------------------------------------
# Pure numpy implementation
# ---------------------------------------------------------------------------


def _act_np(X, code):
    if code == ACT_IDENTITY:
        return X.copy(), np.ones_like(X)
    if code == ACT_HARDTANH:
        return np.clip(X, -1.0, 1.0), (np.abs(X) <= 1.0).astype(np.float64)
    if code == ACT_RELU:
        return np.maximum(X, 0.0), (X >= 0.0).astype(np.float64)
    t = np.tanh(X)
    return t, 1.0 - t * t


def _gate_np(A, D, starts, ends, keeps):
    for s, e, keep in zip(starts, ends, keeps):
        seg = A[:, s:e]
        order = np.argsort(-seg, axis=1, kind="stable")  # lower index wins ties
        fire = np.zeros(seg.shape, dtype=bool)
        np.put_along_axis(fire, order[:, :keep], True, axis=1)
        seg[~fire] = 0.0
        D[:, s:e][~fire] = 0.0


def _phase_numpy(X, Wm, WmT, act_code, gamma, T, cond_mask, cond_vals,
                 cl_starts, cl_ends, cl_keeps, record):
    n_rec = T + 1 if record else 0
    energies = np.zeros(n_rec)
    clustered = len(cl_starts) > 0
    clamped = cond_mask.any()
    for t in range(T):
        A, D = _act_np(X, act_code)
        if clustered:
            _gate_np(A, D, cl_starts, cl_ends, cl_keeps)
        MU = A @ WmT
        EPS = X - MU
        if record:
            energies[t] = 0.5 * float(np.sum(EPS * EPS))
        X += gamma * (-EPS + D * (EPS @ Wm))
        if clamped:
            X[cond_mask] = cond_vals[cond_mask]
    A, D = _act_np(X, act_code)
    if clustered:
        _gate_np(A, D, cl_starts, cl_ends, cl_keeps)
    MU = A @ WmT
    EPS = X - MU
    if record:
        energies[T] = 0.5 * float(np.sum(EPS * EPS))
    return A, MU, EPS, energies


# ---------------------------------------------------------------------------
# Numba implementation (loop-oriented but same arithmetic)
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    from numba import njit

    @njit(cache=True)
    def _act_nb(X, code):
        B, n = X.shape
        A = np.empty((B, n))
        D = np.empty((B, n))
        for b in range(B):
            for i in range(n):
                v = X[b, i]
                if code == 0:
                    A[b, i] = v
                    D[b, i] = 1.0
                elif code == 1:
                    if v > 1.0:
                        A[b, i] = 1.0
                        D[b, i] = 0.0
                    elif v < -1.0:
                        A[b, i] = -1.0
                        D[b, i] = 0.0
                    else:
                        A[b, i] = v
                        D[b, i] = 1.0
                elif code == 3:
                    if v >= 0.0:
                        A[b, i] = v
                        D[b, i] = 1.0
                    else:
                        A[b, i] = 0.0
                        D[b, i] = 0.0
                else:
                    t = np.tanh(v)
                    A[b, i] = t
                    D[b, i] = 1.0 - t * t
        return A, D

    @njit(cache=True)
    def _gate_nb(A, D, starts, ends, keeps):
        B = A.shape[0]
        for c in range(len(starts)):
            s, e, keep = starts[c], ends[c], keeps[c]
            size = e - s
            for b in range(B):
                seg = A[b, s:e].copy()
                srt = np.sort(seg)
                thr = srt[size - keep]
                greater = 0
                for i in range(size):
                    if seg[i] > thr:
                        greater += 1
                need_eq = keep - greater  # ties resolved by ascending index
                for i in range(size):
                    v = seg[i]
                    if v > thr:
                        continue
                    if v == thr and need_eq > 0:
                        need_eq -= 1
                        continue
                    A[b, s + i] = 0.0
                    D[b, s + i] = 0.0

    @njit(cache=True)
    def _phase_nb(X, Wm, WmT, act_code, gamma, T, cond_mask, cond_vals,
                  cl_starts, cl_ends, cl_keeps, record):
        B, n = X.shape
        n_rec = T + 1 if record else 0
        energies = np.zeros(n_rec)
        clustered = len(cl_starts) > 0
        for t in range(T):
            A, D = _act_nb(X, act_code)
            if clustered:
                _gate_nb(A, D, cl_starts, cl_ends, cl_keeps)
            MU = np.dot(A, WmT)
            e_acc = 0.0
            BK = np.dot(X - MU, Wm)  # backward term Σ_k eps_k Wm[k, i]
            for b in range(B):
                for i in range(n):
                    eps = X[b, i] - MU[b, i]
                    if record:
                        e_acc += eps * eps
                    X[b, i] += gamma * (-eps + D[b, i] * BK[b, i])
                    if cond_mask[b, i]:
                        X[b, i] = cond_vals[b, i]
            if record:
                energies[t] = 0.5 * e_acc
        A, D = _act_nb(X, act_code)
        if clustered:
            _gate_nb(A, D, cl_starts, cl_ends, cl_keeps)
        MU = np.dot(A, WmT)
        EPS = X - MU
        if record:
            energies[T] = 0.5 * np.sum(EPS * EPS)
        return A, MU, EPS, energies


def inference_phase(X, Wm, act_code, gamma, T, cond_mask=None, cond_vals=None,
                    clusters=None, record=False):
    """Run T synchronous inference steps on a batch of value-node rows.

    X is (B, n) float64 and is updated in place. Returns (A, MU, EPS,
    energies) recomputed fresh after the last step; energies has T+1
    entries (E_0 .. E_T) when record is true, else length 0.

    cond_mask/cond_vals: (B, n) conditioning pattern re-applied after every
    step (pass None for unconstrained inference). clusters: (starts, ends,
    keeps) int64 arrays for top-k firing.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    Wm = np.ascontiguousarray(Wm, dtype=np.float64)
    WmT = np.ascontiguousarray(Wm.T)
    B, n = X.shape
    if cond_mask is None:
        cond_mask = np.zeros((B, n), dtype=bool)
        cond_vals = np.zeros((B, n))
    else:
        cond_mask = np.ascontiguousarray(cond_mask, dtype=bool)
        cond_vals = np.ascontiguousarray(cond_vals, dtype=np.float64)
    if clusters is None:
        cl_starts = cl_ends = cl_keeps = _EMPTY_I64
    else:
        cl_starts, cl_ends, cl_keeps = (np.asarray(a, dtype=np.int64) for a in clusters)
    if BACKEND == "numba":
        A, MU, EPS, energies = _phase_nb(X, Wm, WmT, int(act_code), float(gamma),
                                         int(T), cond_mask, cond_vals,
                                         cl_starts, cl_ends, cl_keeps, bool(record))
    else:
        A, MU, EPS, energies = _phase_numpy(X, Wm, WmT, int(act_code), float(gamma),
                                            int(T), cond_mask, cond_vals,
                                            cl_starts, cl_ends, cl_keeps, bool(record))
    return X, A, MU, EPS, energies
