"""Hot loops of the factorized forward pass and of the alternating trainer.

Every kernel exists twice: a numba ``@njit`` version and a plain numpy
version.  The numba path is used when numba imports and the environment
variable ``RANKR_FNN_NUMBA`` is not set to ``0``.  Both paths are kept in
lock step by ``tests/test_kernels.py``; results agree to rounding, and each
path on its own is bit-deterministic.

Data layout shared by both paths:

* ``factors`` is a tuple with one ``(Q, I_d, R)`` array per mode.
* ``xd`` is a batch unfolded along mode ``d``: ``(N, I_d, P_d)`` where the
  column index runs over the other modes, lowest mode fastest.
* ``idx`` is the ``(P_d, D)`` table mapping those columns back to 0-based
  multi-indices (the mode-``d`` entry is unused).
"""
from __future__ import annotations

import os

import numpy as np

from .tensor_core import khatri_rao_chain

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("RANKR_FNN_NUMBA", "1").strip() not in ("0", "false", "no")

SIGMOID, TANH, RELU = 0, 1, 2
ACTIVATIONS = {"sigmoid": SIGMOID, "tanh": TANH, "relu": RELU}


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# data preparation (numpy only, done once per data set)


def unfold_batch(x: np.ndarray, mode: int) -> np.ndarray:
    """Unfold every sample of ``x`` (``(N, I_1, ..., I_D)``) along ``mode``."""
    n = x.shape[0]
    rest = [a for a in range(1, x.ndim) if a != mode + 1]
    # C-order reshape with the remaining axes reversed == lowest mode fastest
    moved = x.transpose([0, mode + 1] + rest[::-1])
    return np.ascontiguousarray(moved.reshape(n, x.shape[mode + 1], -1), dtype=np.float64)


def column_index_table(shape: tuple[int, ...], mode: int) -> np.ndarray:
    rest = [p for d, p in enumerate(shape) if d != mode]
    cols = int(np.prod(rest)) if rest else 1
    idx = np.zeros((cols, len(shape)), dtype=np.int64)
    multi = np.unravel_index(np.arange(cols), rest, order="F")
    k = 0
    for d in range(len(shape)):
        if d != mode:
            idx[:, d] = multi[k]
            k += 1
    return idx


# ---------------------------------------------------------------------------
# numpy reference path


def activate_np(s: np.ndarray, code: int) -> np.ndarray:
    if code == SIGMOID:
        e = np.exp(-np.abs(s))
        return np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    if code == TANH:
        return np.tanh(s)
    return np.maximum(s, 0.0)


def activate_grad_np(s: np.ndarray, code: int) -> np.ndarray:
    if code == SIGMOID:
        g = activate_np(s, SIGMOID)
        return g * (1.0 - g)
    if code == TANH:
        return 1.0 - np.tanh(s) ** 2
    # subgradient 0 at the kink
    return (s > 0).astype(np.float64)


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def kr_excluding_np(factors, q: int, mode: int) -> np.ndarray:
    """``W_D (.) ... (.) W_{d+1} (.) W_{d-1} (.) ... (.) W_1`` for neuron ``q``."""
    mats = [factors[d][q] for d in range(len(factors) - 1, -1, -1) if d != mode]
    return khatri_rao_chain(mats)


def z_mode_np(xd, idx, factors, q, mode):
    return xd @ kr_excluding_np(factors, q, mode)


def preactivations_np(xd, idx, factors, mode):
    n = xd.shape[0]
    nq = factors[0].shape[0]
    s = np.empty((n, nq))
    for q in range(nq):
        z = z_mode_np(xd, idx, factors, q, mode)
        s[:, q] = np.einsum("nir,ir->n", z, factors[mode][q])
    return s


def alternating_epoch_np(xds, idxs, factors, v, targets, s, lr, code):
    """One full alternating sweep; updates ``factors``, ``v`` and ``s`` in place."""
    order = len(factors)
    nq = v.shape[0]
    for d in range(order):
        for q in range(nq):
            z = z_mode_np(xds[d], idxs[d], factors, q, d)
            u = activate_np(s, code)
            err = softmax_np(u @ v) - targets
            delta = activate_grad_np(s[:, q], code) * (err @ v[q])
            factors[d][q] -= lr * np.tensordot(delta, z, axes=1)
            s[:, q] = np.einsum("nir,ir->n", z, factors[d][q])
    u = activate_np(s, code)
    err = softmax_np(u @ v) - targets
    v -= lr * (u.T @ err)


# ---------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:
    njit = numba.njit(cache=True, nogil=True)

    @njit
    def _act_nb(x, code):
        if code == 0:
            if x >= 0.0:
                return 1.0 / (1.0 + np.exp(-x))
            e = np.exp(x)
            return e / (1.0 + e)
        if code == 1:
            return np.tanh(x)
        return x if x > 0.0 else 0.0

    @njit
    def _act_grad_nb(x, code):
        if code == 0:
            g = _act_nb(x, 0)
            return g * (1.0 - g)
        if code == 1:
            t = np.tanh(x)
            return 1.0 - t * t
        return 1.0 if x > 0.0 else 0.0

    @njit
    def khatri_rao_nb(a, b):
        m, r = a.shape
        n = b.shape[0]
        out = np.empty((m * n, r))
        for i in range(m):
            for j in range(n):
                for k in range(r):
                    out[i * n + j, k] = a[i, k] * b[j, k]
        return out

    @njit
    def _kr_rows_nb(idx, factors, q, mode):
        cols = idx.shape[0]
        rank = factors[0].shape[2]
        kr = np.ones((cols, rank))
        for d in range(len(factors)):
            if d == mode:
                continue
            w = factors[d]
            for j in range(cols):
                i = idx[j, d]
                for r in range(rank):
                    kr[j, r] *= w[q, i, r]
        return kr

    @njit
    def z_mode_nb(xdt, idx, factors, q, mode):
        # xdt is (rows, cols, n) with samples fastest; z comes back as (rows, rank, n)
        rows, cols, n = xdt.shape
        rank = factors[0].shape[2]
        kr = _kr_rows_nb(idx, factors, q, mode)
        z = np.zeros((rows, rank, n))
        for i in range(rows):
            for j in range(cols):
                for r in range(rank):
                    c = kr[j, r]
                    for s in range(n):
                        z[i, r, s] += xdt[i, j, s] * c
        return z

    @njit
    def _trace_nb(z, w):
        # s_n = trace(w^T z_n)
        rows, rank, n = z.shape
        out = np.zeros(n)
        for i in range(rows):
            for r in range(rank):
                c = w[i, r]
                for s in range(n):
                    out[s] += c * z[i, r, s]
        return out

    @njit
    def preactivations_nb(xdt, idx, factors, mode):
        n = xdt.shape[2]
        nq = factors[0].shape[0]
        s = np.empty((n, nq))
        for q in range(nq):
            z = z_mode_nb(xdt, idx, factors, q, mode)
            s[:, q] = _trace_nb(z, factors[mode][q])
        return s

    @njit
    def _output_error_nb(s, v, targets, code):
        # returns (u, p - t)
        n, nq = s.shape
        nc = v.shape[1]
        u = np.empty((n, nq))
        for i in range(n):
            for q in range(nq):
                u[i, q] = _act_nb(s[i, q], code)
        err = np.empty((n, nc))
        for i in range(n):
            mx = -np.inf
            for k in range(nc):
                a = 0.0
                for q in range(nq):
                    a += u[i, q] * v[q, k]
                err[i, k] = a
                if a > mx:
                    mx = a
            tot = 0.0
            for k in range(nc):
                e = np.exp(err[i, k] - mx)
                err[i, k] = e
                tot += e
            for k in range(nc):
                err[i, k] = err[i, k] / tot - targets[i, k]
        return u, err

    @njit
    def alternating_epoch_nb(xds, idxs, factors, v, targets, s, lr, code):
        order = len(factors)
        n, nq = s.shape
        nc = v.shape[1]
        for d in range(order):
            for q in range(nq):
                z = z_mode_nb(xds[d], idxs[d], factors, q, d)
                _, err = _output_error_nb(s, v, targets, code)
                rows, rank = z.shape[0], z.shape[1]
                delta = np.empty(n)
                for i in range(n):
                    back = 0.0
                    for k in range(nc):
                        back += err[i, k] * v[q, k]
                    delta[i] = _act_grad_nb(s[i, q], code) * back
                grad = np.zeros((rows, rank))
                for a in range(rows):
                    for r in range(rank):
                        acc = 0.0
                        for i in range(n):
                            acc += delta[i] * z[a, r, i]
                        grad[a, r] = acc
                w = factors[d]
                for a in range(rows):
                    for r in range(rank):
                        w[q, a, r] -= lr * grad[a, r]
                s[:, q] = _trace_nb(z, w[q])
        u, err = _output_error_nb(s, v, targets, code)
        gv = np.zeros((nq, nc))
        for i in range(n):
            for q in range(nq):
                for k in range(nc):
                    gv[q, k] += u[i, q] * err[i, k]
        for q in range(nq):
            for k in range(nc):
                v[q, k] -= lr * gv[q, k]


# ---------------------------------------------------------------------------
# dispatch


def _as_tuple(seq):
    return tuple(np.ascontiguousarray(a) for a in seq)


def _samples_last(xd):
    return np.ascontiguousarray(np.moveaxis(xd, 0, -1))


def z_mode(xd, idx, factors, q, mode):
    if USE_NUMBA:
        z = z_mode_nb(_samples_last(xd), idx, _as_tuple(factors), q, mode)
        return np.moveaxis(z, -1, 0)
    return z_mode_np(xd, idx, factors, q, mode)


def preactivations(xd, idx, factors, mode):
    if USE_NUMBA:
        return preactivations_nb(_samples_last(xd), idx, _as_tuple(factors), mode)
    return preactivations_np(xd, idx, factors, mode)


def alternating_epoch(xds, idxs, factors, v, targets, s, lr, code):
    """Run one sweep in place. ``factors`` must be a tuple of C-contiguous arrays."""
    if USE_NUMBA:
        alternating_epoch_nb(tuple(_samples_last(x) for x in xds), tuple(idxs), factors, v, targets, s, float(lr), code)
    else:
        alternating_epoch_np(xds, idxs, factors, v, targets, s, lr, code)
