"""Dense tensor algebra: vectorization, unfolding, inner product, Khatri-Rao, CP.

Tensors are plain ``numpy.ndarray`` objects indexed naturally, i.e. element
``(i_1, ..., i_D)`` (1-based) lives at ``t[i_1 - 1, ..., i_D - 1]``.  The
linear orderings used by :func:`vec` and :func:`matricize` are mode-1 fastest,
which is what Fortran-order reshapes give us for free.

The only place where 1-based index arithmetic appears is :func:`vec_index` and
:func:`unfold_index`; everything else works on 0-based numpy axes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

__all__ = [
    "CpFactors",
    "vec",
    "ten",
    "matricize",
    "inner",
    "khatri_rao",
    "khatri_rao_chain",
    "cp_reconstruct",
    "vec_index",
    "unfold_index",
]


def vec_index(index: Sequence[int], shape: Sequence[int]) -> int:
    """1-based position of the 1-based multi-index ``index`` inside ``vec``."""
    if len(index) != len(shape):
        raise ValueError("index and shape must have the same length")
    j = 1
    stride = 1
    for i, p in zip(index, shape):
        if not 1 <= i <= p:
            raise IndexError(f"index {tuple(index)} out of range for shape {tuple(shape)}")
        j += (i - 1) * stride
        stride *= p
    return j


def unfold_index(index: Sequence[int], shape: Sequence[int], mode: int) -> tuple[int, int]:
    """1-based ``(row, column)`` of element ``index`` in the mode-``mode`` unfolding.

    ``mode`` is 1-based here, like ``index``.
    """
    if not 1 <= mode <= len(shape):
        raise ValueError(f"mode {mode} out of range for a {len(shape)}-order tensor")
    j = 1
    stride = 1
    for d, (i, p) in enumerate(zip(index, shape), start=1):
        if d == mode:
            continue
        j += (i - 1) * stride
        stride *= p
    return index[mode - 1], j


def vec(t: np.ndarray) -> np.ndarray:
    """Stack the entries of ``t`` into a vector, mode 1 varying fastest."""
    return np.asarray(t, dtype=np.float64).ravel(order="F")


def ten(v: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`vec` for the given ``shape``."""
    v = np.asarray(v, dtype=np.float64)
    shape = tuple(int(p) for p in shape)
    if v.ndim != 1 or v.size != int(np.prod(shape)):
        raise ValueError(f"cannot tensorize a vector of length {v.size} into shape {shape}")
    return v.reshape(shape, order="F")


def matricize(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding (0-based ``mode``), columns are the mode fibers.

    Returns a ``p_mode x prod(other extents)`` matrix whose column index runs
    over the remaining modes with the lowest mode varying fastest.
    """
    t = np.asarray(t, dtype=np.float64)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for a {t.ndim}-order tensor")
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1, order="F")


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """Tensor inner product: sum of elementwise products."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(vec(a), vec(b)))


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product.

    Column ``r`` of the result is ``kron(a[:, r], b[:, r])``; rows of ``b``
    vary fastest.  Chaining as ``W_D (.) ... (.) W_1`` therefore yields rows
    in :func:`vec` order.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column count mismatch: {a.shape[1]} vs {b.shape[1]}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def khatri_rao_chain(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Left-to-right Khatri-Rao product of ``matrices`` (first one slowest)."""
    if len(matrices) == 0:
        raise ValueError("empty Khatri-Rao chain")
    return reduce(khatri_rao, matrices)


@dataclass(frozen=True)
class CpFactors:
    """Factor matrices ``[B_1, ..., B_D]`` of a rank-R CP decomposition.

    Factors are treated as raw parameters: column scaling is never normalized,
    so two equal tensors can have different factors.
    """

    factors: tuple[np.ndarray, ...]

    def __init__(self, factors: Sequence[np.ndarray]):
        mats = tuple(np.asarray(f, dtype=np.float64) for f in factors)
        if not mats:
            raise ValueError("CpFactors needs at least one factor matrix")
        if any(m.ndim != 2 for m in mats):
            raise ValueError("every factor must be a matrix")
        ranks = {m.shape[1] for m in mats}
        if len(ranks) != 1 or 0 in ranks:
            raise ValueError(f"factors must share a positive column count, got {sorted(ranks)}")
        object.__setattr__(self, "factors", mats)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.factors)

    @property
    def order(self) -> int:
        return len(self.factors)

    def __len__(self) -> int:
        return len(self.factors)

    def __getitem__(self, d: int) -> np.ndarray:
        return self.factors[d]


def cp_reconstruct(f: CpFactors | Sequence[np.ndarray]) -> np.ndarray:
    """Dense tensor ``sum_r b_1^(r) o ... o b_D^(r)``."""
    if not isinstance(f, CpFactors):
        f = CpFactors(f)
    out = np.zeros(f.shape)
    # outer products directly, independent of the Khatri-Rao path
    for r in range(f.rank):
        out += reduce(np.multiply.outer, [m[:, r] for m in f.factors])
    return out
