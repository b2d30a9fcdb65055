"""Fully connected baseline and its exact conversion into a Rank-R FNN.

Any vectorized hidden weight ``w`` of an FCFNN, reshaped to the input tensor
shape, has CP rank at most ``min_i prod_{d != i} p_d``.  The converter below
builds such a decomposition explicitly: pick the mode ``i*`` attaining the
minimum, walk the multi-indices of the other modes, and let component ``r``
carry the corresponding mode-``i*`` fiber times standard unit vectors.  Only
copies, zeros and ones are involved, so the reconstruction is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .model import ModelConfig, RankRModel, forward, softmax
from .tensor_core import ten, vec

__all__ = [
    "Fcfnn",
    "EquivalenceReport",
    "fcfnn_forward",
    "rank_upper_bound",
    "fcfnn_to_rankr",
    "verify_equivalence",
]


@dataclass
class Fcfnn:
    hidden_weights: np.ndarray  # (Q, input_dim), rows are vec(w^(q))
    output_weights: np.ndarray  # (Q, C)
    activation: str = "sigmoid"

    def __post_init__(self):
        self.hidden_weights = np.asarray(self.hidden_weights, dtype=np.float64)
        self.output_weights = np.asarray(self.output_weights, dtype=np.float64)
        if self.hidden_weights.ndim != 2 or self.output_weights.ndim != 2:
            raise ValueError("FCFNN weights must be matrices")
        if self.hidden_weights.shape[0] != self.output_weights.shape[0]:
            raise ValueError(
                f"hidden layer has {self.hidden_weights.shape[0]} neurons, "
                f"output weights expect {self.output_weights.shape[0]}"
            )
        if self.activation not in K.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.hidden_weights)) and np.all(np.isfinite(self.output_weights))):
            raise ValueError("FCFNN weights must be finite")

    @property
    def input_dim(self) -> int:
        return self.hidden_weights.shape[1]

    @property
    def hidden(self) -> int:
        return self.hidden_weights.shape[0]

    @property
    def classes(self) -> int:
        return self.output_weights.shape[1]

    @classmethod
    def random(cls, input_dim: int, hidden: int, classes: int, seed: int = 0, activation: str = "sigmoid"):
        rng = np.random.default_rng(seed)
        return cls(
            rng.uniform(-1, 1, (hidden, input_dim)),
            rng.uniform(-1, 1, (hidden, classes)),
            activation,
        )


def fcfnn_forward(x, f: Fcfnn, batch: bool | None = None) -> np.ndarray:
    """Softmax over ``g(W vec(x)) @ V``.

    ``x`` is one tensor, or a batch stacked along axis 0.  Pass ``batch=True``
    when a batch of one would otherwise be mistaken for a single sample.
    """
    x = np.asarray(x, dtype=np.float64)
    if batch is None:
        batch = x.size != f.input_dim
    if not batch and x.size == f.input_dim:
        flat, single = vec(x)[None], True
    elif batch and x.ndim >= 1 and x.shape[0] and x[0].size == f.input_dim:
        flat, single = np.stack([vec(xi) for xi in x]), False
    else:
        raise ValueError(f"input with {x.size} entries does not fit an FCFNN of input_dim {f.input_dim}")
    u = K.activate_np(flat @ f.hidden_weights.T, K.ACTIVATIONS[f.activation])
    p = softmax(u @ f.output_weights)
    return p[0] if single else p


def _minimizing_mode(shape: Sequence[int]) -> tuple[int, int]:
    prods = [math.prod(p for d, p in enumerate(shape) if d != i) for i in range(len(shape))]
    best = min(prods)
    return prods.index(best), best


def rank_upper_bound(shape: Sequence[int]) -> int:
    """``min_i prod_{d != i} p_d``: a rank at which every tensor of ``shape`` is exactly CP-representable."""
    shape = tuple(int(p) for p in shape)
    if len(shape) < 2:
        raise ValueError("the rank bound needs tensors of order >= 2")
    if any(p < 1 for p in shape):
        raise ValueError(f"extents must be positive, got {shape}")
    return _minimizing_mode(shape)[1]


def exact_cp_factors(t: np.ndarray) -> list[np.ndarray]:
    """Factors of an exact CP decomposition of ``t`` at rank :func:`rank_upper_bound`."""
    shape = t.shape
    mode, rank = _minimizing_mode(shape)
    rest = [d for d in range(len(shape)) if d != mode]
    multi = np.unravel_index(np.arange(rank), [shape[d] for d in rest], order="F")
    facs = [np.zeros((p, rank)) for p in shape]
    cols = np.arange(rank)
    for k, d in enumerate(rest):
        facs[d][multi[k], cols] = 1.0
    fibers = np.moveaxis(t, mode, 0).reshape(shape[mode], -1, order="F")
    facs[mode][:] = fibers
    return facs


def fcfnn_to_rankr(f: Fcfnn, shape: Sequence[int]) -> RankRModel:
    """Rank-R FNN computing the same function as ``f`` on tensors of ``shape``."""
    shape = tuple(int(p) for p in shape)
    if math.prod(shape) != f.input_dim:
        raise ValueError(f"shape {shape} has {math.prod(shape)} entries, FCFNN expects {f.input_dim}")
    rank = rank_upper_bound(shape)
    cfg = ModelConfig(shape, rank=rank, hidden=f.hidden, classes=f.classes, activation=f.activation)
    stacks = [np.empty((f.hidden, p, rank)) for p in shape]
    for q in range(f.hidden):
        for d, fac in enumerate(exact_cp_factors(ten(f.hidden_weights[q], shape))):
            stacks[d][q] = fac
    return RankRModel(cfg, tuple(stacks), f.output_weights.copy())


@dataclass(frozen=True)
class EquivalenceReport:
    max_abs_gap: float
    passed: bool
    trials: int


def verify_equivalence(
    f: Fcfnn, m: RankRModel, trials: int = 1000, seed: int = 0, threshold: float = 1e-10
) -> EquivalenceReport:
    """Largest probability gap between ``f`` and ``m`` over random inputs in ``[-1, 1]``."""
    shape = m.config.input_shape
    if math.prod(shape) != f.input_dim:
        raise ValueError("model and FCFNN disagree on the input size")
    if (m.config.hidden, m.config.classes) != (f.hidden, f.classes):
        raise ValueError("model and FCFNN disagree on hidden or output width")
    if trials < 0:
        raise ValueError("trials must be non-negative")
    if trials == 0:
        return EquivalenceReport(0.0, True, 0)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(trials, *shape))
    gap = float(np.max(np.abs(forward(x, m) - fcfnn_forward(x, f, batch=True))))
    return EquivalenceReport(gap, gap <= threshold, trials)
