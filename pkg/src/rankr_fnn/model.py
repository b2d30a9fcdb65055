"""Rank-R FNN: two-layer classifier whose input weights are rank-R CP tensors.

Hidden neuron ``q`` computes ``u_q = g(<W^(q), X>)`` with
``W^(q) = [[W_1^(q), ..., W_D^(q)]]``; the output layer is a softmax over
``u @ V``.  The inner product is never formed densely on the main path.  For
any mode ``d`` it equals ``trace(W_d^T Z_{!=d})`` where ``Z_{!=d}`` is the
unfolded input multiplied by the Khatri-Rao product of the other factors.

Mode, neuron and class indices are 0-based throughout the Python API.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from . import _kernels as K
from .tensor_core import CpFactors, cp_reconstruct, vec

__all__ = [
    "ModelConfig",
    "RankRModel",
    "z_excluding",
    "hidden_preactivation",
    "forward",
    "dense_forward",
    "predict",
    "param_count",
    "softmax",
]


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple[int, ...]
    rank: int = 1
    hidden: int = 75
    classes: int = 2
    activation: str = "sigmoid"
    seed: int = 0

    def __post_init__(self):
        shape = tuple(int(p) for p in self.input_shape)
        object.__setattr__(self, "input_shape", shape)
        if len(shape) < 2:
            raise ValueError("Rank-R FNN needs tensor inputs of order >= 2; use an FCFNN for vectors")
        if any(p < 1 for p in shape):
            raise ValueError(f"input extents must be positive, got {shape}")
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")
        if self.activation not in K.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(K.ACTIVATIONS)}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def order(self) -> int:
        return len(self.input_shape)


@dataclass
class RankRModel:
    """Model parameters.

    ``factors[d]`` has shape ``(Q, I_d, R)`` and stacks ``W_d^(q)`` over the
    hidden neurons; ``output_weights`` is ``V`` with shape ``(Q, C)``.
    """

    config: ModelConfig
    factors: tuple[np.ndarray, ...]
    output_weights: np.ndarray

    def __post_init__(self):
        cfg = self.config
        facs = tuple(np.ascontiguousarray(f, dtype=np.float64) for f in self.factors)
        if len(facs) != cfg.order:
            raise ValueError(f"expected {cfg.order} factor stacks, got {len(facs)}")
        for d, f in enumerate(facs):
            want = (cfg.hidden, cfg.input_shape[d], cfg.rank)
            if f.shape != want:
                raise ValueError(f"factor stack {d} has shape {f.shape}, expected {want}")
        v = np.ascontiguousarray(self.output_weights, dtype=np.float64)
        if v.shape != (cfg.hidden, cfg.classes):
            raise ValueError(f"output weights have shape {v.shape}, expected {(cfg.hidden, cfg.classes)}")
        self.factors = facs
        self.output_weights = v

    @property
    def hidden_weights(self) -> list[CpFactors]:
        return [self.neuron(q) for q in range(self.config.hidden)]

    def neuron(self, q: int) -> CpFactors:
        return CpFactors([f[q] for f in self.factors])

    @property
    def n_params(self) -> int:
        return sum(f.size for f in self.factors) + self.output_weights.size

    def copy(self) -> "RankRModel":
        return RankRModel(self.config, tuple(f.copy() for f in self.factors), self.output_weights.copy())

    def dense_weights(self) -> np.ndarray:
        """``(Q, prod I_d)`` matrix of vectorized hidden weight tensors."""
        return np.stack([vec(cp_reconstruct(self.neuron(q))) for q in range(self.config.hidden)])

    def __eq__(self, other):
        if not isinstance(other, RankRModel):
            return NotImplemented
        return (
            self.config == other.config
            and all(np.array_equal(a, b) for a, b in zip(self.factors, other.factors))
            and np.array_equal(self.output_weights, other.output_weights)
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    return K.softmax_np(np.asarray(logits, dtype=np.float64))


def _as_batch(x, cfg: ModelConfig) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    shape = cfg.input_shape
    if x.shape == shape:
        return x[None], True
    if x.ndim == len(shape) + 1 and x.shape[1:] == shape:
        return x, False
    raise ValueError(f"input of shape {x.shape} does not match model input shape {shape}")


def _check_mode(mode: int, cfg: ModelConfig) -> None:
    if not 0 <= mode < cfg.order:
        raise ValueError(f"mode {mode} out of range for order-{cfg.order} inputs")


def _check_neuron(q: int, cfg: ModelConfig) -> None:
    if not 0 <= q < cfg.hidden:
        raise ValueError(f"neuron {q} out of range for {cfg.hidden} hidden neurons")


def z_excluding(x, q: int, mode: int, m: RankRModel) -> np.ndarray:
    """``Z_{!=d}^(q)``: input unfolded along ``mode`` times the other factors' Khatri-Rao.

    Returns ``(I_d, R)`` for a single sample or ``(N, I_d, R)`` for a batch.
    """
    cfg = m.config
    _check_mode(mode, cfg)
    _check_neuron(q, cfg)
    xb, single = _as_batch(x, cfg)
    xd = K.unfold_batch(xb, mode)
    z = K.z_mode(xd, K.column_index_table(cfg.input_shape, mode), m.factors, q, mode)
    return z[0] if single else z


def hidden_preactivation(x, q: int, mode: int, m: RankRModel):
    """``s_q = trace(W_d^T Z_{!=d})``, i.e. ``<W^(q), X>``, evaluated through ``mode``."""
    z = z_excluding(x, q, mode, m)
    return np.einsum("...ir,ir->...", z, m.factors[mode][q])


def _preactivations(xb: np.ndarray, m: RankRModel, mode: int | None = None) -> np.ndarray:
    cfg = m.config
    if mode is None:
        mode = cfg.order - 1
    xd = K.unfold_batch(xb, mode)
    return K.preactivations(xd, K.column_index_table(cfg.input_shape, mode), m.factors, mode)


def _check_finite(xb: np.ndarray) -> None:
    if not np.all(np.isfinite(xb)):
        raise ValueError("input contains non-finite entries")


def forward(x, m: RankRModel, mode: int | None = None) -> np.ndarray:
    """Class probabilities for one sample ``(C,)`` or a batch ``(N, C)``.

    The last mode is used for the factorized evaluation unless ``mode`` says
    otherwise; the result does not depend on that choice beyond rounding.
    """
    cfg = m.config
    xb, single = _as_batch(x, cfg)
    _check_finite(xb)
    if mode is not None:
        _check_mode(mode, cfg)
    s = _preactivations(xb, m, mode)
    p = softmax(K.activate_np(s, K.ACTIVATIONS[cfg.activation]) @ m.output_weights)
    return p[0] if single else p


def dense_forward(x, m: RankRModel) -> np.ndarray:
    """Reference forward pass that densifies every ``W^(q)`` first."""
    cfg = m.config
    xb, single = _as_batch(x, cfg)
    _check_finite(xb)
    flat = np.stack([vec(xi) for xi in xb])
    s = flat @ m.dense_weights().T
    p = softmax(K.activate_np(s, K.ACTIVATIONS[cfg.activation]) @ m.output_weights)
    return p[0] if single else p


def predict(x, m: RankRModel):
    """Most probable class; ties go to the smallest index (``argmax`` semantics)."""
    return np.argmax(forward(x, m), axis=-1)


def param_count(cfg: ModelConfig, family: Literal["rank_r", "fcfnn"] = "rank_r") -> int:
    q, c = cfg.hidden, cfg.classes
    if family == "rank_r":
        return cfg.rank * q * sum(cfg.input_shape) + q * c
    if family == "fcfnn":
        return q * math.prod(cfg.input_shape) + q * c
    raise ValueError(f"unknown model family {family!r}")


def zeros_like_config(cfg: ModelConfig) -> RankRModel:
    facs = tuple(np.zeros((cfg.hidden, p, cfg.rank)) for p in cfg.input_shape)
    return RankRModel(cfg, facs, np.zeros((cfg.hidden, cfg.classes)))


def from_neurons(cfg: ModelConfig, neurons: Sequence[CpFactors], output_weights) -> RankRModel:
    """Build a model from per-neuron CP factors."""
    if len(neurons) != cfg.hidden:
        raise ValueError(f"expected {cfg.hidden} neurons, got {len(neurons)}")
    facs = tuple(np.stack([n.factors[d] for n in neurons]) for d in range(cfg.order))
    return RankRModel(cfg, facs, output_weights)
