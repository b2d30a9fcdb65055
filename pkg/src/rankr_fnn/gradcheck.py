"""Central finite-difference checks of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import LabeledPatchSet
from .model import ModelConfig, RankRModel
from .training import grad_factor, grad_output, init_weights, nll

__all__ = [
    "numeric_grad_factor",
    "numeric_grad_output",
    "relative_error",
    "random_case",
    "GradcheckReport",
    "run_gradcheck",
]


def numeric_grad_factor(m: RankRModel, data: LabeledPatchSet, q: int, mode: int, h: float = 1e-5) -> np.ndarray:
    w = m.factors[mode][q]
    out = np.empty_like(w)
    for idx in np.ndindex(w.shape):
        keep = w[idx]
        w[idx] = keep + h
        up = nll(m, data)
        w[idx] = keep - h
        down = nll(m, data)
        w[idx] = keep
        out[idx] = (up - down) / (2 * h)
    return out


def numeric_grad_output(m: RankRModel, data: LabeledPatchSet, h: float = 1e-5) -> np.ndarray:
    v = m.output_weights
    out = np.empty_like(v)
    for idx in np.ndindex(v.shape):
        keep = v[idx]
        v[idx] = keep + h
        up = nll(m, data)
        v[idx] = keep - h
        down = nll(m, data)
        v[idx] = keep
        out[idx] = (up - down) / (2 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest entrywise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def random_case(
    rng: np.random.Generator,
    shape: Optional[Sequence[int]] = None,
    rank: Optional[int] = None,
    hidden: Optional[int] = None,
    classes: Optional[int] = None,
    samples: Optional[int] = None,
    activation: Optional[str] = None,
) -> tuple[RankRModel, LabeledPatchSet]:
    """Small random model and data set; unspecified sizes are drawn at random."""
    if shape is None:
        shape = tuple(int(p) for p in rng.integers(2, 5, size=int(rng.integers(2, 4))))
    rank = int(rng.integers(1, 4)) if rank is None else rank
    hidden = int(rng.integers(1, 4)) if hidden is None else hidden
    classes = int(rng.integers(2, 5)) if classes is None else classes
    samples = int(rng.integers(2, 6)) if samples is None else samples
    activation = str(rng.choice(["sigmoid", "tanh"])) if activation is None else activation
    cfg = ModelConfig(tuple(shape), rank, hidden, classes, activation, int(rng.integers(0, 2**31)))
    m = init_weights(cfg)
    m.output_weights[:] = rng.uniform(-1, 1, m.output_weights.shape)
    x = rng.uniform(-1, 1, (samples, *cfg.input_shape))
    labels = rng.integers(0, classes, samples)
    return m, LabeledPatchSet(x, labels, classes)


@dataclass(frozen=True)
class GradcheckReport:
    trials: int
    max_factor_error: float
    max_output_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_factor_error <= self.tol and self.max_output_error <= self.tol


def run_gradcheck(
    trials: int = 20,
    seed: int = 0,
    h: float = 1e-5,
    tol: float = 1e-4,
    **case_kwargs,
) -> GradcheckReport:
    """Compare every factor gradient and the output gradient with finite differences."""
    rng = np.random.default_rng(seed)
    worst_f = worst_v = 0.0
    for _ in range(trials):
        m, data = random_case(rng, **case_kwargs)
        for d in range(m.config.order):
            for q in range(m.config.hidden):
                err = relative_error(grad_factor(m, data, q, d), numeric_grad_factor(m, data, q, d, h))
                worst_f = max(worst_f, err)
        worst_v = max(worst_v, relative_error(grad_output(m, data), numeric_grad_output(m, data, h)))
    return GradcheckReport(trials, worst_f, worst_v, tol)
