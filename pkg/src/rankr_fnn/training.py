"""Negative log-likelihood, its gradients and the alternating trainer."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np

from . import _kernels as K
from .data import LabeledPatchSet
from .model import ModelConfig, RankRModel, _check_mode, _check_neuron, _preactivations, softmax

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "RunRecord",
    "TrainingDiverged",
    "init_weights",
    "nll",
    "grad_factor",
    "grad_output",
    "train",
]

PROB_FLOOR = 1e-300

Observer = Callable[[int, float, float, Optional[float]], None]


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    max_epochs: int = 50
    tol: float = 1e-6
    mode: Literal["alternating", "joint"] = "alternating"
    batch: Literal["full"] = "full"
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not self.tol >= 0:
            raise ValueError(f"tol must be non-negative, got {self.tol}")
        if self.mode not in ("alternating", "joint"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.batch != "full":
            raise ValueError("only full-batch training is supported")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_nll: float
    train_acc: float
    test_acc: Optional[float] = None


@dataclass
class RunRecord:
    epochs: list[EpochRecord] = field(default_factory=list)
    model: Optional[RankRModel] = None
    elapsed: float = 0.0

    @property
    def final(self) -> EpochRecord:
        return self.epochs[-1]

    def at(self, epoch: int) -> EpochRecord:
        """Record for ``epoch``, or the last one if training stopped earlier."""
        return self.epochs[min(epoch, len(self.epochs)) - 1]


def init_weights(cfg: ModelConfig) -> RankRModel:
    """Glorot-style uniform init: factors in +-sqrt(6/(I_d+R)), V in +-sqrt(6/(Q+C))."""
    rng = np.random.default_rng(cfg.seed)
    facs = []
    for p in cfg.input_shape:
        a = math.sqrt(6.0 / (p + cfg.rank))
        facs.append(rng.uniform(-a, a, size=(cfg.hidden, p, cfg.rank)))
    b = math.sqrt(6.0 / (cfg.hidden + cfg.classes))
    v = rng.uniform(-b, b, size=(cfg.hidden, cfg.classes))
    return RankRModel(cfg, tuple(facs), v)


# ---------------------------------------------------------------------------
# objective and gradients


def _check_data(m: RankRModel, data: LabeledPatchSet) -> None:
    if data.sample_shape != m.config.input_shape:
        raise ValueError(f"samples of shape {data.sample_shape} do not match model input {m.config.input_shape}")
    if data.n_classes != m.config.classes:
        raise ValueError(f"data has {data.n_classes} classes, model has {m.config.classes}")


def _nll_from_probs(p: np.ndarray, t: np.ndarray) -> float:
    return float(-np.sum(t * np.log(np.maximum(p, PROB_FLOOR))))


def nll(m: RankRModel, data: LabeledPatchSet) -> float:
    """``-sum_i sum_k t_ik log p^k(X_i)`` over the whole set."""
    _check_data(m, data)
    if len(data) == 0:
        return 0.0
    s = _preactivations(data.patches, m)
    return _nll_from_probs(_probs(s, m), data.targets)


def _probs(s: np.ndarray, m: RankRModel) -> np.ndarray:
    code = K.ACTIVATIONS[m.config.activation]
    return softmax(K.activate_np(s, code) @ m.output_weights)


def _hidden_delta(s: np.ndarray, p: np.ndarray, t: np.ndarray, m: RankRModel) -> np.ndarray:
    """``dL/ds``: ``g'(s) * ((p - t) @ V^T)``, shape ``(N, Q)``."""
    code = K.ACTIVATIONS[m.config.activation]
    return K.activate_grad_np(s, code) * ((p - t) @ m.output_weights.T)


def grad_factor(m: RankRModel, data: LabeledPatchSet, q: int, mode: int) -> np.ndarray:
    """``dL/dW_mode^(q)`` with every other parameter held fixed, shape ``(I_d, R)``.

    ``s_q`` is linear in ``W_d^(q)`` with coefficient matrix ``Z_{!=d}^(q)``,
    so the gradient is ``sum_i delta_iq * Z_{!=d}^(q)(X_i)``.
    """
    cfg = m.config
    _check_data(m, data)
    _check_mode(mode, cfg)
    _check_neuron(q, cfg)
    if len(data) == 0:
        return np.zeros((cfg.input_shape[mode], cfg.rank))
    s = _preactivations(data.patches, m)
    delta = _hidden_delta(s, _probs(s, m), data.targets, m)[:, q]
    xd = K.unfold_batch(data.patches, mode)
    z = K.z_mode(xd, K.column_index_table(cfg.input_shape, mode), m.factors, q, mode)
    return np.tensordot(delta, z, axes=1)


def grad_output(m: RankRModel, data: LabeledPatchSet) -> np.ndarray:
    """``dL/dV = sum_i u_i (p_i - t_i)^T``, shape ``(Q, C)``."""
    _check_data(m, data)
    if len(data) == 0:
        return np.zeros_like(m.output_weights)
    s = _preactivations(data.patches, m)
    u = K.activate_np(s, K.ACTIVATIONS[m.config.activation])
    return u.T @ (_probs(s, m) - data.targets)


def _joint_step(m: RankRModel, xds, idxs, t: np.ndarray, lr: float) -> None:
    cfg = m.config
    s = _preactivations_from(xds, idxs, m)
    p = _probs(s, m)
    delta = _hidden_delta(s, p, t, m)
    grads = []
    for d in range(cfg.order):
        g = np.empty_like(m.factors[d])
        for q in range(cfg.hidden):
            z = K.z_mode(xds[d], idxs[d], m.factors, q, d)
            g[q] = np.tensordot(delta[:, q], z, axes=1)
        grads.append(g)
    u = K.activate_np(s, K.ACTIVATIONS[cfg.activation])
    gv = u.T @ (p - t)
    for f, g in zip(m.factors, grads):
        f -= lr * g
    m.output_weights -= lr * gv


def _preactivations_from(xds, idxs, m: RankRModel) -> np.ndarray:
    last = m.config.order - 1
    return K.preactivations(xds[last], idxs[last], m.factors, last)


def _accuracy(p: np.ndarray, labels: np.ndarray) -> float:
    if labels.size == 0:
        return float("nan")
    return float(np.mean(np.argmax(p, axis=1) == labels))


def evaluate(m: RankRModel, data: LabeledPatchSet) -> tuple[float, float]:
    """``(nll, accuracy)`` of ``m`` on ``data``."""
    _check_data(m, data)
    if len(data) == 0:
        return 0.0, float("nan")
    p = _probs(_preactivations(data.patches, m), m)
    return _nll_from_probs(p, data.targets), _accuracy(p, data.labels)


def train(
    m: RankRModel,
    train_data: LabeledPatchSet,
    cfg: TrainConfig,
    observer: Optional[Observer] = None,
    test_data: Optional[LabeledPatchSet] = None,
) -> RunRecord:
    """Fit ``m`` by full-batch gradient descent; ``m`` itself is left untouched.

    In ``alternating`` mode one epoch sweeps the modes ``d = 1..D``; inside
    each it visits the neurons in order, rebuilds ``Z_{!=d}^(q)`` and takes a
    step on ``W_d^(q)`` alone, and it finishes with a step on ``V``.  In
    ``joint`` mode every parameter moves at once from one gradient evaluation.

    Stops after ``cfg.max_epochs`` or once the loss changes by less than
    ``cfg.tol`` between consecutive epochs.
    """
    _check_data(m, train_data)
    if test_data is not None:
        _check_data(m, test_data)
    start = time.perf_counter()
    work = m.copy()
    mcfg = work.config
    x = train_data.patches
    t = train_data.targets
    xds = tuple(K.unfold_batch(x, d) for d in range(mcfg.order))
    idxs = tuple(K.column_index_table(mcfg.input_shape, d) for d in range(mcfg.order))
    code = K.ACTIVATIONS[mcfg.activation]

    record = RunRecord()
    s = _preactivations_from(xds, idxs, work)
    prev = None
    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.learning_rate > 0:
            if cfg.mode == "alternating":
                K.alternating_epoch(xds, idxs, work.factors, work.output_weights, t, s, cfg.learning_rate, code)
            else:
                _joint_step(work, xds, idxs, t, cfg.learning_rate)
        s = _preactivations_from(xds, idxs, work)
        p = _probs(s, work)
        loss = _nll_from_probs(p, t)
        if not math.isfinite(loss) or not all(np.all(np.isfinite(f)) for f in work.factors):
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch}")
        acc = _accuracy(p, train_data.labels)
        test_acc = evaluate(work, test_data)[1] if test_data is not None and len(test_data) else None
        record.epochs.append(EpochRecord(epoch, loss, acc, test_acc))
        if observer is not None:
            observer(epoch, loss, acc, test_acc)
        log.debug("epoch %d nll=%.6g acc=%.4f", epoch, loss, acc)
        if prev is not None and abs(prev - loss) < cfg.tol:
            break
        prev = loss
    record.model = work
    record.elapsed = time.perf_counter() - start
    return record
