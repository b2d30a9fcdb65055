"""Seeded multi-run experiments, aggregate tables and model comparisons.

All output is CSV.  Schemas:

``raw.csv``        rank, run, epoch, train_nll, train_acc, test_acc
``aggregate.csv``  rank, checkpoint, mean_acc, std_acc, n_ok, n_failed, accuracies
``compare.csv``    rank, checkpoint, p_welch, p_mwu, reject_5pct
``params.csv``     dataset, input_shape, classes, family, rank, params, ratio_to_rank1

Floats are written with ``repr`` so every value reads back bit-exactly.
The high-parameter baseline is a fully connected FNN, not a CNN.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .data import LabeledPatchSet, add_noise, extract_patches, load_cube, load_patch_set, split_per_class, synth
from .model import ModelConfig, param_count
from .stats import mann_whitney_u, welch_t
from .training import TrainConfig, TrainingDiverged, init_weights, train

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentSpec",
    "AggregateRow",
    "AggregateResult",
    "ComparisonRow",
    "DATASET_CONFIGS",
    "load_dataset",
    "run_experiment",
    "compare_models",
    "param_table",
    "write_param_table",
    "write_comparison",
    "read_aggregate",
]

RAW_COLUMNS = ("rank", "run", "epoch", "train_nll", "train_acc", "test_acc")
AGG_COLUMNS = ("rank", "checkpoint", "mean_acc", "std_acc", "n_ok", "n_failed", "accuracies")
CMP_COLUMNS = ("rank", "checkpoint", "p_welch", "p_mwu", "reject_5pct")
PARAM_COLUMNS = ("dataset", "input_shape", "classes", "family", "rank", "params", "ratio_to_rank1")

BASELINE_NOTE = (
    "baseline: fully connected FNN on vectorized patches (stands in for the CNN "
    "only at the order-of-magnitude level; its parameter ratios differ from the CNN's)"
)

# 5x5 spatial patches; band counts give Table-2-consistent Rank-R parameter totals
DATASET_CONFIGS = {
    "indian_pines": ((5, 5, 200), 16),
    "botswana": ((5, 5, 145), 14),
    "pavia_university": ((5, 5, 103), 9),
}


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


# ---------------------------------------------------------------------------
# specs and results


@dataclass(frozen=True)
class ExperimentSpec:
    data: Optional[str] = None
    synth_seed: int = 42
    synth_n_per_class: int = 80
    synth_shape: tuple[int, ...] = (5, 5, 8)
    synth_classes: int = 3
    patch_size: int = 5
    ranks: tuple[int, ...] = (1, 2, 3, 4, 5)
    hidden: int = 75
    alpha: int = 10
    noise: float = 0.0
    runs: int = 10
    checkpoints: tuple[int, ...] = (50, 500)
    max_epochs: Optional[int] = None
    base_seed: int = 0
    out_dir: str = "results"
    learning_rate: float = 0.05
    activation: str = "sigmoid"
    mode: str = "alternating"

    def __post_init__(self):
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        object.__setattr__(self, "checkpoints", tuple(sorted({int(c) for c in self.checkpoints})))
        object.__setattr__(self, "synth_shape", tuple(int(p) for p in self.synth_shape))
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not self.ranks or min(self.ranks) < 1:
            raise ValueError("ranks must be a non-empty list of positive integers")
        if not self.checkpoints or self.checkpoints[0] < 1:
            raise ValueError("checkpoints must be positive epoch numbers")
        if self.max_epochs is not None and self.checkpoints[-1] > self.max_epochs:
            raise ValueError("checkpoints cannot exceed max_epochs")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.noise < 0:
            raise ValueError("noise level must be non-negative")

    @property
    def epochs(self) -> int:
        return self.max_epochs if self.max_epochs is not None else self.checkpoints[-1]


@dataclass(frozen=True)
class AggregateRow:
    rank: int
    checkpoint: int
    accuracies: tuple[float, ...]
    failed: int = 0

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else math.nan

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies, ddof=1)) if len(self.accuracies) > 1 else math.nan


@dataclass
class AggregateResult:
    runs: int
    rows: list[AggregateRow] = field(default_factory=list)

    def keys(self) -> list[tuple[int, int]]:
        return [(r.rank, r.checkpoint) for r in self.rows]

    def get(self, rank: int, checkpoint: int) -> AggregateRow:
        for r in self.rows:
            if (r.rank, r.checkpoint) == (rank, checkpoint):
                return r
        raise KeyError((rank, checkpoint))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AGG_COLUMNS)
        for r in self.rows:
            w.writerow(
                [r.rank, r.checkpoint, _fmt(r.mean), _fmt(r.std), len(r.accuracies), r.failed,
                 ";".join(_fmt(a) for a in r.accuracies)]
            )
        return buf.getvalue()


def read_aggregate(path) -> AggregateResult:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != AGG_COLUMNS:
            raise ValueError(f"{path}: not an aggregate CSV (columns {reader.fieldnames})")
        rows = []
        runs = 0
        for rec in reader:
            accs = tuple(float(a) for a in rec["accuracies"].split(";") if a)
            failed = int(rec["n_failed"])
            runs = max(runs, len(accs) + failed)
            rows.append(AggregateRow(int(rec["rank"]), int(rec["checkpoint"]), accs, failed))
    return AggregateResult(runs, rows)


# ---------------------------------------------------------------------------
# running


def load_dataset(path, patch_size: int = 5) -> LabeledPatchSet:
    """A ``.npz`` patch set, or a cube header from which patches are cut."""
    path = Path(path)
    if path.suffix == ".npz":
        return load_patch_set(path)
    return extract_patches(load_cube(path), patch_size)


def _dataset_for(spec: ExperimentSpec) -> LabeledPatchSet:
    if spec.data:
        return load_dataset(spec.data, spec.patch_size)
    return synth(spec.synth_seed, spec.synth_n_per_class, spec.synth_shape, spec.synth_classes)


def run_experiment(spec: ExperimentSpec, echo: Optional[Callable[[str], None]] = None) -> AggregateResult:
    """Train every (rank, run) pair and write ``raw.csv``, ``aggregate.csv`` and ``run_info.txt``.

    Run ``r`` uses seed ``base_seed + r`` for its split, noise and initial
    weights.  Runs whose loss diverges are reported and left out of the means.
    """
    say = echo or (lambda s: None)
    data = _dataset_for(spec)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shape, classes = data.sample_shape, data.n_classes
    info = [BASELINE_NOTE]
    header = (
        f"data={spec.data or 'synth'} samples={len(data)} input_shape={shape} classes={classes} "
        f"alpha={spec.alpha} noise={spec.noise} runs={spec.runs} epochs={spec.epochs} lr={spec.learning_rate}"
    )
    info.append(header)
    say(header)
    tcfg = TrainConfig(learning_rate=spec.learning_rate, max_epochs=spec.epochs, tol=0.0, mode=spec.mode)

    raw_rows: list[tuple] = []
    agg = AggregateResult(spec.runs)
    for rank in spec.ranks:
        base_cfg = ModelConfig(shape, rank=rank, hidden=spec.hidden, classes=classes, activation=spec.activation)
        banner = (
            f"Rank-{rank} FNN: Q={spec.hidden} C={classes} params={param_count(base_cfg)} "
            f"(fcfnn {param_count(base_cfg, 'fcfnn')})"
        )
        say(banner)
        info.append(banner)
        per_ckpt: dict[int, list[float]] = {c: [] for c in spec.checkpoints}
        failed = 0
        for run in range(spec.runs):
            seed = spec.base_seed + run
            # sigma_b comes from the whole clean set; the split depends on labels only
            pool = add_noise(data, spec.noise, seed) if spec.noise > 0 else data
            train_set, test_set = split_per_class(pool, spec.alpha, seed)
            model = init_weights(ModelConfig(shape, rank, spec.hidden, classes, spec.activation, seed))
            try:
                rec = train(model, train_set, tcfg, test_data=test_set)
            except TrainingDiverged as exc:
                failed += 1
                msg = f"rank {rank} run {run}: {exc}; excluded from aggregates"
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                info.append("FAILED " + msg)
                continue
            for e in rec.epochs:
                raw_rows.append((rank, run, e.epoch, e.train_nll, e.train_acc, _nan_if_none(e.test_acc)))
            for c in spec.checkpoints:
                per_ckpt[c].append(_nan_if_none(rec.at(c).test_acc))
            say(f"  run {run}: test acc @{spec.checkpoints[-1]} = {per_ckpt[spec.checkpoints[-1]][-1]:.4f}")
        for c in spec.checkpoints:
            agg.rows.append(AggregateRow(rank, c, tuple(per_ckpt[c]), failed))

    _write_rows(out / "raw.csv", RAW_COLUMNS, raw_rows)
    (out / "aggregate.csv").write_text(agg.to_csv())
    (out / "run_info.txt").write_text("\n".join(info) + "\n")
    return agg


def _nan_if_none(x) -> float:
    return math.nan if x is None else float(x)


def _write_rows(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# comparisons


@dataclass(frozen=True)
class ComparisonRow:
    rank: int
    checkpoint: int
    p_welch: float
    p_mwu: float
    reject: bool


def _welch_p(a, b) -> float:
    try:
        return welch_t(a, b).pvalue
    except ValueError:
        # both samples constant: identical means cannot be told apart, distinct ones trivially can
        return 1.0 if math.fsum(a) / len(a) == math.fsum(b) / len(b) else 0.0


def compare_models(res_a: AggregateResult, res_b: AggregateResult, alpha_sig: float = 0.05) -> list[ComparisonRow]:
    """Welch and Mann-Whitney p-values per (rank, checkpoint).

    The null hypothesis (same performance) is rejected only when both tests
    reject at ``alpha_sig``.
    """
    if res_a.runs != res_b.runs or res_a.keys() != res_b.keys():
        raise ValueError("results differ in runs or in (rank, checkpoint) layout")
    out = []
    for ra, rb in zip(res_a.rows, res_b.rows):
        a, b = list(ra.accuracies), list(rb.accuracies)
        if len(a) < 2 or len(b) < 2:
            raise ValueError(f"rank {ra.rank} checkpoint {ra.checkpoint}: need >= 2 successful runs per side")
        pw = _welch_p(a, b)
        pm = mann_whitney_u(a, b).pvalue
        out.append(ComparisonRow(ra.rank, ra.checkpoint, pw, pm, pw < alpha_sig and pm < alpha_sig))
    return out


def write_comparison(rows: Sequence[ComparisonRow], path) -> None:
    _write_rows(
        Path(path), CMP_COLUMNS,
        [(r.rank, r.checkpoint, r.p_welch, r.p_mwu, int(r.reject)) for r in rows],
    )


# ---------------------------------------------------------------------------
# parameter counts


def param_table(
    configs: Optional[dict[str, tuple[tuple[int, ...], int]]] = None,
    ranks: Sequence[int] = (1, 2, 3, 4, 5),
    hidden: int = 75,
) -> list[dict]:
    """Trainable parameter counts of Rank-R FNNs and the FCFNN baseline."""
    configs = DATASET_CONFIGS if configs is None else configs
    rows = []
    for name, (shape, classes) in configs.items():
        rank1 = param_count(ModelConfig(shape, 1, hidden, classes))
        for r in ranks:
            n = param_count(ModelConfig(shape, r, hidden, classes))
            rows.append(dict(dataset=name, input_shape="x".join(map(str, shape)), classes=classes,
                             family="rank_r", rank=r, params=n, ratio_to_rank1=n / rank1))
        n = param_count(ModelConfig(shape, 1, hidden, classes), "fcfnn")
        rows.append(dict(dataset=name, input_shape="x".join(map(str, shape)), classes=classes,
                         family="fcfnn", rank="", params=n, ratio_to_rank1=n / rank1))
    return rows


def write_param_table(rows: Sequence[dict], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PARAM_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in PARAM_COLUMNS])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
