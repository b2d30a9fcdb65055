"""Hyperspectral cubes, patch sets, per-class splitting, noise and synthetic tasks.

Cube files
----------
A cube is stored as three files next to each other::

    scene.hdr          key=value text header
    scene.values.bin   float32, little endian, shape (height, width, bands),
                       band index fastest
    scene.labels.bin   int32, little endian, shape (height, width), row-major

Header keys: ``height``, ``width``, ``bands``, ``classes``,
``element_type=f32``, ``byte_order=little`` and optionally ``values_file`` /
``labels_file`` (paths relative to the header).  Label 0 marks unlabeled
pixels, 1..classes are class ids.

To bring a public scene (Indian Pines, Pavia University, Botswana) into this
format, load its image and ground truth arrays with whatever reader you like
(e.g. ``scipy.io.loadmat``) and call ``save_cube(cube_from_arrays(img, gt), path)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor_core import CpFactors, cp_reconstruct

__all__ = [
    "HsiCube",
    "LabeledPatchSet",
    "cube_from_arrays",
    "save_cube",
    "load_cube",
    "extract_patches",
    "split_per_class",
    "add_noise",
    "synth",
    "save_patch_set",
    "load_patch_set",
    "read_header",
]

_REQUIRED_KEYS = ("height", "width", "bands", "classes")


@dataclass
class HsiCube:
    values: np.ndarray  # (height, width, bands) float64
    labels: np.ndarray  # (height, width) int, 0 = unlabeled
    classes: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 3:
            raise ValueError(f"cube values must be 3-order, got shape {self.values.shape}")
        if self.labels.shape != self.values.shape[:2]:
            raise ValueError(f"label grid {self.labels.shape} does not match cube {self.values.shape[:2]}")
        if self.classes < 1:
            raise ValueError("classes must be >= 1")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > self.classes):
            raise ValueError(f"labels must lie in 0..{self.classes}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass
class LabeledPatchSet:
    """Samples stacked along axis 0 with 0-based integer class labels."""

    patches: np.ndarray  # (N, *sample_shape)
    labels: np.ndarray  # (N,) int in 0..n_classes-1
    n_classes: int

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.patches.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.patches.shape[0]} patches but {self.labels.shape[0]} labels")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.patches.shape[1:]

    @property
    def targets(self) -> np.ndarray:
        """One-hot label matrix ``(N, C)``."""
        t = np.zeros((len(self), self.n_classes))
        t[np.arange(len(self)), self.labels] = 1.0
        return t

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, index) -> "LabeledPatchSet":
        return LabeledPatchSet(self.patches[index], self.labels[index], self.n_classes)


# ---------------------------------------------------------------------------
# cube I/O


def cube_from_arrays(values, labels, classes: int | None = None) -> HsiCube:
    labels = np.asarray(labels)
    if classes is None:
        classes = int(labels.max()) if labels.size else 1
    return HsiCube(values, labels, max(int(classes), 1))


def read_header(path) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _blob_paths(header_path: Path, header: dict[str, str]) -> tuple[Path, Path]:
    stem = header_path.with_suffix("")
    values = header.get("values_file", stem.name + ".values.bin")
    labels = header.get("labels_file", stem.name + ".labels.bin")
    return header_path.parent / values, header_path.parent / labels


def save_cube(cube: HsiCube, path) -> Path:
    """Write ``cube`` as header + two binary blobs; returns the header path.

    Values are narrowed to float32 at this boundary.
    """
    path = Path(path)
    h, w, b = cube.shape
    stem = path.with_suffix("")
    header = {
        "height": h,
        "width": w,
        "bands": b,
        "classes": cube.classes,
        "element_type": "f32",
        "byte_order": "little",
        "values_file": stem.name + ".values.bin",
        "labels_file": stem.name + ".labels.bin",
    }
    path.write_text("".join(f"{k}={v}\n" for k, v in header.items()))
    vpath, lpath = _blob_paths(path, {k: str(v) for k, v in header.items()})
    vpath.write_bytes(np.ascontiguousarray(cube.values, dtype="<f4").tobytes())
    lpath.write_bytes(np.ascontiguousarray(cube.labels, dtype="<i4").tobytes())
    return path


def load_cube(path) -> HsiCube:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"cube header not found: {path}")
    header = read_header(path)
    missing = [k for k in _REQUIRED_KEYS if k not in header]
    if missing:
        raise ValueError(f"{path}: header lacks {', '.join(missing)}")
    if header.get("element_type", "f32") != "f32":
        raise ValueError(f"{path}: unknown element type {header['element_type']!r}")
    if header.get("byte_order", "little") != "little":
        raise ValueError(f"{path}: unsupported byte order {header['byte_order']!r}")
    try:
        h, w, b, c = (int(header[k]) for k in _REQUIRED_KEYS)
    except ValueError as exc:
        raise ValueError(f"{path}: non-integer extent in header") from exc
    if min(h, w, b, c) < 1:
        raise ValueError(f"{path}: height, width, bands and classes must be positive")
    vpath, lpath = _blob_paths(path, header)
    for p in (vpath, lpath):
        if not p.exists():
            raise FileNotFoundError(f"cube blob not found: {p}")
    vbytes, lbytes = vpath.read_bytes(), lpath.read_bytes()
    if len(vbytes) != 4 * h * w * b:
        raise ValueError(f"{vpath}: expected {4 * h * w * b} bytes, found {len(vbytes)}")
    if len(lbytes) != 4 * h * w:
        raise ValueError(f"{lpath}: expected {4 * h * w} bytes, found {len(lbytes)}")
    values = np.frombuffer(vbytes, dtype="<f4").reshape(h, w, b).astype(np.float64)
    labels = np.frombuffer(lbytes, dtype="<i4").reshape(h, w).astype(np.int64)
    return HsiCube(values, labels, c)


# ---------------------------------------------------------------------------
# patch sets on disk (npz; used by the CLI to pass data between commands)


def save_patch_set(data: LabeledPatchSet, path) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, patches=data.patches, labels=data.labels, n_classes=np.int64(data.n_classes))
    return path


def load_patch_set(path) -> LabeledPatchSet:
    with np.load(Path(path)) as z:
        return LabeledPatchSet(z["patches"], z["labels"], int(z["n_classes"]))


# ---------------------------------------------------------------------------
# patches


def mirror_index(i: int, n: int) -> int:
    """Reflect ``i`` into ``0..n-1`` about the edge pixels (edge not repeated)."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


def extract_patches(cube: HsiCube, s: int = 5) -> LabeledPatchSet:
    """One ``s x s x bands`` patch per labeled pixel, in row-major pixel order.

    Pixels near the border are served by mirror padding, so every labeled
    pixel yields a patch.
    """
    h, w, _ = cube.shape
    if s < 1 or s % 2 == 0:
        raise ValueError(f"patch size must be a positive odd integer, got {s}")
    if s > min(h, w):
        raise ValueError(f"patch size {s} exceeds the spatial extent {h}x{w}")
    half = s // 2
    padded = np.pad(cube.values, ((half, half), (half, half), (0, 0)), mode="reflect")
    rows, cols = np.nonzero(cube.labels)
    patches = np.empty((rows.size, s, s, cube.shape[2]))
    for n, (y, x) in enumerate(zip(rows, cols)):
        patches[n] = padded[y : y + s, x : x + s]
    return LabeledPatchSet(patches, cube.labels[rows, cols] - 1, cube.classes)


# ---------------------------------------------------------------------------
# splitting and noise


def split_per_class(data: LabeledPatchSet, alpha: int, seed: int) -> tuple[LabeledPatchSet, LabeledPatchSet]:
    """Random per-class train/test split.

    A class with more than ``alpha`` samples contributes ``alpha`` of them to
    training; a smaller class gives ``floor(count / 2)``.  Everything else goes
    to the test set.  Both outputs keep the original sample order.
    """
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    rng = np.random.default_rng(seed)
    train_idx = []
    for k in range(data.n_classes):
        members = np.flatnonzero(data.labels == k)
        take = alpha if members.size > alpha else members.size // 2
        train_idx.append(rng.permutation(members)[:take])
    train = np.sort(np.concatenate(train_idx)) if train_idx else np.empty(0, dtype=np.int64)
    mask = np.zeros(len(data), dtype=bool)
    mask[train] = True
    return data.subset(mask), data.subset(~mask)


def band_std(data: LabeledPatchSet) -> np.ndarray:
    """Per-band (last axis) standard deviation over every sample and position."""
    b = data.patches.shape[-1]
    return data.patches.reshape(-1, b).std(axis=0)


def add_noise(data: LabeledPatchSet, level: float, seed: int) -> LabeledPatchSet:
    """Additive white Gaussian noise with std ``level * sigma_b`` in band ``b``."""
    if level < 0:
        raise ValueError(f"noise level must be non-negative, got {level}")
    if level == 0 or len(data) == 0:
        return LabeledPatchSet(data.patches.copy(), data.labels.copy(), data.n_classes)
    rng = np.random.default_rng(seed)
    scale = level * band_std(data)
    noisy = data.patches + rng.standard_normal(data.patches.shape) * scale
    return LabeledPatchSet(noisy, data.labels.copy(), data.n_classes)


# ---------------------------------------------------------------------------
# synthetic task


def class_signatures(seed: int, shape: Sequence[int], classes: int) -> list[CpFactors]:
    """Rank-1 class templates; orthogonal along every mode when ``classes <= min(shape)``."""
    rng = np.random.default_rng(seed)
    sigs = []
    mode_bases = []
    for p in shape:
        g = rng.standard_normal((p, classes))
        if classes <= p:
            qmat, _ = np.linalg.qr(g)
            g = qmat[:, :classes] * np.sqrt(p)
        mode_bases.append(g)
    for k in range(classes):
        sigs.append(CpFactors([b[:, k : k + 1] for b in mode_bases]))
    return sigs


def synth(
    task_seed: int,
    n_per_class: int,
    shape: Sequence[int] = (5, 5, 8),
    classes: int = 3,
    noise_std: float = 0.1,
) -> LabeledPatchSet:
    """Class-conditional rank-1 templates plus Gaussian perturbation.

    Samples are ordered class by class.
    """
    if classes < 2:
        raise ValueError("synthetic tasks need at least two classes")
    if n_per_class < 0:
        raise ValueError("n_per_class must be non-negative")
    shape = tuple(int(p) for p in shape)
    templates = np.stack([cp_reconstruct(s) for s in class_signatures(task_seed, shape, classes)])
    rng = np.random.default_rng([task_seed, 1])
    labels = np.repeat(np.arange(classes), n_per_class)
    patches = templates[labels] + noise_std * rng.standard_normal((labels.size, *shape))
    return LabeledPatchSet(patches, labels, classes)
