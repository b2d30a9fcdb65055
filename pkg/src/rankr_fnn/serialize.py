"""Single-file model format shared by Rank-R FNNs and FCFNN baselines.

Layout::

    format=rankr-fnn-model
    version=1
    family=rank_r | fcfnn
    ...config keys...
    element_type=f64
    byte_order=little
    end_header
    <payload>

The payload is little-endian float64.  For ``family=rank_r`` it holds, for
``q = 0..Q-1`` and within each ``q`` for ``d = 0..D-1``, the ``I_d x R``
factor ``W_d^(q)`` row-major, followed by ``V`` (``Q x C``) row-major.  For
``family=fcfnn`` it holds the ``Q x input_dim`` hidden matrix and then ``V``,
both row-major.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .equivalence import Fcfnn
from .model import ModelConfig, RankRModel

__all__ = ["save_model", "load_model", "save_fcfnn", "load_fcfnn", "load_any"]

MAGIC = "rankr-fnn-model"
END = b"end_header\n"


def _encode(header: dict, payload: np.ndarray) -> bytes:
    head = {"format": MAGIC, "version": 1, **header, "element_type": "f64", "byte_order": "little"}
    text = "".join(f"{k}={v}\n" for k, v in head.items()).encode("ascii")
    return text + END + np.ascontiguousarray(payload, dtype="<f8").tobytes()


def _decode(raw: bytes, source) -> tuple[dict[str, str], np.ndarray]:
    cut = raw.find(b"\n" + END)
    if cut < 0:
        raise ValueError(f"{source}: missing end_header line")
    header = {}
    for line in raw[:cut].decode("ascii", errors="replace").splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise ValueError(f"{source}: malformed header line {line!r}")
        k, v = line.split("=", 1)
        header[k.strip()] = v.strip()
    if header.get("format") != MAGIC:
        raise ValueError(f"{source}: not a {MAGIC} file")
    if header.get("element_type") != "f64" or header.get("byte_order") != "little":
        raise ValueError(f"{source}: unsupported element type or byte order")
    body = raw[cut + 1 + len(END) :]
    if len(body) % 8:
        raise ValueError(f"{source}: payload is not a whole number of float64 values")
    return header, np.frombuffer(body, dtype="<f8").astype(np.float64)


def _take(payload: np.ndarray, expected: int, source) -> None:
    if payload.size != expected:
        raise ValueError(f"{source}: payload has {payload.size} values, header implies {expected}")


def save_model(m: RankRModel, path) -> Path:
    cfg = m.config
    header = {
        "family": "rank_r",
        "input_shape": ",".join(map(str, cfg.input_shape)),
        "rank": cfg.rank,
        "hidden": cfg.hidden,
        "classes": cfg.classes,
        "activation": cfg.activation,
        "seed": cfg.seed,
    }
    parts = [m.factors[d][q].ravel() for q in range(cfg.hidden) for d in range(cfg.order)]
    parts.append(m.output_weights.ravel())
    path = Path(path)
    path.write_bytes(_encode(header, np.concatenate(parts)))
    return path


def _model_from(header: dict[str, str], payload: np.ndarray, source) -> RankRModel:
    try:
        cfg = ModelConfig(
            tuple(int(p) for p in header["input_shape"].split(",")),
            rank=int(header["rank"]),
            hidden=int(header["hidden"]),
            classes=int(header["classes"]),
            activation=header["activation"],
            seed=int(header.get("seed", 0)),
        )
    except KeyError as exc:
        raise ValueError(f"{source}: header lacks {exc.args[0]}") from None
    per_neuron = cfg.rank * sum(cfg.input_shape)
    _take(payload, cfg.hidden * per_neuron + cfg.hidden * cfg.classes, source)
    stacks = [np.empty((cfg.hidden, p, cfg.rank)) for p in cfg.input_shape]
    pos = 0
    for q in range(cfg.hidden):
        for d, p in enumerate(cfg.input_shape):
            n = p * cfg.rank
            stacks[d][q] = payload[pos : pos + n].reshape(p, cfg.rank)
            pos += n
    v = payload[pos:].reshape(cfg.hidden, cfg.classes)
    return RankRModel(cfg, tuple(stacks), v)


def load_model(path) -> RankRModel:
    path = Path(path)
    header, payload = _decode(path.read_bytes(), path)
    if header.get("family") != "rank_r":
        raise ValueError(f"{path}: expected family=rank_r, found {header.get('family')!r}")
    return _model_from(header, payload, path)


def save_fcfnn(f: Fcfnn, path) -> Path:
    header = {
        "family": "fcfnn",
        "input_dim": f.input_dim,
        "hidden": f.hidden,
        "classes": f.classes,
        "activation": f.activation,
    }
    path = Path(path)
    path.write_bytes(_encode(header, np.concatenate([f.hidden_weights.ravel(), f.output_weights.ravel()])))
    return path


def load_fcfnn(path) -> Fcfnn:
    path = Path(path)
    header, payload = _decode(path.read_bytes(), path)
    if header.get("family") != "fcfnn":
        raise ValueError(f"{path}: expected family=fcfnn, found {header.get('family')!r}")
    try:
        dim, q, c = int(header["input_dim"]), int(header["hidden"]), int(header["classes"])
    except KeyError as exc:
        raise ValueError(f"{path}: header lacks {exc.args[0]}") from None
    _take(payload, q * dim + q * c, path)
    return Fcfnn(payload[: q * dim].reshape(q, dim), payload[q * dim :].reshape(q, c), header["activation"])


def load_any(path) -> RankRModel | Fcfnn:
    path = Path(path)
    header, payload = _decode(path.read_bytes(), path)
    if header.get("family") == "fcfnn":
        return load_fcfnn(path)
    return _model_from(header, payload, path)

