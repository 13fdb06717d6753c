"""Dataset I/O (DOLD binary, CSV) and synthetic dataset generation.

DOLD layout, all little-endian::

    offset  size  field
    0       4     magic b"DOLD"
    4       4     version (uint32, = 1)
    8       8     n (uint64)
    16      8     d (uint64)
    24      4*n*d payload, float32, row-major
"""

from __future__ import annotations

import csv
import io
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from optloss.core import Dataset
from optloss.errors import DataError, FormatError, IoError, SpecError

__all__ = [
    "MAGIC",
    "VERSION",
    "SyntheticSpec",
    "load_dataset",
    "save_dataset",
    "read_dold_bytes",
    "dold_bytes",
    "generate",
    "fnv1a64",
]

MAGIC = b"DOLD"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def dold_bytes(ds: Dataset) -> bytes:
    payload = np.ascontiguousarray(ds.values, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, ds.n_samples, ds.dim) + payload


def read_dold_bytes(blob: bytes) -> Dataset:
    if len(blob) < _HEADER.size:
        raise FormatError(f"file too short for a DOLD header ({len(blob)} bytes)")
    magic, version, n, d = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported DOLD version {version}")
    if n < 1 or d < 1:
        raise FormatError(f"invalid shape n={n}, d={d}")
    expected = 4 * n * d
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"payload has {len(payload)} bytes, header declares {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    bad = ~np.isfinite(values)
    if bad.any():
        raise DataError(f"non-finite value in row {int(np.argwhere(bad)[0, 0])}")
    return Dataset(values)


def _read_csv(text: str) -> Dataset:
    rows = []
    width = None
    for i, raw in enumerate(csv.reader(io.StringIO(text))):
        if not raw or all(not c.strip() for c in raw):
            continue
        try:
            row = [float(c.strip()) for c in raw]
        except ValueError as exc:
            raise FormatError(f"row {i}: {exc}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(f"row {i} has {len(row)} columns, expected {width}")
        if not all(math.isfinite(v) for v in row):
            raise DataError(f"non-finite value in row {i}")
        rows.append(row)
    if not rows:
        raise FormatError("CSV contains no samples")
    return Dataset(np.array(rows, dtype=np.float64))


def load_dataset(path: str | os.PathLike, format: str = "dold") -> Dataset:
    """Read a dataset from ``path``; ``format`` is ``"dold"`` or ``"csv"``."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if format == "dold":
        return read_dold_bytes(blob)
    if format == "csv":
        try:
            text = blob.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"CSV is not valid UTF-8: {exc}") from None
        return _read_csv(text)
    raise FormatError(f"unknown dataset format {format!r}")


def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    if not str(path):
        raise IoError("empty output path")
    try:
        Path(path).write_bytes(dold_bytes(ds))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic dataset.

    kind is one of ``isotropic_gaussian`` (params: mean, scale), ``two_point``
    (params: a, b, p) or ``finite_mixture`` (params: points, probs).
    """

    kind: str
    n_samples: int
    dim: int
    seed: int = 0
    params: dict = field(default_factory=dict)

    @classmethod
    def isotropic_gaussian(cls, n_samples, dim, mean=0.0, scale=1.0, seed=0):
        return cls("isotropic_gaussian", n_samples, dim, seed, {"mean": mean, "scale": scale})

    @classmethod
    def two_point(cls, n_samples, dim, a=-1.0, b=1.0, p=0.5, seed=0):
        return cls("two_point", n_samples, dim, seed, {"a": a, "b": b, "p": p})

    @classmethod
    def finite_mixture(cls, n_samples, points, probs, seed=0):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(
            "finite_mixture", n_samples, points.shape[1], seed,
            {"points": points, "probs": np.asarray(probs, dtype=float)},
        )


def generate(spec: SyntheticSpec) -> Dataset:
    """Draw a dataset from ``spec``; the output is a pure function of the spec.

    Normal variates come from numpy's ziggurat sampler driven by PCG64 seeded
    with ``spec.seed``.
    """
    n, d = int(spec.n_samples), int(spec.dim)
    if n < 1 or d < 1:
        raise SpecError(f"n_samples and dim must be positive, got {n}, {d}")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    p = spec.params
    if spec.kind == "isotropic_gaussian":
        scale = float(p.get("scale", 1.0))
        if not scale > 0:
            raise SpecError("gaussian scale must be positive")
        mean = np.broadcast_to(np.asarray(p.get("mean", 0.0), dtype=float), (d,))
        return Dataset(mean + scale * rng.standard_normal((n, d)))
    if spec.kind == "two_point":
        a = np.broadcast_to(np.asarray(p.get("a", -1.0), dtype=float), (d,))
        b = np.broadcast_to(np.asarray(p.get("b", 1.0), dtype=float), (d,))
        prob_b = float(p.get("p", 0.5))
        if not 0.0 <= prob_b <= 1.0:
            raise SpecError("two_point probability must lie in [0, 1]")
        pick = rng.random(n) < prob_b
        return Dataset(np.where(pick[:, None], b, a))
    if spec.kind == "finite_mixture":
        points = np.atleast_2d(np.asarray(p["points"], dtype=float))
        probs = np.asarray(p["probs"], dtype=float)
        if points.shape[1] != d or probs.shape != (points.shape[0],):
            raise SpecError("mixture points/probs shapes disagree with dim")
        if (probs < 0).any() or abs(math.fsum(probs) - 1.0) > 1e-12:
            raise SpecError("mixture probabilities must be nonnegative and sum to 1")
        idx = rng.choice(points.shape[0], size=n, p=probs)
        return Dataset(points[idx])
    raise SpecError(f"unknown synthetic kind {spec.kind!r}")
