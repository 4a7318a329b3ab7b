"""Trained-scorer container and its binary file format.

Layout: magic ``SPAD``, u32 version, u32 metadata length, JSON metadata,
then every parameter array as little-endian float32 in declaration order.
The metadata records kind, channel specs, config, seed, dataset manifest
hash and best-epoch index, plus each parameter's name and shape.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..swirdiff import DiffSpec

MAGIC = b"SPAD"
VERSION = 1

KINDS = ("pixbis", "mccnn", "pixel_svm")


class ModelFormatError(ValueError):
    pass


@dataclass
class TrainedScorer:
    """A serialized classifier plus enough provenance to re-train it."""

    kind: str
    specs: tuple[DiffSpec, ...]
    params: dict[str, np.ndarray]
    config: dict
    seed: int
    manifest_hash: str = ""
    best_epoch: int = -1
    best_dev_metric: float | None = None
    _runtime: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scorer kind {self.kind!r}")
        if not self.specs:
            raise ValueError("scorer must have at least one input channel")
        self.specs = tuple(self.specs)

    def runtime(self, builder):
        """Build (once) and cache the executable form of this scorer."""
        if self._runtime is None:
            self._runtime = builder(self)
        return self._runtime


def save_scorer(scorer: TrainedScorer, path) -> None:
    meta = {
        "kind": scorer.kind,
        "specs": [str(s) for s in scorer.specs],
        "config": scorer.config,
        "seed": scorer.seed,
        "manifest_hash": scorer.manifest_hash,
        "best_epoch": scorer.best_epoch,
        "best_dev_metric": scorer.best_dev_metric,
        "params": [{"name": k, "shape": list(v.shape)}
                   for k, v in scorer.params.items()],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for v in scorer.params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_scorer(path) -> TrainedScorer:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ModelFormatError(f"{path}: bad magic {data[:4]!r}")
    version, meta_len = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")
    meta_end = 12 + meta_len
    if len(data) < meta_end:
        raise IOError(f"{path}: truncated metadata")
    meta = json.loads(data[12:meta_end].decode("utf-8"))
    params: dict[str, np.ndarray] = {}
    offset = meta_end
    for entry in meta["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if len(data) < end:
            raise IOError(f"{path}: truncated payload at {entry['name']}")
        params[entry["name"]] = np.frombuffer(
            data[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end
    return TrainedScorer(
        kind=meta["kind"],
        specs=tuple(DiffSpec.parse(s) for s in meta["specs"]),
        params=params,
        config=meta["config"],
        seed=meta["seed"],
        manifest_hash=meta.get("manifest_hash", ""),
        best_epoch=meta.get("best_epoch", -1),
        best_dev_metric=meta.get("best_dev_metric"),
    )
