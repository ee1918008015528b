"""Logical accounting of feature-map storage.

Bytes are derived from data-structure contents (entry counts times
scalar/index widths), never from the process allocator, so every figure
is exactly reproducible.

A :class:`MemLedger` receives one event per layer forward. Layer ids
restart at 0 at the beginning of every forward pass; the live total at a
step is the sum of the bytes stored by the current pass so far, because
all of them are retained until the backward pass.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List, NamedTuple

import numpy as np

from .errors import UsageError
from .sparse import SparseSpectral

__all__ = [
    "MemEvent",
    "MemLedger",
    "sparse_bytes",
    "dense_bytes",
    "relative_memory",
    "BYTES_PER_INDEX",
]

BYTES_PER_INDEX = 4


def sparse_bytes(S: SparseSpectral, bytes_per_scalar: int = 8,
                 bytes_per_index: int = BYTES_PER_INDEX) -> int:
    """Storage for a coordinate list: a complex value and a (row, col) pair per entry.

    Leading batch/channel axes are treated as separate maps and their
    indices are not charged.
    """
    return S.nnz * (2 * bytes_per_scalar + 2 * bytes_per_index)


def dense_bytes(rows: int, cols: int, channels: int = 1, bytes_per_scalar: int = 8) -> int:
    return rows * cols * channels * bytes_per_scalar


class MemEvent(NamedTuple):
    step: int
    layer: int
    mode: str
    bytes: int


@dataclass
class MemLedger:
    bytes_per_scalar: int = 8
    bytes_per_index: int = BYTES_PER_INDEX
    events: List[MemEvent] = field(default_factory=list)

    def record(self, layer: int, mode: str, nbytes: int) -> None:
        if nbytes < 0:
            raise ValueError("byte counts are non-negative")
        self.events.append(MemEvent(len(self.events), layer, mode, int(nbytes)))

    def sparse(self, layer: int, mode: str, S: SparseSpectral) -> None:
        self.record(layer, mode, sparse_bytes(S, self.bytes_per_scalar, self.bytes_per_index))

    def dense(self, layer: int, mode: str, array: np.ndarray, complex_valued: bool = False) -> None:
        width = self.bytes_per_scalar * (2 if complex_valued else 1)
        self.record(layer, mode, int(np.size(array)) * width)

    def __len__(self):
        return len(self.events)

    def live_bytes(self) -> np.ndarray:
        """Live total after each step."""
        live = np.zeros(len(self.events), dtype=np.int64)
        running = 0
        for i, ev in enumerate(self.events):
            if ev.layer == 0:
                running = 0
            running += ev.bytes
            live[i] = running
        return live

    @property
    def peak(self) -> int:
        if not self.events:
            raise UsageError("empty ledger")
        return int(self.live_bytes().max())

    @property
    def average(self) -> float:
        if not self.events:
            raise UsageError("empty ledger")
        return float(self.live_bytes().mean())

    def extend(self, other: "MemLedger") -> None:
        for ev in other.events:
            self.record(ev.layer, ev.mode, ev.bytes)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "layer", "mode", "bytes"])
        w.writerows(self.events)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, **kwargs) -> "MemLedger":
        ledger = cls(**kwargs)
        for row in csv.DictReader(io.StringIO(text)):
            ledger.record(int(row["layer"]), row["mode"], int(row["bytes"]))
        return ledger


def relative_memory(spec: MemLedger, baseline: MemLedger):
    """``(average ratio, peak ratio)`` of spectral over baseline storage."""
    if not spec.events or not baseline.events:
        raise UsageError("relative memory needs two non-empty ledgers")
    if baseline.peak == 0:
        raise UsageError("baseline ledger recorded no bytes")
    return spec.average / baseline.average, spec.peak / baseline.peak
