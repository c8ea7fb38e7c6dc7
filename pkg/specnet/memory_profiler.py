"""
SpecNet - Memory Profiler
Logical feature-map accounting, peak/average aggregation and relative-memory reporting
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from .artifacts import write_csv
from .errors import UsageError
from .tensors import SparseSpectralMap

logger = logging.getLogger("MemProfiler")

BYTES_PER_SCALAR = {"f32": 4, "f64": 8}
DEFAULT_BYTES_PER_INDEX = 4

LEDGER_HEADER = ("step", "layer", "mode", "bytes")
SUMMARY_HEADER = ("beta", "avg_ratio", "peak_ratio", "final_accuracy_ratio")


def sparse_bytes(S: SparseSpectralMap, bytes_per_scalar: int = 8, bytes_per_index: int = DEFAULT_BYTES_PER_INDEX) -> int:
    """Each stored entry: real + imag scalars and a (row, col) index pair"""
    return S.nnz * (2 * bytes_per_scalar + 2 * bytes_per_index)


def dense_bytes(rows: int, cols: int, channels: int, bytes_per_scalar: int = 8) -> int:
    return rows * cols * channels * bytes_per_scalar


def feature_map_bytes(
    feature_map: Union[np.ndarray, Sequence[SparseSpectralMap]],
    bytes_per_scalar: int = 8,
    bytes_per_index: int = DEFAULT_BYTES_PER_INDEX,
) -> int:
    """Logical bytes of a stored feature map in whatever form it is held"""
    if isinstance(feature_map, np.ndarray):
        if feature_map.ndim == 3:
            channels, rows, cols = feature_map.shape
            return dense_bytes(rows, cols, channels, bytes_per_scalar)
        return int(feature_map.size) * bytes_per_scalar
    return sum(sparse_bytes(s, bytes_per_scalar, bytes_per_index) for s in feature_map)


@dataclass(frozen=True)
class MemEvent:
    step: int
    layer: int
    mode: str
    bytes: int

    def to_row(self) -> Tuple[int, int, str, int]:
        return (self.step, self.layer, self.mode, self.bytes)


@dataclass
class MemLedger:
    """
    Append-only record of stored feature maps.
    Maps recorded in one forward pass stay live until the pass ends; every
    record is one step, and the step total is the sum of live maps.
    """
    events: List[MemEvent] = field(default_factory=list)
    step_totals: List[int] = field(default_factory=list)
    _live: int = 0

    def begin_pass(self):
        self._live = 0

    def record(self, layer: int, mode: str, nbytes: int) -> MemEvent:
        if nbytes < 0:
            raise UsageError(f"negative byte count {nbytes} for layer {layer}")
        event = MemEvent(step=len(self.events), layer=layer, mode=mode, bytes=int(nbytes))
        self.events.append(event)
        self._live += event.bytes
        self.step_totals.append(self._live)
        return event

    def extend(self, other: "MemLedger"):
        """Append another ledger's passes, renumbering steps"""
        for event, total in zip(other.events, other.step_totals):
            self.events.append(MemEvent(len(self.events), event.layer, event.mode, event.bytes))
            self.step_totals.append(total)

    def __len__(self) -> int:
        return len(self.events)

    @property
    def peak_bytes(self) -> int:
        return max(self.step_totals) if self.step_totals else 0

    @property
    def average_bytes(self) -> float:
        return float(np.mean(self.step_totals)) if self.step_totals else 0.0

    def summary(self) -> Dict[str, Any]:
        return {"steps": len(self), "peak_bytes": self.peak_bytes, "average_bytes": self.average_bytes}


def relative_memory(spec: MemLedger, baseline: MemLedger) -> Tuple[float, float]:
    """(average ratio, peak ratio) of spectral over baseline feature-map bytes"""
    if not len(spec) or not len(baseline):
        raise UsageError("relative_memory needs two non-empty ledgers")
    if baseline.average_bytes == 0 or baseline.peak_bytes == 0:
        raise UsageError("baseline ledger holds no bytes")
    return spec.average_bytes / baseline.average_bytes, spec.peak_bytes / baseline.peak_bytes


def write_ledger_csv(ledger: MemLedger, path: Union[str, Path]) -> Path:
    return write_csv(path, LEDGER_HEADER, (e.to_row() for e in ledger.events))


def write_summary_csv(rows: Sequence[Tuple[float, float, float, float]], path: Union[str, Path]) -> Path:
    out = write_csv(path, SUMMARY_HEADER, rows)
    logger.info(f"Sweep summary with {len(rows)} rows written to {out}")
    return out
