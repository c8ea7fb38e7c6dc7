import numpy as np
import pytest

from specnet.errors import UsageError
from specnet.memory_profiler import (
    LEDGER_HEADER, MemLedger, dense_bytes, feature_map_bytes, relative_memory, sparse_bytes, write_ledger_csv,
    write_summary_csv,
)
from specnet.tensors import SparseSpectralMap, sparse_from_array


def ledger_of(*passes):
    ledger = MemLedger()
    for sizes in passes:
        ledger.begin_pass()
        for layer, nbytes in enumerate(sizes):
            ledger.record(layer, "spectral", nbytes)
    return ledger


def test_sparse_bytes():
    assert sparse_bytes(SparseSpectralMap.empty(4, 4)) == 0
    ten = SparseSpectralMap.from_entries(4, 4, [(i // 4, i % 4, 1.0) for i in range(10)])
    assert sparse_bytes(ten, 8, 4) == 240
    full = sparse_from_array(np.ones((5, 5)))
    assert sparse_bytes(full, 8, 4) > dense_bytes(5, 5, 1, 8)


def test_dense_bytes():
    assert dense_bytes(28, 28, 1, 8) == 6272
    assert dense_bytes(28, 28, 0, 8) == 0
    assert dense_bytes(32, 32, 3, 4) == 12288


def test_feature_map_bytes_by_form():
    assert feature_map_bytes(np.zeros((3, 4, 5)), 4) == 240
    assert feature_map_bytes(np.zeros(10)) == 80
    maps = [SparseSpectralMap.from_entries(2, 2, [(0, 0, 1.0)])] * 3
    assert feature_map_bytes(maps, 4, 2) == 3 * 12


def test_peak_and_average():
    ledger = ledger_of([100, 50], [10, 0, 30])
    assert ledger.step_totals == [100, 150, 10, 10, 40]
    assert ledger.peak_bytes == 150
    assert ledger.average_bytes == pytest.approx(62.0)
    assert ledger.peak_bytes >= ledger.average_bytes
    assert [e.step for e in ledger.events] == [0, 1, 2, 3, 4]


def test_extend_renumbers_steps():
    ledger = ledger_of([5])
    ledger.extend(ledger_of([1, 2]))
    assert [e.step for e in ledger.events] == [0, 1, 2]
    assert ledger.step_totals == [5, 1, 3]


def test_negative_bytes_rejected():
    with pytest.raises(UsageError):
        MemLedger().record(0, "spectral", -1)


def test_relative_memory():
    baseline = ledger_of([100, 200])
    assert relative_memory(baseline, ledger_of([100, 200])) == (1.0, 1.0)
    assert relative_memory(ledger_of([0, 0]), baseline) == (0.0, 0.0)
    avg, peak = relative_memory(ledger_of([50, 50]), baseline)
    assert avg == pytest.approx(75 / 200)
    assert peak == pytest.approx(100 / 300)


def test_relative_memory_needs_data():
    with pytest.raises(UsageError):
        relative_memory(MemLedger(), ledger_of([1]))
    with pytest.raises(UsageError):
        relative_memory(ledger_of([1]), ledger_of([0]))


def test_ledger_csv(tmp_path):
    path = write_ledger_csv(ledger_of([7, 9]), tmp_path / "ledger.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(LEDGER_HEADER)
    assert lines[1:] == ["0,0,spectral,7", "1,1,spectral,9"]


def test_summary_csv(tmp_path):
    path = write_summary_csv([(0.5, 0.25, 0.5, 1.0)], tmp_path / "summary.csv")
    assert path.read_text() == "beta,avg_ratio,peak_ratio,final_accuracy_ratio\n0.5,0.25,0.5,1.0\n"
