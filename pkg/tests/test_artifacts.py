import json

import pytest

from specnet.artifacts import atomic_write_bytes, save_json, write_csv


def test_atomic_write_creates_parents_and_leaves_no_temp(tmp_path):
    path = atomic_write_bytes(tmp_path / "a" / "b" / "blob.bin", b"\x00\x01")
    assert path.read_bytes() == b"\x00\x01"
    assert [p.name for p in path.parent.iterdir()] == ["blob.bin"]


def test_atomic_write_replaces_existing(tmp_path):
    path = tmp_path / "out.txt"
    path.write_text("old")
    atomic_write_bytes(path, b"new")
    assert path.read_text() == "new"


def test_csv_float_cells_round_trip(tmp_path):
    path = write_csv(tmp_path / "m.csv", ("epoch", "loss"), [(1, 0.1), (2, 1 / 3)])
    rows = path.read_text().splitlines()
    assert rows[0] == "epoch,loss"
    assert float(rows[2].split(",")[1]) == 1 / 3


def test_csv_rejects_ragged_rows(tmp_path):
    with pytest.raises(ValueError):
        write_csv(tmp_path / "bad.csv", ("a", "b"), [(1,)])
    assert not (tmp_path / "bad.csv").exists()


def test_save_json_sorted(tmp_path):
    path = save_json(tmp_path / "r.json", {"b": 1, "a": [1, 2]})
    assert json.loads(path.read_text()) == {"a": [1, 2], "b": 1}
    assert path.read_text().index('"a"') < path.read_text().index('"b"')
