"""Panel file round-trips and input validation."""

from __future__ import annotations

import numpy as np
import pytest

from arscreen.ar_core import ObservedSeries, SeriesPanel
from arscreen.errors import InvalidInputError
from arscreen.panel_io import read_panel, read_table, write_panel, write_table


def small_panel() -> SeriesPanel:
    rng = np.random.default_rng(3)
    series = (
        ObservedSeries("alpha", np.arange(5), rng.normal(size=5)),
        ObservedSeries("beta", np.array([2, 4, 9]), rng.normal(size=3)),
    )
    return SeriesPanel(series)


def test_round_trip_exact(tmp_path):
    panel = small_panel()
    path = tmp_path / "panel.csv"
    write_panel(panel, str(path), comments=("seed=42", "fingerprint=abc"))
    back = read_panel(str(path))
    assert back.unit_ids == panel.unit_ids
    for a, b in zip(panel, back):
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.values, b.values)
    text = path.read_text()
    assert text.startswith("# seed=42\n# fingerprint=abc\n")
    assert text.splitlines()[2] == "unit_id,time,value"


def test_rows_sorted_by_time_within_unit(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("unit_id,time,value\na,3,0.3\na,1,0.1\na,2,0.2\n")
    panel = read_panel(str(path))
    assert np.array_equal(panel[0].times, [1, 2, 3])
    assert np.allclose(panel[0].values, [0.1, 0.2, 0.3])


def test_missing_file_names_path():
    with pytest.raises(InvalidInputError, match="no/such/panel.csv"):
        read_panel("no/such/panel.csv")


def test_bad_header_rejected(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("id,when,what\na,1,2.0\n")
    with pytest.raises(InvalidInputError, match="expected header"):
        read_panel(str(path))


def test_malformed_row_reports_line(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("unit_id,time,value\na,1,2.0\na,two,3.0\n")
    with pytest.raises(InvalidInputError, match=":3:"):
        read_panel(str(path))


def test_duplicate_times_rejected(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("unit_id,time,value\na,1,2.0\na,1,3.0\n")
    with pytest.raises(InvalidInputError):
        read_panel(str(path))


def test_min_length_filtering_error(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("unit_id,time,value\na,1,2.0\n")
    with pytest.raises(InvalidInputError, match="min_length"):
        read_panel(str(path), min_length=2)


def test_table_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    rows = [["a", 0.5, 1], ["b", 0.25, 0]]
    write_table(str(path), ("unit_id", "p", "flag"), rows, comments=("seed=1",))
    header, back = read_table(str(path))
    assert header == ("unit_id", "p", "flag")
    assert back == [["a", "0.5", "1"], ["b", "0.25", "0"]]
