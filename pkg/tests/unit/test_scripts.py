import numpy as np

from bidiag_update.matrix_io import read_stream, write_stream
from scripts.make_linkpred_stream import column_events
from scripts.scaling_benchmark import COLUMNS, run


def test_column_events_follow_columns():
    adjacency = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 2.0], [0.0, 2.0, 0.0]])
    events = list(column_events(adjacency))
    assert events == [(1, 0, 1.0, 0), (0, 1, 1.0, 1), (2, 1, 2.0, 1), (1, 2, 2.0, 2)]
    assert [e[1] for e in column_events(adjacency, steps=1)] == [0]


def test_column_events_make_a_readable_stream(tmp_path):
    adjacency = np.array([[0.0, 3.0], [3.0, 0.0]])
    path = write_stream(tmp_path / "s.txt", 2, 2, column_events(adjacency))
    stream = read_stream(path)
    assert [(e.i, e.j, e.theta, e.timestamp) for e in stream.events] == [(1, 0, 3.0, 0), (0, 1, 3.0, 1)]


def test_scaling_rows(capsys):
    rows = run([10, 20], ["bgu", "dense"], 0.1, 0)
    assert len(rows) == 4
    assert all(len(row) == len(COLUMNS) for row in rows)
    assert all(row[4] <= 1e-10 for row in rows)
    assert "n=10" in capsys.readouterr().out
