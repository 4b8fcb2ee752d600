import csv
import json

import numpy as np
import pytest
import scipy.sparse.linalg

from bidiag_update import cli
from bidiag_update.core import bidiagonalize_dense
from bidiag_update.exceptions import NumericalError
from bidiag_update.matrix_io import read_band, write_band, write_matrix_market, write_stream
from bidiag_update.profiles import synthetic_problem


@pytest.fixture
def rng():
    return np.random.default_rng(29)


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1])


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_vector(path, values):
    path.write_text("\n".join(repr(float(v)) for v in values) + "\n")
    return path


def test_factor_identity(tmp_path, capsys):
    (tmp_path / "eye.csv").write_text("1,0,0\n0,1,0\n0,0,1\n")
    code, report = run(capsys, "factor", tmp_path / "eye.csv", "--out", tmp_path / "out")
    assert code == cli.EXIT_OK
    assert report["residual"] <= 1e-15
    band = read_band(tmp_path / "out" / "band.json")
    assert np.abs(band.alphas) == pytest.approx([1.0, 1.0, 1.0])
    assert np.all(band.betas == 0.0)
    assert (tmp_path / "out" / "Q.npy").exists()


def test_factor_sparse_with_gkb(tmp_path, capsys):
    A = synthetic_problem(60, seed=1, m=100)
    path = write_matrix_market(tmp_path / "a.mtx", A)
    code, report = run(capsys, "factor", path, "--method", "gkb", "--out", tmp_path)
    assert code == cli.EXIT_OK
    assert report["order"] == 60
    assert report["residual"] <= 1e-8 * scipy.sparse.linalg.norm(A)


def test_factor_rbd_is_reproducible(tmp_path, capsys, rng):
    np.savetxt(tmp_path / "a.csv", rng.standard_normal((30, 20)), delimiter=",")
    for out in ("one", "two"):
        code, _ = run(capsys, "factor", tmp_path / "a.csv", "--method", "rbd", "--rank", 5, "--seed", 42, "--out", tmp_path / out)
        assert code == cli.EXIT_OK
    assert (tmp_path / "one" / "band.json").read_bytes() == (tmp_path / "two" / "band.json").read_bytes()


def test_factor_rbd_needs_rank(tmp_path, capsys):
    (tmp_path / "a.csv").write_text("1,2\n3,4\n")
    code, report = run(capsys, "factor", tmp_path / "a.csv", "--method", "rbd", "--out", tmp_path)
    assert code == cli.EXIT_VALIDATION
    assert "--rank" in report["message"]


def test_factor_malformed_input(tmp_path, capsys):
    path = tmp_path / "broken.mtx"
    path.write_text("%%MatrixMarket matrix coordinate real general\n3 3 2\n1 1 1.0\n2 x 3.0\n")
    code, report = run(capsys, "factor", path, "--out", tmp_path)
    assert code == cli.EXIT_VALIDATION
    assert f"{path}:4" in report["message"]


def factored_band(tmp_path, rng, m, n):
    fact = bidiagonalize_dense(rng.standard_normal((m, n)))
    return write_band(tmp_path / f"band_{m}x{n}.json", fact.B)


def test_zero_update_keeps_band(tmp_path, capsys, rng):
    band = factored_band(tmp_path, rng, 8, 6)
    b = write_vector(tmp_path / "b.txt", np.zeros(8))
    c = write_vector(tmp_path / "c.txt", rng.standard_normal(6))
    code, report = run(capsys, "update", band, b, c, "--out", tmp_path / "out")
    assert code == cli.EXIT_OK
    assert report["early_exit"]
    assert (tmp_path / "out" / "band.json").read_text() == band.read_text()


def test_update_methods_agree(tmp_path, capsys, rng):
    band = factored_band(tmp_path, rng, 30, 30)
    b = write_vector(tmp_path / "b.txt", rng.standard_normal(30))
    c = write_vector(tmp_path / "c.txt", rng.standard_normal(30))
    bands = {}
    for method in ("bgu", "bhu"):
        code, report = run(capsys, "update", band, b, c, "--method", method, "--out", tmp_path / method)
        assert code == cli.EXIT_OK
        assert report["frobenius_gap"] <= 1e-10 * 30
        bands[method] = read_band(tmp_path / method / "band.json")
    assert (tmp_path / "bgu" / "rotations.csv").exists()
    assert (tmp_path / "bhu" / "Y.npy").exists()
    scale = bands["bgu"].frobenius_norm()
    assert np.abs(bands["bgu"].alphas) == pytest.approx(np.abs(bands["bhu"].alphas), abs=1e-10 * scale)


def test_tall_update_reports_spike(tmp_path, capsys, rng):
    band = factored_band(tmp_path, rng, 40, 10)
    b = write_vector(tmp_path / "b.txt", rng.standard_normal(40))
    c = write_vector(tmp_path / "c.txt", rng.standard_normal(10))
    code, report = run(capsys, "update", band, b, c, "--out", tmp_path)
    assert code == cli.EXIT_OK
    assert report["spike_rotations"] == 30


def test_bhu_snapshots(tmp_path, capsys, rng):
    band = factored_band(tmp_path, rng, 12, 12)
    b = write_vector(tmp_path / "b.txt", rng.standard_normal(12))
    c = write_vector(tmp_path / "c.txt", rng.standard_normal(12))
    code, report = run(capsys, "update", band, b, c, "--method", "bhu", "--snapshot-every", 3, "--out", tmp_path)
    assert code == cli.EXIT_OK
    assert len(report["snapshots"]) == 4
    assert (tmp_path / "bhu_state.bin").exists()


def test_update_with_factors(tmp_path, capsys, rng):
    A = rng.standard_normal((9, 7))
    np.savetxt(tmp_path / "a.csv", A, delimiter=",")
    run(capsys, "factor", tmp_path / "a.csv", "--out", tmp_path / "f")
    b = rng.standard_normal(9)
    c = rng.standard_normal(7)
    code, report = run(
        capsys, "update", tmp_path / "f" / "band.json", write_vector(tmp_path / "b.txt", b),
        write_vector(tmp_path / "c.txt", c), "--factors", tmp_path / "f", "--out", tmp_path / "g",
    )
    assert code == cli.EXIT_OK
    Q = np.load(tmp_path / "g" / "Q.npy")
    P = np.load(tmp_path / "g" / "P.npy")
    B = read_band(tmp_path / "g" / "band.json")
    assert np.allclose(Q @ B.to_dense() @ P.T, A + np.outer(b, c), atol=1e-10)


def test_update_vector_mismatch(tmp_path, capsys, rng):
    band = factored_band(tmp_path, rng, 6, 6)
    b = write_vector(tmp_path / "b.txt", np.ones(5))
    c = write_vector(tmp_path / "c.txt", np.ones(6))
    code, report = run(capsys, "update", band, b, c, "--out", tmp_path)
    assert code == cli.EXIT_VALIDATION
    assert "6x6" in report["message"]


def test_track_empty_stream(tmp_path, capsys):
    stream = write_stream(tmp_path / "s.txt", 5, 4, [])
    code, report = run(capsys, "track", stream, "--rank", 2, "--out", tmp_path)
    assert code == cli.EXIT_OK
    assert report["steps"] == 0
    assert report["totals"]["residual"] == 0.0
    assert read_rows(tmp_path / "run.csv") == []


def test_track_exact_rank_stream(tmp_path, capsys, rng):
    events = [(int(rng.integers(3)), int(rng.integers(15)), float(rng.standard_normal())) for _ in range(30)]
    stream = write_stream(tmp_path / "s.txt", 20, 15, events)
    code, report = run(
        capsys, "track", stream, "--rank", 4, "--reorth", "every:10", "--snapshot-every", 10, "--out", tmp_path
    )
    assert code == cli.EXIT_OK
    assert report["steps"] == 30
    assert report["totals"]["residual"] <= 1e-8
    assert report["reorthogonalizations"] == 3
    rows = read_rows(tmp_path / "run.csv")
    assert len(rows) == 30
    assert sum(float(row["residual"]) for row in rows) == pytest.approx(report["totals"]["residual"])
    assert sum(int(row["rotations"]) for row in rows) == report["totals"]["rotations"]
    for step in (10, 20, 30):
        assert (tmp_path / f"tracker_{step}.bin").exists()
    assert (tmp_path / "tracker.bin").exists()


def test_track_with_incremental_svd(tmp_path, capsys, rng):
    events = [(int(rng.integers(2)), int(rng.integers(6)), 1.0) for _ in range(10)]
    stream = write_stream(tmp_path / "s.txt", 8, 6, events)
    code, report = run(capsys, "track", stream, "--rank", 3, "--method", "svd", "--out", tmp_path)
    assert code == cli.EXIT_OK
    assert report["totals"]["residual"] <= 1e-10


def test_track_rejects_out_of_range_event(tmp_path, capsys):
    (tmp_path / "s.txt").write_text("3 3 2\n1 1 1.0\n4 1 1.0\n")
    code, report = run(capsys, "track", tmp_path / "s.txt", "--out", tmp_path)
    assert code == cli.EXIT_VALIDATION
    assert "s.txt:3" in report["message"]


def test_track_rejects_bad_policy(tmp_path, capsys):
    stream = write_stream(tmp_path / "s.txt", 3, 3, [])
    code, _ = run(capsys, "track", stream, "--reorth", "sometimes", "--out", tmp_path)
    assert code == cli.EXIT_VALIDATION


def test_bench_skips_unreadable_files(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for size in (10, 12, 15):
        write_matrix_market(corpus / f"m{size}.mtx", synthetic_problem(size, density=0.2, seed=size))
    (corpus / "broken.mtx").write_text("not a matrix\n")
    code, report = run(capsys, "bench", corpus, "--out", tmp_path)
    assert code == cli.EXIT_OK
    assert report["problems"] == 3
    assert report["rows"] == 9
    assert len(report["skipped"]) == 1
    assert report["max_residual"] <= 1e-10
    assert len(read_rows(tmp_path / "bench.csv")) == 9
    profile = read_rows(tmp_path / "profile.csv")
    assert all(0.0 <= float(row["bgu"]) <= 1.0 for row in profile)


def test_bench_synthetic(tmp_path, capsys):
    code, report = run(capsys, "bench", "--sizes", 10, 20, "--method", "bgu", "--method", "dense", "--out", tmp_path)
    assert code == cli.EXIT_OK
    assert report["rows"] == 4
    assert set(report["fastest_at_tau_1"]) == {"bgu", "dense"}


def test_bounds_on_sorted_diagonal(tmp_path, capsys):
    np.savetxt(tmp_path / "d.csv", np.diag([4.0, 3.0, 2.0, 1.0]), delimiter=",")
    code, report = run(capsys, "bounds", tmp_path / "d.csv", "--out", tmp_path)
    assert code == cli.EXIT_OK
    assert report["normalizer"] == pytest.approx(30.0)
    rows = read_rows(tmp_path / "bounds.csv")
    assert [int(row["r"]) for row in rows] == [1, 2, 3, 4]
    for row in rows:
        assert float(row["exact"]) == pytest.approx(0.0, abs=1e-12)
        assert float(row["lower"]) <= float(row["exact"]) + 1e-12 <= float(row["upper"]) + 2e-12
    assert float(rows[-1]["bd_tail"]) == pytest.approx(0.0, abs=1e-12)
    assert float(rows[-1]["svd_tail"]) == pytest.approx(0.0, abs=1e-12)


def test_bounds_rank_range(tmp_path, capsys, rng):
    np.savetxt(tmp_path / "a.csv", rng.standard_normal((10, 7)), delimiter=",")
    code, report = run(capsys, "bounds", tmp_path / "a.csv", "--rank", "2:4", "--out", tmp_path)
    assert code == cli.EXIT_OK
    assert report["ranks"] == [2, 4]
    code, _ = run(capsys, "bounds", tmp_path / "a.csv", "--rank", "9", "--out", tmp_path)
    assert code == cli.EXIT_VALIDATION


def test_numerical_failure_exit_code(tmp_path, capsys, monkeypatch):
    def failing(options):
        raise NumericalError("rotation produced NaN", step=3)

    monkeypatch.setattr(cli, "factor_tool", failing)
    code, report = run(capsys, "factor", tmp_path / "a.csv")
    assert code == cli.EXIT_NUMERICAL
    assert "step 3" in report["message"]


def test_unknown_command():
    code, body = cli.process_command("decompose", {})
    assert code == cli.EXIT_VALIDATION
    assert "decompose" in json.loads(body)["message"]
    with pytest.raises(SystemExit):
        cli.main(["decompose"])
