import numpy as np
import pytest

from bidiag_update import profiles
from bidiag_update.exceptions import ValidationError
from bidiag_update.profiles import (
    BENCH_METHODS,
    TAU_GRID,
    matrix_density,
    performance_profile,
    run_update_benchmark,
    synthetic_problem,
)


def test_synthetic_problem_is_reproducible():
    A = synthetic_problem(30, density=0.1, seed=4)
    assert A.shape == (30, 30)
    assert np.all(A.diagonal() >= 1.0)
    assert (A != synthetic_problem(30, density=0.1, seed=4)).nnz == 0
    assert synthetic_problem(10, seed=1, m=25).shape == (25, 10)


def test_matrix_density():
    assert matrix_density(np.eye(4)) == pytest.approx(0.25)
    A = synthetic_problem(20, density=0.0)
    assert matrix_density(A) == pytest.approx(20 / 400)


@pytest.mark.parametrize("method", BENCH_METHODS)
def test_benchmark_residual_is_small(method):
    for A in (synthetic_problem(25, seed=2), synthetic_problem(8, seed=3, m=5)):
        result = run_update_benchmark(A, method, seed=1)
        assert result["seconds"] >= 0.0
        assert result["residual"] <= 1e-10 * max(1.0, np.linalg.norm(A.toarray()))
        assert result["mult_count"] > 0


def test_benchmark_rejects_unknown_method():
    with pytest.raises(ValidationError):
        run_update_benchmark(np.eye(3), "qr")


def test_single_problem_profile():
    profile = performance_profile({"p": {"bgu": 1.0, "bhu": 3.0, "dense": 2.0}}, BENCH_METHODS, [1.0, 2.0, 4.0])
    assert profile["bgu"] == [1.0, 1.0, 1.0]
    assert profile["dense"] == [0.0, 1.0, 1.0]
    assert profile["bhu"] == [0.0, 0.0, 1.0]


def test_failures_never_count():
    times = {"p": {"bgu": 1.0, "bhu": np.inf}, "q": {"bgu": 2.0, "bhu": 1.0}}
    profile = performance_profile(times, ["bgu", "bhu"], [1.0, 2.0, 1e6])
    assert profile["bgu"] == [0.5, 1.0, 1.0]
    assert profile["bhu"] == [0.5, 0.5, 0.5]


def test_empty_profile_is_zero():
    profile = performance_profile({}, ["bgu"])
    assert profile["bgu"] == [0.0] * len(TAU_GRID)
    assert TAU_GRID[0] == 1.0


@pytest.mark.parametrize("method", ["bgu", "bhu"])
def test_benchmark_times_the_band_update_only(method, monkeypatch):
    def forbidden(*args):
        raise AssertionError("explicit factors built during a band benchmark")

    monkeypatch.setattr(profiles, "band_factors", forbidden)
    result = run_update_benchmark(synthetic_problem(30, seed=5), method, seed=2)
    assert "factor_seconds" not in result
    assert result["residual"] <= 1e-10 * 30


@pytest.mark.parametrize("method", ["bgu", "bhu"])
def test_benchmark_reports_factor_cost_separately(method):
    result = run_update_benchmark(synthetic_problem(20, seed=6), method, seed=3, with_factors=True)
    assert result["factor_seconds"] >= 0.0
    assert result["mult_count"] > 0
