import numpy as np
import pytest

from bidiag_update.core import BidiagonalMatrix
from bidiag_update.exceptions import ValidationError
from bidiag_update.tracking import (
    FrobeniusAccumulator,
    ReorthPolicy,
    UpdateEvent,
    deflate,
    drift_check,
    incremental_svd_update,
    link_prediction_events,
    load_snapshot,
    project,
    reorthogonalize,
    residual,
    save_snapshot,
    svd_track_init,
    track_init,
    track_update,
)


@pytest.fixture
def rng():
    return np.random.default_rng(13)


def orthonormal(rng, rows, cols):
    Q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return Q


def low_rank_stream(rng, m, n, rank, count):
    """Sparse triples confined to the first `rank` rows."""
    return [
        UpdateEvent.triple(int(rng.integers(rank)), int(rng.integers(n)), float(rng.standard_normal()))
        for _ in range(count)
    ]


def test_init_is_the_zero_matrix():
    tracker = track_init(4, 4, 2)
    assert np.array_equal(tracker.Q, np.eye(4)[:, :2])
    assert np.array_equal(tracker.P, np.eye(4)[:, :2])
    assert np.array_equal(tracker.B.square(), np.zeros((2, 2)))
    assert np.array_equal(tracker.represented(), np.zeros((4, 4)))
    assert residual(tracker, 0.0) == 0.0
    with pytest.raises(ValidationError):
        track_init(4, 3, 4)


def test_single_event_is_captured_exactly(rng):
    tracker = track_init(8, 6, 3)
    b = rng.standard_normal(8)
    c = rng.standard_normal(6)
    track_update(tracker, UpdateEvent(b=b, c=c))
    assert tracker.B.frobenius_norm() == pytest.approx(np.linalg.norm(b) * np.linalg.norm(c), rel=1e-10)
    assert np.allclose(tracker.represented(), np.outer(b, c), atol=1e-10)
    assert tracker.update_count == 1
    assert tracker.r == 3


def test_event_inside_the_span_needs_no_augmentation():
    tracker = track_init(6, 5, 2)
    b = tracker.Q @ np.array([1.0, 2.0])
    c = tracker.P @ np.array([3.0, -1.0])
    track_update(tracker, UpdateEvent(b=b, c=c))
    assert tracker.deflation_loss == 0.0
    assert np.allclose(tracker.represented(), np.outer(b, c), atol=1e-12)
    assert np.allclose(tracker.Q[2:], 0.0)


def test_projection_contracts(rng):
    tracker = track_init(10, 8, 3)
    tracker.Q = orthonormal(rng, 10, 3)
    tracker.P = orthonormal(rng, 8, 3)
    inside = tracker.Q @ rng.standard_normal(3)
    proj = project(tracker, inside, rng.standard_normal(8))
    assert proj.delta <= 1e-12 * np.linalg.norm(inside)

    outside = rng.standard_normal(10)
    outside -= tracker.Q @ (tracker.Q.T @ outside)
    proj = project(tracker, outside, rng.standard_normal(8))
    assert np.all(np.abs(proj.bhat) <= 1e-12 * np.linalg.norm(outside))
    assert proj.delta == pytest.approx(np.linalg.norm(outside))

    b = rng.standard_normal(10)
    c = rng.standard_normal(8)
    proj = project(tracker, b, c)
    assert np.linalg.norm(tracker.Q @ proj.bhat + proj.bperp - b) <= 1e-12 * np.linalg.norm(b)
    assert np.linalg.norm(tracker.P @ proj.chat + proj.cperp - c) <= 1e-12 * np.linalg.norm(c)
    assert np.all(np.abs(tracker.Q.T @ proj.bperp) <= 1e-10 * np.linalg.norm(b))
    with pytest.raises(ValidationError):
        project(tracker, b[:4], c)


def test_exact_rank_stream_has_negligible_residual(rng):
    m, n = 30, 25
    tracker = track_init(m, n, 6)
    A = np.zeros((m, n))
    acc = FrobeniusAccumulator()
    total = 0.0
    for ev in low_rank_stream(rng, m, n, 4, 60):
        track_update(tracker, ev)
        A[ev.i, ev.j] += ev.theta
        total += residual(tracker, acc.add(ev.i, ev.j, ev.theta))
        assert np.linalg.norm(tracker.represented() - A) <= 1e-7 * max(1.0, np.linalg.norm(A))
    assert total <= 1e-8
    assert tracker.deflation_loss <= 1e-16 * max(1.0, np.sum(A**2))


def test_link_prediction_stream_is_tracked():
    rng = np.random.default_rng(3)
    n = 500
    upper = np.triu(rng.random((n, n)) < 0.02, 1).astype(float)
    adjacency = upper + upper.T
    tracker = track_init(n, n, 64)
    A = np.zeros((n, n))
    total = 0.0
    for h, ev in enumerate(link_prediction_events(adjacency, steps=50)):
        track_update(tracker, ev)
        A[:, h] += adjacency[:, h]
        total += residual(tracker, np.linalg.norm(A))
    assert total <= 1e-8
    assert max(tracker.drift_Q, tracker.drift_P) <= 1e-6


def test_over_rank_stream_keeps_rank_and_residual_definition(rng):
    m, n = 12, 10
    tracker = track_init(m, n, 2)
    A = np.zeros((m, n))
    for _ in range(6):
        b = rng.standard_normal(m)
        c = rng.standard_normal(n)
        track_update(tracker, UpdateEvent(b=b, c=c))
        A += np.outer(b, c)
    assert tracker.r == 2
    assert residual(tracker, np.linalg.norm(A)) == pytest.approx(
        abs(np.linalg.norm(A) - np.linalg.norm(tracker.B.square()))
    )
    tail = np.sqrt(np.sum(np.linalg.svd(A, compute_uv=False)[2:] ** 2))
    assert np.linalg.norm(A - tracker.represented()) >= tail - 1e-9


def test_policies_give_the_same_residuals(rng):
    m, n = 20, 18
    events = low_rank_stream(rng, m, n, 3, 40)
    runs = {}
    for name in ("never", "adaptive", "every:5"):
        tracker = track_init(m, n, 5, policy=ReorthPolicy.parse(name))
        acc = FrobeniusAccumulator()
        runs[name] = [residual(track_update(tracker, ev), acc.add(ev.i, ev.j, ev.theta)) for ev in events]
        if name == "every:5":
            assert tracker.reorth_count == 8
    assert runs["never"] == pytest.approx(runs["adaptive"], abs=1e-6)
    assert runs["never"] == pytest.approx(runs["every:5"], abs=1e-6)


def test_reorthogonalize_restores_orthonormality(rng):
    tracker = track_init(15, 12, 4, policy=ReorthPolicy("never"))
    assert drift_check(tracker) == (0.0, 0.0)
    for _ in range(5):
        track_update(tracker, UpdateEvent(b=rng.standard_normal(15), c=rng.standard_normal(12)))
    before = tracker.represented()
    noise = 1e-7 * rng.standard_normal(tracker.Q.shape)
    tracker.Q = tracker.Q + noise
    perturbed = tracker.represented()
    drift_before = max(drift_check(tracker))
    reorthogonalize(tracker)
    assert max(drift_check(tracker)) <= 1e-12 < drift_before
    assert np.allclose(tracker.represented(), perturbed, atol=1e-10)
    change = np.linalg.norm(tracker.represented() - before)
    assert change <= np.linalg.norm(noise) * np.linalg.norm(before) + 1e-10
    assert tracker.reorth_count == 1


def test_drift_check_uses_column_subsets(rng):
    tracker = track_init(40, 40, 10)
    tracker.Q = orthonormal(rng, 40, 10)
    drift_Q, drift_P = drift_check(tracker, subset=4, full_every=3)
    assert drift_Q <= 1e-12 and drift_P == 0.0
    assert tracker.drift_calls == 1


@pytest.mark.parametrize(
    "text, kind, every",
    [("never", "never", 0), ("every:3", "every_k", 3), ("adaptive", "adaptive", 0), ("adaptive:1e-6", "adaptive", 0)],
)
def test_policy_parsing(text, kind, every):
    policy = ReorthPolicy.parse(text)
    assert policy.kind == kind
    assert policy.every == every


@pytest.mark.parametrize("text", ["sometimes", "every:x", "every:0"])
def test_policy_parsing_errors(text):
    with pytest.raises(ValidationError):
        ReorthPolicy.parse(text)


def test_rejected_event_leaves_tracker_unchanged():
    tracker = track_init(5, 5, 2)
    with pytest.raises(ValidationError):
        track_update(tracker, UpdateEvent.triple(7, 0, 1.0))
    with pytest.raises(ValidationError):
        track_update(tracker, UpdateEvent.triple(0, 0, np.nan))
    assert tracker.update_count == 0
    assert np.array_equal(tracker.B.square(), np.zeros((2, 2)))


def deflation_case(rng, alphas, betas):
    B = BidiagonalMatrix(4, 4, alphas, betas)
    Q = orthonormal(rng, 7, 4)
    P = orthonormal(rng, 6, 4)
    return Q, B, P


def represented(Q, B, P):
    return Q @ B.square() @ P.T


def test_deflation_drops_smallest_column(rng):
    Q, B, P = deflation_case(rng, [3.0, 1.0, 2.0, 1.0], [0.5, 0.0, 0.0])
    Qd, Bd, Pd, d, lost = deflate(Q, B, P)
    assert d == 3
    assert lost == pytest.approx(1.0)
    assert Bd.t == 3
    diff = represented(Q, B, P) - represented(Qd, Bd, Pd)
    assert np.linalg.norm(diff) ** 2 == pytest.approx(lost)


def test_deflation_ties_go_to_largest_index(rng):
    _, _, _, d, _ = deflate(*deflation_case(rng, [2.0, 1.0, 2.0, 1.0], [0.0, 0.0, 0.0]))
    assert d == 3


def test_deflation_of_zero_alpha_is_lossless(rng):
    Q, B, P = deflation_case(rng, [3.0, 0.0, 2.0, 0.5], [4.0, 0.0, 0.0])
    Qd, Bd, Pd, d, lost = deflate(Q, B, P)
    assert d == 1
    assert lost == 0.0
    assert np.allclose(represented(Qd, Bd, Pd), represented(Q, B, P), atol=1e-12)
    assert np.allclose(Qd.T @ Qd, np.eye(3), atol=1e-12)


def test_negligible_alpha_wins_over_smallest_column(rng):
    Q, B, P = deflation_case(rng, [3.0, 1e-14, 2.0, 0.5], [4.0, 0.0, 0.0])
    assert np.argmin(B.pair_sums()) == 3
    _, Bd, _, d, lost = deflate(Q, B, P)
    assert d == 1
    assert lost <= 1e-27
    assert Bd.t == 3


def test_interior_deflation_keeps_bidiagonal_structure(rng):
    Q, B, P = deflation_case(rng, [3.0, 0.1, 2.0, 1.5], [1.0, 1.0, 1.0])
    Qd, Bd, Pd, d, lost = deflate(Q, B, P)
    assert d == 1
    diff = represented(Q, B, P) - represented(Qd, Bd, Pd)
    assert np.linalg.norm(diff) ** 2 == pytest.approx(lost)
    assert np.allclose(Pd.T @ Pd, np.eye(3), atol=1e-12)


def test_incremental_svd_agrees_with_bidiagonal_tracker(rng):
    m, n = 50, 40
    tracker = track_init(m, n, 32)
    baseline = svd_track_init(m, n, 32)
    A = np.zeros((m, n))
    for h, ev in enumerate(low_rank_stream(rng, m, n, 30, 200)):
        track_update(tracker, ev)
        incremental_svd_update(baseline, ev)
        A[ev.i, ev.j] += ev.theta
        if h == 0:
            assert np.allclose(tracker.represented(), baseline.represented(), atol=1e-10)
        if h % 25 == 24:
            scale = np.linalg.norm(A)
            assert np.linalg.norm(tracker.represented() - baseline.represented()) <= 1e-7 * scale
    scale = np.linalg.norm(A)
    assert np.linalg.norm(baseline.represented() - A) <= 1e-7 * scale
    assert abs(baseline.frobenius_norm() - scale) <= 1e-8 * max(1.0, scale)


def test_frobenius_accumulator_matches_dense(rng):
    acc = FrobeniusAccumulator()
    A = np.zeros((4, 4))
    for _ in range(30):
        i, j = rng.integers(4, size=2)
        theta = float(rng.standard_normal())
        A[i, j] += theta
        acc.add(int(i), int(j), theta)
    assert acc.norm == pytest.approx(np.linalg.norm(A), rel=1e-12)
    assert acc.recompute() == pytest.approx(np.linalg.norm(A), rel=1e-14)


def test_link_prediction_events_bring_one_column_per_step():
    adjacency = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    events = list(link_prediction_events(adjacency))
    assert len(events) == 3
    b, c = events[1].vectors(3, 3)
    assert np.array_equal(b, adjacency[:, 1])
    assert np.array_equal(c, [0.0, 1.0, 0.0])
    assert len(list(link_prediction_events(adjacency, steps=2))) == 2


def test_snapshot_restores_tracker(rng, tmp_path):
    tracker = track_init(9, 7, 3, policy=ReorthPolicy.parse("every:2"))
    for _ in range(4):
        track_update(tracker, UpdateEvent(b=rng.standard_normal(9), c=rng.standard_normal(7)))
    path = save_snapshot(tracker, tmp_path / "tracker.bin")
    restored = load_snapshot(path)
    assert np.array_equal(restored.Q, tracker.Q)
    assert np.array_equal(restored.P, tracker.P)
    assert np.array_equal(restored.B.alphas, tracker.B.alphas)
    assert restored.update_count == 4
    assert restored.reorth_count == tracker.reorth_count
    (tmp_path / "bad.bin").write_bytes(b"NOTATRACKER" * 8)
    with pytest.raises(ValidationError):
        load_snapshot(tmp_path / "bad.bin")
