import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import grid_minimizer
from cabinloc.channel_sim import generate_dataset, get_profile
from cabinloc.correction import IdentityModel, fit_lr
from cabinloc.geometry import Anchor, Bounds, CabinLayout, Point3, Seat, generate_cabin, true_range
from cabinloc.localization import (
    REPORT_COLUMNS, EvaluationReport, Method, RangeSet, SeatIndex, assign_seat, assignment_threshold,
    axis_accuracy, correction_method, evaluate, linearized_init, localization_error, multilaterate,
    objective, ranging_error, solve_multilateration,
)


def _layout(anchor_pts, seat_pts=((1.0, 1.0),), z_seat=1.0):
    anchors = tuple(Anchor(i, Point3(*p)) for i, p in enumerate(anchor_pts))
    seats = tuple(Seat(f"{k + 1}A", Point3(x, y, z_seat), z_seat, z_seat) for k, (x, y) in enumerate(seat_pts))
    return CabinLayout(anchors, seats, Bounds(-1, 11, -1, 11, 0, 3))


# -- multilateration -------------------------------------------------------------

def test_exact_planar():
    lay = _layout([(0, 0, 1), (10, 0, 1), (0, 10, 1)])
    res = multilaterate(RangeSet(((0, 5.0), (1, math.sqrt(65)), (2, math.sqrt(45))), 1.0), lay)
    assert res.converged
    assert res.estimate == pytest.approx((3.0, 4.0), abs=1e-6)


def test_exact_with_height_offset():
    lay = _layout([(0, 0, 2), (4, 0, 2), (0, 4, 2)])
    rs = RangeSet(((0, math.sqrt(3)), (1, math.sqrt(11)), (2, math.sqrt(11))), 1.0)
    res = multilaterate(rs, lay)
    assert res.converged
    assert res.estimate == pytest.approx((1.0, 1.0), abs=1e-6)


def test_range_set_guards():
    with pytest.raises(ValueError, match="at least 3"):
        RangeSet(((0, 1.0), (1, 1.0)), 0.0)
    with pytest.raises(ValueError, match="non-negative"):
        RangeSet(((0, 1.0), (1, -1.0), (2, 1.0)), 0.0)


def test_collinear_flagged():
    res = solve_multilateration(np.array([[0, 0], [1, 0], [2, 0.0]]), np.zeros(3), np.array([1.0, 1.0, 1.5]))
    assert not res.converged
    _, ok = linearized_init(np.array([[0, 0], [1, 0], [2, 0.0]]), np.zeros(3), np.ones(3))
    assert not ok


def test_iteration_cap_flags_non_convergence():
    a = np.array([[0, 0], [10, 0], [0, 10.0]])
    res = solve_multilateration(a, np.zeros(3), np.array([3.0, 9.0, 4.0]), init=(40.0, -30.0), max_iter=1)
    assert not res.converged


def test_default_cabin_exact_and_noisy(rng):
    lay = generate_cabin(seed=2)
    b = lay.bounds
    a = lay.anchor_positions()
    for _ in range(20):
        tag = np.array([rng.uniform(b.xmin, b.xmax), rng.uniform(b.ymin, b.ymax), rng.uniform(0.3, 1.2)])
        r = np.linalg.norm(a - tag, axis=1)
        res = solve_multilateration(a[:, :2], a[:, 2] - tag[2], r)
        assert res.converged
        assert np.hypot(*(np.array(res.estimate) - tag[:2])) < 1e-6
    for _ in range(5):
        tag = np.array([rng.uniform(b.xmin, b.xmax), rng.uniform(b.ymin, b.ymax), 0.45])
        r = np.linalg.norm(a - tag, axis=1) + rng.uniform(-0.01, 0.01, len(a))
        res = solve_multilateration(a[:, :2], a[:, 2] - tag[2], r)
        ref, _ = grid_minimizer(a[:, :2], a[:, 2] - tag[2], r, (b.xmin, b.xmax, b.ymin, b.ymax))
        assert np.hypot(*(np.array(res.estimate) - ref)) < 0.05


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_descent_property(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 10, (6, 2))
    dz = rng.uniform(0.5, 2, 6)
    r = rng.uniform(0.5, 12, 6)
    init = rng.uniform(0, 10, 2)
    res = solve_multilateration(a, dz, r, init=init)
    assert res.residual <= objective(init, a, dz, r) + 1e-12
    assert res.residual == pytest.approx(objective(res.estimate, a, dz, r), rel=1e-12, abs=1e-15)


def test_converged_means_small_gradient(rng):
    a = rng.uniform(0, 10, (5, 2))
    dz = np.full(5, 1.2)
    r = rng.uniform(2, 9, 5)
    res = solve_multilateration(a, dz, r)
    assert res.converged
    scale = (np.abs(2 * (np.array(res.estimate) - a)).sum(1) @ (r**2 + dz**2))
    assert res.gradient_norm <= 1e-10 * scale * 1e3


# -- metrics ----------------------------------------------------------------------

@pytest.mark.parametrize("m,t,e", [(10.3, 10.0, 0.3), (7.0, 7.0, 0.0), (9.7, 10.0, 0.3)])
def test_ranging_error(m, t, e):
    assert ranging_error(m, t) == pytest.approx(e, abs=1e-12)


def test_ranging_error_vectorized():
    np.testing.assert_allclose(ranging_error([1.0, 2.0], [1.5, 1.0]), [0.5, 1.0])


@pytest.mark.parametrize("a,b,e", [((3, 4), (0, 0), 5.0), ((2, 2), (2, 2), 0.0), ((1, 1), (4, 5), 5.0)])
def test_localization_error(a, b, e):
    assert localization_error(a, b) == pytest.approx(e, abs=1e-12)


# -- seats ------------------------------------------------------------------------

def test_assign_exact_and_tie():
    lay = generate_cabin(rows=6, columns="AB")
    s5a, s5b = lay.seat("5A"), lay.seat("5B")
    assert assign_seat(s5a.position.xy, lay) == "5A"
    mid = ((s5a.position.x + s5b.position.x) / 2, (s5a.position.y + s5b.position.y) / 2)
    assert assign_seat(mid, lay) == "5A"


def test_threshold_examples():
    assert assignment_threshold(_layout([(0, 0, 2), (4, 0, 2), (0, 4, 2)], [(1, 1), (2, 1)])) == pytest.approx(0.5)
    grid = generate_cabin(rows=5, columns="ABCD", pitch=0.8, width_spacing=0.5)
    assert assignment_threshold(grid) == pytest.approx(0.25, abs=1e-12)
    assert 0.2 <= assignment_threshold(generate_cabin()) <= 0.25
    with pytest.raises(ValueError):
        assignment_threshold(generate_cabin(rows=1, columns="A"))


def test_within_threshold_assigns_correctly(rng):
    lay = generate_cabin()
    idx = SeatIndex(lay)
    thr = assignment_threshold(lay)
    ang = rng.uniform(0, 2 * np.pi, 20)
    for seat in lay.seats:
        x, y = seat.position.xy
        for t in ang:
            rad = thr * (1 - 1e-9) * rng.uniform(0, 1)
            assert idx.assign((x + rad * np.cos(t), y + rad * np.sin(t))) == seat.label


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 25), st.floats(-3, 3), st.floats(-100, 100), st.floats(-100, 100))
def test_assignment_translation_equivariant(x, y, tx, ty):
    lay = generate_cabin(rows=5, columns="ABCD")
    moved = CabinLayout(
        tuple(Anchor(a.id, Point3(a.position.x + tx, a.position.y + ty, a.position.z)) for a in lay.anchors),
        tuple(Seat(s.label, Point3(s.position.x + tx, s.position.y + ty, s.position.z), s.seat_z, s.headrest_z)
              for s in lay.seats),
        Bounds(lay.bounds.xmin + tx, lay.bounds.xmax + tx, lay.bounds.ymin + ty, lay.bounds.ymax + ty,
               lay.bounds.zmin, lay.bounds.zmax))
    a = assign_seat((x, y), lay)
    b = assign_seat((x + tx, y + ty), moved)
    if a != b:
        # only allowed at a rounding-level tie
        sa, sb = lay.seat(a), lay.seat(b)
        da = math.dist((x, y), sa.position.xy)
        db = math.dist((x, y), sb.position.xy)
        assert abs(da - db) < 1e-9


def test_axis_accuracy_examples():
    assert axis_accuracy([("1A", "1A"), ("2B", "2B")]) == (1.0, 1.0, 1.0)
    assert axis_accuracy([("5A", "5B")] * 3) == (1.0, 0.0, 0.0)
    assert axis_accuracy([("5A", "6A"), ("5A", "5A")]) == (0.5, 1.0, 0.5)
    with pytest.raises(ValueError):
        axis_accuracy([])


@given(st.lists(st.tuples(st.sampled_from(["1A", "1B", "2A", "2B"]), st.sampled_from(["1A", "1B", "2A", "2B"])),
                min_size=1))
def test_seat_accuracy_bounded_by_axes(pairs):
    x, y, s = axis_accuracy(pairs)
    assert s <= min(x, y)


# -- evaluation -----------------------------------------------------------------------

def _noiseless(dataset):
    from dataclasses import replace
    recs = [replace(r, samples=tuple(replace(s, measured_range=s.true_range) for s in r.samples)) for r in dataset]
    return dataset.with_records(recs)


def test_noiseless_raw_is_perfect(small_dataset):
    report = evaluate(_noiseless(small_dataset), [correction_method("raw", IdentityModel())])
    for row in report.rows:
        if row.metric == "seat_assignment":
            assert (row.seat_accuracy, row.x_accuracy, row.y_accuracy) == (1.0, 1.0, 1.0)
        else:
            assert row.mean < 1e-9 and row.q95 < 1e-9


def test_report_structure_and_quantiles(small_dataset, tmp_path):
    methods = [correction_method("raw", IdentityModel()), correction_method("lr", fit_lr(small_dataset))]
    report = evaluate(small_dataset, methods)
    keys = {(r.method, r.placement, r.metric) for r in report.rows}
    assert len(keys) == len(report.rows)
    for m in ("raw", "lr"):
        for p in ("seat", "headrest", "all"):
            for metric in ("ranging_error", "localization_error", "seat_assignment"):
                assert (m, p, metric) in keys
    for r in report.rows:
        if r.median is not None:
            assert r.median <= r.q90 <= r.q95
        if r.seat_accuracy is not None:
            assert 0 <= r.seat_accuracy <= min(r.x_accuracy, r.y_accuracy) <= 1
    n_test = len(small_dataset.split("test"))
    assert report.get("raw", "all", "seat_assignment").count == n_test

    report.to_csv(tmp_path / "r.csv")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == ",".join(REPORT_COLUMNS)
    assert EvaluationReport.from_csv(tmp_path / "r.csv") == report
    report.to_json(tmp_path / "r.json")


def test_evaluate_guards(small_dataset):
    train_only = small_dataset.with_records(small_dataset.split("train"))
    with pytest.raises(ValueError, match="empty"):
        evaluate(train_only, [correction_method("raw", IdentityModel())])
    with pytest.raises(ValueError, match="no fitted model"):
        evaluate(small_dataset, [correction_method("lr", None)])


def test_evaluate_uses_test_records_only(small_dataset):
    seen = []

    def predict(rec):
        seen.append(rec.split)
        return small_dataset.layout.seats[0].label

    evaluate(small_dataset, [Method("probe", "seat", predict)])
    assert set(seen) == {"test"}


def test_lr_beats_raw_on_aircraft():
    ds = generate_dataset(generate_cabin(rows=10), get_profile("aircraft"), repetitions=10, seed=4)
    rep = evaluate(ds, [correction_method("raw", IdentityModel()), correction_method("lr", fit_lr(ds))])
    assert rep.get("lr", "all", "localization_error").mean < rep.get("raw", "all", "localization_error").mean
    assert rep.get("lr", "all", "ranging_error").mean < rep.get("raw", "all", "ranging_error").mean
