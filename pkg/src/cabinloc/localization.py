"""Multilateration, error metrics, seat assignment and evaluation reports."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .channel_sim import Dataset, Record
from .geometry import PLACEMENTS, CabinLayout, parse_seat_label

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RangeSet:
    """Corrected ranges to a set of anchors for one tag placement height."""

    entries: tuple[tuple[int, float], ...]
    placement_z: float

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((int(a), float(r)) for a, r in self.entries))
        if len(self.entries) < 3:
            raise ValueError("2D multilateration needs ranges to at least 3 anchors")
        if any(r < 0 for _, r in self.entries):
            raise ValueError("ranges must be non-negative")


@dataclass(frozen=True)
class LocalizationResult:
    estimate: tuple[float, float]
    residual: float
    iterations: int
    converged: bool
    gradient_norm: float = 0.0


def objective(xy, anchor_xy: np.ndarray, dz: np.ndarray, r: np.ndarray) -> float:
    """Sum of squared range-squared residuals at ``xy``."""
    f = ((np.asarray(xy) - anchor_xy) ** 2).sum(-1) + dz**2 - r**2
    return float(f @ f)


def linearized_init(anchor_xy: np.ndarray, dz: np.ndarray, r: np.ndarray,
                    cond_limit: float = 1e8) -> tuple[np.ndarray, bool]:
    """Closed-form start from differencing every equation against the first.

    Returns ``(xy, ok)``; ``ok`` is False for (near-)collinear anchors, in
    which case the anchor centroid is returned.
    """
    a0 = anchor_xy[0]
    A = 2.0 * (anchor_xy[1:] - a0)
    c = (anchor_xy**2).sum(-1) + dz**2 - r**2
    b = c[1:] - c[0]
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.size < 2 or sv[-1] <= sv[0] / cond_limit:
        return anchor_xy.mean(axis=0), False
    xy, *_ = np.linalg.lstsq(A, b, rcond=None)
    return xy, True


def solve_multilateration(anchor_xy, dz, r, init=None, *, max_iter: int = 100,
                          tol: float = 1e-10) -> LocalizationResult:
    """Damped Gauss-Newton (Levenberg-Marquardt) on the quartic objective.

    Residuals ``f_i = |p - a_i|^2 + dz_i^2 - r_i^2``. The normal matrix gets
    the exact second-order term ``2 * sum(f_i) * I`` whenever that keeps it
    positive definite. Convergence requires the
    objective gradient ``2 J^T f`` to fall below ``tol`` times the scale of
    the terms it sums (``sum |J_i| * r_i^2``, floored at 1), which keeps the
    test meaningful for cabin-sized coordinates where rounding in ``r^2``
    sets the attainable floor.
    """
    anchor_xy = np.asarray(anchor_xy, dtype=float)
    dz = np.asarray(dz, dtype=float)
    r = np.asarray(r, dtype=float)
    if anchor_xy.shape[0] < 3:
        raise ValueError("2D multilateration needs at least 3 anchors")

    well_posed = True
    if init is None:
        p, well_posed = linearized_init(anchor_xy, dz, r)
    else:
        p = np.asarray(init, dtype=float).copy()
        _, well_posed = linearized_init(anchor_xy, dz, r)

    def residuals(q):
        d = q - anchor_xy
        return (d * d).sum(-1) + dz**2 - r**2, 2.0 * d

    f, J = residuals(p)
    cost = float(f @ f)
    lam = None
    grad_norm = math.inf
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        g = J.T @ f
        grad_norm = 2.0 * float(np.linalg.norm(g))
        scale = max(1.0, float(np.abs(J).sum(-1) @ (r**2 + dz**2)))
        if grad_norm <= tol * scale:
            converged = True
            break
        H = J.T @ J
        # each f_i has Hessian 2I; adding that term restores Newton's rate on
        # large-residual problems where plain Gauss-Newton crawls
        curv = 2.0 * float(f.sum())
        if np.linalg.eigvalsh(H)[0] + curv > 0:
            H = H + curv * np.eye(2)
        if lam is None:
            lam = 1e-3 * float(np.trace(H)) / 2
        improved = False
        for _ in range(30):
            step = np.linalg.solve(H + lam * np.eye(2), -g)
            p_new = p + step
            f_new, J_new = residuals(p_new)
            cost_new = float(f_new @ f_new)
            if cost_new < cost:
                p, f, J, cost = p_new, f_new, J_new, cost_new
                lam = max(lam / 3.0, 1e-12)
                improved = True
                break
            lam *= 4.0
        if not improved:
            # no descent direction left at working precision
            g = J.T @ f
            grad_norm = 2.0 * float(np.linalg.norm(g))
            converged = grad_norm <= tol * scale * 1e3
            break
    else:
        g = J.T @ f
        grad_norm = 2.0 * float(np.linalg.norm(g))
    return LocalizationResult((float(p[0]), float(p[1])), cost, it, bool(converged and well_posed),
                              grad_norm)


def multilaterate(ranges: RangeSet, layout: CabinLayout, init=None, **kwargs) -> LocalizationResult:
    """Estimate the tag's 2D position from corrected ranges at a known height."""
    ids = [a for a, _ in ranges.entries]
    pos = layout.anchor_positions(ids)
    r = np.array([v for _, v in ranges.entries])
    dz = pos[:, 2] - ranges.placement_z
    return solve_multilateration(pos[:, :2], dz, r, init, **kwargs)


def ranging_error(measured, true):
    return np.abs(np.asarray(measured, dtype=float) - np.asarray(true, dtype=float)) \
        if np.ndim(measured) else abs(float(measured) - float(true))


def localization_error(estimate, true) -> float:
    return math.hypot(estimate[0] - true[0], estimate[1] - true[1])


class SeatIndex:
    """Nearest-seat lookup with lexicographic tie-break on labels."""

    def __init__(self, layout: CabinLayout):
        if not layout.seats:
            raise ValueError("layout has no seats")
        order = sorted(range(len(layout.seats)), key=lambda i: layout.seats[i].label)
        self.labels = [layout.seats[i].label for i in order]
        self.xy = np.array([layout.seats[i].position.xy for i in order])

    def assign(self, estimate) -> str:
        d = np.sqrt(((self.xy - np.asarray(estimate, dtype=float)) ** 2).sum(-1))
        # distances equal up to rounding count as ties; first hit is the
        # lexicographically smallest label
        ties = np.flatnonzero(d <= d.min() + 1e-12)
        return self.labels[int(ties[0])]


def assign_seat(estimate, layout: CabinLayout) -> str:
    return SeatIndex(layout).assign(estimate)


def assignment_threshold(layout: CabinLayout) -> float:
    """Half the minimum pairwise 2D seat distance.

    Any estimate closer than this to its true seat is strictly closer to it
    than to every other seat.
    """
    if len(layout.seats) < 2:
        raise ValueError("threshold needs at least two seats")
    xy = layout.seat_xy()
    best = math.inf
    for i in range(len(xy) - 1):
        d = np.sqrt(((xy[i + 1:] - xy[i]) ** 2).sum(-1)).min()
        best = min(best, float(d))
    return best / 2.0


def axis_accuracy(assignments: Sequence[tuple[str, str]]) -> tuple[float, float, float]:
    """(row-axis accuracy, letter-axis accuracy, seat accuracy)."""
    if not assignments:
        raise ValueError("no assignments to score")
    x_ok = y_ok = both = 0
    for true_label, got in assignments:
        tr, tc = parse_seat_label(true_label)
        gr, gc = parse_seat_label(got)
        x_ok += tr == gr
        y_ok += tc == gc
        both += tr == gr and tc == gc
    n = len(assignments)
    return x_ok / n, y_ok / n, both / n


# -- evaluation ---------------------------------------------------------------

@dataclass
class Method:
    """A localization pipeline evaluated on test records.

    ``output`` is one of ``"ranges"`` (predict returns ``{anchor_id: range}``,
    then multilateration), ``"coords"`` (returns ``(x, y)``) or ``"seat"``
    (returns a seat label).
    """

    name: str
    output: str
    predict: Callable[[Record], object]
    trained: bool = True

    def __post_init__(self):
        if self.output not in ("ranges", "coords", "seat"):
            raise ValueError(f"unknown method output {self.output!r}")


def correction_method(name: str, model) -> Method:
    """Range pipeline from a per-sample corrector (``model.correct(sample)``)."""
    if model is None:
        return Method(name, "ranges", lambda rec: None, trained=False)

    def predict(rec: Record):
        return {s.anchor_id: float(model.correct(s)) for s in rec.samples}

    return Method(name, "ranges", predict)


REPORT_COLUMNS = ["method", "placement", "metric", "count", "mean", "median", "q90", "q95",
                  "seat_accuracy", "x_accuracy", "y_accuracy"]


@dataclass
class ReportRow:
    method: str
    placement: str
    metric: str
    count: int
    mean: float | None = None
    median: float | None = None
    q90: float | None = None
    q95: float | None = None
    seat_accuracy: float | None = None
    x_accuracy: float | None = None
    y_accuracy: float | None = None


def error_stats(errors) -> dict:
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("no errors to summarize")
    return {"count": int(e.size), "mean": float(e.mean()), "median": float(np.median(e)),
            "q90": float(np.quantile(e, 0.90)), "q95": float(np.quantile(e, 0.95))}


@dataclass
class EvaluationReport:
    rows: list[ReportRow] = field(default_factory=list)

    def get(self, method: str, placement: str, metric: str) -> ReportRow:
        for row in self.rows:
            if (row.method, row.placement, row.metric) == (method, placement, metric):
                return row
        raise KeyError((method, placement, metric))

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
            w.writeheader()
            for row in self.rows:
                w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v))
                            for k, v in asdict(row).items()})

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"columns": REPORT_COLUMNS,
                                          "rows": [asdict(r) for r in self.rows]}, indent=2) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "EvaluationReport":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != REPORT_COLUMNS:
                raise ValueError(f"unexpected report columns {reader.fieldnames}")
            for d in reader:
                kw = {k: (None if d[k] == "" else float(d[k])) for k in REPORT_COLUMNS[4:]}
                rows.append(ReportRow(d["method"], d["placement"], d["metric"], int(d["count"]), **kw))
        return cls(rows)


def _range_set(rec: Record, ranges: dict, placement_z: float) -> RangeSet:
    return RangeSet(tuple(sorted((a, max(r, 0.0)) for a, r in ranges.items())), placement_z)


def evaluate(dataset: Dataset, methods: Sequence[Method]) -> EvaluationReport:
    """Ranging, localization and seat-assignment statistics on the test split.

    Rows are emitted per method x placement (each placement plus ``"all"``) x
    metric, where metric is ``ranging_error`` (range methods only),
    ``localization_error`` (range and coordinate methods) or
    ``seat_assignment``.
    """
    layout = dataset.layout
    test = dataset.split("test")
    if not test:
        raise ValueError("test split is empty; nothing to evaluate")
    for m in methods:
        if not m.trained:
            raise ValueError(f"method {m.name!r} has no fitted model")
    seats = SeatIndex(layout)
    placements = [p for p in PLACEMENTS if any(r.placement == p for r in test)]

    report = EvaluationReport()
    for m in methods:
        rng_err: dict[str, list[float]] = {p: [] for p in placements}
        loc_err: dict[str, list[float]] = {p: [] for p in placements}
        assigned: dict[str, list[tuple[str, str]]] = {p: [] for p in placements}
        unconverged = 0
        for rec in test:
            tag = dataset.tag_position(rec)
            out = m.predict(rec)
            if m.output == "seat":
                label = str(out)
            else:
                if m.output == "ranges":
                    truth = {s.anchor_id: s.true_range for s in rec.samples}
                    rng_err[rec.placement].extend(abs(out[a] - truth[a]) for a in sorted(out))
                    res = multilaterate(_range_set(rec, out, tag.z), layout)
                    unconverged += not res.converged
                    xy = res.estimate
                else:
                    xy = (float(out[0]), float(out[1]))
                loc_err[rec.placement].append(localization_error(xy, tag.xy))
                label = seats.assign(xy)
            assigned[rec.placement].append((rec.seat, label))
        if unconverged:
            log.warning("%s: %d multilateration solves did not converge", m.name, unconverged)

        for p in placements + ["all"]:
            keys = placements if p == "all" else [p]
            if m.output == "ranges":
                e = [v for k in keys for v in rng_err[k]]
                report.rows.append(ReportRow(m.name, p, "ranging_error", **error_stats(e)))
            if m.output in ("ranges", "coords"):
                e = [v for k in keys for v in loc_err[k]]
                report.rows.append(ReportRow(m.name, p, "localization_error", **error_stats(e)))
            pairs = [v for k in keys for v in assigned[k]]
            xa, ya, sa = axis_accuracy(pairs)
            report.rows.append(ReportRow(m.name, p, "seat_assignment", len(pairs),
                                         seat_accuracy=sa, x_accuracy=xa, y_accuracy=ya))
    return report
