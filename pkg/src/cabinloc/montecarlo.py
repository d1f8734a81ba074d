"""Monte Carlo improvement studies on top of the LR + multilateration pipeline.

Two studies:

* anchors - add virtual anchors with Johnson S_U ranging noise and keep the
  best per-position localization error over several random placements
* scaling - shrink every measured ranging error by a factor ``alpha``
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel_sim import Dataset, Record, substream
from .correction import LinearModel, fit_lr
from .geometry import PLACEMENTS, Bounds, CabinLayout
from .johnson import JohnsonSuParams, fit_johnson_su, transform_normal
from .localization import error_stats, localization_error, solve_multilateration

RESULT_COLUMNS = ["study", "parameter", "placement", "mean", "median", "q90", "q95", "runs"]


@dataclass(frozen=True)
class AugmentationConfig:
    """Virtual-anchor study settings.

    Attributes:
        extra_anchor_counts: numbers of virtual anchors to try.
        runs_per_count: random placements per count; the best error per
            position is kept.
        noise: ranging-error distribution for virtual anchors.
        seed: root of the run substreams.
        region: placement footprint; defaults to the layout bounds.
    """

    extra_anchor_counts: tuple[int, ...] = (0, 5, 11, 22)
    runs_per_count: int = 10
    noise: JohnsonSuParams | None = None
    seed: int = 0
    region: Bounds | None = None

    def __post_init__(self):
        object.__setattr__(self, "extra_anchor_counts", tuple(int(c) for c in self.extra_anchor_counts))
        if any(c < 0 for c in self.extra_anchor_counts):
            raise ValueError("extra anchor counts must be >= 0")
        if self.runs_per_count < 1:
            raise ValueError("runs_per_count must be >= 1")


@dataclass(frozen=True)
class ScalingConfig:
    alphas: tuple[float, ...] = tuple(round(0.1 * k, 1) for k in range(1, 11))
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if not self.alphas or any(not (0.0 < a <= 1.0) for a in self.alphas):
            raise ValueError("every alpha must lie in (0, 1]")


@dataclass(frozen=True)
class StudyRow:
    study: str
    parameter: float
    placement: str
    mean: float
    median: float
    q90: float
    q95: float
    runs: int


@dataclass
class StudyResult:
    rows: list[StudyRow] = field(default_factory=list)

    def get(self, parameter: float, placement: str = "all") -> StudyRow:
        for row in self.rows:
            if row.parameter == parameter and row.placement == placement:
                return row
        raise KeyError((parameter, placement))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_COLUMNS)
            for r in self.rows:
                param = int(r.parameter) if r.study == "anchors" else repr(r.parameter)
                w.writerow([r.study, param, r.placement, repr(r.mean), repr(r.median),
                            repr(r.q90), repr(r.q95), r.runs])

    @classmethod
    def from_csv(cls, path: str | Path) -> "StudyResult":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != RESULT_COLUMNS:
                raise ValueError(f"unexpected result columns {reader.fieldnames}")
            return cls([StudyRow(d["study"], float(d["parameter"]), d["placement"],
                                 *(float(d[k]) for k in ("mean", "median", "q90", "q95")),
                                 int(d["runs"])) for d in reader])


def _lr_errors(dataset: Dataset, model: LinearModel) -> np.ndarray:
    return np.array([model.correct(s) - s.true_range
                     for rec in dataset.split("test") for s in rec.samples])


def fit_base_noise(dataset: Dataset, lr_model: LinearModel | None = None,
                   min_samples: int = 100) -> JohnsonSuParams:
    """Johnson S_U fit of signed LR-corrected ranging errors on the test split."""
    model = lr_model if lr_model is not None else fit_lr(dataset)
    return fit_johnson_su(_lr_errors(dataset, model), min_samples=min_samples)


def _stats_rows(study: str, parameter: float, errors: dict[str, list[float]], runs: int) -> list[StudyRow]:
    placements = [p for p in PLACEMENTS if errors.get(p)]
    rows = []
    for p in placements + ["all"]:
        keys = placements if p == "all" else [p]
        s = error_stats([v for k in keys for v in errors[k]])
        rows.append(StudyRow(study, parameter, p, s["mean"], s["median"], s["q90"], s["q95"], runs))
    return rows


def _base_arrays(rec: Record, layout: CabinLayout, model: LinearModel, placement_z: float):
    # same ordering and clamping as the evaluation pipeline, so 0 extra anchors
    # reproduces it exactly
    ranges = sorted((s.anchor_id, max(float(model.correct(s)), 0.0)) for s in rec.samples)
    pos = layout.anchor_positions([a for a, _ in ranges])
    r = np.array([v for _, v in ranges])
    return pos[:, :2], pos[:, 2] - placement_z, r


def virtual_anchor_positions(region: Bounds, height: float, count: int,
                             rng: np.random.Generator) -> np.ndarray:
    """``count`` points uniform over the region footprint at ``height``."""
    xy = rng.uniform([region.xmin, region.ymin], [region.xmax, region.ymax], size=(count, 2))
    return np.column_stack([xy, np.full(count, float(height))])


def simulate_added_anchors(layout: CabinLayout, dataset: Dataset, config: AugmentationConfig,
                           lr_model: LinearModel | None = None) -> StudyResult:
    """Keep-best localization error with extra simulated anchors.

    Run ``k`` draws its virtual anchor positions from substream ``(2, k)`` and
    per-record noise from ``(3, k, record)``; smaller counts use a prefix of
    the same draws, so counts and runs are nested.
    """
    model = lr_model if lr_model is not None else fit_lr(dataset)
    noise = config.noise if config.noise is not None else fit_base_noise(dataset, model)
    region = config.region if config.region is not None else layout.bounds
    height = max(a.position.z for a in layout.anchors)
    test = dataset.split("test")
    if not test:
        raise ValueError("test split is empty")
    counts = config.extra_anchor_counts
    n_max = max(counts) if counts else 0

    tags = [dataset.tag_position(rec) for rec in test]
    base = [_base_arrays(rec, layout, model, tag.z) for rec, tag in zip(test, tags)]
    best = {c: np.full(len(test), np.inf) for c in counts}
    for k in range(config.runs_per_count):
        virt = virtual_anchor_positions(region, height, n_max, substream(config.seed, 2, k))
        for i, (rec, tag) in enumerate(zip(test, tags)):
            a_xy, dz, r = base[i]
            t = tag.as_array()
            true_r = np.linalg.norm(virt - t, axis=1)
            z = substream(config.seed, 3, k, i).standard_normal(n_max)
            meas = np.maximum(true_r + transform_normal(noise, z), 0.0)
            vdz = virt[:, 2] - tag.z
            for c in counts:
                res = solve_multilateration(np.vstack([a_xy, virt[:c, :2]]),
                                            np.concatenate([dz, vdz[:c]]),
                                            np.concatenate([r, meas[:c]]))
                err = localization_error(res.estimate, tag.xy)
                if err < best[c][i]:
                    best[c][i] = err

    result = StudyResult()
    for c in counts:
        errors: dict[str, list[float]] = {p: [] for p in PLACEMENTS}
        for rec, e in zip(test, best[c]):
            errors[rec.placement].append(float(e))
        result.rows.extend(_stats_rows("anchors", float(c), errors, config.runs_per_count))
    return result


def scale_errors(dataset: Dataset, alpha: float) -> Dataset:
    """Dataset with every measured range replaced by ``true + alpha * (measured - true)``."""
    records = []
    for rec in dataset:
        samples = tuple(replace(s, measured_range=s.true_range + alpha * (s.measured_range - s.true_range))
                        for s in rec.samples)
        records.append(replace(rec, samples=samples))
    return dataset.with_records(records)


def _lr_localization_errors(dataset: Dataset, model: LinearModel) -> dict[str, list[float]]:
    errors: dict[str, list[float]] = {p: [] for p in PLACEMENTS}
    for rec in dataset.split("test"):
        tag = dataset.tag_position(rec)
        res = solve_multilateration(*_base_arrays(rec, dataset.layout, model, tag.z))
        errors[rec.placement].append(localization_error(res.estimate, tag.xy))
    return errors


def simulate_error_scaling(dataset: Dataset, config: ScalingConfig) -> StudyResult:
    """Localization statistics after scaling ranging errors by each alpha (LR refit per alpha)."""
    if not dataset.split("test"):
        raise ValueError("test split is empty")
    result = StudyResult()
    for alpha in config.alphas:
        scaled = dataset if alpha == 1.0 else scale_errors(dataset, alpha)
        errors = _lr_localization_errors(scaled, fit_lr(scaled))
        result.rows.extend(_stats_rows("scaling", alpha, errors, 1))
    return result


def baseline_stats(dataset: Dataset, lr_model: LinearModel | None = None) -> StudyResult:
    """Unmodified LR pipeline, reported in the study result format."""
    model = lr_model if lr_model is not None else fit_lr(dataset)
    return StudyResult(_stats_rows("baseline", 0.0, _lr_localization_errors(dataset, model), 1))
