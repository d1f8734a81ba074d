"""Per-anchor ranging corrections fitted on the train split.

Three correctors share a tiny interface (``correct(sample) -> meters``):

* :class:`OffsetModel` - ``range + o_i``
* :class:`LinearModel` - ``range * a_i + b_i``
* :class:`RssiModel` - cubic first-path-power -> distance map, used as the
  power-based baseline estimator (ignores the UWB range entirely)
"""

from __future__ import annotations

import json
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel_sim import Dataset, RangingSample
from .ranging import fit_rssi_poly, rssi_distance_estimate


def _train_samples(dataset: Dataset, split: str) -> dict[int, list[RangingSample]]:
    if split != "train":
        raise ValueError("correction models are fitted on the train split only")
    by_anchor: dict[int, list[RangingSample]] = defaultdict(list)
    for rec in dataset.split("train"):
        for s in rec.samples:
            by_anchor[s.anchor_id].append(s)
    for aid in dataset.layout.anchor_ids:
        if not by_anchor.get(aid):
            raise ValueError(f"anchor {aid} has no train samples")
    return by_anchor


@dataclass(frozen=True)
class OffsetModel:
    offsets: dict[int, float]

    kind = "offset"

    def correct(self, sample: RangingSample) -> float:
        return apply_offset(self, sample)

    def to_dict(self) -> dict:
        return {"type": "offset",
                "params": {str(k): {"o": v} for k, v in sorted(self.offsets.items())}}


@dataclass(frozen=True)
class LinearModel:
    params: dict[int, tuple[float, float]]

    kind = "lr"

    def correct(self, sample: RangingSample) -> float:
        return apply_lr(self, sample)

    def to_dict(self) -> dict:
        return {"type": "lr",
                "params": {str(k): {"a": a, "b": b} for k, (a, b) in sorted(self.params.items())}}


@dataclass(frozen=True)
class RssiModel:
    coeffs: tuple[float, ...]

    kind = "rssi"

    def correct(self, sample: RangingSample) -> float:
        return rssi_distance_estimate(sample.first_path_power, self.coeffs)

    def to_dict(self) -> dict:
        return {"type": "rssi", "params": {"coeffs": list(self.coeffs)}}


class IdentityModel:
    """Raw ranges, no correction."""

    kind = "raw"

    def correct(self, sample: RangingSample) -> float:
        return sample.measured_range


def offset_from_arrays(anchor_ids, measured, true) -> OffsetModel:
    anchor_ids = np.asarray(anchor_ids)
    resid = np.asarray(true, dtype=float) - np.asarray(measured, dtype=float)
    return OffsetModel({int(a): float(resid[anchor_ids == a].mean()) for a in np.unique(anchor_ids)})


def lr_from_arrays(anchor_ids, measured, true) -> LinearModel:
    """Per-anchor OLS of true range on measured range."""
    anchor_ids = np.asarray(anchor_ids)
    measured = np.asarray(measured, dtype=float)
    true = np.asarray(true, dtype=float)
    params = {}
    for aid in np.unique(anchor_ids):
        m = measured[anchor_ids == aid]
        t = true[anchor_ids == aid]
        if m.size < 2:
            raise ValueError(f"anchor {aid} needs at least 2 samples for a linear fit")
        mc = m - m.mean()
        ss = float(mc @ mc)
        if ss <= 1e-12 * max(1.0, float(m.mean()) ** 2) * m.size:
            raise ValueError(f"anchor {aid}: measured ranges are constant, slope undefined")
        a = float(mc @ (t - t.mean())) / ss
        b = float(t.mean() - a * m.mean())
        if not a > 0:
            warnings.warn(f"anchor {aid}: non-positive LR slope {a:.4g}", RuntimeWarning, stacklevel=2)
        params[int(aid)] = (a, b)
    return LinearModel(params)


def _flatten(by_anchor: dict[int, list[RangingSample]]):
    ids, meas, true = [], [], []
    for aid, samples in sorted(by_anchor.items()):
        for s in samples:
            ids.append(aid)
            meas.append(s.measured_range)
            true.append(s.true_range)
    return np.array(ids), np.array(meas), np.array(true)


def fit_offset(dataset: Dataset, split: str = "train") -> OffsetModel:
    """Mean residual ``true - measured`` per anchor (least-squares offset)."""
    return offset_from_arrays(*_flatten(_train_samples(dataset, split)))


def fit_lr(dataset: Dataset, split: str = "train") -> LinearModel:
    return lr_from_arrays(*_flatten(_train_samples(dataset, split)))


def fit_rssi(dataset: Dataset, split: str = "train", degree: int = 3) -> RssiModel:
    """Pooled power -> distance polynomial over all train samples."""
    by_anchor = _train_samples(dataset, split)
    samples = [s for aid in sorted(by_anchor) for s in by_anchor[aid]]
    power = [s.first_path_power for s in samples]
    dist = [s.true_range for s in samples]
    return RssiModel(tuple(float(c) for c in fit_rssi_poly(power, dist, degree)))


def apply_offset(model: OffsetModel, sample: RangingSample) -> float:
    try:
        return sample.measured_range + model.offsets[sample.anchor_id]
    except KeyError:
        raise KeyError(f"anchor {sample.anchor_id} not in offset model") from None


def apply_lr(model: LinearModel, sample: RangingSample) -> float:
    try:
        a, b = model.params[sample.anchor_id]
    except KeyError:
        raise KeyError(f"anchor {sample.anchor_id} not in LR model") from None
    return sample.measured_range * a + b


def model_from_dict(doc: dict):
    kind = doc.get("type")
    params = doc.get("params", {})
    if kind == "offset":
        return OffsetModel({int(k): float(v["o"]) for k, v in params.items()})
    if kind == "lr":
        return LinearModel({int(k): (float(v["a"]), float(v["b"])) for k, v in params.items()})
    if kind == "rssi":
        return RssiModel(tuple(float(c) for c in params["coeffs"]))
    raise ValueError(f"unknown correction model type {kind!r}")


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path: str | Path):
    return model_from_dict(json.loads(Path(path).read_text()))
