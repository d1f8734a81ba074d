"""Cabin coordinate frame, anchor/seat placement and exact-distance helpers.

The frame origin sits at the front-left floor corner of the cabin:

* ``x`` runs aft along the seat rows (row axis),
* ``y`` runs across the cabin along the seat letters (letter axis),
* ``z`` points up.

All lengths are meters.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PLACEMENTS = ("seat", "headrest")

_SEAT_LABEL = re.compile(r"^([1-9][0-9]*)([A-Z])$")


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite coordinate in {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Anchor:
    id: int
    position: Point3


def parse_seat_label(label: str) -> tuple[int, str]:
    """Split ``"12C"`` into ``(12, "C")``."""
    m = _SEAT_LABEL.match(label)
    if m is None:
        raise ValueError(f"invalid seat label {label!r}")
    return int(m.group(1)), m.group(2)


@dataclass(frozen=True)
class Seat:
    label: str
    position: Point3
    seat_z: float
    headrest_z: float

    def __post_init__(self):
        parse_seat_label(self.label)

    @property
    def row(self) -> int:
        return parse_seat_label(self.label)[0]

    @property
    def column(self) -> str:
        return parse_seat_label(self.label)[1]

    def placement_z(self, placement: str) -> float:
        if placement == "seat":
            return self.seat_z
        if placement == "headrest":
            return self.headrest_z
        raise ValueError(f"unknown placement {placement!r}")

    def tag_position(self, placement: str) -> Point3:
        """Tag location for a placement: seat (x, y) at the placement height."""
        return Point3(self.position.x, self.position.y, self.placement_z(placement))


@dataclass(frozen=True)
class Bounds:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    zmin: float
    zmax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax and self.zmin < self.zmax):
            raise ValueError(f"empty bounds {self!r}")

    def contains(self, p: Point3, tol: float = 1e-9) -> bool:
        return (
            self.xmin - tol <= p.x <= self.xmax + tol
            and self.ymin - tol <= p.y <= self.ymax + tol
            and self.zmin - tol <= p.z <= self.zmax + tol
        )


@dataclass(frozen=True)
class CabinLayout:
    anchors: tuple[Anchor, ...]
    seats: tuple[Seat, ...]
    bounds: Bounds
    _seat_index: dict = field(init=False, repr=False, compare=False)
    _anchor_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(self.anchors))
        object.__setattr__(self, "seats", tuple(self.seats))
        if len(self.anchors) < 3:
            raise ValueError("a layout needs at least 3 anchors for 2D localization")
        ids = [a.id for a in self.anchors]
        if len(set(ids)) != len(ids):
            raise ValueError("anchor ids must be unique")
        labels = [s.label for s in self.seats]
        if len(set(labels)) != len(labels):
            raise ValueError("seat labels must be unique")
        for a in self.anchors:
            if not self.bounds.contains(a.position):
                raise ValueError(f"anchor {a.id} lies outside the cabin bounds")
        for s in self.seats:
            if not self.bounds.contains(s.position):
                raise ValueError(f"seat {s.label} lies outside the cabin bounds")
        if len(self.seats) > 1 and min_seat_distance(self.seats) <= 0.0:
            raise ValueError("two seats share the same 2D position")
        object.__setattr__(self, "_seat_index", {s.label: s for s in self.seats})
        object.__setattr__(self, "_anchor_index", {a.id: a for a in self.anchors})

    def seat(self, label: str) -> Seat:
        try:
            return self._seat_index[label]
        except KeyError:
            raise KeyError(f"no seat {label!r} in layout") from None

    def anchor(self, anchor_id: int) -> Anchor:
        try:
            return self._anchor_index[anchor_id]
        except KeyError:
            raise KeyError(f"no anchor {anchor_id} in layout") from None

    @property
    def anchor_ids(self) -> list[int]:
        return sorted(a.id for a in self.anchors)

    def anchor_positions(self, ids: Sequence[int] | None = None) -> np.ndarray:
        """(n, 3) array of anchor positions, in ``ids`` order (default: sorted ids)."""
        ids = self.anchor_ids if ids is None else ids
        return np.array([self.anchor(i).position.as_array() for i in ids])

    def seat_xy(self) -> np.ndarray:
        return np.array([s.position.xy for s in self.seats])

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        b = self.bounds
        return {
            "anchors": [
                {"id": a.id, "x": a.position.x, "y": a.position.y, "z": a.position.z}
                for a in self.anchors
            ],
            "seats": [
                {
                    "label": s.label,
                    "x": s.position.x,
                    "y": s.position.y,
                    "z": s.position.z,
                    "seat_z": s.seat_z,
                    "headrest_z": s.headrest_z,
                }
                for s in self.seats
            ],
            "bounds": {
                "xmin": b.xmin, "xmax": b.xmax,
                "ymin": b.ymin, "ymax": b.ymax,
                "zmin": b.zmin, "zmax": b.zmax,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CabinLayout":
        try:
            anchors = [
                Anchor(int(a["id"]), Point3(float(a["x"]), float(a["y"]), float(a["z"])))
                for a in doc["anchors"]
            ]
            seats = [
                Seat(
                    str(s["label"]),
                    Point3(float(s["x"]), float(s["y"]), float(s["z"])),
                    float(s["seat_z"]),
                    float(s["headrest_z"]),
                )
                for s in doc["seats"]
            ]
            bounds = Bounds(**{k: float(doc["bounds"][k]) for k in
                               ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")})
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed layout document: {exc}") from exc
        return cls(anchors=tuple(anchors), seats=tuple(seats), bounds=bounds)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CabinLayout":
        return cls.from_dict(json.loads(Path(path).read_text()))


def min_seat_distance(seats: Sequence[Seat]) -> float:
    """Minimum pairwise 2D distance between seats (brute force)."""
    xy = np.array([s.position.xy for s in seats], dtype=float)
    if len(xy) < 2:
        raise ValueError("need at least two seats")
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
    d[np.diag_indices_from(d)] = np.inf
    return float(d.min())


def _split_columns(columns: Sequence[str]) -> tuple[list[str], list[str]]:
    # left block gets the extra seat for odd counts, e.g. ABC | DE
    cut = (len(columns) + 1) // 2
    return list(columns[:cut]), list(columns[cut:])


def generate_cabin(
    rows: int = 27,
    columns: Iterable[str] = "ABCDEF",
    pitch: float = 0.79,
    width_spacing: float = 0.46,
    anchor_count: int = 11,
    seed: int = 0,
    *,
    aisle_width: float = 0.5,
    anchor_height: float = 2.0,
    ceiling_height: float = 2.2,
    seat_z: float = 0.45,
    headrest_z: float = 1.1,
    wall_margin: float = 0.3,
    end_margin: float = 1.0,
    hull_inset: float = 0.05,
) -> CabinLayout:
    """Build a single-aisle cabin with seats on a regular grid.

    Seats are split into two blocks separated by an aisle. Anchors hang at
    ``anchor_height`` close to the hull, alternating sides, spread evenly along
    the cabin with a seeded jitter along ``x``.

    Raises:
        ValueError: for non-positive counts/spacings or a bad column set.
    """
    columns = list(columns)
    if rows < 1:
        raise ValueError("rows must be >= 1")
    if anchor_count < 3:
        raise ValueError("anchor_count must be >= 3")
    if pitch <= 0 or width_spacing <= 0 or aisle_width < 0:
        raise ValueError("pitch and width_spacing must be positive")
    if not columns:
        raise ValueError("at least one seat column is required")
    if len(set(columns)) != len(columns) or not all(
        len(c) == 1 and "A" <= c <= "Z" for c in columns
    ):
        raise ValueError(f"columns must be distinct capital letters, got {columns!r}")
    if not (0 < seat_z < ceiling_height and 0 < headrest_z < ceiling_height):
        raise ValueError("tag heights must lie inside the cabin")
    if not (0 < anchor_height <= ceiling_height):
        raise ValueError("anchor_height must lie inside the cabin")

    left, right = _split_columns(columns)
    ys = [wall_margin + i * width_spacing for i in range(len(left))]
    if right:
        start = ys[-1] + width_spacing + aisle_width
        ys += [start + i * width_spacing for i in range(len(right))]
    width = ys[-1] + wall_margin
    length = 2 * end_margin + (rows - 1) * pitch
    bounds = Bounds(0.0, length, 0.0, width, 0.0, ceiling_height)

    seats = []
    for r in range(1, rows + 1):
        x = end_margin + (r - 1) * pitch
        for col, y in zip(columns, ys):
            seats.append(Seat(f"{r}{col}", Point3(x, y, seat_z), seat_z, headrest_z))

    rng = np.random.default_rng(seed)
    spacing = (length - 1.0) / anchor_count
    anchors = []
    for i in range(anchor_count):
        x = 0.5 + (i + 0.5) * spacing + rng.uniform(-0.25, 0.25) * spacing
        x = float(np.clip(x, 0.0, length))
        y = hull_inset if i % 2 == 0 else width - hull_inset
        anchors.append(Anchor(i, Point3(x, y, anchor_height)))

    return CabinLayout(anchors=tuple(anchors), seats=tuple(seats), bounds=bounds)


def true_range(anchor: Anchor, tag: Point3) -> float:
    """Euclidean 3D distance between an anchor and a tag."""
    p = anchor.position
    return math.sqrt((p.x - tag.x) ** 2 + (p.y - tag.y) ** 2 + (p.z - tag.z) ** 2)


def delta_z(anchor: Anchor, placement_z: float) -> float:
    """Known vertical offset between an anchor and the tag placement plane."""
    return abs(anchor.position.z - placement_z)
