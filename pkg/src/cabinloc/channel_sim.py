"""Synthetic UWB ranging measurements for cabin-like environments.

Stands in for a physical measurement campaign. Each tag/anchor link gets a
persistent *link state* (multipath echo pattern, shadowing, a shared noise
component) and every repetition adds fresh noise on top. The generator is
calibrated, not measured: default parameters are tuned so summary statistics
of the raw ranging error land near typical cabin values.

Error model for one measurement at true distance ``d``::

    measured = d + nlos_bias_per_meter * d + J

with ``J`` Johnson S_U. ``J`` is the sinh transform of
``sqrt(p) * z_link + sqrt(1 - p) * z_rep`` (``p`` = ``link_persistence``), so
its marginal law is exactly the configured Johnson S_U.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .geometry import PLACEMENTS, Anchor, CabinLayout, Point3, true_range
from .johnson import JohnsonSuParams, fit_johnson_su, sample_johnson_su, transform_normal
from .ranging import DEFAULT_POWER_CONSTANT_A, first_path_power

__all__ = [
    "EnvironmentProfile", "CirBuffer", "RangingSample", "Record", "Dataset", "LinkState",
    "PROFILES", "get_profile", "sample_johnson_su", "fit_johnson_su",
    "draw_link_state", "synthesize_cir", "simulate_ranging", "generate_dataset",
    "split_counts", "substream",
]

DW1000_TAP_SPACING = 1.0016e-9  # s


@dataclass(frozen=True)
class EnvironmentProfile:
    """Channel parameters of one environment.

    ``multipath_richness`` in [0, 1] scales echo count/amplitude and the diffuse
    CIR floor; ``link_persistence`` is the share of the normal-domain noise
    variance that is fixed per link (static geometry) rather than per draw.
    """

    name: str
    path_loss_exponent: float
    nlos_bias_per_meter: float
    noise: JohnsonSuParams
    multipath_richness: float
    power_at_1m: float
    link_persistence: float = 0.0
    shadowing_db: float = 0.0
    power_noise_db: float = 0.5
    nlos_attenuation_scale: float = 0.5  # m of excess error per e-fold of direct-path amplitude
    preamble_count: int = 128
    n_taps: int = 64
    first_path_index: int = 8
    tap_spacing: float = DW1000_TAP_SPACING
    power_constant_a: float = DEFAULT_POWER_CONSTANT_A

    def __post_init__(self):
        if not 0.0 <= self.multipath_richness <= 1.0:
            raise ValueError("multipath_richness must lie in [0, 1]")
        if not 0.0 <= self.link_persistence <= 1.0:
            raise ValueError("link_persistence must lie in [0, 1]")
        if self.preamble_count <= 0:
            raise ValueError("preamble_count must be positive")
        if not (0 <= self.first_path_index < self.n_taps - 2):
            raise ValueError("first_path_index must leave room for the three first-path points")
        if self.shadowing_db < 0 or self.power_noise_db < 0 or self.nlos_attenuation_scale <= 0:
            raise ValueError("noise scales must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = self.noise.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentProfile":
        d = dict(d)
        d["noise"] = JohnsonSuParams.from_dict(d["noise"])
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EnvironmentProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))


# Calibrated defaults (see README). Noise parameters are in meters.
PROFILES: dict[str, EnvironmentProfile] = {
    "aircraft_cabin": EnvironmentProfile(
        name="aircraft_cabin",
        path_loss_exponent=3.0,
        nlos_bias_per_meter=0.015,
        noise=JohnsonSuParams(gamma=-0.8, delta=1.1, xi=0.15, lam=0.25),
        multipath_richness=0.8,
        power_at_1m=-78.0,
        link_persistence=0.97,
        shadowing_db=4.0,
    ),
    "indoor_office": EnvironmentProfile(
        name="indoor_office",
        path_loss_exponent=2.0,
        nlos_bias_per_meter=0.004,
        noise=JohnsonSuParams(gamma=-0.3, delta=1.6, xi=0.36, lam=0.06),
        multipath_richness=0.3,
        power_at_1m=-75.0,
        link_persistence=0.8,
        shadowing_db=1.5,
    ),
    "outdoor": EnvironmentProfile(
        name="outdoor",
        path_loss_exponent=2.0,
        nlos_bias_per_meter=0.006,
        noise=JohnsonSuParams(gamma=0.4, delta=1.5, xi=0.36, lam=0.05),
        multipath_richness=0.05,
        power_at_1m=-74.0,
        link_persistence=0.5,
        shadowing_db=1.0,
    ),
}

PROFILE_ALIASES = {"aircraft": "aircraft_cabin", "cabin": "aircraft_cabin", "indoor": "indoor_office",
            "office": "indoor_office", "outside": "outdoor"}


def get_profile(name: str) -> EnvironmentProfile:
    key = PROFILE_ALIASES.get(name, name)
    if key not in PROFILES:
        raise KeyError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return PROFILES[key]


@dataclass(frozen=True)
class CirBuffer:
    taps: np.ndarray
    first_path_index: int
    tap_spacing: float = DW1000_TAP_SPACING

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)
        if taps.ndim != 1 or taps.size < 1:
            raise ValueError("CIR buffer needs at least one tap")
        if np.any(taps < 0) or not np.any(taps > 0):
            raise ValueError("CIR taps must be non-negative with at least one positive tap")
        if not 0 <= self.first_path_index < taps.size:
            raise ValueError("first_path_index out of range")

    def __eq__(self, other):
        return (isinstance(other, CirBuffer) and self.first_path_index == other.first_path_index
                and self.tap_spacing == other.tap_spacing and np.array_equal(self.taps, other.taps))

    __hash__ = None


@dataclass(frozen=True)
class RangingSample:
    anchor_id: int
    tag_position_id: str
    measured_range: float
    true_range: float
    f1: float
    f2: float
    f3: float
    preamble_count: int
    cir: CirBuffer
    first_path_power: float

    def __post_init__(self):
        if self.true_range < 0 or self.preamble_count <= 0 or min(self.f1, self.f2, self.f3) < 0:
            raise ValueError(f"invalid ranging sample for anchor {self.anchor_id}")

    @property
    def error(self) -> float:
        return self.measured_range - self.true_range

    def to_dict(self) -> dict:
        return {
            "anchor_id": self.anchor_id,
            "measured_range": self.measured_range,
            "true_range": self.true_range,
            "f1": self.f1,
            "f2": self.f2,
            "f3": self.f3,
            "preamble_count": self.preamble_count,
            "first_path_power": self.first_path_power,
            "cir": self.cir.taps.tolist(),
            "fp_index": self.cir.first_path_index,
            "tap_spacing": self.cir.tap_spacing,
        }

    @classmethod
    def from_dict(cls, d: dict, tag_position_id: str = "") -> "RangingSample":
        cir = CirBuffer(np.asarray(d["cir"], dtype=float), int(d.get("fp_index", 8)),
                        float(d.get("tap_spacing", DW1000_TAP_SPACING)))
        return cls(int(d["anchor_id"]), tag_position_id, float(d["measured_range"]),
                   float(d["true_range"]), float(d["f1"]), float(d["f2"]), float(d["f3"]),
                   int(d["preamble_count"]), cir, float(d["first_path_power"]))


@dataclass(frozen=True)
class LinkState:
    """Per-link persistent channel realization."""

    z: float
    echo_delays: np.ndarray  # taps after the first path
    echo_gains: np.ndarray  # relative to the direct path
    shadow_db: float


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def draw_link_state(distance: float, profile: EnvironmentProfile, rng: np.random.Generator) -> LinkState:
    richness = profile.multipath_richness
    z = float(rng.standard_normal())
    # echo count and strength grow with richness and with distance
    mean_echoes = richness * 3.0 * (1.0 + distance / 3.0)
    k = int(rng.poisson(mean_echoes)) if richness > 0 else 0
    delays = 1 + np.floor(rng.exponential(6.0, size=k)).astype(int)
    strength = richness * min(0.3 + 0.07 * distance, 1.2)
    gains = strength * rng.uniform(0.3, 1.0, size=k) * np.exp(-delays / 12.0)
    shadow = float(rng.normal(0.0, profile.shadowing_db)) if profile.shadowing_db > 0 else 0.0
    return LinkState(z=z, echo_delays=delays, echo_gains=gains, shadow_db=shadow)


def _direct_amplitude(noise_value: float, profile: EnvironmentProfile) -> float:
    # NLOS: the heavier the upper-tail excess, the weaker the direct path
    median = float(profile.noise.ppf(0.5))
    excess = max(noise_value - median, 0.0)
    # floor keeps the direct path above the diffuse noise (about -26 dB)
    return max(math.exp(-excess / profile.nlos_attenuation_scale), 0.05)


def synthesize_cir(true_range: float, profile: EnvironmentProfile, rng: np.random.Generator,
                   *, link: LinkState | None = None, noise_value: float | None = None) -> CirBuffer:
    """Relative-amplitude CIR window with the detected first path at a fixed index.

    One direct-path tap plus echo taps from the link state (drawn fresh when
    ``link`` is None) and a diffuse floor, both scaled by
    ``multipath_richness``. With zero richness the buffer holds a single tap.
    """
    if true_range < 0:
        raise ValueError("true_range must be non-negative")
    if link is None:
        link = draw_link_state(true_range, profile, rng)
    n, fp = profile.n_taps, profile.first_path_index
    richness = profile.multipath_richness
    taps = np.zeros(n)
    taps[fp] = 1.0 if noise_value is None else _direct_amplitude(noise_value, profile)
    if link.echo_delays.size:
        jitter = 1.0 + 0.05 * rng.standard_normal(link.echo_delays.size)
        idx = fp + link.echo_delays
        keep = idx < n
        np.add.at(taps, idx[keep], np.abs(link.echo_gains[keep] * jitter[keep]))
    if richness > 0:
        floor = 0.03 * richness * np.abs(rng.standard_normal(n))
        floor[:fp] *= 0.3
        taps += floor
    return CirBuffer(taps, fp, profile.tap_spacing)


def simulate_ranging(anchor: Anchor, tag: Point3, profile: EnvironmentProfile,
                     rng: np.random.Generator, *, link: LinkState | None = None,
                     tag_position_id: str = "") -> RangingSample:
    """One TWR measurement with diagnostics and CIR.

    ``link`` carries the persistent part of the channel; without it every call
    is an independent draw from the marginal error distribution.
    """
    d = true_range(anchor, tag)
    if link is None:
        link = draw_link_state(d, profile, rng)
    p = profile.link_persistence
    z = math.sqrt(p) * link.z + math.sqrt(1.0 - p) * float(rng.standard_normal())
    noise_value = float(transform_normal(profile.noise, z))
    measured = d + profile.nlos_bias_per_meter * d + noise_value

    cir = synthesize_cir(d, profile, rng, link=link, noise_value=noise_value)
    direct = cir.taps[cir.first_path_index]
    power = (profile.power_at_1m - 10.0 * profile.path_loss_exponent * math.log10(max(d, 0.1))
             + link.shadow_db + float(rng.normal(0.0, profile.power_noise_db))
             + 20.0 * math.log10(direct))
    # scale the buffer to register units so the three first-path points carry `power`
    fp = cir.first_path_index
    n_pre = profile.preamble_count
    rel = cir.taps[fp:fp + 3]
    target = n_pre * n_pre * 10.0 ** ((power + profile.power_constant_a) / 10.0)
    scale = math.sqrt(target / float(np.dot(rel, rel)))
    taps = np.round(cir.taps * scale, 2)
    cir = CirBuffer(taps, fp, cir.tap_spacing)
    f1, f2, f3 = (float(v) for v in taps[fp:fp + 3])
    fpp = first_path_power(f1, f2, f3, n_pre, profile.power_constant_a)
    return RangingSample(anchor.id, tag_position_id, measured, d, f1, f2, f3, n_pre, cir, fpp)


@dataclass(frozen=True)
class Record:
    seat: str
    placement: str
    rep: int
    split: str
    samples: tuple[RangingSample, ...]

    @property
    def position_id(self) -> str:
        return f"{self.seat}/{self.placement}"

    def sample_map(self) -> dict[int, RangingSample]:
        return {s.anchor_id: s for s in self.samples}

    def to_dict(self) -> dict:
        return {"seat": self.seat, "placement": self.placement, "rep": self.rep,
                "split": self.split, "samples": [s.to_dict() for s in self.samples]}

    @classmethod
    def from_dict(cls, d: dict) -> "Record":
        pid = f"{d['seat']}/{d['placement']}"
        if d["placement"] not in PLACEMENTS or d["split"] not in ("train", "test"):
            raise ValueError(f"bad record header {d.get('seat')!r}/{d.get('placement')!r}")
        samples = tuple(RangingSample.from_dict(s, pid) for s in d["samples"])
        return cls(str(d["seat"]), str(d["placement"]), int(d["rep"]), str(d["split"]), samples)


@dataclass(frozen=True)
class Dataset:
    layout: CabinLayout
    records: tuple[Record, ...]
    profile_name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def split(self, name: str) -> list[Record]:
        if name not in ("train", "test"):
            raise ValueError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def tag_position(self, record: Record) -> Point3:
        return self.layout.seat(record.seat).tag_position(record.placement)

    def with_records(self, records: Sequence[Record]) -> "Dataset":
        return replace(self, records=tuple(records))

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path, layout: CabinLayout, profile_name: str = "") -> "Dataset":
        records = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = Record.from_dict(json.loads(line))
                except (KeyError, TypeError, json.JSONDecodeError) as exc:
                    raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from exc
                layout.seat(rec.seat)
                records.append(rec)
        return cls(layout, tuple(records), profile_name)


def split_counts(repetitions: int) -> tuple[int, int]:
    """(train, test) repetitions per position: 7/3 for 10, test rounded down otherwise."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    n_test = (3 * repetitions) // 10
    return repetitions - n_test, n_test


def generate_dataset(layout: CabinLayout, profile: EnvironmentProfile, repetitions: int = 10,
                     seed: int = 0, placements: Sequence[str] = PLACEMENTS) -> Dataset:
    """One record per (seat, placement, repetition), anchors in id order.

    Link states come from substream ``(1, seat, placement, anchor)`` and
    per-repetition noise from ``(0, seat, placement, rep)``, so the output is
    independent of generation order. The last repetitions of each position
    form the test split.
    """
    n_train, _ = split_counts(repetitions)
    anchors = [layout.anchor(i) for i in layout.anchor_ids]
    records = []
    for si, seat in enumerate(layout.seats):
        for pi, placement in enumerate(placements):
            tag = seat.tag_position(placement)
            pid = f"{seat.label}/{placement}"
            links = [draw_link_state(true_range(a, tag), profile, substream(seed, 1, si, pi, a.id))
                     for a in anchors]
            for rep in range(repetitions):
                rng = substream(seed, 0, si, pi, rep)
                samples = tuple(simulate_ranging(a, tag, profile, rng, link=link, tag_position_id=pid)
                                for a, link in zip(anchors, links))
                split = "train" if rep < n_train else "test"
                records.append(Record(seat.label, placement, rep, split, samples))
    return Dataset(layout, tuple(records), profile.name)
