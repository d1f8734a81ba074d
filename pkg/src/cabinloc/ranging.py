"""Two-way-ranging arithmetic and receiver diagnostics.

Covers single-sided TWR time of flight, the DW1000-style first-path power
estimate, a CIR multipath metric and a cubic RSSI-to-distance estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299792458.0  # m/s

# 64 MHz PRF receiver constant; configuration dependent, not a measured value.
DEFAULT_POWER_CONSTANT_A = 121.74  # dB


@dataclass(frozen=True)
class TwrTimestamps:
    """Single-sided TWR intervals, in seconds.

    ``t_round`` is measured by the initiator (poll sent -> response received),
    ``t_reply`` by the responder (poll received -> response sent).
    """

    t_round: float
    t_reply: float
    clock_drift_ppm: float = 0.0

    def __post_init__(self):
        if not (self.t_round >= self.t_reply >= 0.0):
            raise ValueError("TWR timestamps must satisfy t_round >= t_reply >= 0")


@dataclass(frozen=True)
class RadioConstants:
    power_constant_a: float = DEFAULT_POWER_CONSTANT_A
    speed_of_light: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if self.speed_of_light != SPEED_OF_LIGHT:
            raise ValueError("speed_of_light is fixed")


def tof_from_twr(ts: TwrTimestamps) -> float:
    """Time of flight from single-sided TWR intervals.

    The responder's reply interval is optionally stretched by its clock drift
    relative to the initiator. A negative result means the drift correction is
    inconsistent with the timestamps and raises instead of clamping.
    """
    if ts.clock_drift_ppm == 0.0:
        tof = (ts.t_round - ts.t_reply) / 2
    else:
        tof = (ts.t_round - ts.t_reply * (1.0 + ts.clock_drift_ppm * 1e-6)) / 2
    if tof < 0.0:
        raise ValueError(f"negative time of flight ({tof:.3e} s); check clock drift")
    return tof


def range_from_tof(tof: float, constants: RadioConstants = RadioConstants()) -> float:
    if tof < 0.0:
        raise ValueError("time of flight must be non-negative")
    return tof * constants.speed_of_light


def first_path_power(f1: float, f2: float, f3: float, n: float,
                     a: float = DEFAULT_POWER_CONSTANT_A) -> float:
    """First-path power level in dB from the three first-path amplitude registers.

    ``10*log10((f1^2 + f2^2 + f3^2) / n^2) - a`` with ``n`` the preamble
    accumulation count and ``a`` the radio-configuration constant.
    """
    if n <= 0:
        raise ValueError("preamble count must be positive")
    if min(f1, f2, f3) < 0:
        raise ValueError("first-path amplitudes must be non-negative")
    energy = f1 * f1 + f2 * f2 + f3 * f3
    if energy == 0.0:
        raise ValueError("all first-path amplitudes are zero (power is -inf)")
    return 10.0 * math.log10(energy / (n * n)) - a


def multipath_metric(taps) -> float:
    """Mean shortfall of each CIR tap below the strongest tap.

    ``(1/(N-1)) * sum_i (1 - CIR_i / max_k CIR_k)``. Evaluated literally: a
    lone peak in an otherwise empty buffer gives 1, a flat buffer gives 0.

    Accepts a :class:`~cabinloc.channel_sim.CirBuffer` or a tap sequence.
    """
    taps = np.asarray(getattr(taps, "taps", taps), dtype=float)
    n = taps.size
    if n < 2:
        raise ValueError("multipath metric needs at least 2 taps")
    if np.any(taps < 0):
        raise ValueError("CIR magnitudes must be non-negative")
    peak = taps.max()
    if peak <= 0:
        raise ValueError("CIR buffer has no energy")
    value = float(np.sum(1.0 - taps / peak) / (n - 1))
    # guard the [0, 1] contract against rounding
    return min(max(value, 0.0), 1.0)


def fit_rssi_poly(power: Sequence[float], distance: Sequence[float], degree: int = 3) -> np.ndarray:
    """Least-squares polynomial distance = sum_k c_k * power^k.

    Returns coefficients in increasing order (``c_0`` first). The power axis is
    centered/scaled internally for conditioning and mapped back afterwards.
    """
    p = np.asarray(power, dtype=float)
    d = np.asarray(distance, dtype=float)
    if p.shape != d.shape or p.ndim != 1:
        raise ValueError("power and distance must be equal-length 1D sequences")
    if p.size < degree + 1:
        raise ValueError(f"need at least {degree + 1} points for a degree-{degree} fit")
    center = p.mean()
    scale = p.std() or 1.0
    u = (p - center) / scale
    design = np.vander(u, degree + 1, increasing=True)
    if np.linalg.matrix_rank(design) < degree + 1:
        raise ValueError("rank-deficient design matrix (too few distinct power values)")
    cu, *_ = np.linalg.lstsq(design, d, rcond=None)
    # expand sum_k cu_k ((p - center)/scale)^k back into powers of p
    poly_u = np.polynomial.Polynomial(cu)
    poly_p = poly_u(np.polynomial.Polynomial([-center / scale, 1.0 / scale]))
    coeffs = np.zeros(degree + 1)
    coeffs[: poly_p.coef.size] = poly_p.coef
    return coeffs


def rssi_distance_estimate(power, coeffs) -> float | np.ndarray:
    """Evaluate the fitted power->distance polynomial, floored at 0 m."""
    est = np.polynomial.polynomial.polyval(np.asarray(power, dtype=float), np.asarray(coeffs, dtype=float))
    est = np.maximum(est, 0.0)
    return float(est) if np.ndim(est) == 0 else est
