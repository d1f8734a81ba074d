"""Johnson S_U distribution: sampling, density and maximum-likelihood fitting.

Parameterization: ``Z = gamma + delta * asinh((X - xi) / lam)`` is standard
normal, so ``X = xi + lam * sinh((Z - gamma) / delta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy import optimize, special

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class JohnsonSuParams:
    gamma: float
    delta: float
    xi: float
    lam: float

    def __post_init__(self):
        if not (self.delta > 0 and self.lam > 0):
            raise ValueError(f"Johnson S_U needs delta > 0 and lambda > 0, got {self!r}")
        if not all(math.isfinite(v) for v in (self.gamma, self.delta, self.xi, self.lam)):
            raise ValueError(f"non-finite Johnson S_U parameter in {self!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "JohnsonSuParams":
        return cls(float(d["gamma"]), float(d["delta"]), float(d["xi"]),
                   float(d.get("lam", d.get("lambda"))))

    def shifted(self, offset: float) -> "JohnsonSuParams":
        return JohnsonSuParams(self.gamma, self.delta, self.xi + offset, self.lam)

    def mean(self) -> float:
        return self.xi - self.lam * math.exp(0.5 / self.delta**2) * math.sinh(self.gamma / self.delta)

    def variance(self) -> float:
        w = math.exp(1.0 / self.delta**2)
        return 0.5 * self.lam**2 * (w - 1.0) * (w * math.cosh(2 * self.gamma / self.delta) + 1.0)

    def ppf(self, q):
        z = special.ndtri(np.asarray(q, dtype=float))
        return self.xi + self.lam * np.sinh((z - self.gamma) / self.delta)


def transform_normal(params: JohnsonSuParams, z):
    """Map standard-normal variates onto the Johnson S_U distribution."""
    return params.xi + params.lam * np.sinh((np.asarray(z, dtype=float) - params.gamma) / params.delta)


def sample_johnson_su(params: JohnsonSuParams, rng: np.random.Generator, size=None):
    """Draw from Johnson S_U via the sinh transform of a standard normal draw."""
    out = transform_normal(params, rng.standard_normal(size))
    return float(out) if size is None else out


def logpdf(params: JohnsonSuParams, x):
    u = (np.asarray(x, dtype=float) - params.xi) / params.lam
    z = params.gamma + params.delta * np.arcsinh(u)
    return (math.log(params.delta) - math.log(params.lam) - _LOG_SQRT_2PI
            - 0.5 * np.log1p(u * u) - 0.5 * z * z)


def _percentile_init(x: np.ndarray, zq: float = 0.524) -> tuple[float, float, float, float] | None:
    """Slifker-Shapiro percentile estimates; None if the sample is not S_U-shaped."""
    probs = special.ndtr(np.array([-3 * zq, -zq, zq, 3 * zq]))
    x_m3, x_m1, x_p1, x_p3 = np.quantile(x, probs)
    m = x_p3 - x_p1
    n = x_m1 - x_m3
    p = x_p1 - x_m1
    if p <= 0 or m <= 0 or n <= 0:
        return None
    mp, np_ = m / p, n / p
    if mp * np_ <= 1.0 + 1e-9:
        return None
    delta = 2 * zq / math.acosh(0.5 * (mp + np_))
    root = math.sqrt(mp * np_ - 1.0)
    # the original estimator is written for Z = gamma + delta*asinh(...); sign
    # chosen so that a longer upper tail (m > n) gives a negative gamma
    gamma = delta * math.asinh((np_ - mp) / (2 * root))
    lam = 2 * p * root / ((mp + np_ - 2) * math.sqrt(mp + np_ + 2))
    xi = 0.5 * (x_p1 + x_m1) + p * (np_ - mp) / (2 * (mp + np_ - 2))
    if not (lam > 0 and math.isfinite(lam) and math.isfinite(xi)):
        return None
    return gamma, delta, xi, lam


def _moment_init(x: np.ndarray) -> tuple[float, float, float, float]:
    # near-normal start: large delta with lam/delta ~ std
    delta = 3.0
    return 0.0, delta, float(np.median(x)), float(np.std(x)) * delta


def _negloglik(theta: np.ndarray, x: np.ndarray) -> tuple[float, np.ndarray]:
    gamma, log_delta, xi, log_lam = theta
    delta, lam = math.exp(log_delta), math.exp(log_lam)
    u = (x - xi) / lam
    s = np.sqrt(1.0 + u * u)
    a = np.arcsinh(u)
    z = gamma + delta * a
    n = x.size
    nll = -(n * (log_delta - log_lam - _LOG_SQRT_2PI) - 0.5 * np.sum(np.log1p(u * u)) - 0.5 * np.sum(z * z))
    # d/du of [-0.5 log(1+u^2) - 0.5 z^2] = -u/(1+u^2) - z*delta/sqrt(1+u^2)
    dl_du = -u / (s * s) - z * delta / s
    g_gamma = -np.sum(z)
    g_logdelta = n - np.sum(z * a) * delta
    g_xi = np.sum(dl_du) * (-1.0 / lam)
    g_loglam = -n + np.sum(dl_du * (-u))
    grad = -np.array([g_gamma, g_logdelta, g_xi, g_loglam])
    return float(nll), grad


def fit_johnson_su(samples, min_samples: int = 100) -> JohnsonSuParams:
    """Maximum-likelihood Johnson S_U fit.

    Starts from percentile-based estimates (falling back to a near-normal
    start) and refines with L-BFGS on the log-likelihood, optimizing
    ``log(delta)`` and ``log(lambda)`` to keep them positive.

    Raises:
        ValueError: fewer than ``min_samples`` points, non-finite values or
            zero variance.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    spread = float(np.std(x))
    if spread == 0.0 or spread <= 1e-12 * max(1.0, float(np.abs(x).max())):
        raise ValueError("samples have zero variance")

    # work on standardized data for conditioning
    loc, scale = float(np.median(x)), spread
    xs = (x - loc) / scale

    starts = []
    init = _percentile_init(xs)
    if init is not None:
        starts.append(init)
    starts.append(_moment_init(xs))

    best = None
    for gamma, delta, xi, lam in starts:
        theta0 = np.array([gamma, math.log(delta), xi, math.log(lam)])
        res = optimize.minimize(_negloglik, theta0, args=(xs,), jac=True, method="L-BFGS-B",
                                bounds=[(-50, 50), (-7, 7), (None, None), (-20, 20)],
                                options={"maxiter": 2000, "ftol": 1e-14, "gtol": 1e-9})
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    gamma, log_delta, xi, log_lam = best.x
    return JohnsonSuParams(
        gamma=float(gamma),
        delta=float(math.exp(log_delta)),
        xi=float(loc + scale * xi),
        lam=float(scale * math.exp(log_lam)),
    )
