"""Simple-regression statistics and FPF histogramming.

The regression of interest relates -log(mean loss) to mean first point of
failure. Significance uses the two-sided slope t-test; its tail probability
comes from the regularized incomplete beta function, evaluated here by a
modified-Lentz continued fraction so no statistics dependency is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateX, InsufficientData, NonPositiveLoss
from .evaluation import FpfRecord


def neg_log_loss(loss: float) -> float:
    if not loss > 0.0:
        raise NonPositiveLoss(f"loss must be positive, got {loss}")
    return -math.log(loss)


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r2: float
    p: float
    n: int


_BETACF_EPS = 1e-12
_BETACF_TINY = 1e-300
_BETACF_MAX_ITER = 400


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_TINY:
        d = _BETACF_TINY
    d = 1.0 / d
    frac = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        frac *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        delta = d * c
        frac *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return frac
    raise RuntimeError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def reg_incomplete_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def student_t_p(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return reg_incomplete_beta(df / 2.0, 0.5, x)


def ols(xs, ys) -> RegressionResult:
    """Least-squares line with r-squared and the two-sided slope-test p value."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be equal-length 1-d sequences")
    n = x.size
    if n < 3:
        raise InsufficientData(f"need at least 3 points, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateX("all x values are equal")
    syy = float(dy @ dy)
    sxy = float(dx @ dy)
    slope = sxy / sxx
    intercept = float(y.mean()) - slope * float(x.mean())
    if syy == 0.0:
        return RegressionResult(slope, intercept, 0.0, 1.0, n)
    r = sxy / math.sqrt(sxx * syy)
    r2 = r * r
    if r2 >= 1.0:
        return RegressionResult(slope, intercept, 1.0, 0.0, n)  # exact fit
    t_stat = r * math.sqrt((n - 2) / (1.0 - r2))
    return RegressionResult(slope, intercept, r2, student_t_p(t_stat, n - 2), n)


@dataclass(frozen=True)
class HistogramSpec:
    bin_width: int
    lo: int
    hi: int

    def __post_init__(self):
        if self.bin_width < 1:
            raise ValueError("bin_width must be >= 1")
        if not self.lo < self.hi:
            raise ValueError("need lo < hi")


@dataclass
class FpfHistogram:
    spec: HistogramSpec
    bins: list[tuple[int, int]]  # (bin start, count)
    censored_count: int


def fpf_histogram(records: list[FpfRecord], spec: HistogramSpec) -> FpfHistogram:
    """Counts of non-censored FPF values in [lo, hi); censored reported aside."""
    starts = list(range(spec.lo, spec.hi, spec.bin_width))
    counts = [0] * len(starts)
    censored = 0
    for rec in records:
        if rec.censored:
            censored += 1
            continue
        if spec.lo <= rec.fpf < spec.hi:
            counts[(rec.fpf - spec.lo) // spec.bin_width] += 1
    return FpfHistogram(spec, list(zip(starts, counts)), censored)
