"""Cold-to-warm transition detection on metric-vs-N curves.

A fixed-width window slides along the curve; each window gets the slope of
its least-squares line, and the steepest positive slope marks the
transition. The reported threshold is the grid point nearest the winning
window's midpoint. Bootstrap resampling of the per-entity values yields a
percentile interval for the threshold.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

FLATNESS_TOL = 1e-6
CONTRAST_IQR_FACTOR = 3.0


@dataclass(frozen=True)
class Curve:
    """Metric values on a strictly ascending integer N grid."""

    ns: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        ns = np.asarray(self.ns, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if len(ns) != len(values):
            raise ValueError("ns and values must have equal length")
        if len(ns) >= 2 and not (np.diff(ns) > 0).all():
            raise ValueError("N grid must be strictly ascending")
        if not np.isfinite(values).all():
            raise ValueError("curve values must be finite")
        object.__setattr__(self, "ns", ns)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.ns)


@dataclass(frozen=True)
class WindowSlope:
    start_n: int
    end_n: int
    slope: float


@dataclass(frozen=True)
class ThresholdReport:
    threshold_n: Optional[int]
    window: Optional[tuple[int, int]]
    slope: float
    ci: Optional[tuple[float, float]]
    contrast_flag: bool
    flag_reason: Optional[str]

    def to_dict(self):
        return {
            "threshold": self.threshold_n,
            "window": list(self.window) if self.window else None,
            "slope": self.slope,
            "ci": list(self.ci) if self.ci else None,
            "contrast_flag": self.contrast_flag,
            "flag_reason": self.flag_reason,
        }


def ols_slope(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    denom = (xc * xc).sum()
    return float((xc * (y - y.mean())).sum() / denom)


def window_slopes(curve: Curve, w: int) -> list[WindowSlope]:
    """Least-squares slope of every run of ``w`` consecutive curve points."""
    if w < 2:
        raise ValueError(f"window size must be >= 2, got {w}")
    if len(curve) < w:
        raise ValueError(f"curve has {len(curve)} points, need at least {w}")
    ns = curve.ns.astype(np.float64)
    out = []
    for start in range(len(curve) - w + 1):
        x = ns[start : start + w]
        y = curve.values[start : start + w]
        out.append(
            WindowSlope(start_n=int(curve.ns[start]), end_n=int(curve.ns[start + w - 1]),
                        slope=ols_slope(x, y))
        )
    return out


def detect_threshold(
    curve: Curve,
    w: int = 5,
    flatness_tol: float = FLATNESS_TOL,
    contrast_iqr_factor: float = CONTRAST_IQR_FACTOR,
) -> ThresholdReport:
    """Steepest-positive-slope window detection.

    Among equally steep windows the latest one wins; the threshold is the
    grid point nearest the winning window's midpoint (ties toward smaller
    N). When no window has positive slope the threshold is absent. The
    contrast flag marks curves without a distinct shift: max slope at or
    below the flatness tolerance, or not standing out from the slope
    distribution by more than ``contrast_iqr_factor`` interquartile ranges
    over the median.
    """
    slopes = window_slopes(curve, w)
    values = np.asarray([s.slope for s in slopes])
    best = int(np.flatnonzero(values == values.max())[-1])
    max_slope = float(values.max())

    if max_slope <= 0.0:
        return ThresholdReport(
            threshold_n=None, window=None, slope=max_slope, ci=None,
            contrast_flag=True, flag_reason="no positive shift",
        )

    win = slopes[best]
    midpoint = (win.start_n + win.end_n) / 2.0
    dist = np.abs(curve.ns - midpoint)
    threshold_n = int(curve.ns[int(np.flatnonzero(dist == dist.min())[0])])

    flag_reason = None
    if max_slope <= flatness_tol:
        flag_reason = "flat curve"
    else:
        q1, median, q3 = np.percentile(values, [25, 50, 75])
        if (max_slope - median) <= contrast_iqr_factor * (q3 - q1):
            flag_reason = "low contrast"
    return ThresholdReport(
        threshold_n=threshold_n,
        window=(win.start_n, win.end_n),
        slope=float(win.slope),
        ci=None,
        contrast_flag=flag_reason is not None,
        flag_reason=flag_reason,
    )


def bootstrap_threshold_ci(
    per_entity_values: Mapping[int, Sequence[float]],
    w: int = 5,
    n_boot: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    flatness_tol: float = FLATNESS_TOL,
    contrast_iqr_factor: float = CONTRAST_IQR_FACTOR,
) -> tuple[float, float]:
    """Percentile interval of the detected threshold over entity resamples.

    Each resample draws entities with replacement independently at every N,
    rebuilds the mean curve and re-runs detection. Resamples without a
    positive shift are dropped; more than 20% of them triggers a warning
    that the interval may be too narrow.
    """
    ns = np.asarray(sorted(per_entity_values), dtype=np.int64)
    groups = [np.asarray(per_entity_values[int(n)], dtype=np.float64) for n in ns]
    for n, g in zip(ns, groups):
        if len(g) < 2:
            raise ValueError(f"need >= 2 entity values at N={n} to bootstrap")
    rng = np.random.default_rng(seed)
    thresholds = []
    for _ in range(n_boot):
        means = np.asarray([g[rng.integers(0, len(g), size=len(g))].mean() for g in groups])
        report = detect_threshold(
            Curve(ns=ns, values=means), w=w,
            flatness_tol=flatness_tol, contrast_iqr_factor=contrast_iqr_factor,
        )
        if report.threshold_n is not None:
            thresholds.append(report.threshold_n)
    failures = n_boot - len(thresholds)
    if not thresholds:
        raise ValueError("threshold detection failed in every bootstrap resample")
    if failures > 0.2 * n_boot:
        warnings.warn(
            f"threshold detection failed in {failures}/{n_boot} resamples; "
            "the bootstrap interval may be unreliable",
            stacklevel=2,
        )
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(np.asarray(thresholds, dtype=np.float64), [alpha, 1.0 - alpha])
    return float(low), float(high)
