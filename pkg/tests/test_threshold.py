import numpy as np
import pytest

from coldwarm import Curve, bootstrap_threshold_ci, detect_threshold, window_slopes

from oracles import ols_slope_oracle


def curve(ns, values):
    return Curve(ns=np.asarray(ns), values=np.asarray(values, dtype=float))


def test_slopes_linear_curve():
    ns = list(range(1, 11))
    c = curve(ns, [2 * n for n in ns])
    for w in window_slopes(c, 4):
        assert w.slope == pytest.approx(2.0, abs=1e-12)


def test_slopes_constant_curve():
    c = curve(range(5), [3.3] * 5)
    assert all(w.slope == 0.0 for w in window_slopes(c, 3))


def test_slopes_match_ols_oracle(rng):
    ns = np.cumsum(rng.integers(1, 4, size=12))
    values = rng.random(12)
    c = curve(ns, values)
    got = window_slopes(c, 5)
    for j, w in enumerate(got):
        assert w.start_n == ns[j] and w.end_n == ns[j + 4]
        assert w.slope == pytest.approx(ols_slope_oracle(ns[j : j + 5], values[j : j + 5]), abs=1e-12)


def test_slopes_validate_inputs():
    c = curve([1, 2, 3], [0, 0, 0])
    with pytest.raises(ValueError):
        window_slopes(c, 1)
    with pytest.raises(ValueError):
        window_slopes(c, 4)


def test_curve_validation():
    with pytest.raises(ValueError):
        curve([1, 1, 2], [0, 0, 0])
    with pytest.raises(ValueError):
        curve([1, 2], [0, np.nan])


def test_detect_step_curve_enumerated_by_hand():
    # values over grid 7..13: 0 below 10, 1 from 10 on; w=3
    # window slopes: (7,8,9)->0, (8,9,10)->0.5, (9,10,11)->0.5, (10,11,12)->0,
    # (11,12,13)->0; steepest windows tie, the later one (9..11) wins and its
    # midpoint sits on the grid at 10
    c = curve(range(7, 14), [0, 0, 0, 1, 1, 1, 1])
    report = detect_threshold(c, w=3)
    assert report.threshold_n == 10
    assert report.window == (9, 11)
    assert report.slope == pytest.approx(0.5)


def test_detect_step_curve_w5():
    t = 8
    ns = np.arange(t - 6, t + 7)
    c = curve(ns, (ns >= t).astype(float))
    report = detect_threshold(c, w=5)
    assert report.threshold_n == t
    assert report.window == (t - 2, t + 2)


def test_detect_linear_curve_flags_low_contrast():
    ns = np.arange(1, 11)
    report = detect_threshold(curve(ns, 2.0 * ns), w=3)
    assert report.contrast_flag
    assert report.flag_reason == "low contrast"
    assert report.threshold_n is not None  # slope is positive everywhere


def test_detect_flat_curve_flags_flatness():
    ns = np.arange(1, 11)
    report = detect_threshold(curve(ns, 1.0 + 1e-9 * ns), w=3)
    assert report.contrast_flag
    assert report.flag_reason == "flat curve"


def test_detect_decreasing_curve_has_no_threshold():
    ns = np.arange(1, 11)
    report = detect_threshold(curve(ns, -1.0 * ns), w=3)
    assert report.threshold_n is None
    assert report.window is None
    assert report.contrast_flag
    assert report.flag_reason == "no positive shift"


def test_detect_noisy_logistic_lands_near_center(rng):
    ns = np.arange(1, 16)
    base = 1.0 / (1.0 + np.exp(-(ns - 8.0)))
    hits = []
    for trial in range(50):
        noisy = base + np.random.default_rng(trial).normal(0, 0.02, size=len(ns))
        report = detect_threshold(curve(ns, noisy), w=5)
        hits.append(report.threshold_n)
    assert all(t in (7, 8, 9) for t in hits)


def test_detect_shift_and_scale_equivariance(rng):
    ns = np.cumsum(rng.integers(1, 3, size=10))
    values = rng.random(10)
    base = detect_threshold(curve(ns, values), w=4)
    shifted = detect_threshold(curve(ns, values + 5.0), w=4)
    assert shifted.threshold_n == base.threshold_n
    assert shifted.slope == pytest.approx(base.slope, abs=1e-9)
    scaled = detect_threshold(curve(ns, values * 3.0), w=4)
    assert scaled.threshold_n == base.threshold_n
    assert scaled.window == base.window
    assert scaled.slope == pytest.approx(3.0 * base.slope, rel=1e-9)


def test_detect_threshold_on_grid(rng):
    for _ in range(25):
        ns = np.unique(rng.integers(1, 40, size=12))
        if len(ns) < 6:
            continue
        values = rng.random(len(ns))
        report = detect_threshold(curve(ns, values), w=5)
        if report.threshold_n is not None:
            assert report.threshold_n in ns.tolist()
            assert report.window[0] <= report.threshold_n <= report.window[1]


def test_bootstrap_zero_noise_step_gives_zero_width():
    t = 9
    ns = range(t - 5, t + 6)
    per_entity = {n: [1.0 if n >= t else 0.0] * 12 for n in ns}
    low, high = bootstrap_threshold_ci(per_entity, w=5, n_boot=50, seed=0)
    assert low == high == t


def test_bootstrap_single_resample_degenerates():
    t = 9
    ns = range(t - 5, t + 6)
    per_entity = {n: [1.0 if n >= t else 0.0] * 6 for n in ns}
    low, high = bootstrap_threshold_ci(per_entity, w=5, n_boot=1, seed=3)
    assert low == high == t


def test_bootstrap_warns_on_frequent_detection_failure():
    ns = range(1, 12)
    rng = np.random.default_rng(0)
    # pure noise around a constant: many resamples have no positive shift flag?
    # use a strictly decreasing mean curve so detection always fails
    per_entity = {n: (-float(n) + rng.normal(0, 1e-6, size=5)).tolist() for n in ns}
    with pytest.raises(ValueError):
        bootstrap_threshold_ci(per_entity, w=5, n_boot=20, seed=1)


def test_bootstrap_requires_two_entities():
    with pytest.raises(ValueError):
        bootstrap_threshold_ci({1: [0.1], 2: [0.2], 3: [0.3]}, w=3, n_boot=5)
