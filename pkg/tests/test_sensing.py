import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import freqz

from wingsense.sensing import (ABOVE_BAND, BELOW_BAND, CHANNELS, IN_BAND, REFERENCE_THRESHOLDS,
                               BeatAccumulator, CalibrationFault, CollisionDetector,
                               ExtrapolationWarning, InsufficientData, LowPassFilter,
                               StrokeStats, ThresholdModel, calibrate_thresholds, classify,
                               clearance_feedback, detect_collision, lowpass,
                               lowpass_coefficient, lowpass_response, stroke_stats,
                               threshold_at)

FS = 2000.0


def _gain(f):
    a = lowpass_coefficient()
    _, h = freqz([a], [1.0, -(1 - a)], worN=[f], fs=FS)
    return abs(h[0])


def test_lowpass_dc_gain_is_one():
    assert _gain(0.0) == pytest.approx(1.0, abs=1e-12)
    y = lowpass(np.full(500, 0.3))
    np.testing.assert_allclose(y, 0.3, rtol=0, atol=1e-15)


def test_lowpass_cutoff_and_passband():
    assert _gain(200.0) == pytest.approx(1 / np.sqrt(2), rel=0.02)
    assert _gain(34.0) >= 0.98
    assert lowpass_response(200.0) == pytest.approx(_gain(200.0), rel=1e-12)


def test_lowpass_measured_sine_gain():
    t = np.arange(20000) / FS
    y = lowpass(np.sin(2 * np.pi * 200.0 * t), initial=0.0)
    # fit the steady-state sinusoid; sampled peaks miss the true amplitude
    w = 2 * np.pi * 200.0 * t[10000:]
    basis = np.stack([np.sin(w), np.cos(w)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, y[10000:], rcond=None)
    amp = np.hypot(*coef)
    assert amp == pytest.approx(1 / np.sqrt(2), rel=0.02)


def test_lowpass_rejects_bad_cutoff():
    with pytest.raises(ValueError):
        lowpass_coefficient(1500.0)


@given(st.integers(1, 300))
def test_streaming_filter_matches_batch(split):
    rng = np.random.default_rng(split)
    x = rng.normal(size=(400, 2))
    f = LowPassFilter()
    y = np.concatenate([f.process(x[:split]), f.process(x[split:])])
    np.testing.assert_allclose(y, lowpass(x), rtol=0, atol=1e-14)


def _square_trace(beats=4, f=34.0):
    # left wing 0.3 A on upstroke, 0.1 A on downstroke; right wing constant 0.2 A
    t = np.arange(int(round(beats * FS / f)) + 1) / FS
    ph = (t * f) % 1.0
    up = np.stack([ph < 0.5, ph < 0.5], axis=1)
    i = np.stack([np.where(up[:, 0], 0.3, 0.1), np.full(len(t), 0.2)], axis=1)
    return t, i, up


def test_stroke_stats_half_stroke_means():
    t, i, up = _square_trace()
    s = stroke_stats(t, i, up)
    assert s.up_L == pytest.approx(0.3) and s.down_L == pytest.approx(0.1)
    assert s.mean_L == pytest.approx(0.2, rel=0.02)
    assert s.mean_R == pytest.approx(0.2)
    np.testing.assert_allclose(s.channels(), [s.up_L, s.down_L, s.up_R, s.down_R])
    assert stroke_stats(t, i, up, window=2).n_beats == 2


def test_stroke_stats_needs_a_full_beat():
    t, i, up = _square_trace(beats=0.8)
    with pytest.raises(InsufficientData):
        stroke_stats(t, i, up)
    with pytest.raises(InsufficientData):
        stroke_stats([], np.zeros((0, 2)), np.zeros((0, 2), bool))


def test_beat_accumulator_matches_batch_stats():
    t, i, up = _square_trace(beats=3)
    acc = BeatAccumulator()
    out = acc.push(t[:50], i[:50], up[:50]) + acc.push(t[50:], i[50:], up[50:])
    assert [k for k, _ in out] == [0, 1]
    ref = stroke_stats(t[t < 1 / 34.0], i[t < 1 / 34.0], up[t < 1 / 34.0])
    for field in ("mean_L", "up_L", "down_L", "mean_R", "up_R", "down_R"):
        assert getattr(out[0][1], field) == pytest.approx(getattr(ref, field), rel=1e-12)


def test_thresholds_at_reference_voltages():
    assert threshold_at(12.0, REFERENCE_THRESHOLDS) == pytest.approx((0.242, 0.205))
    assert threshold_at(10.0, REFERENCE_THRESHOLDS) == pytest.approx((0.212, 0.177))
    assert threshold_at(15.0, REFERENCE_THRESHOLDS) == pytest.approx((0.287, 0.247))
    with pytest.warns(ExtrapolationWarning):
        threshold_at(16.0, REFERENCE_THRESHOLDS)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        threshold_at((10.0, 15.0), REFERENCE_THRESHOLDS)


@given(st.floats(10.0, 15.0), st.floats(10.0, 15.0), st.floats(0.0, 1.0))
def test_threshold_is_affine(a, b, lam):
    mix = threshold_at(lam * a + (1 - lam) * b, REFERENCE_THRESHOLDS)
    ta, tb = threshold_at(a, REFERENCE_THRESHOLDS), threshold_at(b, REFERENCE_THRESHOLDS)
    for k in range(2):
        assert mix[k] == pytest.approx(lam * ta[k] + (1 - lam) * tb[k], abs=1e-12)


def _runs(model, voltages, scale=1.0):
    return [(V, StrokeStats.constant(*(scale * x for x in threshold_at(V, model))))
            for V in voltages]


def test_calibration_recovers_exact_line():
    m = calibrate_thresholds(_runs(REFERENCE_THRESHOLDS, [10, 11, 12, 13, 14, 15]))
    for got, want in zip((m.slope_L, m.intercept_L, m.slope_R, m.intercept_R),
                         (0.015, 0.062, 0.014, 0.037)):
        assert got == pytest.approx(want, abs=1e-9)
    assert m.r2 == pytest.approx((1.0, 1.0))
    assert m.v_range == (10.0, 15.0)


@given(st.floats(0.2, 5.0))
def test_calibration_scale_equivariant(k):
    m = calibrate_thresholds(_runs(REFERENCE_THRESHOLDS, [10, 12, 15], scale=k))
    assert m.slope_L == pytest.approx(k * 0.015, rel=1e-9)
    assert m.intercept_R == pytest.approx(k * 0.037, rel=1e-9)


def test_calibration_faults():
    with pytest.raises(CalibrationFault):
        calibrate_thresholds(_runs(REFERENCE_THRESHOLDS, [12, 12, 12]))
    flat = [(V, StrokeStats.constant(0.2, 0.2)) for V in (10.0, 15.0)]
    with pytest.raises(CalibrationFault):
        calibrate_thresholds(flat)
    with pytest.raises(ValueError):
        ThresholdModel(-0.01, 0.1, 0.01, 0.1)


def test_clearance_feedback_examples():
    fb = clearance_feedback(StrokeStats.constant(0.242, 0.205), 12.0, REFERENCE_THRESHOLDS)
    assert fb.band == IN_BAND and np.all(fb.excess == 0)
    fb = clearance_feedback(StrokeStats.constant(0.20, 0.20), 12.0, REFERENCE_THRESHOLDS)
    assert fb.band == IN_BAND
    fb = clearance_feedback(StrokeStats.constant(0.30, 0.205), 12.0, REFERENCE_THRESHOLDS)
    assert fb.band == ABOVE_BAND and fb.wing_bands == (ABOVE_BAND, IN_BAND)
    assert fb.excess[0] == pytest.approx(0.058)
    fb = clearance_feedback(StrokeStats.constant(0.10, 0.10), 12.0, REFERENCE_THRESHOLDS)
    assert fb.band == BELOW_BAND
    assert fb.excess[0] == pytest.approx(0.10 - 0.75 * 0.242)


@given(st.floats(0.0, 0.6))
def test_deadband_zero_inside_and_continuous(i):
    thr = 0.242
    fb = clearance_feedback(StrokeStats.constant(i, 0.205), 12.0, REFERENCE_THRESHOLDS)
    e = fb.excess[0]
    if 0.75 * thr <= i <= thr:
        assert e == 0.0
    # piecewise linear with unit slope outside the band, zero inside
    assert e == pytest.approx(max(0.0, i - thr) + min(0.0, i - 0.75 * thr), abs=1e-15)


@pytest.mark.parametrize("edge", [0.75 * 0.242, 0.242])
def test_deadband_continuous_at_edges(edge):
    vals = [clearance_feedback(StrokeStats.constant(edge + d, 0.205), 12.0,
                               REFERENCE_THRESHOLDS).excess[0] for d in (-1e-9, 0.0, 1e-9)]
    assert max(abs(v) for v in vals) < 2e-9


def _stats(ch):
    return StrokeStats(0.5 * (ch[0] + ch[1]), ch[0], ch[1], 0.5 * (ch[2] + ch[3]), ch[2], ch[3])


BASE = _stats([0.24, 0.24, 0.20, 0.20])


@pytest.mark.parametrize("raised,sig,direction", [
    ((0, 2), "both-up", "front"), ((1, 3), "both-down", "back"),
    ((0,), "L-up", "front-left"), ((1,), "L-down", "back-left"),
    ((2,), "R-up", "front-right"), ((3,), "R-down", "back-right")])
def test_detect_collision_six_signatures(raised, sig, direction):
    ch = BASE.channels().copy()
    ch[list(raised)] *= 1.15
    ev = detect_collision(_stats(ch), BASE, t=1.0, position=(0.1, 0.2, 0.3), heading=0.5)
    assert ev.signature == sig and ev.direction == direction
    assert ev.gust_possible == (len(raised) == 2)
    np.testing.assert_array_equal(ev.position_at_detection, [0.1, 0.2, 0.3])


def test_no_event_below_threshold():
    assert detect_collision(_stats(BASE.channels() * 1.09), BASE) is None


@given(st.lists(st.booleans(), min_size=4, max_size=4),
       st.lists(st.floats(1.0, 2.0), min_size=4, max_size=4))
def test_classify_total(mask, ratios):
    out = classify(np.array(mask), np.array(ratios))
    if not any(mask):
        assert out is None
    else:
        sig, direction, gust = out
        assert all(part in CHANNELS or part.startswith(("both", "L-", "R-"))
                   for part in sig.split("+"))
        assert direction is None or isinstance(direction, str)


def test_same_wing_halves_resolve_to_larger():
    assert classify(np.array([True, True, False, False]),
                    np.array([1.3, 1.2, 1.0, 1.0]))[0] == "L-up"


def test_detector_debounces_and_reports_once():
    det = CollisionDetector()
    for k in range(10):
        assert det.update(BASE, k * 0.03, (0, 0, 0), 0.0) is None
    hit = _stats(BASE.channels() * [1.2, 1.0, 1.2, 1.0])
    assert det.update(hit, 0.30, (0, 0, 0), 0.0) is None
    assert det.active
    ev = det.update(hit, 0.33, (0, 0, 0), 0.0)
    assert ev is not None and ev.signature == "both-up"
    assert det.update(hit, 0.36, (0, 0, 0), 0.0) is None


def test_detector_absorbs_uniform_rise():
    det = CollisionDetector()
    for k in range(10):
        det.update(BASE, k * 0.03, (0, 0, 0), 0.0)
    for k in range(5):
        assert det.update(_stats(BASE.channels() * 1.2), 0.3 + k, (0, 0, 0), 0.0) is None
    assert det.baseline[0] > BASE.channels()[0]
