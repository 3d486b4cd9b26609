"""Current-based proprioception: filtering, per-wingbeat statistics,
clearance thresholds and collision classification.

Channels are ordered (left-up, left-down, right-up, right-down) wherever a
4-vector of half-stroke currents appears.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .actuation import SAMPLE_RATE

CHANNELS = ("L-up", "L-down", "R-up", "R-down")
IN_BAND, ABOVE_BAND, BELOW_BAND = "in_band", "above_band", "below_band"

DIRECTIONS = {
    frozenset({"L-up", "R-up"}): ("both-up", "front", True),
    frozenset({"L-down", "R-down"}): ("both-down", "back", True),
    frozenset({"L-up"}): ("L-up", "front-left", False),
    frozenset({"L-down"}): ("L-down", "back-left", False),
    frozenset({"R-up"}): ("R-up", "front-right", False),
    frozenset({"R-down"}): ("R-down", "back-right", False),
}


class CalibrationFault(ValueError):
    pass


class InsufficientData(ValueError):
    pass


class ExtrapolationWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# low-pass filter


def lowpass_coefficient(cutoff: float = 200.0, rate: float = SAMPLE_RATE) -> float:
    """Smoothing factor of ``y += alpha*(x - y)`` with -3 dB at ``cutoff``.

    The pole ``a = 1 - alpha`` solves ``a^2 - (4 - 2 cos w) a + 1 = 0`` at the
    normalised cutoff ``w``; the root inside the unit circle is taken.
    """
    if not 0 < cutoff < rate / 2:
        raise ValueError("cutoff must lie in (0, Nyquist)")
    w = 2 * math.pi * cutoff / rate
    b = 4 - 2 * math.cos(w)
    a = (b - math.sqrt(b * b - 4)) / 2
    return 1.0 - a


def lowpass_response(freq, cutoff: float = 200.0, rate: float = SAMPLE_RATE):
    """Magnitude response of the single-pole filter at ``freq`` Hz."""
    alpha = lowpass_coefficient(cutoff, rate)
    z = np.exp(-1j * 2 * np.pi * np.asarray(freq, float) / rate)
    return np.abs(alpha / (1 - (1 - alpha) * z))


def lowpass(x, cutoff: float = 200.0, rate: float = SAMPLE_RATE, initial=None) -> np.ndarray:
    """Filter samples along axis 0.  The state starts at ``initial`` (default
    the first sample) so a constant input passes through untouched."""
    x = np.asarray(x, float)
    alpha = lowpass_coefficient(cutoff, rate)
    a = 1.0 - alpha
    y0 = x[0] if initial is None else np.asarray(initial, float)
    zi = np.asarray(a * y0, float)[np.newaxis, ...]
    y, _ = lfilter([alpha], [1.0, -a], x, axis=0, zi=zi)
    return y


@dataclass
class LowPassFilter:
    """Streaming form of :func:`lowpass` for multi-channel chunks."""

    cutoff: float = 200.0
    rate: float = SAMPLE_RATE
    _state: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.alpha = lowpass_coefficient(self.cutoff, self.rate)

    def process(self, chunk) -> np.ndarray:
        chunk = np.asarray(chunk, float)
        if len(chunk) == 0:
            return chunk.copy()
        a = 1.0 - self.alpha
        if self._state is None:
            self._state = (a * chunk[0])[np.newaxis, ...]
        y, self._state = lfilter([self.alpha], [1.0, -a], chunk, axis=0, zi=self._state)
        return y

    def reset(self):
        self._state = None


# ---------------------------------------------------------------------------
# wingbeat statistics


@dataclass(frozen=True)
class StrokeStats:
    """Cycle and half-stroke mean currents per wing, A."""

    mean_L: float
    up_L: float
    down_L: float
    mean_R: float
    up_R: float
    down_R: float
    n_beats: int = 1

    def channels(self) -> np.ndarray:
        return np.array([self.up_L, self.down_L, self.up_R, self.down_R])

    def means(self) -> np.ndarray:
        return np.array([self.mean_L, self.mean_R])

    @classmethod
    def constant(cls, i_L: float, i_R: float) -> "StrokeStats":
        return cls(i_L, i_L, i_L, i_R, i_R, i_R)


def _stats_from_sums(s, n, n_beats) -> StrokeStats:
    # s, n: (4,) sums and counts per channel
    if np.any(n == 0):
        raise InsufficientData("a half-stroke has no samples")
    mL = (s[0] + s[1]) / (n[0] + n[1])
    mR = (s[2] + s[3]) / (n[2] + n[3])
    c = s / n
    return StrokeStats(float(mL), float(c[0]), float(c[1]), float(mR), float(c[2]),
                       float(c[3]), n_beats)


def _channel_masks(up: np.ndarray) -> list[np.ndarray]:
    up = np.asarray(up, bool)
    return [up[:, 0], ~up[:, 0], up[:, 1], ~up[:, 1]]


def beat_index(t, wingbeat_hz: float, rate: float = SAMPLE_RATE) -> np.ndarray:
    # small slack so a sample landing on a beat boundary opens the new beat
    return np.floor(np.asarray(t, float) * wingbeat_hz + 1e-9).astype(np.int64)


def stroke_stats(t, currents, upstroke, wingbeat_hz: float = 34.0,
                 window: int | None = None, rate: float = SAMPLE_RATE) -> StrokeStats:
    """Means over the last ``window`` complete wingbeats in the trace.

    Beat ``k`` spans ``[k/f, (k+1)/f)``; a beat counts as complete when the
    trace covers it from start to end.  ``upstroke`` holds one flag per wing
    per sample.
    """
    t = np.asarray(t, float)
    i = np.asarray(currents, float)
    up = np.asarray(upstroke, bool)
    if len(t) == 0:
        raise InsufficientData("empty trace")
    k = beat_index(t, wingbeat_hz, rate)
    dt = 1.0 / rate
    first = int(math.ceil(t[0] * wingbeat_hz - 1e-9))
    last = int(math.floor((t[-1] + dt) * wingbeat_hz + 1e-9)) - 1
    if last < first:
        raise InsufficientData("window holds no complete wingbeat")
    if window is not None:
        if window < 1:
            raise ValueError("window must be at least one wingbeat")
        first = max(first, last - window + 1)
    sel = (k >= first) & (k <= last)
    masks = _channel_masks(up[sel])
    cur = i[sel]
    s = np.array([cur[masks[0], 0].sum(), cur[masks[1], 0].sum(),
                  cur[masks[2], 1].sum(), cur[masks[3], 1].sum()])
    n = np.array([m.sum() for m in masks], float)
    return _stats_from_sums(s, n, last - first + 1)


def group_delay_samples(cutoff: float = 200.0, rate: float = SAMPLE_RATE) -> int:
    """Low-frequency group delay of :func:`lowpass`, rounded to samples."""
    alpha = lowpass_coefficient(cutoff, rate)
    return int(round((1.0 - alpha) / alpha))


@dataclass
class BeatAccumulator:
    """Consumes sample chunks and emits one :class:`StrokeStats` per
    completed wingbeat, as ``(beat_index, stats)`` pairs.

    ``flag_delay`` shifts the half-stroke flags by that many samples so they
    line up with a filtered current.  When per-sample upstroke fractions are
    given, half-stroke means divide the summed current by the expected
    half-stroke length instead of the sample count, which removes the jitter
    of one extra near-zero sample at a stroke reversal.
    """

    wingbeat_hz: float = 34.0
    rate: float = SAMPLE_RATE
    flag_delay: int = 0

    def __post_init__(self):
        self._k: int | None = None
        self._complete = False
        self._s = np.zeros(4)
        self._n = np.zeros(4)
        self._frac = np.zeros(2)
        self._flags: np.ndarray | None = None

    def _emit(self) -> StrokeStats:
        n_tot = self._n[0] + self._n[1]
        if self._frac.any() and n_tot > 0:
            f = self._frac / n_tot
            # expected sample counts of each half-stroke
            n = np.array([f[0], 1 - f[0], f[1], 1 - f[1]]) * self.rate / self.wingbeat_hz
            return _stats_from_sums(self._s, np.where(self._n > 0, n, 0.0), 1)
        return _stats_from_sums(self._s, self._n, 1)

    def push(self, t, currents, upstroke, fractions=None) -> list[tuple[int, StrokeStats]]:
        t = np.asarray(t, float)
        out = []
        if len(t) == 0:
            return out
        ks = beat_index(t, self.wingbeat_hz, self.rate)
        cur = np.asarray(currents, float)
        up = np.asarray(upstroke, bool)
        if self.flag_delay:
            if self._flags is None:
                self._flags = np.repeat(up[:1], self.flag_delay, axis=0)
            joined = np.concatenate([self._flags, up])
            up = joined[:len(up)]
            self._flags = joined[len(joined) - self.flag_delay:]
        fr = None if fractions is None else np.broadcast_to(
            np.asarray(fractions, float), (len(t), 2))
        start = 0
        while start < len(t):
            k = ks[start]
            stop = start + int(np.searchsorted(ks[start:], k, side="right"))
            if self._k is None or k != self._k:
                if self._k is not None and self._complete:
                    out.append((self._k, self._emit()))
                self._k = int(k)
                # a beat is complete only if its first sample was observed
                self._complete = t[start] - k / self.wingbeat_hz < 1.0 / self.rate - 1e-12
                self._s[:] = 0.0
                self._n[:] = 0.0
                self._frac[:] = 0.0
            masks = _channel_masks(up[start:stop])
            c = cur[start:stop]
            for j, m in enumerate(masks):
                self._s[j] += c[m, j // 2].sum()
                self._n[j] += m.sum()
            if fr is not None:
                self._frac += fr[start:stop].sum(axis=0)
            start = stop
        return out


# ---------------------------------------------------------------------------
# clearance thresholds


@dataclass(frozen=True)
class ThresholdModel:
    """Linear map from drive amplitude to each wing's threshold current."""

    slope_L: float
    intercept_L: float
    slope_R: float
    intercept_R: float
    v_range: tuple[float, float] = (10.0, 15.0)
    r2: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.slope_L <= 0 or self.slope_R <= 0:
            raise ValueError("threshold slopes must be positive")


REFERENCE_THRESHOLDS = ThresholdModel(0.015, 0.062, 0.014, 0.037)


def threshold_at(V_s, model: ThresholdModel) -> tuple[float, float]:
    """Threshold currents at drive amplitude ``V_s``.

    ``V_s`` may be a scalar or a per-wing pair.  Values outside the
    calibrated range are extrapolated with an :class:`ExtrapolationWarning`.
    """
    VL, VR = (V_s, V_s) if np.ndim(V_s) == 0 else V_s
    lo, hi = model.v_range
    if min(VL, VR) < lo - 1e-12 or max(VL, VR) > hi + 1e-12:
        warnings.warn(f"drive amplitude outside calibrated range {model.v_range}",
                      ExtrapolationWarning, stacklevel=2)
    return model.slope_L * VL + model.intercept_L, model.slope_R * VR + model.intercept_R


def calibrate_thresholds(runs: Sequence[tuple[float, StrokeStats]],
                         v_range: tuple[float, float] | None = None) -> ThresholdModel:
    """Least-squares line of cycle-mean current against drive amplitude."""
    V = np.array([v for v, _ in runs], float)
    if len(np.unique(V)) < 2:
        raise CalibrationFault("need at least two distinct voltages")
    A = np.stack([V, np.ones_like(V)], axis=1)
    fits, r2 = [], []
    for side in ("mean_L", "mean_R"):
        y = np.array([getattr(s, side) for _, s in runs], float)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        res = y - A @ coef
        ss_tot = float(((y - y.mean()) ** 2).sum())
        r2.append(1.0 - float((res ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0)
        fits.append(coef)
    if v_range is None:
        v_range = (float(V.min()), float(V.max()))
    try:
        return ThresholdModel(fits[0][0], fits[0][1], fits[1][0], fits[1][1], v_range,
                              (r2[0], r2[1]))
    except ValueError as exc:
        raise CalibrationFault(str(exc)) from exc


@dataclass(frozen=True)
class ClearanceFeedback:
    band: str
    excess: np.ndarray  # per wing, A
    wing_bands: tuple[str, str]
    ratio: np.ndarray = field(default_factory=lambda: np.ones(2))  # mean / threshold

    @property
    def mean_excess(self) -> float:
        return float(self.excess.mean())


def _band_excess(i, thr, lo, hi):
    if i > hi * thr:
        return ABOVE_BAND, i - hi * thr
    if i < lo * thr:
        return BELOW_BAND, i - lo * thr
    return IN_BAND, 0.0


def clearance_feedback(stats: StrokeStats, V_s, model: ThresholdModel,
                       deadband: tuple[float, float] = (0.75, 1.0),
                       current_scale=(1.0, 1.0)) -> ClearanceFeedback:
    """Dead-band classification of cycle-mean currents against thresholds.

    ``current_scale`` divides each wing's mean before comparison, which lets
    the caller remove split-cycle effects the thresholds were not fitted on.
    """
    lo, hi = deadband
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        thr = threshold_at(V_s, model)
    means = stats.means() / np.asarray(current_scale, float)
    res = [_band_excess(m, t, lo, hi) for m, t in zip(means, thr)]
    excess = np.array([r[1] for r in res])
    bands = (res[0][0], res[1][0])
    if bands == (IN_BAND, IN_BAND):
        band = IN_BAND
    else:
        me = excess.mean()
        band = ABOVE_BAND if me > 0 else BELOW_BAND if me < 0 else IN_BAND
    return ClearanceFeedback(band, excess, bands, means / np.asarray(thr))


# ---------------------------------------------------------------------------
# collision classification


@dataclass(frozen=True)
class CollisionEvent:
    t: float
    signature: str
    direction: str | None
    gust_possible: bool
    position_at_detection: np.ndarray
    heading: float
    ratios: np.ndarray = field(default_factory=lambda: np.ones(4))


def classify(elevated: np.ndarray, ratios: np.ndarray) -> tuple[str, str | None, bool] | None:
    """Map a boolean channel mask to ``(signature, direction, gust_possible)``.

    When both halves of one wing are raised, the larger half decides.
    Patterns that fit no direction keep their raw signature and no direction.
    """
    names = {CHANNELS[j] for j in range(4) if elevated[j]}
    if not names:
        return None
    if len(names) == 2:
        for w, (u, d) in enumerate((("L-up", "L-down"), ("R-up", "R-down"))):
            if names == {u, d}:
                names = {u if ratios[2 * w] >= ratios[2 * w + 1] else d}
    hit = DIRECTIONS.get(frozenset(names))
    if hit is not None:
        return hit
    return "+".join(c for c in CHANNELS if c in names), None, False


def detect_collision(stats: StrokeStats, baseline: StrokeStats, rel_threshold: float = 0.10,
                     t: float = 0.0, position=(0.0, 0.0, 0.0), heading: float = 0.0,
                     scale=None) -> CollisionEvent | None:
    """Compare half-stroke means with a collision-free baseline.

    ``scale`` (4,) divides the current channels, removing the expected
    change from a different excitation than the baseline was taken at.
    """
    ch = stats.channels()
    if scale is not None:
        ch = ch / np.asarray(scale, float)
    ratios = ch / baseline.channels()
    hit = classify(ratios > 1.0 + rel_threshold, ratios)
    if hit is None:
        return None
    sig, direction, gust = hit
    return CollisionEvent(t, sig, direction, gust, np.asarray(position, float).copy(),
                          heading, ratios)


@dataclass
class CollisionDetector:
    """Streaming detector run once per completed wingbeat.

    Keeps a rolling baseline of collision-free beats and reports a signature
    once it has held for ``debounce`` consecutive beats.  The baseline stops
    absorbing beats while any channel sits above ``freeze_fraction`` of the
    threshold, so a slowly growing contact cannot drag it upward; after
    ``max_freeze`` such beats without an event it resumes.  A rise on all
    four channels together is a clearance change, not a contact, and is
    absorbed.
    """

    rel_threshold: float = 0.10
    baseline_beats: int = 10
    min_baseline: int = 5
    debounce: int = 2
    freeze_fraction: float = 0.5
    max_freeze: int = 20

    def __post_init__(self):
        self._history: deque = deque(maxlen=self.baseline_beats)
        self._pending: str | None = None
        self._count = 0
        self._emitted: str | None = None
        self._frozen = 0

    @property
    def baseline(self) -> np.ndarray | None:
        if len(self._history) < self.min_baseline:
            return None
        return np.mean(self._history, axis=0)

    def _absorb(self, ch):
        self._history.append(ch)
        self._pending, self._count, self._emitted = None, 0, None
        self._frozen = 0

    def update(self, stats: StrokeStats, t: float, position, heading: float,
               scale=None) -> CollisionEvent | None:
        ch = stats.channels()
        if scale is not None:
            ch = ch / np.asarray(scale, float)
        base = self.baseline
        if base is None:
            self._history.append(ch)
            return None
        ratios = ch / base
        guard = 1.0 + self.freeze_fraction * self.rel_threshold
        if np.all(ratios > guard):
            self._absorb(ch)
            return None
        hit = classify(ratios > 1.0 + self.rel_threshold, ratios)
        if hit is None:
            if np.any(ratios > guard) and self._frozen < self.max_freeze:
                self._frozen += 1
                self._pending, self._count = None, 0
            else:
                self._absorb(ch)
            return None
        sig = hit[0]
        if sig == self._pending:
            self._count += 1
        else:
            self._pending, self._count = sig, 1
        if self._count >= self.debounce and sig != self._emitted:
            self._emitted = sig
            return CollisionEvent(t, sig, hit[1], hit[2], np.asarray(position, float).copy(),
                                  heading, ratios)
        return None

    @property
    def active(self) -> bool:
        return self._pending is not None
