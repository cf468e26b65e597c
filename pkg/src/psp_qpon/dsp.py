"""Post-detection DSP: filtering, frame sync, phase tracking and SNU calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import signal

from .errors import (
    DegenerateSegment,
    EmptyHistory,
    InsufficientCalibration,
    InvalidCutoff,
    NonDivisibleLength,
    SyncFailed,
)
from .frames import FrameKind, QuadratureFrame

DEFAULT_SYNC_SEGMENT = 1 << 16


@dataclass(frozen=True)
class SyncResult:
    offset: int
    peak_correlation: float
    threshold_used: float


@dataclass(frozen=True)
class PhaseBlockEstimate:
    block_index: int
    theta: float
    revealed_fraction: float
    predictor_id: str = "estimate"


@dataclass(frozen=True)
class CalibrationRecord:
    """Shot-noise unit for one signal frame.

    ``snu_value`` is the vacuum (shot-noise) variance in raw detector units;
    ``calibration_variance`` is the mean raw variance of the contributing
    calibration frames, which also contains the electronic noise.
    """

    target_frame_index: int
    snu_value: float
    contributing_frames: tuple[int, ...]
    n_before: int
    n_after: int
    calibration_variance: float


def fir_lowpass(frame: QuadratureFrame, cutoff_fraction: float, taps: int = 101) -> QuadratureFrame:
    """Linear-phase windowed-sinc low-pass on x and p.

    ``cutoff_fraction`` is relative to the sample rate (Nyquist = 0.5). The
    output keeps the input length; edges are symmetrically padded.
    """
    if not 0.0 < cutoff_fraction < 0.5:
        raise InvalidCutoff(f"cutoff fraction {cutoff_fraction} outside (0, 0.5)")
    if taps < 1 or taps % 2 == 0:
        raise ValueError(f"tap count must be odd, got {taps}")
    h = signal.firwin(taps, 2.0 * cutoff_fraction, window="hamming")
    half = taps // 2
    padded = np.pad(frame.z, half, mode="symmetric")
    return frame.with_samples(signal.oaconvolve(padded, h, mode="valid"))


def downsample_matched(frame: QuadratureFrame, factor: int) -> QuadratureFrame:
    """Non-overlapping boxcar average over ``factor`` samples."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if len(frame) % factor:
        raise NonDivisibleLength(f"length {len(frame)} not divisible by {factor}")
    if factor == 1:
        return frame
    z = frame.z.reshape(-1, factor).mean(axis=1)
    return frame.with_samples(z, sample_rate_hz=frame.sample_rate_hz / factor)


def default_sync_threshold(segment_length: int) -> float:
    """Five standard deviations of the null correlation, ``5 / sqrt(n)``."""
    return 5.0 / math.sqrt(segment_length)


def frame_synchronize(
    reference: QuadratureFrame,
    local: QuadratureFrame,
    max_lag: int,
    threshold: float | None = None,
    segment: int | None = DEFAULT_SYNC_SEGMENT,
) -> SyncResult:
    """Find the delay of ``local`` relative to ``reference``.

    A central segment of the reference slides over ``local`` for lags in
    ``[-max_lag, max_lag]``; the normalized correlation at lag ``d`` is
    ``|sum conj(ref[i]) local[i + d]| / sqrt(E_ref E_local)``, both quadratures
    together. The modulus makes the search insensitive to a common phase
    rotation. On success ``local[i + offset]`` lines up with ``reference[i]``.

    Raises :class:`SyncFailed` when the peak stays below ``threshold``.
    """
    if threshold is not None and not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold {threshold} outside (0, 1)")
    n_ref, n_loc = len(reference), len(local)
    if max_lag < 0 or max_lag >= min(n_ref, n_loc):
        raise ValueError(f"max_lag {max_lag} must be in [0, {min(n_ref, n_loc)})")
    # reference positions whose +-max_lag neighbourhood stays inside local
    lo = max_lag
    hi = min(n_ref, n_loc - max_lag)
    if hi - lo < 1:
        raise ValueError("frames too short for the requested lag range")
    seg_len = hi - lo if segment is None else min(segment, hi - lo)
    start = lo + (hi - lo - seg_len) // 2
    seg = reference.z[start : start + seg_len]
    window = local.z[start - max_lag : start + seg_len + max_lag]

    corr = signal.correlate(window, seg, mode="valid")  # index k <-> lag k - max_lag
    power = np.abs(window) ** 2
    csum = np.concatenate([[0.0], np.cumsum(power)])
    e_loc = csum[seg_len:] - csum[:-seg_len]
    e_ref = float(np.vdot(seg, seg).real)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.abs(corr) / np.sqrt(e_ref * e_loc)
    rho = np.nan_to_num(rho)
    k = int(np.argmax(rho))
    peak = float(rho[k])
    offset = k - max_lag
    thr = default_sync_threshold(seg_len) if threshold is None else threshold
    if peak < thr:
        raise SyncFailed(peak, thr, offset)
    return SyncResult(offset, peak, thr)


def align(reference: QuadratureFrame, local: QuadratureFrame, offset: int, start: int, length: int):
    """Cut matching windows ``reference[start:start+length]`` and ``local[start+offset:...]``."""
    lo = start + offset
    if start < 0 or lo < 0 or start + length > len(reference) or lo + length > len(local):
        raise ValueError("aligned window falls outside the frames")
    return (
        reference.with_samples(reference.z[start : start + length]),
        local.with_samples(local.z[lo : lo + length]),
    )


def block_phase(alice: np.ndarray, bob: np.ndarray) -> float:
    """Angle of ``sum conj(zA) zB``; raises if both accumulators vanish."""
    acc = np.vdot(alice, bob)
    scale = math.sqrt(np.vdot(alice, alice).real * np.vdot(bob, bob).real)
    if abs(acc) <= 1e-12 * scale or scale == 0.0:
        raise DegenerateSegment("no correlation in the revealed segment")
    return float(np.angle(acc))


def estimate_block_phase(
    revealed_alice: QuadratureFrame | np.ndarray,
    revealed_bob: QuadratureFrame | np.ndarray,
    block_index: int = 0,
    revealed_fraction: float = 1.0,
) -> PhaseBlockEstimate:
    """ML rotation angle of Bob's data relative to Alice's.

    ``theta = atan2(sum(xA pB - pA xB), sum(xA xB + pA pB))``.
    """
    za = getattr(revealed_alice, "z", revealed_alice)
    zb = getattr(revealed_bob, "z", revealed_bob)
    if len(za) != len(zb):
        raise ValueError("segments must have equal length")
    if len(za) < 100:
        raise DegenerateSegment(f"segment of {len(za)} samples is shorter than 100")
    return PhaseBlockEstimate(block_index, block_phase(za, zb), revealed_fraction)


def wrap_phase(theta):
    """Wrap to ``(-pi, pi]``."""
    wrapped = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def unwrap_phases(thetas: Sequence[float]) -> np.ndarray:
    """Nearest-multiple-of-2 pi continuation."""
    return np.unwrap(np.asarray(thetas, dtype=float))


PhasePredictor = Callable[[np.ndarray, float], float]


def hold_predictor(history: np.ndarray, horizon: float = 1.0) -> float:
    return float(history[-1])


def window_linear(window: int = 8) -> PhasePredictor:
    """Least-squares line over the last ``window`` unwrapped phases, extrapolated."""
    if window < 1:
        raise ValueError("window must be >= 1")

    def predict(history: np.ndarray, horizon: float = 1.0) -> float:
        y = history[-window:]
        if y.size < 2:
            return float(y[-1])
        x = np.arange(y.size, dtype=float)
        slope, icept = np.polyfit(x, y, 1)
        return float(icept + slope * (y.size - 1 + horizon))

    predict.__name__ = f"window_linear({window})"
    return predict


def make_predictor(name: str, window: int = 8) -> PhasePredictor:
    if name == "hold":
        return hold_predictor
    if name == "window_linear":
        return window_linear(window)
    raise ValueError(f"unknown phase predictor {name!r}")


def predict_phase(
    history: Iterable[PhaseBlockEstimate | float],
    predictor: str | PhasePredictor = "hold",
    horizon: float = 1.0,
    window: int = 8,
) -> float:
    """Predict the phase ``horizon`` blocks after the last history entry.

    ``predictor`` is ``"hold"``, ``"window_linear"`` or any callable mapping the
    unwrapped history and horizon to a phase. The result is wrapped.
    """
    thetas = [getattr(h, "theta", h) for h in history]
    if not thetas:
        raise EmptyHistory("phase history is empty")
    fn = make_predictor(predictor, window) if isinstance(predictor, str) else predictor
    return wrap_phase(fn(unwrap_phases(thetas), horizon))


def compensate_phase(frame: QuadratureFrame, theta) -> QuadratureFrame:
    """``(x', p') = (x cos t + p sin t, -x sin t + p cos t)``; ``theta`` may be per-sample."""
    return frame.with_samples(frame.z * np.exp(-1j * np.asarray(theta, dtype=float)))


@dataclass(frozen=True)
class ShotNoiseSample:
    """Variance of one calibration frame; lets callers drop the samples early."""

    frame_index: int
    variance: float


def shot_noise_sample(frame: QuadratureFrame) -> ShotNoiseSample:
    if frame.kind != FrameKind.SHOT_NOISE:
        raise ValueError(f"frame {frame.frame_index} is not a calibration frame")
    return ShotNoiseSample(frame.frame_index, frame.quadrature_variance())


def realtime_snu(
    calibration: Sequence[QuadratureFrame | ShotNoiseSample],
    target_frame_index: int,
    n_before: int = 10,
    n_after: int = 10,
    electronic_noise: float = 0.0,
    mode: str = "included",
) -> CalibrationRecord:
    """Shot-noise unit for ``target_frame_index`` from nearby calibration frames.

    Uses the ``n_before`` closest calibration frames preceding the target and
    the ``n_after`` closest following it (fewer at sequence edges).

    ``mode="included"``: calibration frames were taken with the LO on and the
    signal blocked, so they read ``1 + electronic_noise`` shot-noise units and
    the unit is ``mean / (1 + electronic_noise)``.
    ``mode="subtract"``: ``electronic_noise`` is the raw LO-off variance and is
    subtracted from the mean.
    """
    samples = [c if isinstance(c, ShotNoiseSample) else shot_noise_sample(c) for c in calibration]
    before = sorted((s for s in samples if s.frame_index < target_frame_index), key=lambda s: s.frame_index)
    after = sorted((s for s in samples if s.frame_index > target_frame_index), key=lambda s: s.frame_index)
    before, after = before[-n_before:] if n_before else [], after[:n_after]
    if not before or not after:
        raise InsufficientCalibration(
            f"frame {target_frame_index}: {len(before)} calibration frames before, {len(after)} after"
        )
    used = before + after
    mean_var = float(np.mean([s.variance for s in used]))
    if mode == "included":
        snu = mean_var / (1.0 + electronic_noise)
    elif mode == "subtract":
        snu = mean_var - electronic_noise
    else:
        raise ValueError(f"unknown electronic-noise mode {mode!r}")
    if snu <= 0:
        raise InsufficientCalibration(
            f"frame {target_frame_index}: calibration variance {mean_var} below electronic-noise floor"
        )
    return CalibrationRecord(
        target_frame_index,
        snu,
        tuple(s.frame_index for s in used),
        len(before),
        len(after),
        mean_var,
    )


def normalize_frame(frame: QuadratureFrame, record: CalibrationRecord) -> QuadratureFrame:
    """Divide by ``sqrt(snu_value)`` and link the record."""
    return frame.with_samples(frame.z / math.sqrt(record.snu_value), snu_ref=record)


def unit_record(frame_index: int) -> CalibrationRecord:
    """Record for data that is already in shot-noise units."""
    return CalibrationRecord(frame_index, 1.0, (), 0, 0, 1.0)
