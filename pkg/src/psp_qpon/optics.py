"""Monte-Carlo model of the optical layer, all quantities in shot-noise units.

Every operation is a pure function of its inputs and seed. Frames carry the
complex field ``z = x + i p``; a vacuum mode has ``Var(x) = Var(p) = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import (
    DegenerateSource,
    InvalidVariance,
    LengthMismatch,
    ScheduleMismatch,
    UnsupportedFanout,
)
from .frames import FrameKind, QuadratureFrame, check_equal_lengths

SeedLike = int | np.random.SeedSequence | np.random.Generator | None

# port identifiers for counter-based stream derivation
PORT_SOURCE = 0
PORT_SPLITTER = 1
PORT_SWITCH = 2
PORT_PHASE = 3
PORT_QNU_BASE = 100


class _Spec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SourceSpec(_Spec):
    """Thermal source, monitor splitter and VOA of the line terminal."""

    variance_snu: float = Field(ge=1.0, description="total thermal quadrature variance V_s")
    monitor_split: float = Field(0.99, gt=0.0, lt=1.0, description="fraction sent to QLT heterodyne")
    voa_transmittance: float = Field(1.0, gt=0.0, le=1.0)


class DetectorSpec(_Spec):
    efficiency: float = Field(gt=0.0, le=1.0)
    electronic_noise_snu: float = Field(0.0, ge=0.0)
    bandwidth_hz: float = Field(4e9, gt=0.0)


class ChannelSpec(_Spec):
    transmittance_db: float = Field(le=0.0)
    excess_noise_snu: float = Field(0.0, ge=0.0, description="channel-input referred")
    label: str = ""

    @property
    def transmittance(self) -> float:
        return 10.0 ** (self.transmittance_db / 10.0)


class SwitchSchedule(_Spec):
    """Optical-switch pattern: slot ``k`` is a calibration slot iff ``k % period``
    is in ``calibration_slots``."""

    period: int = Field(2, ge=2)
    calibration_slots: tuple[int, ...] = (0,)
    extinction_db: float = Field(24.0, ge=0.0)

    @field_validator("calibration_slots")
    @classmethod
    def _distinct(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("calibration slots must be distinct")
        return tuple(sorted(v))

    @model_validator(mode="after")
    def _partition(self):
        if not self.calibration_slots:
            raise ValueError("at least one calibration slot is required")
        if any(not 0 <= s < self.period for s in self.calibration_slots):
            raise ValueError("calibration slots must lie in [0, period)")
        if len(self.calibration_slots) >= self.period:
            raise ValueError("schedule leaves no signal slots")
        return self

    def is_calibration(self, slot: int) -> bool:
        return slot % self.period in self.calibration_slots

    @property
    def leakage(self) -> float:
        """Power fraction of the signal surviving the switch in calibration slots."""
        return 0.0 if math.isinf(self.extinction_db) else 10.0 ** (-self.extinction_db / 10.0)


@dataclass(frozen=True)
class PspStats:
    """Second-order statistics of passive state preparation.

    ``equiv_modulation_variance_snu + psp_noise_snu + 1`` is the variance of
    the outgoing mode.
    """

    equiv_modulation_variance_snu: float
    psp_noise_snu: float
    estimator_gain: float
    outgoing_variance_snu: float


def stream_seed(master: int, frame_index: int, port: int) -> np.random.SeedSequence:
    """Independent stream for one (frame, port) pair of a run."""
    return np.random.SeedSequence(int(master), spawn_key=(int(frame_index), int(port)))


def _rng(seed: SeedLike) -> np.random.Generator:
    return np.random.default_rng(seed)


def complex_normal(rng: np.random.Generator, n: int, variance: float = 1.0) -> np.ndarray:
    """``x + i p`` with independent N(0, variance) quadratures."""
    z = rng.standard_normal(2 * n).view(np.complex128)
    if variance != 1.0:
        z *= math.sqrt(variance)
    return z


def _split_arrays(za: np.ndarray, zb: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    rt, rr = math.sqrt(t), math.sqrt(1.0 - t)
    return rt * za + rr * zb, rr * za - rt * zb


def sample_thermal_frames(
    spec: SourceSpec, n_samples: int, n_frames: int, seed: int, sample_rate_hz: float = 4e9
) -> list[QuadratureFrame]:
    if spec.variance_snu < 1.0:
        raise InvalidVariance(f"thermal variance {spec.variance_snu} < 1")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    return [
        QuadratureFrame(
            0,
            k,
            complex_normal(_rng(stream_seed(seed, k, PORT_SOURCE)), n_samples, spec.variance_snu),
            sample_rate_hz=sample_rate_hz,
        )
        for k in range(n_frames)
    ]


def vacuum_frame(like: QuadratureFrame, seed: SeedLike) -> QuadratureFrame:
    return like.with_samples(complex_normal(_rng(seed), len(like)))


def beam_splitter(
    in_a: QuadratureFrame, in_b: QuadratureFrame, t: float
) -> tuple[QuadratureFrame, QuadratureFrame]:
    """``out1 = sqrt(t) a + sqrt(1-t) b``, ``out2 = sqrt(1-t) a - sqrt(t) b``."""
    if len(in_a) != len(in_b):
        raise LengthMismatch(f"beam splitter inputs have lengths {len(in_a)} and {len(in_b)}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"transmittance {t} outside [0, 1]")
    z1, z2 = _split_arrays(in_a.z, in_b.z, t)
    return in_a.with_samples(z1), in_a.with_samples(z2)


def split_1_to_n(frame: QuadratureFrame, n: int, seed: SeedLike) -> list[QuadratureFrame]:
    """Balanced 1-to-n splitter built from a tree of 50:50 beam splitters.

    A fresh vacuum enters the unused port of every splitter; output ``i`` gets
    role ``i + 1``.
    """
    if n < 2 or n & (n - 1):
        raise UnsupportedFanout(f"fan-out {n} is not a power of two >= 2")
    rng = _rng(seed)
    level = [frame.z]
    while len(level) < n:
        nxt = []
        for z in level:
            nxt.extend(_split_arrays(z, complex_normal(rng, z.size), 0.5))
        level = nxt
    return [frame.with_samples(z, role=i + 1) for i, z in enumerate(level)]


def lossy_channel(frame: QuadratureFrame, spec: ChannelSpec, seed: SeedLike) -> QuadratureFrame:
    """``out = sqrt(T) in + w`` with ``Var(w) = 1 - T + T xi``."""
    t = spec.transmittance
    noise = 1.0 - t + t * spec.excess_noise_snu
    z = math.sqrt(t) * frame.z
    if noise > 0:
        z += complex_normal(_rng(seed), len(frame), noise)
    return frame.with_samples(z)


def heterodyne_detect(frame: QuadratureFrame, det: DetectorSpec, seed: SeedLike) -> QuadratureFrame:
    """Measured quadratures ``sqrt(eta/2) q + n`` with ``Var(n) = 1 - eta/2 + v_el``.

    A vacuum input reads ``1 + v_el`` per quadrature.
    """
    eta = det.efficiency
    z = math.sqrt(eta / 2.0) * frame.z
    z += complex_normal(_rng(seed), len(frame), 1.0 - eta / 2.0 + det.electronic_noise_snu)
    return frame.with_samples(z, sample_rate_hz=frame.sample_rate_hz)


def heterodyne_variance(mode_variance: float, det: DetectorSpec) -> float:
    """Measured per-quadrature variance for an input mode of variance ``mode_variance``."""
    return det.efficiency * (mode_variance - 1.0) / 2.0 + 1.0 + det.electronic_noise_snu


def psp_statistics(source: SourceSpec, qlt_detector: DetectorSpec) -> PspStats:
    """Closed-form PSP statistics from the jointly Gaussian source model."""
    excess = source.variance_snu - 1.0
    tm, tv = source.monitor_split, source.voa_transmittance
    var_meas = heterodyne_variance(1.0 + tm * excess, qlt_detector)
    cov = math.sqrt(tv * (1.0 - tm) * tm * qlt_detector.efficiency / 2.0) * excess
    var_out = 1.0 + tv * (1.0 - tm) * excess
    gain = cov / var_meas
    va = cov * cov / var_meas
    return PspStats(va, var_out - 1.0 - va, gain, var_out)


def source_variance_for_modulation(
    modulation_variance: float,
    monitor_split: float,
    voa_transmittance: float,
    qlt_detector: DetectorSpec,
) -> float:
    """Thermal variance ``V_s`` that yields the requested equivalent modulation variance."""
    eta, vel = qlt_detector.efficiency, qlt_detector.electronic_noise_snu
    c2 = voa_transmittance * (1.0 - monitor_split) * monitor_split * eta / 2.0
    b = modulation_variance * eta * monitor_split / 2.0
    disc = b * b + 4.0 * c2 * modulation_variance * (1.0 + vel)
    return 1.0 + (b + math.sqrt(disc)) / (2.0 * c2)


def psp_prepare(
    source: SourceSpec,
    qlt_detector: DetectorSpec,
    n: int,
    seed: SeedLike,
    frame_index: int = 0,
    sample_rate_hz: float = 4e9,
) -> tuple[QuadratureFrame, QuadratureFrame, PspStats]:
    """Passively prepare ``n`` outgoing modes and QLT's estimate of them.

    The thermal mode is split by the monitor splitter; the strong arm is
    heterodyned locally and the weak arm passes the VOA. QLT's estimate is the
    least-squares linear prediction of the outgoing quadratures from her
    measurement, using the exact model gain.

    Returns ``(outgoing, estimate, stats)`` where ``stats`` is analytic.
    """
    if source.variance_snu < 1.0:
        raise InvalidVariance(f"thermal variance {source.variance_snu} < 1")
    stats = psp_statistics(source, qlt_detector)
    if source.variance_snu > 1.0 and stats.estimator_gain == 0.0:
        raise DegenerateSource("QLT measurement carries no information on the outgoing mode")
    rng = _rng(seed)
    thermal = complex_normal(rng, n, source.variance_snu)
    to_qlt, outgoing = _split_arrays(thermal, complex_normal(rng, n), source.monitor_split)
    tv = source.voa_transmittance
    if tv < 1.0:
        outgoing = math.sqrt(tv) * outgoing + complex_normal(rng, n, 1.0 - tv)
    eta = qlt_detector.efficiency
    measured = math.sqrt(eta / 2.0) * to_qlt
    measured += complex_normal(rng, n, 1.0 - eta / 2.0 + qlt_detector.electronic_noise_snu)
    estimate = stats.estimator_gain * measured
    out_frame = QuadratureFrame(0, frame_index, outgoing, sample_rate_hz=sample_rate_hz)
    est_frame = QuadratureFrame(0, frame_index, estimate, sample_rate_hz=sample_rate_hz)
    return out_frame, est_frame, stats


def estimate_psp_statistics(outgoing: QuadratureFrame, estimate: QuadratureFrame) -> PspStats:
    """Regression re-estimate of the PSP statistics from samples.

    Quadratures are pooled; zero means are assumed (the model has none).
    """
    n = check_equal_lengths(outgoing, estimate)
    zo, ze = outgoing.z, estimate.z
    var_out = np.vdot(zo, zo).real / (2 * n)
    var_est = np.vdot(ze, ze).real / (2 * n)
    cov = np.vdot(ze, zo).real / (2 * n)
    va = cov * cov / var_est
    return PspStats(float(va), float(var_out - 1.0 - va), float(cov / var_est), float(var_out))


def apply_switch_schedule(
    frames: Sequence[QuadratureFrame],
    schedule: SwitchSchedule,
    lo_power_drift: Sequence[float],
    seed: SeedLike,
    electronic_noise: float = 0.0,
) -> list[QuadratureFrame]:
    """Turn a slot-ordered sequence of measured frames into the switch output.

    Slot ``k`` is ``frames[k]``. In calibration slots the switch routes a
    vacuum-fed detector reading (variance ``1 + electronic_noise``) mixed with
    the signal attenuated by the extinction ratio; signal slots pass
    unchanged. Every slot is then scaled by the LO power ``lo_power_drift[k]``.
    """
    if len(lo_power_drift) != len(frames):
        raise ScheduleMismatch(
            f"{len(lo_power_drift)} drift values for {len(frames)} frames"
        )
    leak = schedule.leakage
    out = []
    rng = _rng(seed)
    for slot, (frame, gain) in enumerate(zip(frames, lo_power_drift)):
        if gain <= 0:
            raise ScheduleMismatch(f"non-positive LO power {gain} in slot {slot}")
        amp = math.sqrt(gain)
        if schedule.is_calibration(slot):
            z = complex_normal(rng, len(frame), (1.0 - leak) * (1.0 + electronic_noise))
            if leak > 0:
                z += math.sqrt(leak) * frame.z
            out.append(
                QuadratureFrame(
                    frame.role, frame.frame_index, amp * z, FrameKind.SHOT_NOISE, frame.sample_rate_hz
                )
            )
        else:
            out.append(frame.with_samples(amp * frame.z))
    return out


def lo_drift_profile(n_slots: int, amplitude: float, period_frames: float, phase: float = 0.0) -> np.ndarray:
    """Relative LO power per slot, ``1 + amplitude sin(2 pi k / period + phase)``."""
    k = np.arange(n_slots)
    return 1.0 + amplitude * np.sin(2.0 * np.pi * k / period_frames + phase)


def wiener_phase_walk(n_points: int, step_std: float, rng: np.random.Generator, start: float = 0.0) -> np.ndarray:
    """Random-walk phase sampled at ``n_points`` block boundaries."""
    steps = rng.normal(0.0, step_std, n_points - 1) if step_std > 0 else np.zeros(n_points - 1)
    return start + np.concatenate([[0.0], np.cumsum(steps)])


def rotate(frame: QuadratureFrame, theta) -> QuadratureFrame:
    """Rotate the field by ``theta`` (scalar or per-sample): ``z -> z exp(i theta)``."""
    return frame.with_samples(frame.z * np.exp(1j * np.asarray(theta, dtype=float)))
