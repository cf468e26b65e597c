"""End-to-end orchestration: simulate -> DSP -> estimate -> key rate.

Frames stream through the chain one switch slot at a time, so memory stays
bounded by the calibration look-ahead regardless of the frame count.

Slot ``s`` of the switch schedule carries frame index ``s`` for every role.
Signal slots produce a QLT estimate frame (role 0) and one detected frame per
QNU; calibration slots produce a shot-noise frame per QNU only. The QLT
detector is local to the transmitter and is treated as calibrated.
"""

from __future__ import annotations

import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import __version__, dsp, optics, security
from .config import ScenarioConfig
from .errors import NotNormalized, QponError, StageError, UnknownAxis
from .frames import FrameKind, QuadratureFrame, write_frame
from .optics import ChannelSpec, stream_seed
from .report import EstimationPoint, KeyRateReport, QnuResult

# sub-ports of each QNU stream block (PORT_QNU_BASE + 8 * qnu + sub)
_SUB_CHANNEL, _SUB_DETECT, _SUB_SWITCH, _SUB_OFFSET = range(4)


def _qnu_port(qnu: int, sub: int) -> int:
    return optics.PORT_QNU_BASE + 8 * qnu + sub


@dataclass
class Slot:
    index: int
    kind: FrameKind
    qlt: QuadratureFrame | None
    qnus: list[QuadratureFrame]


@dataclass
class ProcessedFrame:
    """Aligned, phase-compensated and SNU-normalized data of one signal slot."""

    index: int
    qlt: QuadratureFrame
    qnus: list[QuadratureFrame]
    offsets: list[int]


def _slot_plan(config: ScenarioConfig) -> list[int]:
    """Slot indices of the run.

    A lead-in and a tail of calibration slots give every signal frame its full
    set of neighbouring shot-noise measurements; signal slots that fall in the
    lead-in are not recorded.
    """
    sched = config.switch
    slots, s, lead = [], 0, 0
    while lead < config.dsp.calibration_before:
        if sched.is_calibration(s):
            slots.append(s)
            lead += 1
        s += 1
    while sched.is_calibration(s):
        slots.append(s)
        s += 1
    n_signal = 0
    while n_signal < config.frames.count:
        slots.append(s)
        n_signal += not sched.is_calibration(s)
        s += 1
    tail = 0
    while tail < config.dsp.calibration_after:
        if sched.is_calibration(s):
            slots.append(s)
            tail += 1
        s += 1
    return slots


class Simulator:
    """Monte-Carlo source of raw detector frames, slot by slot."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.n_qnu = config.fanout
        self.seed = config.seed
        self.margin = config.impairments.max_offset_samples
        self.length = config.frames.samples + 2 * self.margin
        self.stats = optics.psp_statistics(config.source, config.qlt_detector)
        n_ch = config.fanout
        # common splitter folded into each segment: T_seg = T N, xi_seg = xi / N
        self.segments = [
            ChannelSpec(
                transmittance_db=min(ch.transmittance_db + 10.0 * math.log10(n_ch), 0.0),
                excess_noise_snu=ch.excess_noise_snu / n_ch,
                label=ch.label,
            )
            for ch in config.channels
        ]
        self.slots = _slot_plan(config)
        signal_slots = [s for s in self.slots if not config.switch.is_calibration(s)]
        self.signal_order = {s: k for k, s in enumerate(signal_slots)}
        n_periods = self.slots[-1] // config.switch.period + 1
        self.lo_power = optics.lo_drift_profile(
            n_periods * config.switch.period, config.impairments.lo_drift_amplitude, config.impairments.lo_drift_period_frames
        )
        self._init_phase(len(signal_slots))
        cov = analytic_covariance(config)
        self.detected_variance = [cov[2 * i, 2 * i] for i in range(1, self.n_qnu + 1)]

    def _init_phase(self, n_signal: int) -> None:
        imp = self.config.impairments
        n = self.config.frames.samples
        self.block = self.config.dsp.phase_block_samples
        self.blocks_per_frame = -(-n // self.block)
        n_points = n_signal * self.blocks_per_frame + 1
        self.phase_walks = [
            optics.wiener_phase_walk(
                n_points,
                imp.phase_drift_std_rad,
                np.random.default_rng(stream_seed(self.seed, i, optics.PORT_PHASE)),
                imp.initial_phase_rad,
            )
            for i in range(1, self.n_qnu + 1)
        ]

    def true_phase(self, qnu: int, slot: int) -> np.ndarray:
        """Injected phase at every raw sample position (QLT time base) of a signal slot."""
        k = self.signal_order[slot]
        nb, n, m = self.blocks_per_frame, self.config.frames.samples, self.margin
        vals = self.phase_walks[qnu - 1][k * nb : (k + 1) * nb + 1]
        knots = m + np.minimum(np.arange(nb + 1) * self.block, n)
        return np.interp(np.arange(self.length), knots, vals)

    def true_offset(self, qnu: int, slot: int) -> int:
        if self.margin == 0:
            return 0
        rng = np.random.default_rng(stream_seed(self.seed, slot, _qnu_port(qnu, _SUB_OFFSET)))
        return int(rng.integers(-self.margin, self.margin + 1))

    def _signal(self, slot: int) -> tuple[QuadratureFrame, list[QuadratureFrame]]:
        cfg = self.config
        rate = cfg.qnu_detector.bandwidth_hz
        outgoing, estimate, _ = optics.psp_prepare(
            cfg.source, cfg.qlt_detector, self.length, stream_seed(self.seed, slot, optics.PORT_SOURCE), slot, rate
        )
        if self.n_qnu == 1:
            branches = [outgoing.with_samples(outgoing.z, role=1)]
        else:
            branches = optics.split_1_to_n(outgoing, self.n_qnu, stream_seed(self.seed, slot, optics.PORT_SPLITTER))
        detected = []
        for i, (branch, seg) in enumerate(zip(branches, self.segments), start=1):
            rx = optics.lossy_channel(branch, seg, stream_seed(self.seed, slot, _qnu_port(i, _SUB_CHANNEL)))
            rx = optics.rotate(rx, self.true_phase(i, slot))
            b = optics.heterodyne_detect(rx, cfg.qnu_detector, stream_seed(self.seed, slot, _qnu_port(i, _SUB_DETECT)))
            d = self.true_offset(i, slot)
            z = np.roll(b.z, d) if d else b.z
            detected.append(b.with_samples(z))
        return estimate, detected

    def _surrogate(self, period_index: int) -> list[QuadratureFrame]:
        """Stand-in received signal for periods without a recorded signal slot.

        Only its attenuated leak through the switch reaches the calibration
        frames, so a Gaussian draw of the right variance suffices.
        """
        rng = np.random.default_rng(stream_seed(self.seed, period_index, optics.PORT_SWITCH))
        return [
            QuadratureFrame(i, 0, optics.complex_normal(rng, self.length, v), sample_rate_hz=self.config.qnu_detector.bandwidth_hz)
            for i, v in enumerate(self.detected_variance, start=1)
        ]

    def _oversample(self, frame: QuadratureFrame) -> QuadratureFrame:
        f = self.config.dsp.oversample
        if f == 1:
            return frame
        return frame.with_samples(np.repeat(frame.z, f), sample_rate_hz=frame.sample_rate_hz * f)

    def slots_iter(self) -> Iterator[Slot]:
        """Yield every slot of the run in order; switch and LO drift act per period."""
        cfg = self.config
        period = cfg.switch.period
        by_period: dict[int, list[int]] = {}
        for s in self.slots:
            by_period.setdefault(s // period, []).append(s)
        for p, slots in sorted(by_period.items()):
            estimates: dict[int, QuadratureFrame] = {}
            per_slot: dict[int, list[QuadratureFrame]] = {}
            for s in slots:
                if not cfg.switch.is_calibration(s):
                    estimates[s], per_slot[s] = self._signal(s)
            leak_src = next(iter(per_slot.values()), None)
            if leak_src is None:
                leak_src = self._surrogate(p)
            full = list(range(p * period, (p + 1) * period))
            switched: list[list[QuadratureFrame]] = []
            for i in range(self.n_qnu):
                seq = []
                for s in full:
                    src = per_slot.get(s, leak_src)[i]
                    seq.append(src.with_samples(src.z, frame_index=s))
                out = optics.apply_switch_schedule(
                    seq,
                    cfg.switch,
                    self.lo_power[full[0] : full[-1] + 1],
                    stream_seed(self.seed, p, _qnu_port(i + 1, _SUB_SWITCH)),
                    cfg.qnu_detector.electronic_noise_snu,
                )
                switched.append(out)
            for s in slots:
                kind = FrameKind.SHOT_NOISE if cfg.switch.is_calibration(s) else FrameKind.SIGNAL
                qnus = [self._oversample(switched[i][s - full[0]]) for i in range(self.n_qnu)]
                yield Slot(s, kind, estimates.get(s), qnus)


class DspChain:
    """Per-QNU receiver DSP with a calibration look-ahead buffer."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        d = config.dsp
        self.margin = config.impairments.max_offset_samples
        self.n = config.frames.samples
        self.predictor = dsp.make_predictor(d.predictor, d.predictor_window)
        self.calibration: list[list[dsp.ShotNoiseSample]] = [[] for _ in range(config.fanout)]
        self.history: list[list[float]] = [[] for _ in range(config.fanout)]
        self.pending: list[ProcessedFrame] = []

    def _front_end(self, frame: QuadratureFrame) -> QuadratureFrame:
        d = self.config.dsp
        if d.filter_taps:
            frame = dsp.fir_lowpass(frame, d.filter_cutoff / d.oversample, d.filter_taps)
        return dsp.downsample_matched(frame, d.oversample)

    def _phase(self, qnu: int, a: np.ndarray, b: QuadratureFrame) -> QuadratureFrame:
        d = self.config.dsp
        blk = d.phase_block_samples
        theta = np.empty(self.n)
        hist = self.history[qnu - 1]
        for j, lo in enumerate(range(0, self.n, blk)):
            hi = min(lo + blk, self.n)
            rev = lo + max(int(d.revealed_fraction * (hi - lo)), 1)
            est = dsp.estimate_block_phase(a[lo:rev], b.z[lo:rev], j, d.revealed_fraction)
            hist.append(est.theta)
            theta[lo:rev] = est.theta
            if rev < hi:
                theta[rev:hi] = dsp.predict_phase(hist, self.predictor, horizon=0.5)
        del hist[: max(0, len(hist) - 64)]
        return dsp.compensate_phase(b, theta)

    def push(self, slot: Slot) -> list[ProcessedFrame]:
        cfg = self.config
        if slot.kind == FrameKind.SHOT_NOISE:
            for i, f in enumerate(slot.qnus):
                self.calibration[i].append(dsp.shot_noise_sample(self._front_end(f)))
            return self._ready(final=False)
        ref = slot.qlt
        qlt = ref.with_samples(ref.z[self.margin : self.margin + self.n])
        qnus, offsets = [], []
        for i, raw in enumerate(slot.qnus, start=1):
            b = self._front_end(raw)
            if self.margin:
                sync = dsp.frame_synchronize(
                    ref, b, self.margin, cfg.dsp.sync_threshold, cfg.dsp.sync_segment
                )
                offset = sync.offset
            else:
                offset = 0
            _, b = dsp.align(ref, b, offset, self.margin, self.n)
            if cfg.dsp.phase_compensation:
                b = self._phase(i, qlt.z, b)
            qnus.append(b)
            offsets.append(offset)
        self.pending.append(ProcessedFrame(slot.index, qlt, qnus, offsets))
        return self._ready(final=False)

    def finish(self) -> list[ProcessedFrame]:
        return self._ready(final=True)

    def _ready(self, final: bool) -> list[ProcessedFrame]:
        d = self.config.dsp
        out = []
        while self.pending:
            pf = self.pending[0]
            after = min(sum(s.frame_index > pf.index for s in cal) for cal in self.calibration)
            if after < d.calibration_after and not final:
                break
            self.pending.pop(0)
            normed = []
            for i, b in enumerate(pf.qnus):
                rec = dsp.realtime_snu(
                    self.calibration[i],
                    pf.index,
                    d.calibration_before,
                    d.calibration_after,
                    self.config.qnu_detector.electronic_noise_snu,
                    d.electronic_noise_mode,
                )
                normed.append(dsp.normalize_frame(b, rec))
            pf.qlt = dsp.normalize_frame(pf.qlt, dsp.unit_record(pf.index))
            pf.qnus = normed
            out.append(pf)
        if out:
            keep = self.config.dsp.calibration_before
            first = self.pending[0].index if self.pending else out[-1].index
            for i, cal in enumerate(self.calibration):
                before = [s for s in cal if s.frame_index < first]
                self.calibration[i] = before[-keep:] + [s for s in cal if s.frame_index >= first]
        return out


def _evaluate(qnu: int, est: security.ChannelEstimate, cov: np.ndarray, params: security.KeyRateParams) -> QnuResult:
    i_ab = security.mutual_info_ab(est)
    sq = security.evaluate_security(
        qnu, i_ab, est.modulation_variance_hat, est.transmittance_hat, est.excess_noise_hat, cov, params
    )
    return QnuResult(
        qnu,
        est.transmittance_db_hat,
        est.excess_noise_hat_x,
        est.excess_noise_hat_p,
        est.excess_noise_se,
        est.snr_hat,
        est.modulation_variance_hat,
        i_ab,
        sq.inter_qnu_mi_max,
        sq.inter_qnu_mi_joint,
        sq.holevo_trusted,
        sq.holevo_untrusted,
        sq.key_rate_eq1_bps,
        sq.key_rate_eq2_bps,
        sq.below_threshold,
    )


def evaluate_point(
    config: ScenarioConfig, cov: np.ndarray, n_samples: int, point: int = 0, first_frame: int = 0, n_frames: int = 0
) -> EstimationPoint:
    """Channel estimates and security quantities of every QNU from a joint covariance."""
    params = config.keyrate_params()
    results = []
    for i in range(1, config.fanout + 1):
        idx = [0, 1, 2 * i, 2 * i + 1]
        est = security.estimate_channel_from_covariance(
            cov[np.ix_(idx, idx)], n_samples, config.qnu_detector, i
        )
        results.append(_evaluate(i, est, cov, params))
    return EstimationPoint(point, first_frame, n_frames, n_samples, tuple(results))


class Estimator:
    """Groups processed frames into estimation points."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.group = config.frames.estimation_group
        self.total = security.CovarianceAccumulator(1 + config.fanout)
        self._reset()
        self.points: list[EstimationPoint] = []
        self.covariances: list[np.ndarray] = []

    def _reset(self):
        self.acc = security.CovarianceAccumulator(1 + self.config.fanout)
        self.frames_in_group = 0
        self.first_frame = None

    def add(self, pf: ProcessedFrame) -> EstimationPoint | None:
        for f in pf.qnus:
            if f.snu_ref is None:
                raise NotNormalized(f"QNU frame {f.frame_index} has no shot-noise calibration")
        self.acc.add([pf.qlt.z] + [f.z for f in pf.qnus])
        self.frames_in_group += 1
        if self.first_frame is None:
            self.first_frame = pf.index
        if self.frames_in_group == self.group:
            return self._close()
        return None

    def finish(self) -> EstimationPoint | None:
        return self._close() if self.frames_in_group else None

    def _close(self) -> EstimationPoint:
        acc = self.acc
        cov = acc.covariance()
        point = evaluate_point(self.config, cov, acc.n, len(self.points), self.first_frame, self.frames_in_group)
        self.covariances.append(cov)
        self.total = self.total + acc
        self.points.append(point)
        self._reset()
        return point


def _runtime(start: float) -> dict:
    return {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started_unix": round(start, 3),
        "elapsed_s": round(time.time() - start, 3),
    }


def _dump_writers(dump_dir: Path | None, n_qnu: int):
    if dump_dir is None:
        return None
    dump_dir.mkdir(parents=True, exist_ok=True)
    return [open(dump_dir / f"role{r}.qpf", "wb") for r in range(n_qnu + 1)]


def run_pipeline(
    config: ScenarioConfig,
    dump_dir: str | Path | None = None,
    progress: Callable[[str], None] | None = None,
) -> KeyRateReport:
    """Simulate, process and evaluate a scenario end to end.

    Raw detector frames are written to ``dump_dir`` (one file per role) when
    given. On failure a :class:`StageError` is raised whose ``partial`` holds
    the report built so far, marked with the failing stage.
    """
    start = time.time()
    report = KeyRateReport(config.digest(), config.to_dict(), "monte_carlo")
    offsets: dict[str, list[int]] = {str(i): [] for i in range(1, config.fanout + 1)}
    report.diagnostics = {"sync_offsets": offsets}
    stage = "simulate"
    writers = _dump_writers(Path(dump_dir) if dump_dir else None, config.fanout)
    try:
        sim = Simulator(config)
        chain = DspChain(config)
        est = Estimator(config)

        def consume(ready: Iterable[ProcessedFrame]):
            nonlocal stage
            for pf in ready:
                for i, d in enumerate(pf.offsets, start=1):
                    offsets[str(i)].append(d)
                stage = "estimate"
                point = est.add(pf)
                if point is not None:
                    report.points.append(point)
                    if progress:
                        progress(f"estimation point {point.point} done")

        slots = sim.slots_iter()
        while True:
            stage = "simulate"
            slot = next(slots, None)
            if slot is None:
                break
            if writers:
                if slot.qlt is not None:
                    write_frame(writers[0], slot.qlt)
                for i, f in enumerate(slot.qnus, start=1):
                    write_frame(writers[i], f)
            stage = "dsp"
            consume(chain.push(slot))
        stage = "dsp"
        consume(chain.finish())
        stage = "estimate"
        point = est.finish()
        if point is not None:
            report.points.append(point)
        stage = "keyrate"
        report.covariance = est.total.covariance().tolist()
    except QponError as exc:
        report.failure = {"stage": stage, "error": f"{type(exc).__name__}: {exc}"}
        report.runtime = _runtime(start)
        raise StageError(stage, exc, report) from exc
    finally:
        if writers:
            for fh in writers:
                fh.close()
    report.runtime = _runtime(start)
    return report


def process_frames(config: ScenarioConfig, slots: Iterable[Slot]) -> Iterator[ProcessedFrame]:
    """Run recorded slots through the DSP chain."""
    chain = DspChain(config)
    for slot in slots:
        yield from chain.push(slot)
    yield from chain.finish()


def slots_from_frames(qlt: Iterable[QuadratureFrame], qnus: Sequence[Iterable[QuadratureFrame]]) -> Iterator[Slot]:
    """Reassemble slots from per-role frame streams (QLT frames exist for signal slots only)."""
    qlt_it = iter(qlt)
    pending_qlt = next(qlt_it, None)
    for group in zip(*qnus):
        idx = {f.frame_index for f in group}
        if len(idx) != 1:
            raise ValueError(f"QNU streams out of step at frame indices {sorted(idx)}")
        s = idx.pop()
        kind = group[0].kind
        qlt_frame = None
        if kind == FrameKind.SIGNAL:
            if pending_qlt is None or pending_qlt.frame_index != s:
                raise ValueError(f"missing QLT frame for slot {s}")
            qlt_frame, pending_qlt = pending_qlt, next(qlt_it, None)
        yield Slot(s, kind, qlt_frame, list(group))


def estimate_points(config: ScenarioConfig, frames: Iterable[ProcessedFrame]) -> Estimator:
    """Feed processed frames to a fresh :class:`Estimator` and close the last group."""
    est = Estimator(config)
    for pf in frames:
        est.add(pf)
    est.finish()
    return est


# ---------------------------------------------------------------- analytic model


def analytic_covariance(config: ScenarioConfig) -> np.ndarray:
    """Closed-form covariance of ``(x_A, p_A, x_B1, p_B1, ...)`` in detector SNU."""
    stats = optics.psp_statistics(config.source, config.qlt_detector)
    va, eps = stats.equiv_modulation_variance_snu, stats.psp_noise_snu
    det = config.qnu_detector
    eta, vel = det.efficiency, det.electronic_noise_snu
    t = np.array([ch.transmittance for ch in config.channels])
    xi = np.array([ch.excess_noise_snu for ch in config.channels])
    n = config.fanout
    small = np.zeros((n + 1, n + 1))
    small[0, 0] = va
    small[0, 1:] = small[1:, 0] = np.sqrt(eta * t / 2.0) * va
    small[1:, 1:] = eta / 2.0 * np.sqrt(np.outer(t, t)) * (va + eps)
    small[np.arange(1, n + 1), np.arange(1, n + 1)] = eta * t * (va + eps + xi) / 2.0 + 1.0 + vel
    return np.kron(small, np.eye(2))


def run_analytic(config: ScenarioConfig) -> KeyRateReport:
    """Report from the closed-form model: one point, no sampling."""
    start = time.time()
    cov = analytic_covariance(config)
    n_eff = config.frames.count * config.frames.samples
    point = evaluate_point(config, cov, max(n_eff, 1000), 0, 0, config.frames.count)
    report = KeyRateReport(config.digest(), config.to_dict(), "analytic", [point], cov.tolist())
    report.runtime = _runtime(start)
    return report


# ------------------------------------------------------------------------ sweeps

SWEEP_AXES = {
    "V_s": "source variance_snu",
    "t_v": "source voa_transmittance",
    "T_db": "all channels transmittance_db",
    "xi": "all channels excess_noise_snu",
    "beta": "keyrate beta",
    "eta": "qnu_detector efficiency",
    "v_el": "qnu_detector electronic_noise_snu",
    "fer": "keyrate fer",
}


def apply_axis(config: ScenarioConfig, axis: str, value: float) -> ScenarioConfig:
    if axis not in SWEEP_AXES:
        raise UnknownAxis(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    v = float(value)
    if axis in ("T_db", "xi"):
        key = "transmittance_db" if axis == "T_db" else "excess_noise_snu"
        return config.with_updates({"channels": [{**ch.model_dump(), key: v} for ch in config.channels]})
    section, key = SWEEP_AXES[axis].split()
    return config.with_updates({section: {key: v}})


SWEEP_COLUMNS = (
    "axis",
    "value",
    "qnu",
    "T_db_hat",
    "xi_x",
    "xi_p",
    "snr",
    "I_ab",
    "I_inter_max",
    "chi_trusted",
    "chi_untrusted",
    "K_eq1",
    "K_eq2",
)


def sweep(config: ScenarioConfig, axis: str, values: Sequence[float], analytic: bool = True) -> list[dict]:
    """One run per value; rows hold the per-QNU averages."""
    if axis not in SWEEP_AXES:
        raise UnknownAxis(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    rows = []
    for v in values:
        cfg = apply_axis(config, axis, v)
        rep = run_analytic(cfg) if analytic else run_pipeline(cfg)
        for qnu, avg in rep.averages().items():
            rows.append({"axis": axis, "value": float(v), "qnu": qnu, **{c: avg[c] for c in SWEEP_COLUMNS[3:]}})
    return rows
