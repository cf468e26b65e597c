import math

import numpy as np
import pytest

from psp_qpon import optics
from psp_qpon.errors import InvalidVariance, LengthMismatch, ScheduleMismatch, UnsupportedFanout
from psp_qpon.frames import FrameKind, QuadratureFrame
from psp_qpon.optics import ChannelSpec, DetectorSpec, SourceSpec, SwitchSchedule

N = 1_000_000
IDEAL = DetectorSpec(efficiency=1.0)
TABLE1 = DetectorSpec(efficiency=0.56, electronic_noise_snu=0.12)


def var_tol(v, n=N, k=5.0):
    """k-sigma band of a quadrature-pooled sample variance (2n real samples)."""
    return k * v * math.sqrt(2.0 / (2 * n))


def frame_of(var, seed, n=N):
    return QuadratureFrame(0, 0, optics.complex_normal(np.random.default_rng(seed), n, var))


def cov_xy(a, b):
    return float(np.vdot(a.z, b.z).real / (2 * len(a)))


class TestThermal:
    def test_vacuum_equivalent(self):
        (f,) = optics.sample_thermal_frames(SourceSpec(variance_snu=1.0), N, 1, seed=1)
        assert abs(f.quadrature_variance() - 1.0) < var_tol(1.0)

    def test_variance_21(self):
        (f,) = optics.sample_thermal_frames(SourceSpec(variance_snu=21.0), N, 1, seed=2)
        assert 20.7 <= f.quadrature_variance() <= 21.3

    def test_deterministic_and_independent(self):
        a = optics.sample_thermal_frames(SourceSpec(variance_snu=3.0), 1000, 3, seed=7)
        b = optics.sample_thermal_frames(SourceSpec(variance_snu=3.0), 1000, 3, seed=7)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.z, fb.z)
        assert not np.array_equal(a[0].z, a[1].z)
        assert [f.frame_index for f in a] == [0, 1, 2]

    def test_invalid(self):
        with pytest.raises(Exception):
            SourceSpec(variance_snu=0.5)
        spec = SourceSpec.model_construct(variance_snu=0.5, monitor_split=0.99, voa_transmittance=1.0)
        with pytest.raises(InvalidVariance):
            optics.sample_thermal_frames(spec, 10, 1, seed=0)


class TestBeamSplitter:
    def test_identity(self):
        a, b = frame_of(2.0, 1, 100), frame_of(1.0, 2, 100)
        o1, o2 = optics.beam_splitter(a, b, 1.0)
        assert np.array_equal(o1.z, a.z) and np.array_equal(o2.z, -b.z)

    def test_balanced_variances_and_energy(self):
        v = 5.0
        a, b = frame_of(v, 3), frame_of(1.0, 4)
        o1, o2 = optics.beam_splitter(a, b, 0.5)
        for o in (o1, o2):
            assert abs(o.quadrature_variance() - (v + 1) / 2) < var_tol((v + 1) / 2)
        total_in = a.quadrature_variance() + b.quadrature_variance()
        total_out = o1.quadrature_variance() + o2.quadrature_variance()
        assert total_out == pytest.approx(total_in, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            optics.beam_splitter(frame_of(1, 1, 10), frame_of(1, 2, 11), 0.5)


class TestSplitter:
    def test_vacuum_input(self):
        outs = optics.split_1_to_n(frame_of(1.0, 5), 4, seed=9)
        for o in outs:
            assert abs(o.quadrature_variance() - 1.0) < var_tol(1.0)
        for i in range(4):
            for j in range(i + 1, 4):
                assert abs(cov_xy(outs[i], outs[j])) < 5.0 / math.sqrt(2 * N)

    def test_thermal_input(self):
        v = 9.0
        outs = optics.split_1_to_n(frame_of(v, 6), 4, seed=10)
        assert [o.role for o in outs] == [1, 2, 3, 4]
        for o in outs:
            assert abs(o.quadrature_variance() - (v / 4 + 0.75)) < var_tol(v / 4 + 0.75)
        covs = [cov_xy(outs[i], outs[j]) for i in range(4) for j in range(i + 1, 4)]
        tol = 5 * math.sqrt((v / 4 + 0.75) ** 2 / (2 * N))
        for c in covs:
            assert abs(c - (v - 1) / 4) < tol
        # symmetric across ports
        assert np.ptp(covs) < 2 * tol

    def test_second_moment_preserved(self):
        inp = frame_of(4.0, 8)
        outs = optics.split_1_to_n(inp, 8, seed=3)
        total = sum(o.quadrature_variance() for o in outs)
        assert abs(total - (inp.quadrature_variance() + 7.0)) < var_tol(11.0, k=6)

    @pytest.mark.parametrize("n", [0, 1, 3, 6])
    def test_fanout_errors(self, n):
        with pytest.raises(UnsupportedFanout):
            optics.split_1_to_n(frame_of(1.0, 1, 10), n, seed=0)


class TestChannel:
    def test_identity(self):
        f = frame_of(3.0, 1, 1000)
        out = optics.lossy_channel(f, ChannelSpec(transmittance_db=0.0), seed=0)
        assert np.array_equal(out.z, f.z)

    def test_table1_variance(self):
        spec = ChannelSpec(transmittance_db=-10.77, excess_noise_snu=0.05)
        out = optics.lossy_channel(frame_of(5.28, 11), spec, seed=12)
        t = spec.transmittance
        expected = t * (5.28 + 0.05) + 1 - t
        assert expected == pytest.approx(1.3628, abs=2e-4)
        assert abs(out.quadrature_variance() - expected) < var_tol(expected)

    def test_vacuum_stays_vacuum(self):
        out = optics.lossy_channel(frame_of(1.0, 13), ChannelSpec(transmittance_db=-7.0), seed=14)
        assert abs(out.quadrature_variance() - 1.0) < var_tol(1.0)


class TestHeterodyne:
    @pytest.mark.parametrize(
        "v, det, expected",
        [(1.0, IDEAL, 1.0), (2.0, IDEAL, 1.5), (1.0, TABLE1, 1.12)],
    )
    def test_measured_variance(self, v, det, expected):
        assert optics.heterodyne_variance(v, det) == pytest.approx(expected)
        out = optics.heterodyne_detect(frame_of(v, 20), det, seed=21)
        assert abs(out.quadrature_variance() - expected) < var_tol(expected)


class TestPsp:
    def test_vacuum_source(self):
        spec = SourceSpec(variance_snu=1.0)
        out, est, stats = optics.psp_prepare(spec, IDEAL, 10_000, seed=1)
        assert stats.equiv_modulation_variance_snu == 0.0
        assert stats.psp_noise_snu == 0.0
        assert abs(out.quadrature_variance() - 1.0) < var_tol(1.0, 10_000)
        assert np.all(est.z == 0)

    def test_reference_case(self):
        stats = optics.psp_statistics(SourceSpec(variance_snu=21.0, monitor_split=0.99), IDEAL)
        assert stats.outgoing_variance_snu == pytest.approx(1.2)
        assert stats.equiv_modulation_variance_snu == pytest.approx(0.18165, abs=5e-5)
        assert stats.psp_noise_snu == pytest.approx(0.01835, abs=5e-5)

    def test_variance_identity(self):
        for vs in (1.5, 21.0, 4.3e4):
            for det in (IDEAL, TABLE1):
                s = optics.psp_statistics(SourceSpec(variance_snu=vs, voa_transmittance=0.3), det)
                total = s.equiv_modulation_variance_snu + s.psp_noise_snu + 1.0
                assert total == pytest.approx(s.outgoing_variance_snu, abs=1e-9)

    def test_inefficiency_raises_noise(self):
        grid = np.linspace(0.2, 1.0, 17)
        eps = [
            optics.psp_statistics(SourceSpec(variance_snu=21.0), DetectorSpec(efficiency=e)).psp_noise_snu
            for e in grid
        ]
        assert np.all(np.diff(eps) < 0)

    def test_inverse_source_variance(self):
        vs = optics.source_variance_for_modulation(4.28, 0.99, 0.01, TABLE1)
        s = optics.psp_statistics(SourceSpec(variance_snu=vs, voa_transmittance=0.01), TABLE1)
        assert s.equiv_modulation_variance_snu == pytest.approx(4.28, rel=1e-12)

    def test_monte_carlo_regression(self):
        spec = SourceSpec(variance_snu=21.0)
        out, est, stats = optics.psp_prepare(spec, TABLE1, N, seed=5)
        mc = optics.estimate_psp_statistics(out, est)
        assert abs(mc.outgoing_variance_snu - stats.outgoing_variance_snu) < var_tol(stats.outgoing_variance_snu)
        assert mc.equiv_modulation_variance_snu == pytest.approx(stats.equiv_modulation_variance_snu, rel=0.03)

    def test_deterministic(self):
        spec = SourceSpec(variance_snu=21.0)
        a = optics.psp_prepare(spec, TABLE1, 1000, seed=np.random.SeedSequence(3))
        b = optics.psp_prepare(spec, TABLE1, 1000, seed=np.random.SeedSequence(3))
        assert np.array_equal(a[0].z, b[0].z) and np.array_equal(a[1].z, b[1].z)


class TestSwitch:
    def _frames(self, n_slots, var=5.0, n=200_000):
        return [frame_of(var, 100 + k, n).with_samples(frame_of(var, 100 + k, n).z, frame_index=k) for k in range(n_slots)]

    def test_pure_shot_noise(self):
        frames = self._frames(4)
        out = optics.apply_switch_schedule(frames, SwitchSchedule(extinction_db=math.inf), [1.0] * 4, seed=1)
        assert [f.kind for f in out] == [FrameKind.SHOT_NOISE, FrameKind.SIGNAL] * 2
        for f in out[::2]:
            assert abs(f.quadrature_variance() - 1.0) < var_tol(1.0, 200_000)
        assert np.array_equal(out[1].z, frames[1].z)

    def test_leakage(self):
        # signal 4 SNU above vacuum, 20 dB extinction -> about 0.04 SNU leaks
        frames = self._frames(2, var=5.0, n=1_000_000)
        out = optics.apply_switch_schedule(frames, SwitchSchedule(extinction_db=20.0), [1.0, 1.0], seed=2)
        leak = out[0].quadrature_variance() - 1.0
        assert leak == pytest.approx(0.04, abs=5 * math.sqrt(1 / 1_000_000))

    def test_drift_tracking(self):
        drift = optics.lo_drift_profile(20, 0.05, 20)
        frames = self._frames(20)
        out = optics.apply_switch_schedule(frames, SwitchSchedule(extinction_db=math.inf), drift, seed=3)
        for k in range(0, 20, 2):
            assert abs(out[k].quadrature_variance() - drift[k]) < var_tol(drift[k], 200_000)

    def test_schedule_partition(self):
        s = SwitchSchedule(period=5, calibration_slots=(1, 3))
        kinds = [s.is_calibration(k) for k in range(10)]
        assert kinds == [False, True, False, True, False] * 2
        with pytest.raises(Exception):
            SwitchSchedule(period=2, calibration_slots=(0, 1))
        with pytest.raises(Exception):
            SwitchSchedule(period=2, calibration_slots=(2,))

    def test_mismatch(self):
        with pytest.raises(ScheduleMismatch):
            optics.apply_switch_schedule(self._frames(3, n=100), SwitchSchedule(), [1.0, 1.0], seed=0)


def test_network_sample_covariance_matches_model():
    """Split, channel and detect; compare the joint covariance to the closed form."""
    det = TABLE1
    src = SourceSpec(variance_snu=4.3e4, voa_transmittance=0.01)
    out, est, stats = optics.psp_prepare(src, det, N, seed=31)
    outs = optics.split_1_to_n(out, 2, seed=32)
    t_tot = [10 ** -1.077, 10 ** -1.121]
    b = []
    for k, (o, t) in enumerate(zip(outs, t_tot)):
        seg = ChannelSpec(transmittance_db=10 * math.log10(2 * t), excess_noise_snu=0.05 / 2)
        b.append(optics.heterodyne_detect(optics.lossy_channel(o, seg, seed=40 + k), det, seed=50 + k))
    va, eps = stats.equiv_modulation_variance_snu, stats.psp_noise_snu
    for t, bk in zip(t_tot, b):
        vb = det.efficiency * t * (va + eps + 0.05) / 2 + 1 + det.electronic_noise_snu
        assert abs(bk.quadrature_variance() - vb) < var_tol(vb)
        c = math.sqrt(det.efficiency * t / 2) * va
        assert abs(cov_xy(est, bk) - c) < 5 * math.sqrt(va * vb / (2 * N))
    c12 = det.efficiency / 2 * math.sqrt(t_tot[0] * t_tot[1]) * (va + eps)
    assert abs(cov_xy(b[0], b[1]) - c12) < 5 * math.sqrt(1.25**2 / (2 * N))
