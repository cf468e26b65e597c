"""Parameter estimation, Gaussian information quantities and key rates.

The key rate between the line terminal and network unit ``i`` is::

    K_i = f (1 - FER) [beta I(A:B_i) - max(I(B_i:B_rest), chi_BE)]     (general)
    K_i = f (1 - FER) [beta I(A:B_i) - chi_BE]                         (point-to-point)

evaluated asymptotically for collective Gaussian attacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from pydantic import Field

from . import gaussian
from .errors import (
    IndexOutOfRange,
    InsufficientSamples,
    LengthMismatch,
    NegativeTransmittance,
    NotNormalized,
    UnphysicalInput,
)
from .frames import QuadratureFrame
from .gaussian import I2, PAULI_Z
from .optics import DetectorSpec, _Spec


class KeyRateParams(_Spec):
    f_hz: float = Field(4e9, gt=0.0)
    fer: float = Field(0.0, ge=0.0, le=1.0)
    beta: float = Field(0.96, gt=0.0, le=1.0)
    trusted_detector: bool = True
    detector: DetectorSpec = DetectorSpec(efficiency=0.56, electronic_noise_snu=0.12)


@dataclass(frozen=True)
class ChannelEstimate:
    qnu_index: int
    transmittance_hat: float
    excess_noise_hat_x: float
    excess_noise_hat_p: float
    snr_hat: float
    n_samples_used: int
    modulation_variance_hat: float
    excess_noise_se: float = float("nan")

    @property
    def transmittance_db_hat(self) -> float:
        return 10.0 * math.log10(self.transmittance_hat)

    @property
    def excess_noise_hat(self) -> float:
        return 0.5 * (self.excess_noise_hat_x + self.excess_noise_hat_p)

    @property
    def excess_noise_flagged(self) -> bool:
        """Negative beyond three standard errors: not explainable by statistics."""
        return self.excess_noise_hat < -3.0 * self.excess_noise_se


@dataclass(frozen=True)
class SecurityQuantities:
    qnu_index: int
    mutual_info_ab: float
    holevo_be: float
    holevo_trusted: float
    holevo_untrusted: float
    inter_qnu_mi_max: float
    inter_qnu_mi_joint: float
    key_rate_eq1_bps: float
    key_rate_eq2_bps: float
    below_threshold: bool

    @property
    def key_rate_bps(self) -> float:
        return self.key_rate_eq1_bps


class KeyRates(NamedTuple):
    eq1: float
    eq2: float
    below_threshold: bool


class CovarianceAccumulator:
    """Streaming second moments of the real vector ``(x0, p0, x1, p1, ...)``.

    Partial accumulators over disjoint frames combine with ``+``.
    """

    def __init__(self, n_streams: int):
        self.dim = 2 * n_streams
        self.n = 0
        self.sum = np.zeros(self.dim)
        self.outer = np.zeros((self.dim, self.dim))

    def add(self, streams: Sequence[np.ndarray]) -> None:
        if len(streams) * 2 != self.dim:
            raise ValueError(f"expected {self.dim // 2} streams, got {len(streams)}")
        n = len(streams[0])
        if any(len(s) != n for s in streams):
            raise LengthMismatch("streams in one frame must have equal length")
        mat = np.empty((self.dim, n))
        for k, z in enumerate(streams):
            mat[2 * k] = z.real
            mat[2 * k + 1] = z.imag
        self.n += n
        self.sum += mat.sum(axis=1)
        self.outer += mat @ mat.T

    def __add__(self, other: "CovarianceAccumulator") -> "CovarianceAccumulator":
        out = CovarianceAccumulator(self.dim // 2)
        out.n = self.n + other.n
        out.sum = self.sum + other.sum
        out.outer = self.outer + other.outer
        return out

    def covariance(self) -> np.ndarray:
        if self.n < 2:
            raise InsufficientSamples("need at least two samples")
        mean = self.sum / self.n
        cov = (self.outer - self.n * np.outer(mean, mean)) / (self.n - 1)
        return 0.5 * (cov + cov.T)


def build_covariance_matrix(
    qlt_frames: Sequence[QuadratureFrame], qnu_frames: Sequence[Sequence[QuadratureFrame]]
) -> np.ndarray:
    """Sample covariance of ``(x_A, p_A, x_B1, p_B1, ...)``.

    ``qnu_frames[i][k]`` is network unit ``i + 1``'s frame matching ``qlt_frames[k]``.
    """
    acc = CovarianceAccumulator(1 + len(qnu_frames))
    for k, a in enumerate(qlt_frames):
        streams = [a.z] + [frames[k].z for frames in qnu_frames]
        if any(len(s) != len(a) for s in streams):
            raise LengthMismatch(f"frame {a.frame_index}: stream lengths differ")
        acc.add(streams)
    return acc.covariance()


def estimate_channel_from_covariance(
    cov: np.ndarray,
    n_samples: int,
    det: DetectorSpec,
    qnu_index: int = 1,
    min_samples: int = 1000,
) -> ChannelEstimate:
    """Channel estimate from the 4x4 covariance of ``(x_A, p_A, x_B, p_B)``.

    Per quadrature, with ``c = Cov(A, B)`` and ``V_A = Var(A)``::

        T  = 2 c^2 / (eta V_A^2)
        xi = (Var(B) - eta T V_A / 2 - 1 - v_el) * 2 / (eta T)

    ``T`` is taken from the quadrature-pooled moments and capped at 1 (a
    passive channel cannot amplify; larger values are sampling noise).
    """
    if n_samples < min_samples:
        raise InsufficientSamples(f"{n_samples} samples < minimum {min_samples}")
    eta, vel = det.efficiency, det.electronic_noise_snu
    va = np.array([cov[0, 0], cov[1, 1]])
    vb = np.array([cov[2, 2], cov[3, 3]])
    c = np.array([cov[0, 2], cov[1, 3]])
    if np.mean(c) <= 0:
        raise NegativeTransmittance(f"QNU {qnu_index}: non-positive QLT/QNU covariance {np.mean(c):.3g}")
    va_bar, c_bar = float(np.mean(va)), float(np.mean(c))
    t_hat = min(2.0 * c_bar**2 / (eta * va_bar**2), 1.0)
    xi = (vb - eta * t_hat * va / 2.0 - 1.0 - vel) * 2.0 / (eta * t_hat)
    xi_bar = float(np.mean(xi))
    cond_noise = 1.0 + vel + eta * t_hat * xi_bar / 2.0
    snr = eta * t_hat * va_bar / 2.0 / cond_noise
    # conditional-variance estimator error, two quadratures pooled
    se = 2.0 / (eta * t_hat) * cond_noise / math.sqrt(n_samples)
    return ChannelEstimate(
        qnu_index,
        t_hat,
        float(xi[0]),
        float(xi[1]),
        float(snr),
        int(n_samples),
        va_bar,
        se,
    )


def estimate_channel(
    qlt_frames: Sequence[QuadratureFrame],
    qnu_frames: Sequence[QuadratureFrame],
    det: DetectorSpec,
    qnu_index: int | None = None,
    min_samples: int = 1000,
) -> ChannelEstimate:
    """Estimate T, per-quadrature excess noise and SNR for one network unit.

    Frames must be synchronized, phase compensated and SNU-normalized; QNU
    frames prove normalization through their ``snu_ref``.
    """
    if len(qlt_frames) != len(qnu_frames):
        raise LengthMismatch("need one QNU frame per QLT frame")
    for f in qnu_frames:
        if f.snu_ref is None:
            raise NotNormalized(f"QNU frame {f.frame_index} has no shot-noise calibration")
    acc = CovarianceAccumulator(2)
    for a, b in zip(qlt_frames, qnu_frames):
        acc.add([a.z, b.z])
    index = qnu_index if qnu_index is not None else (qnu_frames[0].role if qnu_frames else 1)
    return estimate_channel_from_covariance(acc.covariance(), acc.n, det, index, min_samples)


def mutual_info_ab(est: ChannelEstimate | float) -> float:
    """``log2(1 + SNR)``: two independent quadratures under heterodyne."""
    snr = est.snr_hat if isinstance(est, ChannelEstimate) else float(est)
    if snr < 0:
        raise ValueError(f"negative SNR {snr}")
    return math.log2(1.0 + snr)


def _qnu_block(cov: np.ndarray, i: int) -> list[int]:
    n_qnu = cov.shape[0] // 2 - 1
    if not 1 <= i <= n_qnu:
        raise IndexOutOfRange(f"QNU index {i} outside 1..{n_qnu}")
    return [2 * i, 2 * i + 1]


def inter_qnu_mi(cov: np.ndarray, i: int, j: int) -> float:
    """Gaussian MI between the heterodyne outcomes of QNUs ``i`` and ``j`` (1-based)."""
    if i == j:
        raise IndexOutOfRange("inter-QNU information needs two distinct units")
    idx = _qnu_block(cov, i) + _qnu_block(cov, j)
    return gaussian.gaussian_mutual_information(cov[np.ix_(idx, idx)], split=2)


def inter_qnu_mi_joint(cov: np.ndarray, i: int) -> float:
    """MI between QNU ``i`` and all other QNUs taken together."""
    n_qnu = cov.shape[0] // 2 - 1
    own = _qnu_block(cov, i)
    rest = [k for j in range(1, n_qnu + 1) if j != i for k in _qnu_block(cov, j)]
    if not rest:
        return 0.0
    idx = own + rest
    return gaussian.gaussian_mutual_information(cov[np.ix_(idx, idx)], split=2)


def inter_qnu_mi_max(cov: np.ndarray, i: int) -> float:
    n_qnu = cov.shape[0] // 2 - 1
    return max((inter_qnu_mi(cov, i, j) for j in range(1, n_qnu + 1) if j != i), default=0.0)


def entangled_cov(modulation_variance: float, t: float, xi: float) -> np.ndarray:
    """Entanglement-based ``gamma_AB`` after a lossy, noisy channel."""
    v = modulation_variance + 1.0
    c = math.sqrt(t * (v * v - 1.0))
    vb = t * (v + xi) + 1.0 - t
    return np.block([[v * I2, c * PAULI_Z], [c * PAULI_Z, vb * I2]])


def _check_bound_inputs(va: float, t: float, xi: float) -> None:
    if not va >= 0:
        raise UnphysicalInput(f"modulation variance {va} < 0")
    if not 0 < t <= 1:
        raise UnphysicalInput(f"transmittance {t} outside (0, 1]")
    if not xi >= 0:
        raise UnphysicalInput(f"excess noise {xi} < 0")


def holevo_untrusted(va: float, t: float, xi: float, det: DetectorSpec) -> float:
    """Eve also controls the detector: loss and electronic noise fold into the channel."""
    _check_bound_inputs(va, t, xi)
    eta, vel = det.efficiency, det.electronic_noise_snu
    gab = entangled_cov(va, eta * t, xi + 2.0 * vel / (eta * t))
    s_ab = gaussian.von_neumann_entropy(gab)
    s_cond = gaussian.von_neumann_entropy(gaussian.condition_on_heterodyne(gab, 1))
    return max(0.0, s_ab - s_cond)


def holevo_trusted(va: float, t: float, xi: float, det: DetectorSpec) -> float:
    """Detector loss and noise are trusted and excluded from Eve's system.

    The detector is a beam splitter of transmittance ``eta`` mixing Bob's mode
    with one arm (F0) of a TMSV ancilla (F0, G) of variance
    ``1 + 2 v_el / (1 - eta)``; the bound is ``S(AB) - S(A F G | b)``.
    """
    _check_bound_inputs(va, t, xi)
    eta, vel = det.efficiency, det.electronic_noise_snu
    gab = entangled_cov(va, t, xi)
    s_ab = gaussian.von_neumann_entropy(gab)
    if eta >= 1.0:
        if vel > 0:
            raise UnphysicalInput("electronic noise with unit efficiency has no trusted-noise model")
        s_cond = gaussian.von_neumann_entropy(gaussian.condition_on_heterodyne(gab, 1))
        return max(0.0, s_ab - s_cond)
    vd = 1.0 + 2.0 * vel / (1.0 - eta)
    full = np.zeros((8, 8))
    full[:4, :4] = gab
    full[4:, 4:] = gaussian.two_mode_squeezed(vd)  # modes F0, G
    bs = gaussian.beam_splitter_symplectic(eta, 1, 2, 4)
    out = bs @ full @ bs.T
    s_cond = gaussian.von_neumann_entropy(gaussian.condition_on_heterodyne(out, 1))
    return max(0.0, s_ab - s_cond)


def holevo_bound(
    va: float, t: float, xi: float, params: KeyRateParams, trusted: bool | None = None
) -> float:
    """Holevo information between QNU and Eve, bits per channel use."""
    trusted = params.trusted_detector if trusted is None else trusted
    fn = holevo_trusted if trusted else holevo_untrusted
    return fn(va, t, xi, params.detector)


def secret_key_rate(
    mutual_info: float, holevo: float, inter_qnu: float, params: KeyRateParams
) -> KeyRates:
    """General and point-to-point key rates in bit/s, clamped at zero."""
    for name, v in (("mutual_info", mutual_info), ("holevo", holevo), ("inter_qnu", inter_qnu)):
        if not (math.isfinite(v) and v >= 0):
            raise ValueError(f"{name} must be finite and non-negative, got {v}")
    scale = params.f_hz * (1.0 - params.fer)
    raw1 = scale * (params.beta * mutual_info - max(inter_qnu, holevo))
    raw2 = scale * (params.beta * mutual_info - holevo)
    return KeyRates(max(raw1, 0.0), max(raw2, 0.0), raw1 <= 0.0)


def evaluate_security(
    qnu_index: int,
    mutual_info: float,
    modulation_variance: float,
    t: float,
    xi: float,
    cov: np.ndarray | None,
    params: KeyRateParams,
) -> SecurityQuantities:
    """All security quantities for one QNU; ``cov`` is the measured-variable
    covariance of the network (QLT first), or ``None`` for a single link."""
    xi_bound = max(xi, 0.0)
    chi_t = holevo_trusted(modulation_variance, t, xi_bound, params.detector)
    chi_u = holevo_untrusted(modulation_variance, t, xi_bound, params.detector)
    chi = chi_t if params.trusted_detector else chi_u
    if cov is not None and cov.shape[0] > 4:
        i_max = inter_qnu_mi_max(cov, qnu_index)
        i_joint = inter_qnu_mi_joint(cov, qnu_index)
    else:
        i_max = i_joint = 0.0
    rates = secret_key_rate(mutual_info, chi, i_joint, params)
    return SecurityQuantities(
        qnu_index, mutual_info, chi, chi_t, chi_u, i_max, i_joint, rates.eq1, rates.eq2, rates.below_threshold
    )
