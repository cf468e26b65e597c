"""Gaussian-state linear algebra in shot-noise units.

Convention used throughout the package: the vacuum has quadrature variance 1.
Covariance matrices are ordered mode by mode, ``(x1, p1, x2, p2, ...)``, and
the symplectic form is ``Omega = diag([[0, 1], [-1, 0]], ...)``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    DegenerateCovariance,
    NonSymmetric,
    OddDimension,
    SingularBlock,
    UnphysicalEigenvalue,
)

PHYSICAL_TOL = 1e-6
SYMMETRY_RTOL = 1e-9
# below this distance from 1 a mode is treated as exactly pure
_PURE_EPS = 1e-10
_SERIES_EPS = 1e-9

PAULI_Z = np.diag([1.0, -1.0])
I2 = np.eye(2)


def symplectic_form(n_modes: int) -> np.ndarray:
    return np.kron(np.eye(n_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def as_covariance(cov) -> np.ndarray:
    """Validate shape and symmetry; return a symmetrized float copy."""
    cov = np.array(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise NonSymmetric(f"covariance must be square, got shape {cov.shape}")
    if cov.shape[0] % 2:
        raise OddDimension(f"covariance dimension {cov.shape[0]} is odd")
    scale = max(np.max(np.abs(cov)), 1.0)
    if np.max(np.abs(cov - cov.T)) > SYMMETRY_RTOL * scale:
        raise NonSymmetric("covariance matrix is not symmetric")
    return 0.5 * (cov + cov.T)


def symplectic_eigenvalues(cov) -> np.ndarray:
    """Symplectic spectrum of ``cov``, sorted descending, one value per mode.

    For positive-definite input the spectrum is read off the real
    antisymmetric matrix ``L^T Omega L`` (``cov = L L^T``), whose squared
    singular values are the squared symplectic eigenvalues, each doubled.
    Non-definite input falls back to the moduli of ``eig(Omega cov)``.
    """
    cov = as_covariance(cov)
    n = cov.shape[0] // 2
    omega = symplectic_form(n)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals = np.abs(np.linalg.eigvals(omega @ cov))
    else:
        antisym = chol.T @ omega @ chol
        vals = np.sqrt(np.clip(np.linalg.eigvalsh(antisym.T @ antisym), 0.0, None))
    vals = np.sort(vals)[::-1]
    return vals[::2].copy()


def g_entropy(nu: float) -> float:
    """Von Neumann entropy (bits) of a thermal mode with symplectic eigenvalue ``nu``."""
    nu = float(nu)
    if nu < 1.0 - PHYSICAL_TOL:
        raise UnphysicalEigenvalue(f"symplectic eigenvalue {nu} < 1")
    d = nu - 1.0
    if d <= _PURE_EPS:
        return 0.0
    if d < _SERIES_EPS:
        # g(1 + d) = (d/2) (log2(2/d) + 1/ln 2) + O(d^2)
        return 0.5 * d * (math.log2(2.0 / d) + 1.0 / math.log(2.0))
    a = 0.5 * (nu + 1.0)
    b = 0.5 * d
    return a * math.log2(a) - b * math.log2(b)


def von_neumann_entropy(cov) -> float:
    return float(sum(g_entropy(nu) for nu in symplectic_eigenvalues(cov)))


def _mode_indices(mode: int, n_modes: int) -> list[int]:
    if not 0 <= mode < n_modes:
        raise IndexError(f"mode {mode} out of range for {n_modes} modes")
    return [2 * mode, 2 * mode + 1]


def condition_on_heterodyne(cov, measured_mode: int) -> np.ndarray:
    """Covariance of the remaining modes after heterodyning ``measured_mode``.

    ``gamma_A|b = gamma_A - sigma (gamma_B + I)^-1 sigma^T``.
    """
    cov = as_covariance(cov)
    n = cov.shape[0] // 2
    meas = _mode_indices(measured_mode, n)
    keep = [i for i in range(2 * n) if i not in meas]
    block = cov[np.ix_(meas, meas)] + I2
    if abs(np.linalg.det(block)) < 1e-14:
        raise SingularBlock("gamma_B + I is singular")
    sigma = cov[np.ix_(keep, meas)]
    out = cov[np.ix_(keep, keep)] - sigma @ np.linalg.solve(block, sigma.T)
    return 0.5 * (out + out.T)


def gaussian_mutual_information(joint_cov, split: int | None = None) -> float:
    """Shannon mutual information (bits) between two groups of Gaussian variables.

    The first ``split`` variables form one group (default: half of them).
    """
    joint = np.atleast_2d(np.asarray(joint_cov, dtype=float))
    dim = joint.shape[0]
    split = dim // 2 if split is None else split
    if not 0 < split < dim:
        raise ValueError(f"split {split} invalid for dimension {dim}")
    det_a = np.linalg.det(joint[:split, :split])
    det_b = np.linalg.det(joint[split:, split:])
    det_ab = np.linalg.det(joint)
    if det_a <= 0 or det_b <= 0 or det_ab <= 0:
        raise DegenerateCovariance("covariance is not positive definite")
    return max(0.0, 0.5 * math.log2(det_a * det_b / det_ab))


def two_mode_squeezed(v: float) -> np.ndarray:
    """TMSV covariance with local variance ``v`` (A mode first)."""
    c = math.sqrt(max(v * v - 1.0, 0.0))
    return np.block([[v * I2, c * PAULI_Z], [c * PAULI_Z, v * I2]])


def beam_splitter_symplectic(t: float, mode_a: int, mode_b: int, n_modes: int) -> np.ndarray:
    """Symplectic matrix of a beam splitter with power transmittance ``t``.

    ``a' = sqrt(t) a + sqrt(1-t) b``, ``b' = -sqrt(1-t) a + sqrt(t) b``.
    """
    s = np.eye(2 * n_modes)
    ia = _mode_indices(mode_a, n_modes)
    ib = _mode_indices(mode_b, n_modes)
    rt, rr = math.sqrt(t), math.sqrt(1.0 - t)
    s[np.ix_(ia, ia)] = rt * I2
    s[np.ix_(ia, ib)] = rr * I2
    s[np.ix_(ib, ia)] = -rr * I2
    s[np.ix_(ib, ib)] = rt * I2
    return s


def is_physical(cov, tol: float = PHYSICAL_TOL) -> bool:
    return bool(np.min(symplectic_eigenvalues(cov)) >= 1.0 - tol)
