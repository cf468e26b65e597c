import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psp_qpon import gaussian
from psp_qpon.errors import (
    DegenerateCovariance,
    NonSymmetric,
    OddDimension,
    SingularBlock,
    UnphysicalEigenvalue,
)
from psp_qpon.gaussian import I2, PAULI_Z

from conftest import random_state, random_symplectic


def spectrum_oracle(cov):
    """Moduli of eig(i Omega cov), paired and sorted descending."""
    n = cov.shape[0] // 2
    vals = np.abs(np.linalg.eigvals(1j * gaussian.symplectic_form(n) @ cov))
    return np.sort(vals)[::-1][::2]


def g_oracle(nu):
    nu = mpmath.mpf(nu)
    if nu == 1:
        return mpmath.mpf(0)
    a, b = (nu + 1) / 2, (nu - 1) / 2
    return a * mpmath.log(a, 2) - b * mpmath.log(b, 2)


class TestSpectrum:
    def test_vacuum(self):
        assert gaussian.symplectic_eigenvalues(np.eye(2)) == pytest.approx([1.0])

    def test_thermal(self):
        assert gaussian.symplectic_eigenvalues(np.diag([3.0, 3.0])) == pytest.approx([3.0])

    def test_tmsv_is_pure(self):
        cov = np.block([[2 * I2, math.sqrt(3) * PAULI_Z], [math.sqrt(3) * PAULI_Z, 2 * I2]])
        np.testing.assert_allclose(gaussian.symplectic_eigenvalues(cov), [1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(spectrum_oracle(cov), [1.0, 1.0], atol=1e-12)

    def test_matches_complex_eig(self, rng):
        for n in (1, 2, 3, 5):
            cov = random_state(n, rng)
            np.testing.assert_allclose(gaussian.symplectic_eigenvalues(cov), spectrum_oracle(cov), rtol=1e-9)

    def test_sorted_descending_and_length(self, rng):
        vals = gaussian.symplectic_eigenvalues(random_state(4, rng))
        assert len(vals) == 4
        assert np.all(np.diff(vals) <= 0)

    def test_errors(self):
        with pytest.raises(NonSymmetric):
            gaussian.symplectic_eigenvalues(np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(OddDimension):
            gaussian.symplectic_eigenvalues(np.eye(3))

    def test_indefinite_input_falls_back(self):
        cov = np.diag([2.0, -1.0])
        assert gaussian.symplectic_eigenvalues(cov) == pytest.approx(spectrum_oracle(cov))


class TestEntropy:
    def test_examples(self):
        assert gaussian.g_entropy(1.0) == 0.0
        assert gaussian.g_entropy(3.0) == pytest.approx(2.0, abs=1e-12)
        assert gaussian.g_entropy(1.0000001) < 1e-5

    @pytest.mark.parametrize("nu", [1 + 1e-12, 1 + 5e-10, 1 + 2e-9, 1.001, 1.5, 4.28, 100.0, 4.3e4])
    def test_against_mpmath(self, nu):
        # below nu - 1 = 1e-10 the state is treated as pure (g < 4e-9 there)
        assert gaussian.g_entropy(nu) == pytest.approx(float(g_oracle(nu)), rel=1e-9, abs=1e-10)

    def test_clamp_and_reject(self):
        assert gaussian.g_entropy(1.0 - 1e-7) == 0.0
        with pytest.raises(UnphysicalEigenvalue):
            gaussian.g_entropy(0.99)

    def test_monotone_on_grid(self):
        grid = np.concatenate([1 + np.logspace(-14, 0, 200), np.linspace(2, 1e3, 500)])
        vals = [gaussian.g_entropy(v) for v in grid]
        assert np.all(np.diff(vals) >= 0)

    def test_continuous_across_series_switch(self):
        lo = gaussian.g_entropy(1 + 0.999e-9)
        hi = gaussian.g_entropy(1 + 1.001e-9)
        assert abs(hi - lo) < 1e-10


def heterodyne_oracle(cov, mode):
    """Heterodyne as a 50:50 split with vacuum then x on one port, p on the other.

    The conditional covariance of the other modes is the Schur complement of
    the two measured classical variables.
    """
    n = cov.shape[0] // 2
    big = np.eye(2 * n + 2)
    big[: 2 * n, : 2 * n] = cov
    bs = gaussian.beam_splitter_symplectic(0.5, mode, n, n + 1)
    out = bs @ big @ bs.T
    measured = [2 * mode, 2 * n + 1]  # x of one port, p of the other
    keep = [i for i in range(2 * n) if i not in (2 * mode, 2 * mode + 1)]
    m = out[np.ix_(measured, measured)]
    c = out[np.ix_(keep, measured)]
    return out[np.ix_(keep, keep)] - c @ np.linalg.solve(m, c.T)


class TestConditioning:
    def test_uncorrelated_unchanged(self):
        cov = np.diag([3.0, 3.0, 2.0, 2.0])
        np.testing.assert_allclose(gaussian.condition_on_heterodyne(cov, 1), np.diag([3.0, 3.0]))

    @pytest.mark.parametrize("v", [1.5, 2.0, 5.28, 40.0])
    def test_tmsv_collapses_to_vacuum(self, v):
        out = gaussian.condition_on_heterodyne(gaussian.two_mode_squeezed(v), 1)
        np.testing.assert_allclose(out, np.eye(2), atol=1e-12)

    def test_table1_link_against_oracle(self):
        v, t = 5.28, 10 ** (-1.077)
        c = math.sqrt(t * (v * v - 1))
        cov = np.block([[v * I2, c * PAULI_Z], [c * PAULI_Z, (t * (v - 1) + 1) * I2]])
        ours = gaussian.condition_on_heterodyne(cov, 1)
        np.testing.assert_allclose(ours, heterodyne_oracle(cov, 1), rtol=1e-12)
        np.testing.assert_allclose(
            gaussian.symplectic_eigenvalues(ours), spectrum_oracle(heterodyne_oracle(cov, 1)), rtol=1e-12
        )

    def test_random_states_against_oracle(self, rng):
        for _ in range(20):
            cov = random_state(3, rng)
            mode = int(rng.integers(3))
            np.testing.assert_allclose(
                gaussian.condition_on_heterodyne(cov, mode), heterodyne_oracle(cov, mode), rtol=1e-9, atol=1e-9
            )

    def test_singular_guard(self):
        cov = np.diag([2.0, 2.0, -1.0, -1.0])
        with pytest.raises(SingularBlock):
            gaussian.condition_on_heterodyne(cov, 1)


class TestMutualInformation:
    def test_independent(self):
        assert gaussian.gaussian_mutual_information(np.diag([1.0, 2.0, 3.0, 4.0])) == pytest.approx(0.0, abs=1e-14)

    def test_scalar_pair(self):
        cov = np.array([[1.0, 0.6], [0.6, 1.0]])
        assert gaussian.gaussian_mutual_information(cov) == pytest.approx(-0.5 * math.log2(0.64), rel=1e-12)

    def test_two_quadrature_snr(self):
        s = 0.112
        # A with unit variance, B = A + N with Var(N) = 1/s, both quadratures
        small = np.array([[1.0, 1.0], [1.0, 1.0 + 1.0 / s]])
        cov = np.kron(small, np.eye(2))
        assert gaussian.gaussian_mutual_information(cov) == pytest.approx(math.log2(1 + s), rel=1e-12)
        assert math.log2(1 + s) == pytest.approx(0.1532, abs=1e-4)

    def test_degenerate(self):
        with pytest.raises(DegenerateCovariance):
            gaussian.gaussian_mutual_information(np.array([[1.0, 1.0], [1.0, 1.0]]))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-0.99, 0.99), st.floats(0.1, 10), st.floats(0.1, 10))
    def test_non_negative(self, rho, va, vb):
        c = rho * math.sqrt(va * vb)
        cov = np.array([[va, c], [c, vb]])
        assert gaussian.gaussian_mutual_information(cov) >= 0.0


class TestProperties:
    def test_symplectic_invariance(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 5))
            cov = random_state(n, rng)
            s = random_symplectic(n, rng)
            np.testing.assert_allclose(
                gaussian.symplectic_eigenvalues(s @ cov @ s.T), gaussian.symplectic_eigenvalues(cov), rtol=1e-8
            )

    def test_generated_matrices_are_symplectic(self, rng):
        s = random_symplectic(3, rng)
        om = gaussian.symplectic_form(3)
        np.testing.assert_allclose(s @ om @ s.T, om, atol=1e-10)

    def test_pure_marginal_symmetry(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 5))
            k = int(rng.integers(1, n))
            cov = random_state(n, rng, pure=True)
            a = gaussian.von_neumann_entropy(cov[: 2 * k, : 2 * k])
            b = gaussian.von_neumann_entropy(cov[2 * k :, 2 * k :])
            assert a == pytest.approx(b, abs=1e-8)

    def test_conditioned_states_physical(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 5))
            cov = random_state(n, rng)
            out = gaussian.condition_on_heterodyne(cov, int(rng.integers(n)))
            assert gaussian.is_physical(out)

    def test_beam_splitter_is_symplectic(self):
        s = gaussian.beam_splitter_symplectic(0.3, 0, 2, 3)
        om = gaussian.symplectic_form(3)
        np.testing.assert_allclose(s @ om @ s.T, om, atol=1e-14)
