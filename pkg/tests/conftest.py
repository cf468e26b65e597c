import numpy as np
import pytest
from scipy.stats import unitary_group

from psp_qpon import gaussian


def interleave(n: int) -> np.ndarray:
    """Permutation from (x1..xn, p1..pn) to (x1, p1, ..., xn, pn)."""
    return np.ravel(np.column_stack([np.arange(n), np.arange(n) + n]))


def random_symplectic(n: int, rng: np.random.Generator, max_squeeze: float = 1.0) -> np.ndarray:
    """Bloch-Messiah product O1 diag(e^r, e^-r) O2 in interleaved ordering."""

    def passive():
        u = unitary_group.rvs(n, random_state=rng) if n > 1 else np.exp(1j * rng.uniform(0, 2 * np.pi, (1, 1)))
        return np.block([[u.real, -u.imag], [u.imag, u.real]])

    r = rng.uniform(-max_squeeze, max_squeeze, n)
    squeeze = np.diag(np.concatenate([np.exp(r), np.exp(-r)]))
    s = passive() @ squeeze @ passive()
    perm = interleave(n)
    return s[np.ix_(perm, perm)]


def random_state(n: int, rng: np.random.Generator, pure: bool = False) -> np.ndarray:
    nu = np.ones(n) if pure else rng.uniform(1.0, 5.0, n)
    s = random_symplectic(n, rng)
    return s @ np.diag(np.repeat(nu, 2)) @ s.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
