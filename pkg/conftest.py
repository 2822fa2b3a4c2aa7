"""Shared fixtures for the test suite."""
import numpy as np
import pytest

from src.hamiltonian import SparseRowOracle


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: statistical acceptance suites (deselect with -m 'not slow')")


@pytest.fixture(autouse=True)
def quiet_environment(monkeypatch):
    """No log file and no history database unless a test asks for one."""
    monkeypatch.setenv('HAMSIM_LOG_FILE', '')
    monkeypatch.setenv('HAMSIM_DATABASE_URL', '')
    monkeypatch.setenv('HAMSIM_THREADS', '1')


def random_hermitian(dim, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = (x + x.conj().T) / 2
    return scale * h / np.linalg.norm(h, 2)


def random_psd(dim, seed=0, rank=None, trace=None, ridge=0.0):
    """G G*/rank (+ ridge·I), optionally rescaled to a given trace."""
    rng = np.random.default_rng(seed)
    rank = rank or dim
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    h = g @ g.conj().T / rank + ridge * np.eye(dim)
    h = (h + h.conj().T) / 2
    if trace is not None:
        h *= trace / np.trace(h).real
    return h


def oracle_from_dense(matrix, mode):
    return SparseRowOracle.from_dense(matrix, mode, tolerance=1e-10)


@pytest.fixture
def write_coo(tmp_path):
    """Write a COO Hamiltonian file from a header and entry lines."""
    def _write(header, entries, name='h.coo'):
        path = tmp_path / name
        lines = [header] + [" ".join(str(x) for x in entry) for entry in entries]
        path.write_text("\n".join(lines) + "\n", encoding='utf-8')
        return path
    return _write


@pytest.fixture
def write_state(tmp_path):
    def _write(n, entries, name='psi.txt'):
        path = tmp_path / name
        lines = [f"n {n}"] + [f"{i} {float(re)!r} {float(im)!r}" for i, re, im in entries]
        path.write_text("\n".join(lines) + "\n", encoding='utf-8')
        return path
    return _write


@pytest.fixture
def psd_8x8():
    return random_psd(8, seed=11, ridge=0.1, trace=2.0)


@pytest.fixture
def hermitian_8x8():
    return random_hermitian(8, seed=5)
