"""Small complex linear-algebra helpers shared across modules."""

from __future__ import annotations

import numpy as np


def vec(matrix: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(matrix).ravel(order="F")


def unvec(vector: np.ndarray, n_rows: int, n_cols: int) -> np.ndarray:
    """Inverse of :func:`vec`."""
    return np.asarray(vector).reshape((n_rows, n_cols), order="F")


def crandn(rng: np.random.Generator, *shape: int) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian draws, unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def hermitize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.conj().swapaxes(-1, -2))


def psd_clip(matrix: np.ndarray) -> np.ndarray:
    """Symmetrize and clip negative eigenvalues to zero."""
    sym = hermitize(matrix)
    eigval, eigvec = np.linalg.eigh(sym)
    eigval = np.clip(eigval, 0.0, None)
    return (eigvec * eigval) @ eigvec.conj().T


def sample_gaussian(
    mean: np.ndarray, cov: np.ndarray, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Real Gaussian draws supporting singular covariances.

    Sampling goes through the eigendecomposition so exactly-zero directions
    stay exactly at the mean.
    """
    mean = np.asarray(mean, dtype=float)
    eigval, eigvec = np.linalg.eigh(hermitize(np.asarray(cov, dtype=float)))
    scale = np.sqrt(np.clip(eigval, 0.0, None))
    n = 1 if size is None else size
    z = rng.standard_normal((n, mean.size)) * scale
    draws = mean + z @ eigvec.T
    return draws[0] if size is None else draws


def min_eigenvalue(matrix: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(hermitize(matrix)).min())
