"""Small shared linear-algebra helpers for complex Gaussian models."""

import numpy as np


class CholeskyFailure(Exception):
    """Raised when a correlation matrix stays indefinite after regularization."""


def hermitize(a):
    """Symmetrize a square matrix so tiny asymmetries from arithmetic vanish."""
    return 0.5 * (a + a.conj().swapaxes(-1, -2))


def chol_sqrt(r):
    """Lower-triangular factor B with B B^H = r.

    Falls back once to r + 1e-12*tr(r)*I when the input is numerically
    indefinite; raises CholeskyFailure if that still fails.
    """
    r = np.asarray(r)
    try:
        return np.linalg.cholesky(r)
    except np.linalg.LinAlgError:
        pass
    n = r.shape[-1]
    bump = 1e-12 * np.trace(r).real
    if bump <= 0.0:
        bump = 1e-12
    try:
        return np.linalg.cholesky(r + bump * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise CholeskyFailure(
            f"matrix of size {n} not positive semi-definite"
        ) from exc


def crandn(rng, *shape):
    """Standard circularly-symmetric complex normal draws, unit variance."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


def sample_cn(rng, cov_factor, size=None):
    """Draw CN(0, R) vectors given a factor B with B B^H = R.

    Returns shape (*size, n) for size a tuple, or (n,) when size is None.
    """
    n = cov_factor.shape[-1]
    if size is None:
        return cov_factor @ crandn(rng, n)
    w = crandn(rng, *size, n)
    return np.einsum("ij,...j->...i", cov_factor, w)


def min_eig_hermitian(a):
    """Smallest eigenvalue of a Hermitian matrix."""
    return float(np.linalg.eigvalsh(hermitize(a))[0])
