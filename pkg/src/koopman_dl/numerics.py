"""Dense linear-algebra kernels: pseudo-inverse and general eigendecomposition.

Both routines sit on top of LAPACK through :mod:`numpy.linalg`. The value
added here is the contract around them: validation, a documented rank
threshold, a deterministic eigenvalue ordering and a biorthonormal pair of
eigenvector bases.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NonDiagonalizableError

#: Eigenvector matrices with a larger 2-norm condition number are rejected.
MAX_EIGVEC_CONDITION = 1e12


def _as_finite_matrix(m, name="matrix"):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return m


def default_rel_tol(shape):
    """Conventional numerical-rank threshold ``1e-12 * max(rows, cols)``."""
    return 1e-12 * max(shape)


def pseudo_inverse(m, rel_tol=None):
    """Moore-Penrose pseudo-inverse via the SVD.

    Parameters
    ----------
    m : array_like, shape (rows, cols)
        Real, finite matrix.
    rel_tol : float, optional
        Singular values below ``rel_tol * sigma_max`` are treated as zero.
        Defaults to :func:`default_rel_tol`.

    Returns
    -------
    np.ndarray, shape (cols, rows)
    """
    m = _as_finite_matrix(m)
    if rel_tol is None:
        rel_tol = default_rel_tol(m.shape)
    if rel_tol < 0:
        raise InvalidInputError("rel_tol must be non-negative")
    if m.size == 0:
        return np.zeros(m.shape[::-1])
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    cutoff = rel_tol * s[0]
    keep = s > cutoff
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vh.T * s_inv) @ u.T


@dataclass(frozen=True)
class ComplexSpectrum:
    """Eigenvalues with biorthonormal right/left eigenvector bases.

    Attributes
    ----------
    eigenvalues : np.ndarray, shape (M,)
        Sorted by descending modulus, then descending real part, then
        descending imaginary part.
    right_vectors : np.ndarray, shape (M, M)
        Column ``j`` is the unit-norm right eigenvector ``xi_j``.
    left_vectors : np.ndarray, shape (M, M)
        Column ``j`` is ``zeta_j``; ``left_vectors.conj().T @ right_vectors``
        is the identity, i.e. ``left_vectors.conj().T`` is the inverse of
        ``right_vectors``.
    condition : float
        Condition estimate of ``right_vectors``.
    """

    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    condition: float

    @property
    def inverse_right(self):
        """``V^{-1}``; its rows pair with the columns of ``V``."""
        return self.left_vectors.conj().T

    def biorthogonality_error(self):
        """Frobenius norm of ``W^H V - I``."""
        n = len(self.eigenvalues)
        return float(np.linalg.norm(self.inverse_right @ self.right_vectors - np.eye(n)))


def sort_order(eigenvalues):
    """Indices sorting eigenvalues by (-|mu|, -Re mu, -Im mu)."""
    ev = np.asarray(eigenvalues)
    # lexsort: last key is primary
    return np.lexsort((-ev.imag, -ev.real, -np.abs(ev)))


def eig_general(m):
    """Eigendecomposition of a general real square matrix.

    Right eigenvectors are scaled to unit Euclidean norm with their
    largest-modulus entry made real and positive; all remaining scaling is
    carried by the left vectors, taken from ``V^{-1}`` so that
    ``W^H V = I`` up to inversion error.

    Raises
    ------
    InvalidInputError
        If ``m`` is not square or not finite.
    NonDiagonalizableError
        If the eigenvector matrix has condition estimate above
        :data:`MAX_EIGVEC_CONDITION`.
    """
    m = _as_finite_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"matrix must be square, got shape {m.shape}")
    n = m.shape[0]
    if n == 0:
        empty = np.zeros((0, 0), dtype=complex)
        return ComplexSpectrum(np.zeros(0, dtype=complex), empty, empty, 1.0)

    mu, v = np.linalg.eig(m)
    mu = mu.astype(complex)
    v = v.astype(complex)
    order = sort_order(mu)
    mu = mu[order]
    v = v[:, order]

    v = v / np.linalg.norm(v, axis=0)
    pivot = np.argmax(np.abs(v), axis=0)
    phase = v[pivot, np.arange(n)]
    v = v / (phase / np.abs(phase))

    cond = np.linalg.cond(v)
    if not np.isfinite(cond) or cond > MAX_EIGVEC_CONDITION:
        raise NonDiagonalizableError(cond)

    v_inv = np.linalg.solve(v, np.eye(n, dtype=complex))
    # one step of iterative refinement tightens W^H V = I for moderately
    # conditioned bases
    v_inv = v_inv + v_inv @ (np.eye(n) - v @ v_inv)
    return ComplexSpectrum(mu, v, v_inv.conj().T, float(cond))


def reconstruct_matrix(spectrum):
    """``V diag(mu) V^{-1}``; real part returned for real input matrices."""
    v = spectrum.right_vectors
    return (v * spectrum.eigenvalues) @ spectrum.inverse_right
