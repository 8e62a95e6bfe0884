"""EDMD regression: Gram matrices, the Koopman matrix and its mode decomposition.

Matrix convention
-----------------
Feature rows are samples. With ``PsiX[n] = Psi(x(n))`` and
``PsiY[n] = Psi(y(n))`` the regression solves ``PsiY ~ PsiX @ K``, so

* ``G = PsiX.T @ PsiX / N`` and ``A = PsiX.T @ PsiY / N`` and ``K = G^+ A``;
* the eigenfunction for the right eigenvector ``xi_j`` (``K xi_j = mu_j xi_j``)
  is ``phi_j(x) = Psi(x) @ xi_j``, because
  ``Psi(f(x)) @ xi_j ~ Psi(x) @ K @ xi_j = mu_j phi_j(x)``;
* a vector observable ``O(x) = Psi(x) @ C`` has modes ``m_j`` equal to row
  ``j`` of ``V^{-1} C``, making
  ``O(x(n)) = sum_j mu_j**n phi_j(x(0)) m_j = Psi(x(0)) K**n C`` exact.
"""

from dataclasses import dataclass, field

import numpy as np

from .dictionary import Dictionary, dictionary_from_dict
from .errors import InvalidInputError
from .numerics import ComplexSpectrum, eig_general, pseudo_inverse

DEFAULT_LAMBDA = 1e-4


@dataclass
class SnapshotDataset:
    """Pairs ``y(n) = f(x(n))`` stacked as rows of ``X`` and ``Y``."""

    X: np.ndarray
    Y: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.Y = np.ascontiguousarray(self.Y, dtype=float)
        if self.X.ndim != 2 or self.X.shape != self.Y.shape:
            raise InvalidInputError(
                f"X and Y must be 2-D with identical shapes, got {self.X.shape} and {self.Y.shape}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise InvalidInputError("dataset contains non-finite entries")

    @property
    def n_samples(self):
        return self.X.shape[0]

    @property
    def state_dim(self):
        return self.X.shape[1]

    def __len__(self):
        return self.n_samples

    def subset(self, index):
        return SnapshotDataset(self.X[index], self.Y[index], dict(self.metadata))


def gram_matrices(psi_x, psi_y):
    """``G = PsiX^T PsiX / N`` and ``A = PsiX^T PsiY / N``."""
    psi_x = np.asarray(psi_x, dtype=float)
    psi_y = np.asarray(psi_y, dtype=float)
    if psi_x.ndim != 2 or psi_x.shape != psi_y.shape:
        raise InvalidInputError(
            f"feature matrices must share a 2-D shape, got {psi_x.shape} and {psi_y.shape}")
    n = psi_x.shape[0]
    if n == 0:
        raise InvalidInputError("feature matrices have no rows")
    g = psi_x.T @ psi_x / n
    # symmetrize exactly; BLAS may round the two triangles differently
    g = 0.5 * (g + g.T)
    a = psi_x.T @ psi_y / n
    return g, a


def solve_k(G, A, lam=0.0, rel_tol=None):
    """Regularized EDMD solution ``(G + lam I)^+ A``."""
    G = np.asarray(G, dtype=float)
    A = np.asarray(A, dtype=float)
    if lam < 0:
        raise InvalidInputError("lambda must be non-negative")
    if G.ndim != 2 or G.shape[0] != G.shape[1] or A.shape != G.shape:
        raise InvalidInputError(f"G and A must be square and equal-shaped, got {G.shape}, {A.shape}")
    return pseudo_inverse(G + lam * np.eye(G.shape[0]), rel_tol) @ A


def selection_map(dictionary):
    """0/1 matrix ``C`` with ``Psi(x) @ C = x``, or ``None``."""
    cols = dictionary.projection_columns
    if cols is None:
        return None
    C = np.zeros((dictionary.output_dim, dictionary.state_dim))
    C[cols, np.arange(dictionary.state_dim)] = 1.0
    return C


def fit_recon_map(dictionary, states):
    """Map ``C`` reproducing the full state from features.

    Uses the exact selection matrix when the dictionary contains the
    coordinate projections, otherwise a least-squares fit on ``states``.
    """
    C = selection_map(dictionary)
    if C is None:
        states = np.asarray(states, dtype=float)
        C = pseudo_inverse(dictionary(states)) @ states
    return C


@dataclass
class KoopmanModel:
    """A fitted finite-dimensional Koopman approximation.

    Attributes
    ----------
    dictionary : Dictionary
    K : np.ndarray, shape (M, M)
    spectrum : ComplexSpectrum
    modes : np.ndarray, shape (M, d)
        Row ``j`` is the Koopman mode ``m_j`` of the full-state observable.
    recon_map : np.ndarray, shape (M, d)
        ``C`` with ``x ~ Psi(x) @ C``.
    lam : float
        Ridge parameter used for the fit.
    """

    dictionary: Dictionary
    K: np.ndarray
    spectrum: ComplexSpectrum
    modes: np.ndarray
    recon_map: np.ndarray
    lam: float = 0.0
    info: dict = field(default_factory=dict)

    @classmethod
    def from_matrix(cls, dictionary, K, recon_map, lam=0.0, info=None):
        """Decompose ``K`` and derive the modes ``V^{-1} C``."""
        K = np.asarray(K, dtype=float)
        spectrum = eig_general(K)
        modes = spectrum.inverse_right @ recon_map
        return cls(dictionary, K, spectrum, modes, np.asarray(recon_map, dtype=float), lam,
                   dict(info or {}))

    @property
    def eigenvalues(self):
        return self.spectrum.eigenvalues

    @property
    def output_dim(self):
        return self.K.shape[0]

    @property
    def state_dim(self):
        return self.recon_map.shape[1]

    def features(self, states):
        return self.dictionary(states)

    def to_dict(self):
        sp = self.spectrum
        return {
            "dictionary": self.dictionary.to_dict(),
            "lambda": self.lam,
            "K": self.K.tolist(),
            "eigenvalues": _complex_to_list(sp.eigenvalues),
            "right_vectors": _complex_to_list(sp.right_vectors),
            "left_vectors": _complex_to_list(sp.left_vectors),
            "condition": sp.condition,
            "modes": _complex_to_list(self.modes),
            "recon_map": self.recon_map.tolist(),
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, doc):
        spectrum = ComplexSpectrum(
            _list_to_complex(doc["eigenvalues"]),
            _list_to_complex(doc["right_vectors"]),
            _list_to_complex(doc["left_vectors"]),
            float(doc["condition"]),
        )
        return cls(
            dictionary_from_dict(doc["dictionary"]),
            np.asarray(doc["K"], dtype=float),
            spectrum,
            _list_to_complex(doc["modes"]),
            np.asarray(doc["recon_map"], dtype=float),
            float(doc["lambda"]),
            dict(doc.get("info", {})),
        )


def _complex_to_list(z):
    z = np.asarray(z)
    return np.stack([z.real, z.imag], axis=-1).tolist()


def _list_to_complex(lst):
    arr = np.asarray(lst, dtype=float)
    if arr.size == 0:
        return np.zeros(arr.shape[:-1], dtype=complex)
    return arr[..., 0] + 1j * arr[..., 1]


def fit_edmd(dataset, dictionary, lam=DEFAULT_LAMBDA):
    """Fit ``K = (G + lam I)^+ A`` for a fixed dictionary.

    ``lam`` acts on the ``1/N``-normalized Gram matrix, so the returned
    ``K`` minimizes ``mean_n ||Psi(y(n)) - Psi(x(n)) K||^2 + lam ||K||_F^2``.
    """
    if dataset.state_dim != dictionary.state_dim:
        raise InvalidInputError(
            f"dataset dimension {dataset.state_dim} does not match dictionary "
            f"dimension {dictionary.state_dim}")
    psi_x = dictionary(dataset.X)
    psi_y = dictionary(dataset.Y)
    G, A = gram_matrices(psi_x, psi_y)
    K = solve_k(G, A, lam)
    C = fit_recon_map(dictionary, dataset.X)
    residual = float(np.sum((psi_y - psi_x @ K) ** 2))
    return KoopmanModel.from_matrix(dictionary, K, C, lam, info={"residual": residual})


def eigenfunction_values(model, states):
    """``phi_j(x(n)) = Psi(x(n)) @ xi_j`` for every sample and eigenpair, shape (N, M)."""
    return model.features(states) @ model.spectrum.right_vectors


def reconstruct_complex(model, x0, n_steps):
    """Complex mode sum ``sum_k mu_k**n phi_k(x0) m_k`` for ``n = 0..n_steps``."""
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    if n_steps < 0:
        raise InvalidInputError("n_steps must be non-negative")
    phi0 = eigenfunction_values(model, x0)[0]
    powers = model.eigenvalues[None, :] ** np.arange(n_steps + 1)[:, None]
    return (powers * phi0) @ model.modes


def reconstruct(model, x0, n_steps):
    """Trajectory predicted by the Koopman mode decomposition, shape (n_steps + 1, d)."""
    return reconstruct_complex(model, x0, n_steps).real


def reconstruct_by_powers(model, x0, n_steps):
    """Reference path ``Psi(x0) K**n C`` computed by repeated multiplication."""
    row = model.features(np.asarray(x0, dtype=float).reshape(1, -1))[0]
    out = np.empty((n_steps + 1, model.state_dim))
    for n in range(n_steps + 1):
        out[n] = row @ model.recon_map
        row = row @ model.K
    return out


def one_step_predict(model, states):
    """Predict ``f(x)`` through one application of ``K``: ``Psi(x) K C``."""
    return model.features(states) @ model.K @ model.recon_map
