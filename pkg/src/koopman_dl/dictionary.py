"""Dictionaries of observables mapping states to feature rows.

Every dictionary maps an ``(N, d)`` array of states to an ``(N, M)`` feature
matrix whose row ``n`` is ``Psi(x(n))``. Fixed dictionaries (Hermite,
thin-plate RBF, the two Kuramoto-Sivashinsky dictionaries) are plain
functions plus a small class carrying their configuration; the trainable
dictionary is a three-hidden-layer tanh network whose outputs are appended
to the constant and the coordinate projections.
"""

import logging
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import InvalidInputError

log = logging.getLogger(__name__)

DICTIONARY_KINDS = (
    "hermite",
    "thin_plate_rbf",
    "ks_state_deriv",
    "ks_state_fourier",
    "network",
    "affine",
)


def _as_states(states, state_dim=None):
    x = np.asarray(states, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise InvalidInputError(f"states must be 2-D (samples, dim), got shape {x.shape}")
    if state_dim is not None and x.shape[1] != state_dim:
        raise InvalidInputError(f"expected state dimension {state_dim}, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("states contain non-finite entries")
    return x


# --------------------------------------------------------------------------
# Hermite polynomials
# --------------------------------------------------------------------------

def hermite_table(x, max_degree, physicists=False):
    """Evaluate ``H_0 .. H_max_degree`` at every entry of ``x``.

    Returns an array of shape ``x.shape + (max_degree + 1,)``. Probabilists'
    recurrence is ``H_{n+1} = x H_n - n H_{n-1}``; physicists' is
    ``H_{n+1} = 2x H_n - 2n H_{n-1}``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        out[..., 1] = 2.0 * x if physicists else x
    for n in range(1, max_degree):
        if physicists:
            out[..., n + 1] = 2.0 * x * out[..., n] - 2.0 * n * out[..., n - 1]
        else:
            out[..., n + 1] = x * out[..., n] - n * out[..., n - 1]
    return out


def hermite_exponents(state_dim, max_degree):
    """Multi-indices of the tensor Hermite basis in graded order.

    Total degree ascends; within one total degree the tuples are in
    descending lexicographic order, so for ``d = 2`` the sequence starts
    ``(0,0), (1,0), (0,1), (2,0), (1,1), (0,2)``.
    """
    exps = list(product(range(max_degree + 1), repeat=state_dim))
    exps.sort(key=lambda e: (sum(e), tuple(-k for k in e)))
    return exps


def hermite_features(states, max_degree, physicists=False):
    """Tensor-product Hermite features, ``(max_degree + 1) ** d`` columns."""
    if max_degree < 0:
        raise InvalidInputError("max_degree must be non-negative")
    x = _as_states(states)
    table = hermite_table(x, max_degree, physicists)  # (N, d, p+1)
    exps = hermite_exponents(x.shape[1], max_degree)
    feats = np.ones((x.shape[0], len(exps)))
    for j, e in enumerate(exps):
        for dim, k in enumerate(e):
            if k:
                feats[:, j] *= table[:, dim, k]
    return feats


# --------------------------------------------------------------------------
# k-means and thin-plate RBFs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia_history: tuple
    n_iter: int


def _sq_dists(data, centers):
    # explicit differences keep exact zeros for coincident points
    diff = data[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp(data, k, rng):
    n = data.shape[0]
    centers = np.empty((k, data.shape[1]))
    first = rng.integers(n)
    centers[0] = data[first]
    closest = _sq_dists(data, centers[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining points coincide with chosen centers
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[i] = data[idx]
        closest = np.minimum(closest, _sq_dists(data, centers[i:i + 1])[:, 0])
    return centers


def kmeans(data, k, seed=0, max_iters=300):
    """Lloyd's algorithm with k-means++ seeding.

    Deterministic for fixed ``(data, k, seed)``. A cluster that loses all
    its points is re-seeded at the point farthest from its assigned center.
    Iteration stops once assignments no longer change.

    Raises
    ------
    InvalidInputError
        If ``k`` is not in ``1..N``.
    """
    data = _as_states(data)
    n = data.shape[0]
    if not 1 <= k <= n:
        raise InvalidInputError(f"k must be in 1..{n}, got {k}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(data, k, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        d2 = _sq_dists(data, centers)
        new_labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(n), new_labels].sum())
        history.append(inertia)
        if len(history) > 1 and history[-1] > history[-2] * (1 + 1e-12) + 1e-300:
            log.warning("k-means inertia increased: %g -> %g", history[-2], history[-1])
        log.debug("k-means iter %d inertia %.12g", it, inertia)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                centers[j] = data[labels == j].mean(axis=0)
        for j in np.flatnonzero(counts == 0):
            own = d2[np.arange(n), labels]
            far = int(np.argmax(own))
            centers[j] = data[far]
            labels[far] = j
            d2[far, j] = 0.0
    return KMeansResult(centers, labels, tuple(history), it)


def kmeans_centers(data, k, seed=0, max_iters=300):
    """Cluster centers from :func:`kmeans`, shape ``(k, d)``."""
    return kmeans(data, k, seed, max_iters).centers


def thin_plate(r, delta):
    """``r**2 * log(r + delta)``."""
    return r * r * np.log(r + delta)


def rbf_features(states, centers, delta=1e-4):
    """Thin-plate RBF features; column ``j`` is centered at ``centers[j]``."""
    if delta <= 0:
        raise InvalidInputError("delta must be positive")
    x = _as_states(states)
    c = _as_states(centers, x.shape[1])
    r = np.sqrt(_sq_dists(x, c))
    return thin_plate(r, delta)


# --------------------------------------------------------------------------
# Trainable network
# --------------------------------------------------------------------------

_LAYER_NAMES = ("W0", "b0", "W1", "b1", "W2", "b2", "W_out", "b_out")


@dataclass
class NetworkParams:
    """Weights of the three-hidden-layer tanh network.

    Shapes: ``W0 (l, d)``, ``b0 (l,)``, ``W1, W2 (l, l)``, ``b1, b2 (l,)``,
    ``W_out (M_t, l)``, ``b_out (M_t,)``.
    """

    W0: np.ndarray
    b0: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    @property
    def state_dim(self):
        return self.W0.shape[1]

    @property
    def hidden_width(self):
        return self.W0.shape[0]

    @property
    def trainable_outputs(self):
        return self.W_out.shape[0]

    @property
    def size(self):
        return sum(getattr(self, name).size for name in _LAYER_NAMES)

    def arrays(self):
        return [getattr(self, name) for name in _LAYER_NAMES]

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def shapes(cls, state_dim, hidden_width, trainable_outputs):
        d, l, m = state_dim, hidden_width, trainable_outputs
        return [(l, d), (l,), (l, l), (l,), (l, l), (l,), (m, l), (m,)]

    @classmethod
    def unflatten(cls, vec, state_dim, hidden_width, trainable_outputs):
        vec = np.asarray(vec, dtype=float)
        arrays = []
        start = 0
        for shape in cls.shapes(state_dim, hidden_width, trainable_outputs):
            n = math.prod(shape)
            arrays.append(vec[start:start + n].reshape(shape).copy())
            start += n
        if start != vec.size:
            raise InvalidInputError(f"parameter vector has {vec.size} entries, expected {start}")
        return cls(*arrays)

    @classmethod
    def zeros(cls, state_dim, hidden_width, trainable_outputs):
        return cls(*[np.zeros(s) for s in cls.shapes(state_dim, hidden_width, trainable_outputs)])

    def validate(self):
        d, l, m = self.state_dim, self.hidden_width, self.trainable_outputs
        for name, arr, shape in zip(_LAYER_NAMES, self.arrays(), self.shapes(d, l, m)):
            if arr.shape != shape:
                raise InvalidInputError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite entries")

    def to_dict(self):
        return {name: getattr(self, name).tolist() for name in _LAYER_NAMES}

    @classmethod
    def from_dict(cls, doc):
        d = len(doc["W0"][0]) if doc["W0"] else 0
        l = len(doc["b0"])
        m = len(doc["b_out"])
        arrays = []
        for name, shape in zip(_LAYER_NAMES, cls.shapes(d, l, m)):
            arrays.append(np.asarray(doc[name], dtype=float).reshape(shape))
        params = cls(*arrays)
        params.validate()
        return params


def init_network_params(state_dim, hidden_width, trainable_outputs, rng, init_scale=None):
    """Weights uniform in ``[-s, s]`` with ``s = 1/sqrt(fan_in)`` unless given; biases zero."""
    arrays = []
    for shape in NetworkParams.shapes(state_dim, hidden_width, trainable_outputs):
        if len(shape) == 2:
            scale = init_scale if init_scale is not None else 1.0 / math.sqrt(max(shape[1], 1))
            arrays.append(rng.uniform(-scale, scale, size=shape))
        else:
            arrays.append(np.zeros(shape))
    return NetworkParams(*arrays)


_ACTIVATIONS = {
    # name: (f, f' expressed through the output value)
    "tanh": (np.tanh, lambda h: 1.0 - h * h),
    "identity": (lambda z: z, lambda h: np.ones_like(h)),
}


def network_forward(states, params, activation="tanh"):
    """Run the network; returns ``(output, hidden)`` with ``hidden = [h0, h1, h2, h3]``."""
    act, _ = _ACTIVATIONS[activation]
    h0 = _as_states(states, params.state_dim)
    h1 = act(h0 @ params.W0.T + params.b0)
    h2 = act(h1 @ params.W1.T + params.b1)
    h3 = act(h2 @ params.W2.T + params.b2)
    out = h3 @ params.W_out.T + params.b_out
    return out, [h0, h1, h2, h3]


def network_backward(grad_out, hidden, params, activation="tanh"):
    """Reverse-mode pass: parameter gradients given ``dL/d(output)``.

    ``hidden`` is the list returned by :func:`network_forward`.
    """
    _, dact = _ACTIVATIONS[activation]
    h0, h1, h2, h3 = hidden
    g_Wout = grad_out.T @ h3
    g_bout = grad_out.sum(axis=0)
    dz = (grad_out @ params.W_out) * dact(h3)
    g_W2 = dz.T @ h2
    g_b2 = dz.sum(axis=0)
    dz = (dz @ params.W2) * dact(h2)
    g_W1 = dz.T @ h1
    g_b1 = dz.sum(axis=0)
    dz = (dz @ params.W1) * dact(h1)
    g_W0 = dz.T @ h0
    g_b0 = dz.sum(axis=0)
    return NetworkParams(g_W0, g_b0, g_W1, g_b1, g_W2, g_b2, g_Wout, g_bout)


def network_features(states, params, activation="tanh"):
    """Feature rows ``(1, x, network(x))``."""
    params.validate()
    x = _as_states(states, params.state_dim)
    out, _ = network_forward(x, params, activation)
    return np.hstack([np.ones((x.shape[0], 1)), x, out])


# --------------------------------------------------------------------------
# Kuramoto-Sivashinsky dictionaries
# --------------------------------------------------------------------------

def _check_grid(n):
    if n < 4 or n % 2:
        raise InvalidInputError(f"grid size must be even and >= 4, got {n}")


def spectral_derivative(u, order, domain_length=2 * np.pi):
    """Fourier derivative of periodic samples along the last axis.

    Mode ``k`` is multiplied by ``(2 pi i k / L) ** order``; the Nyquist mode
    is zeroed for odd orders so the result stays real.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[-1]
    _check_grid(n)
    if not 1 <= order <= 4:
        raise InvalidInputError(f"derivative order must be 1..4, got {order}")
    k = np.fft.rfftfreq(n, d=1.0 / n)
    mult = (2j * np.pi * k / domain_length) ** order
    if order % 2:
        mult[-1] = 0.0
    return np.fft.irfft(mult * np.fft.rfft(u, axis=-1), n=n, axis=-1)


def ks_state_deriv_features(u, grid_points=50, domain_length=2 * np.pi):
    """State samples followed by the first four spatial derivatives."""
    u = _as_states(u)
    if u.shape[1] != grid_points:
        raise InvalidInputError(f"expected {grid_points} grid points, got {u.shape[1]}")
    blocks = [u] + [spectral_derivative(u, k, domain_length) for k in range(1, 5)]
    return np.hstack(blocks)


def default_fourier_modes(grid_points):
    return grid_points // 4


def ks_fourier_features(u, grid_points=100, n_modes=None):
    """State samples, ``Re u_hat[0..m-1]`` and ``Im u_hat[1..m]``.

    The forward DFT is divided by the grid size, so ``u_hat[0]`` is the
    spatial mean. ``m`` defaults to ``grid_points // 4``, giving 150 features
    on a 100-point grid.
    """
    u = _as_states(u)
    if u.shape[1] != grid_points:
        raise InvalidInputError(f"expected {grid_points} grid points, got {u.shape[1]}")
    if n_modes is None:
        n_modes = default_fourier_modes(grid_points)
    if not 1 <= n_modes <= grid_points // 2:
        raise InvalidInputError(f"n_modes must be in 1..{grid_points // 2}")
    u_hat = np.fft.rfft(u, axis=-1) / grid_points
    return np.hstack([u, u_hat[:, :n_modes].real, u_hat[:, 1:n_modes + 1].imag])


# --------------------------------------------------------------------------
# Dictionary objects
# --------------------------------------------------------------------------

class Dictionary:
    """Common interface: ``dictionary(states) -> (N, M)`` features.

    Subclasses set ``kind``, ``state_dim`` and ``output_dim`` and list the
    feature columns that reproduce the raw state in ``projection_columns``
    (``None`` when the state is not part of the dictionary).
    """

    kind = None
    trainable = False
    projection_columns = None

    def __call__(self, states):
        return self.features(states)

    def features(self, states):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(state_dim={self.state_dim}, output_dim={self.output_dim})"


class AffineDictionary(Dictionary):
    """Constant plus coordinate projections, ``(1, x_1, ..., x_d)``."""

    kind = "affine"

    def __init__(self, state_dim):
        self.state_dim = int(state_dim)
        self.output_dim = self.state_dim + 1
        self.projection_columns = list(range(1, self.state_dim + 1))

    def features(self, states):
        x = _as_states(states, self.state_dim)
        return np.hstack([np.ones((x.shape[0], 1)), x])

    def to_dict(self):
        return {"kind": self.kind, "state_dim": self.state_dim}


class HermiteDictionary(Dictionary):
    kind = "hermite"

    def __init__(self, state_dim, max_degree, physicists=False):
        self.state_dim = int(state_dim)
        self.max_degree = int(max_degree)
        self.physicists = bool(physicists)
        self.exponents = hermite_exponents(self.state_dim, self.max_degree)
        self.output_dim = len(self.exponents)
        if self.max_degree >= 1 and not self.physicists:
            unit = [tuple(int(i == j) for i in range(self.state_dim)) for j in range(self.state_dim)]
            self.projection_columns = [self.exponents.index(e) for e in unit]
        else:
            # physicists' H_1 = 2x: the state is in the span but not a column
            self.projection_columns = None

    def features(self, states):
        x = _as_states(states, self.state_dim)
        return hermite_features(x, self.max_degree, self.physicists)

    def to_dict(self):
        return {
            "kind": self.kind,
            "state_dim": self.state_dim,
            "max_degree": self.max_degree,
            "physicists": self.physicists,
        }


class RbfDictionary(Dictionary):
    """Thin-plate RBFs, optionally preceded by ``(1, x)``."""

    kind = "thin_plate_rbf"

    def __init__(self, centers, delta=1e-4, include_state=True):
        self.centers = np.array(_as_states(centers))
        self.state_dim = self.centers.shape[1]
        self.delta = float(delta)
        self.include_state = bool(include_state)
        prefix = self.state_dim + 1 if self.include_state else 0
        self.output_dim = prefix + self.centers.shape[0]
        if self.include_state:
            self.projection_columns = list(range(1, self.state_dim + 1))

    @classmethod
    def from_data(cls, data, n_centers, seed=0, delta=1e-4, include_state=True, max_iters=300):
        """Place ``n_centers`` centers on ``data`` with k-means."""
        return cls(kmeans_centers(data, n_centers, seed, max_iters), delta, include_state)

    def features(self, states):
        x = _as_states(states, self.state_dim)
        feats = rbf_features(x, self.centers, self.delta)
        if self.include_state:
            feats = np.hstack([np.ones((x.shape[0], 1)), x, feats])
        return feats

    def to_dict(self):
        return {
            "kind": self.kind,
            "state_dim": self.state_dim,
            "centers": self.centers.tolist(),
            "delta": self.delta,
            "include_state": self.include_state,
        }


class KsStateDerivDictionary(Dictionary):
    kind = "ks_state_deriv"

    def __init__(self, grid_points=50, domain_length=2 * np.pi):
        _check_grid(grid_points)
        self.state_dim = int(grid_points)
        self.domain_length = float(domain_length)
        self.output_dim = 5 * self.state_dim
        self.projection_columns = list(range(self.state_dim))

    def features(self, states):
        return ks_state_deriv_features(states, self.state_dim, self.domain_length)

    def to_dict(self):
        return {
            "kind": self.kind,
            "state_dim": self.state_dim,
            "domain_length": self.domain_length,
        }


class KsFourierDictionary(Dictionary):
    kind = "ks_state_fourier"

    def __init__(self, grid_points=100, n_modes=None):
        _check_grid(grid_points)
        self.state_dim = int(grid_points)
        self.n_modes = default_fourier_modes(grid_points) if n_modes is None else int(n_modes)
        self.output_dim = self.state_dim + 2 * self.n_modes
        self.projection_columns = list(range(self.state_dim))

    def features(self, states):
        return ks_fourier_features(states, self.state_dim, self.n_modes)

    def to_dict(self):
        return {"kind": self.kind, "state_dim": self.state_dim, "n_modes": self.n_modes}


class NetworkDictionary(Dictionary):
    """Constant, projections and the trainable network outputs.

    ``output_dim = 1 + d + M_t``; only the last ``M_t`` columns depend on the
    parameters.
    """

    kind = "network"
    trainable = True

    def __init__(self, params, activation="tanh"):
        params.validate()
        self.params = params
        self.activation = activation
        self.state_dim = params.state_dim
        self.output_dim = 1 + params.state_dim + params.trainable_outputs
        self.projection_columns = list(range(1, self.state_dim + 1))

    @property
    def n_fixed(self):
        return 1 + self.state_dim

    def features(self, states):
        return network_features(states, self.params, self.activation)

    def to_dict(self):
        return {
            "kind": self.kind,
            "state_dim": self.state_dim,
            "hidden_width": self.params.hidden_width,
            "trainable_outputs": self.params.trainable_outputs,
            "activation": self.activation,
            "params": self.params.to_dict(),
        }


def dictionary_from_dict(doc):
    """Rebuild a dictionary from :meth:`Dictionary.to_dict` output."""
    kind = doc.get("kind")
    if kind == "affine":
        return AffineDictionary(doc["state_dim"])
    if kind == "hermite":
        return HermiteDictionary(doc["state_dim"], doc["max_degree"], doc.get("physicists", False))
    if kind == "thin_plate_rbf":
        return RbfDictionary(doc["centers"], doc["delta"], doc.get("include_state", True))
    if kind == "ks_state_deriv":
        return KsStateDerivDictionary(doc["state_dim"], doc.get("domain_length", 2 * np.pi))
    if kind == "ks_state_fourier":
        return KsFourierDictionary(doc["state_dim"], doc.get("n_modes"))
    if kind == "network":
        return NetworkDictionary(NetworkParams.from_dict(doc["params"]), doc.get("activation", "tanh"))
    raise InvalidInputError(f"unknown dictionary kind {kind!r}")
