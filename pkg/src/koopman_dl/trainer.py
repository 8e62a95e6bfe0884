"""Dictionary learning: alternate an exact K-solve with gradient steps on the network.

The objective is ``J(K, theta) = s * sum_n ||Psi(y(n)) - Psi(x(n)) K||^2 + lam ||K||_F^2``
with ``s = 1/N`` (``reduction="mean"``, the default) or ``s = 1``
(``reduction="sum"``). With the ``1/N``-normalized Gram matrices its exact
minimizer over ``K`` at fixed ``theta`` is ``(G + lam I)^+ A`` for the mean
reduction and ``(G + (lam/N) I)^+ A`` for the sum; the K-step computes
whichever matches.
"""

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dictionary import (
    NetworkDictionary,
    NetworkParams,
    init_network_params,
    network_backward,
    network_forward,
)
from .errors import InvalidInputError, TrainingDivergedError
from .koopman import KoopmanModel, gram_matrices, selection_map, solve_k
from .rng import make_rng

log = logging.getLogger(__name__)

OPTIMIZERS = ("gd", "momentum", "adam")
REDUCTIONS = ("mean", "sum")


@dataclass
class TrainingConfig:
    """Hyperparameters of the alternating K-step / gradient-step loop.

    ``batch_size=None`` means full-batch gradients. ``optimizer='gd'`` is the
    plain update ``theta -= learning_rate * grad``.
    """

    learning_rate: float = 1e-3
    lam: float = 1e-4
    max_iterations: int = 1000
    tolerance: float = 1e-6
    batch_size: int | None = None
    gradient_steps_per_k_update: int = 5
    seed: int = 0
    hidden_width: int = 64
    trainable_outputs: int = 22
    init_scale: float | None = None
    optimizer: str = "gd"
    momentum: float = 0.9
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    divergence_factor: float = 1e6
    activation: str = "tanh"
    reduction: str = "mean"
    record_wall_time: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if not self.lam > 0:
            raise InvalidInputError("lam must be positive")
        if not self.tolerance > 0:
            raise InvalidInputError("tolerance must be positive")
        if self.max_iterations < 1 or self.gradient_steps_per_k_update < 1:
            raise InvalidInputError("max_iterations and gradient_steps_per_k_update must be >= 1")
        if self.hidden_width < 1 or self.trainable_outputs < 0:
            raise InvalidInputError("hidden_width must be >= 1 and trainable_outputs >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidInputError("batch_size must be positive or None")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidInputError(f"optimizer must be one of {OPTIMIZERS}")
        if self.reduction not in REDUCTIONS:
            raise InvalidInputError(f"reduction must be one of {REDUCTIONS}")
        self.adam_betas = tuple(self.adam_betas)

    def to_dict(self):
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown training options: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    J_before_k: float
    J_k: float
    J_theta: float
    grad_norm: float
    seconds: float


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)

    def append(self, record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    @property
    def final_loss(self):
        return self.records[-1].J_k if self.records else float("nan")


def _weight(n, reduction):
    if reduction not in REDUCTIONS:
        raise InvalidInputError(f"reduction must be one of {REDUCTIONS}")
    if reduction == "sum" or n == 0:
        return 1.0
    return 1.0 / n


def k_step(psi_x, psi_y, lam, reduction="mean"):
    """Exact minimizer over ``K`` of the objective at fixed features."""
    G, A = gram_matrices(psi_x, psi_y)
    ridge = lam if reduction == "mean" else lam / psi_x.shape[0]
    return solve_k(G, A, ridge)


def _network_psi(states, params, activation):
    out, hidden = network_forward(states, params, activation)
    n = out.shape[0]
    psi = np.hstack([np.ones((n, 1)), states, out])
    return psi, hidden


def loss(K, params, dataset, lam, activation="tanh", reduction="mean"):
    """``s * sum_n ||Psi(y(n)) - Psi(x(n)) K||^2 + lam ||K||_F^2``.

    ``s`` is ``1/N`` for ``reduction="mean"`` and 1 for ``"sum"``.
    """
    psi_x, _ = _network_psi(dataset.X, params, activation)
    psi_y, _ = _network_psi(dataset.Y, params, activation)
    return _loss_from_features(K, psi_x, psi_y, lam, reduction)


def _loss_from_features(K, psi_x, psi_y, lam, reduction="mean"):
    r = psi_y - psi_x @ K
    w = _weight(psi_x.shape[0], reduction)
    return float(w * np.sum(r * r) + lam * np.sum(K * K))


def grad_theta(K, params, batch, lam=0.0, activation="tanh", reduction="mean"):
    """Gradient of :func:`loss` with respect to every network parameter.

    The residual ``R = Psi(Y) - Psi(X) K`` gives ``dJ/dPsi(Y) = 2R`` and
    ``dJ/dPsi(X) = -2 R K^T``; only the trainable columns are
    back-propagated, through both the ``x`` and the ``y`` evaluations.
    ``lam`` enters only through ``K`` and is accepted for symmetry with
    :func:`loss`.
    """
    params.validate()
    K = np.asarray(K, dtype=float)
    n_fixed = 1 + params.state_dim
    if K.shape != (n_fixed + params.trainable_outputs,) * 2:
        raise InvalidInputError(f"K has shape {K.shape}, inconsistent with the network")
    psi_x, hid_x = _network_psi(batch.X, params, activation)
    psi_y, hid_y = _network_psi(batch.Y, params, activation)
    r = psi_y - psi_x @ K
    w = 2.0 * _weight(psi_x.shape[0], reduction)
    g_y = w * r[:, n_fixed:]
    g_x = -w * (r @ K.T)[:, n_fixed:]
    gx = network_backward(g_x, hid_x, params, activation)
    gy = network_backward(g_y, hid_y, params, activation)
    return NetworkParams(*[a + b for a, b in zip(gx.arrays(), gy.arrays())])


def gradient_check(params, batch, n_probes=20, fd_step=1e-6, K=None, lam=0.0,
                   seed=0, activation="tanh", reduction="mean"):
    """Largest relative discrepancy between :func:`grad_theta` and central differences.

    ``n_probes`` coordinates of the flattened parameter vector are drawn at
    random. When ``K`` is omitted it is the K-step solution for ``params``.
    The difference quotients are evaluated in ``np.longdouble`` where the
    platform offers it, and the loss difference is accumulated directly
    rather than as the difference of two rounded totals.
    The relative error of a probe is ``|g - g_fd| / max(|g|, |g_fd|)``, with
    probes where both are below ``1e-8 * ||g||_inf`` compared absolutely
    against that floor.
    """
    if not fd_step > 0:
        raise InvalidInputError("fd_step must be positive")
    if K is None:
        psi_x, _ = _network_psi(batch.X, params, activation)
        psi_y, _ = _network_psi(batch.Y, params, activation)
        K = k_step(psi_x, psi_y, max(lam, 0.0), reduction)
    d, l, m = params.state_dim, params.hidden_width, params.trainable_outputs
    analytic = grad_theta(K, params, batch, lam, activation, reduction).flatten()
    theta = params.flatten()
    rng = np.random.default_rng(seed)
    probes = rng.choice(theta.size, size=min(n_probes, theta.size), replace=False)
    floor = 1e-8 * max(np.max(np.abs(analytic)), 1e-300)
    w = np.longdouble(_weight(batch.n_samples, reduction))
    worst = 0.0
    for i in probes:
        tp = theta.copy()
        tp[i] += fd_step
        tm = theta.copy()
        tm[i] -= fd_step
        rp = _residual_extended(K, NetworkParams.unflatten(tp, d, l, m), batch, activation)
        rm = _residual_extended(K, NetworkParams.unflatten(tm, d, l, m), batch, activation)
        # J+ - J- summed as (r+ - r-)(r+ + r-) avoids cancelling two large sums;
        # the penalty on K is identical on both sides and drops out
        dJ = w * np.sum((rp - rm) * (rp + rm))
        # divide by the step actually representable in float64
        fd = float(dJ / (np.longdouble(tp[i]) - np.longdouble(tm[i])))
        scale = max(abs(analytic[i]), abs(fd), floor)
        worst = max(worst, abs(analytic[i] - fd) / scale)
    return worst


def _residual_extended(K, params, batch, activation):
    ext = np.longdouble
    act = {"tanh": np.tanh, "identity": lambda z: z}[activation]

    def psi(states):
        h = states.astype(ext)
        for W, b in ((params.W0, params.b0), (params.W1, params.b1), (params.W2, params.b2)):
            h = act(h @ W.astype(ext).T + b.astype(ext))
        out = h @ params.W_out.astype(ext).T + params.b_out.astype(ext)
        return np.hstack([np.ones((states.shape[0], 1), dtype=ext), states.astype(ext), out])

    return psi(batch.Y) - psi(batch.X) @ np.asarray(K).astype(ext)


class _Optimizer:
    def __init__(self, config, size):
        self.cfg = config
        self.t = 0
        self.m = np.zeros(size)
        self.v = np.zeros(size)

    def step(self, theta, grad):
        cfg = self.cfg
        if cfg.optimizer == "gd":
            return theta - cfg.learning_rate * grad
        if cfg.optimizer == "momentum":
            self.m = cfg.momentum * self.m + grad
            return theta - cfg.learning_rate * self.m
        self.t += 1
        b1, b2 = cfg.adam_betas
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1 ** self.t)
        v_hat = self.v / (1 - b2 ** self.t)
        return theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _batches(n, batch_size, rng):
    """Endless stream of index arrays, reshuffled every epoch."""
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield perm[start:start + batch_size]


def fit_edmd_dl(dataset, config, params=None, callback=None, checkpoint_every=None,
                checkpoint=None):
    """Train the network dictionary and return ``(KoopmanModel, TrainingHistory)``.

    Each iteration solves for ``K`` on the full dataset, then applies
    ``config.gradient_steps_per_k_update`` parameter updates. Training stops
    when the post-K-step loss is at most ``config.tolerance`` or after
    ``config.max_iterations`` iterations; a last K-step on the final
    parameters defines the returned model.

    Parameters
    ----------
    params : NetworkParams, optional
        Starting weights; drawn from ``config.seed`` when omitted.
    callback : callable, optional
        Called as ``callback(iteration, K, params)`` right after each K-step,
        before the parameters move.
    checkpoint : callable, optional
        Called as ``checkpoint(model, history)`` every ``checkpoint_every``
        iterations.

    Raises
    ------
    TrainingDivergedError
        If the loss becomes non-finite or exceeds ``divergence_factor`` times
        its first value. ``err.history`` holds the finite records.
    """
    if dataset.n_samples == 0:
        raise InvalidInputError("dataset is empty")
    cfg = config
    d = dataset.state_dim
    if params is None:
        params = init_network_params(d, cfg.hidden_width, cfg.trainable_outputs,
                                     make_rng(cfg.seed, "init"), cfg.init_scale)
    if params.state_dim != d:
        raise InvalidInputError("network input dimension does not match the dataset")
    hw, mt = params.hidden_width, params.trainable_outputs
    n = dataset.n_samples
    act = cfg.activation
    red = cfg.reduction

    theta = params.flatten()
    opt = _Optimizer(cfg, theta.size)
    batch_size = n if cfg.batch_size is None else min(cfg.batch_size, n)
    batches = _batches(n, batch_size, make_rng(cfg.seed, "batch")) if batch_size < n else None
    grad_scale = n / batch_size

    history = TrainingHistory()
    M = 1 + d + mt
    K = np.zeros((M, M))
    J_ref = None
    t0 = time.perf_counter()

    def diverged(value):
        return not np.isfinite(value) or (J_ref is not None and value > cfg.divergence_factor * J_ref)

    for it in range(1, cfg.max_iterations + 1):
        p = NetworkParams.unflatten(theta, d, hw, mt)
        psi_x, _ = _network_psi(dataset.X, p, act)
        psi_y, _ = _network_psi(dataset.Y, p, act)
        J_before = _loss_from_features(K, psi_x, psi_y, cfg.lam, red)
        K = k_step(psi_x, psi_y, cfg.lam, red)
        J_k = _loss_from_features(K, psi_x, psi_y, cfg.lam, red)
        if J_ref is None:
            J_ref = J_k
        if diverged(J_k):
            raise TrainingDivergedError(f"loss diverged at iteration {it}: {J_k}", history)
        if callback is not None:
            callback(it, K, p)
        if J_k <= cfg.tolerance:
            history.append(IterationRecord(it, J_before, J_k, J_k, 0.0, _elapsed(t0, cfg)))
            break

        grad_norm = 0.0
        for _ in range(cfg.gradient_steps_per_k_update):
            batch = dataset if batches is None else dataset.subset(next(batches))
            g = grad_theta(K, NetworkParams.unflatten(theta, d, hw, mt), batch, cfg.lam, act, red)
            g = g.flatten()
            if grad_scale != 1.0:
                g = g * grad_scale
            grad_norm = float(np.linalg.norm(g))
            theta = opt.step(theta, g)
        J_theta = loss(K, NetworkParams.unflatten(theta, d, hw, mt), dataset, cfg.lam, act, red)
        if diverged(J_theta):
            raise TrainingDivergedError(f"loss diverged at iteration {it}: {J_theta}", history)
        history.append(IterationRecord(it, J_before, J_k, J_theta, grad_norm, _elapsed(t0, cfg)))
        log.debug("iter %d  J_k %.6e  J_theta %.6e  |g| %.3e", it, J_k, J_theta, grad_norm)
        if checkpoint is not None and checkpoint_every and it % checkpoint_every == 0:
            checkpoint(_build_model(dataset, theta, d, hw, mt, cfg), history)

    model = _build_model(dataset, theta, d, hw, mt, cfg)
    return model, history


def _elapsed(t0, cfg):
    return time.perf_counter() - t0 if cfg.record_wall_time else 0.0


def _build_model(dataset, theta, d, hw, mt, cfg):
    params = NetworkParams.unflatten(theta, d, hw, mt)
    dictionary = NetworkDictionary(params, cfg.activation)
    psi_x = dictionary(dataset.X)
    psi_y = dictionary(dataset.Y)
    K = k_step(psi_x, psi_y, cfg.lam, cfg.reduction)
    J = _loss_from_features(K, psi_x, psi_y, cfg.lam, cfg.reduction)
    ridge = cfg.lam if cfg.reduction == "mean" else cfg.lam / dataset.n_samples
    return KoopmanModel.from_matrix(
        dictionary, K, selection_map(dictionary), ridge,
        info={"final_loss": J, "objective_lambda": cfg.lam, "reduction": cfg.reduction})
