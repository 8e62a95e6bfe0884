"""Ground-truth dynamics: the damped Duffing oscillator and Kuramoto-Sivashinsky.

Duffing::

    x1' = x2
    x2' = -delta x2 - x1 (beta + alpha x1**2)

sampled through the time-``tau`` flow map (fixed-step RK4).

Kuramoto-Sivashinsky on the periodic domain ``[0, L)``::

    u_t = -4 u_zzzz - alpha u_zz - alpha u u_z

integrated with ETDRK4 on a fine Fourier grid and observed on a coarser
uniform grid by trigonometric interpolation.
"""

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import IntegrationError, InvalidInputError
from .koopman import SnapshotDataset
from .rng import make_rng


def _from_dict(cls, doc):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise InvalidInputError(f"unknown {cls.__name__} options: {sorted(unknown)}")
    return cls(**doc)


# --------------------------------------------------------------------------
# Duffing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DuffingParams:
    alpha: float = 1.0
    beta: float = -1.0
    delta: float = 0.5
    tau: float = 0.25
    rk4_substeps: int = 25

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidInputError("tau must be positive")
        if self.rk4_substeps < 1:
            raise InvalidInputError("rk4_substeps must be >= 1")

    to_dict = asdict

    @classmethod
    def from_dict(cls, doc):
        return _from_dict(cls, doc)


def duffing_rhs(x, params=DuffingParams()):
    """Vector field at ``x``; works on a single state or an ``(N, 2)`` batch."""
    x = np.asarray(x, dtype=float)
    x1 = x[..., 0]
    x2 = x[..., 1]
    dx2 = -params.delta * x2 - x1 * (params.beta + params.alpha * x1 * x1)
    return np.stack([x2, dx2], axis=-1)


def rk4_step(rhs, x, h):
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * h * k1)
    k3 = rhs(x + 0.5 * h * k2)
    k4 = rhs(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def duffing_flow(x0, params=DuffingParams()):
    """Flow map ``Phi_tau``: RK4 with ``rk4_substeps`` uniform substeps."""
    x = np.array(x0, dtype=float)
    h = params.tau / params.rk4_substeps

    def rhs(y):
        return duffing_rhs(y, params)

    # overflow is reported below as an IntegrationError
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(params.rk4_substeps):
            x = rk4_step(rhs, x, h)
    if not np.all(np.isfinite(x)):
        raise IntegrationError("Duffing integration produced non-finite values")
    return x


def duffing_trajectory(x0, n_steps, params=DuffingParams()):
    """States ``x(0), ..., x(n_steps)``; shape ``(n_steps + 1, 2)`` or ``(B, n_steps + 1, 2)``."""
    x = np.asarray(x0, dtype=float)
    out = np.empty((n_steps + 1,) + x.shape)
    out[0] = x
    for k in range(n_steps):
        x = duffing_flow(x, params)
        out[k + 1] = x
    return np.moveaxis(out, 0, -2)


def sample_box(rng, n, dim, box):
    lo, hi = box
    return rng.uniform(lo, hi, size=(n, dim))


def make_duffing_dataset(n_ic, n_steps, box=(-2.0, 2.0), seed=0, params=DuffingParams()):
    """Pairs ``(x(k), x(k+1))`` from ``n_ic`` uniform initial conditions.

    Pairs are ordered by initial condition, then by time.
    """
    if n_ic < 1 or n_steps < 1:
        raise InvalidInputError("n_ic and n_steps must be >= 1")
    x0 = sample_box(make_rng(seed, "duffing-train"), n_ic, 2, box)
    traj = duffing_trajectory(x0, n_steps, params)  # (n_ic, n_steps + 1, 2)
    X = traj[:, :-1, :].reshape(-1, 2)
    Y = traj[:, 1:, :].reshape(-1, 2)
    meta = {
        "system": "duffing",
        "tau": params.tau,
        "seed": seed,
        "n_ic": n_ic,
        "n_steps": n_steps,
        "box": list(box),
        "params": params.to_dict(),
    }
    return SnapshotDataset(X, Y, meta)


# --------------------------------------------------------------------------
# Kuramoto-Sivashinsky
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KsParams:
    alpha: float = 16.0
    grid_points: int = 50
    domain_length: float = 2 * math.pi
    dt: float = 1e-4
    t_final: float = 0.5
    n_time_samples: int = 100
    solver_modes: int = 128
    contour_points: int = 32
    ic_literal: bool = False
    a_range: tuple = (0.8, 1.0)
    b_range: tuple = (0.5, 1.0)
    blowup: float = 1e8

    def __post_init__(self):
        if self.grid_points % 2 or self.grid_points < 4:
            raise InvalidInputError("grid_points must be even and >= 4")
        if self.solver_modes % 2 or self.solver_modes < 4:
            raise InvalidInputError("solver_modes must be even and >= 4")
        if not self.dt > 0:
            raise InvalidInputError("dt must be positive")
        if self.n_time_samples < 2:
            raise InvalidInputError("n_time_samples must be >= 2")
        object.__setattr__(self, "a_range", tuple(self.a_range))
        object.__setattr__(self, "b_range", tuple(self.b_range))

    def to_dict(self):
        d = asdict(self)
        d["a_range"] = list(self.a_range)
        d["b_range"] = list(self.b_range)
        return d

    @classmethod
    def from_dict(cls, doc):
        return _from_dict(cls, doc)

    @property
    def sample_times(self):
        return np.linspace(0.0, self.t_final, self.n_time_samples)


def uniform_grid(n, domain_length=2 * math.pi):
    return domain_length * np.arange(n) / n


def ks_initial(a, b, z, literal=False):
    """``a sin(z) + b exp(cos(z))``, or ``a sin(2 pi z) + b exp(cos(2 pi z))`` if ``literal``."""
    z = np.asarray(z, dtype=float)
    arg = 2 * np.pi * z if literal else z
    return a * np.sin(arg) + b * np.exp(np.cos(arg))


def trig_interp_matrix(n_in, n_out):
    """Real ``(n_out, n_in)`` matrix sampling the trigonometric interpolant.

    Samples on ``n_in`` uniform points define the interpolant
    ``sum_k c_k exp(i k z)`` over ``|k| < n_in/2`` plus a cosine at the
    Nyquist wavenumber; the matrix evaluates it on ``n_out`` uniform points
    of the same period.
    """
    k = np.fft.fftfreq(n_in, d=1.0 / n_in)
    z_out = 2 * np.pi * np.arange(n_out) / n_out
    z_in = 2 * np.pi * np.arange(n_in) / n_in
    # c_k = (1/n) sum_m u_m exp(-i k z_m); value = sum_k c_k basis_k(z)
    dft = np.exp(-1j * np.outer(k, z_in)) / n_in
    basis = np.exp(1j * np.outer(z_out, k))
    if n_in % 2 == 0:
        nyq = np.argmin(k)  # k = -n_in/2
        basis[:, nyq] = np.cos(0.5 * n_in * z_out)
    return (basis @ dft).real


def fourier_resample(u, n_out):
    """Resample periodic samples along the last axis to ``n_out`` points."""
    u = np.asarray(u, dtype=float)
    n_in = u.shape[-1]
    if n_in == n_out:
        return u.copy()
    return u @ trig_interp_matrix(n_in, n_out).T


class EtdRk4:
    """ETDRK4 stepper for KS in real-FFT coefficients on ``n`` grid points.

    The phi-function coefficients are evaluated by averaging over
    ``contour_points`` points on a unit circle around each ``h L_k``.
    Nonlinear products use 2/3-rule dealiasing.
    """

    def __init__(self, n, h, alpha=16.0, domain_length=2 * math.pi, contour_points=32):
        self.n = n
        self.h = h
        k = 2 * np.pi * np.fft.rfftfreq(n, d=1.0 / n) / domain_length
        self.ik = 1j * k
        self.ik[-1] = 0.0
        lin = -4.0 * k ** 4 + alpha * k ** 2
        self.alpha = alpha
        kappa = np.arange(k.size)
        self.mask = (kappa < n / 3.0).astype(float)

        roots = np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
        lr = h * lin[:, None] + roots[None, :]
        elr = np.exp(lr)
        self.E = np.exp(h * lin)
        self.E2 = np.exp(0.5 * h * lin)
        self.Q = h * np.mean((np.exp(lr / 2) - 1) / lr, axis=1).real
        self.f1 = h * np.mean((-4 - lr + elr * (4 - 3 * lr + lr ** 2)) / lr ** 3, axis=1).real
        self.f2 = h * np.mean((2 + lr + elr * (lr - 2)) / lr ** 3, axis=1).real
        self.f3 = h * np.mean((-4 - 3 * lr - lr ** 2 + elr * (4 - lr)) / lr ** 3, axis=1).real

    def nonlinear(self, v):
        u = np.fft.irfft(self.mask * v, n=self.n, axis=-1)
        return self.mask * (-0.5 * self.alpha) * self.ik * np.fft.rfft(u * u, axis=-1)

    def step(self, v):
        Nv = self.nonlinear(v)
        a = self.E2 * v + self.Q * Nv
        Na = self.nonlinear(a)
        b = self.E2 * v + self.Q * Na
        Nb = self.nonlinear(b)
        c = self.E2 * a + self.Q * (2 * Nb - Nv)
        Nc = self.nonlinear(c)
        return self.E * v + Nv * self.f1 + 2 * (Na + Nb) * self.f2 + Nc * self.f3


def ks_integrate_fine(u0_fine, params=KsParams(), dt=None):
    """Integrate on the solver grid; returns ``(..., n_time_samples, solver_modes)``.

    ``u0_fine`` has the solver grid along its last axis and may carry
    leading batch axes. Each inter-sample interval is split into
    ``ceil(interval / dt)`` equal steps so samples land exactly on the
    requested times.
    """
    u0 = np.asarray(u0_fine, dtype=float)
    n = params.solver_modes
    if u0.shape[-1] != n:
        raise InvalidInputError(f"initial field must have {n} points, got {u0.shape[-1]}")
    dt = params.dt if dt is None else dt
    interval = params.t_final / (params.n_time_samples - 1)
    substeps = max(1, math.ceil(interval / dt - 1e-9))
    stepper = EtdRk4(n, interval / substeps, params.alpha, params.domain_length,
                     params.contour_points)
    out = np.empty(u0.shape[:-1] + (params.n_time_samples, n))
    out[..., 0, :] = u0
    v = np.fft.rfft(u0, axis=-1)
    for i in range(1, params.n_time_samples):
        for _ in range(substeps):
            v = stepper.step(v)
        u = np.fft.irfft(v, n=n, axis=-1)
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > params.blowup:
            raise IntegrationError(f"Kuramoto-Sivashinsky solution blew up before t={i * interval:g}")
        out[..., i, :] = u
    return out


def ks_integrate(u0, params=KsParams(), dt=None):
    """Integrate from samples on the observation grid.

    Returns the trajectory on ``params.grid_points`` points, shape
    ``(..., n_time_samples, grid_points)``.
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.shape[-1] != params.grid_points:
        raise InvalidInputError(
            f"initial field must have {params.grid_points} points, got {u0.shape[-1]}")
    fine = ks_integrate_fine(fourier_resample(u0, params.solver_modes), params, dt)
    return fourier_resample(fine, params.grid_points)


def ks_solve(a, b, params=KsParams(), dt=None):
    """Trajectories for initial-condition parameters ``(a, b)`` observed on the grid.

    The initial field is evaluated directly on the solver grid. ``a`` and
    ``b`` may be arrays of equal shape (batched solve).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    z = uniform_grid(params.solver_modes, params.domain_length)
    u0 = ks_initial(a[..., None], b[..., None], z, params.ic_literal)
    fine = ks_integrate_fine(u0, params, dt)
    return fourier_resample(fine, params.grid_points)


def sample_ks_parameters(rng, n, params=KsParams()):
    ab = np.empty((n, 2))
    ab[:, 0] = rng.uniform(*params.a_range, size=n)
    ab[:, 1] = rng.uniform(*params.b_range, size=n)
    return ab


def make_ks_dataset(n_param_samples, params=KsParams(), seed=0):
    """Consecutive-sample pairs from ``n_param_samples`` random ``(a, b)`` draws."""
    if n_param_samples < 1:
        raise InvalidInputError("n_param_samples must be >= 1")
    ab = sample_ks_parameters(make_rng(seed, "ks-train"), n_param_samples, params)
    traj = ks_solve(ab[:, 0], ab[:, 1], params)  # (S, T, grid)
    g = params.grid_points
    X = traj[:, :-1, :].reshape(-1, g)
    Y = traj[:, 1:, :].reshape(-1, g)
    meta = {
        "system": "ks",
        "tau": params.t_final / (params.n_time_samples - 1),
        "seed": seed,
        "n_param_samples": n_param_samples,
        "params": params.to_dict(),
    }
    return SnapshotDataset(X, Y, meta)


# --------------------------------------------------------------------------
# Systems as trial generators for evaluation
# --------------------------------------------------------------------------

@dataclass
class DuffingSystem:
    params: DuffingParams = field(default_factory=DuffingParams)
    box: tuple = (-2.0, 2.0)
    state_dim: int = 2
    name: str = "duffing"

    def sample_trials(self, rng, n):
        return [{"x0": x.tolist()} for x in sample_box(rng, n, 2, self.box)]

    def truth(self, trial, n_steps):
        return duffing_trajectory(np.asarray(trial["x0"]), n_steps, self.params)

    def sample_states(self, rng, n):
        return sample_box(rng, n, 2, self.box)

    def step(self, states):
        return duffing_flow(states, self.params)

    def sample_pairs(self, rng, n):
        """``n`` states drawn uniformly from the box and their images."""
        x = self.sample_states(rng, n)
        return x, self.step(x)


@dataclass
class KsSystem:
    params: KsParams = field(default_factory=KsParams)
    name: str = "ks"

    @property
    def state_dim(self):
        return self.params.grid_points

    def sample_trials(self, rng, n):
        ab = sample_ks_parameters(rng, n, self.params)
        return [{"a": float(a), "b": float(b)} for a, b in ab]

    def truth(self, trial, n_steps):
        if n_steps > self.params.n_time_samples - 1:
            raise InvalidInputError(
                f"at most {self.params.n_time_samples - 1} steps are available")
        return ks_solve(trial["a"], trial["b"], self.params)[: n_steps + 1]

    def sample_pairs(self, rng, n):
        """``n`` consecutive-sample pairs from fresh trajectories."""
        per = self.params.n_time_samples - 1
        n_traj = -(-n // per)
        ab = sample_ks_parameters(rng, n_traj, self.params)
        traj = ks_solve(ab[:, 0], ab[:, 1], self.params)
        g = self.params.grid_points
        X = traj[:, :-1, :].reshape(-1, g)[:n]
        Y = traj[:, 1:, :].reshape(-1, g)[:n]
        return X, Y
