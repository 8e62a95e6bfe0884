"""Reconstruction and eigenfunction errors, plus multi-trial averaging."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .koopman import eigenfunction_values, reconstruct
from .rng import make_rng


def reconstruction_error(truth, predicted):
    """Root mean square over time of the Euclidean state discrepancy.

    ``sqrt(mean_n |x(n) - x_pred(n)|^2)`` for trajectories of shape ``(N, d)``.
    """
    truth = np.asarray(truth, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if truth.shape != predicted.shape:
        raise InvalidInputError(f"shape mismatch: {truth.shape} vs {predicted.shape}")
    if truth.ndim == 1:
        truth = truth[:, None]
        predicted = predicted[:, None]
    if truth.shape[0] < 1:
        raise InvalidInputError("trajectories must contain at least one step")
    diff = truth - predicted
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=-1))))


def eigenfunction_residuals(model, samples, f_images):
    """``phi_j(f(x_i)) - mu_j phi_j(x_i)`` for all samples and eigenpairs, shape (I, M)."""
    samples = np.asarray(samples, dtype=float)
    f_images = np.asarray(f_images, dtype=float)
    if samples.shape != f_images.shape:
        raise InvalidInputError("samples and f_images must be aligned")
    phi = eigenfunction_values(model, samples)
    phi_f = eigenfunction_values(model, f_images)
    return phi_f - model.eigenvalues[None, :] * phi


def eigenfunction_errors(model, samples, f_images):
    """Monte-Carlo ``E_j`` for every eigenpair (unit-norm right eigenvectors)."""
    res = eigenfunction_residuals(model, samples, f_images)
    return np.sqrt(np.mean(np.abs(res) ** 2, axis=0))


def eigenfunction_error(model, j, samples, f_images):
    """``E_j = sqrt(mean_i |phi_j(f(x_i)) - mu_j phi_j(x_i)|^2)``."""
    if not 0 <= j < model.output_dim:
        raise InvalidInputError(f"eigen-index {j} out of range 0..{model.output_dim - 1}")
    return float(eigenfunction_errors(model, samples, f_images)[j])


def eigenfunction_standard_errors(model, samples, f_images):
    """Delta-method standard error of each Monte-Carlo ``E_j`` estimate."""
    sq = np.abs(eigenfunction_residuals(model, samples, f_images)) ** 2
    n = sq.shape[0]
    mean = sq.mean(axis=0)
    se_mean = sq.std(axis=0, ddof=1) / np.sqrt(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mean > 0, se_mean / (2 * np.sqrt(mean)), 0.0)


@dataclass
class ErrorReport:
    errors: list
    trials: list = field(default_factory=list)

    @property
    def mean(self):
        return float(np.mean(self.errors))

    @property
    def std(self):
        return float(np.std(self.errors))

    @property
    def count(self):
        return len(self.errors)

    def summary(self):
        return {"mean": self.mean, "std": self.std, "count": self.count}


def averaged_reconstruction_error(model, system, n_trials, n_steps, seed, include_initial=False):
    """Mean reconstruction error over ``n_trials`` unseen initial conditions.

    Initial conditions come from the ``"eval"`` stream of ``seed``, which is
    disjoint from the streams used to build training sets. By default the
    error runs over steps ``1..n_steps``; step 0 is the given initial state.
    """
    if n_trials < 1:
        raise InvalidInputError("n_trials must be >= 1")
    rng = make_rng(seed, "eval")
    trials = system.sample_trials(rng, n_trials)
    errors = []
    start = 0 if include_initial else 1
    for trial in trials:
        truth = system.truth(trial, n_steps)
        pred = reconstruct(model, truth[0], n_steps)
        errors.append(reconstruction_error(truth[start:], pred[start:]))
    return ErrorReport(errors, [dict(t, seed=seed, index=i) for i, t in enumerate(trials)])
