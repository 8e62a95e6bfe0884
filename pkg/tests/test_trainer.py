import numpy as np
import pytest

from koopman_dl.dictionary import NetworkDictionary, NetworkParams, init_network_params
from koopman_dl.errors import InvalidInputError, TrainingDivergedError
from koopman_dl.koopman import SnapshotDataset
from koopman_dl.trainer import (
    TrainingConfig,
    fit_edmd_dl,
    grad_theta,
    gradient_check,
    k_step,
    loss,
)


def random_batch(rng, n=40, d=2):
    X = rng.uniform(-2, 2, (n, d))
    Y = np.column_stack([X[:, 1], -0.5 * X[:, 1] + X[:, 0] - X[:, 0] ** 3]) if d == 2 else np.tanh(X)
    return SnapshotDataset(X, X + 0.25 * Y)


def params_for(rng, d=2, width=8, m_t=3, scale=None):
    return init_network_params(d, width, m_t, rng, scale)


def features(params, ds, activation="tanh"):
    dic = NetworkDictionary(params, activation)
    return dic(ds.X), dic(ds.Y)


# loss ----------------------------------------------------------------------

def test_loss_zero_k_is_feature_energy():
    rng = np.random.default_rng(0)
    p = params_for(rng)
    ds = random_batch(rng)
    _, psi_y = features(p, ds)
    M = psi_y.shape[1]
    J = loss(np.zeros((M, M)), p, ds, lam=3.0, reduction="sum")
    assert J == pytest.approx(np.sum(psi_y ** 2), rel=1e-14)


def test_loss_identity_dynamics_zero():
    rng = np.random.default_rng(1)
    p = params_for(rng)
    X = rng.normal(size=(10, 2))
    assert loss(np.eye(6), p, SnapshotDataset(X, X), lam=0.0) == 0.0


def test_loss_zero_data_is_penalty():
    p = params_for(np.random.default_rng(2))
    empty = SnapshotDataset(np.zeros((0, 2)), np.zeros((0, 2)))
    for reduction in ("sum", "mean"):
        assert loss(np.eye(6), p, empty, lam=2.0, reduction=reduction) == 12.0


def test_loss_mean_is_sum_over_n():
    rng = np.random.default_rng(3)
    p = params_for(rng)
    ds = random_batch(rng, n=25)
    K = rng.normal(size=(6, 6))
    assert loss(K, p, ds, 0.0, reduction="mean") == pytest.approx(
        loss(K, p, ds, 0.0, reduction="sum") / 25, rel=1e-13)


# gradient ------------------------------------------------------------------

@pytest.mark.parametrize("reduction", ["mean", "sum"])
def test_gradient_matches_finite_differences(reduction):
    rng = np.random.default_rng(4)
    for width, m_t in [(4, 3), (4, 22), (64, 3), (64, 22)]:
        p = params_for(rng, width=width, m_t=m_t)
        err = gradient_check(p, random_batch(rng), n_probes=20, lam=1e-4,
                             seed=int(rng.integers(1 << 30)), reduction=reduction)
        assert err <= 1e-5


def test_gradient_linear_network_exact():
    # with identity activations J is quadratic in each single coordinate, so
    # central differences are exact at any step; a wide step keeps rounding out
    rng = np.random.default_rng(5)
    for _ in range(10):
        p = params_for(rng, width=5, m_t=4)
        K = rng.normal(size=(7, 7))
        err = gradient_check(p, random_batch(rng, n=15), K=K, activation="identity",
                             seed=int(rng.integers(1 << 30)), fd_step=1e-3)
        assert err <= 1e-9


def test_gradient_zero_residual():
    rng = np.random.default_rng(6)
    p = params_for(rng)
    X = rng.normal(size=(20, 2))
    g = grad_theta(np.eye(6), p, SnapshotDataset(X, X))
    assert np.max(np.abs(g.flatten())) <= 1e-12


def test_gradient_doubles_with_duplicated_batch():
    rng = np.random.default_rng(7)
    p = params_for(rng)
    ds = random_batch(rng, n=12)
    doubled = SnapshotDataset(np.vstack([ds.X, ds.X]), np.vstack([ds.Y, ds.Y]))
    K = rng.normal(size=(6, 6))
    g1 = grad_theta(K, p, ds, reduction="sum").flatten()
    g2 = grad_theta(K, p, doubled, reduction="sum").flatten()
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-12, atol=1e-14)


def test_gradient_rejects_bad_k_shape():
    p = params_for(np.random.default_rng(8))
    with pytest.raises(InvalidInputError):
        grad_theta(np.eye(5), p, random_batch(np.random.default_rng(8)))


def test_gradient_check_rejects_zero_step():
    rng = np.random.default_rng(9)
    with pytest.raises(InvalidInputError):
        gradient_check(params_for(rng), random_batch(rng), fd_step=0.0)


# K-step --------------------------------------------------------------------

@pytest.mark.parametrize("reduction", ["mean", "sum"])
def test_k_step_minimizes_loss(reduction):
    rng = np.random.default_rng(10)
    p = params_for(rng)
    ds = random_batch(rng, n=60)
    lam = 1e-3
    K = k_step(*features(p, ds), lam, reduction)
    J0 = loss(K, p, ds, lam, reduction=reduction)
    for _ in range(30):
        dK = rng.normal(size=K.shape)
        dK *= 1e-4 / np.linalg.norm(dK)
        assert loss(K + dK, p, ds, lam, reduction=reduction) >= J0


# training loop ---------------------------------------------------------------

def small_duffing_like(seed=11, n=150):
    return random_batch(np.random.default_rng(seed), n=n)


def test_config_validation():
    for bad in [dict(learning_rate=0), dict(lam=0), dict(tolerance=-1), dict(optimizer="sgd"),
                dict(batch_size=0), dict(reduction="max"), dict(max_iterations=0)]:
        with pytest.raises(InvalidInputError):
            TrainingConfig(**bad)
    with pytest.raises(InvalidInputError):
        TrainingConfig.from_dict({"nonsense": 1})
    cfg = TrainingConfig(optimizer="adam", batch_size=32)
    assert TrainingConfig.from_dict(cfg.to_dict()) == cfg


def test_identity_dynamics_converges_immediately():
    X = np.random.default_rng(12).uniform(-1, 1, (50, 2))
    cfg = TrainingConfig(hidden_width=8, trainable_outputs=3, max_iterations=50, lam=1e-10, tolerance=1e-6)
    model, hist = fit_edmd_dl(SnapshotDataset(X, X), cfg)
    assert hist.final_loss <= 1e-6
    assert len(hist) < 50


def test_history_invariants_and_fixed_columns():
    ds = small_duffing_like()
    cfg = TrainingConfig(hidden_width=16, trainable_outputs=5, max_iterations=40,
                         optimizer="adam", learning_rate=1e-2)
    model, hist = fit_edmd_dl(ds, cfg)
    assert len(hist) == 40
    assert np.all(hist.column("J_k") <= hist.column("J_before_k") + 1e-12)
    assert np.all(hist.column("J_k") >= 0)
    assert hist.column("J_k")[-1] < hist.column("J_k")[0]
    psi = model.dictionary(ds.X)
    assert np.array_equal(psi[:, 0], np.ones(ds.n_samples))
    assert np.array_equal(psi[:, 1:3], ds.X)
    assert model.info["final_loss"] >= cfg.lam * np.sum(model.K ** 2)


def test_plain_gradient_descent_decreases_loss():
    cfg = TrainingConfig(hidden_width=8, trainable_outputs=3, max_iterations=30, learning_rate=1e-2)
    _, hist = fit_edmd_dl(small_duffing_like(), cfg)
    assert hist.column("J_k")[-1] < hist.column("J_k")[0]


def test_training_is_deterministic():
    ds = small_duffing_like()
    cfg = TrainingConfig(hidden_width=8, trainable_outputs=3, max_iterations=15,
                         optimizer="adam", learning_rate=1e-2)
    m1, h1 = fit_edmd_dl(ds, cfg)
    m2, h2 = fit_edmd_dl(ds, cfg)
    for col in ("J_before_k", "J_k", "J_theta", "grad_norm"):
        assert np.array_equal(h1.column(col), h2.column(col))
    assert np.array_equal(m1.K, m2.K)


def test_minibatch_training_is_deterministic():
    ds = small_duffing_like()
    cfg = TrainingConfig(hidden_width=8, trainable_outputs=3, max_iterations=10,
                         optimizer="momentum", batch_size=32, learning_rate=1e-3)
    _, h1 = fit_edmd_dl(ds, cfg)
    _, h2 = fit_edmd_dl(ds, cfg)
    assert np.array_equal(h1.column("J_k"), h2.column("J_k"))


def test_wall_time_can_be_suppressed():
    cfg = TrainingConfig(hidden_width=4, trainable_outputs=2, max_iterations=3, record_wall_time=False)
    _, hist = fit_edmd_dl(small_duffing_like(n=30), cfg)
    assert np.all(hist.column("seconds") == 0.0)


def test_divergence_raises_with_history():
    cfg = TrainingConfig(hidden_width=16, trainable_outputs=5, max_iterations=200,
                         learning_rate=1e3, divergence_factor=10.0)
    with pytest.raises(TrainingDivergedError) as info:
        fit_edmd_dl(small_duffing_like(), cfg)
    assert all(np.isfinite(r.J_k) for r in info.value.history)


def test_callback_and_checkpoint_are_invoked():
    seen, saved = [], []
    cfg = TrainingConfig(hidden_width=4, trainable_outputs=2, max_iterations=6)
    fit_edmd_dl(small_duffing_like(n=30), cfg,
                callback=lambda it, K, p: seen.append(it),
                checkpoint_every=2, checkpoint=lambda m, h: saved.append(len(h)))
    assert seen == [1, 2, 3, 4, 5, 6]
    assert saved == [2, 4, 6]


def test_explicit_params_must_match_dimension():
    p = init_network_params(3, 4, 2, np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        fit_edmd_dl(small_duffing_like(n=20), TrainingConfig(max_iterations=1), params=p)


def test_empty_dataset_rejected():
    with pytest.raises(InvalidInputError):
        fit_edmd_dl(SnapshotDataset(np.zeros((0, 2)), np.zeros((0, 2))), TrainingConfig())


def test_params_round_trip_through_flatten():
    p = params_for(np.random.default_rng(13), width=6, m_t=4)
    q = NetworkParams.unflatten(p.flatten(), 2, 6, 4)
    for a, b in zip(p.arrays(), q.arrays()):
        assert np.array_equal(a, b)
