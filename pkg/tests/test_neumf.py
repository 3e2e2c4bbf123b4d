"""Neural matrix factorization: gradients, forward pass, training behavior."""

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import expit

from localbias import DataError, InteractionMatrix, TrainingDivergedError
from localbias.neumf import (
    NeuMFModel,
    TrainConfig,
    _backward,
    _forward,
    bce_loss,
    init_params,
    load_model,
    save_model,
    train,
)


def matrix_from_dense(dense: np.ndarray) -> InteractionMatrix:
    n_users, n_tracks = dense.shape
    user_ids = tuple(f"u{i:03d}" for i in range(n_users))
    track_ids = tuple(f"t{j:03d}" for j in range(n_tracks))
    return InteractionMatrix(
        user_ids=user_ids,
        track_ids=track_ids,
        user_index={u: i for i, u in enumerate(user_ids)},
        track_index={t: j for j, t in enumerate(track_ids)},
        matrix=sp.csr_matrix(dense.astype(np.float64)),
    )


def run_gradient_check(step: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Fixed shape: 4-dim embeddings, an (8, 4) tower, every (user, item) pair
    of a 5x6 corpus in one batch. Embeddings are scaled up so their gradients
    sit well clear of finite-difference noise.
    """
    config = TrainConfig(embedding_dim=4, mlp_layers=(8, 4), dropout=0.0)
    rng = np.random.default_rng(0)
    params = init_params(5, 6, config, rng)
    for key in ("gmf_user", "gmf_item", "mlp_user", "mlp_item"):
        params[key] = params[key] * 10.0
    users = np.repeat(np.arange(5), 6)
    items = np.tile(np.arange(6), 5)
    y = (rng.random(users.size) < 0.5).astype(np.float64)

    p, cache = _forward(params, config, users, items)
    grads = _backward(params, config, p, y, cache)

    def loss_at(p_dict):
        probs, _ = _forward(p_dict, config, users, items)
        return bce_loss(probs, y)

    worst = 0.0
    for key, grad in grads.items():
        for idx in np.ndindex(params[key].shape):
            saved = params[key][idx]
            params[key][idx] = saved + step
            up = loss_at(params)
            params[key][idx] = saved - step
            down = loss_at(params)
            params[key][idx] = saved
            numeric = (up - down) / (2.0 * step)
            analytic = float(grad[idx])
            err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, err)
    return worst


def test_gradients_match_finite_differences():
    assert run_gradient_check() < 1e-4


def test_forward_hand_computation():
    config = TrainConfig(embedding_dim=1, mlp_layers=(2,), dropout=0.0)
    params = {
        "gmf_user": np.array([[2.0]]),
        "gmf_item": np.array([[3.0]]),
        "mlp_user": np.array([[0.5]]),
        "mlp_item": np.array([[-1.0]]),
        "w0": np.array([[1.0, 1.0], [1.0, -1.0]]),
        "b0": np.zeros(2),
        "fuse_w": np.array([0.1, 0.2, 0.3]),
        "fuse_b": np.asarray(0.05),
    }
    p, _ = _forward(params, config, np.array([0]), np.array([0]))
    # gmf 2*3=6; tower relu([-0.5, 1.5]) -> [0, 1.5]; fuse 0.6+0+0.45+0.05
    assert p[0] == expit(1.1)


def test_score_tracks_agrees_with_forward():
    config = TrainConfig(embedding_dim=3, mlp_layers=(4,), dropout=0.0)
    rng = np.random.default_rng(5)
    params = init_params(4, 7, config, rng)
    model = NeuMFModel(params, config, tuple("abcd"), tuple("qrstuvw"), seed=0)
    items = np.arange(7)
    for row in range(4):
        direct, _ = _forward(params, config, np.full(7, row), items)
        assert np.array_equal(model.score_tracks(np.array([]), row=row), direct)


def test_cold_user_scores_with_mean_embedding():
    config = TrainConfig(embedding_dim=2, mlp_layers=(3,), dropout=0.0)
    rng = np.random.default_rng(6)
    params = init_params(5, 4, config, rng)
    model = NeuMFModel(params, config, tuple("abcde"), tuple("wxyz"), seed=0)
    assert model.row_of("nobody") is None

    folded = dict(params)
    folded["gmf_user"] = np.vstack([params["gmf_user"], params["gmf_user"].mean(axis=0)])
    folded["mlp_user"] = np.vstack([params["mlp_user"], params["mlp_user"].mean(axis=0)])
    expected, _ = _forward(folded, config, np.full(4, 5), np.arange(4))
    assert np.array_equal(model.score_tracks(np.array([]), row=None), expected)


def test_recommend_indices_excludes_and_exhausts():
    config = TrainConfig(embedding_dim=2, mlp_layers=(2,), dropout=0.0)
    params = init_params(2, 5, config, np.random.default_rng(1))
    model = NeuMFModel(params, config, ("u1", "u2"), tuple("abcde"), seed=0)
    profile = np.array([0, 2])
    got = model.recommend_indices(profile, 3, row=0)
    assert sorted(got.tolist() + profile.tolist()) == [0, 1, 2, 3, 4]
    with pytest.raises(DataError, match="catalog exhausted: requested 4, only 3"):
        model.recommend_indices(profile, 4, row=0)


def test_recommend_maps_ids():
    config = TrainConfig(embedding_dim=2, mlp_layers=(2,), dropout=0.0)
    params = init_params(2, 5, config, np.random.default_rng(2))
    model = NeuMFModel(params, config, ("u1", "u2"), ("ta", "tb", "tc", "td", "te"), seed=0)
    by_id = model.recommend("u1", 2, positives=["ta", "tc"])
    by_row = model.recommend_indices(np.array([0, 2]), 2, row=0)
    assert by_id == [model.track_ids[j] for j in by_row]
    cold = model.recommend("stranger", 2, positives=["ta"])
    assert len(cold) == 2
    with pytest.raises(DataError, match="unknown track"):
        model.recommend("u1", 2, positives=["nope"])


def two_block_matrix(rng, users_per_block=15, tracks_per_block=12):
    n = 2 * tracks_per_block
    dense = np.zeros((2 * users_per_block, n))
    for u in range(2 * users_per_block):
        block = 0 if u < users_per_block else 1
        cols = rng.choice(tracks_per_block, size=6, replace=False) + block * tracks_per_block
        dense[u, cols] = 1.0
    return matrix_from_dense(dense)


SMALL = TrainConfig(
    embedding_dim=8,
    mlp_layers=(16, 8),
    dropout=0.1,
    max_epochs=15,
    patience=5,
    batch_size=64,
)


def test_training_reduces_loss():
    inter = two_block_matrix(np.random.default_rng(3))
    model = train(inter, SMALL, seed=1)
    losses = model.result.epoch_losses
    assert len(losses) == 15
    assert min(losses[-3:]) < losses[0]


def test_training_deterministic_per_seed():
    inter = two_block_matrix(np.random.default_rng(4))
    a = train(inter, SMALL, seed=7)
    b = train(inter, SMALL, seed=7)
    for key in a.params:
        assert np.array_equal(a.params[key], b.params[key])
    c = train(inter, SMALL, seed=8)
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_patience_stops_early_and_restores_best():
    inter = two_block_matrix(np.random.default_rng(5))
    calls = []

    def scorer(model):
        calls.append(1)
        return 1.0 if len(calls) == 1 else 0.0

    stopped = train(inter, SMALL, seed=2, validation_scorer=scorer)
    assert stopped.result.best_epoch == 1
    assert len(stopped.result.epoch_losses) == 1 + SMALL.patience
    assert stopped.result.eval_history[0] == 1.0

    one_epoch = train(
        inter,
        TrainConfig(**{**SMALL.__dict__, "max_epochs": 1}),
        seed=2,
    )
    for key in stopped.params:
        assert np.array_equal(stopped.params[key], one_epoch.params[key])


def test_divergence_is_reported():
    inter = two_block_matrix(np.random.default_rng(6))
    angry = TrainConfig(
        embedding_dim=4, mlp_layers=(8, 4), dropout=0.0, learning_rate=1e120, max_epochs=5
    )
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError, match="non-finite loss"):
        train(inter, angry, seed=0)


def test_needs_two_tracks():
    dense = np.ones((3, 1))
    with pytest.raises(DataError, match="at least 1 user and 2 tracks"):
        train(matrix_from_dense(dense), SMALL, seed=0)


def test_save_load_round_trip(tmp_path):
    inter = two_block_matrix(np.random.default_rng(7))
    model = train(inter, SMALL, seed=3)
    path = tmp_path / "model.npz"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.config == model.config
    assert loaded.user_ids == model.user_ids
    assert loaded.track_ids == model.track_ids
    assert loaded.seed == model.seed
    for key in model.params:
        assert np.array_equal(loaded.params[key], model.params[key])
    profile = inter.positives(0)
    assert np.array_equal(
        loaded.recommend_indices(profile, 5, row=0), model.recommend_indices(profile, 5, row=0)
    )


def test_load_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, __meta__=np.asarray('{"format": "something-else"}'), data=np.ones(3))
    with pytest.raises(DataError, match="not a recognized model file"):
        load_model(path)
