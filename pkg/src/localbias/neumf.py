"""Neural matrix factorization trained with minibatch Adam, in plain numpy.

Two branches share nothing but the fusion layer: a GMF branch multiplies
user and item embeddings elementwise, and an MLP branch runs the
concatenated (separate) embeddings through a ReLU tower with inverted
dropout. The fused vector goes through a single affine map and a sigmoid;
training minimizes binary cross-entropy over observed positives plus
uniformly sampled negatives.

Backpropagation is written out by hand; a finite-difference check in the
test suite pins it down.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .corpus import InteractionMatrix
from .errors import DataError, TrainingDivergedError
from .recommenders import top_k_excluding

# Probabilities are clamped into [CLAMP, 1 - CLAMP] inside the loss.
CLAMP = 1e-12

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    embedding_dim: int = 64
    mlp_layers: tuple[int, ...] = (128, 64, 32)
    dropout: float = 0.1
    negatives_per_positive: int = 4
    learning_rate: float = 0.001
    batch_size: int = 512
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 300
    patience: int = 10

    def __post_init__(self) -> None:
        if self.embedding_dim < 1:
            raise ValueError(f"embedding_dim must be positive, got {self.embedding_dim}")
        if not self.mlp_layers or any(w < 1 for w in self.mlp_layers):
            raise ValueError(f"mlp_layers must be positive widths, got {self.mlp_layers}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.negatives_per_positive < 1:
            raise ValueError(
                f"negatives_per_positive must be positive, got {self.negatives_per_positive}"
            )
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be positive, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be positive, got {self.patience}")


@dataclass
class TrainResult:
    best_epoch: int
    best_score: float | None
    epoch_losses: list[float] = field(default_factory=list)
    eval_history: list[float] = field(default_factory=list)


def init_params(n_users: int, n_items: int, config: TrainConfig, rng: np.random.Generator) -> Params:
    """Draw initial parameters in a fixed key order."""
    d = config.embedding_dim
    params: Params = {
        "gmf_user": rng.normal(0.0, 0.01, (n_users, d)),
        "gmf_item": rng.normal(0.0, 0.01, (n_items, d)),
        "mlp_user": rng.normal(0.0, 0.01, (n_users, d)),
        "mlp_item": rng.normal(0.0, 0.01, (n_items, d)),
    }
    fan_in = 2 * d
    for l, width in enumerate(config.mlp_layers):
        # He initialization for the ReLU tower.
        params[f"w{l}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (width, fan_in))
        params[f"b{l}"] = np.zeros(width)
        fan_in = width
    fuse_in = d + config.mlp_layers[-1]
    params["fuse_w"] = rng.normal(0.0, np.sqrt(1.0 / fuse_in), fuse_in)
    params["fuse_b"] = np.zeros(())
    return params


def _forward(
    params: Params,
    config: TrainConfig,
    users: np.ndarray,
    items: np.ndarray,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Predicted probabilities for (user, item) pairs, plus the backprop cache.

    Passing ``rng`` enables inverted dropout on the hidden activations.
    """
    d = config.embedding_dim
    pu_g = params["gmf_user"][users]
    qi_g = params["gmf_item"][items]
    g = pu_g * qi_g
    h = np.concatenate([params["mlp_user"][users], params["mlp_item"][items]], axis=1)
    inputs = []
    pre = []
    masks = []
    for l in range(len(config.mlp_layers)):
        inputs.append(h)
        a = h @ params[f"w{l}"].T + params[f"b{l}"]
        pre.append(a)
        h = np.maximum(a, 0.0)
        if rng is not None and config.dropout > 0.0:
            mask = (rng.random(h.shape) >= config.dropout) / (1.0 - config.dropout)
            h = h * mask
        else:
            mask = None
        masks.append(mask)
    z = np.concatenate([g, h], axis=1)
    s = z @ params["fuse_w"] + params["fuse_b"]
    p = expit(s)
    cache = {
        "users": users,
        "items": items,
        "pu_g": pu_g,
        "qi_g": qi_g,
        "inputs": inputs,
        "pre": pre,
        "masks": masks,
        "z": z,
        "d": d,
    }
    return p, cache


def bce_loss(p: np.ndarray, y: np.ndarray) -> float:
    pc = np.clip(p, CLAMP, 1.0 - CLAMP)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))


def _backward(
    params: Params, config: TrainConfig, p: np.ndarray, y: np.ndarray, cache: dict
) -> Params:
    """Gradients of the mean BCE over the batch with respect to every parameter.

    Uses dL/ds = (p - y) / B, the unclamped sigmoid-BCE gradient; the clamp
    only guards the loss value at saturated probabilities.
    """
    b = p.shape[0]
    d = cache["d"]
    users, items = cache["users"], cache["items"]
    grads: Params = {k: np.zeros_like(v) for k, v in params.items()}
    ds = (p - y) / b
    grads["fuse_w"] = cache["z"].T @ ds
    grads["fuse_b"] = np.asarray(ds.sum())
    dz = np.outer(ds, params["fuse_w"])
    dg = dz[:, :d]
    dh = dz[:, d:]
    np.add.at(grads["gmf_user"], users, dg * cache["qi_g"])
    np.add.at(grads["gmf_item"], items, dg * cache["pu_g"])
    for l in reversed(range(len(config.mlp_layers))):
        mask = cache["masks"][l]
        if mask is not None:
            dh = dh * mask
        da = dh * (cache["pre"][l] > 0.0)
        grads[f"w{l}"] = da.T @ cache["inputs"][l]
        grads[f"b{l}"] = da.sum(axis=0)
        dh = da @ params[f"w{l}"]
    np.add.at(grads["mlp_user"], users, dh[:, :d])
    np.add.at(grads["mlp_item"], items, dh[:, d:])
    return grads


class _Adam:
    def __init__(self, params: Params, config: TrainConfig):
        self.config = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * (g * g)
            params[k] -= c.learning_rate * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.epsilon)


class NeuMFModel:
    """Trained parameters plus the user index of the training population.

    Users outside that population are scored by folding in the mean of the
    training users' embeddings.
    """

    def __init__(
        self,
        params: Params,
        config: TrainConfig,
        user_ids: tuple[str, ...],
        track_ids: tuple[str, ...],
        seed: int,
        result: TrainResult | None = None,
    ):
        self.params = params
        self.config = config
        self.user_ids = user_ids
        self.user_index = {u: i for i, u in enumerate(user_ids)}
        self.track_ids = track_ids
        self.track_index = {t: i for i, t in enumerate(track_ids)}
        self.n_tracks = len(track_ids)
        self.seed = seed
        self.result = result

    def row_of(self, user_id: str) -> int | None:
        return self.user_index.get(user_id)

    def _user_vectors(self, row: int | None) -> tuple[np.ndarray, np.ndarray]:
        if row is None:
            return self.params["gmf_user"].mean(axis=0), self.params["mlp_user"].mean(axis=0)
        return self.params["gmf_user"][row], self.params["mlp_user"][row]

    def score_tracks(self, profile: np.ndarray, row: int | None = None) -> np.ndarray:
        """Predicted probability for every track. The profile is not masked
        here; exclusion happens at ranking time."""
        pu_g, pu_m = self._user_vectors(row)
        g = self.params["gmf_item"] * pu_g
        h = np.concatenate(
            [np.broadcast_to(pu_m, self.params["mlp_item"].shape), self.params["mlp_item"]],
            axis=1,
        )
        for l in range(len(self.config.mlp_layers)):
            h = np.maximum(h @ self.params[f"w{l}"].T + self.params[f"b{l}"], 0.0)
        z = np.concatenate([g, h], axis=1)
        return expit(z @ self.params["fuse_w"] + self.params["fuse_b"])

    def recommend_indices(
        self, profile: np.ndarray, k: int, row: int | None = None
    ) -> np.ndarray:
        """Top-k unseen track indices. Unlike ItemKNN, every candidate carries
        a score, so a short catalog is an error instead of a short list."""
        profile = np.asarray(profile, dtype=np.int64)
        unseen = self.n_tracks - np.unique(profile).size
        if unseen < k:
            raise DataError(f"catalog exhausted: requested {k}, only {unseen} unseen tracks")
        scores = self.score_tracks(profile, row=row)
        return top_k_excluding(scores, profile, k, drop_nonpositive=False)

    def recommend(self, user: int | str | None, k: int, positives: Sequence[str]) -> list[str]:
        """Top-k unseen track ids given the user's training positives.

        ``user`` is a training row index, a user id, or None for a cold user
        scored with the mean training embedding.
        """
        row = self.row_of(user) if isinstance(user, str) else user
        try:
            profile = np.asarray([self.track_index[t] for t in positives], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unknown track: {exc.args[0]!r}") from None
        picked = self.recommend_indices(profile, k, row=row)
        return [self.track_ids[t] for t in picked]


def train(
    interactions: InteractionMatrix,
    config: TrainConfig,
    seed: int,
    validation_scorer: Callable[[NeuMFModel], float] | None = None,
) -> NeuMFModel:
    """Fit NeuMF on binarized interactions.

    Each epoch resamples ``negatives_per_positive`` uniform negatives per
    positive, shuffles, and runs minibatch Adam. When a validation scorer is
    given, training keeps the parameters of the best-scoring epoch and stops
    after ``patience`` epochs without improvement.
    """
    m, n = interactions.matrix.shape
    if m < 1 or n < 2:
        raise DataError(f"need at least 1 user and 2 tracks to train, got {m}x{n}")
    rng = np.random.default_rng(seed)
    params = init_params(m, n, config, rng)
    adam = _Adam(params, config)
    coo = interactions.matrix.tocoo()
    pos_users = coo.row.astype(np.int64)
    pos_items = coo.col.astype(np.int64)
    n_pos = pos_users.size
    npp = config.negatives_per_positive
    result = TrainResult(best_epoch=0, best_score=None)
    best_params: Params | None = None
    best_score = -np.inf
    stale = 0
    model = NeuMFModel(
        params, config, interactions.user_ids, interactions.track_ids, seed, result=result
    )
    for epoch in range(1, config.max_epochs + 1):
        negatives = rng.integers(0, n, size=(n_pos, npp))
        users_ep = np.concatenate([pos_users, np.repeat(pos_users, npp)])
        items_ep = np.concatenate([pos_items, negatives.ravel()])
        labels_ep = np.concatenate([np.ones(n_pos), np.zeros(n_pos * npp)])
        order = rng.permutation(users_ep.size)
        loss_sum = 0.0
        for start in range(0, users_ep.size, config.batch_size):
            batch = order[start : start + config.batch_size]
            p, cache = _forward(params, config, users_ep[batch], items_ep[batch], rng=rng)
            y = labels_ep[batch]
            loss = bce_loss(p, y)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            loss_sum += loss * batch.size
            grads = _backward(params, config, p, y, cache)
            adam.step(params, grads)
        result.epoch_losses.append(loss_sum / users_ep.size)
        if validation_scorer is None:
            result.best_epoch = epoch
            continue
        score = validation_scorer(model)
        result.eval_history.append(score)
        if score > best_score:
            best_score = score
            best_params = {k: v.copy() for k, v in params.items()}
            result.best_epoch = epoch
            result.best_score = score
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if best_params is not None:
        model.params = best_params
    return model


def save_model(model: NeuMFModel, path) -> None:
    """Persist parameters and metadata to an .npz file."""
    meta = {
        "format": "neumf-npz-v1",
        "config": asdict(model.config),
        "seed": model.seed,
        "user_ids": list(model.user_ids),
        "track_ids": list(model.track_ids),
        "best_epoch": model.result.best_epoch if model.result else None,
        "best_score": model.result.best_score if model.result else None,
    }
    np.savez(path, __meta__=np.asarray(json.dumps(meta)), **model.params)


def load_model(path) -> NeuMFModel:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        if meta.get("format") != "neumf-npz-v1":
            raise DataError(f"not a recognized model file: {path}")
        params = {k: archive[k] for k in archive.files if k != "__meta__"}
    cfg = dict(meta["config"])
    cfg["mlp_layers"] = tuple(cfg["mlp_layers"])
    config = TrainConfig(**cfg)
    result = TrainResult(best_epoch=meta["best_epoch"] or 0, best_score=meta["best_score"])
    return NeuMFModel(
        params,
        config,
        tuple(meta["user_ids"]),
        tuple(meta["track_ids"]),
        int(meta["seed"]),
        result=result,
    )
