"""Item-based collaborative filtering over binarized interactions.

Similarity between tracks i and j is shrunk cosine over their user vectors:
co(i, j) / (sqrt(co(i, i)) * sqrt(co(j, j)) + shrink). Each track keeps only
its neighborhood_size most similar neighbors (ties broken toward the lower
track index). A user's score for an unseen track is the sum of its retained
similarities to tracks in the user's profile.

Fitting is a pure function of the interaction matrix: no sampling, no seed,
and no dependence on call order, so refitting on the same data reproduces
the model bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .corpus import InteractionMatrix
from .errors import ConfigError, DataError
from .recommenders import top_k_excluding


@dataclass(frozen=True)
class ItemKNNConfig:
    """Bundles the two fit knobs for sweep and CLI plumbing."""

    neighborhood_size: int = 100
    shrink: float = 0.0

    def __post_init__(self) -> None:
        if self.neighborhood_size < 1:
            raise ConfigError(
                f"neighborhood_size must be positive, got {self.neighborhood_size}"
            )
        if self.shrink < 0:
            raise ConfigError(f"shrink must be >= 0, got {self.shrink}")


@dataclass(frozen=True)
class ItemKNNModel:
    """Pruned track-track similarity plus the matrix it was fit on.

    similarity rows are stored with ascending column indices; scoring
    accumulates profile rows in ascending track order so equal inputs give
    bit-identical scores.
    """

    similarity: sparse.csr_matrix
    interactions: InteractionMatrix
    shrink: float
    neighborhood_size: int

    @property
    def n_tracks(self) -> int:
        return self.similarity.shape[0]

    def row_of(self, user_id: str) -> int | None:
        # scoring uses only the profile, never a per-user state row
        return None

    def score_tracks(self, profile: np.ndarray, row: int | None = None) -> np.ndarray:
        scores = np.zeros(self.n_tracks, dtype=np.float64)
        indptr = self.similarity.indptr
        for i in np.sort(np.asarray(profile, dtype=np.intp)):
            lo, hi = indptr[i], indptr[i + 1]
            scores[self.similarity.indices[lo:hi]] += self.similarity.data[lo:hi]
        return scores

    def recommend_indices(
        self, profile: np.ndarray, k: int, row: int | None = None
    ) -> np.ndarray:
        """Top-k unseen track indices; zero-score tracks are never returned,
        so the list may be shorter than k."""
        if k < 1:
            raise ValueError(f"k must be positive, got {k}")
        scores = self.score_tracks(profile, row)
        return top_k_excluding(scores, profile, k, drop_nonpositive=True)

    def recommend(self, user_id: str, k: int) -> list[str]:
        """Top-k unseen track ids for a training user."""
        urow = self.interactions.user_index.get(user_id)
        if urow is None:
            raise DataError(f"unknown user: {user_id!r}")
        picked = self.recommend_indices(self.interactions.positives(urow), k)
        return [self.interactions.track_ids[t] for t in picked]


def fit(
    interactions: InteractionMatrix,
    shrink: float = 0.0,
    neighborhood_size: int = 100,
) -> ItemKNNModel:
    """Fit shrunk-cosine item similarities with per-item top-n pruning.

    Neighbor retention keeps the neighborhood_size highest similarities per
    row, breaking ties toward the lower column index; self-similarity is
    dropped before pruning.
    """
    config = ItemKNNConfig(neighborhood_size=neighborhood_size, shrink=shrink)
    x = interactions.matrix
    gram = (x.T @ x).tocsr()
    gram.sort_indices()
    norms = np.sqrt(gram.diagonal())

    n = gram.shape[0]
    keep_indices: list[np.ndarray] = []
    keep_data: list[np.ndarray] = []
    indptr = np.zeros(n + 1, dtype=np.intp)
    for i in range(n):
        lo, hi = gram.indptr[i], gram.indptr[i + 1]
        cols = gram.indices[lo:hi]
        vals = gram.data[lo:hi]
        off_diag = cols != i
        cols = cols[off_diag]
        vals = vals[off_diag]
        sims = vals / (norms[i] * norms[cols] + config.shrink)
        if sims.size > config.neighborhood_size:
            order = np.lexsort((cols, -sims))[: config.neighborhood_size]
            cols = cols[order]
            sims = sims[order]
            ascending = np.argsort(cols)
            cols = cols[ascending]
            sims = sims[ascending]
        keep_indices.append(cols)
        keep_data.append(sims)
        indptr[i + 1] = indptr[i] + cols.size

    similarity = sparse.csr_matrix(
        (
            np.concatenate(keep_data) if keep_data else np.empty(0),
            np.concatenate(keep_indices) if keep_indices else np.empty(0, dtype=np.intp),
            indptr,
        ),
        shape=(n, n),
    )
    return ItemKNNModel(
        similarity=similarity,
        interactions=interactions,
        shrink=config.shrink,
        neighborhood_size=config.neighborhood_size,
    )
