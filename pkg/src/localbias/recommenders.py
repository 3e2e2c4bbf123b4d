"""Ranking helpers shared by the recommenders.

Every ranked list in the package uses one total order: higher score first,
ties broken by ascending track index. Keeping the tie rule in one place is
what makes top-K lists prefix-consistent across K.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np


class Recommender(Protocol):
    """Anything that can score the full catalog for one user."""

    def row_of(self, user_id: str) -> int | None: ...

    def score_tracks(self, profile: np.ndarray, row: int | None = None) -> np.ndarray: ...

    def recommend_indices(
        self, profile: np.ndarray, k: int, row: int | None = None
    ) -> np.ndarray: ...


def top_k_excluding(
    scores: np.ndarray, exclude: np.ndarray, k: int, drop_nonpositive: bool
) -> np.ndarray:
    """Top-k column indices by (score desc, index asc), skipping ``exclude``.

    With ``drop_nonpositive`` the result may be shorter than k.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    mask = np.ones(scores.shape[0], dtype=bool)
    mask[np.asarray(exclude, dtype=np.int64)] = False
    if drop_nonpositive:
        mask &= scores > 0.0
    cand = np.flatnonzero(mask)
    if cand.size == 0:
        return cand
    order = np.lexsort((cand, -scores[cand]))
    return cand[order[:k]]


def rank_of(scores: np.ndarray, target: int, exclude: np.ndarray) -> int:
    """1-based rank of ``target`` among the non-excluded candidates.

    Same tie rule as :func:`top_k_excluding`; ``target`` must not be excluded.
    """
    mask = np.ones(scores.shape[0], dtype=bool)
    mask[np.asarray(exclude, dtype=np.int64)] = False
    if not mask[target]:
        raise ValueError(f"target {target} is excluded")
    s = scores[target]
    better = np.count_nonzero(mask & (scores > s))
    tied_before = np.count_nonzero(mask[:target] & (scores[:target] == s))
    return 1 + better + tied_before
