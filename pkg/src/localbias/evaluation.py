"""Leave-one-out ranking evaluation: hold-outs and MRR@k.

Validation users are withheld from training. For each one, a single
positive is held out at random; the model scores the full catalog and the
held-out track is ranked among all tracks except the user's remaining
(visible) profile. MRR@k averages 1/rank over users, with ranks beyond k
contributing zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Dataset, InteractionMatrix, user_profiles
from .errors import DataError
from .recommenders import Recommender, rank_of


@dataclass(frozen=True)
class HoldOutCase:
    """One validation user: visible profile plus one held-out positive."""

    user_id: str
    visible: tuple[str, ...]
    target: str


def hold_out(dataset: Dataset, users: Sequence[str], seed: int) -> list[HoldOutCase]:
    """Pick one held-out positive per user, deterministically per seed.

    The draw walks users in sorted id order over their sorted distinct
    tracks, so it does not depend on event order. Users with fewer than two
    positives are skipped: removing their only positive would leave nothing
    to score from.
    """
    profiles = user_profiles(dataset)
    rng = np.random.default_rng(seed)
    cases: list[HoldOutCase] = []
    for user_id in sorted(users):
        profile = profiles.get(user_id)
        if profile is None:
            raise DataError(f"unknown user: {user_id!r}")
        pick = int(rng.integers(len(profile)))
        if len(profile) < 2:
            continue
        target = profile[pick]
        visible = profile[:pick] + profile[pick + 1 :]
        cases.append(HoldOutCase(user_id=user_id, visible=visible, target=target))
    return cases


def mrr_at_k(ranked: Sequence[str], relevant: str, k: int) -> float:
    """Reciprocal rank of ``relevant`` within the first k entries, else 0."""
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    for pos, track_id in enumerate(ranked[:k], start=1):
        if track_id == relevant:
            return 1.0 / pos
    return 0.0


@dataclass(frozen=True)
class ValidationResult:
    mrr: float
    n_cases: int
    ranks: tuple[int, ...]


def validate(
    model: Recommender,
    dataset: Dataset,
    interactions: InteractionMatrix,
    users: Sequence[str],
    seed: int,
    k: int = 10,
) -> ValidationResult:
    """Score held-out positives for ``users`` against the full catalog.

    ``interactions`` supplies the id-to-index maps and must cover the
    validation users (normally the matrix of the whole population, not the
    training subset). A rank within k contributes 1/rank to the mean, the
    same quantity mrr_at_k reads off a materialized ranking.
    """
    cases = hold_out(dataset, users, seed)
    if not cases:
        raise DataError("no validation user has two or more positives")
    ranks = []
    total = 0.0
    for case in cases:
        visible = np.fromiter(
            (interactions.track_index[t] for t in case.visible),
            dtype=np.int64,
            count=len(case.visible),
        )
        target = interactions.track_index[case.target]
        row = model.row_of(case.user_id)
        scores = model.score_tracks(visible, row=row)
        rank = rank_of(scores, target, visible)
        ranks.append(rank)
        if rank <= k:
            total += 1.0 / rank
    return ValidationResult(mrr=total / len(cases), n_cases=len(cases), ranks=tuple(ranks))
