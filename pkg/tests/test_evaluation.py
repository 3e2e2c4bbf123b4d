"""Hold-out evaluation and MRR@k."""

import numpy as np
import pytest

from localbias import (
    DataError,
    build_interactions,
    hold_out,
    mrr_at_k,
    user_profiles,
    validate,
)

import oracles
from conftest import make_dataset


def test_mrr_at_k_contract():
    ranked = ["t3", "t1", "t2", "t4"]
    assert mrr_at_k(ranked, "t3", 10) == 1.0
    assert mrr_at_k(ranked, "t2", 10) == 1.0 / 3.0
    assert mrr_at_k(ranked, "t2", 2) == 0.0  # beyond the cutoff
    assert mrr_at_k(ranked, "t9", 10) == 0.0  # absent entirely
    assert mrr_at_k([], "t1", 5) == 0.0
    with pytest.raises(ValueError, match="k must be positive"):
        mrr_at_k(ranked, "t1", 0)


TRIO = make_dataset(
    [
        ("u1", "t1", "a1", "FR"),
        ("u1", "t2", "a2", "FR"),
        ("u1", "t3", "a3", "FR"),
        ("u2", "t2", "a2", "FR"),
        ("u2", "t4", "a4", "FR"),
        ("u3", "t1", "a1", "FR"),
    ]
)


def test_hold_out_partitions_profiles():
    cases = hold_out(TRIO, ["u1", "u2", "u3"], seed=0)
    by_user = {c.user_id: c for c in cases}
    assert set(by_user) == {"u1", "u2"}  # u3 has a single positive
    profiles = user_profiles(TRIO)
    for user, case in by_user.items():
        assert case.target not in case.visible
        assert tuple(sorted(case.visible + (case.target,))) == profiles[user]


def test_hold_out_deterministic():
    assert hold_out(TRIO, ["u1", "u2"], seed=5) == hold_out(TRIO, ["u1", "u2"], seed=5)
    picks = {hold_out(TRIO, ["u1"], seed=s)[0].target for s in range(12)}
    assert picks == {"t1", "t2", "t3"}


def test_hold_out_consumes_draws_for_skipped_users():
    # u3 (single positive) sits before u9 in sorted order; its draw still
    # advances the stream, shifting u9's pick relative to a u9-only call.
    ds = make_dataset(
        [("u3", "t1", "a1", "FR")]
        + [("u9", f"t{j}", f"a{j}", "FR") for j in range(2, 9)]
    )
    rng = np.random.default_rng(1)
    rng.integers(1)  # u3's consumed draw
    expected_pick = int(rng.integers(7))
    (case,) = hold_out(ds, ["u3", "u9"], seed=1)
    profile = user_profiles(ds)["u9"]
    assert case.target == profile[expected_pick]


def test_hold_out_unknown_user():
    with pytest.raises(DataError, match="unknown user"):
        hold_out(TRIO, ["u1", "ghost"], seed=0)


class FixedScores:
    """Recommender stub scoring every track with a preset vector."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=np.float64)

    def row_of(self, user_id):
        return None

    def score_tracks(self, profile, row=None):
        return self.scores.copy()

    def recommend_indices(self, profile, k, row=None):
        raise NotImplementedError


def test_validate_matches_manual_ranks():
    inter = build_interactions(TRIO, sorted(TRIO.users))
    scores = np.array([4.0, 3.0, 2.0, 1.0])
    model = FixedScores(scores)
    result = validate(model, TRIO, inter, ["u1", "u2"], seed=0, k=10)
    cases = hold_out(TRIO, ["u1", "u2"], seed=0)
    expected = []
    for case in cases:
        banned = {inter.track_index[t] for t in case.visible}
        expected.append(oracles.rank_of_target(scores.tolist(), inter.track_index[case.target], banned))
    assert list(result.ranks) == expected
    assert result.n_cases == len(cases)
    assert result.mrr == sum(1.0 / r for r in expected if r <= 10) / len(cases)


def test_validate_needs_a_scorable_user():
    ds = make_dataset([("u1", "t1", "a1", "FR"), ("u2", "t2", "a2", "FR")])
    inter = build_interactions(ds, ["u1", "u2"])
    with pytest.raises(DataError, match="two or more positives"):
        validate(FixedScores(np.zeros(2)), ds, inter, ["u1", "u2"], seed=0)


class RandomScores:
    def __init__(self, n, seed):
        self.n = n
        self.rng = np.random.default_rng(seed)

    def row_of(self, user_id):
        return None

    def score_tracks(self, profile, row=None):
        return self.rng.random(self.n)

    def recommend_indices(self, profile, k, row=None):
        raise NotImplementedError


def test_random_scorer_matches_analytic_mrr():
    # each target lands uniformly among the N-1 non-visible tracks
    n_tracks, n_users, k = 40, 400, 10
    rng = np.random.default_rng(123)
    rows = []
    for i in range(n_users):
        a, b = rng.choice(n_tracks, size=2, replace=False)
        rows.append((f"u{i:04d}", f"t{a:02d}", f"a{a:02d}", "AA"))
        rows.append((f"u{i:04d}", f"t{b:02d}", f"a{b:02d}", "AA"))
    ds = make_dataset(rows)
    inter = build_interactions(ds, sorted(ds.users))
    result = validate(RandomScores(n_tracks, seed=9), ds, inter, sorted(ds.users), seed=2, k=k)
    analytic = sum(1.0 / r for r in range(1, k + 1)) / (n_tracks - 1)
    assert result.n_cases == n_users
    assert abs(result.mrr - analytic) < 0.25 * analytic
