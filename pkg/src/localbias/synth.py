"""Synthetic listening-event corpora with known per-user local fractions.

Each country gets its own artist catalog. A user flips a locality coin per
stream: heads picks a track from the home catalog, tails from a uniformly
chosen foreign catalog. Within a catalog, track popularity follows a
power law. Because every stream's origin is decided by the coin, the exact
number of home-catalog streams per user is known, which gives ground-truth
local fractions independent of the labeling pipeline.

Label coverage is applied after all events are drawn, so two corpora that
differ only in coverage contain byte-identical events.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .corpus import Dataset, ListeningEvent, Source, _open_text
from .errors import ConfigError
from .locality import LabelTable

# 2019-01-01T00:00:00Z; synthetic timestamps count up from here
EPOCH = 1_546_300_800

FULL_COVERAGE = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class CountrySpec:
    """One country's population and catalog.

    locality is the probability that a single stream stays in the home
    catalog. A country may have an empty catalog (n_artists=0) only when its
    locality is 0, since it then never draws from itself.
    """

    code: str
    n_users: int
    n_artists: int
    tracks_per_artist: int
    locality: float


@dataclass(frozen=True)
class SynthConfig:
    """Whole-corpus recipe; equal configs generate byte-identical corpora."""

    countries: tuple[CountrySpec, ...]
    streams_per_user: int | tuple[int, int] = 200
    popularity_skew: float = 1.0
    label_coverage: tuple[float, float, float] = FULL_COVERAGE
    seed: int = 0


@dataclass(frozen=True)
class SynthResult:
    """Generated corpus plus exact ground truth.

    local_counts maps user id to (home_catalog_streams, total_streams)
    integer counts taken from the coin flips themselves.
    """

    dataset: Dataset
    labels: LabelTable
    local_counts: Mapping[str, tuple[int, int]]

    @property
    def ground_truth(self) -> dict[str, float]:
        """Exact per-user local fraction (home streams / total streams)."""
        return {u: loc / tot for u, (loc, tot) in self.local_counts.items()}


def _stream_range(config: SynthConfig) -> tuple[int, int]:
    s = config.streams_per_user
    if isinstance(s, int):
        return s, s
    lo, hi = s
    return lo, hi


def _validate(config: SynthConfig) -> None:
    if not config.countries:
        raise ConfigError("need at least one country")
    codes = [c.code for c in config.countries]
    if len(set(codes)) != len(codes):
        raise ConfigError(f"duplicate country codes: {codes}")
    lo, hi = _stream_range(config)
    if lo < 1 or hi < lo:
        raise ConfigError(f"bad streams_per_user range: ({lo}, {hi})")
    if config.popularity_skew < 0:
        raise ConfigError(f"popularity_skew must be >= 0, got {config.popularity_skew}")
    if len(config.label_coverage) != 3:
        raise ConfigError("label_coverage needs one value per label source")
    for cov in config.label_coverage:
        if not 0.0 <= cov <= 1.0:
            raise ConfigError(f"coverage out of [0, 1]: {cov}")
    nonempty = [c for c in config.countries if c.n_artists > 0]
    for c in config.countries:
        if len(c.code) != 2 or not c.code.isalpha() or not c.code.isupper():
            raise ConfigError(f"bad country code: {c.code!r}")
        if c.n_users < 1 or c.n_users > 9999:
            raise ConfigError(f"{c.code}: n_users must be in 1..9999, got {c.n_users}")
        if c.n_artists < 0 or c.n_artists > 999:
            raise ConfigError(f"{c.code}: n_artists must be in 0..999, got {c.n_artists}")
        if c.n_artists > 0 and not 1 <= c.tracks_per_artist <= 99:
            raise ConfigError(
                f"{c.code}: tracks_per_artist must be in 1..99, got {c.tracks_per_artist}"
            )
        if not 0.0 <= c.locality <= 1.0:
            raise ConfigError(f"{c.code}: locality out of [0, 1]: {c.locality}")
        if c.n_artists == 0 and c.locality > 0.0:
            raise ConfigError(f"{c.code}: zero artists but nonzero locality")
        foreign = [o for o in nonempty if o.code != c.code]
        if c.locality < 1.0 and not foreign:
            raise ConfigError(
                f"{c.code}: locality {c.locality} < 1 but no foreign catalog to draw from"
            )


def _popularity_cdf(n: int, skew: float) -> np.ndarray:
    weights = np.power(np.arange(1, n + 1, dtype=np.float64), -skew)
    cdf = np.cumsum(weights)
    return cdf / cdf[-1]


def generate(config: SynthConfig) -> SynthResult:
    """Generate a corpus from the recipe, deterministically in config.seed."""
    _validate(config)
    rng = np.random.default_rng(config.seed)

    # per-country catalogs, in config order
    catalogs: dict[str, list[tuple[str, str]]] = {}
    for spec in config.countries:
        tracks: list[tuple[str, str]] = []
        for j in range(spec.n_artists):
            artist = f"a{spec.code}{j:03d}"
            for t in range(spec.tracks_per_artist):
                tracks.append((f"t{spec.code}{j:03d}x{t:02d}", artist))
        catalogs[spec.code] = tracks

    cdfs = {
        spec.code: _popularity_cdf(len(catalogs[spec.code]), config.popularity_skew)
        for spec in config.countries
        if catalogs[spec.code]
    }
    nonempty_codes = [spec.code for spec in config.countries if catalogs[spec.code]]

    lo, hi = _stream_range(config)
    events: list[ListeningEvent] = []
    local_counts: dict[str, tuple[int, int]] = {}
    stamp = EPOCH
    for spec in config.countries:
        others = [code for code in nonempty_codes if code != spec.code]
        for i in range(spec.n_users):
            user_id = f"u{spec.code}{i:04d}"
            n_streams = lo if hi == lo else int(rng.integers(lo, hi + 1))
            draws = rng.random((n_streams, 3))
            home = 0
            for row in draws:
                if row[0] < spec.locality:
                    code = spec.code
                    home += 1
                else:
                    code = others[min(int(row[1] * len(others)), len(others) - 1)]
                cdf = cdfs[code]
                pick = min(int(np.searchsorted(cdf, row[2], side="right")), len(cdf) - 1)
                track_id, artist_id = catalogs[code][pick]
                events.append(
                    ListeningEvent(
                        user_id=user_id,
                        track_id=track_id,
                        artist_id=artist_id,
                        user_country=spec.code,
                        timestamp=stamp,
                    )
                )
                stamp += 1
            local_counts[user_id] = (home, n_streams)

    # labels drawn after all events so coverage changes cannot perturb them
    labels: dict[str, tuple[str | None, str | None, str | None]] = {}
    for spec in config.countries:
        for j in range(spec.n_artists):
            artist = f"a{spec.code}{j:03d}"
            keep = rng.random(3)
            triple = tuple(
                spec.code if keep[slot] < config.label_coverage[slot] else None
                for slot in range(3)
            )
            labels[artist] = triple  # type: ignore[assignment]

    users = {
        f"u{spec.code}{i:04d}": spec.code
        for spec in config.countries
        for i in range(spec.n_users)
    }
    tracks = {
        track_id: artist_id for code in catalogs for track_id, artist_id in catalogs[code]
    }
    dataset = Dataset(events=tuple(events), users=users, tracks=tracks)
    return SynthResult(dataset=dataset, labels=LabelTable(labels=labels), local_counts=local_counts)


def write_ground_truth(result: SynthResult, dest: Source) -> None:
    """Write exact per-user local fractions as user_id,true_local_fraction."""
    fh = _open_text(dest, "wt")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "true_local_fraction"])
        for user_id in sorted(result.local_counts):
            loc, tot = result.local_counts[user_id]
            writer.writerow([user_id, repr(loc / tot)])
    finally:
        if fh is not dest:
            fh.close()
