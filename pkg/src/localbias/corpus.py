"""Listening-log ingestion, filtering, user splits, and interaction matrices.

The events CSV schema is ``user_id,track_id,artist_id,user_country,timestamp``
(UTF-8, header required, LF or CRLF). The timestamp column may be empty.
Files whose name ends in ``.gz`` are transparently decompressed.
"""

from __future__ import annotations

import csv
import gzip
import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import DataError

EVENTS_HEADER = ("user_id", "track_id", "artist_id", "user_country", "timestamp")

_COUNTRY_RE = re.compile(r"^[A-Z]{2}$")

Source = Union[str, Path, IO[bytes], IO[str]]


def is_country_code(value: str) -> bool:
    """True when ``value`` is exactly two uppercase ASCII letters."""
    return bool(_COUNTRY_RE.match(value))


@dataclass(frozen=True)
class ListeningEvent:
    """One stream: a user playing a track by an artist."""

    user_id: str
    track_id: str
    artist_id: str
    user_country: str
    timestamp: int | None = None


@dataclass(frozen=True)
class Dataset:
    """An immutable collection of listening events with derived user/track maps.

    ``users`` maps each user id to its (single) country; ``tracks`` maps each
    track id to its (single) artist id. Both are derived from the events and
    must stay consistent with them.
    """

    events: tuple[ListeningEvent, ...]
    users: Mapping[str, str]
    tracks: Mapping[str, str]

    @property
    def user_count(self) -> int:
        return len(self.users)

    @property
    def catalog_size(self) -> int:
        return len(self.tracks)

    def events_of(self, user_id: str) -> list[ListeningEvent]:
        if user_id not in self.users:
            raise DataError(f"unknown user: {user_id!r}")
        return [e for e in self.events if e.user_id == user_id]


def dataset_from_events(events: Iterable[ListeningEvent]) -> Dataset:
    """Assemble a Dataset, validating per-user country and per-track artist uniqueness."""
    events = tuple(events)
    users: dict[str, str] = {}
    tracks: dict[str, str] = {}
    for e in events:
        if not (e.user_id and e.track_id and e.artist_id):
            raise DataError("event with empty user/track/artist id")
        if not is_country_code(e.user_country):
            raise DataError(f"bad country code {e.user_country!r} for user {e.user_id!r}")
        seen_country = users.get(e.user_id)
        if seen_country is None:
            users[e.user_id] = e.user_country
        elif seen_country != e.user_country:
            raise DataError(
                f"conflicting countries for user {e.user_id!r}: "
                f"{seen_country!r} vs {e.user_country!r}"
            )
        seen_artist = tracks.get(e.track_id)
        if seen_artist is None:
            tracks[e.track_id] = e.artist_id
        elif seen_artist != e.artist_id:
            raise DataError(
                f"conflicting artists for track {e.track_id!r}: "
                f"{seen_artist!r} vs {e.artist_id!r}"
            )
    return Dataset(events=events, users=users, tracks=tracks)


def _open_text(source: Source, mode: str = "rt") -> IO[str]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        if path.suffix == ".gz":
            return gzip.open(path, mode, encoding="utf-8", newline="")
        return open(path, mode, encoding="utf-8", newline="")
    if isinstance(source, io.TextIOBase):
        return source
    # Binary stream: decode as UTF-8.
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def ingest_events(source: Source) -> Dataset:
    """Read the events CSV schema into a Dataset.

    Duplicate rows are preserved as distinct events: each row is one stream.
    Malformed rows raise :class:`DataError` naming the offending line number;
    a user id appearing with two different countries is an error naming the
    user.
    """
    fh = _open_text(source)
    reader = csv.reader(fh)
    try:
        header = next(reader, None)
        if header is None or tuple(header) != EVENTS_HEADER:
            raise DataError(
                f"bad events header: expected {','.join(EVENTS_HEADER)}, "
                f"got {','.join(header) if header else '<empty file>'}"
            )
        events: list[ListeningEvent] = []
        users: dict[str, str] = {}
        tracks: dict[str, str] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise DataError(f"line {lineno}: expected 5 fields, got {len(row)}")
            user_id, track_id, artist_id, country, ts_raw = row
            if not user_id or not track_id or not artist_id:
                raise DataError(f"line {lineno}: empty user/track/artist id")
            if not is_country_code(country):
                raise DataError(f"line {lineno}: bad country code {country!r}")
            if ts_raw == "":
                timestamp = None
            else:
                try:
                    timestamp = int(ts_raw)
                except ValueError:
                    raise DataError(f"line {lineno}: bad timestamp {ts_raw!r}") from None
            seen = users.get(user_id)
            if seen is None:
                users[user_id] = country
            elif seen != country:
                raise DataError(
                    f"line {lineno}: conflicting countries for user {user_id!r}: "
                    f"{seen!r} vs {country!r}"
                )
            seen_artist = tracks.get(track_id)
            if seen_artist is None:
                tracks[track_id] = artist_id
            elif seen_artist != artist_id:
                raise DataError(
                    f"line {lineno}: conflicting artists for track {track_id!r}: "
                    f"{seen_artist!r} vs {artist_id!r}"
                )
            events.append(ListeningEvent(user_id, track_id, artist_id, country, timestamp))
    finally:
        if fh is not source:
            fh.close()
    return Dataset(events=tuple(events), users=users, tracks=tracks)


def write_events(dataset: Dataset, dest: Source) -> None:
    """Serialize a Dataset back to the events CSV schema (round-trip safe)."""
    fh = _open_text(dest, "wt")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EVENTS_HEADER)
        for e in dataset.events:
            ts = "" if e.timestamp is None else str(e.timestamp)
            writer.writerow([e.user_id, e.track_id, e.artist_id, e.user_country, ts])
    finally:
        if fh is not dest:
            fh.close()


def filter_country(dataset: Dataset, country: str) -> Dataset:
    """Keep only events from users of ``country``; drop now-unreferenced tracks."""
    if not is_country_code(country):
        raise DataError(f"bad country code {country!r}")
    kept = [e for e in dataset.events if e.user_country == country]
    return dataset_from_events(kept)


def split_validation(
    dataset: Dataset, fraction: float, seed: int
) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Partition users into (train, validation) sets, deterministically per seed.

    The validation set holds round(fraction * M) users. Raises if the split
    would leave either side empty.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    m = dataset.user_count
    if m < 10:
        raise DataError(f"need at least 10 users to split, got {m}")
    # Half-up rounding: round() would round 0.5 to even.
    n_val = int(fraction * m + 0.5)
    if n_val == 0:
        raise DataError(f"fraction {fraction} yields an empty validation set for M={m}")
    if n_val >= m:
        raise DataError(f"fraction {fraction} leaves no training users for M={m}")
    user_ids = sorted(dataset.users)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    val_ids = {user_ids[i] for i in perm[:n_val]}
    validation = tuple(sorted(val_ids))
    train = tuple(u for u in user_ids if u not in val_ids)
    return train, validation


@dataclass(frozen=True)
class InteractionMatrix:
    """Binarized user x track implicit-feedback matrix with id index maps.

    Rows cover the selected users (sorted by id); columns cover the *full*
    catalog of the source dataset (sorted by id) so that models trained on a
    user subset can still score every track.
    """

    user_ids: tuple[str, ...]
    track_ids: tuple[str, ...]
    user_index: Mapping[str, int]
    track_index: Mapping[str, int]
    matrix: sp.csr_matrix

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_tracks(self) -> int:
        return len(self.track_ids)

    @property
    def row_counts(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def positives(self, row: int) -> np.ndarray:
        """Column indices of the positives of user row ``row``, ascending."""
        start, end = self.matrix.indptr[row], self.matrix.indptr[row + 1]
        return self.matrix.indices[start:end]

    def positive_pairs(self) -> set[tuple[str, str]]:
        coo = self.matrix.tocoo()
        return {(self.user_ids[i], self.track_ids[j]) for i, j in zip(coo.row, coo.col)}


def build_interactions(dataset: Dataset, users: Iterable[str]) -> InteractionMatrix:
    """Build the binarized interaction matrix over ``users``.

    Repeated streams of the same (user, track) pair collapse to one positive.
    Index maps sort by id so construction is independent of event order.
    """
    selected = set(users)
    unknown = selected - set(dataset.users)
    if unknown:
        raise DataError(f"users not in dataset: {sorted(unknown)[:5]}")
    pairs = {(e.user_id, e.track_id) for e in dataset.events if e.user_id in selected}
    # Users with no interaction after filtering carry no information: drop them.
    active = {u for u, _ in pairs}
    user_ids = tuple(sorted(active))
    track_ids = tuple(sorted(dataset.tracks))
    user_index = {u: i for i, u in enumerate(user_ids)}
    track_index = {t: j for j, t in enumerate(track_ids)}
    rows = np.fromiter((user_index[u] for u, _ in pairs), dtype=np.int64, count=len(pairs))
    cols = np.fromiter((track_index[t] for _, t in pairs), dtype=np.int64, count=len(pairs))
    data = np.ones(len(pairs), dtype=np.float64)
    matrix = sp.csr_matrix(
        (data, (rows, cols)), shape=(len(user_ids), len(track_ids)), dtype=np.float64
    )
    matrix.sum_duplicates()
    matrix.sort_indices()
    return InteractionMatrix(
        user_ids=user_ids,
        track_ids=track_ids,
        user_index=user_index,
        track_index=track_index,
        matrix=matrix,
    )


def user_profiles(dataset: Dataset) -> dict[str, tuple[str, ...]]:
    """Distinct interacted track ids per user, sorted, for every user."""
    acc: dict[str, set[str]] = {u: set() for u in dataset.users}
    for e in dataset.events:
        acc[e.user_id].add(e.track_id)
    return {u: tuple(sorted(ts)) for u, ts in acc.items()}
