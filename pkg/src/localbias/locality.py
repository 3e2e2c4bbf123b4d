"""Artist country labels and local-listening metrics.

A stream is *local* when the track's artist is labeled with the listener's
own country under the chosen label source. Three independent label sources
are carried side by side; an artist may be labeled under any subset of
them, and there is no cross-source fallback. The labels CSV schema is
``artist_id,country_musicbrainz,country_activity,country_origin``
with empty cells meaning "unlabeled". Files ending in ``.gz`` are
transparently decompressed.
"""

from __future__ import annotations

import csv
from bisect import bisect_left
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .corpus import Dataset, ListeningEvent, Source, _open_text, is_country_code
from .errors import DataError

LABELS_HEADER = (
    "artist_id",
    "country_musicbrainz",
    "country_activity",
    "country_origin",
)

COVERAGE_HEADER = ("country", "source", "metric", "value", "numerator", "denominator")

HISTOGRAM_HEADER = ("country", "source", "policy", "bin_low", "bin_high", "count")


class LabelSource(Enum):
    """Where an artist's country assignment comes from."""

    MUSICBRAINZ = "musicbrainz"
    ACTIVITY = "activity"
    ORIGIN = "origin"


class UnlabeledPolicy(Enum):
    """How streams of unlabeled artists enter a local proportion.

    EXCLUDE drops them from both numerator and denominator; COUNT_AS_NONLOCAL
    keeps them in the denominator as non-local streams.
    """

    EXCLUDE = "exclude"
    COUNT_AS_NONLOCAL = "count_as_nonlocal"


_SOURCE_SLOT = {
    LabelSource.MUSICBRAINZ: 0,
    LabelSource.ACTIVITY: 1,
    LabelSource.ORIGIN: 2,
}


@dataclass(frozen=True)
class LabelTable:
    """Per-artist country labels for the three sources.

    ``labels`` maps artist id to a (musicbrainz, activity, origin) triple of
    country codes or None. Artists absent from the table are unlabeled under
    every source.
    """

    labels: Mapping[str, tuple[str | None, str | None, str | None]]

    def country(self, artist_id: str, source: LabelSource) -> str | None:
        triple = self.labels.get(artist_id)
        if triple is None:
            return None
        return triple[_SOURCE_SLOT[source]]

    def __len__(self) -> int:
        return len(self.labels)


def ingest_labels(source: Source) -> LabelTable:
    """Read the labels CSV schema into a LabelTable.

    Empty cells mean unlabeled; non-empty cells must be two-letter uppercase
    country codes. Rows repeating an artist id merge slot-wise; two
    different non-empty values for the same slot are an error.
    """
    fh = _open_text(source)
    reader = csv.reader(fh)
    try:
        header = next(reader, None)
        if header is None or tuple(header) != LABELS_HEADER:
            raise DataError(
                f"bad labels header: expected {','.join(LABELS_HEADER)}, "
                f"got {','.join(header) if header else '<empty file>'}"
            )
        labels: dict[str, tuple[str | None, str | None, str | None]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"line {lineno}: expected 4 fields, got {len(row)}")
            artist_id, *cells = row
            if not artist_id:
                raise DataError(f"line {lineno}: empty artist id")
            triple = []
            for cell in cells:
                if cell == "":
                    triple.append(None)
                elif is_country_code(cell):
                    triple.append(cell)
                else:
                    raise DataError(f"line {lineno}: bad country code {cell!r}")
            if artist_id in labels:
                merged = []
                for slot, (old, new) in enumerate(zip(labels[artist_id], triple)):
                    if old is not None and new is not None and old != new:
                        raise DataError(
                            f"line {lineno}: conflicting {LABELS_HEADER[slot + 1]} "
                            f"for artist {artist_id!r}: {old!r} vs {new!r}"
                        )
                    merged.append(old if old is not None else new)
                labels[artist_id] = (merged[0], merged[1], merged[2])
            else:
                labels[artist_id] = (triple[0], triple[1], triple[2])
    finally:
        if fh is not source:
            fh.close()
    return LabelTable(labels=labels)


def write_labels(table: LabelTable, dest: Source) -> None:
    """Serialize a LabelTable back to the labels CSV schema (round-trip safe)."""
    fh = _open_text(dest, "wt")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABELS_HEADER)
        for artist_id in sorted(table.labels):
            mb, act, orig = table.labels[artist_id]
            writer.writerow([artist_id, mb or "", act or "", orig or ""])
    finally:
        if fh is not dest:
            fh.close()


def resolve_track_country(
    track_id: str, dataset: Dataset, labels: LabelTable, source: LabelSource
) -> str | None:
    """Country of a track's artist under ``source``, or None when unlabeled.

    No cross-source fallback: a missing slot stays missing even when another
    source knows the artist.
    """
    artist = dataset.tracks.get(track_id)
    if artist is None:
        raise DataError(f"unknown track: {track_id!r}")
    return labels.country(artist, source)


def stream_counts(
    events: Iterable[ListeningEvent],
    user_country: str,
    labels: LabelTable,
    source: LabelSource,
) -> tuple[int, int, int]:
    """(total, labeled, local) stream counts for one user's events."""
    total = 0
    labeled = 0
    local = 0
    for e in events:
        total += 1
        country = labels.country(e.artist_id, source)
        if country is not None:
            labeled += 1
            if country == user_country:
                local += 1
    return total, labeled, local


def share_from_counts(
    total: int, labeled: int, local: int, policy: UnlabeledPolicy
) -> float | None:
    """Local share from stream counts, or None when the denominator is 0."""
    if policy is UnlabeledPolicy.EXCLUDE:
        return local / labeled if labeled else None
    return local / total if total else None


def local_proportion(
    user_id: str,
    dataset: Dataset,
    labels: LabelTable,
    source: LabelSource,
    policy: UnlabeledPolicy,
) -> float | None:
    """Share of the user's streams that are local, or None when undefined.

    Streams are weighted individually: a track played twice counts twice.
    Under EXCLUDE the result is None when no stream carries a label.
    """
    country = dataset.users.get(user_id)
    if country is None:
        raise DataError(f"unknown user: {user_id!r}")
    events = (e for e in dataset.events if e.user_id == user_id)
    total, labeled, local = stream_counts(events, country, labels, source)
    return share_from_counts(total, labeled, local, policy)


@dataclass(frozen=True)
class CoverageReport:
    """Stream-level label coverage and local share for one country and source.

    All three derived ratios come from the same three integer counts, so
    ``local_among_all`` equals ``labeled_fraction * local_among_labeled``
    as exact rationals.
    """

    country: str
    source: LabelSource
    total_streams: int
    labeled_streams: int
    local_labeled_streams: int

    @property
    def labeled_fraction(self) -> float | None:
        if self.total_streams == 0:
            return None
        return self.labeled_streams / self.total_streams

    @property
    def local_among_labeled(self) -> float | None:
        if self.labeled_streams == 0:
            return None
        return self.local_labeled_streams / self.labeled_streams

    @property
    def local_among_all(self) -> float | None:
        if self.total_streams == 0:
            return None
        return self.local_labeled_streams / self.total_streams


def coverage_report(
    dataset: Dataset, labels: LabelTable, source: LabelSource
) -> list[CoverageReport]:
    """Per-country stream coverage, one report per user country, sorted."""
    counts: dict[str, list[int]] = {}
    for e in dataset.events:
        c = counts.setdefault(e.user_country, [0, 0, 0])
        c[0] += 1
        label = labels.country(e.artist_id, source)
        if label is not None:
            c[1] += 1
            if label == e.user_country:
                c[2] += 1
    return [
        CoverageReport(
            country=country,
            source=source,
            total_streams=counts[country][0],
            labeled_streams=counts[country][1],
            local_labeled_streams=counts[country][2],
        )
        for country in sorted(counts)
    ]


def write_coverage(reports: Sequence[CoverageReport], dest: Source) -> None:
    """Write coverage rows: one row per (report, metric).

    Schema: ``country,source,metric,value,numerator,denominator``. The value
    cell is empty when the metric is undefined (zero denominator).
    """
    fh = _open_text(dest, "wt")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COVERAGE_HEADER)
        for r in reports:
            rows = [
                ("labeled_fraction", r.labeled_fraction, r.labeled_streams, r.total_streams),
                (
                    "local_among_labeled",
                    r.local_among_labeled,
                    r.local_labeled_streams,
                    r.labeled_streams,
                ),
                ("local_among_all", r.local_among_all, r.local_labeled_streams, r.total_streams),
            ]
            for metric, value, num, den in rows:
                writer.writerow(
                    [
                        r.country,
                        r.source.value,
                        metric,
                        "" if value is None else repr(value),
                        num,
                        den,
                    ]
                )
    finally:
        if fh is not dest:
            fh.close()


@dataclass(frozen=True)
class LocalHistogram:
    """Distribution of per-user local proportions over equal-width bins.

    Bin k covers (k/bins, (k+1)/bins], except bin 0 which also includes 0.0,
    so proportion 1.0 lands in the last bin. Users whose proportion is
    undefined are tallied separately in ``undefined``.
    """

    country: str
    source: LabelSource
    policy: UnlabeledPolicy
    bins: int
    counts: tuple[int, ...]
    undefined: int


def _bin_of(value: float, bins: int) -> int:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"proportion out of range: {value}")
    right_edges = [(k + 1) / bins for k in range(bins)]
    idx = bisect_left(right_edges, value)
    return min(idx, bins - 1)


def local_histogram(
    dataset: Dataset,
    labels: LabelTable,
    source: LabelSource,
    policy: UnlabeledPolicy,
    bins: int,
) -> list[LocalHistogram]:
    """Histogram per-user local proportions, one histogram per country."""
    if bins < 1:
        raise ValueError(f"bins must be positive, got {bins}")
    per_user: dict[str, list[ListeningEvent]] = {}
    for e in dataset.events:
        per_user.setdefault(e.user_id, []).append(e)
    by_country: dict[str, tuple[list[int], int]] = {}
    for user_id, events in per_user.items():
        country = dataset.users[user_id]
        counts, undefined = by_country.setdefault(country, ([0] * bins, 0))
        total, labeled, local = stream_counts(events, country, labels, source)
        p = share_from_counts(total, labeled, local, policy)
        if p is None:
            by_country[country] = (counts, undefined + 1)
        else:
            counts[_bin_of(p, bins)] += 1
    return [
        LocalHistogram(
            country=country,
            source=source,
            policy=policy,
            bins=bins,
            counts=tuple(by_country[country][0]),
            undefined=by_country[country][1],
        )
        for country in sorted(by_country)
    ]


def write_histogram(histograms: Sequence[LocalHistogram], dest: Source) -> None:
    """Write histogram rows, one per bin plus one undefined-count row.

    Schema: ``country,source,policy,bin_low,bin_high,count``. The undefined
    row leaves bin_low/bin_high empty.
    """
    fh = _open_text(dest, "wt")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTOGRAM_HEADER)
        for h in histograms:
            for k, count in enumerate(h.counts):
                writer.writerow(
                    [
                        h.country,
                        h.source.value,
                        h.policy.value,
                        repr(k / h.bins),
                        repr((k + 1) / h.bins),
                        count,
                    ]
                )
            writer.writerow([h.country, h.source.value, h.policy.value, "", "", h.undefined])
    finally:
        if fh is not dest:
            fh.close()
