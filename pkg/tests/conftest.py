"""Shared corpus builders for the test suite."""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from localbias import Dataset, LabelTable, ListeningEvent, dataset_from_events


def make_dataset(rows) -> Dataset:
    """Rows of (user_id, track_id, artist_id, user_country[, timestamp])."""
    events = []
    for i, row in enumerate(rows):
        ts = row[4] if len(row) > 4 else i
        events.append(ListeningEvent(row[0], row[1], row[2], row[3], ts))
    return dataset_from_events(events)


def make_labels(mapping) -> LabelTable:
    """Mapping of artist_id to a country code (all three sources) or a triple."""
    labels = {}
    for artist, value in mapping.items():
        if isinstance(value, str) or value is None:
            labels[artist] = (value, value, value)
        else:
            labels[artist] = tuple(value)
    return LabelTable(labels=labels)
