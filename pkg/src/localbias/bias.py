"""Local-consumption bias of recommendation lists, swept over K and seeds.

For one user, bias is the local share of the recommended list minus the
local share of the user's own streams; both shares obey the same label
source and unlabeled policy, so the term lies in [-1, 1]. A country's bias
is the mean over users for whom both shares are defined. Undefined users
(no labeled stream under EXCLUDE, or an empty recommendation list) are
skipped and do not enter the denominator.

Two training variants exist per country: "global" models fit on the whole
population, "local" models fit only on that country's users. The sweep
reuses one top-maxK list per user and reads every smaller K as a prefix of
it, which the shared tie rule makes exact.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .corpus import (
    Dataset,
    InteractionMatrix,
    ListeningEvent,
    Source,
    _open_text,
    build_interactions,
    filter_country,
    split_validation,
)
from .errors import ConfigError, DataError, TrainingDivergedError
from .evaluation import validate
from .itemknn import ItemKNNConfig, fit as fit_itemknn
from .locality import (
    LabelSource,
    LabelTable,
    UnlabeledPolicy,
    share_from_counts,
    stream_counts,
)
from .neumf import NeuMFModel, TrainConfig
from .neumf import train as train_neumf
from .recommenders import Recommender

log = logging.getLogger(__name__)

MODEL_NAMES = ("itemknn", "neumf")
VARIANT_NAMES = ("global", "local")

DEFAULT_K_VALUES = tuple(range(10, 101, 5))
DEFAULT_SEEDS = tuple(range(20))

# Scope name for models trained on the whole population.
GLOBAL_SCOPE = "ALL"

RECORDS_HEADER = (
    "dataset",
    "country",
    "model",
    "variant",
    "source",
    "policy",
    "K",
    "seed",
    "bias",
    "users_counted",
    "status",
)

AGGREGATE_HEADER = (
    "dataset",
    "country",
    "model",
    "variant",
    "source",
    "policy",
    "K",
    "mean",
    "std",
    "n_runs",
)

_SLOT_OF_SOURCE = {
    LabelSource.MUSICBRAINZ: 0,
    LabelSource.ACTIVITY: 1,
    LabelSource.ORIGIN: 2,
}

# (country, model, variant, seed): the unit of training, measurement,
# resume bookkeeping, and the on_records callback.
Job = tuple[str, str, str, int]


@dataclass(frozen=True)
class BiasRecord:
    """One measured (or failed) bias value. Fields mirror the CSV columns."""

    dataset: str
    country: str
    model: str
    variant: str
    source: str
    policy: str
    k: int
    seed: int
    bias: float | None
    users_counted: int
    status: str


@dataclass(frozen=True)
class AggregateRow:
    """Per-configuration mean and spread over seeds; std is None when only
    one run exists."""

    dataset: str
    country: str
    model: str
    variant: str
    source: str
    policy: str
    k: int
    mean: float
    std: float | None
    n_runs: int


def list_local_proportion(
    track_ids: Sequence[str],
    user_country: str,
    dataset: Dataset,
    labels: LabelTable,
    source: LabelSource,
    policy: UnlabeledPolicy,
) -> float | None:
    """Local share of a recommendation list, each track weighted once."""
    total = 0
    labeled = 0
    local = 0
    for t in track_ids:
        artist = dataset.tracks.get(t)
        if artist is None:
            raise DataError(f"unknown track: {t!r}")
        total += 1
        c = labels.country(artist, source)
        if c is not None:
            labeled += 1
            if c == user_country:
                local += 1
    return share_from_counts(total, labeled, local, policy)


def user_bias_term(
    user_id: str,
    recommended: Sequence[str],
    dataset: Dataset,
    labels: LabelTable,
    source: LabelSource,
    policy: UnlabeledPolicy,
    *,
    events: Sequence[ListeningEvent] | None = None,
) -> float | None:
    """Recommended-local minus listened-local for one user, or None.

    None means the user cannot be counted: the listening share or the list
    share is undefined under the chosen policy. ``events`` may pass the
    user's pre-grouped events to skip the full scan; it must equal the
    dataset's events for that user.
    """
    country = dataset.users.get(user_id)
    if country is None:
        raise DataError(f"unknown user: {user_id!r}")
    if events is None:
        events = [e for e in dataset.events if e.user_id == user_id]
    total, labeled, local = stream_counts(events, country, labels, source)
    listened = share_from_counts(total, labeled, local, policy)
    if listened is None:
        return None
    recommended_share = list_local_proportion(
        recommended, country, dataset, labels, source, policy
    )
    if recommended_share is None:
        return None
    return recommended_share - listened


def _mean(terms: Sequence[float]) -> float:
    return sum(terms) / len(terms)


def dataset_bias(
    users: Sequence[str],
    model: Recommender,
    k: int,
    dataset: Dataset,
    labels: LabelTable,
    source: LabelSource,
    policy: UnlabeledPolicy,
    interactions: InteractionMatrix,
    *,
    dataset_name: str = "dataset",
    model_name: str = "model",
    variant: str = "direct",
    seed: int = 0,
) -> BiasRecord:
    """Mean user_bias_term over the countable users of one country.

    Direct reference path: queries the model at exactly this k for every
    user. ``users`` must all belong to one country; ``interactions`` supplies
    their profiles and the id maps the model's indices refer to. The keyword
    fields only fill in the record's bookkeeping columns.
    """
    if not users:
        raise ConfigError("no users given")
    countries = {dataset.users[u] for u in users if u in dataset.users}
    unknown = set(users) - set(dataset.users)
    if unknown:
        raise DataError(f"unknown user: {sorted(unknown)[0]!r}")
    if len(countries) != 1:
        raise ConfigError(f"users span multiple countries: {sorted(countries)}")
    (country,) = countries

    events_by_user: dict[str, list[ListeningEvent]] = {u: [] for u in users}
    for e in dataset.events:
        if e.user_id in events_by_user:
            events_by_user[e.user_id].append(e)

    terms = []
    for user_id in sorted(set(users)):
        row = interactions.user_index.get(user_id)
        if row is None:
            raise DataError(f"user {user_id!r} not in the interaction matrix")
        profile = interactions.positives(row)
        recs = model.recommend_indices(profile, k, row=model.row_of(user_id))
        rec_ids = [interactions.track_ids[j] for j in recs]
        term = user_bias_term(
            user_id,
            rec_ids,
            dataset,
            labels,
            source,
            policy,
            events=events_by_user[user_id],
        )
        if term is not None:
            terms.append(term)
    if not terms:
        raise DataError(f"no countable users in {country} under {source.value}/{policy.value}")
    return BiasRecord(
        dataset=dataset_name,
        country=country,
        model=model_name,
        variant=variant,
        source=source.value,
        policy=policy.value,
        k=k,
        seed=seed,
        bias=_mean(terms),
        users_counted=len(terms),
        status="ok",
    )


# --- sweep machinery -------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    """What to measure: the full cross product, minus nothing.

    ``k_values`` and ``seeds`` are canonicalized to sorted unique tuples.
    Countries are measured in the order given.
    """

    dataset: str
    countries: tuple[str, ...]
    models: tuple[str, ...] = MODEL_NAMES
    variants: tuple[str, ...] = VARIANT_NAMES
    sources: tuple[LabelSource, ...] = tuple(LabelSource)
    policies: tuple[UnlabeledPolicy, ...] = tuple(UnlabeledPolicy)
    k_values: tuple[int, ...] = DEFAULT_K_VALUES
    seeds: tuple[int, ...] = DEFAULT_SEEDS

    def __post_init__(self) -> None:
        if not self.dataset:
            raise ConfigError("dataset name must be non-empty")
        if not self.countries:
            raise ConfigError("no countries to measure")
        if len(set(self.countries)) != len(self.countries):
            raise ConfigError(f"duplicate countries: {self.countries}")
        for m in self.models:
            if m not in MODEL_NAMES:
                raise ConfigError(f"unknown model {m!r}, expected one of {MODEL_NAMES}")
        for v in self.variants:
            if v not in VARIANT_NAMES:
                raise ConfigError(f"unknown variant {v!r}, expected one of {VARIANT_NAMES}")
        if not self.models or not self.variants or not self.sources or not self.policies:
            raise ConfigError("models, variants, sources, and policies must be non-empty")
        if not self.k_values or not self.seeds:
            raise ConfigError("k_values and seeds must be non-empty")
        if any(k < 1 for k in self.k_values):
            raise ConfigError(f"k_values must be positive, got {self.k_values}")
        object.__setattr__(self, "k_values", tuple(sorted(set(self.k_values))))
        object.__setattr__(self, "seeds", tuple(sorted(set(self.seeds))))

    def jobs(self) -> list[Job]:
        """All (country, model, variant, seed) cells in canonical order."""
        return [
            (country, model, variant, seed)
            for country in self.countries
            for model in self.models
            for variant in self.variants
            for seed in self.seeds
        ]


@dataclass(frozen=True)
class NeuMFRunInfo:
    """Training manifest for one NeuMF run."""

    scope: str
    seed: int
    best_epoch: int
    best_mrr: float | None
    eval_history: tuple[float, ...]


@dataclass
class SweepResult:
    records: list[BiasRecord]
    neumf_runs: list[NeuMFRunInfo]

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.records if r.status != "ok")


class _TrainedContext:
    """A fitted model plus the interaction matrix its indices refer to."""

    def __init__(self, model: Recommender, interactions: InteractionMatrix):
        self.model = model
        self.interactions = interactions


def _stream_stats(dataset: Dataset, labels: LabelTable) -> dict[str, np.ndarray]:
    """Per user: a (source, counter) array of [total, labeled, local] streams."""
    stats = {u: np.zeros((3, 3), dtype=np.int64) for u in dataset.users}
    for e in dataset.events:
        arr = stats[e.user_id]
        triple = labels.labels.get(e.artist_id)
        for slot in range(3):
            arr[slot, 0] += 1
            c = None if triple is None else triple[slot]
            if c is not None:
                arr[slot, 1] += 1
                if c == e.user_country:
                    arr[slot, 2] += 1
    return stats


def _listened_share(counts: np.ndarray, policy: UnlabeledPolicy) -> float | None:
    total, labeled, local = (int(v) for v in counts)
    return share_from_counts(total, labeled, local, policy)


class _RecPrefix:
    """Cumulative labeled/local counts along one user's ranked list."""

    def __init__(
        self,
        rec_indices: np.ndarray,
        interactions: InteractionMatrix,
        dataset: Dataset,
        labels: LabelTable,
        user_country: str,
    ):
        length = rec_indices.size
        self.length = length
        self.labeled_cum = np.zeros((3, length + 1), dtype=np.int64)
        self.local_cum = np.zeros((3, length + 1), dtype=np.int64)
        flags_labeled = np.zeros((3, length), dtype=np.int64)
        flags_local = np.zeros((3, length), dtype=np.int64)
        for pos, j in enumerate(rec_indices):
            artist = dataset.tracks[interactions.track_ids[j]]
            triple = labels.labels.get(artist)
            for slot in range(3):
                c = None if triple is None else triple[slot]
                if c is not None:
                    flags_labeled[slot, pos] = 1
                    if c == user_country:
                        flags_local[slot, pos] = 1
        np.cumsum(flags_labeled, axis=1, out=self.labeled_cum[:, 1:])
        np.cumsum(flags_local, axis=1, out=self.local_cum[:, 1:])

    def share(self, source: LabelSource, policy: UnlabeledPolicy, k: int) -> float | None:
        slot = _SLOT_OF_SOURCE[source]
        actual = min(k, self.length)
        local = int(self.local_cum[slot, actual])
        labeled = int(self.labeled_cum[slot, actual])
        return share_from_counts(actual, labeled, local, policy)


def _train_itemknn_context(scope_dataset: Dataset, config: ItemKNNConfig) -> _TrainedContext:
    interactions = build_interactions(scope_dataset, scope_dataset.users)
    model = fit_itemknn(
        interactions,
        shrink=config.shrink,
        neighborhood_size=config.neighborhood_size,
    )
    return _TrainedContext(model, interactions)


def _train_neumf_context(
    scope_dataset: Dataset,
    config: TrainConfig,
    seed: int,
    validation_fraction: float,
) -> tuple[_TrainedContext, NeuMFRunInfo]:
    train_users, val_users = split_validation(scope_dataset, validation_fraction, seed)
    train_matrix = build_interactions(scope_dataset, train_users)
    full_matrix = build_interactions(scope_dataset, scope_dataset.users)

    def scorer(model: NeuMFModel) -> float:
        return validate(model, scope_dataset, full_matrix, val_users, seed).mrr

    model = train_neumf(train_matrix, config, seed, validation_scorer=scorer)
    info = NeuMFRunInfo(
        scope="",  # filled by the caller, which knows the scope name
        seed=seed,
        best_epoch=model.result.best_epoch,
        best_mrr=model.result.best_score,
        eval_history=tuple(model.result.eval_history),
    )
    return _TrainedContext(model, full_matrix), info


def run_sweep(
    dataset: Dataset,
    labels: LabelTable,
    spec: SweepSpec,
    knn_config: ItemKNNConfig | None = None,
    neumf_config: TrainConfig | None = None,
    validation_fraction: float = 0.1,
    workers: int = 1,
    skip_jobs: frozenset[Job] = frozenset(),
    measure_validation_only: bool = False,
    on_records: Callable[[Job, list[BiasRecord]], None] | None = None,
) -> SweepResult:
    """Train every needed model and measure the full record cross product.

    ItemKNN has no stochastic component, so one fit per scope serves every
    seed and its records repeat verbatim across seeds. NeuMF trains once per
    (scope, seed). Training jobs run in a thread pool while measurement
    walks the canonical country/model/variant/seed order serially, so the
    records list is deterministic for a fixed input regardless of workers.

    ``skip_jobs`` holds (country, model, variant, seed) cells to leave out
    entirely, used by resume: their models are not trained and no records
    are emitted for them. ``on_records`` is invoked once per measured cell,
    in canonical order, with that cell's records; callers use it to stream
    results to disk as they land.

    ``measure_validation_only`` restricts measurement to the validation
    split of each cell's training scope (sensitivity analysis); the default
    measures every user of the country.

    A failed training job (divergence, too-small population, exhausted
    catalog) yields records with status "failed: ..." and the sweep carries
    on.
    """
    knn_config = knn_config or ItemKNNConfig()
    neumf_config = neumf_config or TrainConfig()
    if workers < 1:
        raise ConfigError(f"workers must be positive, got {workers}")
    for c in spec.countries:
        if c not in set(dataset.users.values()):
            raise ConfigError(f"no users from country {c!r} in the dataset")

    scopes: dict[str, Dataset] = {}
    if "global" in spec.variants:
        scopes[GLOBAL_SCOPE] = dataset
    if "local" in spec.variants:
        for c in spec.countries:
            scopes[c] = filter_country(dataset, c)

    def scope_of(variant: str, country: str) -> str:
        return GLOBAL_SCOPE if variant == "global" else country

    def train_key_of(job: Job) -> tuple:
        country, model_name, variant, seed = job
        scope = scope_of(variant, country)
        return ("itemknn", scope) if model_name == "itemknn" else ("neumf", scope, seed)

    jobs = [job for job in spec.jobs() if job not in skip_jobs]
    train_jobs: dict[tuple, tuple] = {}
    for job in jobs:
        key = train_key_of(job)
        if key not in train_jobs:
            train_jobs[key] = (key[0], key[1], None if key[0] == "itemknn" else key[2])

    contexts: dict[tuple, _TrainedContext] = {}
    failures: dict[tuple, str] = {}
    neumf_runs: dict[tuple, NeuMFRunInfo] = {}

    def run_training(args: tuple):
        model_name, scope, seed = args
        if model_name == "itemknn":
            return _train_itemknn_context(scopes[scope], knn_config)
        return _train_neumf_context(scopes[scope], neumf_config, seed, validation_fraction)

    stats = _stream_stats(dataset, labels)
    users_by_country = {
        c: tuple(sorted(u for u, uc in dataset.users.items() if uc == c))
        for c in spec.countries
    }
    val_users_cache: dict[tuple[str, int], frozenset[str]] = {}

    def measured_users(job: Job) -> tuple[str, ...]:
        country, _, variant, seed = job
        if not measure_validation_only:
            return users_by_country[country]
        scope = scope_of(variant, country)
        cache_key = (scope, seed)
        if cache_key not in val_users_cache:
            _, val = split_validation(scopes[scope], validation_fraction, seed)
            val_users_cache[cache_key] = frozenset(val)
        val = val_users_cache[cache_key]
        return tuple(u for u in users_by_country[country] if u in val)

    max_k = max(spec.k_values)
    prefix_cache: dict[tuple, list[tuple[str, _RecPrefix]] | str] = {}

    def prefixes_for(train_key: tuple, job: Job):
        """Per-user ranked-list prefixes for the job's population, or an
        error string."""
        country, _, _, seed = job
        cache_key = (train_key, country, seed if measure_validation_only else -1)
        if cache_key in prefix_cache:
            return prefix_cache[cache_key]
        ctx = contexts[train_key]
        out: list[tuple[str, _RecPrefix]] = []
        short = 0
        try:
            for user_id in measured_users(job):
                row = ctx.interactions.user_index.get(user_id)
                if row is None:
                    raise DataError(f"user {user_id!r} not in the interaction matrix")
                profile = ctx.interactions.positives(row)
                recs = ctx.model.recommend_indices(
                    profile, max_k, row=ctx.model.row_of(user_id)
                )
                if recs.size < max_k:
                    short += 1
                out.append(
                    (
                        user_id,
                        _RecPrefix(
                            recs, ctx.interactions, dataset, labels, dataset.users[user_id]
                        ),
                    )
                )
        except DataError as exc:
            prefix_cache[cache_key] = str(exc)
            return str(exc)
        if short:
            log.info(
                "%s/%s: %d of %d users got lists shorter than %d",
                train_key,
                country,
                short,
                len(out),
                max_k,
            )
        prefix_cache[cache_key] = out
        return out

    def failed_rows(job: Job, reason: str) -> list[BiasRecord]:
        country, model_name, variant, seed = job
        return [
            BiasRecord(
                dataset=spec.dataset,
                country=country,
                model=model_name,
                variant=variant,
                source=source.value,
                policy=policy.value,
                k=k,
                seed=seed,
                bias=None,
                users_counted=0,
                status=f"failed: {reason}",
            )
            for source in spec.sources
            for policy in spec.policies
            for k in spec.k_values
        ]

    def measured_rows(job: Job, prefixes: list[tuple[str, _RecPrefix]]) -> list[BiasRecord]:
        country, model_name, variant, seed = job
        rows: list[BiasRecord] = []
        for source in spec.sources:
            slot = _SLOT_OF_SOURCE[source]
            for policy in spec.policies:
                listened = {
                    u: _listened_share(stats[u][slot], policy) for u, _ in prefixes
                }
                for k in spec.k_values:
                    terms = []
                    for user_id, prefix in prefixes:
                        l_u = listened[user_id]
                        if l_u is None:
                            continue
                        l_rec = prefix.share(source, policy, k)
                        if l_rec is None:
                            continue
                        terms.append(l_rec - l_u)
                    if terms:
                        rows.append(
                            BiasRecord(
                                dataset=spec.dataset,
                                country=country,
                                model=model_name,
                                variant=variant,
                                source=source.value,
                                policy=policy.value,
                                k=k,
                                seed=seed,
                                bias=_mean(terms),
                                users_counted=len(terms),
                                status="ok",
                            )
                        )
                    else:
                        rows.append(
                            BiasRecord(
                                dataset=spec.dataset,
                                country=country,
                                model=model_name,
                                variant=variant,
                                source=source.value,
                                policy=policy.value,
                                k=k,
                                seed=seed,
                                bias=None,
                                users_counted=0,
                                status="failed: no countable users",
                            )
                        )
        return rows

    records: list[BiasRecord] = []
    keys = list(train_jobs)
    log.info("training %d model(s) with %d worker(s)", len(keys), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {key: pool.submit(run_training, train_jobs[key]) for key in keys}

        def resolve(key: tuple) -> None:
            if key in contexts or key in failures:
                return
            try:
                outcome = futures[key].result()
            except (DataError, ConfigError, TrainingDivergedError) as exc:
                failures[key] = str(exc)
                log.warning("training %s failed: %s", key, exc)
                return
            if key[0] == "neumf":
                ctx, info = outcome
                contexts[key] = ctx
                neumf_runs[key] = replace(info, scope=key[1])
            else:
                contexts[key] = outcome

        # Measurement starts as soon as a job's model is ready; later
        # trainings keep running in the pool meanwhile.
        for job in jobs:
            train_key = train_key_of(job)
            resolve(train_key)
            if train_key in failures:
                rows = failed_rows(job, failures[train_key])
            else:
                prefixes = prefixes_for(train_key, job)
                if isinstance(prefixes, str):
                    rows = failed_rows(job, prefixes)
                else:
                    rows = measured_rows(job, prefixes)
            records.extend(rows)
            if on_records is not None:
                on_records(job, rows)

    runs = [neumf_runs[k] for k in sorted(neumf_runs, key=repr)]
    return SweepResult(records=records, neumf_runs=runs)


def sweep(
    dataset: Dataset,
    labels: LabelTable,
    *,
    dataset_name: str,
    country: str,
    model: str,
    variant: str,
    source: LabelSource,
    policy: UnlabeledPolicy,
    k_values: Sequence[int] = DEFAULT_K_VALUES,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    knn_config: ItemKNNConfig | None = None,
    neumf_config: TrainConfig | None = None,
    validation_fraction: float = 0.1,
    workers: int = 1,
) -> list[BiasRecord]:
    """Measure one experiment cell over a K grid and a seed list.

    One BiasRecord per (K, seed); each trained model is queried once and
    every K reads a prefix of its ranked list. Training failures surface as
    failed records, not exceptions.
    """
    spec = SweepSpec(
        dataset=dataset_name,
        countries=(country,),
        models=(model,),
        variants=(variant,),
        sources=(source,),
        policies=(policy,),
        k_values=tuple(k_values),
        seeds=tuple(seeds),
    )
    result = run_sweep(
        dataset,
        labels,
        spec,
        knn_config=knn_config,
        neumf_config=neumf_config,
        validation_fraction=validation_fraction,
        workers=workers,
    )
    return result.records


def aggregate(records: Sequence[BiasRecord]) -> list[AggregateRow]:
    """Mean and unbiased (n-1) std of bias per configuration over ok seeds.

    Identical values aggregate to std exactly 0.0 (and mean exactly the
    value) rather than accumulating float rounding from the generic formula.
    A single-run configuration reports std as None. Configurations with no
    ok record are dropped.
    """
    groups: dict[tuple, list[float]] = {}
    order: list[tuple] = []
    for r in records:
        if r.status != "ok":
            continue
        key = (r.dataset, r.country, r.model, r.variant, r.source, r.policy, r.k)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r.bias)
    rows = []
    for key in order:
        vals = groups[key]
        std: float | None
        arr = np.asarray(vals)
        if len(vals) == 1:
            mean, std = float(arr[0]), None
        elif np.all(arr == arr[0]):
            mean, std = float(arr[0]), 0.0
        else:
            mean = float(np.mean(arr))
            std = float(np.std(arr, ddof=1))
        rows.append(AggregateRow(*key, mean=mean, std=std, n_runs=len(vals)))
    return rows


# --- CSV I/O ---------------------------------------------------------------


def record_row(r: BiasRecord) -> list:
    """CSV cells for one record, with floats in repr form."""
    return [
        r.dataset,
        r.country,
        r.model,
        r.variant,
        r.source,
        r.policy,
        r.k,
        r.seed,
        "" if r.bias is None else repr(r.bias),
        r.users_counted,
        r.status,
    ]


def record_from_row(row: Sequence[str]) -> BiasRecord:
    """Inverse of record_row; raises ValueError on a malformed row."""
    if len(row) != len(RECORDS_HEADER):
        raise ValueError(f"expected {len(RECORDS_HEADER)} fields, got {len(row)}")
    return BiasRecord(
        dataset=row[0],
        country=row[1],
        model=row[2],
        variant=row[3],
        source=row[4],
        policy=row[5],
        k=int(row[6]),
        seed=int(row[7]),
        bias=None if row[8] == "" else float(row[8]),
        users_counted=int(row[9]),
        status=row[10],
    )


def write_records(records: Sequence[BiasRecord], dest: Source) -> None:
    fh = _open_text(dest, "wt")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORDS_HEADER)
        for r in records:
            writer.writerow(record_row(r))
    finally:
        if fh is not dest:
            fh.close()


def read_records(source: Source) -> list[BiasRecord]:
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RECORDS_HEADER:
            raise DataError(
                f"bad records header: expected {','.join(RECORDS_HEADER)}, "
                f"got {','.join(header) if header else '<empty file>'}"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                records.append(record_from_row(row))
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
        return records
    finally:
        if fh is not source:
            fh.close()


def write_aggregate(rows: Sequence[AggregateRow], dest: Source) -> None:
    fh = _open_text(dest, "wt")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_HEADER)
        for r in rows:
            writer.writerow(
                [
                    r.dataset,
                    r.country,
                    r.model,
                    r.variant,
                    r.source,
                    r.policy,
                    r.k,
                    repr(r.mean),
                    "" if r.std is None else repr(r.std),
                    r.n_runs,
                ]
            )
    finally:
        if fh is not dest:
            fh.close()


def read_aggregate(source: Source) -> list[AggregateRow]:
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != AGGREGATE_HEADER:
            raise DataError(
                f"bad aggregate header: expected {','.join(AGGREGATE_HEADER)}, "
                f"got {','.join(header) if header else '<empty file>'}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(AGGREGATE_HEADER):
                raise DataError(
                    f"line {lineno}: expected {len(AGGREGATE_HEADER)} fields, got {len(row)}"
                )
            try:
                rows.append(
                    AggregateRow(
                        dataset=row[0],
                        country=row[1],
                        model=row[2],
                        variant=row[3],
                        source=row[4],
                        policy=row[5],
                        k=int(row[6]),
                        mean=float(row[7]),
                        std=None if row[8] == "" else float(row[8]),
                        n_runs=int(row[9]),
                    )
                )
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
        return rows
    finally:
        if fh is not source:
            fh.close()
