"""Command line interface.

Subcommands:

* ``synth``: generate a synthetic corpus (events, labels, ground truth)
  from a JSON config.
* ``stats``: coverage and local-share histograms for a corpus, with figures.
* ``run``: the full bias sweep; writes records, aggregates, training
  manifests, and figures into one output directory. Records stream to disk
  as each job finishes, so an interrupted run resumes where it stopped:
  finished jobs are kept verbatim, missing ones are computed.
* ``plot``: re-render sweep figures from an existing aggregate file.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 sweep
finished but some jobs failed. The worker count for the training phase
comes from ``--workers`` or the LOCALBIAS_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bias import (
    RECORDS_HEADER,
    BiasRecord,
    Job,
    SweepSpec,
    aggregate,
    read_aggregate,
    record_from_row,
    record_row,
    run_sweep,
    write_aggregate,
)
from .corpus import Dataset, ingest_events, write_events
from .errors import ConfigError, DataError
from .itemknn import ItemKNNConfig
from .locality import (
    LabelSource,
    LabelTable,
    UnlabeledPolicy,
    coverage_report,
    ingest_labels,
    local_histogram,
    write_coverage,
    write_histogram,
    write_labels,
)
from .neumf import TrainConfig
from .synth import CountrySpec, SynthConfig, generate, write_ground_truth

log = logging.getLogger(__name__)

WORKERS_ENV = "LOCALBIAS_WORKERS"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep usage problems on our own exit code
        raise UsageError(message)


def _load_json(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be an object: {path}")
    return data


def _check_keys(obj: dict, allowed: set[str], context: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"unknown {context} keys: {', '.join(unknown)}")


def _slug(value: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", value)


# --- synth ------------------------------------------------------------------


_SYNTH_KEYS = {"seed", "streams_per_user", "popularity_skew", "label_coverage", "countries"}
_COUNTRY_KEYS = {"code", "n_users", "n_artists", "tracks_per_artist", "locality"}


def _parse_synth_config(raw: dict) -> SynthConfig:
    _check_keys(raw, _SYNTH_KEYS, "synth config")
    if "countries" not in raw or not isinstance(raw["countries"], list):
        raise ConfigError("synth config needs a 'countries' list")
    specs = []
    for entry in raw["countries"]:
        if not isinstance(entry, dict):
            raise ConfigError(f"country entry must be an object, got {entry!r}")
        _check_keys(entry, _COUNTRY_KEYS, "country")
        try:
            specs.append(
                CountrySpec(
                    code=entry["code"],
                    n_users=int(entry["n_users"]),
                    n_artists=int(entry["n_artists"]),
                    tracks_per_artist=int(entry["tracks_per_artist"]),
                    locality=float(entry["locality"]),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"country entry missing key: {exc}") from None
    streams = raw.get("streams_per_user", 200)
    if isinstance(streams, list):
        if len(streams) != 2:
            raise ConfigError(f"streams_per_user range needs [min, max], got {streams}")
        streams = (int(streams[0]), int(streams[1]))
    else:
        streams = int(streams)
    coverage = raw.get("label_coverage", [1.0, 1.0, 1.0])
    if not isinstance(coverage, list) or len(coverage) != 3:
        raise ConfigError(f"label_coverage needs one value per label source, got {coverage}")
    return SynthConfig(
        countries=tuple(specs),
        streams_per_user=streams,
        popularity_skew=float(raw.get("popularity_skew", 1.0)),
        label_coverage=tuple(float(p) for p in coverage),
        seed=int(raw.get("seed", 0)),
    )


def cmd_synth(args) -> int:
    config = _parse_synth_config(_load_json(Path(args.config)))
    result = generate(config)
    truth_path = args.out_truth or str(Path(args.out_events).parent / "ground_truth.csv")
    for target in (args.out_events, args.out_labels, truth_path):
        Path(target).parent.mkdir(parents=True, exist_ok=True)
    write_events(result.dataset, args.out_events)
    write_labels(result.labels, args.out_labels)
    write_ground_truth(result, truth_path)
    print(
        f"wrote {len(result.dataset.events)} events for "
        f"{result.dataset.user_count} users over {result.dataset.catalog_size} tracks"
    )
    print(f"events: {args.out_events}")
    print(f"labels: {args.out_labels}")
    print(f"ground truth: {truth_path}")
    return EXIT_OK


# --- stats ------------------------------------------------------------------


def cmd_stats(args) -> int:
    dataset = ingest_events(args.events)
    labels = ingest_labels(args.labels)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    present = set(dataset.users.values())
    countries = args.countries or sorted(present)
    for c in countries:
        if c not in present:
            raise DataError(f"no users from country {c!r} in the events")
    wanted = set(countries)

    reports = []
    for source in LabelSource:
        reports.extend(r for r in coverage_report(dataset, labels, source) if r.country in wanted)
    coverage_path = out_dir / "coverage.csv"
    write_coverage(reports, coverage_path)
    print(f"coverage: {coverage_path}")

    histograms = []
    for source in LabelSource:
        for policy in UnlabeledPolicy:
            histograms.extend(
                h
                for h in local_histogram(dataset, labels, source, policy, args.bins)
                if h.country in wanted
            )
    hist_path = out_dir / "local_histograms.csv"
    write_histogram(histograms, hist_path)
    print(f"histograms: {hist_path}")

    if not args.no_figures:
        from .plotting import histogram_figures

        for path in histogram_figures(histograms, out_dir):
            print(f"figure: {path}")
    return EXIT_OK


# --- run --------------------------------------------------------------------


_RUN_KEYS = {
    "dataset",
    "events",
    "labels",
    "synth",
    "countries",
    "models",
    "variants",
    "sources",
    "policies",
    "k_values",
    "seeds",
    "validation_fraction",
    "measure_users",
    "itemknn",
    "neumf",
}


def _parse_k_values(raw) -> tuple[int, ...]:
    if isinstance(raw, list):
        return tuple(int(k) for k in raw)
    if isinstance(raw, dict):
        _check_keys(raw, {"start", "stop", "step"}, "k_values")
        start, stop = int(raw["start"]), int(raw["stop"])
        step = int(raw.get("step", 5))
        if step < 1 or stop < start:
            raise ConfigError(f"bad k_values range: {raw}")
        return tuple(range(start, stop + 1, step))
    raise ConfigError(f"k_values must be a list or a start/stop/step object, got {raw!r}")


def _parse_seeds(raw) -> tuple[int, ...]:
    if isinstance(raw, list):
        return tuple(int(s) for s in raw)
    if isinstance(raw, dict):
        _check_keys(raw, {"count", "start"}, "seeds")
        count = int(raw["count"])
        start = int(raw.get("start", 0))
        if count < 1:
            raise ConfigError(f"seed count must be positive, got {count}")
        return tuple(range(start, start + count))
    raise ConfigError(f"seeds must be a list or a count/start object, got {raw!r}")


class RunPlan:
    """Everything cmd_run needs, parsed out of one config file."""

    def __init__(
        self,
        spec: SweepSpec,
        data: tuple,
        knn_config: ItemKNNConfig,
        neumf_config: TrainConfig,
        fraction: float,
        measure_validation_only: bool,
        snapshot: dict,
    ):
        self.spec = spec
        self.data = data
        self.knn_config = knn_config
        self.neumf_config = neumf_config
        self.fraction = fraction
        self.measure_validation_only = measure_validation_only
        self.snapshot = snapshot

    def load_data(self) -> tuple[Dataset, LabelTable]:
        if self.data[0] == "synth":
            result = generate(self.data[1])
            return result.dataset, result.labels
        _, events_path, labels_path = self.data
        return ingest_events(events_path), ingest_labels(labels_path)


def _parse_run_config(path: Path) -> RunPlan:
    raw = _load_json(path)
    _check_keys(raw, _RUN_KEYS, "run config")
    for key in ("dataset", "countries"):
        if key not in raw:
            raise ConfigError(f"run config needs {key!r}")
    if "synth" in raw:
        if "events" in raw or "labels" in raw:
            raise ConfigError("give either a synth block or events/labels paths, not both")
        if not isinstance(raw["synth"], dict):
            raise ConfigError("synth block must be an object")
        data = ("synth", _parse_synth_config(raw["synth"]))
    else:
        for key in ("events", "labels"):
            if key not in raw:
                raise ConfigError(f"run config needs {key!r} (or a synth block)")
        base = path.parent
        data = ("files", base / str(raw["events"]), base / str(raw["labels"]))
    try:
        sources = tuple(LabelSource(s) for s in raw.get("sources", [s.value for s in LabelSource]))
    except ValueError as exc:
        raise ConfigError(f"bad label source: {exc}") from None
    try:
        policies = tuple(
            UnlabeledPolicy(p) for p in raw.get("policies", [p.value for p in UnlabeledPolicy])
        )
    except ValueError as exc:
        raise ConfigError(f"bad policy: {exc}") from None
    spec = SweepSpec(
        dataset=str(raw["dataset"]),
        countries=tuple(raw["countries"]),
        models=tuple(raw.get("models", ("itemknn", "neumf"))),
        variants=tuple(raw.get("variants", ("global", "local"))),
        sources=sources,
        policies=policies,
        k_values=_parse_k_values(raw.get("k_values", {"start": 10, "stop": 100, "step": 5})),
        seeds=_parse_seeds(raw.get("seeds", {"count": 20})),
    )
    knn_raw = dict(raw.get("itemknn", {}))
    _check_keys(knn_raw, {"neighborhood_size", "shrink"}, "itemknn config")
    try:
        knn_config = ItemKNNConfig(**knn_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad itemknn config: {exc}") from None
    neumf_raw = dict(raw.get("neumf", {}))
    _check_keys(neumf_raw, set(TrainConfig.__dataclass_fields__), "neumf config")
    if "mlp_layers" in neumf_raw:
        neumf_raw["mlp_layers"] = tuple(int(w) for w in neumf_raw["mlp_layers"])
    try:
        neumf_config = TrainConfig(**neumf_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad neumf config: {exc}") from None
    fraction = float(raw.get("validation_fraction", 0.1))
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"validation_fraction must be in (0, 1), got {fraction}")
    measure = str(raw.get("measure_users", "all"))
    if measure not in ("all", "validation"):
        raise ConfigError(f"measure_users must be 'all' or 'validation', got {measure!r}")
    snapshot = {
        "package_version": __version__,
        "config": raw,
    }
    return RunPlan(
        spec=spec,
        data=data,
        knn_config=knn_config,
        neumf_config=neumf_config,
        fraction=fraction,
        measure_validation_only=(measure == "validation"),
        snapshot=snapshot,
    )


def _resolve_workers(args) -> int:
    if args.workers is not None:
        workers = args.workers
    else:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigError(f"worker count must be positive, got {workers}")
    return workers


def _restrict_spec(spec: SweepSpec, args) -> SweepSpec:
    """Apply the single-job debug flags on top of the config."""
    if args.country:
        if args.country not in spec.countries:
            raise ConfigError(f"--country {args.country!r} is not in the config countries")
        spec = replace(spec, countries=(args.country,))
    if args.model:
        if args.model not in spec.models:
            raise ConfigError(f"--model {args.model!r} is not in the config models")
        spec = replace(spec, models=(args.model,))
    if args.seed is not None:
        if args.seed not in spec.seeds:
            raise ConfigError(f"--seed {args.seed} is not in the config seeds")
        spec = replace(spec, seeds=(args.seed,))
    return spec


def _job_of(record: BiasRecord) -> Job:
    return (record.country, record.model, record.variant, record.seed)


def _salvage_rows(path: Path) -> list[BiasRecord]:
    """Read a records file leniently: stop at the first torn or bad row.

    A crash can leave a truncated tail; everything before it is still good.
    """
    if not path.exists():
        return []
    rows: list[BiasRecord] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RECORDS_HEADER:
            log.warning("ignoring %s: unrecognized header", path)
            return []
        for raw in reader:
            if not raw:
                continue
            try:
                rows.append(record_from_row(raw))
            except ValueError:
                log.warning("ignoring torn tail of %s", path)
                break
    return rows


def _complete_jobs(existing: list[BiasRecord], spec: SweepSpec) -> dict[Job, list[BiasRecord]]:
    """Jobs from a previous run whose full row set is present."""
    expected_cells = {
        (s.value, p.value, k) for s in spec.sources for p in spec.policies for k in spec.k_values
    }
    valid_jobs = set(spec.jobs())
    by_job: dict[Job, list[BiasRecord]] = {}
    for r in existing:
        if r.dataset == spec.dataset and _job_of(r) in valid_jobs:
            by_job.setdefault(_job_of(r), []).append(r)
    complete = {}
    for job, rows in by_job.items():
        cells = {(r.source, r.policy, r.k) for r in rows}
        if cells == expected_cells and len(rows) == len(expected_cells):
            complete[job] = rows
    return complete


def _canonical_rows(job_rows: list[BiasRecord], spec: SweepSpec) -> list[BiasRecord]:
    source_order = {s.value: i for i, s in enumerate(spec.sources)}
    policy_order = {p.value: i for i, p in enumerate(spec.policies)}
    return sorted(job_rows, key=lambda r: (source_order[r.source], policy_order[r.policy], r.k))


class _RecordStream:
    """Single owner of the records CSV during a run.

    Rows stream to a partial file line-at-a-time (append-only, flushed per
    job) in canonical job order, interleaving rows kept from a previous run
    with freshly measured ones; on success the partial file atomically
    replaces the final one. A crash therefore never corrupts the previous
    records file, and everything flushed before the crash is salvaged by
    the next resume.
    """

    def __init__(
        self,
        final_path: Path,
        partial_path: Path,
        kept: dict[Job, list[BiasRecord]],
        spec: SweepSpec,
    ):
        self.final_path = final_path
        self.partial_path = partial_path
        self.kept = kept
        self.spec = spec
        self.jobs = spec.jobs()
        self.pos = 0
        self.rows: list[BiasRecord] = []
        self.fh = open(partial_path, "w", encoding="utf-8", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(RECORDS_HEADER)
        self.fh.flush()

    def _emit(self, rows: list[BiasRecord]) -> None:
        for r in rows:
            self.writer.writerow(record_row(r))
        self.fh.flush()
        self.rows.extend(rows)

    def _drain_kept_until(self, stop_job: Job | None) -> None:
        while self.pos < len(self.jobs) and self.jobs[self.pos] != stop_job:
            job = self.jobs[self.pos]
            rows = self.kept.get(job)
            if rows is None:
                raise RuntimeError(f"job {job} produced no records")
            self._emit(_canonical_rows(rows, self.spec))
            self.pos += 1

    def on_records(self, job: Job, rows: list[BiasRecord]) -> None:
        self._drain_kept_until(job)
        self._emit(rows)
        self.pos += 1

    def finish(self) -> list[BiasRecord]:
        self._drain_kept_until(None)
        self.fh.close()
        os.replace(self.partial_path, self.final_path)
        return self.rows

    def abort(self) -> None:
        self.fh.close()


def _append_manifest(path: Path, header: list[str], rows: list[list]) -> None:
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def cmd_run(args) -> int:
    plan = _parse_run_config(Path(args.config))
    spec = _restrict_spec(plan.spec, args)
    workers = _resolve_workers(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / "records.csv"
    partial_path = out_dir / "records.csv.partial"

    dataset, labels = plan.load_data()

    # resume: complete jobs survive from the final file or a crashed partial
    kept = _complete_jobs(_salvage_rows(records_path), spec)
    for job, rows in _complete_jobs(_salvage_rows(partial_path), spec).items():
        kept.setdefault(job, rows)
    if kept:
        log.info("resume: keeping %d finished job(s)", len(kept))

    with open(out_dir / "run_config.json", "w", encoding="utf-8") as fh:
        json.dump(plan.snapshot, fh, indent=2, sort_keys=True)
        fh.write("\n")

    stream = _RecordStream(records_path, partial_path, kept, spec)
    try:
        result = run_sweep(
            dataset,
            labels,
            spec,
            knn_config=plan.knn_config,
            neumf_config=plan.neumf_config,
            validation_fraction=plan.fraction,
            workers=workers,
            skip_jobs=frozenset(kept),
            measure_validation_only=plan.measure_validation_only,
            on_records=stream.on_records,
        )
        merged = stream.finish()
    except BaseException:
        stream.abort()
        raise

    agg = aggregate(merged)
    aggregate_path = out_dir / "aggregate.csv"
    write_aggregate(agg, aggregate_path)

    runs_path = out_dir / "neumf_runs.csv"
    if result.neumf_runs:
        _append_manifest(
            runs_path,
            ["scope", "seed", "best_epoch", "best_mrr_at_10", "epochs_run"],
            [
                [
                    info.scope,
                    info.seed,
                    info.best_epoch,
                    "" if info.best_mrr is None else repr(info.best_mrr),
                    len(info.eval_history),
                ]
                for info in result.neumf_runs
            ],
        )
        for scope in sorted({info.scope for info in result.neumf_runs}):
            _append_manifest(
                out_dir / f"neumf_history_{_slug(scope)}.csv",
                ["seed", "epoch", "mrr_at_10"],
                [
                    [info.seed, epoch, repr(mrr)]
                    for info in result.neumf_runs
                    if info.scope == scope
                    for epoch, mrr in enumerate(info.eval_history, start=1)
                ],
            )

    from .plotting import bias_figures

    figure_paths = bias_figures(agg, out_dir)

    failed: dict[tuple[Job, str], int] = {}
    for r in merged:
        if r.status != "ok":
            failed[(_job_of(r), r.status)] = failed.get((_job_of(r), r.status), 0) + 1
    n_failed = sum(failed.values())
    print(f"records: {records_path} ({len(merged)} rows, {n_failed} failed)")
    print(f"aggregate: {aggregate_path} ({len(agg)} rows)")
    if result.neumf_runs:
        print(f"manifests: {runs_path} and per-scope history files")
    for path in figure_paths:
        print(f"figure: {path}")
    for (job, status), count in sorted(failed.items()):
        country, model, variant, seed = job
        print(f"failed: {country}/{model}/{variant} seed {seed} ({count} rows): {status}")
    return EXIT_PARTIAL if n_failed else EXIT_OK


# --- plot -------------------------------------------------------------------


def cmd_plot(args) -> int:
    rows = read_aggregate(args.aggregate)
    if not rows:
        raise DataError(f"empty aggregate: {args.aggregate}")
    from .plotting import bias_figures

    paths = bias_figures(rows, args.out_dir)
    for path in paths:
        print(f"figure: {path}")
    return EXIT_OK


# --- entry ------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="localbias", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--config", required=True, help="synth config JSON")
    p.add_argument("--out-events", required=True, help="events CSV to write (.gz ok)")
    p.add_argument("--out-labels", required=True, help="labels CSV to write (.gz ok)")
    p.add_argument(
        "--out-truth",
        default=None,
        help="ground truth CSV to write (default: ground_truth.csv next to the events)",
    )
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", parents=[common], help="coverage and local-share histograms")
    p.add_argument("--events", required=True, help="events CSV (.gz ok)")
    p.add_argument("--labels", required=True, help="labels CSV (.gz ok)")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--bins", type=int, default=10, help="histogram bins (default 10)")
    p.add_argument("--countries", nargs="*", help="restrict to these countries")
    p.add_argument("--no-figures", action="store_true", help="skip SVG rendering")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("run", parents=[common], help="train models and sweep bias")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument(
        "--workers",
        type=int,
        default=None,
        help=f"parallel training jobs (default: ${WORKERS_ENV} or 1)",
    )
    p.add_argument("--country", default=None, help="debug: restrict to one country")
    p.add_argument("--model", default=None, help="debug: restrict to one model")
    p.add_argument("--seed", type=int, default=None, help="debug: restrict to one seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("plot", parents=[common], help="render figures from an aggregate file")
    p.add_argument("--aggregate", required=True, help="aggregate CSV from a run")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
