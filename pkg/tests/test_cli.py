"""Command-line workflows: synth, stats, run (with resume), plot."""

import csv
import json
import subprocess
import sys

import pytest

from localbias import read_records
from localbias.cli import main

SYNTH_CONFIG = {
    "seed": 7,
    "streams_per_user": [6, 18],
    "countries": [
        {"code": "AA", "n_users": 10, "n_artists": 5, "tracks_per_artist": 3, "locality": 0.7},
        {"code": "BB", "n_users": 8, "n_artists": 4, "tracks_per_artist": 3, "locality": 0.4},
    ],
}


def write_json(path, payload):
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return str(path)


def base_run_config(**overrides):
    cfg = {
        "dataset": "synthetic",
        "synth": SYNTH_CONFIG,
        "countries": ["AA", "BB"],
        "models": ["itemknn"],
        "k_values": [3, 6],
        "seeds": {"count": 2},
    }
    cfg.update(overrides)
    return cfg


def run_cli(*argv):
    return main(list(argv))


# --- synth --------------------------------------------------------------------


def test_synth_deterministic_files(tmp_path):
    config = write_json(tmp_path / "synth.json", SYNTH_CONFIG)
    outs = []
    for name in ("one", "two"):
        d = tmp_path / name
        d.mkdir()
        code = run_cli(
            "synth",
            "--config", config,
            "--out-events", str(d / "events.csv"),
            "--out-labels", str(d / "labels.csv"),
        )
        assert code == 0
        outs.append(d)
    for filename in ("events.csv", "labels.csv", "ground_truth.csv"):
        a = (outs[0] / filename).read_bytes()
        b = (outs[1] / filename).read_bytes()
        assert a == b, filename
        assert a  # non-empty


def test_synth_explicit_truth_path_and_gz(tmp_path):
    config = write_json(tmp_path / "synth.json", SYNTH_CONFIG)
    code = run_cli(
        "synth",
        "--config", config,
        "--out-events", str(tmp_path / "events.csv.gz"),
        "--out-labels", str(tmp_path / "labels.csv"),
        "--out-truth", str(tmp_path / "truth.csv"),
    )
    assert code == 0
    assert (tmp_path / "events.csv.gz").read_bytes()[:2] == b"\x1f\x8b"
    assert (tmp_path / "truth.csv").exists()
    assert not (tmp_path / "ground_truth.csv").exists()


def test_synth_config_errors(tmp_path, capsys):
    bad = write_json(tmp_path / "bad.json", {**SYNTH_CONFIG, "surprise": 1})
    assert run_cli("synth", "--config", bad, "--out-events", "e", "--out-labels", "l") == 1
    assert "surprise" in capsys.readouterr().err
    # a missing config is a usage problem, not a data problem
    assert (
        run_cli("synth", "--config", str(tmp_path / "absent.json"), "--out-events", "e",
                "--out-labels", "l")
        == 1
    )
    assert "not found" in capsys.readouterr().err


# --- stats --------------------------------------------------------------------


@pytest.fixture()
def corpus_files(tmp_path):
    config = write_json(tmp_path / "synth.json", SYNTH_CONFIG)
    events = tmp_path / "events.csv"
    labels = tmp_path / "labels.csv"
    assert (
        run_cli("synth", "--config", config, "--out-events", str(events),
                "--out-labels", str(labels)) == 0
    )
    return events, labels


def test_stats_outputs(corpus_files, tmp_path):
    events, labels = corpus_files
    out = tmp_path / "stats"
    code = run_cli(
        "stats", "--events", str(events), "--labels", str(labels),
        "--out-dir", str(out), "--bins", "5",
    )
    assert code == 0
    with open(out / "coverage.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["country", "source", "metric", "value", "numerator", "denominator"]
    assert len(rows) == 1 + 2 * 3 * 3  # countries x sources x metrics
    with open(out / "local_histograms.csv", newline="") as fh:
        hist_rows = list(csv.reader(fh))
    # per country/source/policy: 5 bins plus an undefined row
    assert len(hist_rows) == 1 + 2 * 3 * 2 * 6
    svgs = sorted(p.name for p in out.glob("*.svg"))
    assert len(svgs) == 2 * 3 * 2
    assert "hist_AA_musicbrainz_exclude.svg" in svgs


def test_stats_country_filter_and_no_figures(corpus_files, tmp_path):
    events, labels = corpus_files
    out = tmp_path / "only_bb"
    code = run_cli(
        "stats", "--events", str(events), "--labels", str(labels),
        "--out-dir", str(out), "--countries", "BB", "--no-figures",
    )
    assert code == 0
    assert not list(out.glob("*.svg"))
    text = (out / "coverage.csv").read_text()
    assert "BB," in text and "AA," not in text

    missing = run_cli(
        "stats", "--events", str(events), "--labels", str(labels),
        "--out-dir", str(out), "--countries", "ZZ",
    )
    assert missing == 2


# --- run ----------------------------------------------------------------------


def read_lines(path):
    return path.read_text(encoding="utf-8").splitlines()


def test_run_small_grid(tmp_path, capsys):
    config = write_json(tmp_path / "run.json", base_run_config())
    out = tmp_path / "out"
    assert run_cli("run", "--config", str(config), "--out-dir", str(out)) == 0
    records = read_records(out / "records.csv")
    # 2 countries x 1 model x 2 variants x 3 sources x 2 policies x 2 K x 2 seeds
    assert len(records) == 96
    assert all(r.status == "ok" for r in records)
    assert not (out / "records.csv.partial").exists()
    assert not (out / "neumf_runs.csv").exists()

    snapshot = json.loads((out / "run_config.json").read_text())
    assert snapshot["config"]["dataset"] == "synthetic"
    assert "package_version" in snapshot

    svgs = sorted(p.name for p in out.glob("*.svg"))
    assert svgs == sorted(
        f"bias_synthetic_{variant}_{source}.svg"
        for variant in ("global", "local")
        for source in ("musicbrainz", "activity", "origin")
    )
    captured = capsys.readouterr().out
    assert "records:" in captured and "96 rows, 0 failed" in captured


def test_run_byte_identical_and_workers_env(tmp_path, monkeypatch):
    config = write_json(tmp_path / "run.json", base_run_config())
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run_cli("run", "--config", str(config), "--out-dir", str(a)) == 0
    assert run_cli("run", "--config", str(config), "--out-dir", str(b), "--workers", "3") == 0
    monkeypatch.setenv("LOCALBIAS_WORKERS", "2")
    assert run_cli("run", "--config", str(config), "--out-dir", str(c)) == 0
    ra = (a / "records.csv").read_bytes()
    assert ra == (b / "records.csv").read_bytes() == (c / "records.csv").read_bytes()
    assert (a / "aggregate.csv").read_bytes() == (b / "aggregate.csv").read_bytes()


def test_run_resume_after_restricted_run(tmp_path):
    config = write_json(tmp_path / "run.json", base_run_config())
    fresh, resumed = tmp_path / "fresh", tmp_path / "resumed"
    assert run_cli("run", "--config", str(config), "--out-dir", str(fresh)) == 0
    # first pass: only seed 0; second pass finishes the grid in the same dir
    assert run_cli("run", "--config", str(config), "--out-dir", str(resumed), "--seed", "0") == 0
    partial_records = read_records(resumed / "records.csv")
    assert {r.seed for r in partial_records} == {0}
    assert run_cli("run", "--config", str(config), "--out-dir", str(resumed)) == 0
    assert (resumed / "records.csv").read_bytes() == (fresh / "records.csv").read_bytes()


def test_run_idempotent_when_complete(tmp_path):
    config = write_json(tmp_path / "run.json", base_run_config())
    out = tmp_path / "out"
    assert run_cli("run", "--config", str(config), "--out-dir", str(out)) == 0
    before = (out / "records.csv").read_bytes()
    assert run_cli("run", "--config", str(config), "--out-dir", str(out)) == 0
    assert (out / "records.csv").read_bytes() == before


def test_run_salvages_torn_files(tmp_path):
    config = write_json(tmp_path / "run.json", base_run_config())
    fresh, torn = tmp_path / "fresh", tmp_path / "torn"
    assert run_cli("run", "--config", str(config), "--out-dir", str(fresh)) == 0
    lines = read_lines(fresh / "records.csv")
    rows_per_job = 3 * 2 * 2  # sources x policies x K
    torn.mkdir()
    # records.csv: one complete job then a torn one
    head = lines[: 1 + rows_per_job] + lines[1 + rows_per_job : 1 + rows_per_job + 5]
    (torn / "records.csv").write_text("\n".join(head) + "\n", encoding="utf-8")
    # partial: a later complete job plus half a row
    block = lines[1 + 2 * rows_per_job : 1 + 3 * rows_per_job]
    (torn / "records.csv.partial").write_text(
        "\n".join([lines[0]] + block) + "\nsynthetic,AA,itemknn", encoding="utf-8"
    )
    assert run_cli("run", "--config", str(config), "--out-dir", str(torn)) == 0
    assert (torn / "records.csv").read_bytes() == (fresh / "records.csv").read_bytes()
    assert not (torn / "records.csv.partial").exists()


def test_run_reports_failures_with_exit_3(tmp_path, capsys):
    cfg = base_run_config(
        synth={
            "seed": 1,
            "streams_per_user": [2, 4],
            "countries": [
                {"code": "AA", "n_users": 12, "n_artists": 1, "tracks_per_artist": 1,
                 "locality": 1.0},
            ],
        },
        countries=["AA"],
        k_values=[10],
        seeds=[0],
    )
    config = write_json(tmp_path / "run.json", cfg)
    out = tmp_path / "out"
    assert run_cli("run", "--config", str(config), "--out-dir", str(out)) == 3
    records = read_records(out / "records.csv")
    assert records and all(r.status.startswith("failed:") for r in records)
    assert "failed: AA/itemknn" in capsys.readouterr().out


def test_run_debug_flags_must_match_config(tmp_path, capsys):
    config = write_json(tmp_path / "run.json", base_run_config())
    out = str(tmp_path / "out")
    assert run_cli("run", "--config", str(config), "--out-dir", out, "--country", "ZZ") == 1
    assert run_cli("run", "--config", str(config), "--out-dir", out, "--model", "neumf") == 1
    assert run_cli("run", "--config", str(config), "--out-dir", out, "--seed", "99") == 1
    err = capsys.readouterr().err
    assert "--country" in err and "--model" in err and "--seed" in err


def test_run_config_validation(tmp_path):
    both = base_run_config(events="e.csv", labels="l.csv")
    assert run_cli(
        "run", "--config", write_json(tmp_path / "both.json", both),
        "--out-dir", str(tmp_path / "o1"),
    ) == 1
    neither = {k: v for k, v in base_run_config().items() if k != "synth"}
    assert run_cli(
        "run", "--config", write_json(tmp_path / "neither.json", neither),
        "--out-dir", str(tmp_path / "o2"),
    ) == 1
    unknown = base_run_config(extra_knob=True)
    assert run_cli(
        "run", "--config", write_json(tmp_path / "unknown.json", unknown),
        "--out-dir", str(tmp_path / "o3"),
    ) == 1


def test_run_from_event_files_with_k_range(tmp_path, corpus_files):
    events, labels = corpus_files
    cfg = {
        "dataset": "mine",
        "events": events.name,
        "labels": labels.name,
        "countries": ["AA"],
        "models": ["itemknn"],
        "variants": ["global"],
        "sources": ["activity"],
        "policies": ["exclude"],
        "k_values": {"start": 2, "stop": 6, "step": 2},
        "seeds": [0],
    }
    config = write_json(events.parent / "run.json", cfg)
    out = tmp_path / "filesrun"
    assert run_cli("run", "--config", str(config), "--out-dir", str(out)) == 0
    records = read_records(out / "records.csv")
    assert sorted(r.k for r in records) == [2, 4, 6]
    assert {r.dataset for r in records} == {"mine"}


def test_run_measure_validation_users(tmp_path):
    cfg = base_run_config(
        synth={
            "seed": 3,
            "streams_per_user": [8, 20],
            "countries": [
                {"code": "AA", "n_users": 20, "n_artists": 6, "tracks_per_artist": 4,
                 "locality": 1.0},
            ],
        },
        countries=["AA"],
        variants=["global"],
        measure_users="validation",
        k_values=[4],
        seeds=[0],
    )
    config = write_json(tmp_path / "run.json", cfg)
    out = tmp_path / "out"
    assert run_cli("run", "--config", str(config), "--out-dir", str(out)) == 0
    records = read_records(out / "records.csv")
    assert records and all(r.users_counted == 2 for r in records)  # 10% of 20


# --- plot ---------------------------------------------------------------------


def test_plot_round_trip(tmp_path):
    config = write_json(tmp_path / "run.json", base_run_config())
    out = tmp_path / "out"
    assert run_cli("run", "--config", str(config), "--out-dir", str(out)) == 0
    plots = tmp_path / "plots"
    assert run_cli("plot", "--aggregate", str(out / "aggregate.csv"), "--out-dir", str(plots)) == 0
    assert sorted(p.name for p in plots.glob("*.svg")) == sorted(
        p.name for p in out.glob("*.svg")
    )


def test_plot_empty_or_missing_aggregate(tmp_path, capsys):
    empty = tmp_path / "aggregate.csv"
    empty.write_text(
        "dataset,country,model,variant,source,policy,K,mean,std,n_runs\n", encoding="utf-8"
    )
    assert run_cli("plot", "--aggregate", str(empty), "--out-dir", str(tmp_path / "p")) == 2
    assert "empty aggregate" in capsys.readouterr().err
    assert run_cli("plot", "--aggregate", str(tmp_path / "nope.csv"),
                   "--out-dir", str(tmp_path / "p")) == 2


# --- entry points ---------------------------------------------------------------


def test_usage_errors_exit_1(capsys):
    assert run_cli() == 1
    assert run_cli("run") == 1  # missing required flags
    assert run_cli("frobnicate") == 1
    capsys.readouterr()


def test_module_invocation_help():
    proc = subprocess.run(
        [sys.executable, "-m", "localbias", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    for name in ("synth", "stats", "run", "plot"):
        assert name in proc.stdout
