"""End-to-end runs of the gridbp command-line interface (in-process)."""

import csv
import json
import shutil
import subprocess

import pytest

from gridbp import (
    make_mask,
    read_partition,
    sample_measurements,
    write_measurements_csv,
    write_partition,
)
from gridbp.cli import (
    EXIT_INPUT,
    EXIT_NUMERIC,
    EXIT_OK,
    main,
    parse_fraction_item,
    parse_fractions,
)
from gridbp.coarse_grain import Partition

INF = float("inf")


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Fraction grammar


def test_parse_fraction_item():
    assert parse_fraction_item("0.3") == (0.3, 0.3)
    assert parse_fraction_item("0.2/0.5") == (0.2, 0.5)
    assert parse_fraction_item("0.7/0") == (0.7, 0.0)
    with pytest.raises(ValueError):
        parse_fraction_item("0.1/0.2/0.3")


def test_parse_fractions_range_is_inclusive():
    got = parse_fractions("0:0.3:0.1")
    assert got == ((0.0, 0.0), (0.1, 0.1), (0.2, 0.2), (0.3, 0.3))
    # Accumulated float error must not drop the endpoint.
    assert parse_fractions("0:0.7:0.1")[-1] == (0.7, 0.7)


def test_parse_fractions_comma_list():
    got = parse_fractions("0,0.2/0.5,0.7/0")
    assert got == ((0.0, 0.0), (0.2, 0.5), (0.7, 0.0))


@pytest.mark.parametrize("bad", ["", "0.1:0.5", "0.5:0.1:0.1:9", "0.1:0.5:0"])
def test_parse_fractions_errors(bad):
    with pytest.raises(ValueError):
        parse_fractions(bad)


# ---------------------------------------------------------------------------
# estimate


def test_estimate_full_with_oracle(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(
        ["estimate", "--case", "ieee14", "--oracle", "--out", str(out), "--seed", "3"]
    )
    assert code == EXIT_OK
    rows = _read_csv(out / "estimate.csv")
    assert len(rows) == 20
    for row in rows:
        assert row["retrievable"] == "True"
        assert row["first_finite_sweep"] != ""
        # BP means are exact: the direct-solver column agrees tightly.
        assert float(row["mean_mw"]) == pytest.approx(
            float(row["wls_mean_mw"]), abs=1e-6
        )
        assert float(row["wls_variance_mw2"]) > 0.0
    config = json.loads((out / "config.json").read_text())
    assert config["command"] == "estimate" and config["case"] == "ieee14"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"] == config
    stdout = capsys.readouterr().out
    assert "20/20 lines retrievable" in stdout
    assert "oracle deviation" in stdout


def test_estimate_with_missing_fraction(tmp_path):
    out = tmp_path / "run"
    code = main(
        ["estimate", "--case", "ieee14", "--missing", "0.5", "--seed", "11",
         "--out", str(out)]
    )
    assert code == EXIT_OK
    rows = _read_csv(out / "estimate.csv")
    dead = [r for r in rows if r["retrievable"] == "False"]
    assert dead, "expected unretrievable lines at 50% missing"
    for row in dead:
        assert row["first_finite_sweep"] == ""
        assert float(row["variance_mw2"]) == INF


def test_estimate_from_measurement_file(tmp_path, ieee14):
    mask = make_mask(ieee14, 0.4, "Uniform", 5)
    meas = sample_measurements(ieee14, mask, 1e-4, 5)
    meas_path = tmp_path / "meas.csv"
    write_measurements_csv(meas, meas_path)
    out = tmp_path / "run"
    code = main(
        ["estimate", "--case", "ieee14", "--measurements", str(meas_path),
         "--out", str(out)]
    )
    assert code == EXIT_OK
    rows = _read_csv(out / "estimate.csv")
    n_dead = sum(r["retrievable"] == "False" for r in rows)
    assert n_dead >= 1


def test_estimate_nonconvergence_exit_code(tmp_path):
    code = main(
        ["estimate", "--case", "ieee14", "--max-iterations", "2",
         "--out", str(tmp_path / "run")]
    )
    assert code == EXIT_NUMERIC


def test_estimate_unknown_case_exit_code(tmp_path):
    code = main(["estimate", "--case", "ieee9", "--out", str(tmp_path / "run")])
    assert code == EXIT_INPUT


def test_missing_and_measurements_conflict(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(
            ["estimate", "--case", "ieee14", "--missing", "0.2",
             "--measurements", "x.csv", "--out", str(tmp_path / "r")]
        )
    assert err.value.code == EXIT_INPUT


def test_unknown_subcommand_exits_one():
    with pytest.raises(SystemExit) as err:
        main(["confabulate"])
    assert err.value.code == EXIT_INPUT


def test_no_subcommand_prints_help(capsys):
    assert main([]) == EXIT_INPUT
    assert "usage: gridbp" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# experiment + rerun


def test_experiment_observability_and_rerun(tmp_path, capsys):
    out = tmp_path / "exp"
    code = main(
        ["experiment", "observability", "--case", "ieee14",
         "--fractions", "0.2,0.4", "--samples", "40", "--workers", "1",
         "--out", str(out)]
    )
    assert code == EXIT_OK
    for name in ("observability.csv", "correlations.csv",
                 "retrieval_profile.csv", "variance_by_depth.csv"):
        assert (out / name).exists()
    rows = _read_csv(out / "observability.csv")
    assert [r["fraction_flow"] for r in rows] == ["0.2", "0.4"]
    capsys.readouterr()

    redo = tmp_path / "redo"
    code = main(["rerun", str(out), "--out", str(redo)])
    assert code == EXIT_OK
    for name in ("observability.csv", "correlations.csv"):
        assert (redo / name).read_bytes() == (out / name).read_bytes()
    # The replayed config matches except for nothing at all.
    assert json.loads((redo / "config.json").read_text()) == json.loads(
        (out / "config.json").read_text()
    )


def test_rerun_missing_config(tmp_path):
    assert main(["rerun", str(tmp_path / "nowhere")]) == EXIT_INPUT


def test_experiment_bench(tmp_path, capsys):
    out = tmp_path / "bench"
    code = main(
        ["experiment", "bench", "--cases", "ieee14", "--fractions", "0,0.3",
         "--repeats", "1", "--out", str(out)]
    )
    assert code == EXIT_OK
    rows = _read_csv(out / "timing.csv")
    assert len(rows) == 2
    assert {r["case"] for r in rows} == {"ieee14"}
    assert all(float(r["bp_ms"]) > 0 for r in rows)
    assert "bp" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# partition


def _write_partition_files(tmp_path, ieee14):
    three = Partition(
        "three",
        {
            **{b: "I" for b in (1, 2, 3, 4, 5)},
            **{b: "II" for b in (6, 11, 12, 13)},
            **{b: "III" for b in (7, 8, 9, 10, 14)},
        },
        ("I", "II", "III"),
    )
    spur = Partition(
        "spur",
        {
            **{b: "I" for b in (1, 2, 3, 4, 5)},
            **{b: "II" for b in (6, 7, 9, 10, 11, 12, 13, 14)},
            **{b: "III" for b in (8,)},
        },
        ("I", "II", "III"),
    )
    paths = []
    for p in (three, spur):
        path = tmp_path / f"{p.name}.txt"
        write_partition(p, path)
        paths.append(path)
    return paths


def test_partition_compare(tmp_path, ieee14, capsys):
    paths = _write_partition_files(tmp_path, ieee14)
    out = tmp_path / "cmp"
    code = main(
        ["partition", "--case", "ieee14",
         "--partition", str(paths[0]), "--partition", str(paths[1]),
         "--out", str(out)]
    )
    assert code == EXIT_OK
    scores = _read_csv(out / "scores.csv")
    assert {r["partition"] for r in scores} == {"three", "spur"}
    flagged = [r for r in scores if r["lowest"] == "True"]
    assert len(flagged) == 1 and flagged[0]["partition"] == "spur"
    for r in scores:
        sub = out / r["partition"]
        assert (sub / "area_flows.csv").exists()
        assert (sub / "area_covariance.csv").exists()
    assert "lowest trace: spur" in capsys.readouterr().out


def test_partition_search_outputs(tmp_path, ieee14):
    out = tmp_path / "search"
    code = main(
        ["partition", "--case", "ieee14", "--search", "3", "--steps", "25",
         "--seed", "2", "--out", str(out)]
    )
    assert code == EXIT_OK
    found = read_partition(out / "partition.txt")
    assert len(found.areas) == 3
    assert set(found.area_of) == {b.id for b in ieee14.buses}
    log_rows = _read_csv(out / "search_log.csv")
    for row in log_rows:
        assert float(row["score_after"]) > 0
    assert (out / "area_flows.csv").exists()


def test_partition_search_objective_flag(tmp_path):
    out = tmp_path / "searchw"
    code = main(
        ["partition", "--case", "ieee14", "--search", "2", "--steps", "10",
         "--objective", "trace=1,balance=0.001", "--out", str(out)]
    )
    assert code == EXIT_OK
    bad = main(
        ["partition", "--case", "ieee14", "--search", "2", "--steps", "5",
         "--objective", "resilience=1", "--out", str(tmp_path / "bad")]
    )
    assert bad == EXIT_INPUT


# ---------------------------------------------------------------------------
# installed entry point (one subprocess smoke test)


def test_console_script_help():
    exe = shutil.which("gridbp")
    if exe is None:
        pytest.skip("gridbp entry point not on PATH")
    out = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "estimate" in out.stdout and "partition" in out.stdout
