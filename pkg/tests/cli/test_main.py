import json

import pytest

from main import main


ESTIMATORS = "naive,ipsw,cw,om,om_rwd,acw,aipsw"


def error_body(err: str) -> dict:
    lines = err.splitlines()
    start = max(i for i, line in enumerate(lines) if line == "{")
    return json.loads("\n".join(lines[start:]))


@pytest.fixture
def tiny_csv(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("x1,y,d\n0.1,2,1\n0.2,3,1\n0.3,1,0\n", encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture")
    code = main(
        [
            "make-fixture",
            "--shift", "moderate",
            "--seed", "4",
            "--n-pop", "3000",
            "--n-val", "400",
            "--m-rwd", "1200",
            "--output", str(out),
        ]
    )
    assert code == 0
    return out


def test_naive_on_three_rows(tiny_csv, tmp_path):
    out = tmp_path / "report.json"
    code = main(["estimate", "--validation", str(tiny_csv), "--n-boot", "50", "--output", str(out)])

    assert code == 0
    report = json.loads(out.read_text(encoding="utf-8"))["reports"][0]
    assert report["estimator"] == "naive"
    assert report["value"] == 1.0
    assert report["numerator"] == 2.0 and report["denominator"] == 2.0
    assert report["unreliable"]


def test_missing_requirement_is_a_json_error(tiny_csv, capsys):
    code = main(["estimate", "--validation", str(tiny_csv), "--estimators", "cw", "--n-boot", "5"])

    assert code == 2
    body = error_body(capsys.readouterr().err)
    assert body["error"] == "RequirementUnmet"
    assert body["details"]["estimator"] == "cw"


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--shift", "extreme", "--seed", "1"])
    assert info.value.code == 2
    assert error_body(capsys.readouterr().err)["error"] == "UsageError"

    assert main(["simulate", "--shift", "none"]) == 2
    assert "seed" in error_body(capsys.readouterr().err)["details"]["errors"][0]


def test_fixture_files(fixture_dir):
    names = sorted(p.name for p in fixture_dir.iterdir())
    assert names == ["rwd.csv", "target_sample.csv", "target_summary.json", "validation.csv"]
    header = (fixture_dir / "validation.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "x1,x2,x3,y,d"
    summary = json.loads((fixture_dir / "target_summary.json").read_text(encoding="utf-8"))
    assert set(summary["means"]) == {"x1", "x2", "x3"}


def test_all_estimators_on_fixture(fixture_dir, tmp_path):
    out = tmp_path / "all.json"
    code = main(
        [
            "--threads", "2",
            "estimate",
            "--validation", str(fixture_dir / "validation.csv"),
            "--rwd", str(fixture_dir / "rwd.csv"),
            "--estimators", ESTIMATORS,
            "--n-boot", "4",
            "--seed", "9",
            "--output", str(out),
        ]
    )
    assert code == 0
    reports = json.loads(out.read_text(encoding="utf-8"))["reports"]
    assert [r["estimator"] for r in reports] == [
        "naive", "ipsw", "cw(g1)", "om(g1)", "om_rwd", "acw(g1)", "aipsw"
    ]
    for r in reports:
        assert 0.0 <= r["value"] <= 1.0
        assert r["seed"] == 9 and r["n_boot"] == 4


def test_summary_only_target(fixture_dir, tmp_path):
    out = tmp_path / "summary.json"
    code = main(
        [
            "estimate",
            "--validation", str(fixture_dir / "validation.csv"),
            "--target-summary", str(fixture_dir / "target_summary.json"),
            "--estimators", "cw,om",
            "--n-boot", "3",
            "--no-truncate",
            "--output", str(out),
        ]
    )
    assert code == 0
    reports = json.loads(out.read_text(encoding="utf-8"))["reports"]
    assert [r["estimator"] for r in reports] == ["cw(g1)", "om(g1)"]


def test_compare_identical_files(fixture_dir, tmp_path):
    out = tmp_path / "compare.json"
    cohort = str(fixture_dir / "validation.csv")
    code = main(
        [
            "compare",
            "--cohort-a", cohort,
            "--cohort-b", cohort,
            "--benchmark", "mixture",
            "--n-boot", "3",
            "--output", str(out),
        ]
    )
    assert code == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["difference"]["point"] == 0.0
    assert report["auc_a"]["estimator"] == "cw(g1)"


def test_compare_takes_one_estimator(fixture_dir, capsys):
    cohort = str(fixture_dir / "validation.csv")
    code = main(["compare", "--cohort-a", cohort, "--cohort-b", cohort, "--estimator", "cw,om"])
    assert code == 2
    assert error_body(capsys.readouterr().err)["error"] == "InputError"


def test_simulate_is_thread_independent(tmp_path):
    outputs = []
    for threads in ("1", "3"):
        out = tmp_path / f"sim{threads}"
        code = main(
            [
                "--threads", threads,
                "simulate",
                "--shift", "moderate",
                "--spec-cell", "both_correct",
                "--reps", "2",
                "--boot", "0",
                "--seed", "3",
                "--oracle-size", "20000",
                "--n-pop", "2000",
                "--n-val", "300",
                "--m-rwd", "800",
                "--output", str(out),
            ]
        )
        assert code == 0
        outputs.append(out)

    for name in ("replicates.csv", "metrics.json", "table.txt"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()


def test_run_config_merges_under_flags(tiny_csv, tmp_path):
    out = tmp_path / "report.json"
    run = tmp_path / "run.toml"
    run.write_text(
        f'validation = "{tiny_csv.as_posix()}"\nn-boot = 50\nseed = 3\noutput = "{out.as_posix()}"\n',
        encoding="utf-8",
    )
    assert main(["--config", str(run), "estimate", "--n-boot", "20"]) == 0
    report = json.loads(out.read_text(encoding="utf-8"))["reports"][0]
    assert report["n_boot"] == 20 and report["seed"] == 3

    run.write_text("bogus = 1\n", encoding="utf-8")
    assert main(["--config", str(run), "estimate", "--validation", str(tiny_csv)]) == 2


def test_missing_file_is_a_json_error(tmp_path, capsys):
    code = main(["estimate", "--validation", str(tmp_path / "absent.csv")])

    assert code == 2
    body = error_body(capsys.readouterr().err)
    assert body["error"] == "InputError"
    assert body["details"]["path"].endswith("absent.csv")


def test_ragged_row_is_a_json_error(tmp_path, capsys):
    path = tmp_path / "ragged.csv"
    path.write_text("x1,y,d\n0.1,2,1\n0.2,3,1,9\n0.3,1,0\n", encoding="utf-8")

    assert main(["estimate", "--validation", str(path)]) == 2
    body = error_body(capsys.readouterr().err)
    assert body["error"] == "BadValue"
    assert body["details"]["row"] == 1


def test_invalid_utf8_is_a_json_error(tmp_path, capsys):
    path = tmp_path / "latin1.csv"
    path.write_bytes(b"x1,y,d\n0.1,2,1\n0.2,\xe9,1\n0.3,1,0\n")

    assert main(["estimate", "--validation", str(path)]) == 2
    assert error_body(capsys.readouterr().err)["error"] == "BadValue"


def test_malformed_summary_is_a_json_error(tiny_csv, tmp_path, capsys):
    summary = tmp_path / "summary.json"
    summary.write_text('{"means": {"x1": 0.2,}\n', encoding="utf-8")
    code = main(
        [
            "estimate",
            "--validation", str(tiny_csv),
            "--target-summary", str(summary),
            "--estimators", "cw",
        ]
    )

    assert code == 2
    body = error_body(capsys.readouterr().err)
    assert body["error"] == "BadValue"
    assert body["details"]["line"] == 1


def test_simulate_estimator_subset(tmp_path, capsys):
    out = tmp_path / "sim"
    args = [
        "simulate",
        "--shift", "moderate",
        "--spec-cell", "both_wrong",
        "--reps", "2",
        "--boot", "0",
        "--seed", "3",
        "--oracle-size", "20000",
        "--n-pop", "2000",
        "--n-val", "300",
        "--m-rwd", "800",
        "--output", str(out),
    ]
    assert main(args + ["--estimators", "naive,cw"]) == 0
    metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    labels = [m["estimator"] for m in metrics["scenarios"][0]["metrics"]]
    assert labels == ["naive", "cw(g1)", "cw(g2)"]

    assert main(args + ["--estimators", "naive,bogus"]) == 2
    assert error_body(capsys.readouterr().err)["error"] == "InputError"
