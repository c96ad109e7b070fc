"""End-to-end CLI tests: flags, report schema, exit codes, determinism."""
from __future__ import annotations

import csv
import io
import json

import pytest

from admmlsmr.cli import main
from admmlsmr.data import iris_path

IRIS = iris_path()


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def train_args(*extra):
    return (
        "train", "--data", IRIS, "--has-header", "--arch", "4,8,3",
        "--iters", "3", "--seed", "7", "--workers", "1", *extra,
    )


def strip_volatile(payload: dict) -> dict:
    # wall-clock measurements are the only non-deterministic report fields
    payload = json.loads(json.dumps(payload))
    payload.pop("timing", None)
    return payload


class TestTrain:
    def test_smoke_report(self, capsys):
        code, out, err = run_cli(capsys, *train_args())
        assert code == 0, err
        payload = json.loads(out)
        assert 0.0 <= payload["results"]["test_accuracy"] <= 1.0
        assert 0.0 <= payload["results"]["train_accuracy"] <= 1.0
        assert payload["dataset"]["samples"] == 150
        assert payload["config"]["arch"] == [4, 8, 3]
        assert len(payload["timing"]["per_iteration"]) == 3

    def test_fixed32_echoes_format(self, capsys):
        code, out, _ = run_cli(
            capsys, *train_args("--arithmetic", "fixed32", "--rounding", "nearest")
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["config"]["fixed_format"] == {
            "word_length": 32,
            "fraction_length": 18,
        }
        assert payload["saturation"]["total_events"] >= 0

    def test_deterministic_reports(self, capsys):
        _, first, _ = run_cli(capsys, *train_args())
        _, second, _ = run_cli(capsys, *train_args())
        a = strip_volatile(json.loads(first))
        b = strip_volatile(json.loads(second))
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_worker_count_does_not_change_accuracy(self, capsys):
        _, one, _ = run_cli(capsys, *train_args())
        args4 = list(train_args())
        args4[args4.index("--workers") + 1] = "4"
        _, four, _ = run_cli(capsys, *args4)
        assert json.loads(one)["results"] == json.loads(four)["results"]

    def test_out_file(self, capsys, tmp_path):
        target = tmp_path / "report.json"
        code, out, _ = run_cli(capsys, *train_args("--out", str(target)))
        assert code == 0 and out == ""
        assert json.loads(target.read_text())["dataset"]["samples"] == 150

    def test_percentages_sum_to_100(self, capsys):
        _, out, _ = run_cli(capsys, *train_args())
        pct = json.loads(out)["timing"]["percentages"]
        assert abs(sum(pct.values()) - 100.0) <= 0.5

    def test_lsmr_iteration_override_echoed(self, capsys):
        code, out, _ = run_cli(capsys, *train_args("--lsmr-iters", "2"))
        assert code == 0
        assert json.loads(out)["config"]["lsmr_iterations"] == 2

    def test_bias_feature_flag(self, capsys):
        code, out, _ = run_cli(
            capsys, *train_args("--bias-feature"), "--arch", "5,8,3"
        )
        # the later --arch wins; feature count grew to 5
        assert code == 0
        assert json.loads(out)["dataset"]["features"] == 5


class TestErrors:
    def test_missing_file_exits_1(self, capsys):
        code, _, err = run_cli(
            capsys, "train", "--data", "/nonexistent.csv", "--arch", "4,8,3"
        )
        assert code == 1
        assert "error" in err

    def test_bad_flags_exit_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--data", IRIS])  # --arch is required
        assert exc.value.code == 2

    def test_unknown_rounding_rejected(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--data", IRIS, "--arch", "4,8,3", "--rounding", "banker"])
        assert exc.value.code == 2

    def test_synthetic_and_data_mutually_exclusive(self, capsys):
        code, _, err = run_cli(
            capsys, "train", "--data", IRIS, "--synthetic", "3,10,2",
            "--arch", "3,4,2",
        )
        assert code == 1 and "exactly one" in err

    def test_wrong_arity_dataset(self, capsys, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2,a\n1,b\n")
        code, _, err = run_cli(capsys, "train", "--data", str(p), "--arch", "2,4,1")
        assert code == 1


class TestCompareRounding:
    def test_two_run_sweep(self, capsys):
        code, out, err = run_cli(
            capsys,
            "compare-rounding", "--data", IRIS, "--has-header",
            "--arch", "4,8,3", "--iters", "2", "--runs", "2", "--workers", "1",
        )
        assert code == 0, err
        rows = list(csv.DictReader(io.StringIO(out)))
        assert [r["rounding"] for r in rows] == [
            "nearest", "nearest", "stochastic", "up", "down"
        ]
        assert rows[0]["arithmetic"] == "real"
        assert all(r["arithmetic"] == "fixed32" for r in rows[1:])
        for r in rows:
            assert 0.0 <= float(r["mean_accuracy"]) <= 1.0
            assert r["runs"] == "2"

    def test_requires_two_runs(self, capsys):
        code, _, err = run_cli(
            capsys,
            "compare-rounding", "--data", IRIS, "--has-header",
            "--arch", "4,8,3", "--runs", "1",
        )
        assert code == 1 and "--runs" in err


class TestProfile:
    def test_synthetic_profile(self, capsys):
        code, out, err = run_cli(
            capsys,
            "profile", "--synthetic", "6,300,2", "--arch", "6,8,8,2",
            "--iters", "2", "--workers", "1",
        )
        assert code == 0, err
        payload = json.loads(out)
        pct = payload["percentages"]
        assert set(pct) == {"weight", "activation", "output", "lagrangian"}
        assert abs(sum(pct.values()) - 100.0) <= 0.5
        assert payload["dataset"]["synthetic"]["samples"] == 300


class TestSelftest:
    def test_passes_cleanly(self, capsys):
        code, out, _ = run_cli(capsys, "selftest")
        assert code == 0
        assert "FAIL" not in out
        assert "9/9" in out
