import csv
import json
import re
from importlib import resources
from pathlib import Path

import pytest

from hiermaxent.cli import main

CONFIGS = Path(str(resources.files("hiermaxent").joinpath("configs")))


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def write_config(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw, indent=2))
    return str(path)


class TestExamples:
    def test_exponential_files_and_headers(self, tmp_path, capsys):
        code, _, _ = run(capsys, "exponential-example", "--samples", "4000", "--out", str(tmp_path))
        assert code == 0
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == [
            "exponential.svg",
            "exponential_hierarchical_hist.csv",
            "exponential_summary.json",
            "exponential_uniform_hist.csv",
        ]
        for name in ("exponential_hierarchical_hist.csv", "exponential_uniform_hist.csv"):
            rows = list(csv.reader((tmp_path / name).open()))
            assert rows[0] == ["bin_lo", "bin_hi", "count", "density"]
            assert sum(int(r[2]) for r in rows[1:]) == 4000
        summary = json.loads((tmp_path / "exponential_summary.json").read_text())
        assert summary["seed"] == 1 and summary["samples"] == 4000
        assert all(isinstance(v, bool) for v in summary["checks"].values())

    def test_gaussian_two_dimensional_histogram(self, tmp_path, capsys):
        code, _, _ = run(capsys, "gaussian-example", "--samples", "3000", "--bins", "20", "--out", str(tmp_path))
        assert code == 0
        rows = list(csv.reader((tmp_path / "gaussian_hierarchical_hist2d.csv").open()))
        assert rows[0] == ["bin_lo", "bin_hi", "count", "density", "bin2_lo", "bin2_hi"]
        assert len(rows) == 1 + 20 * 20
        assert sum(int(r[2]) for r in rows[1:]) == 3000

    def test_svg_uses_only_basic_elements(self, tmp_path, capsys):
        run(capsys, "exponential-example", "--samples", "2000", "--out", str(tmp_path))
        text = (tmp_path / "exponential.svg").read_text()
        tags = set(re.findall(r"<([a-z]+)", text))
        assert tags <= {"svg", "polyline", "rect", "title", "desc"}
        assert 'width="640" height="400"' in text

    def test_no_svg(self, tmp_path, capsys):
        run(capsys, "exponential-example", "--samples", "2000", "--no-svg", "--out", str(tmp_path))
        assert not (tmp_path / "exponential.svg").exists()

    def test_json_format(self, tmp_path, capsys):
        run(capsys, "exponential-example", "--samples", "2000", "--format", "json", "--out", str(tmp_path))
        data = json.loads((tmp_path / "exponential_uniform_hist.json").read_text())
        assert data


class TestSolve:
    def test_moments_report(self, capsys):
        code, out, _ = run(capsys, "solve", str(CONFIGS / "exponential.json"), "--moments")
        assert code == 0
        rep = json.loads(out)["report"]
        assert abs(rep["multipliers"][0] + 20.0) <= 1e-4
        assert rep["coordinate_exponent"]["linear"] == pytest.approx(-0.2, abs=1e-6)
        # truncation at 100 moves the exponent by about 20 exp(-20) / 5 = 8.2e-9 from -1/5
        assert rep["untruncated_reference"]["linear"] == -0.2
        assert rep["untruncated_reference"]["gap"] == pytest.approx(8.24e-9, rel=1e-2)

    def test_bins_report(self, capsys):
        code, out, _ = run(capsys, "solve", str(CONFIGS / "dice_bins.json"), "--bins")
        assert code == 0
        rep = json.loads(out)["report"]
        assert rep["achieved_marginals"] == pytest.approx([0.1, 0.2, 0.3, 0.25, 0.15], abs=1e-15)

    def test_prior_targets_zero_multipliers(self, capsys):
        code, out, _ = run(capsys, "solve", str(CONFIGS / "dice_prior_bins.json"), "--bins")
        assert code == 0
        assert all(abs(v) <= 1e-15 for v in json.loads(out)["report"]["multipliers"])

    def test_csv_output(self, tmp_path, capsys):
        code, out, _ = run(capsys, "solve", str(CONFIGS / "dice_bins.json"), "--bins", "--format", "csv", "--out", str(tmp_path))
        assert code == 0
        assert out.splitlines()[0] == "index,multiplier,target,achieved"
        assert (tmp_path / "solve.csv").read_text() == out
        assert json.loads((tmp_path / "solve.json").read_text())["command"] == "solve"


class TestExitCodes:
    def test_infeasible_is_2(self, tmp_path, capsys):
        raw = {"schema": 1, "dimension": 3, "base": {"lower": 0.0, "upper": 1.0},
               "moments": {"features": ["mean"], "targets": [2.0]}}
        code, _, err = run(capsys, "solve", write_config(tmp_path, raw), "--moments")
        assert code == 2 and "infeasible" in err

    def test_empty_bin_with_mass_is_2(self, tmp_path, capsys):
        raw = json.loads((CONFIGS / "dice_bins.json").read_text())
        # no sum of three dice lies in [3.5, 3.9)
        raw["discrete"]["edges"] = [3, 3.5, 3.9, 18]
        raw["discrete"]["targets"] = [0.3, 0.3, 0.4]
        code, _, _ = run(capsys, "solve", write_config(tmp_path, raw), "--bins")
        assert code == 2

    def test_config_error_is_3(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "schema": 1,\n  "dimension": "three"\n}\n')
        code, _, err = run(capsys, "solve", str(path), "--moments")
        assert code == 3
        assert "line 3" in err and "dimension" in err

    def test_usage_error_is_3(self, capsys):
        assert run(capsys, "solve", str(CONFIGS / "dice_bins.json"))[0] == 3
        assert run(capsys, "no-such-command")[0] == 3
        assert run(capsys, "verify", str(CONFIGS / "exponential.json"), "--pairs", "0")[0] == 3

    def test_missing_file_is_4(self, tmp_path, capsys):
        assert run(capsys, "solve", str(tmp_path / "absent.json"), "--moments")[0] == 4

    def test_unwritable_output_is_4(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        code, _, _ = run(capsys, "solve", str(CONFIGS / "dice_bins.json"), "--bins", "--out", str(blocker / "sub"))
        assert code == 4

    def test_quadrature_failure_is_1(self, capsys):
        code, _, err = run(capsys, "verify", str(CONFIGS / "gaussian.json"), "--pairs", "1", "--reltol", "1e-14")
        assert code == 1 and "failed" in err


class TestDeterminism:
    def test_example_bytes_repeat(self, tmp_path, capsys):
        for d in ("a", "b"):
            run(capsys, "exponential-example", "--samples", "5000", "--seed", "7", "--workers", "3", "--out", str(tmp_path / d))
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_seed_changes_output(self, tmp_path, capsys):
        for d, seed in (("a", "1"), ("b", "2")):
            run(capsys, "exponential-example", "--samples", "2000", "--seed", seed, "--out", str(tmp_path / d))
        name = "exponential_uniform_hist.csv"
        assert (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes()

    def test_verify_repeat(self, capsys):
        first = run(capsys, "verify", str(CONFIGS / "exponential.json"), "--pairs", "3")
        second = run(capsys, "verify", str(CONFIGS / "exponential.json"), "--pairs", "3")
        assert first == second and first[0] == 0
