import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from layercast.cli import main

R24 = '{"kind": "rayleigh", "mean": 1, "truncation": 2, "levels": 24}'
CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.json"))


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    body = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


class TestTwoLayer:
    def test_linear_power(self, capsys):
        code, out, _ = run(
            capsys, "two-layer", "--u", "0.5", "--w", "0.5", "--alpha", "1", "--beta", "4", "--b", "1",
            "--total-power", "0.05,2",
        )
        assert code == 0
        low, high = rows(out)
        assert float(low["min_distortion"]) == pytest.approx(0.9166666666666667, rel=1e-15)
        assert low["unconstrained"] == "false" and low["aggregate_weight"] == ""
        assert float(high["ceiling"]) == pytest.approx(0.1830127018922193, rel=1e-15)
        assert float(high["aggregate_weight"]) == pytest.approx(0.9330127018922192, rel=1e-15)

    def test_high_probability_shorthand(self, capsys):
        _, a, _ = run(capsys, "two-layer", "--p-high", "0.3", "--alpha", "1", "--beta", "4", "--b", "1", "--snr-db", "0")
        _, c, _ = run(
            capsys, "two-layer", "--u", "0.7", "--w", "0.3", "--alpha", "1", "--beta", "4", "--b", "1", "--snr-db", "0"
        )
        assert a == c

    def test_missing_weights_is_usage_error(self, capsys):
        code, out, err = run(capsys, "two-layer", "--alpha", "1", "--beta", "4", "--b", "1", "--snr-db", "0")
        assert code == 2 and out == ""
        assert json.loads(err)["error"] == "usage"


class TestDiscrete:
    def test_per_layer_table(self, capsys):
        code, out, _ = run(capsys, "alloc-discrete", "--fading", R24, "--snr-db", "0,5,10", "--b", "1")
        assert code == 0
        table = rows(out)
        assert len(table) == 72
        at0 = [r for r in table if r["snr_db"] == "0"]
        assert float(at0[0]["expected_distortion"]) == pytest.approx(0.79036067591116, rel=1e-12)
        assert sum(float(r["power"]) for r in at0) == pytest.approx(1.0, rel=1e-12)

    def test_full_precision(self, capsys):
        _, out, _ = run(capsys, "alloc-discrete", "--fading", R24, "--snr-db", "0", "--b", "1", "--summary")
        (row,) = rows(out)
        # 17 significant digits round-trip exactly
        assert row["expected_distortion"] == "0.79036067591116033"

    def test_json(self, capsys):
        _, out, _ = run(capsys, "alloc-discrete", "--fading", R24, "--snr-db", "0", "--b", "1", "--format", "json")
        doc = json.loads(out)
        assert len(doc["gammas"]) == 24
        assert doc["results"][0]["expected_distortion"] == pytest.approx(0.79036067591116, rel=1e-12)

    def test_continuous_law_rejected(self, capsys):
        code, _, err = run(capsys, "alloc-discrete", "--fading", '{"kind": "rayleigh"}', "--snr-db", "0", "--b", "1")
        assert code == 2 and "discrete" in json.loads(err)["message"]

    def test_fading_from_file(self, capsys, tmp_path):
        path = tmp_path / "fading.json"
        path.write_text(R24)
        _, a, _ = run(capsys, "alloc-discrete", "--fading", str(path), "--snr-db", "0", "--b", "1")
        _, c, _ = run(capsys, "alloc-discrete", "--fading", R24, "--snr-db", "0", "--b", "1")
        assert a == c


class TestMinCost:
    def test_linear_cost_equals_recursion(self, capsys):
        _, out, _ = run(capsys, "min-cost", "--fading", R24, "--snr-db", "0", "--b", "1", "--phi", "0")
        _, ref, _ = run(capsys, "alloc-discrete", "--fading", R24, "--snr-db", "0", "--b", "1", "--summary")
        got = json.loads(out)["expected_distortion"]
        assert got == pytest.approx(float(rows(ref)[0]["expected_distortion"]), rel=1e-5)

    def test_infeasible_exit_code(self, capsys):
        code, out, err = run(capsys, "min-cost", "--fading", R24, "--snr-db", "0", "--b", "1", "--dmax", "0.5")
        assert code == 3 and out == ""
        report = json.loads(err)
        assert report["error"] == "infeasible"
        assert report["constraint"] == "max_expected" and report["violation"] > 0

    def test_caps_and_summary(self, capsys):
        code, out, _ = run(
            capsys, "min-cost", "--fading", R24, "--snr-db", "0", "--b", "1", "--cap", "24=0.59",
            "--format", "csv", "--summary",
        )
        assert code == 0
        (row,) = rows(out)
        assert float(row["kkt_residual"]) <= 1e-6

    def test_bad_cap_syntax(self, capsys):
        code, _, _ = run(capsys, "min-cost", "--fading", R24, "--snr-db", "0", "--b", "1", "--cap", "oops")
        assert code == 2


class TestContinuous:
    def test_summary(self, capsys):
        code, out, _ = run(capsys, "alloc-continuous", "--fading", '{"kind": "rayleigh"}', "--snr-db", "0", "--b", "1", "--summary")
        assert code == 0
        (row,) = rows(out)
        assert float(row["ED_star"]) == pytest.approx(0.7902201994123095, rel=1e-12)
        assert float(row["gamma_o"]) == pytest.approx(1.0, abs=1e-10)

    def test_profile(self, capsys):
        _, out, _ = run(capsys, "alloc-continuous", "--fading", '{"kind": "erlang", "L": 2}', "--snr-db", "0", "--b", "1", "--grid", "11")
        table = rows(out)
        assert len(table) == 11
        assert float(table[0]["U"]) == pytest.approx(1.0, rel=1e-9)
        assert float(table[-1]["U"]) == 0.0
        assert out.startswith("# snr_db=0")


class TestBoundsAndSampling:
    def test_bounds_columns(self, capsys):
        _, out, _ = run(capsys, "bounds", "--fading", R24, "--snr-db", "0,20", "--b", "1")
        for row in rows(out):
            assert float(row["csit_quantized"]) <= float(row["no_csit"])

    def test_single_bound(self, capsys):
        _, out, _ = run(capsys, "bounds", "--fading", '{"kind": "rayleigh"}', "--snr-db", "0", "--b", "1", "--which", "inf-div")
        (row,) = rows(out)
        assert float(row["infinite_diversity"]) == 0.5

    def test_montecarlo_reproducible(self, capsys):
        args = ("montecarlo", "--fading", R24, "--b", "1", "--snr-db", "0", "--samples", "100000", "--seed", "4")
        _, a, _ = run(capsys, *args)
        _, c, _ = run(capsys, *args)
        assert a == c
        doc = json.loads(a)
        assert abs(doc["mean"] - doc["analytic_expected_distortion"]) <= 3 * doc["std_error"]

    def test_montecarlo_with_saved_allocation(self, capsys, tmp_path):
        _, alloc, _ = run(capsys, "alloc-discrete", "--fading", R24, "--snr-db", "0", "--b", "1", "--format", "json")
        path = tmp_path / "alloc.json"
        path.write_text(alloc)
        code, out, _ = run(
            capsys, "montecarlo", "--fading", '{"kind": "rayleigh"}', "--layers", R24, "--alloc", str(path),
            "--b", "1", "--samples", "50000", "--seed", "0",
        )
        assert code == 0 and json.loads(out)["samples"] == 50000


class TestProcess:
    def test_missing_fading_exits_2_without_output(self, tmp_path):
        target = tmp_path / "out.csv"
        proc = subprocess.run(
            [sys.executable, "-m", "layercast.cli", "alloc-discrete", "--snr-db", "0", "--b", "1", "--out", str(target)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 2
        assert "--fading" in proc.stderr
        assert not target.exists()

    def test_output_file_is_byte_identical(self, tmp_path):
        outs = []
        for name in ("a.csv", "b.csv"):
            path = tmp_path / name
            assert main(["alloc-discrete", "--fading", R24, "--snr-db", "0,10", "--b", "1", "--out", str(path)]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]


class TestSweep:
    def test_inline_grid(self, capsys, tmp_path):
        cfg = {
            "task": "alloc-discrete",
            "params": {"fading": json.loads(R24), "snr_db": [0.0], "summary": True},
            "grid": {"b": [0.5, 1.0]},
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        code, out, _ = run(capsys, "sweep", "--config", str(path))
        assert code == 0
        table = rows(out)
        assert [r["b"] for r in table] == ["0.5", "1"]

    def test_thread_count_does_not_change_output(self, tmp_path, monkeypatch):
        texts = []
        for threads in ("1", "4"):
            monkeypatch.setenv("LAYERCAST_THREADS", threads)
            out = tmp_path / f"t{threads}.csv"
            assert main(["sweep", "--config", str(CONFIGS[0].parent / "discrete_alloc_vs_b.json"), "--out", str(out)]) == 0
            texts.append(out.read_bytes())
        assert texts[0] == texts[1]

    @pytest.mark.parametrize("config", CONFIGS, ids=[c.stem for c in CONFIGS])
    def test_shipped_configs_run(self, config, tmp_path):
        out = tmp_path / "out.csv"
        assert main(["sweep", "--config", str(config), "--out", str(out)]) == 0
        assert len(rows(out.read_text())) > 0
