import csv
import json
import os
import shutil
import time

import numpy as np
import pytest

from wismc.cli import main
from wismc.config import RunConfig, load_config
from wismc.errors import InputError
from wismc.synthetic import bivariate_ground_truth, write_tick_csv


@pytest.fixture(scope="module")
def ticks(tmp_path_factory):
    d = tmp_path_factory.mktemp("ticks")
    a, b = bivariate_ground_truth(20_000, seed=3)
    return {"LEAD": write_tick_csv(d / "LEAD.csv", a), "FOLL": write_tick_csv(d / "FOLL.csv", b)}


def args(ticks, out, *extra):
    base = ["--out", str(out), "--t-max", "30"]
    for sym, path in ticks.items():
        base += ["--symbol", f"{sym}={path}"]
    return base + list(extra)


def run(cmd, ticks, out, *extra):
    return main([cmd, *args(ticks, out, *extra)])


def pair(ticks, out, *extra):
    return run("estimate", ticks, out, "--leader", "LEAD", "--follower", "FOLL", *extra)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestIngest:
    def test_fixture_hand_trace(self, fixtures, tmp_path, capsys):
        assert main(["ingest", "--symbol", f"FIX={fixtures / 'ticks20.csv'}", "--out", str(tmp_path)]) == 0
        assert "FIX: 5 returns" in capsys.readouterr().out
        rows = read_csv(tmp_path / "data" / "FIX.returns.csv")
        prices = [8.005, 8.020, 8.020, 7.995, 8.020, 8.030]
        expected = [(prices[k + 1] - prices[k]) / prices[k] for k in range(5)]
        assert rows[0] == ["minute", "timestamp", "return"]
        assert [r[1] for r in rows[1:]] == [str(1_700_000_040 + 60 * k) for k in range(1, 6)]
        assert [float(r[2]) for r in rows[1:]] == pytest.approx(expected, abs=1e-15)
        assert float(rows[2][2]) == 0.0
        px = read_csv(tmp_path / "data" / "FIX.prices.csv")
        assert [float(r[1]) for r in px[1:]] == prices

    def test_missing_file(self, tmp_path, capsys):
        missing = tmp_path / "nope.csv"
        assert main(["ingest", "--symbol", f"X={missing}", "--out", str(tmp_path)]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_bad_row_exit_2(self, tmp_path, capsys):
        f = tmp_path / "bad.csv"
        f.write_text("timestamp,price\n60,1.0\n120,x\n")
        assert main(["ingest", "--symbol", f"B={f}", "--out", str(tmp_path / "o")]) == 2
        assert "bad.csv:3" in capsys.readouterr().err

    def test_idempotent(self, fixtures, tmp_path):
        a = ["ingest", "--symbol", f"FIX={fixtures / 'ticks20.csv'}", "--out", str(tmp_path)]
        main(a)
        first = {p.name: p.read_bytes() for p in (tmp_path / "data").iterdir()}
        main(a)
        assert first == {p.name: p.read_bytes() for p in (tmp_path / "data").iterdir()}


class TestConfig:
    def test_file_and_overrides(self, tmp_path):
        f = tmp_path / "c.json"
        f.write_text(json.dumps({"lam": {"A": 0.9, "B": 0.95}, "symbols": {"A": "a", "B": "b"},
                                 "seed": 3}))
        cfg = load_config(f, {"seed": 9, "horizon": None})
        assert cfg.seed == 9 and cfg.lam_for("B") == 0.95

    def test_env_jobs(self, monkeypatch):
        monkeypatch.setenv("WISMC_JOBS", "3")
        assert load_config(None, {}).jobs == 3
        assert load_config(None, {"jobs": 1}).jobs == 1

    @pytest.mark.parametrize("bad", [{"lam": 1.5}, {"states": 4}, {"leader": "A"},
                                     {"leader": "A", "follower": "A"}, {"nonsense": 1}])
    def test_invalid(self, bad):
        with pytest.raises(InputError):
            load_config(None, bad)

    def test_hash_ignores_runtime_fields(self):
        a, b = RunConfig(seed=1, horizon=10, jobs=4), RunConfig(seed=2, output_dir="x")
        assert a.model_hash() == b.model_hash()
        assert a.model_hash() != RunConfig(lam=0.5).model_hash()

    def test_bad_json_exit_2(self, tmp_path, capsys):
        f = tmp_path / "c.json"
        f.write_text("{oops")
        assert main(["ingest", "--config", str(f)]) == 2


class TestPipeline:
    def test_full_run(self, ticks, tmp_path, capsys):
        out = tmp_path / "o"
        assert run("ingest", ticks, out) == 0
        assert pair(ticks, out) == 0
        assert (out / "model" / "follower.json").exists()
        assert (out / "model" / "LEAD.kernel.bin").exists()
        assert run("simulate", ticks, out, "--leader", "LEAD", "--follower", "FOLL",
                   "--seed", "4", "--horizon", "5000") == 0
        lead = read_csv(out / "synth" / "LEAD.csv")
        foll = read_csv(out / "synth" / "FOLL.csv")
        assert len(lead) == len(foll) == 5001
        assert [r[0] for r in lead] == [r[0] for r in foll]
        assert {r[1] for r in lead[1:]} <= {"1", "2", "3", "4", "5"}
        man = json.loads((out / "synth" / "manifest.json").read_text())
        assert man["generator"] == "numpy.PCG64" and man["symbols"]["FOLL"]["role"] == "follower"
        assert run("analyze", ticks, out, "--leader", "LEAD", "--follower", "FOLL", "--source", "synth") == 0
        assert run("compare", ticks, out, "--leader", "LEAD", "--follower", "FOLL") == 0
        assert "median ratio" in capsys.readouterr().out
        acf = read_csv(out / "reports" / "acf_LEAD.csv")
        assert acf[0] == ["lag", "real", "synth"] and len(acf) == 102
        assert read_csv(out / "reports" / "comparison.csv")[0] == [
            "symbol_a", "symbol_b", "real", "synth", "ratio"]

    def test_seed_determinism(self, ticks, tmp_path):
        out = tmp_path / "o"
        run("ingest", ticks, out)
        run("estimate", ticks, out)
        run("simulate", ticks, out, "--seed", "11", "--horizon", "3000")
        first = (out / "synth" / "LEAD.csv").read_bytes()
        run("simulate", ticks, out, "--seed", "11", "--horizon", "3000")
        assert (out / "synth" / "LEAD.csv").read_bytes() == first
        run("simulate", ticks, out, "--seed", "12", "--horizon", "3000")
        assert (out / "synth" / "LEAD.csv").read_bytes() != first

    def test_end_to_end_byte_reproducible(self, ticks, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            for cmd in ("ingest", "estimate", "simulate", "analyze"):
                extra = ["--seed", "2", "--horizon", "2000"] if cmd == "simulate" else []
                assert run(cmd, ticks, out, *extra) == 0
            outs.append({str(p.relative_to(out)): p.read_bytes()
                         for p in sorted(out.rglob("*")) if p.is_file()})
        assert outs[0] == outs[1]

    def test_jobs_do_not_change_output(self, ticks, tmp_path):
        res = []
        for jobs in ("1", "2"):
            out = tmp_path / jobs
            run("ingest", ticks, out)
            run("estimate", ticks, out, "--jobs", jobs)
            run("simulate", ticks, out, "--jobs", jobs, "--replications", "2", "--horizon", "1500")
            res.append([(out / "synth" / f"rep{r:03d}" / "LEAD.csv").read_bytes() for r in range(2)])
        assert res[0] == res[1] and res[0][0] != res[0][1]

    def test_lambda_grid(self, ticks, tmp_path):
        out = tmp_path / "o"
        run("ingest", ticks, out)
        assert run("estimate", ticks, out, "--lam-grid", "0.9,0.97") == 0
        names = {p.name for p in (out / "model").iterdir()}
        assert {"LEAD.lam0.9000.kernel.json", "LEAD.lam0.9700.kernel.json"} <= names
        rows = read_csv(out / "model" / "lambda_selection.csv")
        assert rows[0] == ["symbol", "lam", "acf_l2", "selected"]
        lead = [r for r in rows[1:] if r[0] == "LEAD"]
        assert sum(int(r[3]) for r in lead) == 1
        best = min(lead, key=lambda r: float(r[2]))
        assert best[3] == "1"

    def test_missing_model(self, ticks, tmp_path, capsys):
        assert run("simulate", ticks, tmp_path / "empty") == 2
        assert "model" in capsys.readouterr().err

    def test_hash_mismatch(self, ticks, tmp_path, capsys):
        out = tmp_path / "o"
        run("ingest", ticks, out)
        run("estimate", ticks, out)
        assert run("simulate", ticks, out, "--states", "7", "--horizon", "500") == 2
        assert "--force" in capsys.readouterr().err
        assert run("simulate", ticks, out, "--states", "7", "--horizon", "500", "--force") == 0

    def test_insufficient_exit_1(self, tmp_path, capsys):
        f = tmp_path / "flat.csv"
        f.write_text("timestamp,price\n" + "".join(f"{60 * k},5.0\n" for k in range(50)))
        out = tmp_path / "o"
        main(["ingest", "--symbol", f"F={f}", "--out", str(out)])
        assert main(["estimate", "--symbol", f"F={f}", "--out", str(out)]) == 1
        assert "DegenerateDistribution" in capsys.readouterr().err

    def test_identical_inputs_ratio_one(self, ticks, tmp_path, capsys):
        out = tmp_path / "o"
        run("ingest", ticks, out)
        (out / "synth").mkdir()
        for sym in ticks:
            shutil.copy(out / "data" / f"{sym}.returns.csv", out / "synth" / f"{sym}.csv")
        assert run("compare", ticks, out) == 0
        rows = read_csv(out / "reports" / "comparison.csv")
        assert [float(r[4]) for r in rows[1:]] == [1.0]

    def test_simulate_budget(self, ticks, tmp_path):
        out = tmp_path / "o"
        run("ingest", ticks, out)
        run("estimate", ticks, out)
        t = time.perf_counter()
        assert run("simulate", ticks, out, "--horizon", "100000") == 0
        assert time.perf_counter() - t < 60


def test_e_en_fixture_prints_half(fixtures, tmp_path, capsys):
    rc = main(["compare", "--out", str(tmp_path), "--real-matrix", str(fixtures / "corr_real_E_EN.csv"),
               "--synth-matrix", str(fixtures / "corr_synth_E_EN.csv")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "EN-E: real 0.26 synth 0.13 ratio 0.50" in out
    assert "median ratio 0.50" in out
    table = (tmp_path / "reports" / "table_real.txt").read_text().split()
    assert table[:2] == ["EN", "26"]


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "wismc", "--help"], capture_output=True, text=True,
                       env={**os.environ})
    assert r.returncode == 0 and "ingest" in r.stdout
