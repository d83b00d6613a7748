import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from pkernel.cli import main
from pkernel.core import Grid, l2_distance, sup_distance
from pkernel.estimators import fit_cls
from pkernel.io import kernel_from_dict, read_quotes_csv, validate
from pkernel.synth import KernelSpec, make_kernel


def run(*argv):
    """Run the CLI in a fresh interpreter; returns (exit code, stdout, stderr)."""
    p = subprocess.run([sys.executable, "-m", "pkernel.cli", *map(str, argv)], capture_output=True, text=True)
    return p.returncode, p.stdout, p.stderr


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def uniform_quotes(tmp_path):
    out = tmp_path / "q.csv"
    assert main(["simulate", "--truth", "uniform", "--n", "200", "--sigma", "0", "--seed", "3",
                 "--design", "quantile", "--out", str(out)]) == 0
    return out


class TestSimulate:
    def test_uniform_closed_form(self, tmp_path):
        out = tmp_path / "q.csv"
        assert main(["simulate", "--truth", "uniform", "--n", "5", "--sigma", "0", "--seed", "7", "--out", str(out)]) == 0
        rows = read_rows(out)
        assert list(rows[0]) == ["strike", "price"]
        assert len(rows) == 5
        for r in rows:
            K = float(r["strike"])
            assert float(r["price"]) == pytest.approx(K * K / 2, abs=1e-15)
        truth = json.loads((tmp_path / "q.truth.json").read_text())
        validate(truth, "kernel")
        manifest = json.loads((tmp_path / "q.manifest.json").read_text())
        validate(manifest, "manifest")
        assert manifest["master_seed"] == 7

    def test_zero_quotes_is_usage_error(self, tmp_path):
        code, _, err = run("simulate", "--n", "0", "--seed", "1", "--out", tmp_path / "q.csv")
        assert code == 2
        assert "--n" in err

    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert main(["simulate", "--n", "50", "--sigma", "0.01", "--seed", "11", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.truth.json").read_bytes() == (tmp_path / "b.truth.json").read_bytes()

    def test_seventeen_digits(self, tmp_path):
        out = tmp_path / "q.csv"
        main(["simulate", "--n", "20", "--seed", "2", "--out", str(out)])
        q = read_quotes_csv(out)
        for r, p in zip(read_rows(out), q.prices):
            assert float(r["price"]) == p
            assert float(format(p, ".17g")) == p
            assert r["price"] == format(p, ".17g")


class TestFit:
    def test_cls_random_strikes_identifiability_floor(self, tmp_path):
        # i.i.d. strikes leave gaps where exact prices fix only the integral
        # of P; the error stays within the widest gap times the slope
        q, est = tmp_path / "q.csv", tmp_path / "est.json"
        main(["simulate", "--truth", "uniform", "--n", "200", "--sigma", "0", "--seed", "3", "--out", str(q)])
        assert main(["fit", "--method", "cls", "--in", str(q), "--out", str(est)]) == 0
        doc = json.loads(est.read_text())
        ident = ~np.array(doc["extrapolated"])
        err = np.max(np.abs(np.array(doc["values"]) - np.array(doc["nodes"]))[ident])
        assert err <= np.max(np.diff(np.sort(read_quotes_csv(q).strikes)))

    def test_cls_uniform_round_trip(self, tmp_path, uniform_quotes):
        est = tmp_path / "est.json"
        assert main(["fit", "--method", "cls", "--in", str(uniform_quotes), "--out", str(est)]) == 0
        doc = json.loads(est.read_text())
        validate(doc, "estimate")
        x = np.array(doc["nodes"])
        v = np.array(doc["values"])
        ident = ~np.array(doc["extrapolated"])
        assert np.max(np.abs(v[ident] - x[ident])) <= 5e-3
        validate(json.loads((tmp_path / "est.manifest.json").read_text()), "manifest")

    def test_rme_lambda_zero_matches_cls(self, tmp_path, uniform_quotes):
        a, b = tmp_path / "cls.json", tmp_path / "rme.json"
        assert main(["fit", "--method", "cls", "--in", str(uniform_quotes), "--out", str(a)]) == 0
        assert main(["fit", "--method", "rme", "--prior", "uniform", "--lambda", "0",
                     "--in", str(uniform_quotes), "--out", str(b)]) == 0
        va = np.array(json.loads(a.read_text())["values"])
        vb = np.array(json.loads(b.read_text())["values"])
        np.testing.assert_allclose(va, vb, atol=1e-6, rtol=0)

    def test_rme_auto_lambda(self, tmp_path, uniform_quotes):
        out = tmp_path / "rme.json"
        assert main(["fit", "--method", "rme", "--prior", "bimodal", "--auto-lambda",
                     "--in", str(uniform_quotes), "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["objective"]["lambda"] == pytest.approx(0.1 / np.sqrt(200))

    def test_me_noisy_is_infeasible(self, tmp_path):
        q = tmp_path / "q.csv"
        main(["simulate", "--n", "20", "--sigma", "0.05", "--seed", "4", "--out", str(q)])
        code, _, err = run("fit", "--method", "me", "--prior", "uniform", "--in", q, "--out", tmp_path / "me.json")
        assert code == 4
        assert "reproduces the quotes" in err or "infeasible" in err

    def test_me_exact(self, tmp_path):
        q = tmp_path / "q.csv"
        q.write_text("strike,price\n0.4,0.08\n0.8,0.32\n")
        out = tmp_path / "me.json"
        assert main(["fit", "--method", "me", "--prior", "bimodal", "--in", str(q), "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        np.testing.assert_allclose(doc["fitted_prices"], [0.08, 0.32], atol=1e-10)

    def test_convergence_error_exit(self, tmp_path):
        q = tmp_path / "q.csv"
        main(["simulate", "--n", "100", "--seed", "5", "--out", str(q)])
        code, _, _ = run("fit", "--method", "cls", "--max-iterations", "1", "--in", q, "--out", tmp_path / "e.json")
        assert code == 3

    def test_malformed_row(self, tmp_path):
        q = tmp_path / "bad.csv"
        q.write_text("strike,price\n0.1,0.005\n0.2,abc\n")
        code, _, err = run("fit", "--method", "cls", "--in", q, "--out", tmp_path / "e.json")
        assert code == 2
        assert "line 3" in err

    def test_missing_prior(self, tmp_path, uniform_quotes):
        code, _, err = run("fit", "--method", "rme", "--lambda", "0.1", "--in", uniform_quotes,
                           "--out", tmp_path / "e.json")
        assert code == 2 and "--prior" in err

    def test_sigma_column_accepted(self, tmp_path):
        q = tmp_path / "q.csv"
        main(["simulate", "--n", "30", "--seed", "6", "--with-sigma", "--out", str(q)])
        assert list(read_rows(q)[0]) == ["strike", "price", "sigma"]
        assert main(["fit", "--method", "cls", "--in", str(q), "--out", str(tmp_path / "e.json")]) == 0

    def test_errors_match_library(self, tmp_path):
        q = tmp_path / "q.csv"
        main(["simulate", "--truth", "bimodal", "--n", "80", "--sigma", "0.01", "--seed", "9", "--out", str(q)])
        out = tmp_path / "e.json"
        assert main(["fit", "--method", "cls", "--in", str(q), "--truth", str(tmp_path / "q.truth.json"),
                     "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        quotes = read_quotes_csv(q)
        est = fit_cls(quotes, Grid())
        truth = make_kernel(KernelSpec(), Grid())
        assert doc["errors"]["sup_error"] == sup_distance(est.kernel, truth, quotes.max_strike)
        assert doc["errors"]["l2_error"] == l2_distance(est.kernel, truth, quotes.max_strike)
        assert kernel_from_dict(json.loads((tmp_path / "q.truth.json").read_text())).values.tobytes() \
            == truth.values.tobytes()


class TestStudy:
    def write_config(self, tmp_path, **kw):
        cfg = {"N_schedule": [100], "replications": 1, "methods": ["cls", "rme"]}
        cfg.update(kw)
        path = tmp_path / "study.json"
        path.write_text(json.dumps(cfg))
        return path

    def test_one_row_per_method(self, tmp_path):
        cfg = self.write_config(tmp_path)
        prefix = tmp_path / "out" / "s"
        assert main(["study", "--config", str(cfg), "--seed", "0", "--out", str(prefix)]) == 0
        rows = read_rows(tmp_path / "out" / "s.csv")
        assert [r["method"] for r in rows] == ["cls", "rme"]
        assert list(rows[0]) == ["method", "N", "replication", "seed", "lambda", "sup_error", "l2_error",
                                 "objective", "iterations"]
        validate(json.loads((tmp_path / "out" / "s.json").read_text()), "study_summary")
        validate(json.loads((tmp_path / "out" / "s.manifest.json").read_text()), "manifest")

    def test_deterministic(self, tmp_path):
        cfg = self.write_config(tmp_path, N_schedule=[50, 100], replications=2)
        for name in ("a", "b"):
            assert main(["study", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_schema_violation(self, tmp_path):
        cfg = self.write_config(tmp_path, noise={"sigma": -1})
        code, _, err = run("study", "--config", cfg, "--seed", "0", "--out", tmp_path / "s")
        assert code == 2
        assert "noise/sigma" in err

    def test_unknown_field(self, tmp_path):
        cfg = self.write_config(tmp_path, replicatons=3)
        code, _, err = run("study", "--config", cfg, "--seed", "0", "--out", tmp_path / "s")
        assert code == 2 and "replicatons" in err

    def test_seed_required(self, tmp_path):
        cfg = self.write_config(tmp_path)
        code, _, _ = run("study", "--config", cfg, "--out", tmp_path / "s")
        assert code == 2


def test_demo(capsys):
    assert main(["demo", "--alpha", "1", "--beta", "100"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    header, row = lines[0].split("\t"), lines[1].split("\t")
    assert float(row[header.index("amplification")]) == pytest.approx(100, rel=1e-3)


def test_demo_bad_beta():
    code, _, _ = run("demo", "--beta", "1")
    assert code == 2


def test_check(tmp_path):
    code, out, _ = run("check", "--out", tmp_path / "check.json")
    assert code == 0
    assert out.count("PASS") == 6 and "FAIL" not in out


def test_console_script_entry_point():
    p = subprocess.run(["pkernel", "--version"], capture_output=True, text=True)
    assert p.returncode == 0 and p.stdout.startswith("pkernel ")
