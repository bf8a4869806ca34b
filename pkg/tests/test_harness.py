import json
import os

import numpy as np
import pytest

from wienerdc.errors import ConfigError, DegenerateError
from wienerdc.harness import config as config_mod
from wienerdc.harness import experiments
from wienerdc.harness.cli import main
from wienerdc.harness.config import RunConfig
from wienerdc.harness.experiments import RateTable, fit_rate, run
from wienerdc.harness.io import Progress, csv_body, csv_text, write_outputs

TINY_RATE = """\
kind: breuer-major-rate
phi: H2
model: {kind: iid}
partition: [0.0, 0.5, 1.0]
n_grid: [16, 32, 64, 128]
R: 600
gamma_R: 200
n_boot: 20
dW_R: 64
dW_boot: 2
classes:
  - {kind: halfspace, count: 200}
seed: 7
"""


def tiny(tmp_path, text=TINY_RATE, **changes):
    path = tmp_path / "cfg.yaml"
    path.write_text(text)
    cfg = config_mod.load(str(path))
    cfg.out = str(tmp_path / "out")
    for k, v in changes.items():
        setattr(cfg, k, v)
    return cfg, str(path)


class TestFitRate:
    def test_exact_power_law(self):
        ns = 2 ** np.arange(6, 13)
        fit = fit_rate(ns, ns**-0.5)
        assert abs(fit.slope + 0.5) < 1e-10 and fit.points == 7

    def test_constant(self):
        ns = 2 ** np.arange(6, 13)
        assert abs(fit_rate(ns, np.full(ns.size, 0.3)).slope) < 1e-12

    def test_noisy_synthetic(self):
        ns = 2 ** np.arange(6, 13)
        hits = 0
        for seed in range(100):
            eps = np.random.default_rng(seed).standard_normal(ns.size)
            hits += abs(fit_rate(ns, ns**-0.5 * (1 + 0.1 * eps), n_boot=0).slope + 0.5) <= 0.05
        assert hits >= 95

    def test_nonpositive_dropped(self):
        with pytest.raises(DegenerateError):
            fit_rate([1, 2, 3, 4, 5], [0.1, 0.0, -1.0, 0.05, 0.02])

    def test_ci_covers_slope(self):
        ns = 2 ** np.arange(6, 13)
        eps = np.random.default_rng(1).standard_normal(ns.size)
        fit = fit_rate(ns, ns**-0.5 * (1 + 0.1 * eps))
        assert fit.ci[0] <= fit.slope <= fit.ci[1]

    def test_table_sorted(self):
        rows = [{"model": "iid", "n": n, "dc_lower": n**-0.5} for n in (512, 64, 128, 256)]
        t = RateTable(rows)
        assert [r["n"] for r in t.rows] == [64, 128, 256, 512]
        assert abs(t.fit().slope + 0.5) < 1e-10


class TestConfig:
    def test_defaults_validate(self):
        RunConfig().validate()

    def test_empty_grid_reports_line(self):
        with pytest.raises(ConfigError, match=r"line 2: field 'n_grid'"):
            config_mod.loads("kind: breuer-major-rate\nn_grid: []\n")

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match=r":3: unknown field 'colour'"):
            config_mod.loads("R: 100\nseed: 1\ncolour: red\n", "x.yaml")

    def test_bad_kind(self):
        with pytest.raises(ConfigError, match="kind"):
            config_mod.loads("kind: nonsense\n")

    def test_syntax_error(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            config_mod.loads("R: [1, 2\n")

    def test_degenerate_partition(self):
        with pytest.raises(ConfigError, match="partition"):
            config_mod.loads("partition: [0, 0.01, 1]\nn_grid: [10]\n")

    def test_model_error(self):
        with pytest.raises(ConfigError, match="model"):
            config_mod.loads("model: {kind: ar, phi: 1.5}\n")

    def test_phi_forms(self):
        a = config_mod.parse_phi("H3")
        b = config_mod.parse_phi({"terms": {3: 1.0}})
        assert np.array_equal(a.coeffs, b.coeffs)
        with pytest.raises(ConfigError):
            config_mod.parse_phi("X2")

    def test_hash_ignores_output_location(self):
        a = RunConfig(out="a", workers=1)
        b = RunConfig(out="b", workers=4)
        assert a.content_hash() == b.content_hash()
        assert a.content_hash() != RunConfig(seed=1).content_hash()

    def test_dump_round_trip(self):
        cfg = RunConfig(seed=3, n_grid=[8, 16])
        assert config_mod.loads(config_mod.dumps(cfg)).content_hash() == cfg.content_hash()

    def test_parse_sigma(self):
        assert np.array_equal(config_mod.parse_sigma("1,0;0,2").matrix, np.diag([1.0, 2.0]))
        with pytest.raises(ConfigError):
            config_mod.parse_sigma("1,a")


class TestRun:
    def test_rate_rows_and_determinism(self, tmp_path):
        cfg, _ = tiny(tmp_path)
        a = run(cfg)
        b = run(cfg, workers=2)
        assert [r["n"] for r in a.rows] == [16, 32, 64, 128]
        assert a.fit is not None
        assert csv_body(csv_text(a, "t1")) == csv_body(csv_text(b, "t2"))
        for r in a.rows:
            assert r["sandwich_ok"] and r["schema_version"] == 1

    def test_resume_skips_done_points(self, tmp_path):
        cfg, _ = tiny(tmp_path)
        prog = Progress(cfg.out, cfg)
        first = run(cfg, on_point=prog.add)
        calls = []
        done = Progress(cfg.out, cfg).load()
        assert len(done) == 4
        done.pop(next(iter(done)))
        second = run(cfg, done=done, on_point=lambda k, rows: calls.append(k))
        assert len(calls) == 1
        assert csv_body(csv_text(first)) == csv_body(csv_text(second))

    def test_progress_ignores_other_config(self, tmp_path):
        cfg, _ = tiny(tmp_path)
        Progress(cfg.out, cfg).add("x", [{"n": 1}])
        other = RunConfig(seed=99, out=cfg.out)
        assert Progress(cfg.out, other).load() == {}

    def test_inequality_suite(self, tmp_path):
        cfg = RunConfig(kind="inequality-suite", instances=5, b_grid=[1.0, 1.5, 2.0], out=str(tmp_path))
        res = run(cfg)
        assert len(res.rows) == 15 and not res.failures

    def test_fourth_moment(self, tmp_path):
        cfg = RunConfig(kind="fourth-moment", instances=3, R=400, n_boot=10, max_N=8)
        res = run(cfg)
        assert all(r["identity_ok"] for r in res.rows) and not res.failures

    def test_stein_diagnostic(self):
        cfg = RunConfig(kind="stein-diagnostic", n_grid=[32], R=2000, ts=[0.1, 0.01])
        res = run(cfg)
        assert {r["set"] for r in res.rows} == {"argmax-halfspace", "ball", "orthant"}
        assert not res.failures

    def test_outputs(self, tmp_path):
        cfg = RunConfig(kind="inequality-suite", instances=2, out=str(tmp_path))
        paths = write_outputs(run(cfg), cfg, cfg.out)
        text = open(paths["results.csv"]).read()
        assert text.startswith("# wienerdc inequality-suite generated ")
        assert csv_body(text).splitlines()[0].split(",") == list(experiments.INEQ_FIELDS)
        rec = json.load(open(paths["results.json"]))
        assert rec["schema_version"] == 1 and rec["config_hash"] == cfg.content_hash()
        assert "failures: 0" in open(paths["summary.txt"]).read()

    def test_worker_env(self, monkeypatch):
        monkeypatch.setenv(experiments.WORKERS_ENV, "3")
        assert experiments.worker_count(RunConfig()) == 3
        assert experiments.worker_count(RunConfig(), 2) == 2


class TestCli:
    def test_verify_success(self, tmp_path):
        out = tmp_path / "v"
        assert main(["verify", "--out", str(out)]) == 0
        assert os.path.exists(out / "results.csv")

    def test_config_error_exit(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text("kind: breuer-major-rate\nn_grid: []\n")
        assert main(["rates", "--config", str(p)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_failure_exit(self, tmp_path, monkeypatch):
        real = experiments.inequality_rows

        def broken(cfg, instance, model=None):
            rows = real(cfg, instance, model)
            rows[0]["ok"] = False
            return rows

        monkeypatch.setattr(experiments, "inequality_rows", broken)
        out = tmp_path / "f"
        assert main(["verify", "--out", str(out)]) == 1
        fails = json.load(open(out / "failures.json"))
        assert fails[0]["check"] == "quadruple-sum majorant"

    def test_contract_error_exit(self, tmp_path, capsys):
        cfg, path = tiny(tmp_path)
        assert main(["simulate", "--config", path, "--out", str(tmp_path / "s")]) == 0
        sample = tmp_path / "s" / "samples_n16.csv"
        code = main(["distances", "--config", path, "--samples", str(sample), "--sigma", "1", "--out", str(tmp_path / "d")])
        assert code == 3
        assert "ContractError" in capsys.readouterr().err

    def test_distances_and_bounds(self, tmp_path):
        cfg, path = tiny(tmp_path)
        main(["simulate", "--config", path, "--out", str(tmp_path / "s")])
        s = tmp_path / "s"
        code = main(["distances", "--config", path, "--samples", str(s / "samples_n16.csv"),
                     "--reference", str(s / "samples_n32.csv"), "--sigma", "1,0;0,1", "--out", str(tmp_path / "d")])
        assert code == 0
        rec = json.load(open(tmp_path / "d" / "distances.json"))
        assert set(rec) == {"dc_lower", "d2", "dW"}
        assert main(["bounds", "--config", path, "--gamma-R", "100", "--out", str(tmp_path / "b")]) == 0
        assert os.path.exists(tmp_path / "b" / "bounds.csv")

    def test_rates_resume(self, tmp_path, capsys):
        cfg, path = tiny(tmp_path)
        out = str(tmp_path / "r")
        assert main(["rates", "--config", path, "--out", out]) == 0
        first = csv_body(open(os.path.join(out, "results.csv")).read())
        capsys.readouterr()
        assert main(["rates", "--config", path, "--out", out, "--resume"]) == 0
        assert "resuming: 4 completed point(s) reused" in capsys.readouterr().out
        assert csv_body(open(os.path.join(out, "results.csv")).read()) == first

    def test_seed_override_changes_hash(self, tmp_path):
        cfg, path = tiny(tmp_path)
        out = str(tmp_path / "o")
        main(["verify", "--config", path, "--seed", "11", "--out", out])
        rec = json.load(open(os.path.join(out, "results.json")))
        assert rec["config"]["seed"] == 11 and rec["kind"] == "inequality-suite"

    def test_stein_diag_command(self, tmp_path):
        p = tmp_path / "s.yaml"
        p.write_text("n_grid: [32]\nR: 1000\nts: [0.1]\n")
        assert main(["stein-diag", "--config", str(p), "--out", str(tmp_path / "sd")]) == 0
