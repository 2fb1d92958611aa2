import json
import math

import pytest

from hierpin.cli import main

LOG2 = math.log(2.0)


def read_json(path):
    return json.loads(path.read_text())


class TestAnneal:
    def test_smoke_and_eps_resolution(self, tmp_path):
        rc = main(["anneal", "--B", "3", "--eps", "0.5", "--out", str(tmp_path), "--name", "a"])
        assert rc == 0
        doc = read_json(tmp_path / "a.json")
        assert doc["command"] == "anneal"
        assert doc["results"]["h"] == pytest.approx(math.log(2.5), rel=1e-15)
        assert doc["results"]["eps"] == pytest.approx(0.5, rel=1e-12)
        assert doc["results"]["h_c"] == pytest.approx(LOG2, abs=1e-9)
        assert doc["results"]["h_c_closed"] == LOG2
        header = (tmp_path / "a.csv").read_text().splitlines()[0]
        assert header == "n,log_r,f_n"

    def test_h_and_eps_conflict(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["anneal", "--B", "3", "--h", "0.7", "--eps", "0.5", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_missing_required(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["anneal", "--h", "0.7", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_b_constraint_reported(self, tmp_path, capsys):
        rc = main(["anneal", "--B", "2", "--h", "0.7", "--out", str(tmp_path)])
        assert rc == 2
        assert "B" in capsys.readouterr().err


class TestFe:
    ARGS = ["fe", "--B", "3", "--beta", "0.4", "--h", "0.8", "--disorder", "gaussian",
            "--M", "1000", "--N", "5", "--replicas", "2", "--seed", "9"]

    def test_smoke(self, tmp_path):
        rc = main(self.ARGS + ["--out", str(tmp_path)])
        assert rc == 0
        doc = read_json(tmp_path / "fe.json")
        r = doc["results"]
        assert r["lower"] < r["f_N"] < r["upper"]
        assert len((tmp_path / "fe.csv").read_text().splitlines()) == 7  # header + levels 0..5

    def test_config_roundtrip_is_bit_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(self.ARGS + ["--out", str(a)]) == 0
        assert main(["fe", "--config", str(a / "fe.json"), "--out", str(b)]) == 0
        assert (a / "fe.json").read_bytes() == (b / "fe.json").read_bytes()
        assert (a / "fe.csv").read_bytes() == (b / "fe.csv").read_bytes()

    def test_flag_overrides_config(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(self.ARGS + ["--out", str(a)]) == 0
        assert main(["fe", "--config", str(a / "fe.json"), "--seed", "10", "--out", str(b)]) == 0
        da, db = read_json(a / "fe.json"), read_json(b / "fe.json")
        assert db["config"]["seed"] == 10
        assert da["results"]["f_N"] != db["results"]["f_N"]

    def test_flat_key_value_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("B=3\nbeta=0.4\nh=0.8\ndisorder=gaussian\nM=1000\nN=5\nreplicas=2\nseed=9\n")
        assert main(["fe", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        doc = read_json(tmp_path / "fe.json")
        assert doc["config"]["M"] == 1000 and doc["config"]["beta"] == 0.4

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("B=3\nbogus=1\n")
        with pytest.raises(SystemExit) as exc:
            main(["fe", "--config", str(cfg), "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_workers_do_not_change_outputs(self, tmp_path):
        a, b = tmp_path / "w1", tmp_path / "w3"
        assert main(self.ARGS + ["--out", str(a), "--workers", "1"]) == 0
        assert main(self.ARGS + ["--out", str(b), "--workers", "3"]) == 0
        assert (a / "fe.json").read_bytes() == (b / "fe.json").read_bytes()
        assert (a / "fe.csv").read_bytes() == (b / "fe.csv").read_bytes()

    def test_unknown_disorder_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["fe", "--B", "3", "--beta", "0.4", "--h", "0.8", "--disorder", "cauchy",
                  "--M", "1000", "--N", "5", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_outdir_env_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HIERPIN_OUTDIR", str(tmp_path))
        assert main(self.ARGS) == 0
        assert (tmp_path / "fe.json").exists()


class TestCertify:
    ARGS = ["certify", "--B", "3", "--beta", "0", "--h", str(LOG2 + 0.05),
            "--disorder", "gaussian", "--M", "1000", "--n-max", "20", "--replicas", "2"]

    def test_verdict_and_gate_pass(self, tmp_path):
        rc = main(self.ARGS + ["--require", "Localized", "--out", str(tmp_path)])
        assert rc == 0
        doc = read_json(tmp_path / "certify.json")
        assert doc["results"]["verdict"] == "Localized"
        assert doc["results"]["rigorous"] is True
        assert doc["gates"]["verdict"] is True

    def test_gate_failure_sets_exit_code(self, tmp_path):
        rc = main(self.ARGS + ["--require", "Delocalized", "--out", str(tmp_path)])
        assert rc == 1
        doc = read_json(tmp_path / "certify.json")
        assert doc["gates"]["verdict"] is False

    def test_bad_gamma_grid(self, tmp_path):
        rc = main(self.ARGS + ["--gammas", "0.5", "--out", str(tmp_path)])
        assert rc == 2


class TestHc:
    def test_beta_zero_bracket(self, tmp_path):
        rc = main(["hc", "--B", "3", "--beta", "0", "--disorder", "gaussian",
                   "--M", "1000", "--n-max", "10", "--tol-h", "1e-3", "--out", str(tmp_path)])
        assert rc == 0
        r = read_json(tmp_path / "hc.json")["results"]
        assert r["h_deloc"] == pytest.approx(LOG2 - 1e-3, abs=1e-15)
        assert r["h_loc"] == pytest.approx(LOG2 + 1e-3, abs=1e-15)
        assert r["budget_spent"] == 0


class TestScaling:
    def test_unresolved_refusal_exit_code(self, tmp_path, capsys):
        rc = main(["scaling", "--B", "6", "--betas", "0.5,1.0", "--disorder", "gaussian",
                   "--M", "2000", "--n-max", "5", "--replicas", "2", "--budget", "1",
                   "--out", str(tmp_path)])
        assert rc == 1
        assert "bracket gap" in capsys.readouterr().err

    def test_subcritical_b_rejected(self, tmp_path):
        rc = main(["scaling", "--B", "3", "--betas", "0.5,1.0", "--disorder", "gaussian",
                   "--M", "2000", "--n-max", "5", "--out", str(tmp_path)])
        assert rc == 2


class TestMarginal:
    def test_wrong_b_rejected(self, tmp_path):
        rc = main(["marginal", "--B", "3.4142", "--betas", "0.6", "--disorder", "gaussian",
                   "--M", "100", "--n-max", "5", "--out", str(tmp_path)])
        assert rc == 2

    def test_beta_zero_row(self, tmp_path):
        rc = main(["marginal", "--betas", "0", "--disorder", "gaussian",
                   "--M", "100", "--n-max", "5", "--out", str(tmp_path)])
        assert rc == 0
        rows = read_json(tmp_path / "marginal.json")["results"]["rows"]
        assert rows[0]["beta"] == 0.0 and rows[0]["bound_curve"] == 0.0


class TestTilt:
    def test_gaussian_only(self, tmp_path):
        rc = main(["tilt", "--B", "6", "--beta", "0.8", "--h", str(math.log(5) + 0.1),
                   "--disorder", "rademacher", "--eta", "0.1", "--M", "100",
                   "--out", str(tmp_path)])
        assert rc == 2

    def test_smoke(self, tmp_path):
        rc = main(["tilt", "--B", "6", "--beta", "0.8", "--h", str(math.log(5) + 0.1),
                   "--disorder", "gaussian", "--eta", "0.1", "--M", "500",
                   "--replicas", "2", "--out", str(tmp_path)])
        assert rc == 0
        doc = read_json(tmp_path / "tilt.json")
        assert doc["config"]["n0"] == 2  # annealed excess outgrows 1 at level 2
        assert doc["results"]["kl_closed"] > 0
        assert (tmp_path / "tilt.csv").exists()


class TestExactCheck:
    def test_gates_pass(self, tmp_path):
        rc = main(["exact-check", "--B", "3", "--beta", "0.5", "--h", str(LOG2 + 0.3),
                   "--disorder", "rademacher", "--M", "20000", "--n", "4",
                   "--replicas", "4", "--out", str(tmp_path)])
        assert rc == 0
        doc = read_json(tmp_path / "exact_check.json")
        assert all(doc["gates"].values())

    def test_needs_finite_support(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["exact-check", "--B", "3", "--beta", "0.5", "--h", "0.9",
                  "--disorder", "gaussian", "--M", "1000", "--out", str(tmp_path)])
        assert exc.value.code == 2
