import json
from pathlib import Path

import pytest

from ergodic_hjb.cli import main
from ergodic_hjb.config import load_config, validate_config
from ergodic_hjb.errors import ConfigError
from ergodic_hjb.pipeline import read_results, run_stages

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


class TestValidation:
    def test_unknown_model(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"model": "no_such_model"})
        assert err.value.key == "model"

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError):
            validate_config({"model": "radial_disk_2d", "extra": 1})

    def test_bad_check_type(self):
        with pytest.raises(ConfigError):
            validate_config({"model": "radial_disk_2d", "checks": [{"type": "magic"}]})

    def test_bad_simulation(self):
        with pytest.raises(ConfigError):
            validate_config({"model": "radial_disk_2d", "simulation": {"dt": -1}})

    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
    def test_shipped_configs_validate(self, name):
        load_config(CONFIGS / name)


class TestPipeline:
    def test_lyapunov_results(self, tmp_path):
        cfg = validate_config({"model": "radial_disk_2d",
                               "checks": [{"type": "lyapunov", "barrier": "neg_log_d", "delta": 0.1}]})
        results, passed = run_stages(cfg, output=tmp_path, timestamp="t0")
        assert passed
        assert results["schema"] == "1"
        assert results["lyapunov"]["neg_log_d"]["passes"] is True
        assert read_results(tmp_path)["lyapunov"]["neg_log_d"]["min_margin"] >= 7.8

    def test_constant_cost_ergodic(self, tmp_path):
        cfg = load_config(CONFIGS / "constant_cost.json")
        results, passed = run_stages(cfg, output=tmp_path, timestamp="t0")
        assert passed
        assert results["solve_ergodic"]["c"] == pytest.approx(-5.0, abs=1e-6)
        assert (tmp_path / results["solve_ergodic"]["field_csv_path"]).exists()
        assert (tmp_path / "figures" / "lambda_trace.png").exists()
        assert (tmp_path / "report.tsv").read_text().startswith("section\tkey\tvalue\n")

    def test_reruns_identical_but_timestamp(self, tmp_path):
        cfg = load_config(CONFIGS / "interval_1d.json")
        run_stages(cfg, output=tmp_path / "a", timestamp="first")
        run_stages(cfg, output=tmp_path / "b", timestamp="second")
        a = (tmp_path / "a" / "results.json").read_text()
        b = (tmp_path / "b" / "results.json").read_text()
        assert a != b
        assert a.replace("first", "X") == b.replace("second", "X")

    def test_expected_failure_counts_as_pass(self, tmp_path):
        cfg = load_config(CONFIGS / "halfplane_counterexample.json")
        results, passed = run_stages(cfg, output=tmp_path, timestamp="t0")
        assert passed
        assert all(c["outcome"] is False for c in results["checks"] if c["expected"] is False)


class TestCli:
    def test_exit_zero_on_pass(self, tmp_path, capsys):
        assert main(["run", "--config", str(CONFIGS / "radial_lyapunov.json"),
                     "--output", str(tmp_path)]) == 0
        assert "PASS\tlyapunov:neg_log_d" in capsys.readouterr().out

    def test_exit_one_on_failed_check(self, tmp_path):
        cfg = write(tmp_path, {"model": "halfplane_counterexample",
                               "checks": [{"type": "lyapunov", "barrier": "neg_log_d",
                                           "delta": 0.01, "density": 256}]})
        assert main(["lyapunov", "--config", str(cfg), "--output", str(tmp_path / "o")]) == 1

    def test_exit_two_on_bad_config(self, tmp_path, capsys):
        cfg = write(tmp_path, {"model": "nope"})
        assert main(["run", "--config", str(cfg), "--output", str(tmp_path / "o")]) == 2
        assert "model" in capsys.readouterr().err

    def test_threads_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ERGODIC_HJB_THREADS", "3")
        assert main(["validate", "--config", str(CONFIGS / "radial_lyapunov.json"),
                     "--output", str(tmp_path)]) == 0
        assert read_results(tmp_path)["threads"] == 3
        monkeypatch.setenv("ERGODIC_HJB_THREADS", "zero")
        assert main(["validate", "--config", str(CONFIGS / "radial_lyapunov.json"),
                     "--output", str(tmp_path)]) == 2

    def test_report_from_existing_results(self, tmp_path):
        main(["run", "--config", str(CONFIGS / "constant_cost.json"), "--output", str(tmp_path)])
        (tmp_path / "figures" / "chi.png").unlink()
        assert main(["report", "--output", str(tmp_path)]) == 0
        assert (tmp_path / "figures" / "chi.png").exists()

    def test_seed_override(self, tmp_path):
        main(["validate", "--config", str(CONFIGS / "interval_1d.json"), "--output", str(tmp_path),
              "--seed", "77"])
        assert read_results(tmp_path)["config"]["simulation"]["seed"] == 77
