"""Config validation and hashing, campaign artifacts, report, CLI."""

import json

import numpy as np
import pytest

from ermu.campaign import run_campaign
from ermu.cli import main as cli_main
from ermu.config import ExperimentConfig, config_from_dict, load_config
from ermu.errors import ConfigError, InvalidArgumentError
from ermu.matio import load_matrix, save_matrix
from ermu.report import read_trials_csv, write_report
from ermu.seeds import derive_seed

BASE = {
    "master_seed": 31,
    "trials": 3,
    "ladder": [40, 60],
    "families": [
        {"id": "lin", "kind": "linear-independent"},
        {"id": "control", "kind": "control-gaussian"},
    ],
    "problem": {"loss": "huber", "tau": 0.5, "lambda": 0.1},
    "test_risk": {"n_test": 30},
    "bootstrap": {"resamples": 200},
}


def base_config(**overrides) -> ExperimentConfig:
    raw = json.loads(json.dumps(BASE))
    raw.update(overrides)
    return config_from_dict(raw)


class TestSeeds:
    def test_order_and_content_sensitivity(self):
        a = derive_seed(1, "fam", 200, 3)
        assert a == derive_seed(1, "fam", 200, 3)
        assert a != derive_seed(1, "fam", 200, 4)
        assert a != derive_seed(1, 200, "fam", 3)
        assert a != derive_seed(2, "fam", 200, 3)

    def test_string_tags_stable(self):
        assert derive_seed(0, "eps") == derive_seed(0, "eps")
        assert derive_seed(0, "eps") != derive_seed(0, "epz")


class TestMatio:
    def test_roundtrip(self, tmp_path):
        arr = np.arange(12, dtype=float).reshape(3, 4) / 7.0
        path = tmp_path / "m.ermumat"
        save_matrix(path, arr)
        assert np.array_equal(load_matrix(path), arr)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(InvalidArgumentError):
            load_matrix(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "trunc.bin"
        save_matrix(path, np.ones((2, 2)))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(InvalidArgumentError):
            load_matrix(path)

    def test_vector_rejected(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            save_matrix(tmp_path / "v.bin", np.ones(3))


class TestConfig:
    def test_valid_config_parses(self):
        cfg = base_config()
        assert cfg.trials == 3
        assert cfg.families[0].id == "lin"
        assert cfg.problem.lam == 0.1

    def test_empty_ladder_names_field(self):
        with pytest.raises(ConfigError, match="ladder"):
            base_config(ladder=[])

    def test_non_increasing_ladder_rejected(self):
        with pytest.raises(ConfigError, match="ladder"):
            base_config(ladder=[100, 100])

    def test_unknown_top_key_rejected(self):
        with pytest.raises(ConfigError, match="workerz"):
            config_from_dict({**BASE, "workerz": 4})

    def test_unknown_family_key_rejected(self):
        raw = json.loads(json.dumps(BASE))
        raw["families"][0]["actvation"] = "tanh-rf"
        with pytest.raises(ConfigError, match="actvation"):
            config_from_dict(raw)

    def test_unknown_problem_key_rejected(self):
        raw = json.loads(json.dumps(BASE))
        raw["problem"]["los"] = "huber"
        with pytest.raises(ConfigError, match="los"):
            config_from_dict(raw)

    def test_duplicate_family_ids_rejected(self):
        raw = json.loads(json.dumps(BASE))
        raw["families"].append({"id": "lin", "kind": "control-gaussian"})
        with pytest.raises(ConfigError, match="duplicate"):
            config_from_dict(raw)

    def test_negative_ratio_rejected(self):
        raw = json.loads(json.dumps(BASE))
        raw["families"][0]["gamma_p"] = -0.5
        with pytest.raises(ConfigError, match="gamma_p"):
            config_from_dict(raw)

    def test_json_error_carries_line_info(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "master_seed": 1,\n  oops\n}')
        with pytest.raises(ConfigError, match="line 3"):
            load_config(path)

    def test_hash_ignores_whitespace_and_key_order(self, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        a.write_text(json.dumps(BASE, indent=4))
        compact = {k: BASE[k] for k in reversed(list(BASE))}
        b.write_text(json.dumps(compact, separators=(",", ":")))
        assert load_config(a).canonical_hash() == load_config(b).canonical_hash()

    def test_hash_ignores_explicit_defaults(self):
        explicit = json.loads(json.dumps(BASE))
        explicit["threads"] = 1  # the default
        assert config_from_dict(explicit).canonical_hash() == base_config().canonical_hash()

    def test_hash_changes_on_semantic_change(self):
        assert base_config(trials=4).canonical_hash() != base_config().canonical_hash()
        raw = json.loads(json.dumps(BASE))
        raw["problem"]["lambda"] = 0.2
        assert config_from_dict(raw).canonical_hash() != base_config().canonical_hash()

    def test_roundtrip_through_normalized(self):
        cfg = base_config()
        again = config_from_dict(json.loads(json.dumps({
            k: v for k, v in cfg.normalized().items()
        })))
        assert again.canonical_hash() == cfg.canonical_hash()


class TestCampaign:
    def test_rerun_byte_identical(self, tmp_path):
        cfg = base_config()
        run_campaign(cfg, tmp_path / "a", threads=1)
        run_campaign(cfg, tmp_path / "b", threads=1)
        assert (tmp_path / "a/trials.csv").read_bytes() == (tmp_path / "b/trials.csv").read_bytes()

    def test_thread_count_does_not_change_output(self, tmp_path):
        cfg = base_config()
        run_campaign(cfg, tmp_path / "a", threads=1)
        run_campaign(cfg, tmp_path / "b", threads=3)
        assert (tmp_path / "a/trials.csv").read_bytes() == (tmp_path / "b/trials.csv").read_bytes()

    def test_manifest_links_config_hash(self, tmp_path):
        cfg = base_config()
        run_campaign(cfg, tmp_path / "out", threads=1)
        manifest = json.loads((tmp_path / "out/manifest.json").read_text())
        assert manifest["config_hash"] == cfg.canonical_hash()
        assert manifest["quarantined"] == 0
        assert manifest["families"]["control"]["kind"] == "control-gaussian"

    def test_stage_outputs_written_when_enabled(self, tmp_path):
        cfg = base_config(
            ladder=[40],
            free_energy={"enabled": True, "M": 16, "path_points": 4},
            perturbed={"enabled": True, "s_values": [0.1], "n_test": 50},
        )
        run_campaign(cfg, tmp_path / "out", threads=1)
        paths = (tmp_path / "out/free_energy_paths.csv").read_text().splitlines()
        assert paths[0] == "t,f,n,beta,family,seed"
        assert len(paths) == 1 + 4 * 2  # grid points x families
        pert = (tmp_path / "out/perturbed.csv").read_text().splitlines()
        assert pert[0].startswith("family,n,p,seed,s,opt_s,D_s")
        assert len(pert) == 1 + 2 * 2  # +/- s for each family
        checks = json.loads((tmp_path / "out/free_energy_checks.json").read_text())
        assert all(c["sandwich_ok"] and c["monotone_ok"] for c in checks)

    def test_no_partial_files_left_on_failure(self, tmp_path):
        cfg = base_config()
        out = tmp_path / "out"
        run_campaign(cfg, out, threads=1)
        assert not list(out.glob("*.tmp"))

    def test_save_matrices_roundtrip(self, tmp_path):
        cfg = base_config(
            ladder=[40],
            save_matrices=True,
            families=[{"id": "rf", "kind": "random-features", "gamma_d_over_p": 0.5}],
        )
        summary = run_campaign(cfg, tmp_path / "out", threads=1)
        inst = summary.instances[0]
        W = load_matrix(tmp_path / "out/matrices/rf_n40_weights.ermumat")
        assert np.array_equal(W, inst.model.W)
        L = load_matrix(tmp_path / "out/matrices/rf_n40_factor.ermumat")
        assert np.array_equal(L, inst.equiv.factor)


class TestReport:
    def test_report_structure(self, tmp_path):
        cfg = base_config()
        run_campaign(cfg, tmp_path / "out", threads=1)
        report_path = write_report(tmp_path / "out")
        report = json.loads(report_path.read_text())
        assert report["family_order"] == ["lin", "control"]
        lin = report["families"]["lin"]
        assert len(lin["sizes"]) == 2
        for s in lin["sizes"]:
            tg = s["train_gap"]
            assert tg["ci_lo"] <= tg["mean"] <= tg["ci_hi"]
            assert 0.0 <= s["ks"]["statistic"] <= 1.0
        assert "null_calibration" in report["families"]["control"]
        assert (tmp_path / "out/gap_vs_n.csv").exists()

    def test_single_trial_degenerate_ci_flagged(self, tmp_path):
        cfg = base_config(trials=1, ladder=[40])
        run_campaign(cfg, tmp_path / "out", threads=1)
        report = json.loads(write_report(tmp_path / "out").read_text())
        s = report["families"]["lin"]["sizes"][0]
        assert s["train_gap"]["degenerate_ci"]

    def test_missing_csv_reports_filename(self, tmp_path):
        with pytest.raises(InvalidArgumentError, match="trials.csv"):
            write_report(tmp_path)

    def test_corrupt_row_reports_line(self, tmp_path):
        cfg = base_config(trials=1, ladder=[40])
        run_campaign(cfg, tmp_path / "out", threads=1)
        path = tmp_path / "out/trials.csv"
        lines = path.read_text().splitlines()
        lines[1] = lines[1].replace(",", ";", 3)
        path.write_text("\n".join(lines))
        with pytest.raises(InvalidArgumentError, match="line 2"):
            read_trials_csv(path)


class TestSelftest:
    def test_property_suite_passes_within_budget(self, capsys):
        # Budget is five minutes on four cores, asserted loosely at 3x.
        import time

        from ermu.selftest import run_selftest

        t0 = time.monotonic()
        ok = run_selftest(threads=2)
        elapsed = time.monotonic() - t0
        out = capsys.readouterr().out
        assert ok
        assert elapsed < 900.0
        assert out.count("PASS") >= 10


class TestCli:
    def test_run_and_report(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({**BASE, "ladder": [40]}))
        out = tmp_path / "results"
        assert cli_main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert (out / "trials.csv").exists()
        assert cli_main(["report", "--results", str(out)]) == 0
        assert (out / "report.json").exists()

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({**BASE, "ladder": []}))
        assert cli_main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 2
        assert "ladder" in capsys.readouterr().err

    def test_seed_override_changes_outputs(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({**BASE, "ladder": [40]}))
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli_main(["run", "--config", str(cfg_path), "--out", str(a)]) == 0
        assert cli_main(
            ["run", "--config", str(cfg_path), "--out", str(b), "--seed-override", "99"]
        ) == 0
        assert (a / "trials.csv").read_bytes() != (b / "trials.csv").read_bytes()

    def test_env_threads_fallback(self, tmp_path, monkeypatch):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({**BASE, "ladder": [40]}))
        monkeypatch.setenv("ERMU_THREADS", "2")
        out = tmp_path / "env"
        assert cli_main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["threads"] == 2
