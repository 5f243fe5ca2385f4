"""End-to-end command line runs on desk-scale problems."""

import json
from pathlib import Path

import numpy as np
import pytest

from tbnn import checkpoint as ckpt
from tbnn import config as cfgmod
from tbnn import metrics
from tbnn.cli import CURVE_HEADER, main
from tbnn.priors import build_matern_covariance


def _write_config(tmp_path, **over):
    raw = {
        "model": {"in_shape": [2], "out_dim": 2, "hidden": [8]},
        "data": {"kind": "two_gaussians", "n_train": 48, "n_test": 24, "noise": 0.3},
        "sampler": {"seed": 5, "batch_size": 16, "cycles": 4, "epochs_per_cycle": 2,
                    "samples_per_cycle": 1, "noise_epochs": 1, "burn_in_samples": 0,
                    "lr0": 0.05},
        "chains": 2,
        "eval": {"ood_kind": "noise", "ood_n": 24},
    }
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(raw.get(key), dict):
            raw[key].update(val)
        else:
            raw[key] = val
    path = tmp_path / "run.json"
    path.write_text(json.dumps(raw))
    return path


def _file_bytes(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestTrain:
    def test_writes_checkpoint_and_log(self, tmp_path):
        cfg = _write_config(tmp_path)
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "map.ckpt").exists()
        log = (tmp_path / "out" / "train_log.csv").read_text().splitlines()
        assert log[0] == "epoch,loss,lr,error"
        assert len(log) == 451

    def test_separable_set_reaches_zero_train_error(self, tmp_path):
        cfg = _write_config(tmp_path)
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "out")])
        last = (tmp_path / "out" / "train_log.csv").read_text().splitlines()[-1]
        assert last.split(",")[3] == "0.0"

    def test_log_shows_three_stage_schedule(self, tmp_path):
        cfg = _write_config(tmp_path)
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "out")])
        rows = (tmp_path / "out" / "train_log.csv").read_text().splitlines()[1:]
        lrs = [r.split(",")[2] for r in rows]
        assert sorted(set(lrs)) == ["0.0005", "0.005", "0.05"]
        assert lrs[0] == "0.05" and lrs[150] == "0.005" and lrs[300] == "0.0005"

    def test_fixed_seed_gives_identical_checkpoint_bytes(self, tmp_path):
        cfg = _write_config(tmp_path)
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")])
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")])
        assert ((tmp_path / "a" / "map.ckpt").read_bytes()
                == (tmp_path / "b" / "map.ckpt").read_bytes())

    def test_seed_flag_changes_the_fit(self, tmp_path):
        cfg = _write_config(tmp_path)
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")])
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "9"])
        assert ((tmp_path / "a" / "map.ckpt").read_bytes()
                != (tmp_path / "b" / "map.ckpt").read_bytes())

    def test_divergence_recorded_with_exit_4(self, tmp_path):
        cfg = _write_config(
            tmp_path,
            model={"in_shape": [1], "out_dim": 1, "hidden": [8],
                   "task": "regression", "sigma_obs": 1e-6},
            data={"kind": "quadratic_regression", "n_train": 32, "n_test": 16})
        rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert rc == 4
        assert (tmp_path / "out" / "train_divergence.json").exists()


class TestSample:
    def test_archives_reflect_cycle_and_sample_counts(self, tmp_path):
        cfg = _write_config(tmp_path, sampler={"cycles": 2})
        out = tmp_path / "out"
        assert main(["sample", "--config", str(cfg), "--out", str(out)]) == 0
        summary = json.loads((out / "sample_summary.json").read_text())
        cell = summary["cells"][0]
        assert cell["prior"] == "gaussian"
        assert len(cell["chains"]) == 2
        for row in cell["chains"]:
            assert row["n_draws"] == 2
            assert not row["diverged"]
            chain_dir = out / row["dir"]
            assert (chain_dir / "draw_00001.ckpt").exists()
            assert not (chain_dir / "draw_00002.ckpt").exists()

    def test_default_protocol_is_five_chains_of_300_draws(self):
        cfg = cfgmod.parse_config({
            "model": {"in_shape": [2], "out_dim": 2, "hidden": [8]},
            "data": {"kind": "two_gaussians"}})
        assert cfg.chains == 5
        assert cfg.sampler.cycles * cfg.sampler.samples_per_cycle == 300

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = _write_config(tmp_path)
        main(["sample", "--config", str(cfg), "--out", str(tmp_path / "a")])
        main(["sample", "--config", str(cfg), "--out", str(tmp_path / "b")])
        assert _file_bytes(tmp_path / "a") == _file_bytes(tmp_path / "b")

    def test_worker_processes_do_not_change_bytes(self, tmp_path):
        cfg = _write_config(tmp_path)
        main(["sample", "--config", str(cfg), "--out", str(tmp_path / "a")])
        main(["sample", "--config", str(cfg), "--out", str(tmp_path / "b"),
              "--threads", "2"])
        assert _file_bytes(tmp_path / "a") == _file_bytes(tmp_path / "b")

    def test_all_chains_diverging_exits_4(self, tmp_path):
        cfg = _write_config(tmp_path, sampler={"lr0": 1e9})
        out = tmp_path / "out"
        assert main(["sample", "--config", str(cfg), "--out", str(out)]) == 4
        summary = json.loads((out / "sample_summary.json").read_text())
        assert all(r["diverged"] for r in summary["cells"][0]["chains"])


class TestEval:
    def test_curve_schema_and_report(self, tmp_path):
        cfg = _write_config(tmp_path)
        out = tmp_path / "out"
        main(["sample", "--config", str(cfg), "--out", str(out)])
        assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "curve.csv").read_text().splitlines()
        assert lines[0] == ",".join(CURVE_HEADER)
        assert lines[0] == "prior,temperature,seed,error,nll,ece,ood_auroc"
        assert len(lines) == 3  # one row per chain
        report = json.loads((out / "eval" / "gaussian" / "T1" / "eval_report.json")
                            .read_text())
        pooled = report["pooled"]
        assert "ood_auroc" in pooled and "ood_auroc_flipped" in pooled
        assert pooled["ood_auroc"] + pooled["ood_auroc_flipped"] == 1.0
        assert pooled["n_draws"] == 8  # 2 chains x 4 retained draws

    def test_single_draw_report_equals_single_model_metrics(self, tmp_path):
        cfg_path = _write_config(tmp_path, chains=1,
                                 sampler={"cycles": 1, "epochs_per_cycle": 1,
                                          "samples_per_cycle": 1, "noise_epochs": 1})
        out = tmp_path / "out"
        main(["sample", "--config", str(cfg_path), "--out", str(out)])
        main(["eval", "--config", str(cfg_path), "--out", str(out)])
        row = (out / "curve.csv").read_text().splitlines()[1].split(",")

        cfg = cfgmod.load_config(cfg_path)
        _, test = cfgmod.load_datasets(cfg)
        ood = cfgmod.load_ood(cfg, test)
        summary = json.loads((out / "sample_summary.json").read_text())
        chain_dir = out / summary["cells"][0]["chains"][0]["dir"]
        params = ckpt.read_checkpoint(chain_dir / "draw_00000.ckpt")
        rep = metrics.evaluate([params], cfg.model, test.x, test.y, x_ood=ood)
        assert float(row[3]) == rep.error
        assert float(row[4]) == rep.nll
        assert float(row[5]) == rep.ece
        assert float(row[6]) == rep.ood_auroc

    def test_eval_before_sample_is_config_error(self, tmp_path):
        cfg = _write_config(tmp_path)
        assert main(["eval", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2


class TestDiagnose:
    def test_reports_rhat_per_series(self, tmp_path):
        cfg = _write_config(tmp_path)
        out = tmp_path / "out"
        main(["sample", "--config", str(cfg), "--out", str(out)])
        assert main(["diagnose", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "diagnostics.json").read_text())
        cell = report["cells"][0]
        assert cell["chains_used"] == 2
        assert cell["excluded_diverged_seeds"] == []
        for key in ("loss", "potential", "log_prior"):
            assert np.isfinite(cell["rhat"][key])
        assert "kinetic_temp_mean" in cell["temperature_estimates"]

    def test_single_chain_refused(self, tmp_path):
        cfg = _write_config(tmp_path, chains=1)
        out = tmp_path / "out"
        main(["sample", "--config", str(cfg), "--out", str(out)])
        assert main(["diagnose", "--config", str(cfg), "--out", str(out)]) == 2
        report = json.loads((out / "diagnostics.json").read_text())
        assert report["cells"][0]["rhat"] is None
        assert "refused" in report["cells"][0]["note"]

    def test_diverged_chain_excluded_with_notice(self, tmp_path):
        cfg = _write_config(tmp_path, chains=3)
        out = tmp_path / "out"
        main(["sample", "--config", str(cfg), "--out", str(out)])
        summary_path = out / "sample_summary.json"
        summary = json.loads(summary_path.read_text())
        summary["cells"][0]["chains"][0]["diverged"] = True
        bad_seed = summary["cells"][0]["chains"][0]["seed"]
        summary_path.write_text(json.dumps(summary))
        assert main(["diagnose", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "diagnostics.json").read_text())
        cell = report["cells"][0]
        assert cell["chains_used"] == 2
        assert cell["excluded_diverged_seeds"] == [bad_seed]
        assert cell["rhat"]["loss"] is not None


class TestAnalyze:
    def test_trained_checkpoint_smoke(self, tmp_path):
        cfg = _write_config(tmp_path)
        out = tmp_path / "out"
        main(["train", "--config", str(cfg), "--out", str(out)])
        assert main(["analyze", "--config", str(cfg), "--out", str(out)]) == 0
        dest = out / "analysis" / "map"
        assert (dest / "marginals.csv").exists()
        assert (dest / "nu_by_layer.csv").exists()
        assert (dest / "offdiag.json").exists()
        assert list(dest.glob("spectrum_*.csv"))
        assert list(dest.glob("qq_*.csv"))
        marg = (dest / "marginals.csv").read_text().splitlines()
        assert marg[0] == "tensor,family,mu,scale,nu,loglik,n,converged"
        assert len(marg) > 1

    def test_multiple_checkpoints_get_subdirectories(self, tmp_path):
        cfg = _write_config(tmp_path)
        out = tmp_path / "out"
        main(["train", "--config", str(cfg), "--out", str(out)])
        main(["sample", "--config", str(cfg), "--out", str(out)])
        main(["analyze", "--config", str(cfg), "--out", str(out)])
        dirs = sorted(p.name for p in (out / "analysis").iterdir())
        assert "map" in dirs
        assert len([d for d in dirs if "chain" in d]) == 2

    def test_kernel_fit_recovers_generating_lengthscale(self, tmp_path):
        cfg = _write_config(tmp_path)
        out = tmp_path / "out"
        out.mkdir()
        fc = build_matern_covariance(3, 3, 1.0, 1.0)
        rng = np.random.default_rng(0)
        v = rng.standard_normal((1600, 9)) @ fc.chol.T
        ckpt.write_checkpoint(out / "map.ckpt",
                              {"conv.w": v.reshape(40, 40, 3, 3)})
        assert main(["analyze", "--config", str(cfg), "--out", str(out)]) == 0
        rows = (out / "analysis" / "map" / "kernel_fits.csv").read_text().splitlines()
        assert rows[0] == "tensor,kernel,sigma,lengthscale,loglik"
        fits = {r.split(",")[1]: float(r.split(",")[3]) for r in rows[1:]}
        assert 0.85 <= fits["exponential"] <= 1.15
        assert set(fits) == {"exponential", "squared_exponential"}
        cov_rows = (out / "analysis" / "map" / "cov_conv.w.csv").read_text().splitlines()
        assert len(cov_rows) == 9

    def test_no_checkpoints_is_config_error(self, tmp_path):
        cfg = _write_config(tmp_path)
        assert main(["analyze", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2


class TestSweep:
    def test_single_cell(self, tmp_path):
        cfg = _write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "curve.csv").read_text().splitlines()
        assert lines[0] == ",".join(CURVE_HEADER)
        assert len(lines) == 3
        agg = (out / "sweep_summary.csv").read_text().splitlines()
        assert agg[0].startswith("prior,temperature,n_chains,error_mean,error_se")
        assert len(agg) == 2
        assert agg[1].split(",")[2] == "2"

    def test_grid_cells_ordered_and_warm_temperatures_allowed(self, tmp_path):
        cfg = _write_config(tmp_path, prior_families=["gaussian", "laplace"],
                            temperature_grid=[1.0, 1.5], chains=1)
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        manifest = json.loads((out / "sweep_manifest.json").read_text())
        cells = [(c["prior"], c["temperature"]) for c in manifest["cells"]]
        assert cells == [("gaussian", 1.0), ("gaussian", 1.5),
                         ("laplace", 1.0), ("laplace", 1.5)]
        assert all(c["status"] == "ok" for c in manifest["cells"])
        lines = (out / "curve.csv").read_text().splitlines()
        assert len(lines) == 5
        assert (out / "samples" / "laplace" / "T1.5").is_dir()

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = _write_config(tmp_path, temperature_grid=[1.0, 0.5])
        main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a")])
        main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "b")])
        assert _file_bytes(tmp_path / "a") == _file_bytes(tmp_path / "b")


class TestExitCodes:
    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "ghost.json"),
                     "--out", str(tmp_path / "out")]) == 2

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({
            "model": {"in_shape": [2], "out_dim": 2, "hidden": [4]},
            "data": {"kind": "two_gaussians"}, "chians": 3}))
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_malformed_data_file(self, tmp_path):
        (tmp_path / "x.idx").write_bytes(b"\x01\x02\x03\x04garbage")
        for name in ("y.idx", "tx.idx", "ty.idx"):
            (tmp_path / name).write_bytes(b"\x01\x02\x03\x04garbage")
        cfg = _write_config(
            tmp_path,
            model={"in_shape": [9], "out_dim": 2, "hidden": [4]},
            data={"kind": "idx", "train_images": "x.idx", "train_labels": "y.idx",
                  "test_images": "tx.idx", "test_labels": "ty.idx"})
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3

    def test_unknown_command_rejected_by_parser(self, tmp_path):
        cfg = _write_config(tmp_path)
        with pytest.raises(SystemExit):
            main(["frobnicate", "--config", str(cfg)])
