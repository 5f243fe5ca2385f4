"""Command line interface.

    tbnn {train|sample|eval|diagnose|analyze|sweep} --config <file>
         [--out <dir>] [--seed <u64>] [--threads <n>]

Commands read one JSON config and write files under --out (default
``tbnn_out``). Everything is a pure function of the config bytes, the input
files and the seed: reruns produce byte-identical outputs.

train     MAP/maximum-likelihood fit; writes map.ckpt and train_log.csv.
sample    posterior chains per temperature-grid cell; one archive directory
          per chain plus sample_summary.json.
eval      per-chain and pooled predictive reports for sampled cells; appends
          rows to curve.csv (schema prior,temperature,seed,error,nll,ece,
          ood_auroc; classification only).
diagnose  split R-hat of loss/potential/log-prior across chains plus
          temperature estimator summaries; diverged chains are excluded.
analyze   weight-statistics reports (marginal fits, Q-Q data, spatial
          covariances, kernel fits, spectra) for checkpoints under --out.
sweep     sample + eval + diagnose over prior_families x temperature_grid,
          with mean/SE aggregation in sweep_summary.csv.

Exit codes: 0 success, 2 config error, 3 data error, 4 divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from . import diagnostics, metrics, weightstats
from .data import Dataset
from .errors import ConfigError, DataError, DivergenceError
from .samplers import chain_seeds, run_chain, sgd_map

CURVE_HEADER = ["prior", "temperature", "seed", "error", "nll", "ece", "ood_auroc"]


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        w.writerows(rows)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def cmd_train(cfg: cfgmod.RunConfig, out: Path, seed: int | None) -> int:
    train, _ = cfgmod.load_datasets(cfg)
    sampler = cfg.sampler if seed is None else replace(cfg.sampler, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    try:
        params, log = sgd_map(sampler, cfg.model, cfg.prior, train)
    except DivergenceError as err:
        _write_json(out / "train_divergence.json", {"error": str(err)})
        raise
    ckpt.write_checkpoint(out / "map.ckpt", params)
    rows = [[r["epoch"], _fmt(r["train_nll_mean"]), _fmt(r["lr"]),
             _fmt(r.get("train_error"))] for r in log]
    _write_csv(out / "train_log.csv", ["epoch", "loss", "lr", "error"], rows)
    print(f"wrote {out / 'map.ckpt'} and train_log.csv ({len(log)} epochs)")
    return 0


def _cell_dir(out: Path, prior: str, temperature: float) -> Path:
    return out / "samples" / prior / f"T{temperature:g}"


def _chain_task(payload):
    model, prior, sampler, train, test, seed, outdir = payload
    archive = run_chain(sampler, model, prior, train, eval_data=test, seed=seed)
    ckpt.write_archive(outdir, archive)
    return {"seed": seed, "dir": str(outdir), "diverged": archive.diverged,
            "n_draws": len(archive.draws), "n_retained": len(archive.retained())}


def _sample_cells(cfg: cfgmod.RunConfig, out: Path, master_seed: int,
                  threads: int, families: list[str]) -> list[dict]:
    train, test = cfgmod.load_datasets(cfg)
    cells = [(fam, t) for fam in families for t in cfg.temperature_grid]
    seeds = chain_seeds(master_seed, len(cells) * cfg.chains)
    tasks, index = [], []
    for i, (fam, t) in enumerate(cells):
        prior = replace(cfg.prior, family=fam)
        sampler = replace(cfg.sampler, temperature=float(t))
        cdir = _cell_dir(out, fam, t)
        for c in range(cfg.chains):
            tasks.append((cfg.model, prior, sampler, train, test,
                          seeds[i * cfg.chains + c], cdir / f"chain_{c:02d}"))
            index.append(i)
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
            results = list(pool.map(_chain_task, tasks))
    else:
        results = [_chain_task(t) for t in tasks]
    for r in results:
        r["dir"] = Path(r["dir"]).relative_to(out).as_posix()
    summary = []
    for i, (fam, t) in enumerate(cells):
        chain_rows = [r for r, j in zip(results, index) if j == i]
        summary.append({"prior": fam, "temperature": float(t), "chains": chain_rows})
    return summary


def cmd_sample(cfg: cfgmod.RunConfig, out: Path, seed: int | None, threads: int) -> int:
    master = cfg.sampler.seed if seed is None else seed
    out.mkdir(parents=True, exist_ok=True)
    summary = _sample_cells(cfg, out, master, threads, [cfg.prior.family])
    _write_json(out / "sample_summary.json", {"master_seed": master, "cells": summary})
    dead = [c for c in summary if all(r["diverged"] for r in c["chains"])]
    for cell in summary:
        n_div = sum(r["diverged"] for r in cell["chains"])
        print(f"{cell['prior']} T={cell['temperature']:g}: "
              f"{len(cell['chains'])} chains, {n_div} diverged")
    if dead:
        raise DivergenceError(f"every chain diverged in {len(dead)} cell(s)")
    return 0


def _load_cell_archives(cell: dict, out: Path) -> list:
    archives = []
    for row in cell["chains"]:
        if not row["diverged"]:
            archives.append((row["seed"], ckpt.read_archive(out / row["dir"])))
    return archives


def _eval_cell(cfg: cfgmod.RunConfig, cell: dict, test: Dataset, ood_x,
               out: Path) -> tuple[list[list], dict]:
    angles = cfg.eval.get("rotation_angles")
    bins = int(cfg.eval.get("ece_bins", 15))
    archives = _load_cell_archives(cell, out)
    if not archives:
        raise DataError(f"cell {cell['prior']} T={cell['temperature']:g} "
                        "has no non-diverged chains to evaluate")
    rows, pooled_draws, reports = [], [], {}
    for seed, archive in archives:
        retained = archive.retained_params()
        if not retained:
            raise DataError(f"archive {seed} has no post-burn-in draws")
        pooled_draws.extend(retained)
        meta = {"prior": cell["prior"], "temperature": cell["temperature"],
                "seed": seed, "chains": 1}
        rep = metrics.evaluate(retained, cfg.model, test.x, test.y, x_ood=ood_x,
                               n_bins=bins, metadata=meta)
        reports[f"chain_seed_{seed}"] = rep.to_dict()
        if cfg.model.task == "classification":
            rows.append([cell["prior"], _fmt(cell["temperature"]), seed,
                         _fmt(rep.error), _fmt(rep.nll), _fmt(rep.ece),
                         _fmt(rep.ood_auroc)])
    pooled = metrics.evaluate(
        pooled_draws, cfg.model, test.x, test.y, x_ood=ood_x,
        rotations=angles if cfg.model.kind == "cnn" or test.x.ndim >= 3 else None,
        n_bins=bins,
        metadata={"prior": cell["prior"], "temperature": cell["temperature"],
                  "seed": [s for s, _ in archives], "chains": len(archives)})
    reports["pooled"] = pooled.to_dict()
    cdir = out / "eval" / cell["prior"] / f"T{cell['temperature']:g}"
    cdir.mkdir(parents=True, exist_ok=True)
    _write_json(cdir / "eval_report.json", reports)
    return rows, reports


def cmd_eval(cfg: cfgmod.RunConfig, out: Path) -> int:
    summary_path = out / "sample_summary.json"
    if not summary_path.exists():
        raise ConfigError(f"{summary_path} not found; run 'tbnn sample' first")
    summary = json.loads(summary_path.read_text())
    _, test = cfgmod.load_datasets(cfg)
    ood_x = cfgmod.load_ood(cfg, test)
    all_rows = []
    for cell in summary["cells"]:
        rows, reports = _eval_cell(cfg, cell, test, ood_x, out)
        all_rows.extend(rows)
        pooled = reports["pooled"]
        shown = [f"{k}={pooled[k]:.4f}" for k in ("error", "nll", "ece", "ood_auroc", "mse")
                 if k in pooled]
        print(f"{cell['prior']} T={cell['temperature']:g}: " + ", ".join(shown))
    if all_rows:
        _write_csv(out / "curve.csv", CURVE_HEADER, all_rows)
    return 0


def _meta_series(archives: list, key: str) -> np.ndarray:
    """[chains, draws] array of one retained-draw meta field."""
    series = [[d.meta[key] for d in a.retained()] for _, a in archives]
    n = min(len(s) for s in series)
    return np.array([s[:n] for s in series], dtype=np.float64)


def _diagnose_cell(cell: dict, out: Path) -> dict:
    excluded = [r["seed"] for r in cell["chains"] if r["diverged"]]
    report: dict = {"prior": cell["prior"], "temperature": cell["temperature"],
                    "chains_used": len(cell["chains"]) - len(excluded),
                    "excluded_diverged_seeds": excluded}
    if report["chains_used"] < 2:
        report["rhat"] = None
        report["note"] = "split R-hat needs at least 2 non-diverged chains; refused"
        return report
    archives = _load_cell_archives(cell, out)
    rhat = {}
    for name, key in (("loss", "train_nll_mean"), ("potential", "potential"),
                      ("log_prior", "log_prior")):
        series = _meta_series(archives, key)
        try:
            rhat[name] = diagnostics.split_rhat(series)
        except ValueError as err:
            rhat[name] = None
            report["note"] = str(err)
    report["rhat"] = rhat
    temps = {}
    for key in ("kinetic_temp", "kinetic_temp_ratio", "config_temp", "config_temp_ratio"):
        series = _meta_series(archives, key)
        temps[key + "_mean"] = float(series.mean()) if series.size else None
    report["temperature_estimates"] = temps
    return report


def cmd_diagnose(cfg: cfgmod.RunConfig, out: Path) -> int:
    summary_path = out / "sample_summary.json"
    if not summary_path.exists():
        raise ConfigError(f"{summary_path} not found; run 'tbnn sample' first")
    summary = json.loads(summary_path.read_text())
    cells = [_diagnose_cell(cell, out) for cell in summary["cells"]]
    _write_json(out / "diagnostics.json", {"cells": cells})
    hard_fail = [c for c in cells if c["rhat"] is None]
    for c in cells:
        if c["rhat"] is None:
            print(f"{c['prior']} T={c['temperature']:g}: {c['note']}")
        else:
            vals = ", ".join(f"{k}={v:.4f}" if v is not None else f"{k}=n/a"
                             for k, v in c["rhat"].items())
            print(f"{c['prior']} T={c['temperature']:g}: R-hat {vals}")
    if len(hard_fail) == len(cells):
        raise ConfigError("no cell had >= 2 non-diverged chains; R-hat refused")
    return 0


def _analyze_checkpoint(path: Path, dest: Path) -> None:
    params = ckpt.read_checkpoint(path)
    dest.mkdir(parents=True, exist_ok=True)
    marg_rows, nu_rows, kern_rows, offdiag = [], [], [], {}
    for name, arr in params.items():
        flat = np.asarray(arr, dtype=np.float64).ravel()
        if flat.size >= 10:
            fits = weightstats.marginal_report(flat)
            for fam, fit in fits.items():
                marg_rows.append([name, fam, _fmt(fit.mu), _fmt(fit.scale),
                                  _fmt(fit.nu), _fmt(fit.loglik), fit.n,
                                  int(fit.converged)])
            st = fits["student_t"]
            nu_rows.append([name, _fmt(st.nu)])
            theo, emp = weightstats.qq_data(flat, st)
            step = max(1, len(theo) // 2000)  # cap emitted Q-Q points
            _write_csv(dest / f"qq_{name}.csv", ["theoretical", "empirical"],
                       [[_fmt(t), _fmt(e)] for t, e in zip(theo[::step], emp[::step])])
        a = np.asarray(arr)
        if a.ndim == 4 and a.shape[0] * a.shape[1] >= 2:
            sc = weightstats.spatial_covariance(a)
            _write_csv(dest / f"cov_{name}.csv", [], [list(map(_fmt, r)) for r in sc.cov])
            _write_csv(dest / f"cov_norm_{name}.csv", [],
                       [list(map(_fmt, r)) for r in sc.normalized])
            for kernel in ("exponential", "squared_exponential"):
                kf = weightstats.fit_kernel_lengthscale(a, kernel=kernel)
                kern_rows.append([name, kernel, _fmt(kf.sigma),
                                  _fmt(kf.lengthscale), _fmt(kf.loglik)])
        if a.ndim == 2 and min(a.shape) >= 2:
            sv = weightstats.singular_values(a)
            _write_csv(dest / f"spectrum_{name}.csv", ["singular_value"],
                       [[_fmt(s)] for s in sv])
            rep = weightstats.offdiag_distribution(a)
            offdiag[name] = {
                "kurtosis_row": rep.kurtosis_row,
                "kurtosis_col": rep.kurtosis_col,
                "baseline_kurtosis_row": rep.baseline_kurtosis_row,
                "baseline_kurtosis_col": rep.baseline_kurtosis_col,
                "kurtosis_ratio_row": rep.kurtosis_ratio_row,
                "kurtosis_ratio_col": rep.kurtosis_ratio_col,
                "baseline_seed": rep.baseline_seed,
            }
    _write_csv(dest / "marginals.csv",
               ["tensor", "family", "mu", "scale", "nu", "loglik", "n", "converged"],
               marg_rows)
    _write_csv(dest / "nu_by_layer.csv", ["tensor", "nu"], nu_rows)
    if kern_rows:
        _write_csv(dest / "kernel_fits.csv",
                   ["tensor", "kernel", "sigma", "lengthscale", "loglik"], kern_rows)
    if offdiag:
        _write_json(dest / "offdiag.json", offdiag)


def _collect_checkpoints(out: Path) -> list[Path]:
    """map.ckpt plus each archive's final draw, newest-indexed only."""
    found = []
    if (out / "map.ckpt").exists():
        found.append(out / "map.ckpt")
    for chain_json in sorted(out.rglob("chain.json")):
        draws = sorted(chain_json.parent.glob("draw_*.ckpt"))
        if draws:
            found.append(draws[-1])
    return found


def cmd_analyze(cfg: cfgmod.RunConfig, out: Path) -> int:
    targets = _collect_checkpoints(out)
    if not targets:
        raise ConfigError(f"no checkpoints under {out}; run 'tbnn train' or 'tbnn sample'")
    for path in targets:
        rel = path.relative_to(out)
        dest = out / "analysis" / str(rel.with_suffix("")).replace("/", "_")
        _analyze_checkpoint(path, dest)
        print(f"analyzed {rel}")
    return 0


def _mean_se(vals: list[float]) -> tuple[float, float]:
    a = np.asarray(vals, dtype=np.float64)
    se = float(a.std(ddof=1) / np.sqrt(len(a))) if len(a) > 1 else 0.0
    return float(a.mean()), se


def cmd_sweep(cfg: cfgmod.RunConfig, out: Path, seed: int | None, threads: int) -> int:
    master = cfg.sampler.seed if seed is None else seed
    families = list(cfg.prior_families) or [cfg.prior.family]
    out.mkdir(parents=True, exist_ok=True)
    summary = _sample_cells(cfg, out, master, threads, families)
    _write_json(out / "sample_summary.json", {"master_seed": master, "cells": summary})
    _, test = cfgmod.load_datasets(cfg)
    ood_x = cfgmod.load_ood(cfg, test)

    all_rows, agg_rows, manifest = [], [], []
    failures = []
    for cell in summary:
        entry = {"prior": cell["prior"], "temperature": cell["temperature"],
                 "dir": _cell_dir(out, cell["prior"], cell["temperature"])
                 .relative_to(out).as_posix()}
        try:
            rows, _ = _eval_cell(cfg, cell, test, ood_x, out)
            all_rows.extend(rows)
            entry["diagnostics"] = _diagnose_cell(cell, out)
            if rows:
                cols = {name: [float(r[i]) for r in rows if r[i] != ""]
                        for i, name in ((3, "error"), (4, "nll"), (5, "ece"), (6, "ood_auroc"))}
                agg = [cell["prior"], _fmt(cell["temperature"]), len(rows)]
                for name in ("error", "nll", "ece", "ood_auroc"):
                    if cols[name]:
                        m, se = _mean_se(cols[name])
                        agg.extend([_fmt(m), _fmt(se)])
                    else:
                        agg.extend(["", ""])
                agg_rows.append(agg)
            entry["status"] = "ok"
        except (DataError, DivergenceError, ConfigError) as err:
            entry["status"] = "failed"
            entry["error"] = str(err)
            failures.append(err)
        manifest.append(entry)
    if all_rows:
        _write_csv(out / "curve.csv", CURVE_HEADER, all_rows)
    if agg_rows:
        _write_csv(out / "sweep_summary.csv",
                   ["prior", "temperature", "n_chains",
                    "error_mean", "error_se", "nll_mean", "nll_se",
                    "ece_mean", "ece_se", "ood_auroc_mean", "ood_auroc_se"],
                   agg_rows)
    _write_json(out / "sweep_manifest.json", {"master_seed": master, "cells": manifest})
    ok = sum(1 for e in manifest if e["status"] == "ok")
    print(f"sweep: {ok}/{len(manifest)} cells ok")
    if ok == 0 and failures:
        raise failures[0]
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="tbnn",
        description="Train, sample and analyze Bayesian neural networks "
                    "with heavy-tailed and correlated priors.")
    parser.add_argument("command",
                        choices=["train", "sample", "eval", "diagnose", "analyze", "sweep"])
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", default="tbnn_out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for chains")
    args = parser.parse_args(argv)

    try:
        cfg = cfgmod.load_config(args.config, seed_override=args.seed)
        out = Path(args.out)
        if args.command == "train":
            return cmd_train(cfg, out, args.seed)
        if args.command == "sample":
            return cmd_sample(cfg, out, args.seed, args.threads)
        if args.command == "eval":
            return cmd_eval(cfg, out)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, out)
        if args.command == "analyze":
            return cmd_analyze(cfg, out)
        return cmd_sweep(cfg, out, args.seed, args.threads)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except DivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
