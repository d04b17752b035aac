"""Command-line entry points: fit, design, simulate, diagnose.

Every command is reproducible from (config, seed): reruns write
byte-identical artifacts.  A fit run directory contains a manifest (the
resolved config), one subdirectory per window with the priors going in, the
posterior draws, the fitted priors coming out, and the convergence report,
plus a copy of the final fitted priors for the design stage.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config, save_config
from .data import load_met_csv, partition_windows, write_met_csv
from .diagnostics import diagnose_columns
from .gibbs import PriorSet, write_posterior_csv, read_posterior_csv
from .optimal_design import (
    build_design_inputs,
    components_from_prior_means,
    evaluate_design,
    posterior_design_summary,
)
from .simulate import simulate_dataset
from .updating import run_bayesian_updating


def _write_json(path: Path, text: str) -> None:
    path.write_text(text + "\n")


def _priors_json(priors: PriorSet) -> str:
    return json.dumps(priors.to_json_dict(), indent=2, sort_keys=True)


def cmd_fit(config: RunConfig, *, seed=None, out=None, threads=1) -> Path:
    """Load, window, run the updating pipeline, persist per-window artifacts."""
    out_dir = Path(out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_met_csv(
        config.data_csv,
        schema=config.schema or None,
        filters=config.filters or None,
    )
    plan = config.plan()
    windows = partition_windows(data, plan)
    cfg = config.sampler_config(seed)
    result = run_bayesian_updating(
        windows,
        config.prior_spec(),
        cfg,
        thresholds=config.diagnostic_thresholds(),
        threads=threads,
    )
    manifest = {
        "tool": f"metbayes {__version__}",
        "command": "fit",
        "seed": cfg.seed,
        "window_plan": list(plan.window_year_counts),
        "window_years": [list(w.years) for w in result.windows],
        "config": json.loads(config.to_json()),
    }
    _write_json(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    for w in result.windows:
        wdir = out_dir / f"window_{w.window_index:02d}"
        wdir.mkdir(exist_ok=True)
        _write_json(wdir / "priors_in.json", _priors_json(w.priors_in))
        _write_json(wdir / "priors_out.json", _priors_json(w.priors_out))
        write_posterior_csv(w.sample, wdir / "posterior.csv")
        _write_json(wdir / "diagnostics.json", w.diagnostics.to_json())
        if w.residual_fallback_envs:
            print(
                f"window {w.window_index}: initial residual prior used for "
                f"new environments {list(w.residual_fallback_envs)}"
            )
    _write_json(out_dir / "final_priors.json", _priors_json(result.final_priors))
    print(f"fit: {len(result.windows)} windows written to {out_dir}")
    return out_dir


def cmd_design(config: RunConfig, priors_path, *, seed=None, out=None) -> Path:
    """Emit point-estimate and posterior-averaged design tables as CSV."""
    priors_path = Path(priors_path)
    if not priors_path.exists():
        raise FileNotFoundError(f"fitted priors not found at {priors_path}")
    priors = PriorSet.from_json_dict(json.loads(priors_path.read_text()))
    out_dir = Path(out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_rep = int(config.design["n_rep"])
    n_draws = int(config.design["n_draws"])
    rng = np.random.default_rng(
        seed if seed is not None else config.sampler["seed"]
    )
    plugin_rows = []
    posterior_rows = []
    for H, J in config.design_grid():
        vc = components_from_prior_means(priors)
        res = evaluate_design(build_design_inputs(vc, H, J, n_rep))
        plugin_rows.append(
            [H, J]
            + [round(float(v), 6) for v in res.design.weights]
            + [round(res.eff_a, 6), round(res.mse_tr, 6)]
        )
        summary = posterior_design_summary(priors, H, J, n_rep, n_draws, rng)
        row = [H, J]
        for m, s in zip(summary.weight_means, summary.weight_sds):
            row += [round(float(m), 6), round(float(s), 6)]
        row += [
            round(summary.eff_mean, 6),
            round(summary.eff_sd, 6),
            round(summary.mse_mean, 6),
            round(summary.mse_sd, 6),
        ]
        posterior_rows.append(row)

    Z = priors.gen_zone.dim
    plugin_path = out_dir / "design_plugin.csv"
    with open(plugin_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["H", "J"] + [f"w{z + 1}" for z in range(Z)] + ["eff_a", "mse_tr"]
        )
        writer.writerows(plugin_rows)
    posterior_path = out_dir / "design_posterior.csv"
    with open(posterior_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        head = ["H", "J"]
        for z in range(Z):
            head += [f"w{z + 1}_mean", f"w{z + 1}_sd"]
        head += ["eff_a_mean", "eff_a_sd", "mse_tr_mean", "mse_tr_sd"]
        writer.writerow(head)
        writer.writerows(posterior_rows)
    print(f"design: tables written to {plugin_path} and {posterior_path}")
    return out_dir


def cmd_simulate(config: RunConfig, *, seed=None, out=None) -> Path:
    """Generate a synthetic dataset CSV plus its truth record."""
    out_dir = Path(out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = config.sim_spec(seed)
    data, truth = simulate_dataset(spec)
    csv_path = out_dir / "simulated.csv"
    write_met_csv(data, csv_path)
    _write_json(out_dir / "simulated_truth.json", truth.to_json())
    print(f"simulate: {len(data)} rows written to {csv_path}")
    return out_dir


def cmd_diagnose(run_dir, *, thresholds=None) -> bool:
    """Print per-parameter convergence tables for every window of a run."""
    run_dir = Path(run_dir)
    posterior_files = sorted(run_dir.glob("window_*/posterior.csv"))
    if not posterior_files:
        single = run_dir / "posterior.csv"
        if single.exists():
            posterior_files = [single]
        else:
            raise FileNotFoundError(f"no posterior.csv under {run_dir}")
    all_ok = True
    for pf in posterior_files:
        labels, chains = read_posterior_csv(pf)
        columns = [
            (lab, [c[:, j] for c in chains]) for j, lab in enumerate(labels)
        ]
        report = diagnose_columns(columns, thresholds)
        print(f"== {pf.parent.name or pf.name} ==")
        print(report.table())
        all_ok = all_ok and report.all_passed
    return all_ok


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="metbayes",
        description=(
            "Bayesian variance-component updating and A-optimal trial "
            "allocation for multi-environment trials"
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="windowed posterior sampling run")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument("--out")
    p_fit.add_argument("--threads", type=int, default=1)

    p_design = sub.add_parser("design", help="design tables from fitted priors")
    p_design.add_argument("--config", required=True)
    p_design.add_argument("--priors", required=True)
    p_design.add_argument("--seed", type=int)
    p_design.add_argument("--out")

    p_sim = sub.add_parser("simulate", help="synthetic dataset + truth record")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--out")

    p_diag = sub.add_parser("diagnose", help="convergence report for a run")
    p_diag.add_argument("run_dir")

    p_init = sub.add_parser("init-config", help="write a default config file")
    p_init.add_argument("path")

    args = parser.parse_args(argv)
    try:
        if args.command == "init-config":
            save_config(RunConfig(), args.path)
            print(f"default config written to {args.path}")
            return 0
        if args.command == "diagnose":
            cmd_diagnose(args.run_dir)
            return 0
        config = load_config(args.config)
        if args.command == "fit":
            cmd_fit(config, seed=args.seed, out=args.out, threads=args.threads)
        elif args.command == "design":
            cmd_design(config, args.priors, seed=args.seed, out=args.out)
        elif args.command == "simulate":
            cmd_simulate(config, seed=args.seed, out=args.out)
        return 0
    except Exception as exc:  # surface module + context, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
