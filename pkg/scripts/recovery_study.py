#!/usr/bin/env python3
"""Calibrated coverage study: draw true variance components from the initial
priors, simulate, fit one window, and report how often the central 95%
posterior intervals cover the truths.

Usage: python scripts/recovery_study.py [--seeds N] [--iters N]
"""

import argparse
import time

import numpy as np

from metbayes import (
    InitialPriorSpec,
    InvGammaParams,
    InvWishartParams,
    SCALAR_EFFECT_NAMES,
    SamplerConfig,
    SimSpec,
    build_design,
    response_vector,
    run_chains,
    sample_inv_gamma,
    sample_inv_wishart,
    simulate_dataset,
)


def one_seed(seed, init, n_iter):
    rng = np.random.default_rng(777 + seed)
    true_vars = {
        n: float(sample_inv_gamma(InvGammaParams(5, 1), rng))
        for n in SCALAR_EFFECT_NAMES
    }
    true_Sigma = sample_inv_wishart(
        InvWishartParams(10.0, init.wishart_scale_matrix(4)), rng
    )
    data, truth = simulate_dataset(
        SimSpec(
            n_years=6,
            n_zones=4,
            n_locs_per_zone=2,
            n_genotypes=20,
            n_reps=3,
            variances=true_vars,
            Sigma_Z=true_Sigma,
            residual=InvGammaParams(10, 1),
            seed=seed,
        )
    )
    mats = build_design(data)
    priors = init.make_prior_set(zone_count=4, env_keys=mats.env_index.keys())
    cfg = SamplerConfig(
        n_iter=n_iter, burn_in=n_iter // 3, thin=1, n_chains=1, seed=1000 + seed
    )
    sample = run_chains(mats, response_vector(data), priors, cfg)

    hits = {}
    for name in SCALAR_EFFECT_NAMES:
        lo, hi = np.percentile(sample.scalar_marginal(name), [2.5, 97.5])
        hits[f"var_{name}"] = lo <= true_vars[name] <= hi
    d = np.diagonal(sample.Sigma_Z, axis1=1, axis2=2).mean(axis=1)
    lo, hi = np.percentile(d, [2.5, 97.5])
    hits["Sigma_diag_mean"] = lo <= float(np.diag(true_Sigma).mean()) <= hi
    d = sample.sigma2_e.mean(axis=1)
    lo, hi = np.percentile(d, [2.5, 97.5])
    truth_resid = float(np.mean(list(truth.residual_by_env.values())))
    hits["env_mean_var_resid"] = lo <= truth_resid <= hi
    return hits


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--iters", type=int, default=1500)
    args = ap.parse_args()

    init = InitialPriorSpec()
    t0 = time.time()
    per_component = {}
    counts = []
    for seed in range(args.seeds):
        hits = one_seed(seed, init, args.iters)
        counts.append(sum(hits.values()))
        for k, v in hits.items():
            per_component.setdefault(k, []).append(v)
        print(f"seed {seed}: {counts[-1]}/{len(hits)} covered")

    print(f"\nper-component coverage over {args.seeds} seeds:")
    for k, v in per_component.items():
        print(f"  {k:<24} {np.mean(v):.2f}")
    print(f"median covered: {np.median(counts)} of {len(per_component)}")
    print(f"total {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
