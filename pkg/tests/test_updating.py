import json

import numpy as np
import pytest

from metbayes.data import MetDataset, WindowPlan, index_environments, partition_windows
from metbayes.design_matrices import build_design, response_vector
from metbayes.distributions import InvGammaParams, InvWishartParams, sample_inv_gamma, sample_inv_wishart
from metbayes.gibbs import Chain, PosteriorSample, SamplerConfig, run_chains
from metbayes.simulate import SimSpec, simulate_dataset
from metbayes.updating import (
    InitialPriorSpec,
    priors_from_posterior,
    run_bayesian_updating,
)

from conftest import make_rows


def synthetic_sample(
    rng,
    n=20_000,
    scalar_draws=None,
    Sigma_draws=None,
    resid_draws=None,
    env_keys=("Y1|L1",),
):
    scalar_draws = scalar_draws or {}
    names = tuple(scalar_draws)
    K = len(names)
    sigma2 = (
        np.column_stack([scalar_draws[n_] for n_ in names])
        if K
        else np.zeros((n, 0))
    )
    if resid_draws is not None:
        sigma2_e = np.column_stack(resid_draws)
    else:
        sigma2_e = np.column_stack(
            [
                sample_inv_gamma(InvGammaParams(10, 1), rng, size=n)
                for _ in env_keys
            ]
        )
    chain = Chain(
        chain_id=0,
        beta=np.zeros((n, 0)),
        sigma2=sigma2,
        Sigma_Z=Sigma_draws,
        sigma2_e=sigma2_e,
    )
    zones = (
        tuple(f"Z{i+1}" for i in range(Sigma_draws.shape[1]))
        if Sigma_draws is not None
        else ("Z1",)
    )
    return PosteriorSample(
        chains=[chain],
        scalar_names=names,
        env_keys=tuple(env_keys),
        fixed_labels=(),
        zone_labels=zones,
    )


def env_index_for(pairs):
    rows = make_rows([(y, "Z1", c, "G1", 1, 4.0) for (y, c) in pairs])
    return index_environments(MetDataset.from_rows(rows))


class TestInitialPriorSpec:
    def test_default_wishart_has_high_offdiagonal(self):
        spec = InitialPriorSpec()
        S = spec.wishart_scale_matrix(4)
        assert spec.wishart_dof == 10
        assert S[0, 0] == 1.0 and S[0, 1] == 0.9

    def test_identity_scale_preset(self):
        spec = InitialPriorSpec.identity_scale()
        assert spec.wishart_dof == 20
        assert np.array_equal(spec.wishart_scale_matrix(4), np.eye(4))

    def test_scalar_override(self):
        spec = InitialPriorSpec(scalar_overrides={"year": (60.0, 1.0)})
        priors = spec.make_prior_set(("year", "zone_year"), 4, ("Y1|L1",))
        assert priors.scalar["year"].shape == 60.0
        assert priors.scalar["zone_year"].shape == 5.0
        assert priors.residual["Y1|L1"].shape == 10.0

    def test_json_roundtrip(self):
        spec = InitialPriorSpec(scalar_overrides={"year": (7.0, 2.0)})
        assert InitialPriorSpec.from_json_dict(spec.to_json_dict()) == spec


class TestPriorsFromPosterior:
    def test_scalar_self_consistency(self):
        rng = np.random.default_rng(0)
        draws = sample_inv_gamma(InvGammaParams(10, 1), rng, size=100_000)
        sample = synthetic_sample(rng, scalar_draws={"year": draws})
        fitted = priors_from_posterior(sample, env_index_for([("Y1", "L1")]))
        assert abs(fitted.scalar["year"].shape - 10) < 0.3
        assert abs(fitted.scalar["year"].scale - 1) < 0.03

    def test_wishart_dof_recovery(self):
        rng = np.random.default_rng(1)
        S0 = np.eye(4) * 0.5 + 0.1
        draws = sample_inv_wishart(InvWishartParams(40, S0), rng, size=20_000)
        sample = synthetic_sample(
            rng, n=20_000, scalar_draws={"year": draws[:, 0, 0] + 2.0},
            Sigma_draws=draws,
        )
        fitted = priors_from_posterior(sample, env_index_for([("Y1", "L1")]))
        assert abs(fitted.gen_zone.dof - 40) < 2

    def test_residual_mapping_pools_by_location(self):
        rng = np.random.default_rng(2)
        tight = sample_inv_gamma(InvGammaParams(50, 10), rng, size=40_000)
        wide = sample_inv_gamma(InvGammaParams(5, 10), rng, size=40_000)
        sample = synthetic_sample(
            rng,
            n=40_000,
            scalar_draws={"year": tight},
            resid_draws=[tight, wide],
            env_keys=("Y1|L1", "Y1|L2"),
        )
        target = env_index_for([("Y2", "L1"), ("Y2", "L2"), ("Y2", "L9")])
        fitted = priors_from_posterior(
            sample, target, residual_fallback=InvGammaParams(10, 1)
        )
        assert abs(fitted.residual["Y2|L1"].shape - 50) < 5
        assert abs(fitted.residual["Y2|L2"].shape - 5) < 1
        assert fitted.residual["Y2|L9"] == InvGammaParams(10, 1)

    def test_unseen_location_without_fallback_raises(self):
        rng = np.random.default_rng(3)
        draws = sample_inv_gamma(InvGammaParams(10, 1), rng, size=1000)
        sample = synthetic_sample(rng, n=1000, scalar_draws={"year": draws})
        with pytest.raises(KeyError):
            priors_from_posterior(sample, env_index_for([("Y2", "L9")]))

    def test_fitted_params_satisfy_family_invariants(self):
        rng = np.random.default_rng(4)
        S0 = np.eye(4)
        sample = synthetic_sample(
            rng,
            n=5000,
            scalar_draws={
                "year": sample_inv_gamma(InvGammaParams(6, 2), rng, size=5000)
            },
            Sigma_draws=sample_inv_wishart(InvWishartParams(12, S0), rng, size=5000),
            resid_draws=[sample_inv_gamma(InvGammaParams(8, 3), rng, size=5000)],
        )
        fitted = priors_from_posterior(sample, env_index_for([("Y1", "L1")]))
        assert fitted.scalar["year"].shape > 0
        assert fitted.gen_zone.dof > 4 + 1
        np.linalg.cholesky(fitted.gen_zone.scale)


def quick_sim(seed=0, n_years=4):
    return simulate_dataset(
        SimSpec(
            n_years=n_years,
            n_zones=4,
            n_locs_per_zone=2,
            n_genotypes=6,
            n_reps=2,
            Sigma_Z=0.2 * np.eye(4) + 0.05,
            seed=seed,
        )
    )[0]


class TestRunBayesianUpdating:
    def test_single_window_equals_direct_run(self):
        data = quick_sim()
        cfg = SamplerConfig(n_iter=120, burn_in=40, thin=2, n_chains=2, seed=21)
        init = InitialPriorSpec()
        res = run_bayesian_updating([data], init, cfg)
        mats = build_design(data)
        direct = run_chains(
            mats,
            response_vector(data),
            init.make_prior_set(
                zone_count=mats.zone_count, env_keys=mats.env_index.keys()
            ),
            cfg,
        )
        for a, b in zip(res.windows[0].sample.chains, direct.chains):
            assert np.array_equal(a.sigma2, b.sigma2)
            assert np.array_equal(a.Sigma_Z, b.Sigma_Z)
            assert np.array_equal(a.beta, b.beta)

    def test_prior_chaining_is_byte_identical(self):
        data = quick_sim()
        windows = partition_windows(data, WindowPlan((2, 2)))
        cfg = SamplerConfig(n_iter=150, burn_in=50, thin=1, seed=22)
        res = run_bayesian_updating(windows, InitialPriorSpec(), cfg)
        out_json = json.dumps(
            res.windows[0].priors_out.to_json_dict(), sort_keys=True
        )
        in_json = json.dumps(
            res.windows[1].priors_in.to_json_dict(), sort_keys=True
        )
        assert out_json == in_json

    def test_windows_see_only_own_data_and_priors(self):
        data = quick_sim()
        windows = partition_windows(data, WindowPlan((2, 2)))
        cfg = SamplerConfig(n_iter=100, burn_in=20, thin=1, seed=23)
        res = run_bayesian_updating(windows, InitialPriorSpec(), cfg)
        mats2 = build_design(windows[1])
        direct = run_chains(
            mats2, response_vector(windows[1]), res.windows[1].priors_in, cfg
        )
        for a, b in zip(res.windows[1].sample.chains, direct.chains):
            assert np.array_equal(a.sigma2, b.sigma2)

    def test_repeat_runs_are_pure(self):
        data = quick_sim()
        windows = partition_windows(data, WindowPlan((2, 2)))
        cfg = SamplerConfig(n_iter=80, burn_in=20, thin=1, seed=24)
        r1 = run_bayesian_updating(windows, InitialPriorSpec(), cfg)
        r2 = run_bayesian_updating(windows, InitialPriorSpec(), cfg)
        assert json.dumps(r1.final_priors.to_json_dict()) == json.dumps(
            r2.final_priors.to_json_dict()
        )

    def test_sequential_window_concentrates_posterior(self):
        # window-2 data generated at window-1 posterior means: carrying the
        # fitted priors forward should tighten most variance marginals
        cfg = SamplerConfig(n_iter=900, burn_in=300, thin=1, seed=25)
        init = InitialPriorSpec()
        w1 = quick_sim(seed=5, n_years=2)
        first = run_bayesian_updating([w1], init, cfg).windows[0]
        post_means = {
            name: float(np.mean(first.sample.scalar_marginal(name)))
            for name in first.sample.scalar_names
        }
        sigma_mean = first.sample.Sigma_Z.mean(axis=0)
        resid_mean = float(first.sample.sigma2_e.mean())
        w2_spec = SimSpec(
            n_years=2,
            n_zones=4,
            n_locs_per_zone=2,
            n_genotypes=6,
            n_reps=2,
            variances=post_means,
            Sigma_Z=sigma_mean,
            residual=resid_mean,
            seed=6,
        )
        w2_raw, _ = simulate_dataset(w2_spec)
        w2 = MetDataset.from_rows(
            [
                type(r)(
                    year="Y" + str(int(r.year[1:]) + 2),
                    zone=r.zone,
                    location=r.location,
                    genotype=r.genotype,
                    replicate=r.replicate,
                    yield_t_ha=r.yield_t_ha,
                )
                for r in w2_raw.rows
            ]
        )
        res = run_bayesian_updating([w1, w2], init, cfg)

        def widths(sample):
            out = {}
            for name in sample.scalar_names:
                d = sample.scalar_marginal(name)
                out[name] = np.percentile(d, 95) - np.percentile(d, 5)
            d = sample.sigma2_e.mean(axis=1)
            out["mean_resid"] = np.percentile(d, 95) - np.percentile(d, 5)
            return out

        wid1 = widths(res.windows[0].sample)
        wid2 = widths(res.windows[1].sample)
        tighter = sum(wid2[k] < wid1[k] for k in wid1)
        assert tighter >= 6, (wid1, wid2)

    def test_fallback_envs_reported(self):
        rows = []
        for h, locs in (("Y1", ("L1", "L2")), ("Y2", ("L1", "L2")),
                        ("Y3", ("L1", "L3")), ("Y4", ("L1", "L3"))):
            for c in locs:
                for g in ("G1", "G2", "G3"):
                    for r in (1, 2):
                        rows.append((h, "Z1", c, g, r, float(len(c) + r)))
        data = MetDataset.from_rows(make_rows(rows))
        windows = partition_windows(data, WindowPlan((2, 2)))
        cfg = SamplerConfig(n_iter=60, burn_in=20, thin=1, seed=26)
        res = run_bayesian_updating(windows, InitialPriorSpec(), cfg)
        assert res.windows[0].residual_fallback_envs == ()
        fb = res.windows[1].residual_fallback_envs
        assert set(fb) == {"Y3|L3", "Y4|L3"}
        for key in fb:
            assert res.windows[1].priors_in.residual[key] == InitialPriorSpec().residual_prior()
