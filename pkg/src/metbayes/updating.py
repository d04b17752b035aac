"""Multi-window updating: fit a window, refit variance-component priors by
maximum likelihood, and carry them into the next window.

Only the variance-component posterior information crosses windows: scalar
variances and residual variances as fitted inverse gammas, the genotype-zone
covariance as a fitted inverse Wishart.  Random effects stay zero-mean
normals driven by those carried variances, and fixed effects stay flat, so
each window's likelihood sees only its own data.

Environments are year-by-location pairs and never recur across disjoint
year windows, so fitted residual posteriors are pooled by location: a new
environment inherits the fit of its location from the previous window, and
locations never seen before fall back to the initial residual prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import EnvironmentIndex, MetDataset
from .design_matrices import (
    SCALAR_EFFECT_NAMES,
    ModelMatrices,
    build_design,
    response_vector,
)
from .diagnostics import DiagnosticsReport, DiagnosticThresholds, diagnose_sample
from .distributions import (
    InvGammaParams,
    InvWishartParams,
    fit_inv_gamma_mle,
    fit_inv_wishart_mle,
)
from .gibbs import PosteriorSample, PriorSet, SamplerConfig, run_chains


@dataclass(frozen=True)
class InitialPriorSpec:
    """First-window priors: weakly informative defaults, overridable per effect.

    The default genotype-zone prior has 10 degrees of freedom with unit
    diagonal and 0.9 off-diagonals; :meth:`identity_scale` gives the variant
    with an identity scale matrix and 20 degrees of freedom.  Scalar effects
    default to Inv-Gamma(5, 1); residual variances to Inv-Gamma(10, 1).
    Per-effect overrides support stronger shapes where a component needs
    more regularization.
    """

    scalar_shape: float = 5.0
    scalar_scale: float = 1.0
    scalar_overrides: dict = field(default_factory=dict)
    wishart_dof: float = 10.0
    wishart_diag: float = 1.0
    wishart_offdiag: float = 0.9
    residual_shape: float = 10.0
    residual_scale: float = 1.0

    @classmethod
    def identity_scale(cls, dof: float = 20.0) -> "InitialPriorSpec":
        return cls(wishart_dof=dof, wishart_diag=1.0, wishart_offdiag=0.0)

    def wishart_scale_matrix(self, zone_count: int) -> np.ndarray:
        S = np.full((zone_count, zone_count), self.wishart_offdiag)
        np.fill_diagonal(S, self.wishart_diag)
        return S

    def residual_prior(self) -> InvGammaParams:
        return InvGammaParams(self.residual_shape, self.residual_scale)

    def make_prior_set(
        self,
        scalar_names=SCALAR_EFFECT_NAMES,
        zone_count: int | None = None,
        env_keys=(),
    ) -> PriorSet:
        scalar = {}
        for name in scalar_names:
            shape, scale = self.scalar_overrides.get(
                name, (self.scalar_shape, self.scalar_scale)
            )
            scalar[name] = InvGammaParams(shape, scale)
        gen_zone = None
        if zone_count is not None:
            gen_zone = InvWishartParams(
                self.wishart_dof, self.wishart_scale_matrix(zone_count)
            )
        residual = {k: self.residual_prior() for k in env_keys}
        return PriorSet(scalar=scalar, gen_zone=gen_zone, residual=residual)

    def to_json_dict(self) -> dict:
        return {
            "scalar_shape": self.scalar_shape,
            "scalar_scale": self.scalar_scale,
            "scalar_overrides": {
                k: list(v) for k, v in self.scalar_overrides.items()
            },
            "wishart_dof": self.wishart_dof,
            "wishart_diag": self.wishart_diag,
            "wishart_offdiag": self.wishart_offdiag,
            "residual_shape": self.residual_shape,
            "residual_scale": self.residual_scale,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "InitialPriorSpec":
        payload = dict(payload)
        payload["scalar_overrides"] = {
            k: tuple(v) for k, v in payload.get("scalar_overrides", {}).items()
        }
        return cls(**payload)


def _location_of(env_key: str) -> str:
    return env_key.split("|", 1)[1]


def priors_from_posterior(
    sample: PosteriorSample,
    env_index: EnvironmentIndex,
    *,
    residual_fallback: InvGammaParams | None = None,
) -> PriorSet:
    """Fit variance-component priors from a posterior sample by ML.

    ``env_index`` names the environments the returned residual priors must
    cover (typically the next window's).  Residual draws are pooled by
    location before fitting; environments at locations absent from the
    sample use ``residual_fallback`` or raise if none is given.
    """
    scalar = {
        name: fit_inv_gamma_mle(sample.scalar_marginal(name))
        for name in sample.scalar_names
    }
    gen_zone = None
    if sample.Sigma_Z is not None:
        gen_zone = fit_inv_wishart_mle(sample.Sigma_Z)

    draws_by_loc: dict[str, list[np.ndarray]] = {}
    for e, key in enumerate(sample.env_keys):
        draws_by_loc.setdefault(_location_of(key), []).append(
            sample.sigma2_e[:, e]
        )
    fit_by_loc = {
        loc: fit_inv_gamma_mle(np.concatenate(cols))
        for loc, cols in draws_by_loc.items()
    }
    residual = {}
    for key in env_index.keys():
        loc = _location_of(key)
        if loc in fit_by_loc:
            residual[key] = fit_by_loc[loc]
        elif residual_fallback is not None:
            residual[key] = residual_fallback
        else:
            raise KeyError(
                f"no fitted residual prior for location {loc!r} and no fallback"
            )
    return PriorSet(scalar=scalar, gen_zone=gen_zone, residual=residual)


@dataclass
class WindowResult:
    """Everything produced by one window of the updating run."""

    window_index: int
    years: tuple[str, ...]
    env_keys: tuple[str, ...]
    priors_in: PriorSet
    sample: PosteriorSample
    priors_out: PriorSet
    diagnostics: DiagnosticsReport
    residual_fallback_envs: tuple[str, ...] = ()


@dataclass
class UpdatingResult:
    windows: list[WindowResult]

    @property
    def final_priors(self) -> PriorSet:
        return self.windows[-1].priors_out


def run_bayesian_updating(
    windows: list[MetDataset],
    init: InitialPriorSpec,
    cfg: SamplerConfig,
    *,
    thresholds: DiagnosticThresholds | None = None,
    threads: int = 1,
) -> UpdatingResult:
    """Sample each window in order, carrying fitted priors forward.

    Window 1 uses the initial priors; window l+1 uses the priors fitted from
    window l's posterior (the exact same objects, so the chain of priors is
    reproducible byte-for-byte when serialized).  The last window's fitted
    priors are mapped onto its own environments for downstream use.
    """
    if not windows:
        raise ValueError("need at least one window")
    results: list[WindowResult] = []
    prepared: list[tuple[ModelMatrices, np.ndarray]] = [
        (build_design(w), response_vector(w)) for w in windows
    ]
    priors_in: PriorSet | None = None
    fallback_envs: tuple[str, ...] = ()
    for l, (mats, y) in enumerate(prepared):
        if l == 0:
            priors_in = init.make_prior_set(
                scalar_names=tuple(
                    n for n in mats.effect_names if n != "gen_zone"
                ),
                zone_count=mats.zone_count,
                env_keys=mats.env_index.keys(),
            )
        sample = run_chains(mats, y, priors_in, cfg, threads=threads)
        diag = diagnose_sample(sample, thresholds)
        next_env = (
            prepared[l + 1][0].env_index
            if l + 1 < len(prepared)
            else mats.env_index
        )
        priors_out = priors_from_posterior(
            sample, next_env, residual_fallback=init.residual_prior()
        )
        results.append(
            WindowResult(
                window_index=l + 1,
                years=windows[l].years,
                env_keys=mats.env_index.keys(),
                priors_in=priors_in,
                sample=sample,
                priors_out=priors_out,
                diagnostics=diag,
                residual_fallback_envs=fallback_envs,
            )
        )
        if l + 1 < len(prepared):
            seen_locs = {_location_of(k) for k in mats.env_index.keys()}
            fallback_envs = tuple(
                k
                for k in prepared[l + 1][0].env_index.keys()
                if _location_of(k) not in seen_locs
            )
            priors_in = priors_out
    return UpdatingResult(windows=results)
