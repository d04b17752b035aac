"""Gibbs sampler for the hierarchical yield model.

All full conditionals are conjugate: normals for the fixed and random
effects, inverse gammas for the scalar variance components and the
per-environment residual variances, and an inverse Wishart for the
genotype-zone covariance.  One sweep updates, in order, the fixed effects,
every random-effect block, every scalar variance, the genotype-zone
covariance, and every residual variance.

The per-observation residual covariance is diagonal (one variance per
environment), so its inverse is applied elementwise throughout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .design_matrices import ModelMatrices
from .distributions import (
    InvGammaParams,
    InvWishartParams,
    sample_inv_gamma,
    sample_inv_wishart,
    spd_cholesky,
)


class SingularSystemError(np.linalg.LinAlgError):
    """The fixed-effect normal equations are rank deficient."""


class ChainError(RuntimeError):
    """A conditional update failed; carries chain id and iteration index."""

    def __init__(self, chain_id: int, iteration: int, cause: Exception):
        super().__init__(
            f"chain {chain_id} failed at iteration {iteration}: {cause}"
        )
        self.chain_id = chain_id
        self.iteration = iteration


@dataclass
class ParameterState:
    """One Gibbs state; ``effects[k]`` is the length-``Q_k`` coefficient block."""

    beta: np.ndarray
    effects: list[np.ndarray]
    sigma2: np.ndarray
    Sigma_Z: np.ndarray | None
    sigma2_e: np.ndarray

    @property
    def b_stacked(self) -> np.ndarray:
        return np.concatenate(self.effects) if self.effects else np.zeros(0)


@dataclass(frozen=True)
class PriorSet:
    """Variance-component priors: per scalar effect, genotype-zone, per environment."""

    scalar: dict[str, InvGammaParams]
    gen_zone: InvWishartParams | None
    residual: dict[str, InvGammaParams]

    def to_json_dict(self) -> dict:
        out: dict = {
            "scalar": {
                k: {"shape": p.shape, "scale": p.scale}
                for k, p in self.scalar.items()
            },
            "residual": {
                k: {"shape": p.shape, "scale": p.scale}
                for k, p in self.residual.items()
            },
        }
        if self.gen_zone is not None:
            out["gen_zone"] = {
                "dof": self.gen_zone.dof,
                "scale": self.gen_zone.scale.tolist(),
            }
        return out

    @classmethod
    def from_json_dict(cls, payload: dict) -> "PriorSet":
        gz = payload.get("gen_zone")
        return cls(
            scalar={
                k: InvGammaParams(v["shape"], v["scale"])
                for k, v in payload["scalar"].items()
            },
            gen_zone=None
            if gz is None
            else InvWishartParams(gz["dof"], np.asarray(gz["scale"])),
            residual={
                k: InvGammaParams(v["shape"], v["scale"])
                for k, v in payload["residual"].items()
            },
        )

    def validate_for(self, mats: ModelMatrices) -> None:
        scalar_names = [n for n in mats.effect_names if n != "gen_zone"]
        missing = [n for n in scalar_names if n not in self.scalar]
        if missing:
            raise ValueError(f"missing scalar priors for effects {missing}")
        if mats.gen_zone_index is not None:
            if self.gen_zone is None:
                raise ValueError("model has a gen_zone effect but no matrix prior")
            if self.gen_zone.dim != mats.zone_count:
                raise ValueError(
                    f"gen_zone prior dimension {self.gen_zone.dim} != "
                    f"zone count {mats.zone_count}"
                )
        absent = [k for k in mats.env_index.keys() if k not in self.residual]
        if absent:
            raise ValueError(f"missing residual priors for environments {absent}")


@dataclass(frozen=True)
class SamplerConfig:
    """Chain geometry; retained draws per chain = ceil((n_iter-burn_in)/thin)."""

    n_iter: int
    burn_in: int = 0
    thin: int = 1
    n_chains: int = 1
    seed: int = 0
    store_random_effects: bool = False

    def __post_init__(self):
        if not (self.n_iter > self.burn_in >= 0):
            raise ValueError("need n_iter > burn_in >= 0")
        if self.thin < 1 or self.n_chains < 1:
            raise ValueError("thin and n_chains must be >= 1")

    @property
    def retained_per_chain(self) -> int:
        return -((self.n_iter - self.burn_in) // -self.thin)


@dataclass
class Chain:
    """Retained draws of one chain, one row per retained iteration."""

    chain_id: int
    beta: np.ndarray
    sigma2: np.ndarray
    Sigma_Z: np.ndarray | None
    sigma2_e: np.ndarray
    effects: list[np.ndarray] | None = None

    @property
    def n_retained(self) -> int:
        return self.sigma2.shape[0]


@dataclass
class PosteriorSample:
    """All chains of one sampling run plus the labels needed to read them."""

    chains: list[Chain]
    scalar_names: tuple[str, ...]
    env_keys: tuple[str, ...]
    fixed_labels: tuple[str, ...]
    zone_labels: tuple[str, ...]

    @property
    def n_retained(self) -> int:
        return sum(c.n_retained for c in self.chains)

    @property
    def beta(self) -> np.ndarray:
        return np.concatenate([c.beta for c in self.chains])

    @property
    def sigma2(self) -> np.ndarray:
        return np.concatenate([c.sigma2 for c in self.chains])

    @property
    def Sigma_Z(self) -> np.ndarray | None:
        if self.chains[0].Sigma_Z is None:
            return None
        return np.concatenate([c.Sigma_Z for c in self.chains])

    @property
    def sigma2_e(self) -> np.ndarray:
        return np.concatenate([c.sigma2_e for c in self.chains])

    def scalar_marginal(self, name: str) -> np.ndarray:
        return self.sigma2[:, self.scalar_names.index(name)]

    def parameter_columns(self):
        """Yield ``(label, [per-chain 1-D array, ...])`` for every scalar parameter."""
        for j, lab in enumerate(self.fixed_labels):
            yield f"beta[{lab}]", [c.beta[:, j] for c in self.chains]
        for j, name in enumerate(self.scalar_names):
            yield f"var_{name}", [c.sigma2[:, j] for c in self.chains]
        if self.chains[0].Sigma_Z is not None:
            Z = self.chains[0].Sigma_Z.shape[1]
            for i in range(Z):
                for j in range(i, Z):
                    yield (
                        f"Sigma_gen_zone[{i + 1},{j + 1}]",
                        [c.Sigma_Z[:, i, j] for c in self.chains],
                    )
        for e in range(len(self.env_keys)):
            yield f"var_resid_env[{e + 1}]", [c.sigma2_e[:, e] for c in self.chains]


# ---------------------------------------------------------------------------
# Conjugate posterior-parameter algebra
# ---------------------------------------------------------------------------


def scalar_variance_posterior(
    prior: InvGammaParams, b_k: np.ndarray
) -> InvGammaParams:
    """Inv-Gamma(shape + Q/2, scale + b'b/2) for one scalar variance block."""
    b_k = np.asarray(b_k, dtype=float)
    return InvGammaParams(
        shape=prior.shape + 0.5 * b_k.size,
        scale=prior.scale + 0.5 * float(b_k @ b_k),
    )


def gen_zone_posterior(
    prior: InvWishartParams, b_blocks: np.ndarray
) -> InvWishartParams:
    """Inv-Wishart(dof + M, scale + sum of per-genotype outer products).

    ``b_blocks`` is (M, Z): one zone-vector per genotype.
    """
    b_blocks = np.asarray(b_blocks, dtype=float)
    scale = prior.scale + b_blocks.T @ b_blocks
    return InvWishartParams(
        dof=prior.dof + b_blocks.shape[0], scale=0.5 * (scale + scale.T)
    )


def residual_posterior(
    prior: InvGammaParams, residuals_e: np.ndarray
) -> InvGammaParams:
    """Inv-Gamma(shape + N_e/2, scale + ||residuals||^2 / 2) for one environment."""
    r = np.asarray(residuals_e, dtype=float)
    return InvGammaParams(
        shape=prior.shape + 0.5 * r.size,
        scale=prior.scale + 0.5 * float(r @ r),
    )


# ---------------------------------------------------------------------------
# Full-conditional draws
# ---------------------------------------------------------------------------


def _row_variances(state: ParameterState, mats: ModelMatrices) -> np.ndarray:
    return state.sigma2_e[mats.env_index.row_env]


def _fitted_effects(
    state: ParameterState, mats: ModelMatrices, skip: int | None = None
) -> np.ndarray:
    out = np.zeros(mats.n_obs)
    for j, levels in enumerate(mats.effect_levels):
        if j != skip:
            out += state.effects[j][levels]
    return out


def fixed_effect_moments(state, mats, y):
    """Mean and precision of the fixed-effect conditional (flat prior GLS)."""
    rinv = 1.0 / _row_variances(state, mats)
    y_star = y - _fitted_effects(state, mats)
    Xw = mats.X * rinv[:, None]
    prec = mats.X.T @ Xw
    rhs = Xw.T @ y_star
    try:
        L = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        raise SingularSystemError("fixed-effect design is rank deficient") from None
    mean = solve_triangular(
        L.T, solve_triangular(L, rhs, lower=True), lower=False
    )
    return mean, prec


def cond_fixed_effects(state, mats, y, rng) -> np.ndarray:
    """Draw the fixed effects given everything else."""
    if mats.n_fixed == 0:
        return np.zeros(0)
    mean, prec = fixed_effect_moments(state, mats, y)
    L = np.linalg.cholesky(prec)
    return mean + solve_triangular(
        L.T, rng.standard_normal(mean.size), lower=False
    )


def random_effect_moments(k, state, mats, y):
    """Conditional mean and variance structure of random-effect block ``k``.

    Scalar-variance effects return ``(mean, var)`` vectors (the conditional
    precision is diagonal because incidence columns are disjoint).  The
    genotype-zone effect returns ``(mean, cov)`` with per-genotype blocks of
    shape (M, Z) and (M, Z, Z).
    """
    rinv = 1.0 / _row_variances(state, mats)
    y_k = y - mats.X @ state.beta - _fitted_effects(state, mats, skip=k)
    levels = mats.effect_levels[k]
    Qk = mats.effect_ncols[k]
    if k == mats.gen_zone_index:
        Z = mats.zone_count
        M = Qk // Z
        d = np.bincount(levels, weights=rinv, minlength=Qk).reshape(M, Z)
        rhs = np.bincount(levels, weights=rinv * y_k, minlength=Qk).reshape(M, Z)
        Sig_inv = np.linalg.inv(state.Sigma_Z)
        Sig_inv = 0.5 * (Sig_inv + Sig_inv.T)
        prec = np.broadcast_to(Sig_inv, (M, Z, Z)).copy()
        idx = np.arange(Z)
        prec[:, idx, idx] += d
        cov = np.linalg.inv(prec)
        mean = (cov @ rhs[..., None])[..., 0]
        return mean, cov
    sigma2_k = state.sigma2[_scalar_position(mats, k)]
    prec = np.bincount(levels, weights=rinv, minlength=Qk) + 1.0 / sigma2_k
    mean = np.bincount(levels, weights=rinv * y_k, minlength=Qk) / prec
    return mean, 1.0 / prec


def _scalar_position(mats: ModelMatrices, k: int) -> int:
    # sigma2 is indexed over the scalar effects only (gen_zone excluded)
    gz = mats.gen_zone_index
    return k if gz is None or k < gz else k - 1


def cond_random_effect(k, state, mats, y, rng) -> np.ndarray:
    """Draw random-effect block ``k`` given everything else."""
    if k == mats.gen_zone_index:
        rinv = 1.0 / _row_variances(state, mats)
        y_k = y - mats.X @ state.beta - _fitted_effects(state, mats, skip=k)
        levels = mats.effect_levels[k]
        Qk = mats.effect_ncols[k]
        Z = mats.zone_count
        M = Qk // Z
        d = np.bincount(levels, weights=rinv, minlength=Qk).reshape(M, Z)
        rhs = np.bincount(levels, weights=rinv * y_k, minlength=Qk).reshape(M, Z)
        Sig_inv = np.linalg.inv(state.Sigma_Z)
        Sig_inv = 0.5 * (Sig_inv + Sig_inv.T)
        prec = np.broadcast_to(Sig_inv, (M, Z, Z)).copy()
        idx = np.arange(Z)
        prec[:, idx, idx] += d
        Lp = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, rhs[..., None])
        z = rng.standard_normal((M, Z, 1))
        draw = mean + np.linalg.solve(Lp.transpose(0, 2, 1), z)
        return draw[..., 0].reshape(Qk)
    mean, var = random_effect_moments(k, state, mats, y)
    return mean + rng.standard_normal(mean.size) * np.sqrt(var)


def cond_variance_scalar(k, state, prior: InvGammaParams, rng) -> float:
    """Draw the scalar variance of effect ``k`` from its conjugate conditional."""
    post = scalar_variance_posterior(prior, state.effects[k])
    return float(sample_inv_gamma(post, rng))


def cond_sigma_z(state, prior: InvWishartParams, rng) -> np.ndarray:
    """Draw the genotype-zone covariance from its conjugate conditional.

    The genotype-zone block is the last effect by the fixed ordering; its
    coefficients are genotype-major, so reshaping to (M, Z) recovers the
    per-genotype zone vectors.
    """
    b_blocks = state.effects[-1].reshape(-1, prior.dim)
    post = gen_zone_posterior(prior, b_blocks)
    return sample_inv_wishart(post, rng)


def cond_residual_env(e, state, mats, y, prior: InvGammaParams, rng) -> float:
    """Draw the residual variance of environment ``e``."""
    resid = y - mats.X @ state.beta - _fitted_effects(state, mats)
    post = residual_posterior(prior, resid[mats.env_index.row_env == e])
    return float(sample_inv_gamma(post, rng))


def _update_all_residual_variances(state, mats, y, priors: PriorSet, rng):
    """Vectorized step over all environments; same conditionals as
    :func:`cond_residual_env`, drawn in environment order."""
    resid = y - mats.X @ state.beta - _fitted_effects(state, mats)
    env = mats.env_index.row_env
    E = mats.env_index.n_environments
    ssq = np.bincount(env, weights=resid * resid, minlength=E)
    n_e = np.bincount(env, minlength=E)
    keys = mats.env_index.keys()
    shapes = np.array([priors.residual[k].shape for k in keys]) + 0.5 * n_e
    scales = np.array([priors.residual[k].scale for k in keys]) + 0.5 * ssq
    return 1.0 / rng.gamma(shape=shapes, scale=1.0 / scales)


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------

_INIT_VAR_CLIP = (1e-6, 1e3)


def _clamped_inv_gamma(prior: InvGammaParams, rng, size=None):
    return np.clip(sample_inv_gamma(prior, rng, size=size), *_INIT_VAR_CLIP)


def _initial_state(
    mats: ModelMatrices,
    priors: PriorSet,
    rng: np.random.Generator,
    fixed_residual_variances: np.ndarray | None,
) -> ParameterState:
    """Draw the starting point from the priors (variances clipped to avoid
    the heavy inverse-gamma tails blowing up the first sweep)."""
    scalar_names = [n for n in mats.effect_names if n != "gen_zone"]
    sigma2 = np.array(
        [_clamped_inv_gamma(priors.scalar[n], rng) for n in scalar_names]
    )
    Sigma_Z = None
    if mats.gen_zone_index is not None:
        Sigma_Z = sample_inv_wishart(priors.gen_zone, rng)
        evals, evecs = np.linalg.eigh(Sigma_Z)
        if evals[0] < _INIT_VAR_CLIP[0] or evals[-1] > _INIT_VAR_CLIP[1]:
            evals = np.clip(evals, *_INIT_VAR_CLIP)
            Sigma_Z = (evecs * evals) @ evecs.T
    if fixed_residual_variances is not None:
        sigma2_e = np.asarray(fixed_residual_variances, dtype=float).copy()
    else:
        keys = mats.env_index.keys()
        sigma2_e = np.array(
            [_clamped_inv_gamma(priors.residual[k], rng) for k in keys]
        )
    effects = []
    for k, name in enumerate(mats.effect_names):
        Qk = mats.effect_ncols[k]
        if k == mats.gen_zone_index:
            Z = mats.zone_count
            L = spd_cholesky(Sigma_Z)
            blocks = rng.standard_normal((Qk // Z, Z)) @ L.T
            effects.append(blocks.reshape(Qk))
        else:
            s2 = sigma2[_scalar_position(mats, k)]
            effects.append(rng.standard_normal(Qk) * np.sqrt(s2))
    return ParameterState(
        beta=np.zeros(mats.n_fixed),
        effects=effects,
        sigma2=sigma2,
        Sigma_Z=Sigma_Z,
        sigma2_e=sigma2_e,
    )


def chain_rng(seed: int, chain_id: int) -> np.random.Generator:
    """Independent, reproducible stream for one chain."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain_id,)))


def run_chain(
    mats: ModelMatrices,
    y: np.ndarray,
    priors: PriorSet,
    cfg: SamplerConfig,
    chain_id: int = 0,
    *,
    fixed_residual_variances: np.ndarray | None = None,
    scalar_update_order: Sequence[int] | None = None,
) -> Chain:
    """Run one Gibbs chain and return its retained draws.

    ``fixed_residual_variances`` pins the residual variances (their update
    step is skipped); ``scalar_update_order`` permutes the scalar-variance
    update order.  Both are study hooks and default to the standard sweep.
    """
    priors.validate_for(mats)
    y = np.asarray(y, dtype=float)
    rng = chain_rng(cfg.seed, chain_id)
    state = _initial_state(mats, priors, rng, fixed_residual_variances)

    scalar_idx = [
        k for k, n in enumerate(mats.effect_names) if n != "gen_zone"
    ]
    if scalar_update_order is not None:
        if sorted(scalar_update_order) != sorted(scalar_idx):
            raise ValueError("scalar_update_order must permute the scalar effects")
        scalar_idx = list(scalar_update_order)

    R = cfg.retained_per_chain
    K = len(scalar_idx)
    E = mats.env_index.n_environments
    out_beta = np.empty((R, mats.n_fixed))
    out_sigma2 = np.empty((R, K))
    out_Sigma = (
        np.empty((R, mats.zone_count, mats.zone_count))
        if mats.gen_zone_index is not None
        else None
    )
    out_sigma2_e = np.empty((R, E))
    out_effects = (
        [np.empty((R, q)) for q in mats.effect_ncols]
        if cfg.store_random_effects
        else None
    )

    r = 0
    for t in range(1, cfg.n_iter + 1):
        try:
            if mats.n_fixed:
                state.beta = cond_fixed_effects(state, mats, y, rng)
            for k in range(len(mats.effect_names)):
                state.effects[k] = cond_random_effect(k, state, mats, y, rng)
            for k in scalar_idx:
                pos = _scalar_position(mats, k)
                prior = priors.scalar[mats.effect_names[k]]
                state.sigma2[pos] = cond_variance_scalar(k, state, prior, rng)
            if mats.gen_zone_index is not None:
                state.Sigma_Z = cond_sigma_z(state, priors.gen_zone, rng)
            if fixed_residual_variances is None:
                state.sigma2_e = _update_all_residual_variances(
                    state, mats, y, priors, rng
                )
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            raise ChainError(chain_id, t, exc) from exc
        if t > cfg.burn_in and (t - cfg.burn_in - 1) % cfg.thin == 0:
            out_beta[r] = state.beta
            out_sigma2[r] = state.sigma2
            if out_Sigma is not None:
                out_Sigma[r] = state.Sigma_Z
            out_sigma2_e[r] = state.sigma2_e
            if out_effects is not None:
                for k in range(len(mats.effect_names)):
                    out_effects[k][r] = state.effects[k]
            r += 1
    assert r == R
    return Chain(
        chain_id=chain_id,
        beta=out_beta,
        sigma2=out_sigma2,
        Sigma_Z=out_Sigma,
        sigma2_e=out_sigma2_e,
        effects=out_effects,
    )


def run_chains(
    mats: ModelMatrices,
    y: np.ndarray,
    priors: PriorSet,
    cfg: SamplerConfig,
    *,
    threads: int = 1,
) -> PosteriorSample:
    """Run ``cfg.n_chains`` chains on independent streams and merge them.

    The merged sample concatenates the post-burn-in thinned draws of all
    chains in chain order; with the paper-style geometry (4 chains, 2500
    retained each) that is a merged size of 10000.
    """
    if threads > 1 and cfg.n_chains > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            chains = list(
                pool.map(
                    lambda c: run_chain(mats, y, priors, cfg, chain_id=c),
                    range(cfg.n_chains),
                )
            )
    else:
        chains = [
            run_chain(mats, y, priors, cfg, chain_id=c)
            for c in range(cfg.n_chains)
        ]
    scalar_names = tuple(n for n in mats.effect_names if n != "gen_zone")
    return PosteriorSample(
        chains=chains,
        scalar_names=scalar_names,
        env_keys=mats.env_index.keys(),
        fixed_labels=mats.fixed_labels,
        zone_labels=mats.zone_labels,
    )


def write_posterior_csv(sample: PosteriorSample, path) -> None:
    """Write retained draws as columnar CSV: chain, iteration, one column per
    scalar parameter (floats via ``repr`` for byte-stable reruns)."""
    columns = list(sample.parameter_columns())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "iteration"] + [lab for lab, _ in columns])
        for ci, chain in enumerate(sample.chains):
            for r in range(chain.n_retained):
                row = [str(ci + 1), str(r + 1)]
                row.extend(repr(float(cols[ci][r])) for _, cols in columns)
                writer.writerow(row)


def read_posterior_csv(path):
    """Read a posterior CSV back into ``(labels, per-chain column arrays)``.

    Returns ``(labels, chains)`` where ``chains[c]`` is a 2-D array with one
    column per label.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        labels = header[2:]
        by_chain: dict[int, list[list[float]]] = {}
        for rec in reader:
            by_chain.setdefault(int(rec[0]), []).append(
                [float(v) for v in rec[2:]]
            )
    chains = [np.array(by_chain[c]) for c in sorted(by_chain)]
    return labels, chains
