"""Synthetic MET datasets with known parameters for recovery studies.

Every random effect of the yield decomposition is drawn once per level from
its normal law (the genotype-zone blocks from the matrix-covariance normal),
summed per observation, and emitted as a tidy dataset alongside a truth
record holding everything that was drawn.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import MetDataset, ObservationRow
from .design_matrices import SCALAR_EFFECT_NAMES
from .distributions import InvGammaParams, sample_inv_gamma, spd_cholesky

DEFAULT_VARIANCES = {name: 0.1 for name in SCALAR_EFFECT_NAMES}


@dataclass(frozen=True)
class SimSpec:
    """Counts, true fixed effects, and true variance components.

    ``residual`` is either a single variance shared by all environments or
    an :class:`InvGammaParams` rule drawing one variance per environment,
    mirroring real heterogeneity between year-location combinations.
    ``zeta`` holds per-zone offsets (length ``n_zones``).
    """

    n_years: int = 6
    n_zones: int = 4
    n_locs_per_zone: int = 2
    n_genotypes: int = 20
    n_reps: int = 3
    mu: float = 5.0
    zeta: tuple[float, ...] | None = None
    variances: dict = field(default_factory=lambda: dict(DEFAULT_VARIANCES))
    Sigma_Z: np.ndarray | None = None
    residual: float | InvGammaParams = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(
            self.n_years,
            self.n_zones,
            self.n_locs_per_zone,
            self.n_genotypes,
            self.n_reps,
        ) < 1:
            raise ValueError("all counts must be >= 1")
        missing = [n for n in SCALAR_EFFECT_NAMES if n not in self.variances]
        if missing:
            raise ValueError(f"missing variances for effects {missing}")
        if any(v < 0 for v in self.variances.values()):
            raise ValueError("variances must be >= 0")
        if isinstance(self.residual, (int, float)) and self.residual < 0:
            raise ValueError("residual variance must be >= 0")

    def zone_offsets(self) -> np.ndarray:
        if self.zeta is None:
            return np.zeros(self.n_zones)
        z = np.asarray(self.zeta, dtype=float)
        if z.size != self.n_zones:
            raise ValueError("zeta must have one entry per zone")
        return z

    def gen_zone_cov(self) -> np.ndarray:
        if self.Sigma_Z is None:
            return np.zeros((self.n_zones, self.n_zones))
        S = np.asarray(self.Sigma_Z, dtype=float)
        if S.shape != (self.n_zones, self.n_zones):
            raise ValueError("Sigma_Z must be n_zones x n_zones")
        evals = np.linalg.eigvalsh(0.5 * (S + S.T))
        if evals[0] < -1e-10:
            raise ValueError("Sigma_Z must be positive semi-definite")
        return S


@dataclass
class SimTruth:
    """Everything drawn during simulation, keyed the way the model labels it."""

    mu: float
    zeta: dict
    variances: dict
    Sigma_Z: list
    residual_by_env: dict
    effects: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "mu": self.mu,
                "zeta": self.zeta,
                "variances": self.variances,
                "Sigma_Z": self.Sigma_Z,
                "residual_by_env": self.residual_by_env,
                "effects": self.effects,
            },
            indent=2,
            sort_keys=True,
        )


def _draw_table(keys, sd: float, rng) -> dict:
    vals = rng.standard_normal(len(keys)) * sd
    return {k: float(v) for k, v in zip(keys, vals)}


def simulate_dataset(
    spec: SimSpec, rng: np.random.Generator | None = None
) -> tuple[MetDataset, SimTruth]:
    """Generate one complete dataset under the additive yield decomposition."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    yw = len(str(spec.n_years))
    gw = len(str(spec.n_genotypes))
    years = [f"Y{h + 1:0{yw}d}" for h in range(spec.n_years)]
    zones = [f"Z{z + 1}" for z in range(spec.n_zones)]
    locs = [
        (f"L{z * spec.n_locs_per_zone + c + 1:02d}", zones[z])
        for z in range(spec.n_zones)
        for c in range(spec.n_locs_per_zone)
    ]
    gens = [f"G{g + 1:0{gw}d}" for g in range(spec.n_genotypes)]
    zeta = spec.zone_offsets()
    v = spec.variances

    eff_year = _draw_table(years, np.sqrt(v["year"]), rng)
    eff_zone_year = _draw_table(
        [(z, h) for z in zones for h in years], np.sqrt(v["zone_year"]), rng
    )
    eff_zone_loc_year = _draw_table(
        [(z, c, h) for (c, z) in locs for h in years],
        np.sqrt(v["zone_loc_year"]),
        rng,
    )
    eff_rep = _draw_table(
        [(z, c, h, r) for (c, z) in locs for h in years for r in range(1, spec.n_reps + 1)],
        np.sqrt(v["zone_loc_rep_year"]),
        rng,
    )
    eff_gen_year = _draw_table(
        [(h, g) for h in years for g in gens], np.sqrt(v["gen_year"]), rng
    )
    eff_gen_zone_year = _draw_table(
        [(z, h, g) for z in zones for h in years for g in gens],
        np.sqrt(v["gen_zone_year"]),
        rng,
    )
    eff_gen_zone_loc_year = _draw_table(
        [(z, c, h, g) for (c, z) in locs for h in years for g in gens],
        np.sqrt(v["gen_zone_loc_year"]),
        rng,
    )

    Sigma = spec.gen_zone_cov()
    if np.allclose(Sigma, 0.0):
        gz_draws = np.zeros((spec.n_genotypes, spec.n_zones))
    else:
        L = spd_cholesky(Sigma)
        gz_draws = rng.standard_normal((spec.n_genotypes, spec.n_zones)) @ L.T
    eff_gen_zone = {
        (zones[zi], g): float(gz_draws[gi, zi])
        for gi, g in enumerate(gens)
        for zi in range(spec.n_zones)
    }

    env_pairs = [(h, c) for h in years for (c, _z) in locs]
    if isinstance(spec.residual, InvGammaParams):
        resid_var = {
            p: float(sample_inv_gamma(spec.residual, rng)) for p in env_pairs
        }
    else:
        resid_var = {p: float(spec.residual) for p in env_pairs}

    rows = []
    for h in years:
        for (c, z) in locs:
            zi = zones.index(z)
            sd_eps = np.sqrt(resid_var[(h, c)])
            for g in gens:
                for r in range(1, spec.n_reps + 1):
                    value = (
                        spec.mu
                        + zeta[zi]
                        + eff_year[h]
                        + eff_zone_year[(z, h)]
                        + eff_zone_loc_year[(z, c, h)]
                        + eff_rep[(z, c, h, r)]
                        + eff_gen_zone[(z, g)]
                        + eff_gen_year[(h, g)]
                        + eff_gen_zone_year[(z, h, g)]
                        + eff_gen_zone_loc_year[(z, c, h, g)]
                        + sd_eps * rng.standard_normal()
                    )
                    rows.append(
                        ObservationRow(
                            year=h,
                            zone=z,
                            location=c,
                            genotype=g,
                            replicate=r,
                            yield_t_ha=float(value),
                        )
                    )
    data = MetDataset.from_rows(rows)

    def _strkeys(d: dict) -> dict:
        return {
            "|".join(str(p) for p in (k if isinstance(k, tuple) else (k,))): x
            for k, x in d.items()
        }

    truth = SimTruth(
        mu=spec.mu,
        zeta={z: float(zeta[i]) for i, z in enumerate(zones)},
        variances={f"var_{k}": float(val) for k, val in v.items()},
        Sigma_Z=Sigma.tolist(),
        residual_by_env=_strkeys(resid_var),
        effects={
            "year": _strkeys(eff_year),
            "zone_year": _strkeys(eff_zone_year),
            "zone_loc_year": _strkeys(eff_zone_loc_year),
            "zone_loc_rep_year": _strkeys(eff_rep),
            "gen_year": _strkeys(eff_gen_year),
            "gen_zone_year": _strkeys(eff_gen_zone_year),
            "gen_zone_loc_year": _strkeys(eff_gen_zone_loc_year),
            "gen_zone": _strkeys(eff_gen_zone),
        },
    )
    return data, truth
