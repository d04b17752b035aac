"""Run configuration: a versioned JSON file driving the CLI commands.

Defaults follow the reference analysis: window plan [8, 5, 3, 3, 3], four
chains thinned by two with 5000 post-burn-in iterations each (merged
posterior size 10000), weakly informative initial priors, a design grid at
H=3 over growing budgets, and 100 posterior design draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import WindowPlan
from .diagnostics import DiagnosticThresholds
from .distributions import InvGammaParams
from .gibbs import SamplerConfig
from .simulate import DEFAULT_VARIANCES, SimSpec
from .updating import InitialPriorSpec

CONFIG_VERSION = 1


def _default_sampler() -> dict:
    return {
        "n_chains": 4,
        "n_iter": 7500,
        "burn_in": 2500,
        "thin": 2,
        "seed": 20260810,
    }


def _default_design() -> dict:
    return {
        "grid": [[3, 10], [3, 20], [3, 40], [3, 100], [3, 200]],
        "n_rep": 3,
        "n_draws": 100,
    }


def _default_simulate() -> dict:
    return {
        "n_years": 6,
        "n_zones": 4,
        "n_locs_per_zone": 2,
        "n_genotypes": 20,
        "n_reps": 3,
        "mu": 5.0,
        "variances": dict(DEFAULT_VARIANCES),
        "Sigma_Z": None,
        "residual": 0.5,
        "seed": 1,
    }


@dataclass
class RunConfig:
    data_csv: str = "met.csv"
    out_dir: str = "runs/latest"
    schema: dict = field(default_factory=dict)
    filters: dict = field(default_factory=dict)
    window_plan: list = field(default_factory=lambda: [8, 5, 3, 3, 3])
    sampler: dict = field(default_factory=_default_sampler)
    priors: dict = field(default_factory=dict)
    design: dict = field(default_factory=_default_design)
    simulate: dict = field(default_factory=_default_simulate)
    thresholds: dict = field(default_factory=dict)

    def sampler_config(self, seed: int | None = None) -> SamplerConfig:
        params = dict(self.sampler)
        if seed is not None:
            params["seed"] = seed
        return SamplerConfig(**params)

    def prior_spec(self) -> InitialPriorSpec:
        if not self.priors:
            return InitialPriorSpec()
        return InitialPriorSpec.from_json_dict(self.priors)

    def plan(self) -> WindowPlan:
        return WindowPlan(tuple(int(c) for c in self.window_plan))

    def diagnostic_thresholds(self) -> DiagnosticThresholds:
        return DiagnosticThresholds(**self.thresholds)

    def sim_spec(self, seed: int | None = None) -> SimSpec:
        params = dict(self.simulate)
        if seed is not None:
            params["seed"] = seed
        if params.get("Sigma_Z") is not None:
            params["Sigma_Z"] = np.asarray(params["Sigma_Z"], dtype=float)
        resid = params.get("residual", 0.5)
        if isinstance(resid, dict):
            params["residual"] = InvGammaParams(resid["shape"], resid["scale"])
        params["variances"] = {
            **DEFAULT_VARIANCES,
            **params.get("variances", {}),
        }
        return SimSpec(**params)

    def design_grid(self) -> list[tuple[int, int]]:
        return [(int(h), int(j)) for h, j in self.design["grid"]]

    def to_json(self) -> str:
        payload = {"version": CONFIG_VERSION}
        payload.update(
            {
                "data_csv": self.data_csv,
                "out_dir": self.out_dir,
                "schema": self.schema,
                "filters": self.filters,
                "window_plan": self.window_plan,
                "sampler": self.sampler,
                "priors": self.priors,
                "design": self.design,
                "simulate": self.simulate,
                "thresholds": self.thresholds,
            }
        )
        return json.dumps(payload, indent=2, sort_keys=True)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.pop("version", None)
    if version != CONFIG_VERSION:
        raise ValueError(
            f"unsupported config version {version!r}; expected {CONFIG_VERSION}"
        )
    known = {f.name for f in RunConfig.__dataclass_fields__.values()}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ValueError(f"unknown config keys {unknown}")
    return RunConfig(**payload)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(cfg.to_json())
        fh.write("\n")
