"""A-optimal allocation of trials to zones from variance components.

The multi-year criterion is ``tr[(diag(w) + Q^{-1})^{-1} B^{-1} K K B^{-1}]``
over zone weights w on the simplex, where K is the genotype-zone covariance,
B adds the genotype-year variance scaled down by the number of years, and
``Q = (J / kappa) B`` with kappa collecting the genotype-zone-year,
genotype-zone-location-year, and replicate-averaged residual variances, also
scaled down by the number of years.

Weights are optimized by a simplex exchange iteration (Frank-Wolfe with away
steps): move mass toward the coordinate with the most negative partial
derivative, step length by line search, stop when the first-order gap is
negligible.  The gap upper-bounds the suboptimality, so the returned design
is certified to the stopping tolerance without an external solver.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .distributions import (
    InvGammaParams,
    InvWishartParams,
    sample_inv_gamma,
    sample_inv_wishart,
)
from .gibbs import PriorSet

#: Scalar components entering the criterion, by effect name.
_GEN_YEAR = "gen_year"
_GEN_ZONE_YEAR = "gen_zone_year"
_GEN_ZONE_LOC_YEAR = "gen_zone_loc_year"


@dataclass(frozen=True)
class DesignComponents:
    """Variance components the allocation criterion consumes."""

    Sigma_Z: np.ndarray
    var_gen_year: float
    var_gen_zone_year: float
    var_gen_zone_loc_year: float
    env_mean_var_resid: float

    def __post_init__(self):
        S = np.asarray(self.Sigma_Z, dtype=float)
        object.__setattr__(self, "Sigma_Z", S)
        np.linalg.cholesky(S)
        for name in (
            "var_gen_year",
            "var_gen_zone_year",
            "var_gen_zone_loc_year",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.env_mean_var_resid > 0:
            raise ValueError("env_mean_var_resid must be > 0")

    @property
    def n_zones(self) -> int:
        return self.Sigma_Z.shape[0]


@dataclass(frozen=True)
class DesignInputs:
    """Criterion matrices for a given horizon H, trial budget J, replicates."""

    K: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    kappa: float
    H: int
    J: int
    n_rep: int

    def __post_init__(self):
        for name in ("K", "B", "Q"):
            M = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, M)
            np.linalg.cholesky(M)
        if min(self.H, self.J, self.n_rep) < 1:
            raise ValueError("H, J, n_rep must be >= 1")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if not np.allclose(self.Q, (self.J / self.kappa) * self.B, rtol=1e-10):
            raise ValueError("Q must equal (J / kappa) * B")

    @property
    def n_zones(self) -> int:
        return self.K.shape[0]


@dataclass(frozen=True)
class ApproximateDesign:
    """Zone weights on the simplex; ``converged`` records optimizer status."""

    weights: np.ndarray
    converged: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if np.any(w < -1e-12):
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")


@dataclass(frozen=True)
class DesignResult:
    design: ApproximateDesign
    exact_allocation: np.ndarray
    criterion: float
    eff_a: float
    mse_tr: float


def build_design_inputs(
    vc: DesignComponents, H: int, J: int, n_rep: int
) -> DesignInputs:
    """Assemble criterion matrices from variance components.

    ``K`` is the genotype-zone covariance itself; ``B = K + (var_gen_year/H) I``;
    ``kappa = (var_gen_zone_year + var_gen_zone_loc_year + env_mean_var_resid/n_rep) / H``;
    ``Q = (J / kappa) B``.
    """
    Z = vc.n_zones
    K = vc.Sigma_Z.copy()
    B = K + (vc.var_gen_year / H) * np.eye(Z)
    kappa = (
        vc.var_gen_zone_year
        + vc.var_gen_zone_loc_year
        + vc.env_mean_var_resid / n_rep
    ) / H
    Q = (J / kappa) * B
    return DesignInputs(K=K, B=B, Q=Q, kappa=kappa, H=H, J=J, n_rep=n_rep)


def _target_matrix(inputs: DesignInputs) -> np.ndarray:
    # B^{-1} K K B^{-1} as C C^T with C = B^{-1} K
    C = np.linalg.solve(inputs.B, inputs.K)
    M = C @ C.T
    return 0.5 * (M + M.T)


def _phi_core(w: np.ndarray, Q_inv: np.ndarray, M: np.ndarray) -> float:
    A = Q_inv + np.diag(w)
    L = np.linalg.cholesky(A)
    V = np.linalg.solve(L, M)
    W = np.linalg.solve(L, V.T)
    return float(np.trace(W))


def phi_a_multi_year(design, inputs: DesignInputs) -> float:
    """Multi-year A-criterion ``tr[(diag(w) + Q^{-1})^{-1} B^{-1} K K B^{-1}]``."""
    w = design.weights if isinstance(design, ApproximateDesign) else np.asarray(design)
    Q_inv = np.linalg.inv(inputs.Q)
    return _phi_core(w, 0.5 * (Q_inv + Q_inv.T), _target_matrix(inputs))


def phi_a_single_year(design, Delta: np.ndarray) -> float:
    """Single-year A-criterion ``tr[(diag(w) + Delta^{-1})^{-1}]`` for a
    caller-supplied adjusted covariance ``Delta``."""
    w = design.weights if isinstance(design, ApproximateDesign) else np.asarray(design)
    Delta = np.asarray(Delta, dtype=float)
    np.linalg.cholesky(Delta)
    D_inv = np.linalg.inv(Delta)
    return _phi_core(w, 0.5 * (D_inv + D_inv.T), np.eye(len(w)))


def _phi_and_grad(w, Q_inv, M):
    A = Q_inv + np.diag(w)
    A_inv = np.linalg.inv(A)
    G = A_inv @ M @ A_inv
    return float(np.trace(A_inv @ M)), -np.diag(G)


def optimize_approximate_design(
    inputs: DesignInputs,
    *,
    gap_tol: float = 1e-9,
    max_iter: int = 10_000,
) -> ApproximateDesign:
    """Minimize the multi-year criterion over the weight simplex.

    Starts at equal weights.  Each step moves mass toward the coordinate
    with the most negative partial derivative (or away from the worst
    supported coordinate when that closes the gap faster), with step length
    by bounded line search.  Stops when the first-order gap drops below
    ``gap_tol`` relative to the criterion value; if ``max_iter`` is hit
    first, the best iterate is returned with ``converged=False`` and a
    warning.
    """
    Z = inputs.n_zones
    Q_inv = np.linalg.inv(inputs.Q)
    Q_inv = 0.5 * (Q_inv + Q_inv.T)
    M = _target_matrix(inputs)
    w = np.full(Z, 1.0 / Z)
    converged = False
    for _ in range(max_iter):
        phi, grad = _phi_and_grad(w, Q_inv, M)
        s = int(np.argmin(grad))
        fw_gap = float(grad @ w - grad[s])
        if fw_gap <= gap_tol * max(1.0, abs(phi)):
            converged = True
            break
        support = np.flatnonzero(w > 1e-15)
        a = support[int(np.argmax(grad[support]))]
        away_gap = float(grad[a] - grad @ w)
        if fw_gap >= away_gap or w[a] >= 1.0 - 1e-15:
            direction = -w.copy()
            direction[s] += 1.0
            gamma_max = 1.0
        else:
            direction = w.copy()
            direction[a] -= 1.0
            gamma_max = w[a] / (1.0 - w[a])

        def line(gamma):
            return _phi_core(np.clip(w + gamma * direction, 0.0, None), Q_inv, M)

        res = minimize_scalar(
            line, bounds=(0.0, gamma_max), method="bounded",
            options={"xatol": 1e-13, "maxiter": 200},
        )
        gamma = float(res.x)
        if line(gamma) >= phi:
            converged = True  # no descent left at line-search resolution
            break
        w = np.clip(w + gamma * direction, 0.0, None)
        w /= w.sum()
    if not converged:
        warnings.warn(
            "design optimizer hit the iteration cap; returning best iterate",
            RuntimeWarning,
        )
    return ApproximateDesign(weights=w, converged=converged)


def round_to_exact(design: ApproximateDesign, inputs: DesignInputs) -> np.ndarray:
    """Integer allocation summing to J, chosen by criterion among rounding
    candidates of ``w * J``.

    Every zone with positive weight gets at least one trial when the budget
    allows, so a budget of exactly one trial per zone yields the all-ones
    allocation.  Candidates are enumerated in a small box around ``w * J``
    (superset of the largest-remainder roundings); ties break toward the
    first candidate in lexicographic order.  Intended for a handful of
    zones.
    """
    w = design.weights
    J = inputs.J
    Z = len(w)
    if J < Z:
        raise ValueError("budget J must be at least the number of zones")
    supported = w > 1e-12
    base = supported.astype(int) if J >= supported.sum() else np.zeros(Z, int)
    q = w * J
    lo = np.maximum(base, np.floor(q).astype(int) - (Z - 1))
    hi = np.minimum(J, np.ceil(q).astype(int) + (Z - 1))
    best = None
    best_val = math.inf
    for combo in itertools.product(
        *(range(l, h + 1) for l, h in zip(lo, hi))
    ):
        if sum(combo) != J:
            continue
        val = phi_a_multi_year(np.asarray(combo, dtype=float) / J, inputs)
        if val < best_val - 1e-15:
            best_val = val
            best = combo
    assert best is not None
    return np.asarray(best, dtype=int)


def efficiency(design: ApproximateDesign, inputs: DesignInputs) -> float:
    """Criterion ratio of the design to the completely balanced design.

    At most 1 for optimizer output: below 1 means the optimized design beats
    the balanced one.
    """
    Z = inputs.n_zones
    balanced = np.full(Z, 1.0 / Z)
    return phi_a_multi_year(design, inputs) / phi_a_multi_year(balanced, inputs)


def mse_trace(design, inputs: DesignInputs, constant: float) -> float:
    """Criterion value rescaled by the variance-component-dependent constant
    the criterion drops; a pure rescaling, so the optimal design is shared."""
    if not constant > 0:
        raise ValueError("constant must be > 0")
    return constant * phi_a_multi_year(design, inputs)


def default_mse_constant(inputs: DesignInputs) -> float:
    """Per-trial noise scaling ``kappa / J``; makes the reported trace
    decrease as the budget grows, at fixed components."""
    return inputs.kappa / inputs.J


def evaluate_design(
    inputs: DesignInputs, *, mse_constant: float | None = None
) -> DesignResult:
    """Optimize, round, and score one set of design inputs."""
    design = optimize_approximate_design(inputs)
    allocation = round_to_exact(design, inputs)
    crit = phi_a_multi_year(design, inputs)
    if mse_constant is None:
        mse_constant = default_mse_constant(inputs)
    return DesignResult(
        design=design,
        exact_allocation=allocation,
        criterion=crit,
        eff_a=efficiency(design, inputs),
        mse_tr=mse_trace(design, inputs, mse_constant),
    )


# ---------------------------------------------------------------------------
# Variance-component sets from fitted priors
# ---------------------------------------------------------------------------


def _require_design_priors(priors: PriorSet):
    if priors.gen_zone is None:
        raise ValueError("priors must include a genotype-zone matrix component")
    for name in (_GEN_YEAR, _GEN_ZONE_YEAR, _GEN_ZONE_LOC_YEAR):
        if name not in priors.scalar:
            raise ValueError(f"priors must include the {name} component")
    if not priors.residual:
        raise ValueError("priors must include residual components")


def _inv_gamma_point(p: InvGammaParams) -> float:
    return p.mean() if p.shape > 1 else p.mode()


def _inv_wishart_point(p: InvWishartParams) -> np.ndarray:
    if p.dof > p.dim + 1:
        return p.mean()
    return p.scale / (p.dof + p.dim + 1)


def components_from_prior_means(priors: PriorSet) -> DesignComponents:
    """Plug-in component set from fitted-prior means (modes where the mean
    is undefined)."""
    _require_design_priors(priors)
    resid = float(
        np.mean([_inv_gamma_point(p) for p in priors.residual.values()])
    )
    return DesignComponents(
        Sigma_Z=_inv_wishart_point(priors.gen_zone),
        var_gen_year=_inv_gamma_point(priors.scalar[_GEN_YEAR]),
        var_gen_zone_year=_inv_gamma_point(priors.scalar[_GEN_ZONE_YEAR]),
        var_gen_zone_loc_year=_inv_gamma_point(priors.scalar[_GEN_ZONE_LOC_YEAR]),
        env_mean_var_resid=resid,
    )


def draw_components(
    priors: PriorSet, rng: np.random.Generator
) -> DesignComponents:
    """One component set drawn from the fitted prior distributions.

    The residual entry is the arithmetic mean over the per-environment
    draws.
    """
    _require_design_priors(priors)
    resid_draws = [
        float(sample_inv_gamma(p, rng)) for p in priors.residual.values()
    ]
    return DesignComponents(
        Sigma_Z=sample_inv_wishart(priors.gen_zone, rng),
        var_gen_year=float(sample_inv_gamma(priors.scalar[_GEN_YEAR], rng)),
        var_gen_zone_year=float(
            sample_inv_gamma(priors.scalar[_GEN_ZONE_YEAR], rng)
        ),
        var_gen_zone_loc_year=float(
            sample_inv_gamma(priors.scalar[_GEN_ZONE_LOC_YEAR], rng)
        ),
        env_mean_var_resid=float(np.mean(resid_draws)),
    )


@dataclass
class PosteriorDesignSummary:
    """Element-wise summaries over per-draw optimal designs.

    Per-draw weights each sum to one; their means generally do not, because
    averaging does not preserve which zone carries the extreme mass.
    """

    H: int
    J: int
    n_draws: int
    weights: np.ndarray
    allocations: np.ndarray
    criteria: np.ndarray
    eff_values: np.ndarray
    mse_values: np.ndarray

    @property
    def weight_means(self) -> np.ndarray:
        return self.weights.mean(axis=0)

    @property
    def weight_sds(self) -> np.ndarray:
        if self.n_draws < 2:
            return np.zeros(self.weights.shape[1])
        return self.weights.std(axis=0, ddof=1)

    @property
    def weight_min(self) -> np.ndarray:
        return self.weights.min(axis=0)

    @property
    def weight_max(self) -> np.ndarray:
        return self.weights.max(axis=0)

    @property
    def eff_mean(self) -> float:
        return float(self.eff_values.mean())

    @property
    def eff_sd(self) -> float:
        return 0.0 if self.n_draws < 2 else float(self.eff_values.std(ddof=1))

    @property
    def mse_mean(self) -> float:
        return float(self.mse_values.mean())

    @property
    def mse_sd(self) -> float:
        return 0.0 if self.n_draws < 2 else float(self.mse_values.std(ddof=1))


def posterior_design_summary(
    priors: PriorSet,
    H: int,
    J: int,
    n_rep: int,
    n_draws: int,
    rng: np.random.Generator,
    *,
    mse_constant: float | None = None,
    max_retries: int = 10,
) -> PosteriorDesignSummary:
    """Optimal-design uncertainty from fitted variance-component priors.

    Draws ``n_draws`` component sets, optimizes a design for each, and
    reports element-wise weight means and standard deviations along with
    mean efficiency and mean MSE trace.  Draws failing the SPD checks are
    redrawn up to ``max_retries`` times.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    Z = priors.gen_zone.dim if priors.gen_zone is not None else 0
    weights = np.empty((n_draws, Z))
    allocations = np.empty((n_draws, Z), dtype=int)
    criteria = np.empty(n_draws)
    eff_values = np.empty(n_draws)
    mse_values = np.empty(n_draws)
    for i in range(n_draws):
        for attempt in range(max_retries + 1):
            try:
                vc = draw_components(priors, rng)
                inputs = build_design_inputs(vc, H, J, n_rep)
                break
            except (np.linalg.LinAlgError, ValueError):
                if attempt == max_retries:
                    raise
        result = evaluate_design(inputs, mse_constant=mse_constant)
        weights[i] = result.design.weights
        allocations[i] = result.exact_allocation
        criteria[i] = result.criterion
        eff_values[i] = result.eff_a
        mse_values[i] = result.mse_tr
    return PosteriorDesignSummary(
        H=H,
        J=J,
        n_draws=n_draws,
        weights=weights,
        allocations=allocations,
        criteria=criteria,
        eff_values=eff_values,
        mse_values=mse_values,
    )
