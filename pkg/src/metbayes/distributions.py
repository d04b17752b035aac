"""Inverse-gamma, inverse-Wishart, and multivariate-normal primitives.

Conventions: Inv-Gamma(shape a, scale b) has density
``b^a / Gamma(a) * x^(-a-1) * exp(-b/x)`` with mean ``b/(a-1)`` for ``a > 1``;
Inv-Wishart(dof v, scale S) has mean ``S/(v-Z-1)`` for ``v > Z+1``.

The maximum-likelihood fitters profile out the scale parameter analytically
and run a golden-section search on the remaining scalar in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, multigammaln


class DegenerateSampleError(ValueError):
    """The sample carries no spread to fit a distribution to."""


@dataclass(frozen=True)
class InvGammaParams:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and math.isfinite(self.shape)):
            raise ValueError(f"shape must be positive, got {self.shape}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive, got {self.scale}")

    def mean(self) -> float:
        if self.shape <= 1:
            raise ValueError("mean undefined for shape <= 1")
        return self.scale / (self.shape - 1)

    def mode(self) -> float:
        return self.scale / (self.shape + 1)


@dataclass(frozen=True)
class InvWishartParams:
    dof: float
    scale: np.ndarray = field(repr=False)

    def __post_init__(self):
        S = np.asarray(self.scale, dtype=float)
        object.__setattr__(self, "scale", S)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("scale must be a square matrix")
        if not np.allclose(S, S.T, atol=1e-10 * max(1.0, np.abs(S).max())):
            raise ValueError("scale must be symmetric")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise ValueError("scale must be positive definite") from None
        if not self.dof > self.dim - 1:
            raise ValueError(
                f"dof must exceed dim - 1 = {self.dim - 1}, got {self.dof}"
            )

    @property
    def dim(self) -> int:
        return self.scale.shape[0]

    def mean(self) -> np.ndarray:
        if self.dof <= self.dim + 1:
            raise ValueError("mean undefined for dof <= dim + 1")
        return self.scale / (self.dof - self.dim - 1)


def spd_cholesky(mat: np.ndarray, *, max_tries: int = 10) -> np.ndarray:
    """Lower Cholesky factor, retrying with growing diagonal jitter.

    Starts at ``1e-10 * trace/dim`` and grows tenfold per retry; raises
    ``numpy.linalg.LinAlgError`` if the matrix stays non-factorizable.
    """
    mat = np.asarray(mat, dtype=float)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    dim = mat.shape[0]
    jitter = 1e-10 * max(np.trace(mat) / dim, 1e-300)
    eye = np.eye(dim)
    for _ in range(max_tries):
        try:
            return np.linalg.cholesky(mat + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError(
        f"matrix not positive definite after {max_tries} jitter retries"
    )


def sample_inv_gamma(
    p: InvGammaParams, rng: np.random.Generator, size=None
) -> float | np.ndarray:
    """Draw from Inv-Gamma(shape, scale); strictly positive."""
    g = rng.gamma(shape=p.shape, scale=1.0 / p.scale, size=size)
    return 1.0 / g


def sample_inv_wishart(
    p: InvWishartParams, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Draw SPD matrices from Inv-Wishart(dof, scale) via Bartlett factors.

    Valid for any ``dof > dim - 1`` (non-integer allowed).  Returns a single
    ``(Z, Z)`` matrix, or ``(size, Z, Z)`` when ``size`` is given.
    """
    Z = p.dim
    m = 1 if size is None else int(size)
    A = np.zeros((m, Z, Z))
    for i in range(Z):
        A[:, i, i] = np.sqrt(rng.chisquare(p.dof - i, size=m))
    il, jl = np.tril_indices(Z, -1)
    A[:, il, jl] = rng.standard_normal((m, il.size))
    Ls = np.linalg.cholesky(p.scale)
    # X = B^T B with B = A^{-1} Ls^T inverts a Wishart(dof, scale^{-1}) draw.
    B = np.linalg.solve(A, np.broadcast_to(Ls.T, (m, Z, Z)).copy())
    X = B.transpose(0, 2, 1) @ B
    X = 0.5 * (X + X.transpose(0, 2, 1))
    return X[0] if size is None else X


def sample_mvn(
    mean: np.ndarray, cov: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw from N(mean, cov) by Cholesky, with jitter retries on failure."""
    mean = np.asarray(mean, dtype=float)
    L = spd_cholesky(cov)
    return mean + L @ rng.standard_normal(mean.shape[0])


def inv_gamma_logpdf(x, p: InvGammaParams):
    """Log density of Inv-Gamma(shape, scale) at ``x > 0``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("inverse-gamma density is defined on x > 0")
    a, b = p.shape, p.scale
    out = a * math.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x
    return float(out) if out.ndim == 0 else out


def inv_wishart_logpdf(X: np.ndarray, p: InvWishartParams) -> float:
    """Log density of Inv-Wishart(dof, scale) at SPD ``X``."""
    X = np.asarray(X, dtype=float)
    Z = p.dim
    if X.shape != (Z, Z):
        raise ValueError(f"matrix must be {Z}x{Z}")
    try:
        Lx = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        raise ValueError("density argument must be positive definite") from None
    v = p.dof
    logdet_S = 2.0 * np.log(np.diag(np.linalg.cholesky(p.scale))).sum()
    logdet_X = 2.0 * np.log(np.diag(Lx)).sum()
    V = np.linalg.solve(Lx.T, np.linalg.solve(Lx, p.scale))
    trace_term = float(np.trace(V))
    return (
        0.5 * v * logdet_S
        - 0.5 * v * Z * math.log(2.0)
        - multigammaln(0.5 * v, Z)
        - 0.5 * (v + Z + 1.0) * logdet_X
        - 0.5 * trace_term
    )


def _golden_min(f, lo: float, hi: float, rel_tol: float = 1e-8):
    """Golden-section minimum of a unimodal ``f`` on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rel_tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def inv_gamma_nll(samples: np.ndarray, p: InvGammaParams) -> float:
    """Negative log-likelihood of a positive sample under Inv-Gamma params."""
    return float(-np.sum(inv_gamma_logpdf(samples, p)))


def fit_inv_gamma_mle(samples) -> InvGammaParams:
    """Maximum-likelihood Inv-Gamma fit of a positive scalar sample.

    The scale is profiled out through ``b(a) = n*a / sum(1/x)``; the shape is
    then found by golden-section search on log(a) over a in (1e-3, 1e4).
    """
    x = np.asarray(samples, dtype=float).ravel()
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite and strictly positive")
    if np.all(x == x[0]):
        raise DegenerateSampleError("all samples are identical")
    n = x.size
    if n < 10:
        raise ValueError(f"need at least 10 samples, got {n}")
    slog = float(np.sum(np.log(x)))
    sinv = float(np.sum(1.0 / x))

    def profile_nll(log_a: float) -> float:
        a = math.exp(log_a)
        b = n * a / sinv
        return -n * a * math.log(b) + n * gammaln(a) + (a + 1.0) * slog + b * sinv

    log_a, _ = _golden_min(profile_nll, math.log(1e-3), math.log(1e4))
    a_hat = math.exp(log_a)
    return InvGammaParams(shape=a_hat, scale=n * a_hat / sinv)


def inv_wishart_nll(samples: np.ndarray, p: InvWishartParams) -> float:
    """Negative log-likelihood of a stack of SPD matrices under IW params."""
    return float(-sum(inv_wishart_logpdf(X, p) for X in samples))


def fit_inv_wishart_mle(samples) -> InvWishartParams:
    """Maximum-likelihood Inv-Wishart fit of a stack of SPD matrices.

    The scale is profiled out through ``S(v) = v * inv(mean of X_i^{-1})``;
    the degrees of freedom are then found by golden-section search on log(v)
    over v in (Z+1, 1e4), the range on which the fitted family has a mean.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 3 or X.shape[1] != X.shape[2]:
        raise ValueError("samples must be a stack of square matrices")
    Z = X.shape[1]
    n = X.shape[0]
    if n < Z + 2:
        raise DegenerateSampleError(
            f"need at least {Z + 2} matrices for dimension {Z}, got {n}"
        )
    try:
        np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        raise ValueError("every sample matrix must be positive definite") from None
    inv_mean = np.linalg.inv(X).mean(axis=0)
    inv_mean = 0.5 * (inv_mean + inv_mean.T)
    sign, logdet_inv_mean = np.linalg.slogdet(inv_mean)
    if sign <= 0:
        raise DegenerateSampleError("sample inverses average to a singular matrix")
    mean_logdet = float(np.linalg.slogdet(X)[1].mean())

    def profile_nll(log_v: float) -> float:
        v = math.exp(log_v)
        return n * (
            -0.5 * v * Z * math.log(v)
            + 0.5 * v * logdet_inv_mean
            + 0.5 * v * Z * math.log(2.0)
            + multigammaln(0.5 * v, Z)
            + 0.5 * (v + Z + 1.0) * mean_logdet
            + 0.5 * v * Z
        )

    log_v, _ = _golden_min(
        profile_nll, math.log(Z + 1 + 1e-6), math.log(1e4)
    )
    v_hat = math.exp(log_v)
    S_hat = v_hat * np.linalg.inv(inv_mean)
    S_hat = 0.5 * (S_hat + S_hat.T)
    return InvWishartParams(dof=v_hat, scale=S_hat)
