"""MCMC convergence diagnostics: split-chain R-hat, ESS, Geweke z-score.

Undefined statistics (zero-variance inputs, too-short chains) come back as
NaN rather than raising, so a report over many parameters never crashes on a
stuck column.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


def r_hat(chains) -> float:
    """Classic split-chain potential scale reduction factor.

    Each of the >= 2 equal-length chains is split in half; with split length
    n, the statistic is sqrt(((n-1)/n * W + B/n) / W) where W is the mean
    within-split variance and B is n times the variance of split means.
    Returns NaN when every split has zero within variance.
    """
    arrs = [np.asarray(c, dtype=float) for c in chains]
    if len(arrs) < 2:
        raise ValueError("need at least 2 chains")
    n_full = min(a.size for a in arrs)
    if n_full < 4:
        raise ValueError("need chains of length >= 4")
    half = n_full // 2
    splits = []
    for a in arrs:
        splits.append(a[:half])
        splits.append(a[n_full - half : n_full])
    S = np.stack(splits)
    W = S.var(axis=1, ddof=1).mean()
    if W == 0:
        return math.nan
    means = S.mean(axis=1)
    B = half * means.var(ddof=1)
    var_plus = (half - 1) / half * W + B / half
    return float(math.sqrt(var_plus / W))


def ess(chain) -> float:
    """Effective sample size n / (1 + 2 * sum of autocorrelations).

    The autocorrelation sum is truncated by the initial-positive-sequence
    rule on consecutive lag pairs, and the result is clipped to (0, n] (no
    super-efficiency reporting for antithetic chains).  NaN on zero variance.
    """
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n < 8:
        raise ValueError("need a chain of length >= 8")
    x = x - x.mean()
    var0 = float(x @ x) / n
    if var0 == 0:
        return math.nan
    # autocovariances via FFT
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[:n].real / n
    rho = acov / acov[0]
    tau = 0.0
    m = 0
    while 2 * m + 1 < n:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
        m += 1
    tau -= 1.0  # rho[0] counted twice in the pair sums
    return float(n / max(tau, 1.0))


def geweke_z(chain) -> float:
    """Geweke z-score between the first 10% and the last 50% of a chain.

    Segment-mean variances come from non-overlapping batch means with batch
    size sqrt(segment length), which absorbs autocorrelation.  NaN when both
    segments have zero batch-mean variance.
    """
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n < 100:
        raise ValueError("need a chain of length >= 100")
    seg1 = x[: max(n // 10, 10)]
    seg2 = x[n - n // 2 :]

    def batch_se2(seg: np.ndarray) -> float:
        b = int(math.sqrt(seg.size))
        nb = seg.size // b
        bm = seg[: nb * b].reshape(nb, b).mean(axis=1)
        return float(bm.var(ddof=1) / nb)

    se2 = batch_se2(seg1) + batch_se2(seg2)
    diff = float(seg1.mean() - seg2.mean())
    if se2 == 0:
        return math.nan
    if diff == 0:
        return 0.0
    return diff / math.sqrt(se2)


@dataclass(frozen=True)
class DiagnosticThresholds:
    """Flagging conventions (not part of the statistics themselves)."""

    r_hat_max: float = 1.01
    ess_min: float = 400.0
    geweke_max: float = 2.0


@dataclass
class ParameterDiagnostics:
    name: str
    r_hat: float
    ess: float
    geweke_z: float
    flags: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not self.flags


@dataclass
class DiagnosticsReport:
    rows: list[ParameterDiagnostics]
    thresholds: DiagnosticThresholds = field(default_factory=DiagnosticThresholds)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_json(self) -> str:
        payload = {
            "thresholds": {
                "r_hat_max": self.thresholds.r_hat_max,
                "ess_min": self.thresholds.ess_min,
                "geweke_max": self.thresholds.geweke_max,
            },
            "parameters": [
                {
                    "name": r.name,
                    "r_hat": None if math.isnan(r.r_hat) else r.r_hat,
                    "ess": None if math.isnan(r.ess) else r.ess,
                    "geweke_z": None if math.isnan(r.geweke_z) else r.geweke_z,
                    "flags": list(r.flags),
                }
                for r in self.rows
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def table(self) -> str:
        lines = [
            f"{'parameter':<28} {'r_hat':>8} {'ess':>10} {'geweke_z':>9}  status"
        ]
        for r in self.rows:
            def fmt(v):
                return "undef" if math.isnan(v) else f"{v:.4g}"

            status = "PASS" if r.passed else "FLAG " + ",".join(r.flags)
            lines.append(
                f"{r.name:<28} {fmt(r.r_hat):>8} {fmt(r.ess):>10} "
                f"{fmt(r.geweke_z):>9}  {status}"
            )
        return "\n".join(lines)


def diagnose_columns(
    columns, thresholds: DiagnosticThresholds | None = None
) -> DiagnosticsReport:
    """Diagnostics for ``(label, [per-chain 1-D arrays])`` pairs.

    R-hat needs >= 2 chains (NaN otherwise); ESS is summed over chains;
    the Geweke score is computed on the first chain, matching how single
    chains are usually inspected.
    """
    thresholds = thresholds or DiagnosticThresholds()
    rows = []
    for name, chains in columns:
        chains = [np.asarray(c, dtype=float) for c in chains]
        try:
            rh = r_hat(chains) if len(chains) >= 2 else math.nan
        except ValueError:
            rh = math.nan
        try:
            e = float(sum(ess(c) for c in chains))
        except ValueError:
            e = math.nan
        try:
            gz = geweke_z(chains[0])
        except ValueError:
            gz = math.nan
        flags = []
        if not math.isnan(rh) and rh > thresholds.r_hat_max:
            flags.append("r_hat")
        if not math.isnan(e) and e < thresholds.ess_min:
            flags.append("ess")
        if not math.isnan(gz) and abs(gz) > thresholds.geweke_max:
            flags.append("geweke")
        rows.append(
            ParameterDiagnostics(
                name=name, r_hat=rh, ess=e, geweke_z=gz, flags=tuple(flags)
            )
        )
    return DiagnosticsReport(rows=rows, thresholds=thresholds)


def diagnose_sample(sample, thresholds: DiagnosticThresholds | None = None):
    """Diagnostics over every scalar parameter of a posterior sample."""
    return diagnose_columns(sample.parameter_columns(), thresholds)
