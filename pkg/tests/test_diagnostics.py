import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metbayes.diagnostics import (
    DiagnosticThresholds,
    diagnose_columns,
    ess,
    geweke_z,
    r_hat,
)


class TestRhat:
    def test_same_distribution_chains(self):
        rng = np.random.default_rng(0)
        chains = [rng.standard_normal(10_000) for _ in range(2)]
        assert 0.999 <= r_hat(chains) <= 1.01

    def test_separated_chains(self):
        rng = np.random.default_rng(1)
        chains = [rng.standard_normal(10_000), rng.standard_normal(10_000) + 5.0]
        assert r_hat(chains) > 1.5

    def test_constant_chains_undefined(self):
        chains = [np.ones(100), np.ones(100)]
        assert math.isnan(r_hat(chains))

    def test_requires_two_chains(self):
        with pytest.raises(ValueError):
            r_hat([np.arange(10.0)])

    @given(
        shift=st.floats(-50, 50),
        scale=st.floats(0.01, 100),
        seed=st.integers(0, 50),
    )
    @settings(max_examples=25, deadline=None)
    def test_affine_invariance(self, shift, scale, seed):
        rng = np.random.default_rng(seed)
        chains = [rng.standard_normal(500) for _ in range(3)]
        moved = [scale * c + shift for c in chains]
        assert r_hat(moved) == pytest.approx(r_hat(chains), rel=1e-9)


class TestEss:
    def test_iid_chain(self):
        rng = np.random.default_rng(2)
        n = 10_000
        e = ess(rng.standard_normal(n))
        assert 0.8 * n <= e <= n

    def test_ar1_matches_analytic(self):
        rng = np.random.default_rng(3)
        n = 10_000
        rho = 0.9
        x = np.empty(n)
        x[0] = rng.standard_normal()
        eps = rng.standard_normal(n) * math.sqrt(1 - rho**2)
        for i in range(1, n):
            x[i] = rho * x[i - 1] + eps[i]
        expected = n * (1 - rho) / (1 + rho)
        assert abs(ess(x) - expected) <= 0.3 * expected

    def test_antithetic_chain_clipped_to_n(self):
        x = np.tile([1.0, -1.0], 500)
        assert ess(x) == x.size

    def test_zero_variance_undefined(self):
        assert math.isnan(ess(np.ones(100)))

    @given(seed=st.integers(0, 100))
    @settings(max_examples=25, deadline=None)
    def test_reversal_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        x = np.cumsum(rng.standard_normal(300)) * 0.1 + rng.standard_normal(300)
        assert ess(x[::-1]) == pytest.approx(ess(x), rel=1e-12)


class TestGeweke:
    def test_alternating_sequence_exact_zero(self):
        x = np.tile([1.0, -1.0], 5000)
        assert geweke_z(x) == 0.0

    def test_linear_trend_flags(self):
        x = np.linspace(0.0, 1.0, 10_000)
        assert abs(geweke_z(x)) > 3

    def test_iid_rarely_flags(self):
        bad = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            if abs(geweke_z(rng.standard_normal(10_000))) >= 3:
                bad += 1
        assert bad <= 1

    def test_constant_chain_undefined(self):
        assert math.isnan(geweke_z(np.full(1000, 2.5)))

    def test_sign_flips_on_reversal(self):
        x = np.linspace(0.0, 1.0, 10_000)
        assert geweke_z(x[::-1]) == pytest.approx(-geweke_z(x), rel=0.2)
        assert geweke_z(x[::-1]) * geweke_z(x) < 0


class TestReport:
    def test_flags_and_markers(self):
        rng = np.random.default_rng(4)
        good = [rng.standard_normal(2000) for _ in range(2)]
        split = [rng.standard_normal(2000), rng.standard_normal(2000) + 9]
        stuck = [np.ones(2000), np.ones(2000)]
        report = diagnose_columns(
            [("good", good), ("split", split), ("stuck", stuck)]
        )
        by_name = {r.name: r for r in report.rows}
        assert by_name["good"].passed
        assert "r_hat" in by_name["split"].flags
        assert math.isnan(by_name["stuck"].r_hat)
        assert not by_name["stuck"].flags  # undefined is marked, not flagged
        assert "undef" in report.table()

    def test_custom_thresholds(self):
        rng = np.random.default_rng(5)
        chains = [rng.standard_normal(500) for _ in range(2)]
        report = diagnose_columns(
            [("x", chains)], DiagnosticThresholds(ess_min=1e9)
        )
        assert "ess" in report.rows[0].flags

    def test_json_serializes_nan_as_null(self):
        report = diagnose_columns([("c", [np.ones(200), np.ones(200)])])
        assert '"r_hat": null' in report.to_json()
