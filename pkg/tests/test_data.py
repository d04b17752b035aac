import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metbayes.data import (
    ConsistencyError,
    MetDataset,
    ParseError,
    PlanError,
    SchemaError,
    WindowPlan,
    index_environments,
    load_met_csv,
    partition_windows,
    write_met_csv,
)

from conftest import make_rows, write_csv


class TestLoadCsv:
    def test_two_row_echo(self, tmp_path):
        p = write_csv(
            tmp_path / "t.csv",
            [
                ("2001", "Z1", "L1", "G1", 1, 4.0),
                ("2001", "Z1", "L1", "G1", 2, 4.2),
            ],
        )
        data = load_met_csv(p)
        assert len(data) == 2
        assert data.rows[0].yield_t_ha == 4.0
        assert index_environments(data).n_environments == 1

    def test_location_under_two_zones_is_inconsistent(self, tmp_path):
        p = write_csv(
            tmp_path / "t.csv",
            [
                ("2001", "Z1", "L1", "G1", 1, 4.0),
                ("2001", "Z2", "L1", "G1", 1, 4.1),
            ],
        )
        with pytest.raises(ConsistencyError):
            load_met_csv(p)

    def test_reference_scale_row_count(self, tmp_path):
        # archive-scale file: 5318 observations survive the loader intact
        records = []
        i = 0
        while len(records) < 5318:
            records.append(
                (
                    f"20{i % 22:02d}",
                    f"Z{i % 4 + 1}",
                    f"L{i % 4 + 1}_{i % 2 + 1}",
                    f"G{i % 41}",
                    i % 3 + 1,
                    round(3.0 + (i % 17) * 0.1, 2),
                )
            )
            i += 1
        p = write_csv(tmp_path / "big.csv", records)
        data = load_met_csv(p)
        assert len(data) == 5318

    def test_missing_column_is_schema_error(self, tmp_path):
        p = write_csv(
            tmp_path / "t.csv",
            [("2001", "Z1", "L1", 1, 4.0)],
            header="year,zone,location,replicate,yield",
        )
        with pytest.raises(SchemaError):
            load_met_csv(p)

    def test_nonnumeric_yield_reports_row(self, tmp_path):
        p = write_csv(
            tmp_path / "t.csv",
            [
                ("2001", "Z1", "L1", "G1", 1, 4.0),
                ("2001", "Z1", "L1", "G1", 2, "oops"),
            ],
        )
        with pytest.raises(ParseError, match="row 2"):
            load_met_csv(p)

    def test_missing_yields_preserved_and_counted(self, tmp_path):
        p = write_csv(
            tmp_path / "t.csv",
            [
                ("2001", "Z1", "L1", "G1", 1, 4.0),
                ("2001", "Z1", "L1", "G1", 2, None),
            ],
            )
        data = load_met_csv(p, max_missing_frac=0.5)
        assert data.n_missing == 1
        assert data.rows[1].yield_t_ha is None

    def test_missing_fraction_enforced(self, tmp_path):
        p = write_csv(
            tmp_path / "t.csv",
            [
                ("2001", "Z1", "L1", "G1", 1, None),
                ("2001", "Z1", "L1", "G1", 2, 4.0),
            ],
        )
        with pytest.raises(ConsistencyError, match="missing"):
            load_met_csv(p, max_missing_frac=0.1)

    def test_filter_column(self, tmp_path):
        p = write_csv(
            tmp_path / "t.csv",
            [
                ("2001", "winter", "Z1", "L1", "G1", 1, 4.0),
                ("2001", "monsoon", "Z1", "L1", "G1", 1, 9.9),
            ],
            header="year,season,zone,location,genotype,replicate,yield",
        )
        data = load_met_csv(p, filters={"season": "winter"})
        assert len(data) == 1 and data.rows[0].yield_t_ha == 4.0

    def test_roundtrip(self, tmp_path, two_row_dataset):
        p = tmp_path / "out.csv"
        write_met_csv(two_row_dataset, p)
        assert load_met_csv(p) == two_row_dataset


class TestWindowPlan:
    def test_paper_style_plan(self):
        rows = []
        for h in range(22):
            rows.append((f"20{h:02d}", "Z1", "L1", "G1", 1, 4.0))
        data = MetDataset.from_rows(make_rows(rows))
        plan = WindowPlan((8, 5, 3, 3, 3))
        windows = partition_windows(data, plan)
        assert [len(w.years) for w in windows] == [8, 5, 3, 3, 3]

    def test_identity_partition(self):
        rows = [(f"200{h}", "Z1", "L1", "G1", 1, 4.0) for h in range(6)]
        data = MetDataset.from_rows(make_rows(rows))
        (only,) = partition_windows(data, WindowPlan((6,)))
        assert only == data

    def test_sum_mismatch_is_plan_error(self):
        rows = [(f"20{h:02d}", "Z1", "L1", "G1", 1, 4.0) for h in range(22)]
        data = MetDataset.from_rows(make_rows(rows))
        with pytest.raises(PlanError):
            partition_windows(data, WindowPlan((6, 3, 3, 3, 3)))

    def test_window_size_minimum(self):
        with pytest.raises(PlanError):
            WindowPlan((3, 1, 2))

    @given(
        counts=st.lists(st.integers(min_value=2, max_value=4), min_size=1, max_size=4)
    )
    @settings(max_examples=25, deadline=None)
    def test_partition_reconstructs_rows(self, counts):
        n_years = sum(counts)
        rows = []
        for h in range(n_years):
            for g in ("G1", "G2"):
                rows.append((f"Y{h:02d}", "Z1", "L1", g, 1, float(h)))
        data = MetDataset.from_rows(make_rows(rows))
        windows = partition_windows(data, WindowPlan(tuple(counts)))
        rebuilt = [r for w in windows for r in w.rows]
        assert rebuilt == list(data.rows)
        seen = set()
        for w in windows:
            assert not (set(w.years) & seen)
            seen |= set(w.years)


class TestEnvironmentIndex:
    def test_product_count(self):
        rows = []
        for h in ("2001", "2002"):
            for c in ("L1", "L2", "L3"):
                rows.append((h, "Z1", c, "G1", 1, 4.0))
        idx = index_environments(MetDataset.from_rows(make_rows(rows)))
        assert idx.n_environments == 6

    def test_unobserved_pair_omitted(self):
        rows = []
        for h in ("2001", "2002"):
            for c in ("L1", "L2", "L3"):
                if (h, c) == ("2002", "L3"):
                    continue
                rows.append((h, "Z1", c, "G1", 1, 4.0))
        idx = index_environments(MetDataset.from_rows(make_rows(rows)))
        assert idx.n_environments == 5

    def test_single_row(self):
        idx = index_environments(
            MetDataset.from_rows(make_rows([("2001", "Z1", "L1", "G1", 1, 4.0)]))
        )
        assert idx.n_environments == 1
        assert idx.counts.tolist() == [1]

    def test_counts_exclude_missing(self):
        rows = make_rows(
            [
                ("2001", "Z1", "L1", "G1", 1, 4.0),
                ("2001", "Z1", "L1", "G1", 2, None),
                ("2001", "Z1", "L2", "G1", 1, 4.5),
            ]
        )
        idx = index_environments(MetDataset.from_rows(rows))
        assert idx.counts.sum() == 2
        assert idx.row_env.tolist() == [0, 0, 1]

    @given(seed=st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=20, deadline=None)
    def test_indexing_is_pure(self, seed):
        rng = np.random.default_rng(seed)
        rows = []
        for _ in range(rng.integers(1, 30)):
            h = f"Y{rng.integers(0, 3)}"
            c = f"L{rng.integers(0, 4)}"
            rows.append((h, "Z1", c, "G1", 1, float(rng.normal())))
        data = MetDataset.from_rows(make_rows(rows))
        a, b = index_environments(data), index_environments(data)
        assert a.environments == b.environments
        assert np.array_equal(a.row_env, b.row_env)
        assert a.environments == tuple(sorted(a.environments))
