"""Loading, validation, windowing, and environment indexing of MET yield tables.

A dataset is a tidy table of yield observations keyed by
(year, zone, location, genotype, replicate).  Environments are
year-by-location combinations; each carries its own residual variance
downstream, so their ordering is fixed (year-major, then location) to keep
labels stable across runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


class SchemaError(ValueError):
    """The CSV header does not expose the required columns."""


class ConsistencyError(ValueError):
    """Rows contradict each other (e.g. one location under two zones)."""


class ParseError(ValueError):
    """A cell could not be parsed; the message carries the row number."""


class PlanError(ValueError):
    """A window plan is incompatible with the dataset's year set."""


#: Default CSV column names; override via the ``schema`` argument of
#: :func:`load_met_csv`.
DEFAULT_SCHEMA = {
    "year": "year",
    "zone": "zone",
    "location": "location",
    "genotype": "genotype",
    "replicate": "replicate",
    "yield": "yield",
}

_MISSING_TOKENS = {"", "na", "nan", "null", "none", "."}


@dataclass(frozen=True)
class ObservationRow:
    """One plot observation; ``yield_t_ha`` is None when the yield is missing."""

    year: str
    zone: str
    location: str
    genotype: str
    replicate: int
    yield_t_ha: float | None

    def __post_init__(self):
        if not (self.year and self.zone and self.location and self.genotype):
            raise ConsistencyError("row labels must be non-empty")
        if self.replicate < 1:
            raise ConsistencyError(f"replicate must be >= 1, got {self.replicate}")
        if self.yield_t_ha is not None and not math.isfinite(self.yield_t_ha):
            raise ConsistencyError(f"yield must be finite, got {self.yield_t_ha}")


@dataclass(frozen=True)
class MetDataset:
    """Validated MET table plus the ordered zone and year label sets.

    Construct through :meth:`from_rows`, which checks the location->zone
    consistency invariant and derives the label sets.  Year labels must sort
    chronologically (e.g. ``2001`` or ``2001-2002``).
    """

    rows: tuple[ObservationRow, ...]
    zones: tuple[str, ...]
    years: tuple[str, ...]

    @classmethod
    def from_rows(cls, rows: Sequence[ObservationRow]) -> "MetDataset":
        rows = tuple(rows)
        if not rows:
            raise ConsistencyError("dataset must contain at least one row")
        loc_zone: dict[str, str] = {}
        for r in rows:
            seen = loc_zone.setdefault(r.location, r.zone)
            if seen != r.zone:
                raise ConsistencyError(
                    f"location {r.location!r} appears under zones "
                    f"{seen!r} and {r.zone!r}"
                )
        zones = tuple(sorted({r.zone for r in rows}))
        years = tuple(sorted({r.year for r in rows}))
        return cls(rows=rows, zones=zones, years=years)

    @property
    def n_missing(self) -> int:
        return sum(1 for r in self.rows if r.yield_t_ha is None)

    @property
    def n_observed(self) -> int:
        return len(self.rows) - self.n_missing

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class EnvironmentIndex:
    """Ordered year-by-location environments with per-row membership.

    ``environments`` is year-major then location-label ordered.  ``row_env``
    maps every row (missing yields included) to its environment index;
    ``counts`` holds the number of non-missing observations per environment,
    so ``counts.sum()`` equals the observed-row total.
    """

    environments: tuple[tuple[str, str], ...]
    row_env: np.ndarray
    counts: np.ndarray

    @property
    def n_environments(self) -> int:
        return len(self.environments)

    def keys(self) -> tuple[str, ...]:
        """Stable string keys, ``"year|location"``."""
        return tuple(f"{y}|{c}" for (y, c) in self.environments)


@dataclass(frozen=True)
class WindowPlan:
    """Chronological partition of the year set, oldest window first."""

    window_year_counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.window_year_counts) < 1:
            raise PlanError("plan must contain at least one window")
        if any(c < 2 for c in self.window_year_counts):
            raise PlanError("each window must span at least 2 years")

    @property
    def n_windows(self) -> int:
        return len(self.window_year_counts)

    def validate_against(self, data: MetDataset) -> None:
        total = sum(self.window_year_counts)
        if total != len(data.years):
            raise PlanError(
                f"plan covers {total} years but dataset has {len(data.years)}"
            )


def _parse_yield(text: str, line_no: int) -> float | None:
    if text.strip().lower() in _MISSING_TOKENS:
        return None
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"non-numeric yield {text!r} at data row {line_no}") from None


def load_met_csv(
    path,
    schema: Mapping[str, str] | None = None,
    *,
    filters: Mapping[str, str] | None = None,
    max_missing_frac: float = 0.05,
) -> MetDataset:
    """Read a MET CSV into a validated :class:`MetDataset`.

    Parameters
    ----------
    path : path-like
        CSV file with a header row.
    schema : mapping, optional
        Maps the logical names ``year, zone, location, genotype, replicate,
        yield`` to the file's column names.  Missing keys fall back to
        :data:`DEFAULT_SCHEMA`.
    filters : mapping, optional
        Column-name -> required-value pairs; rows not matching are skipped
        (e.g. ``{"season": "winter"}``).
    max_missing_frac : float
        Maximum tolerated fraction of missing yields.

    Missing yields are preserved as ``None``; they are excluded from any
    likelihood downstream but remain countable via ``MetDataset.n_missing``.
    """
    colmap = dict(DEFAULT_SCHEMA)
    if schema:
        colmap.update(schema)
    rows: list[ObservationRow] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = set(colmap.values())
        if filters:
            needed |= set(filters)
        absent = sorted(needed - set(header))
        if absent:
            raise SchemaError(f"missing columns {absent} in {path}")
        for line_no, rec in enumerate(reader, start=1):
            if filters and any(rec[c].strip() != v for c, v in filters.items()):
                continue
            try:
                rep = int(rec[colmap["replicate"]])
            except ValueError:
                raise ParseError(
                    f"non-integer replicate {rec[colmap['replicate']]!r} "
                    f"at data row {line_no}"
                ) from None
            rows.append(
                ObservationRow(
                    year=rec[colmap["year"]].strip(),
                    zone=rec[colmap["zone"]].strip(),
                    location=rec[colmap["location"]].strip(),
                    genotype=rec[colmap["genotype"]].strip(),
                    replicate=rep,
                    yield_t_ha=_parse_yield(rec[colmap["yield"]], line_no),
                )
            )
    data = MetDataset.from_rows(rows)
    if data.n_missing > max_missing_frac * len(data):
        raise ConsistencyError(
            f"{data.n_missing} of {len(data)} yields missing, above the "
            f"declared fraction {max_missing_frac}"
        )
    return data


def write_met_csv(data: MetDataset, path) -> None:
    """Emit a dataset using the default schema (inverse of :func:`load_met_csv`)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["year", "zone", "location", "genotype", "replicate", "yield"]
        )
        for r in data.rows:
            y = "" if r.yield_t_ha is None else repr(r.yield_t_ha)
            writer.writerow([r.year, r.zone, r.location, r.genotype, r.replicate, y])


def partition_windows(data: MetDataset, plan: WindowPlan) -> list[MetDataset]:
    """Split a dataset into disjoint chronological multi-year windows.

    Windows are ordered oldest-first and preserve input row order within
    each window; their union is exactly the input rows.
    """
    plan.validate_against(data)
    year_to_window: dict[str, int] = {}
    start = 0
    for w, count in enumerate(plan.window_year_counts):
        for year in data.years[start : start + count]:
            year_to_window[year] = w
        start += count
    buckets: list[list[ObservationRow]] = [[] for _ in plan.window_year_counts]
    for r in data.rows:
        buckets[year_to_window[r.year]].append(r)
    return [MetDataset.from_rows(b) for b in buckets]


def index_environments(data: MetDataset) -> EnvironmentIndex:
    """Index the observed year-by-location environments of a dataset.

    A pure function of the dataset: the ordering is year-major then
    location-label, and counts exclude missing-yield rows.
    """
    pairs = sorted({(r.year, r.location) for r in data.rows})
    pos = {p: i for i, p in enumerate(pairs)}
    row_env = np.array([pos[(r.year, r.location)] for r in data.rows], dtype=np.intp)
    counts = np.zeros(len(pairs), dtype=np.intp)
    for r in data.rows:
        if r.yield_t_ha is not None:
            counts[pos[(r.year, r.location)]] += 1
    return EnvironmentIndex(
        environments=tuple(pairs), row_env=row_env, counts=counts
    )
