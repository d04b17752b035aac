"""Fixed- and random-effect design matrices for the hierarchical yield model.

The model decomposes a yield observation additively into an intercept, zone
fixed effects, and eight random effects: year, zone-year, zone-location-year,
replicate (nested in location-year), genotype-year, genotype-zone-year,
genotype-zone-location-year, and genotype-zone.  The genotype-zone effect is
the only one with a matrix-valued covariance (an unstructured zone-by-zone
block per genotype), so it sits last in the effect ordering and always
carries all genotype-by-zone columns, genotype-major.

All incidence matrices are stored as per-row level indices (each row of a
random-effect matrix has exactly one 1); materialized sparse matrices are
available through :attr:`ModelMatrices.Z_list`.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .data import EnvironmentIndex, MetDataset, ObservationRow, index_environments

#: Fixed stacked-effect ordering; the matrix-covariance effect is last.
EFFECT_NAMES = (
    "year",
    "zone_year",
    "zone_loc_year",
    "zone_loc_rep_year",
    "gen_year",
    "gen_zone_year",
    "gen_zone_loc_year",
    "gen_zone",
)

#: Effects with a scalar variance component (all but the last).
SCALAR_EFFECT_NAMES = EFFECT_NAMES[:-1]

#: Variance-component label for each effect, e.g. ``var_year``.
VARIANCE_LABELS = {name: f"var_{name}" for name in SCALAR_EFFECT_NAMES}


class DegenerateDesignWarning(UserWarning):
    """A random effect has a single level; its variance is barely informed."""


@dataclass(frozen=True)
class EffectLayout:
    """Names, level labels, and column offsets of the stacked random effects."""

    names: tuple[str, ...]
    level_labels: tuple[tuple[str, ...], ...]
    offsets: tuple[int, ...]

    @property
    def total_columns(self) -> int:
        return self.offsets[-1] + len(self.level_labels[-1])

    def to_json(self) -> str:
        payload = {
            "names": list(self.names),
            "level_labels": [list(ls) for ls in self.level_labels],
            "offsets": list(self.offsets),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EffectLayout":
        payload = json.loads(text)
        return cls(
            names=tuple(payload["names"]),
            level_labels=tuple(tuple(ls) for ls in payload["level_labels"]),
            offsets=tuple(payload["offsets"]),
        )


@dataclass(frozen=True)
class ModelMatrices:
    """Design matrices for one dataset, missing-yield rows excluded.

    ``effect_levels[k][i]`` is the column of the single 1 in row ``i`` of the
    k-th incidence matrix; ``effect_ncols[k]`` is its column count.  ``X``
    encodes the intercept plus treatment-coded zone effects (first zone is
    the reference level).
    """

    X: np.ndarray
    effect_names: tuple[str, ...]
    effect_levels: tuple[np.ndarray, ...]
    effect_ncols: tuple[int, ...]
    env_index: EnvironmentIndex
    layout: EffectLayout
    zone_labels: tuple[str, ...]
    genotype_labels: tuple[str, ...]
    fixed_labels: tuple[str, ...]

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    @property
    def n_fixed(self) -> int:
        return self.X.shape[1]

    @property
    def zone_count(self) -> int:
        return len(self.zone_labels)

    @property
    def genotype_count(self) -> int:
        return len(self.genotype_labels)

    @property
    def gen_zone_index(self) -> int | None:
        """Position of the matrix-covariance effect, if present."""
        try:
            return self.effect_names.index("gen_zone")
        except ValueError:
            return None

    def incidence(self, k: int) -> sp.csr_matrix:
        """Materialize the k-th incidence matrix (n x Q_k, one 1 per row)."""
        n = self.n_obs
        lev = self.effect_levels[k]
        return sp.csr_matrix(
            (np.ones(n), (np.arange(n), lev)), shape=(n, self.effect_ncols[k])
        )

    @property
    def Z_list(self) -> list[sp.csr_matrix]:
        return [self.incidence(k) for k in range(len(self.effect_names))]


def _kept_rows(data: MetDataset) -> list[ObservationRow]:
    return [r for r in data.rows if r.yield_t_ha is not None]


def response_vector(data: MetDataset) -> np.ndarray:
    """Non-missing yields in dataset row order; aligns with :func:`build_design`."""
    return np.array([r.yield_t_ha for r in _kept_rows(data)], dtype=float)


def _level_index(keys: list[tuple]) -> tuple[np.ndarray, list[tuple]]:
    levels = sorted(set(keys))
    pos = {lv: i for i, lv in enumerate(levels)}
    return np.array([pos[k] for k in keys], dtype=np.intp), levels


def build_design(data: MetDataset) -> ModelMatrices:
    """Construct all design matrices for a validated dataset.

    Random-effect levels are instantiated only for observed factor-level
    combinations, except the genotype-zone effect which always carries all
    ``M * Z`` columns (genotype-major) so the Kronecker-structured
    covariance aligns blockwise.
    """
    rows = _kept_rows(data)
    if not rows:
        raise ValueError("dataset has no observed yields")
    obs_data = MetDataset.from_rows(rows)
    env_index = index_environments(obs_data)

    zones = obs_data.zones
    genotypes = tuple(sorted({r.genotype for r in rows}))
    n = len(rows)
    Z = len(zones)
    zone_pos = {z: i for i, z in enumerate(zones)}
    gen_pos = {g: i for i, g in enumerate(genotypes)}

    # Intercept plus treatment-coded zone contrasts (first zone = reference).
    X = np.zeros((n, 1 + max(Z - 1, 0)))
    X[:, 0] = 1.0
    for i, r in enumerate(rows):
        z = zone_pos[r.zone]
        if z > 0:
            X[i, z] = 1.0
    fixed_labels = ("intercept",) + tuple(f"zone:{z}" for z in zones[1:])

    effect_keys = {
        "year": [(r.year,) for r in rows],
        "zone_year": [(r.zone, r.year) for r in rows],
        "zone_loc_year": [(r.zone, r.location, r.year) for r in rows],
        "zone_loc_rep_year": [
            (r.zone, r.location, r.year, r.replicate) for r in rows
        ],
        "gen_year": [(r.genotype, r.year) for r in rows],
        "gen_zone_year": [(r.genotype, r.zone, r.year) for r in rows],
        "gen_zone_loc_year": [
            (r.genotype, r.zone, r.location, r.year) for r in rows
        ],
    }

    levels_list: list[np.ndarray] = []
    ncols_list: list[int] = []
    label_list: list[tuple[str, ...]] = []
    for name in EFFECT_NAMES[:-1]:
        idx, levels = _level_index(effect_keys[name])
        levels_list.append(idx)
        ncols_list.append(len(levels))
        label_list.append(tuple("|".join(str(p) for p in lv) for lv in levels))
        if len(levels) == 1:
            warnings.warn(
                f"effect {name!r} has a single level", DegenerateDesignWarning
            )

    # Genotype-zone: all M*Z columns, genotype-major.
    gz_idx = np.array(
        [gen_pos[r.genotype] * Z + zone_pos[r.zone] for r in rows], dtype=np.intp
    )
    levels_list.append(gz_idx)
    ncols_list.append(len(genotypes) * Z)
    label_list.append(tuple(f"{g}|{z}" for g in genotypes for z in zones))

    offsets = tuple(int(o) for o in np.cumsum([0] + ncols_list[:-1]))
    layout = EffectLayout(
        names=EFFECT_NAMES, level_labels=tuple(label_list), offsets=offsets
    )
    return ModelMatrices(
        X=X,
        effect_names=EFFECT_NAMES,
        effect_levels=tuple(levels_list),
        effect_ncols=tuple(int(q) for q in ncols_list),
        env_index=env_index,
        layout=layout,
        zone_labels=zones,
        genotype_labels=genotypes,
        fixed_labels=fixed_labels,
    )


def toy_matrices(
    effect_names: Sequence[str],
    effect_levels: Sequence[np.ndarray],
    effect_ncols: Sequence[int],
    *,
    X: np.ndarray | None = None,
    env_of_row: np.ndarray | None = None,
    zone_count: int = 1,
) -> ModelMatrices:
    """Assemble a reduced-model :class:`ModelMatrices` directly from arrays.

    Intended for small closed-form studies where the full eight-effect model
    is unnecessary.  ``effect_names`` may be any ordered subset of
    :data:`EFFECT_NAMES`; include ``"gen_zone"`` (last) to get the
    matrix-covariance block, in which case its column count must be a
    multiple of ``zone_count``.
    """
    n = len(effect_levels[0]) if effect_levels else (0 if X is None else len(X))
    if X is None:
        X = np.zeros((n, 0))
    if env_of_row is None:
        env_of_row = np.zeros(n, dtype=np.intp)
    n_env = int(env_of_row.max()) + 1 if n else 0
    counts = np.bincount(env_of_row, minlength=n_env).astype(np.intp)
    env_index = EnvironmentIndex(
        environments=tuple(("Y1", f"L{e + 1}") for e in range(n_env)),
        row_env=np.asarray(env_of_row, dtype=np.intp),
        counts=counts,
    )
    ncols = tuple(int(q) for q in effect_ncols)
    offsets = tuple(int(o) for o in np.cumsum((0,) + ncols[:-1])) if ncols else ()
    layout = EffectLayout(
        names=tuple(effect_names),
        level_labels=tuple(
            tuple(f"{name}[{q}]" for q in range(nc))
            for name, nc in zip(effect_names, ncols)
        ),
        offsets=offsets,
    )
    if "gen_zone" in effect_names:
        gz = list(effect_names).index("gen_zone")
        if ncols[gz] % zone_count:
            raise ValueError("gen_zone column count must divide by zone_count")
        m = ncols[gz] // zone_count
    else:
        m = 1
    return ModelMatrices(
        X=np.asarray(X, dtype=float),
        effect_names=tuple(effect_names),
        effect_levels=tuple(np.asarray(lv, dtype=np.intp) for lv in effect_levels),
        effect_ncols=ncols,
        env_index=env_index,
        layout=layout,
        zone_labels=tuple(f"Z{i + 1}" for i in range(zone_count)),
        genotype_labels=tuple(f"G{i + 1}" for i in range(m)),
        fixed_labels=tuple(f"x{j}" for j in range(X.shape[1])),
    )
