import numpy as np
import pytest

from metbayes.data import MetDataset, ObservationRow


def make_rows(records):
    """Rows from (year, zone, loc, gen, rep, yield) tuples; None = missing."""
    return [
        ObservationRow(
            year=y, zone=z, location=c, genotype=g, replicate=r, yield_t_ha=v
        )
        for (y, z, c, g, r, v) in records
    ]


def write_csv(path, records, header="year,zone,location,genotype,replicate,yield"):
    lines = [header]
    for rec in records:
        lines.append(",".join("" if p is None else str(p) for p in rec))
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def two_row_dataset():
    return MetDataset.from_rows(
        make_rows(
            [
                ("2001", "Z1", "L1", "G1", 1, 4.0),
                ("2001", "Z1", "L1", "G1", 2, 4.2),
            ]
        )
    )
