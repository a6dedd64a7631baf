import numpy as np
import pytest

from gaets.data import RawSeries


@pytest.fixture
def write_csv(tmp_path):
    """Write a CSV file from a header and rows of cells; returns the path."""

    def _write(name, header, rows):
        path = tmp_path / name
        lines = [",".join(header)]
        lines += [",".join(str(c) for c in row) for row in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return _write


@pytest.fixture
def random_series():
    def _make(n_vars=3, length=300, seed=0):
        rng = np.random.default_rng(seed)
        values = rng.normal(size=(n_vars, length))
        return RawSeries(values=values, var_names=tuple(f"v{i}" for i in range(n_vars)))

    return _make
