import numpy as np
import pytest

from cvmatch.data import Dataset


def random_dataset(rng, n=30, p=3, binary=False) -> Dataset:
    """Random dataset with both arms guaranteed non-empty."""
    x = rng.normal(size=(n, p))
    d = np.zeros(n, dtype=np.int64)
    d[rng.permutation(n)[: max(1, n // 2)]] = 1
    if d.sum() == n:
        d[0] = 0
    if binary:
        y = (rng.uniform(size=n) < 0.5).astype(float)
        return Dataset(x, d, y, "binary")
    y = rng.normal(size=n)
    return Dataset(x, d, y)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
