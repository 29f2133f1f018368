import numpy as np
import pytest

from smoothfuzz.coverage import build_reduction, pad_input, reduce_matrix
from smoothfuzz.surrogate import TrainingSet
from smoothfuzz.targets import execute, get_target


def expcheck_dataset(n=600, m=16, seed=0):
    """Random two-byte prefixes labelled by the expcheck target."""
    rng = np.random.default_rng(seed)
    target = get_target("expcheck")
    X, rows = [], []
    for _ in range(n):
        inp = pad_input(rng.integers(0, 256, 2, dtype=np.uint8).tobytes(), m)
        X.append(inp.array)
        rows.append(execute(target, inp).bitmap.covered)
    mat = np.stack(rows)
    reduction = build_reduction(mat)
    return TrainingSet.split(np.stack(X), reduce_matrix(mat, reduction), rng=seed), reduction


@pytest.fixture(scope="session")
def expcheck_data():
    return expcheck_dataset()[0]
