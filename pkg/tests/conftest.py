import numpy as np
import pytest

from urqsim.data import Dataset, _csr, shard

# acceptance verdicts, filled by test_acceptance and echoed at the end of the run
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        verdict, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"{verdict} criterion {n}: {text}")


def make_dataset(rows, labels=None, dim=None, name="t"):
    """Dataset from dense rows."""
    a = np.atleast_2d(np.asarray(rows, dtype=float))
    b = np.zeros(a.shape[0]) if labels is None else np.asarray(labels, dtype=float)
    indptr, indices, data = [0], [], []
    for r in a:
        nz = np.flatnonzero(r)
        indices.extend(nz.tolist())
        data.extend(r[nz].tolist())
        indptr.append(len(indices))
    d = a.shape[1] if dim is None else dim
    return Dataset(_csr(indptr, indices, data, (a.shape[0], d)), b, name)


def make_shards(rows, labels=None, m=1):
    return shard(make_dataset(rows, labels), m)


@pytest.fixture
def toy_shards():
    return make_shards


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
