import numpy as np
import pytest

from fairacq.dataset import Dataset, SplitSpec, SyntheticSpec, split, synthesize


def make_dataset(X, y, s, ids=None, names=None, sensitive_name="s"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    ids = np.arange(len(X)) if ids is None else ids
    names = names or [f"x{j}" for j in range(X.shape[1])]
    return Dataset(X, y, s, ids, names, sensitive_name, "y")


def random_dataset(n, p, seed=0, sensitive_feature=True):
    """Logistic data whose label and group both depend on the features."""
    rng = np.random.default_rng(seed)
    s = (rng.random(n) < 0.6).astype(int)
    X = rng.standard_normal((n, p)) + 0.5 * s[:, None]
    w = rng.standard_normal(p)
    y = (rng.random(n) < 1 / (1 + np.exp(-(X @ w)))).astype(int)
    y[:2] = (0, 1)
    s[2:4] = (0, 1)
    if sensitive_feature:
        X = np.column_stack([X, s])
        names = [f"x{j}" for j in range(p)] + ["s"]
    else:
        names = [f"x{j}" for j in range(p)]
    return Dataset(X, y, s, np.arange(n), names, "s", "y")


@pytest.fixture(scope="session")
def small_split():
    data = synthesize(SyntheticSpec.biased_pool(n=4000, seed=3))
    return split(data, SplitSpec(seed=3))


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion, then assert it."""
    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
