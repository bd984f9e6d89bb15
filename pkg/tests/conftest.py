import numpy as np
import pytest

from kgbilinear.kb import KnowledgeBase


def make_kb(train, valid=(), test=(), n_entities=None, n_relations=None):
    train = np.asarray(train, dtype=np.int64).reshape(-1, 3)
    valid = np.asarray(valid, dtype=np.int64).reshape(-1, 3)
    test = np.asarray(test, dtype=np.int64).reshape(-1, 3)
    allt = np.concatenate([train, valid, test])
    N = n_entities or int(max(allt[:, 0].max(), allt[:, 2].max()) + 1)
    K = n_relations or int(allt[:, 1].max() + 1)
    return KnowledgeBase([f"e{i}" for i in range(N)], [f"r{k}" for k in range(K)],
                         train, valid, test)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def write_splits(tmp_path):
    """Write three TSV split files from lists of string triples."""
    def _write(train, valid=(), test=(), directory=None):
        d = directory or tmp_path
        d.mkdir(parents=True, exist_ok=True)
        for name, rows in (("train", train), ("valid", valid), ("test", test)):
            (d / f"{name}.txt").write_text("".join("\t".join(r) + "\n" for r in rows),
                                           encoding="utf-8")
        return d
    return _write


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance criterion lines at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
    for number in range(1, 10):
        if number not in results:
            terminalreporter.write_line(f"criterion {number}: SKIPPED or not run")
