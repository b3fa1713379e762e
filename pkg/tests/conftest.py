import os
from pathlib import Path

import numpy as np
import pytest

from hqnn.data import Dataset, Split, mnist_available

ROOT = Path(__file__).resolve().parents[1]


def mnist_dir() -> Path:
    return Path(os.environ.get("HQNN_MNIST_DIR", ROOT / "data" / "mnist"))


requires_mnist = pytest.mark.skipif(not mnist_available(mnist_dir()),
                                    reason=f"MNIST IDX files not found in {mnist_dir()} (set HQNN_MNIST_DIR)")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _digits_as_mnist():
    """sklearn's bundled 8x8 digits, upscaled 3x and padded to 28x28 (a stand-in, not MNIST)."""
    from sklearn.datasets import load_digits

    d = load_digits()
    imgs = np.kron(d.images / 16.0, np.ones((3, 3)))
    imgs = np.pad(imgs, ((0, 0), (2, 2), (2, 2)))
    return imgs, d.target.astype(np.int64)


@pytest.fixture(scope="session")
def digits_28():
    imgs, labels = _digits_as_mnist()
    order = np.random.default_rng(0).permutation(len(imgs))
    tr, te = order[:1500], order[1500:]
    return (Dataset(imgs[tr][:, None], labels[tr], Split.TRAIN),
            Dataset(imgs[te][:, None], labels[te], Split.TEST))


# one "criterion N PASS/FAIL" line per acceptance check, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
