import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from cnng.data import Dataset, load_idx_pair, write_idx_pair

MNIST_FILES = {
    "train_images": ["train-images-idx3-ubyte", "train-images.idx3-ubyte"],
    "train_labels": ["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"],
    "test_images": ["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"],
    "test_labels": ["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"],
}
EMNIST_FILES = {
    "train_images": ["emnist-balanced-train-images-idx3-ubyte"],
    "train_labels": ["emnist-balanced-train-labels-idx1-ubyte"],
    "test_images": ["emnist-balanced-test-images-idx3-ubyte"],
    "test_labels": ["emnist-balanced-test-labels-idx1-ubyte"],
}


@dataclass
class DigitData:
    train: Dataset
    test: Dataset
    paths: dict
    full: bool  # official MNIST files rather than the bundled 5k subset
    source: str


def _find(directory: Path, names):
    for name in names:
        for candidate in (directory / name, directory / (name + ".gz")):
            if candidate.is_file():
                return candidate
    return None


def _locate(env_var, table):
    directory = os.environ.get(env_var)
    if not directory:
        return None
    paths = {key: _find(Path(directory), names) for key, names in table.items()}
    return paths if all(paths.values()) else None


def _surrogate(directory: Path) -> dict:
    """Write the 5000-image MNIST sample bundled with mlxtend as IDX files (4000/1000)."""
    mlxtend_data = pytest.importorskip("mlxtend.data")
    x, y = mlxtend_data.mnist_data()
    images = x.reshape(-1, 28, 28).astype(np.uint8)
    order = np.random.default_rng(0).permutation(len(y))
    tr, te = order[:4000], order[4000:]
    paths = {k: directory / names[0] for k, names in MNIST_FILES.items()}
    write_idx_pair(images[tr], y[tr], paths["train_images"], paths["train_labels"])
    write_idx_pair(images[te], y[te], paths["test_images"], paths["test_labels"])
    return paths


@pytest.fixture(scope="session")
def mnist(tmp_path_factory) -> DigitData:
    paths = _locate("CNNG_MNIST_DIR", MNIST_FILES)
    full = paths is not None
    if not full:
        paths = _surrogate(tmp_path_factory.mktemp("mnist5k"))
    train = load_idx_pair(paths["train_images"], paths["train_labels"], "mnist")
    test = load_idx_pair(paths["test_images"], paths["test_labels"], "mnist")
    source = "official MNIST (60000/10000)" if full else "mlxtend 5k MNIST sample (4000/1000)"
    return DigitData(train, test, paths, full, source)


@pytest.fixture(scope="session")
def emnist():
    paths = _locate("CNNG_EMNIST_DIR", EMNIST_FILES)
    if paths is None:
        return None
    train = load_idx_pair(paths["train_images"], paths["train_labels"], "emnist", transpose=True)
    test = load_idx_pair(paths["test_images"], paths["test_labels"], "emnist", transpose=True)
    num_classes = max(train.num_classes, test.num_classes)
    train.num_classes = test.num_classes = num_classes
    return DigitData(train, test, paths, True, "EMNIST balanced")


@pytest.fixture
def blobs():
    """Two well separated Gaussian blobs in 2-D, labelled 0 and 1."""
    rng = np.random.default_rng(3)
    a = rng.normal([-4.0, -4.0], 0.5, size=(40, 2))
    b = rng.normal([4.0, 4.0], 0.5, size=(40, 2))
    x = np.vstack([a, b])
    y = np.array([0] * 40 + [1] * 40)
    return Dataset(x, y, 2, "blobs")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
