import numpy as np
import pytest

from convbias import data as D


def write_synthetic_mnist(directory, n_train=600, n_test=200, seed=0):
    """Learnable 28x28 IDX data: one random template per class plus noise."""
    r = np.random.default_rng(seed)
    templates = r.integers(0, 256, size=(10, 28, 28))
    for split, n in (("train", n_train), ("test", n_test)):
        labels = np.arange(n) % 10
        r.shuffle(labels)
        noise = r.integers(0, 256, size=(n, 28, 28))
        images = (0.6 * templates[labels] + 0.4 * noise).astype(np.uint8)
        img_name, lab_name = D.MNIST_FILES[split]
        D.write_idx(directory / img_name, images)
        D.write_idx(directory / lab_name, labels.astype(np.uint8))
    return directory


@pytest.fixture(scope="session")
def mnist_like(tmp_path_factory):
    return write_synthetic_mnist(tmp_path_factory.mktemp("mnist_like"))


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
