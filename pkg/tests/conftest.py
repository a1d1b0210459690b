import numpy as np
import pytest

from aslnet.data import make_synthetic, write_raw

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synthetic():
    return make_synthetic(num_classes=8, per_class=16, seed=0)


def write_tree(root, classes: dict[str, int], size=(12, 12), seed=0, fmt="raw"):
    """Class-per-directory tree of random images; returns the root."""
    from PIL import Image

    rng = np.random.default_rng(seed)
    for name, count in classes.items():
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            img = rng.integers(0, 256, (*size, 3), dtype=np.uint8)
            if fmt == "raw":
                write_raw(d / f"img_{i:03d}.raw", img)
            else:
                Image.fromarray(img).save(d / f"img_{i:03d}.png")
    return root


@pytest.fixture
def tree(tmp_path):
    return write_tree(tmp_path / "data", {"A": 2, "B": 2, "space": 2})
