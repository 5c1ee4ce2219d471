import numpy as np
import pytest

from pqbench.imaging import Image
from pqbench.distortions import gaussian_blur


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    print(f"\n[acceptance] {name}: {report.outcome.upper()}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def smooth_image(rng):
    """Structured grayscale test image, 64x64, values well inside [0, 1]."""
    noise = 0.15 + 0.7 * rng.random((64, 64))
    return gaussian_blur(Image.from_array(noise.astype(np.float32)), 1.5)


def make_smooth(shape, seed, lo=0.1, hi=0.9, blur=1.5):
    r = np.random.default_rng(seed)
    base = lo + (hi - lo) * r.random(shape)
    return gaussian_blur(Image.from_array(base.astype(np.float32)), blur)
