import numpy as np
import pytest

from basisflow.geometry import Homography, dlt

ACCEPTANCE = {}


def record(criterion, ok, detail):
    """Remember an acceptance outcome for the end-of-run summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def corners(width, height):
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    return np.array([[-cx, -cy], [cx, -cy], [cx, cy], [-cx, cy]])


def random_homography(rng, width, height, rho):
    """Homography moving the four image corners by offsets uniform in [-rho, rho]."""
    c = corners(width, height)
    return dlt(c, c + rng.uniform(-rho, rho, size=(4, 2)))


def random_affine(rng, width, height, rho):
    c = corners(width, height)[:3]
    dst = c + rng.uniform(-rho, rho, size=(3, 2))
    a = np.linalg.solve(np.c_[c, np.ones(3)], dst).T
    return Homography(np.vstack([a, [0.0, 0.0, 1.0]]))


def smooth_image(rng, width, height, freq=3):
    """Sum of a few random low-frequency sinusoids, scaled into [0.1, 0.9]."""
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.zeros((height, width))
    for _ in range(6):
        kx, ky = rng.uniform(-freq, freq, 2) * 2 * np.pi / np.array([width, height])
        img += rng.uniform(0.5, 1.0) * np.sin(kx * x + ky * y + rng.uniform(0, 2 * np.pi))
    img -= img.min()
    return 0.1 + 0.8 * img / img.max()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
