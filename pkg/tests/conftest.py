import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ci", deadline=None, max_examples=60, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

TINT = np.array([1.0, 0.8, 0.6])


def shaded_two_region(step=0.15, size=32, split=16, vertical_ramp=False):
    """Left/right regions separated by ``step``, plus a ramp of the same amplitude."""
    gt = np.zeros((size, size), dtype=np.int64)
    gt[:, split:] = 1
    ramp = np.linspace(0.0, 1.0, size)
    ramp = np.tile(ramp[:, None], (1, size)) if vertical_ramp else np.tile(ramp, (size, 1))
    base = 0.3 + step * gt + step * ramp
    return base[:, :, None] * TINT, gt


def quadrants(size=32):
    yy, xx = np.mgrid[0:size, 0:size]
    gt = (yy >= size // 2).astype(np.int64) * 2 + (xx >= size // 2)
    levels = np.array([0.2, 0.45, 0.65, 0.9])
    colors = np.array([[1.0, 0.3, 0.3], [0.3, 1.0, 0.3], [0.3, 0.3, 1.0], [0.9, 0.9, 0.3]])
    return levels[gt][:, :, None] * colors[gt], gt


def disk(size=32, radius=9):
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2
    gt = (((yy - c) ** 2 + (xx - c) ** 2) <= radius**2).astype(np.int64)
    shade = 0.05 * xx / size
    img = (0.25 + 0.4 * gt + shade)[:, :, None] * TINT
    return img, gt


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
