from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from silpose.geometry import CameraPose, quat_normalize
from silpose.remesh import SphereGrid

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def small_sphere(U: int = 10, V: int = 8, radius: float = 0.6):
    return SphereGrid.sphere(U, V, radius).mesh()


def random_pose(rng, z0_max: float = 0.3) -> CameraPose:
    return CameraPose(
        quat_normalize(rng.normal(size=4)),
        float(rng.uniform(0.6, 1.0)),
        rng.uniform(-0.15, 0.15, 2),
        float(rng.uniform(0.0, z0_max)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
