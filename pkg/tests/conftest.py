import numpy as np
import pytest

from nodulex.ingest import CTVolume
from nodulex.phantom import PhantomConfig, generate_phantom


def sphere_volume(radius_vox, dims=(41, 41, 41), spacing=(1.0, 1.0, 1.0), inside=50, outside=-850, center=None):
    nx, ny, nz = dims
    cx, cy, cz = center if center is not None else ((nx - 1) / 2, (ny - 1) / 2, (nz - 1) / 2)
    z, y, x = np.mgrid[0:nz, 0:ny, 0:nx]
    inside_mask = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= radius_vox**2
    vox = np.where(inside_mask, inside, outside).astype(np.int16)
    return CTVolume(vox, spacing, "SPH"), inside_mask


@pytest.fixture(scope="session")
def small_study(tmp_path_factory):
    """A 10-patient phantom study directory (20 nodules, 20 non-nodules)."""
    out = tmp_path_factory.mktemp("study10")
    manifest, _ = generate_phantom(PhantomConfig(n_patients=10, seed=7), out)
    return out, manifest


_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    n = mark.args[0]
    ok = rep.passed and _criteria.get(n, True)
    _criteria[n] = ok


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if _criteria[n] else 'FAIL'}")
