import numpy as np
import pytest
from hypothesis import settings

from vgmls.geometry import analytic_frame, get_manifold, sample_manifold
from vgmls.tangents import FrameField

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: long-running end-to-end criteria")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cloud_with_frames(name, N, seed=0):
    m = get_manifold(name)
    c = sample_manifold(m, N, seed)
    return c, FrameField(analytic_frame(m, c.param_coords))


def random_orthogonal(rng, N, d):
    Q, R = np.linalg.qr(rng.standard_normal((N, d, d)))
    return Q * np.sign(np.einsum("nii->ni", R))[:, None, :]


ACCEPTANCE_LINES = []


def record_criterion(label, ok, detail=""):
    """Print one pass/fail line for an acceptance criterion and keep it for the summary."""
    line = f"{label}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print("\n" + line, flush=True)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
