import numpy as np
import pytest

from inertia_kit import simkit

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def walk_traj():
    return simkit.synth_trajectory(simkit.MotionProfile.preset("walk", duration=60.0, seed=1))


@pytest.fixture(scope="session")
def short_walk():
    return simkit.synth_trajectory(simkit.MotionProfile.preset("walk", duration=3.0, seed=4))


@pytest.fixture(scope="session")
def walk_recordings(tmp_path_factory):
    """Four prepared 40 s noisy walks with sinusoidal bias drift (A-D)."""
    from inertia_kit import pipeline

    root = tmp_path_factory.mktemp("walks")
    recs = []
    for i, pid in enumerate("ABCD"):
        spec = pipeline.SimSpec(pid, "walk", duration=40.0, seed=100 + i)
        path = pipeline.simulate_recording(spec, root / pid)
        recs.append(pipeline.prepare_recording(path))
    return recs
