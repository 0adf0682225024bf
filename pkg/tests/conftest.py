import numpy as np
import pytest

from tempagg.sampler import FrameFeatureSequence

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def record_criterion():
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""

    def record(name: str, passed: bool, detail: str = "") -> None:
        _ACCEPTANCE.append((name, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_sequence(rng, frames=40, dim=3, fps=None, video_id="vid"):
    """Uniform or jittered timestamps starting at 0."""
    if fps is not None:
        return FrameFeatureSequence.uniform(video_id, "rgb", rng.standard_normal((frames, dim)), fps)
    ts = np.cumsum(rng.uniform(0.05, 0.5, size=frames)) - 0.05
    return FrameFeatureSequence(video_id, "rgb", ts, rng.standard_normal((frames, dim)))
