"""Shared fixtures, a session-wide recorder of every constructed Pose rotation and
the acceptance report collected at the end of the run."""
import numpy as np
import pytest

from doorkin import geometry

ROTATION_LOG = {"count": 0, "worst_ortho": 0.0, "worst_det": 0.0}
ACCEPTANCE_LINES = []
_original_post_init = geometry.Pose.__post_init__


def _recording_post_init(self):
    _original_post_init(self)
    r = self.rotation
    ROTATION_LOG["count"] += 1
    ortho = float(np.max(np.abs(r.T @ r - np.eye(3))))
    det = abs(float(np.linalg.det(r)) - 1.0)
    ROTATION_LOG["worst_ortho"] = max(ROTATION_LOG["worst_ortho"], ortho)
    ROTATION_LOG["worst_det"] = max(ROTATION_LOG["worst_det"], det)


def rotation_audit():
    log = ROTATION_LOG
    ok = log["worst_ortho"] < 1e-9 and log["worst_det"] < 1e-9
    text = (f"{log['count']} poses, max |R^T R - I| = {log['worst_ortho']:.2e}, "
            f"max |det R - 1| = {log['worst_det']:.2e}")
    return ok, text


def pytest_configure(config):
    geometry.Pose.__post_init__ = _recording_post_init


def pytest_collection_modifyitems(session, config, items):
    # acceptance runs last so the rotation criterion sees every other test's poses
    def key(item):
        in_acc = item.module.__name__.endswith("test_acceptance")
        return (in_acc, in_acc and "criterion_02" in item.name)
    items.sort(key=key)


def pytest_sessionfinish(session, exitstatus):
    ok, _ = rotation_audit()
    if not ok and session.exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    ok, text = rotation_audit()
    tr = terminalreporter
    if ACCEPTANCE_LINES:
        tr.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            tr.write_line(line)
    tr.write_line(f"[rotation audit] full session, {text}: {'PASS' if ok else 'FAIL'}")


@pytest.fixture
def criterion(capsys):
    """``report(n, text, ok)``: print one pass/fail line and assert it."""

    def report(n: int, text: str, ok: bool):
        line = f"[criterion {n}] {text}: {'PASS' if ok else 'FAIL'}"
        ACCEPTANCE_LINES.append((n, line))
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return report


@pytest.fixture
def rotation_log():
    return ROTATION_LOG


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
