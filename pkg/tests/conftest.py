import numpy as np
import pytest

from sparsesde import SparseObservations

# one line per acceptance criterion, emitted after the summary so the
# pass/fail verdicts survive pytest's capture of per-test stdout
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_obs(curves) -> SparseObservations:
    """Build observations from [(t_array, y_array), ...], one tuple per curve."""
    cid, tt, yy = [], [], []
    for i, (t, y) in enumerate(curves):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        cid.append(np.full(t.size, i))
        tt.append(t)
        yy.append(y)
    obs = SparseObservations(
        curve_id=np.concatenate(cid).astype(int),
        t=np.concatenate(tt),
        y=np.concatenate(yy),
    )
    obs.validate()
    return obs


@pytest.fixture
def rng():
    return np.random.default_rng(20260818)
