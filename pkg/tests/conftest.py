import numpy as np
import pytest

from agreemesh.core import Conversation, Day, SettingDescriptor, Transcript, numeric


def make_transcript(days, d=1, n_agents=2, kind="canonical", epsilon=0.1):
    """Build a transcript from ``[(predictions, outcome), ...]``.

    Messages equal predictions. ``predictions`` is a list of scalars or
    d-vectors, one per round.
    """
    tr = Transcript(setting=SettingDescriptor(kind, d, n_agents), epsilon=epsilon)
    for preds, y in days:
        conv = Conversation()
        for p in preds:
            conv.append(numeric(p), p)
        tr.days.append(Day(conv, tuple(float(v) for v in np.atleast_1d(y))))
    return tr


def lengths_transcript(lengths):
    return make_transcript([([0.5] * L, 0.0) for L in lengths])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# One line per acceptance criterion, echoed in the terminal summary so that the
# pass/fail table shows up even when output is captured.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
