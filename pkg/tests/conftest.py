import numpy as np
import pytest

from golden_ticket.flow import FlowModel
from golden_ticket.nn import init_mlp


def make_model(seed=0, horizon=2, action_dim=3, cond_dim=2, hidden=(8,), dtype=np.float32, num_steps=8):
    d = horizon * action_dim
    net = init_mlp([d + cond_dim + 1, *hidden, d], seed, dtype=dtype)
    return FlowModel(net, d, cond_dim, horizon, action_dim, num_steps=num_steps)


@pytest.fixture
def tiny_model():
    return make_model()


# acceptance criteria record a one-line verdict here; printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
