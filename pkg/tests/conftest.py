import numpy as np
import pytest

from aggnash.game_model import GameSpec, lq_game

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def gq():
    """Two players, c = (1, 2), d = 0.1, identity aggregation."""
    return lq_game(2, c=[1.0, 2.0], d=0.1)


@pytest.fixture
def gq5():
    return lq_game(5, c=[1, 2, 3, 4, 5], d=0.1)


def zero_game(N, n=1):
    def cost_grad(i, xi, si):
        return np.zeros(n), np.zeros(n)

    return GameSpec(N, n, cost_grad, lambda i, xi: xi.copy(), lambda i, xi: np.eye(n),
                    name="zero")


def lq_oracle(c, d):
    """Dense linear solve of the NE condition for the scalar LQ game."""
    c = np.asarray(c, dtype=float)
    N = len(c)
    A = (1 + d / N) * np.eye(N) + d / N * np.ones((N, N))
    return np.linalg.solve(A, c)
