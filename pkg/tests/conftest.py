import numpy as np
import pytest

from putkit.prob import ConditionalDistribution, PutInstance, binary_symmetric_source

# binary example used throughout: V = U w.p. 0.8, BSC(0.2) channel, two channel uses per symbol
Q_EXAMPLE = 0.8
CROSSOVER = 0.2
TAU = 2.0
LEAK = 0.3
# hand-tuned mechanism whose leakage sits just below 0.3 nats
MECH_NEAR = np.array([[0.93, 0.07], [0.21, 0.79]])


@pytest.fixture(scope="session")
def example_source():
    return binary_symmetric_source(Q_EXAMPLE)


@pytest.fixture(scope="session")
def example_instance(example_source):
    return PutInstance(example_source, ConditionalDistribution.bsc(CROSSOVER), TAU, LEAK)


@pytest.fixture(scope="session")
def bsc01():
    return ConditionalDistribution.bsc(0.1)


def random_binary_source(rng):
    """Random 2 x 2 joint with full-support marginals."""
    return rng.dirichlet(np.ones(4)).reshape(2, 2)


# lines reported by the acceptance suite, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
