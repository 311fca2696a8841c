import numpy as np
import pytest

from trifinger_cpc.config import default_chain
from trifinger_cpc.kinematics import Finger, Joint, KinematicChain

Z = np.array([0.0, 0.0, 1.0])
Y = np.array([0.0, 1.0, 0.0])


def simple_chain(offsets, axes=(Y, Y, Y), masses=(0.0, 0.0, 0.0), coms=None,
                 gravity=(0.0, 0.0, -9.81), limits=(-3.0, 3.0)):
    """Three identical fingers at the origin with yaw 0."""
    coms = coms if coms is not None else [np.zeros(3)] * 3
    joints = tuple(Joint(np.asarray(axes[j], float), np.asarray(offsets[j], float), limits[0], limits[1],
                         masses[j], np.asarray(coms[j], float)) for j in range(3))
    fingers = tuple(Finger(np.zeros(3), 0.0, joints) for _ in range(3))
    return KinematicChain(fingers, np.asarray(gravity, float))


@pytest.fixture(scope="session")
def chain():
    return default_chain()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_q(chain, rng):
    return chain.limit_lo + (chain.limit_hi - chain.limit_lo) * rng.random(9)


# criterion number -> one-line verdict, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
