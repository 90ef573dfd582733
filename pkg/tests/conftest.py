import numpy as np
import pytest

from rlworkbench.envs import make_gridworld_1d

S_T1, S1, S2, S3, S_T2 = range(5)
UP, DOWN = 0, 1


@pytest.fixture
def grid():
    return make_gridworld_1d()


def always_down():
    pi = np.zeros((5, 2))
    pi[:, DOWN] = 1.0
    return pi
