import numpy as np
import pytest

from ftrl_uncertainty.game import Game

RPS = [[0, -1, 1], [1, 0, -1], [-1, 1, 0]]
A1 = [[1, -1], [-1, 1]]
P0_2X2 = np.array([[8, 2, 1, 3], [2, 13, 7, 9], [1, 7, 9, 2], [3, 9, 2, 10]], dtype=float)


@pytest.fixture
def rps():
    return Game(RPS)


@pytest.fixture
def a1():
    return Game(A1)
