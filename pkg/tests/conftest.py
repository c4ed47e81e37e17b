import numpy as np
import pytest

from romance.attack_env import TabularEgoActor
from romance.envs import ChainCoopEnv


def right_bias_q_tables(env):
    """Per-agent Q tables preferring right and disliking left everywhere, so
    the greedy policy walks to the flag and the worst-action forcing pushes
    agents away from it."""
    n_states = env.n_joint_states
    q = np.zeros((n_states, 2, 3))
    q[:, :, 0] = -1.0   # left: worst
    q[:, :, 1] = 0.0    # stay
    q[:, :, 2] = 1.0    # right: best
    return q


@pytest.fixture
def chain_env():
    return ChainCoopEnv()


@pytest.fixture
def right_ego(chain_env):
    return TabularEgoActor(right_bias_q_tables(chain_env), chain_env)
