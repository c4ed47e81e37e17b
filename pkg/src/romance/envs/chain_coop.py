"""ChainCoop: a 5-cell corridor coordination game, fully observed.

Two agents start at cell 0 and must stand on the flag cell (the last cell)
simultaneously, which pays +1 and ends the episode.  Moves clamp at the
corridor ends, all three actions are always available, and the dynamics are
deterministic, so the game is exactly enumerable for the oracle solvers.
"""

from __future__ import annotations

import numpy as np

from .base import Env, EnvSpec, StepResult

LEFT, STAY, RIGHT = 0, 1, 2
_DELTA = {LEFT: -1, STAY: 0, RIGHT: +1}


class ChainCoopEnv(Env):
    def __init__(self, n_cells=5, episode_limit=12, gamma=0.95):
        self.n_cells = n_cells
        self.gamma = gamma
        self.spec = EnvSpec(
            n_agents=2,
            n_actions=3,
            obs_len=2,
            state_len=2,
            episode_limit=episode_limit,
            reward_scale=1.0,
        )
        self.pos = None
        self.t = 0
        self.done = True

    # -- state encoding ----------------------------------------------------

    def state_vector(self, pos=None):
        p = self.pos if pos is None else pos
        return np.asarray(p, dtype=np.float64) / (self.n_cells - 1)

    def obs_vectors(self, pos=None):
        p = self.pos if pos is None else pos
        scale = self.n_cells - 1
        return np.array([[p[0] / scale, p[1] / scale], [p[1] / scale, p[0] / scale]])

    def masks(self):
        return np.ones((2, 3), dtype=bool)

    def state_index(self, pos=None):
        p = self.pos if pos is None else pos
        return int(p[0]) * self.n_cells + int(p[1])

    def index_positions(self, idx):
        return (idx // self.n_cells, idx % self.n_cells)

    @property
    def n_joint_states(self):
        return self.n_cells * self.n_cells

    # -- dynamics ----------------------------------------------------------

    def reset(self, seed=None):
        self.pos = [0, 0]
        self.t = 0
        self.done = False
        return self.state_vector(), self.obs_vectors(), self.masks()

    def transition(self, pos, joint_action):
        """Pure next-step function: (positions, actions) -> (positions', r, goal)."""
        nxt = [
            min(max(pos[i] + _DELTA[int(joint_action[i])], 0), self.n_cells - 1)
            for i in range(2)
        ]
        goal = nxt[0] == self.n_cells - 1 and nxt[1] == self.n_cells - 1
        return nxt, (1.0 if goal else 0.0), goal

    def step(self, joint_action):
        if self.done:
            raise RuntimeError("step() on finished episode; call reset()")
        joint_action = self._check_actions(joint_action, self.masks())
        self.pos, reward, goal = self.transition(self.pos, joint_action)
        self.t += 1
        self.done = goal or self.t >= self.spec.episode_limit
        info = {"won": goal}
        return StepResult(
            self.state_vector(), self.obs_vectors(), self.masks(), reward, self.done, info
        )

    # -- enumeration hooks (see envs.tabular) --------------------------------

    def tabular_states(self):
        return self.n_joint_states

    def tabular_state_of(self, state_vector):
        scale = self.n_cells - 1
        pos = np.rint(np.asarray(state_vector) * scale).astype(int)
        return self.state_index(pos)

    def tabular_transition(self, state_idx, joint_action_idx):
        """Returns (next_state_idx or None for terminal, reward)."""
        pos = list(self.index_positions(state_idx))
        a = (joint_action_idx // 3, joint_action_idx % 3)
        nxt, reward, goal = self.transition(pos, a)
        if goal:
            return None, reward
        return self.state_index(nxt), reward

    def tabular_initial(self):
        return self.state_index([0, 0])
