"""Shared environment interface for the cooperative grid games.

Environments are single-threaded deterministic state machines; independent
instances may run in parallel with disjoint seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    n_actions: int
    obs_len: int
    state_len: int
    episode_limit: int
    reward_scale: float

    def __post_init__(self):
        if self.n_actions < 2:
            raise ValueError("action space must have at least 2 actions")
        if self.episode_limit < 1:
            raise ValueError("episode limit must be >= 1")


@dataclass
class StepResult:
    state: np.ndarray
    obs: np.ndarray          # (n_agents, obs_len)
    masks: np.ndarray        # (n_agents, n_actions) bool
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class Env:
    """Base contract: reset(seed) -> (state, obs, masks); step -> StepResult.

    reset(seed=N) reseeds the layout stream then draws, so a given (config,
    seed) always produces the same initial state; reset() continues the
    stream, giving a deterministic episode-to-episode layout sequence.
    """

    spec: EnvSpec

    def reseed(self, seed):
        self._rng = np.random.default_rng(seed)

    def reset(self, seed=None):
        raise NotImplementedError

    def step(self, joint_action):
        raise NotImplementedError

    def _check_actions(self, joint_action, masks):
        joint_action = np.asarray(joint_action, dtype=np.int64)
        if joint_action.shape != (self.spec.n_agents,):
            raise ValueError(f"expected {self.spec.n_agents} actions, got {joint_action.shape}")
        for i, a in enumerate(joint_action):
            if not (0 <= a < self.spec.n_actions) or not masks[i, a]:
                raise ValueError(f"agent {i} chose unavailable action {a}; callers must mask")
        return joint_action


class History:
    """Fixed-length window of (observation, one-hot previous action) pairs.

    Zero-padded at episode start; feature length is constant so the window
    can stand in for a recurrent encoding of the full history.
    """

    def __init__(self, window, obs_len, n_actions):
        self.window = window
        self.obs_len = obs_len
        self.n_actions = n_actions
        self.slot = obs_len + n_actions
        self._buf = np.zeros((window, self.slot))

    def reset(self):
        self._buf[:] = 0.0

    def push(self, obs, prev_action):
        """prev_action < 0 encodes "no previous action" (episode start)."""
        self._buf[:-1] = self._buf[1:]
        self._buf[-1, :] = 0.0
        self._buf[-1, : self.obs_len] = obs
        if prev_action >= 0:
            self._buf[-1, self.obs_len + prev_action] = 1.0

    def features(self):
        return self._buf.ravel().copy()

    @property
    def feature_len(self):
        return self.window * self.slot


class EpisodeWindows:
    """Vectorized window-feature builder over a whole stored episode."""

    def __init__(self, window, obs_len, n_actions):
        self.window = window
        self.obs_len = obs_len
        self.n_actions = n_actions
        self.slot = obs_len + n_actions

    def build(self, obs_seq, act_seq):
        """obs_seq (L+1, n, obs_len), act_seq (L, n) -> (L+1, n, feat)."""
        steps, n_agents, _ = obs_seq.shape
        slots = np.zeros((steps, n_agents, self.slot))
        slots[:, :, : self.obs_len] = obs_seq
        onehot = np.zeros((steps, n_agents, self.n_actions))
        if steps > 1:
            idx = act_seq.astype(np.int64)
            for t in range(1, steps):
                onehot[t, np.arange(n_agents), idx[t - 1]] = 1.0
        slots[:, :, self.obs_len :] = onehot
        feats = np.zeros((steps, n_agents, self.window * self.slot))
        for t in range(steps):
            lo = max(0, t - self.window + 1)
            chunk = slots[lo : t + 1]
            pad = self.window - chunk.shape[0]
            stacked = np.concatenate(
                [np.zeros((pad, n_agents, self.slot)), chunk], axis=0
            )
            feats[t] = stacked.transpose(1, 0, 2).reshape(n_agents, -1)
        return feats
