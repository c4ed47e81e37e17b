"""Exact enumeration of finite environments into explicit MDP arrays."""

from __future__ import annotations

import numpy as np

from ..oracle import TabularMDP

MAX_TABULAR_STATES = 10_000


def enumerate_tabular(env):
    """Build a TabularMDP that bisimulates ``env.step`` exactly.

    Requires the tabular hooks (tabular_states / tabular_transition /
    tabular_initial); the episode cap is treated as truncation and is not
    part of the enumerated state.  Goal transitions land in one absorbing
    terminal state appended after the enumerated ones.
    """
    if not hasattr(env, "tabular_states"):
        raise TypeError(f"{type(env).__name__} is not enumerable")
    n_core = env.tabular_states()
    if n_core + 1 > MAX_TABULAR_STATES:
        raise ValueError(f"state space too large to enumerate: {n_core + 1}")
    n_actions = env.spec.n_actions ** env.spec.n_agents
    n_states = n_core + 1
    terminal_idx = n_core
    P = np.zeros((n_states, n_actions, n_states))
    R = np.zeros((n_states, n_actions, n_states))
    for s in range(n_core):
        for a in range(n_actions):
            nxt, reward = env.tabular_transition(s, a)
            tgt = terminal_idx if nxt is None else nxt
            P[s, a, tgt] = 1.0
            R[s, a, tgt] = reward
    P[terminal_idx, :, terminal_idx] = 1.0
    terminal = np.zeros(n_states, dtype=bool)
    terminal[terminal_idx] = True
    initial = np.zeros(n_states)
    initial[env.tabular_initial()] = 1.0
    return TabularMDP(P, R, terminal, initial, env.gamma)


def joint_action_index(joint_action, n_actions):
    idx = 0
    for a in joint_action:
        idx = idx * n_actions + int(a)
    return idx


def joint_action_decode(idx, n_agents, n_actions):
    parts = []
    for _ in range(n_agents):
        parts.append(idx % n_actions)
        idx //= n_actions
    return tuple(reversed(parts))
