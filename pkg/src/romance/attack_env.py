"""Budget-limited action-attack wrapper around a cooperative env.

The attacker picks a victim agent (or nobody) each tick; the victim's chosen
action is replaced by the worst available action according to the team's own
Q-values.  An episode grants at most K attacks; the remaining budget k is
exposed to the attacker as a normalized feature appended to the global
state.  The budget decrements on every non-null victim selection while k > 0
(matching the trajectory-collection loop), even if the forced action happens
to coincide with the chosen one; both counters are surfaced per episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs.base import StepResult
from .envs.tabular import joint_action_index
from .oracle import TabularMDP


@dataclass
class Budget:
    capacity: int
    remaining: int

    def __post_init__(self):
        if self.capacity < 0 or not (0 <= self.remaining <= self.capacity):
            raise ValueError(f"invalid budget state {self.remaining}/{self.capacity}")


@dataclass
class AttackStepRecord:
    chosen: np.ndarray
    victim: int | None
    executed: np.ndarray
    budget_before: int
    budget_after: int
    attacked: bool          # executed differs from chosen
    result: StepResult


def perturb(victim, joint_action, ego_q_vectors, masks, k):
    """Replace the victim's action by its masked Q-argmin (ties -> lowest index).

    Identity when victim is None or the budget is exhausted; all other
    agents' actions pass through unchanged.
    """
    joint_action = np.asarray(joint_action, dtype=np.int64)
    if victim is None or k <= 0:
        return joint_action.copy()
    n = len(joint_action)
    if not (0 <= victim < n):
        raise ValueError(f"victim index {victim} out of range for {n} agents")
    q = np.asarray(ego_q_vectors[victim], dtype=np.float64).copy()
    q[~np.asarray(masks[victim], dtype=bool)] = np.inf
    executed = joint_action.copy()
    executed[victim] = int(np.argmin(q))
    return executed


def attacker_view(state, budget):
    """Global state plus normalized remaining budget (0 when capacity is 0)."""
    frac = 0.0 if budget.capacity == 0 else budget.remaining / budget.capacity
    return np.concatenate([np.asarray(state, dtype=np.float64), [frac]])


class BudgetedAttackEnv:
    """Wraps an Env; rewards and transitions follow the executed actions."""

    def __init__(self, env, capacity):
        self.env = env
        self.capacity = int(capacity)
        self.budget = Budget(self.capacity, self.capacity)
        self.attacks_selected = 0
        self.attacks_executed = 0
        self._state = None
        self._masks = None

    @property
    def spec(self):
        return self.env.spec

    @property
    def attacker_obs_len(self):
        return self.env.spec.state_len + 1

    def reseed(self, seed):
        self.env.reseed(seed)

    def reset(self, seed=None):
        state, obs, masks = self.env.reset(seed)
        self.budget = Budget(self.capacity, self.capacity)
        self.attacks_selected = 0
        self.attacks_executed = 0
        self._state = state
        self._masks = masks
        return state, obs, masks

    def attacker_obs(self):
        return attacker_view(self._state, self.budget)

    def step(self, joint_action, victim, ego_q_vectors):
        before = self.budget.remaining
        executed = perturb(victim, joint_action, ego_q_vectors, self._masks, before)
        decrement = victim is not None and before > 0
        after = before - 1 if decrement else before
        attacked = bool(np.any(executed != np.asarray(joint_action)))
        if decrement:
            self.attacks_selected += 1
        if attacked:
            self.attacks_executed += 1
        assert self.attacks_executed <= self.attacks_selected <= self.capacity
        result = self.env.step(executed)
        self.budget = Budget(self.capacity, after)
        self._state = result.state
        self._masks = result.masks
        if result.done:
            result.info["attacks_selected"] = self.attacks_selected
            result.info["attacks_executed"] = self.attacks_executed
        return AttackStepRecord(
            chosen=np.asarray(joint_action, dtype=np.int64).copy(),
            victim=victim,
            executed=executed,
            budget_before=before,
            budget_after=after,
            attacked=attacked,
            result=result,
        )


# ---------------------------------------------------------------------------
# tabular actors and the victim-selection MDP


@dataclass
class TabularEgoActor:
    """Deterministic joint policy over enumerated states, backed by per-agent
    Q tables so the worst-action forcing is well defined.

    ``q_tables`` has shape (S, n_agents, n_actions); the greedy joint action
    and the per-agent argmin (forced) actions both derive from it.
    """

    q_tables: np.ndarray
    env: object = None
    _greedy: np.ndarray = field(init=False, default=None)
    _worst: np.ndarray = field(init=False, default=None)

    def __post_init__(self):
        self.q_tables = np.asarray(self.q_tables, dtype=np.float64)
        self._greedy = self.q_tables.argmax(axis=2)
        self._worst = self.q_tables.argmin(axis=2)

    @property
    def n_agents(self):
        return self.q_tables.shape[1]

    @property
    def n_actions(self):
        return self.q_tables.shape[2]

    def greedy_actions(self, state_idx):
        return self._greedy[state_idx].copy()

    def worst_actions(self, state_idx):
        return self._worst[state_idx].copy()

    def q_vectors(self, state_idx):
        return self.q_tables[state_idx]

    # duck-compatible with the neural controller for rollouts
    def begin_episode(self):
        pass

    def act(self, obs, masks, epsilon, rng):
        s = self.env.state_index()
        if epsilon > 0.0:
            actions = self._greedy[s].copy()
            for i in range(self.n_agents):
                if rng.random() < epsilon:
                    actions[i] = rng.choice(np.flatnonzero(masks[i]))
            return actions, self.q_vectors(s)
        return self.greedy_actions(s), self.q_vectors(s)

    def joint_action_table(self):
        """(S,) joint-action indices of the greedy policy."""
        S = self.q_tables.shape[0]
        return np.array(
            [joint_action_index(self._greedy[s], self.n_actions) for s in range(S)]
        )

    def forced_joint_table(self):
        """(S, n_agents) joint-action indices after forcing each victim."""
        S = self.q_tables.shape[0]
        out = np.zeros((S, self.n_agents), dtype=np.int64)
        for s in range(S):
            for i in range(self.n_agents):
                forced = self._greedy[s].copy()
                forced[i] = self._worst[s, i]
                out[s, i] = joint_action_index(forced, self.n_actions)
        return out


def build_attacker_mdp(mdp, ego_actions, forced_actions, capacity, gamma):
    """Victim-selection MDP over (state, remaining budget).

    States are indexed s * (K+1) + k; actions are victims 0..n-1 plus null at
    the last index.  Rewards negate the team reward of the executed action;
    the budget decrements on any non-null selection while k > 0, matching the
    runtime wrapper, so rollouts through the wrapper and policy evaluation
    here agree exactly.  The initial distribution concentrates at k = K.
    """
    S = mdp.n_states
    n_agents = forced_actions.shape[1]
    width = capacity + 1
    n_aug = S * width
    n_bar = n_agents + 1
    P = np.zeros((n_aug, n_bar, n_aug))
    R = np.zeros((n_aug, n_bar, n_aug))
    terminal = np.zeros(n_aug, dtype=bool)
    initial = np.zeros(n_aug)
    for s in range(S):
        for k in range(width):
            sk = s * width + k
            terminal[sk] = mdp.terminal[s]
            if k == capacity:
                initial[sk] = mdp.initial[s]
            if mdp.terminal[s]:
                P[sk, :, sk] = 1.0
                continue
            for a_bar in range(n_bar):
                if a_bar == n_agents or k == 0:
                    a_hat = ego_actions[s]
                    k2 = k
                else:
                    a_hat = forced_actions[s, a_bar]
                    k2 = k - 1
                P[sk, a_bar, k2::width] = mdp.P[s, a_hat]
                R[sk, a_bar, k2::width] = -mdp.R[s, a_hat]
    return TabularMDP(P, R, terminal, initial, gamma)


@dataclass
class TabularVictimAttacker:
    """Fixed victim-selection policy given as an explicit (S, K+1, n+1) table;
    samples like the learned attacker but never records attack points."""

    table: np.ndarray
    env: object
    capacity: int

    def sample_victim(self, obs, k, rng):
        probs = self.table[self.env.state_index(), min(k, self.capacity)]
        choice = int(rng.choice(len(probs), p=probs))
        n_agents = self.table.shape[2] - 1
        return None if choice == n_agents else choice

    def clone(self):
        return TabularVictimAttacker(self.table.copy(), self.env, self.capacity)


def victim_policy_table(policy_fn, n_core_states, capacity, state_encoder):
    """Materialize v(i | s, k) for every enumerated state and budget level.

    ``policy_fn(attacker_obs) -> probability vector``;  ``state_encoder(s)``
    maps a tabular state index to the env's global state vector.
    """
    probe = policy_fn(attacker_view(state_encoder(0), Budget(capacity, capacity)))
    table = np.zeros((n_core_states, capacity + 1, len(probe)))
    for s in range(n_core_states):
        vec = state_encoder(s)
        for k in range(capacity + 1):
            table[s, k] = policy_fn(attacker_view(vec, Budget(capacity, k)))
    return table
