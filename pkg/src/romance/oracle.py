"""Exact dynamic programming over explicit tabular MDPs.

Serves as ground truth for the learned components: hard value iteration for
the attacker's victim-selection MDP, regularized (soft) value iteration
matching the KL-to-prior Q-learning target, and policy evaluation for a
fixed team policy composed with a fixed attacker.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

MAX_ITERS = 200_000


@dataclass
class TabularMDP:
    """Explicit (P, R) arrays; P[s, a, s'] transition, R[s, a, s'] reward."""

    P: np.ndarray
    R: np.ndarray
    terminal: np.ndarray
    initial: np.ndarray
    gamma: float
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2]:
            raise ValueError(f"P must be (S, A, S), got {self.P.shape}")
        if self.R.shape != self.P.shape:
            raise ValueError("R must match P's shape")
        rows = self.P.sum(axis=2)
        if not np.allclose(rows, 1.0, atol=1e-12):
            raise ValueError("transition rows must sum to 1")
        if not np.all(np.isfinite(self.R)):
            raise ValueError("rewards must be finite")

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_actions(self):
        return self.P.shape[1]

    def expected_reward(self):
        """r[s, a] = sum_s' P[s,a,s'] * R[s,a,s']."""
        return (self.P * self.R).sum(axis=2)


@dataclass
class ValueTable:
    values: np.ndarray
    greedy: np.ndarray
    residual: float
    iterations: int

    def export_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["state", "value", "greedy_action"])
            for s, (v, a) in enumerate(zip(self.values, self.greedy)):
                w.writerow([s, f"{v:.12g}", int(a)])


def _q_from_v(mdp, v):
    cont = np.where(mdp.terminal, 0.0, v)
    return mdp.expected_reward() + mdp.gamma * (mdp.P @ cont)


def value_iteration(mdp, tol=1e-10):
    """Sup-norm contraction to the optimal values; ties break to the lowest
    action index."""
    v = np.zeros(mdp.n_states)
    residual = np.inf
    for it in range(1, MAX_ITERS + 1):
        q = _q_from_v(mdp, v)
        v_new = q.max(axis=1)
        v_new[mdp.terminal] = 0.0
        residual = np.abs(v_new - v).max()
        v = v_new
        if residual < tol:
            break
    q = _q_from_v(mdp, v)
    greedy = q.argmax(axis=1)
    return ValueTable(v, greedy, residual, it)


def soft_value_iteration(mdp, p_ref, lam, tol=1e-10):
    """Fixed point of V(s) = lam * log sum_a p_ref(a) exp(Q(s,a)/lam).

    Returns the value table plus the induced soft policy
    v(a|s) = p_ref(a) exp(Q(s,a)/lam) / Z(s), computed with max-subtracted
    exponentials.
    """
    if lam <= 0:
        raise ValueError("regularization weight must be positive")
    p_ref = np.asarray(p_ref, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_pref = np.log(p_ref)
    v = np.zeros(mdp.n_states)
    residual = np.inf
    for it in range(1, MAX_ITERS + 1):
        q = _q_from_v(mdp, v)
        logits = log_pref[None, :] + q / lam
        m = logits.max(axis=1, keepdims=True)
        v_new = lam * (np.log(np.exp(logits - m).sum(axis=1, keepdims=True)) + m)[:, 0]
        v_new[mdp.terminal] = 0.0
        residual = np.abs(v_new - v).max()
        v = v_new
        if residual < tol:
            break
    q = _q_from_v(mdp, v)
    logits = log_pref[None, :] + q / lam
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    policy = e / e.sum(axis=1, keepdims=True)
    table = ValueTable(v, policy.argmax(axis=1), residual, it)
    return table, policy, q


def policy_evaluation(mdp, policy, tol=1e-10):
    """Iterative evaluation of a stochastic policy table (S, A)."""
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {policy.shape} != {(mdp.n_states, mdp.n_actions)}"
        )
    if not np.allclose(policy.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("policy rows must sum to 1")
    r_pi = (policy * mdp.expected_reward()).sum(axis=1)
    p_pi = np.einsum("sa,sax->sx", policy, mdp.P)
    v = np.zeros(mdp.n_states)
    residual = np.inf
    for it in range(1, MAX_ITERS + 1):
        cont = np.where(mdp.terminal, 0.0, v)
        v_new = r_pi + mdp.gamma * (p_pi @ cont)
        v_new[mdp.terminal] = 0.0
        residual = np.abs(v_new - v).max()
        v = v_new
        if residual < tol:
            break
    return ValueTable(v, policy.argmax(axis=1), residual, it)


def bellman_residual(mdp, values):
    """One extra optimal backup; post-hoc verification for solved tables."""
    q = _q_from_v(mdp, values)
    v_new = q.max(axis=1)
    v_new[mdp.terminal] = 0.0
    return np.abs(v_new - values).max()


# ---------------------------------------------------------------------------
# attacked-team constructions over an augmented (state, remaining-budget) space
#
# Both builders index the augmented space as sk = s * (K + 1) + k and compose
# the team's joint policy with a victim-selection distribution and the
# deterministic worst-action forcing g.  The budget decrements when the
# executed joint action differs from the chosen one (the counting used by the
# value-bound analysis); the runtime wrapper's decrement-on-selection variant
# lives in attack_env.build_attacker_mdp.


def _forced_joint(action, victim, worst, decode, encode):
    parts = list(decode(action))
    parts[victim] = worst[victim]
    return encode(parts)


def compose_attack_kernel(mdp, worst_actions, n_agents, action_decode, action_encode):
    """For each (s, a, victim) return the executed joint action index.

    ``worst_actions[s, i]`` is agent i's forced action in state s; victim
    index ``n_agents`` means no attack.
    """
    S, A = mdp.n_states, mdp.n_actions
    executed = np.empty((S, A, n_agents + 1), dtype=np.int64)
    for s in range(S):
        for a in range(A):
            for i in range(n_agents):
                executed[s, a, i] = _forced_joint(
                    a, i, worst_actions[s], action_decode, action_encode
                )
            executed[s, a, n_agents] = a
    return executed


def attacked_pair_values(mdp, ego_policy, victim_policy, executed, budget, tol=1e-10):
    """Exact V(s, k) of a fixed team policy composed with a fixed attacker.

    ``ego_policy`` is (S, A) over joint actions, ``victim_policy`` is
    (S, K+1, n_agents+1), ``executed`` comes from compose_attack_kernel.
    The budget decrements iff the executed action differs from the chosen
    one; at k = 0 the attacker is transparent.
    """
    S = mdp.n_states
    A = mdp.n_actions
    n_hat = victim_policy.shape[2]
    width = budget + 1
    n_aug = S * width
    p_chain = np.zeros((n_aug, n_aug))
    r_chain = np.zeros(n_aug)
    terminal_aug = np.repeat(mdp.terminal, width)
    for s in range(S):
        if mdp.terminal[s]:
            continue
        for k in range(width):
            sk = s * width + k
            for a in range(A):
                pa = ego_policy[s, a]
                if pa == 0.0:
                    continue
                for i in range(n_hat):
                    pv = victim_policy[s, k, i]
                    if pv == 0.0:
                        continue
                    a_hat = executed[s, a, i] if k > 0 else a
                    k_next = k - 1 if a_hat != a else k
                    w = pa * pv
                    row = mdp.P[s, a_hat]
                    r_chain[sk] += w * float(row @ mdp.R[s, a_hat])
                    # augmented index s2 * width + k_next, stride = width
                    p_chain[sk, k_next::width] += w * row
    v = np.zeros(n_aug)
    residual = np.inf
    for it in range(1, MAX_ITERS + 1):
        cont = np.where(terminal_aug, 0.0, v)
        v_new = r_chain + mdp.gamma * (p_chain @ cont)
        v_new[terminal_aug] = 0.0
        residual = np.abs(v_new - v).max()
        v = v_new
        if residual < tol:
            break
    return v.reshape(S, width), residual, it


def build_under_attack_mdp(mdp, victim_policy, executed, budget):
    """Surrogate team MDP over (s, k) for a fixed stochastic attacker.

    The unchanged-action branch keeps k and the original reward; the
    changed branch drops to k-1 and carries the attack-weighted reward
    mixture (a sub-probability weighting over changed actions), which
    lower-bounds the true attacked value for nonnegative rewards.
    """
    S = mdp.n_states
    A = mdp.n_actions
    n_hat = victim_policy.shape[2]
    width = budget + 1
    n_aug = S * width
    P = np.zeros((n_aug, A, n_aug))
    R = np.zeros((n_aug, A, n_aug))
    terminal = np.zeros(n_aug, dtype=bool)
    initial = np.zeros(n_aug)
    for s in range(S):
        for k in range(width):
            sk = s * width + k
            terminal[sk] = mdp.terminal[s]
            if k == budget:
                initial[sk] = mdp.initial[s]
            if mdp.terminal[s]:
                P[sk, :, sk] = 1.0
                continue
            for a in range(A):
                # attacker-induced distribution over executed joint actions
                exec_prob = {}
                for i in range(n_hat):
                    pv = victim_policy[s, k, i]
                    if pv == 0.0:
                        continue
                    a_hat = executed[s, a, i] if k > 0 else a
                    exec_prob[a_hat] = exec_prob.get(a_hat, 0.0) + pv
                p_same = exec_prob.get(a, 0.0)
                if p_same > 0.0:
                    P[sk, a, k::width] += p_same * mdp.P[s, a]
                    R[sk, a, k::width] = mdp.R[s, a]
                changed = [(ah, p) for ah, p in exec_prob.items() if ah != a]
                if changed:
                    k2 = max(k - 1, 0)
                    pr_mix = np.zeros(S)
                    for ah, p in changed:
                        pr_mix += p * mdp.P[s, ah]
                    # reward mixture over changed actions at each landing state,
                    # deliberately left unnormalized (total attack mass < 1)
                    r_mix = np.zeros(S)
                    for ah, p in changed:
                        r_mix += p * mdp.R[s, ah]
                    P[sk, a, k2::width] += pr_mix
                    R[sk, a, k2::width] = r_mix
    return TabularMDP(P, R, terminal, initial, mdp.gamma)


def augmented_index(state, k, budget):
    return state * (budget + 1) + k
