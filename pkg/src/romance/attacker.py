"""Victim-selection attacker trained with KL-to-prior regularized Q-learning.

The attacker's Q-network maps (global state, remaining-budget fraction) to
one value per victim plus a null action at the last index.  A reference
distribution putting delta mass on attacking keeps the sparse attack actions
from being spent greedily; the induced policy is the prior-weighted softmax
of Q/lambda.  Population training adds a Jensen-Shannon diversity bonus over
the members' policies at recorded attack points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


def reference_distribution(n_agents, delta):
    """(delta/n, ..., delta/n, 1-delta): attack mass spread, null last."""
    if not (0.0 <= delta <= 1.0):
        raise ValueError(f"delta must be in [0, 1], got {delta}")
    p = np.full(n_agents + 1, delta / n_agents)
    p[-1] = 1.0 - delta
    return p


class AttackPointBuffer:
    """FIFO of attacker observations where a non-null victim was chosen with
    budget remaining."""

    def __init__(self, capacity=256):
        self.capacity = capacity
        self._items = []

    def __len__(self):
        return len(self._items)

    def push(self, obs):
        self._items.append(np.asarray(obs, dtype=np.float64).copy())
        if len(self._items) > self.capacity:
            self._items.pop(0)

    def array(self):
        if not self._items:
            return np.zeros((0, 0))
        return np.stack(self._items)

    def copy(self):
        out = AttackPointBuffer(self.capacity)
        out._items = [x.copy() for x in self._items]
        return out

    def digest(self):
        import hashlib

        h = hashlib.sha256()
        for x in self._items:
            h.update(x.tobytes())
        return h.hexdigest()


def init_attacker_params(obs_len, n_agents, hidden=64, rng=None):
    rng = rng or np.random.default_rng(0)
    return ad.mlp_init([obs_len, hidden, n_agents + 1], rng, prefix="adv_")


def attacker_q_np(params, obs):
    return ad.mlp_forward_np(params, obs, activation="relu", prefix="adv_")


def victim_policy(params, obs, lam, p_ref):
    """Prior-weighted softmax of Q/lambda, computed with max subtraction."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    q = attacker_q_np(params, obs)
    return policy_from_q(q, lam, p_ref)


def policy_from_q(q, lam, p_ref):
    with np.errstate(divide="ignore"):
        logits = np.log(np.asarray(p_ref, dtype=np.float64)) + q / lam
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class SprqAttacker:
    """Acting/training bundle: online params, target copy, attack points."""

    params: ad.ParamSet
    target_params: ad.ParamSet
    lam: float
    p_ref: np.ndarray
    buffer: AttackPointBuffer

    @classmethod
    def fresh(cls, obs_len, n_agents, lam, delta, hidden=64, rng=None, buffer_capacity=256):
        params = init_attacker_params(obs_len, n_agents, hidden, rng)
        return cls(
            params=params,
            target_params=params.copy(),
            lam=lam,
            p_ref=reference_distribution(n_agents, delta),
            buffer=AttackPointBuffer(buffer_capacity),
        )

    @property
    def n_agents(self):
        return len(self.p_ref) - 1

    def clone(self):
        return SprqAttacker(
            params=self.params.copy(),
            target_params=self.target_params.copy(),
            lam=self.lam,
            p_ref=self.p_ref.copy(),
            buffer=self.buffer.copy(),
        )

    def policy(self, obs):
        return victim_policy(self.params, obs, self.lam, self.p_ref)

    def sample_victim(self, obs, k, rng):
        """Categorical draw from the current policy; records an attack point
        for every non-null choice made while budget remains.  Returns an
        agent index or None for the null action."""
        probs = self.policy(obs)
        choice = int(rng.choice(len(probs), p=probs))
        if choice == self.n_agents:
            return None
        if k > 0:
            self.buffer.push(obs)
        return choice

    def sync_target(self):
        self.target_params = self.params.copy()


# ---------------------------------------------------------------------------
# losses


@dataclass
class AttackerBatch:
    obs: np.ndarray          # (B, obs_len) augmented observations
    actions: np.ndarray      # (B,) victim indices, null = n_agents
    rewards: np.ndarray      # (B,) negated team rewards
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self):
        return self.obs.shape[0]


def sprq_target(batch, target_params, lam, gamma, p_ref):
    """y = r + gamma * lam * log E_{a'~p_ref} exp(Q_target(s', a')/lam).

    The expectation is exact over the n+1 actions; terminal transitions use
    the bare reward.
    """
    q_next = attacker_q_np(target_params, batch.next_obs)
    with np.errstate(divide="ignore"):
        logits = np.log(np.asarray(p_ref)) + q_next / lam
    m = logits.max(axis=-1, keepdims=True)
    soft = lam * (np.log(np.exp(logits - m).sum(axis=-1, keepdims=True)) + m)[:, 0]
    return batch.rewards + gamma * (1.0 - batch.done) * soft


def sprq_loss(leaves, batch, target_params, lam, gamma, p_ref):
    """MSE against detached regularized targets; grads flow only through the
    online Q-network."""
    y = sprq_target(batch, target_params, lam, gamma, p_ref)
    q = ad.mlp_forward(leaves, batch.obs, activation="relu", prefix="adv_")
    onehot = np.zeros((len(batch), q.data.shape[1]))
    onehot[np.arange(len(batch)), batch.actions] = 1.0
    chosen = ad.vsum(ad.mul(q, onehot), axis=1)
    return ad.vmean(ad.square(ad.sub(chosen, ad.constant(y))))


def jsd(distributions, smoothing=0.0):
    """Mean KL of each distribution to the average, after smoothing each as
    (1-b) p + b/m.  Bounded by log(len(distributions))."""
    dists = [np.asarray(d, dtype=np.float64) for d in distributions]
    if len(dists) < 2:
        raise ValueError("need at least two distributions")
    m = len(dists[0])
    if any(len(d) != m for d in dists):
        raise ValueError("distributions must share a length")
    smoothed = [(1.0 - smoothing) * d + smoothing / m for d in dists]
    mean = np.mean(smoothed, axis=0)
    total = 0.0
    for d in smoothed:
        nz = d > 0
        total += float(np.sum(d[nz] * (np.log(d[nz]) - np.log(mean[nz]))))
    return total / len(dists)


def _policy_graph(leaves, obs, lam, p_ref):
    q = ad.mlp_forward(leaves, obs, activation="relu", prefix="adv_")
    with np.errstate(divide="ignore"):
        log_pref = np.log(np.asarray(p_ref))
    return ad.softmax(ad.add(ad.mul(q, 1.0 / lam), ad.constant(log_pref)), axis=-1)


def _jsd_graph(policies, smoothing):
    n = len(policies)
    m = policies[0].data.shape[-1]
    smoothed = [ad.add(ad.mul(p, 1.0 - smoothing), smoothing / m) for p in policies]
    mean = smoothed[0]
    for p in smoothed[1:]:
        mean = ad.add(mean, p)
    mean = ad.mul(mean, 1.0 / n)
    log_mean = ad.log(mean)
    total = None
    for p in smoothed:
        kl = ad.vsum(ad.mul(p, ad.sub(ad.log(p), log_mean)), axis=-1)
        total = kl if total is None else ad.add(total, kl)
    return ad.mul(total, 1.0 / n)


def diversity_loss(member_leaves, attack_points, lam, p_ref, smoothing, rng=None,
                   sample_size=64):
    """Mean pairwise-population JSD of the members' policies over a uniform
    sample of shared attack points.  Zero for empty point sets or single
    members (degenerate population)."""
    if len(member_leaves) < 2 or len(attack_points) == 0:
        return ad.constant(0.0)
    pts = np.asarray(attack_points, dtype=np.float64)
    if rng is not None and len(pts) > sample_size:
        pts = pts[rng.choice(len(pts), size=sample_size, replace=False)]
    policies = [_policy_graph(leaves, pts, lam, p_ref) for leaves in member_leaves]
    return ad.vmean(_jsd_graph(policies, smoothing))


def population_loss(member_leaves, batches, target_params_list, alpha, lam, gamma,
                    p_ref, attack_points, smoothing, rng=None, sample_size=64):
    """Mean member TD loss minus alpha times the population diversity; one
    backward pass yields gradients for every member jointly."""
    n = len(member_leaves)
    total = None
    for leaves, batch, tgt in zip(member_leaves, batches, target_params_list):
        term = sprq_loss(leaves, batch, tgt, lam, gamma, p_ref)
        total = term if total is None else ad.add(total, term)
    loss = ad.mul(total, 1.0 / n)
    if alpha != 0.0:
        div = diversity_loss(
            member_leaves, attack_points, lam, p_ref, smoothing, rng, sample_size
        )
        loss = ad.sub(loss, ad.mul(div, alpha))
    return loss


# ---------------------------------------------------------------------------
# simple acting baselines


class RandomAttacker:
    """Uniform victim at a fixed per-step rate; null otherwise."""

    def __init__(self, n_agents, rate):
        self.n_agents = n_agents
        self.rate = rate

    def sample_victim(self, obs, k, rng):
        if rng.random() < self.rate:
            return int(rng.integers(self.n_agents))
        return None


class NullAttacker:
    def sample_victim(self, obs, k, rng):
        return None
