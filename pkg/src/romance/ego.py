"""Value-decomposition team learner: shared per-agent utility network plus
an additive (VDN) or monotone state-conditioned (QMIX) mixer.

The utility network consumes a fixed observation-history window plus an
agent one-hot; QMIX mixing weights come from single-layer hypernetworks on
the global state with absolute values applied, so Q_tot is monotone in every
agent utility by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .envs.base import EpisodeWindows, History

MIXERS = ("vdn", "qmix")


def init_ego_params(spec, mixer="qmix", hidden=64, embed=32, window=4, rng=None):
    if mixer not in MIXERS:
        raise ValueError(f"unknown mixer {mixer!r}; expected one of {MIXERS}")
    rng = rng or np.random.default_rng(0)
    feat = window * (spec.obs_len + spec.n_actions) + spec.n_agents
    arrays = dict(
        ad.mlp_init([feat, hidden, spec.n_actions], rng, prefix="agent_").items()
    )
    if mixer == "qmix":
        s = spec.state_len
        n = spec.n_agents
        hyper = {
            "hyper_w1": (s, n * embed),
            "hyper_w1_b": (n * embed,),
            "hyper_b1": (s, embed),
            "hyper_b1_b": (embed,),
            "hyper_w2": (s, embed),
            "hyper_w2_b": (embed,),
            "hyper_b2": (s, 1),
            "hyper_b2_b": (1,),
        }
        for name, shape in hyper.items():
            bound = 1.0 / np.sqrt(shape[0] if len(shape) > 1 else s)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ad.ParamSet(arrays)


def agent_q_np(params, feats):
    """feats (..., feat_len) -> Q (..., n_actions), graph-free."""
    return ad.mlp_forward_np(params, feats, activation="relu", prefix="agent_")


def act(params, feats, masks, epsilon, rng):
    """Per-agent epsilon-greedy over available actions.

    Returns the joint action and the full per-agent Q-vectors (the attack
    wrapper needs them to force worst actions).
    """
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    masks = np.asarray(masks, dtype=bool)
    if not masks.any(axis=1).all():
        raise ValueError("every agent needs at least one available action")
    qs = agent_q_np(params, feats)
    n = masks.shape[0]
    actions = np.zeros(n, dtype=np.int64)
    for i in range(n):
        avail = np.flatnonzero(masks[i])
        if epsilon > 0.0 and rng.random() < epsilon:
            actions[i] = rng.choice(avail)
        else:
            q = qs[i].copy()
            q[~masks[i]] = -np.inf
            actions[i] = int(np.argmax(q))
    return actions, qs


# ---------------------------------------------------------------------------
# mixing


def _qmix_np(qs, states, params):
    B, n = qs.shape
    embed = params["hyper_b1_b"].shape[0]
    w1 = np.abs(states @ params["hyper_w1"] + params["hyper_w1_b"]).reshape(B, n, embed)
    b1 = states @ params["hyper_b1"] + params["hyper_b1_b"]
    hidden = np.maximum((qs[:, :, None] * w1).sum(axis=1) + b1, 0.0)
    w2 = np.abs(states @ params["hyper_w2"] + params["hyper_w2_b"])
    b2 = states @ params["hyper_b2"] + params["hyper_b2_b"]
    return (hidden * w2).sum(axis=1) + b2[:, 0]


def mix_np(qs, states, params, mixer):
    """qs (B, n_agents), states (B, state_len) -> Q_tot (B,)."""
    qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if mixer == "vdn":
        return qs.sum(axis=1)
    if mixer == "qmix":
        return _qmix_np(qs, states, params)
    raise ValueError(f"unknown mixer {mixer!r}; expected one of {MIXERS}")


def mix_graph(qs, states, leaves, mixer):
    """Graph-building twin of mix_np; qs is a Tensor (B, n_agents)."""
    if mixer == "vdn":
        return ad.vsum(qs, axis=1)
    if mixer != "qmix":
        raise ValueError(f"unknown mixer {mixer!r}; expected one of {MIXERS}")
    B, n = qs.data.shape
    embed = leaves["hyper_b1_b"].data.shape[0]
    st = ad.constant(states)
    w1 = ad.absval(ad.add(ad.matmul(st, leaves["hyper_w1"]), leaves["hyper_w1_b"]))
    w1 = ad.reshape(w1, (B, n, embed))
    b1 = ad.add(ad.matmul(st, leaves["hyper_b1"]), leaves["hyper_b1_b"])
    hidden = ad.relu(ad.add(ad.vsum(ad.mul(ad.reshape(qs, (B, n, 1)), w1), axis=1), b1))
    w2 = ad.absval(ad.add(ad.matmul(st, leaves["hyper_w2"]), leaves["hyper_w2_b"]))
    b2 = ad.add(ad.matmul(st, leaves["hyper_b2"]), leaves["hyper_b2_b"])
    return ad.add(ad.vsum(ad.mul(hidden, w2), axis=1), ad.reshape(b2, (B,)))


# ---------------------------------------------------------------------------
# TD loss


@dataclass
class EgoBatch:
    feats: np.ndarray        # (B, n, feat_len) chosen-action history windows
    states: np.ndarray       # (B, state_len)
    actions: np.ndarray      # (B, n) chosen actions
    rewards: np.ndarray      # (B,) executed-action rewards
    next_feats: np.ndarray
    next_states: np.ndarray
    next_masks: np.ndarray   # (B, n, n_actions)
    done: np.ndarray         # (B,)

    def __len__(self):
        return self.feats.shape[0]


def td_targets(batch, target_params, gamma, mixer):
    """y = r + gamma * Q_tot(next; target), with the max over joint actions
    decomposed into per-agent masked argmaxes of the target utilities."""
    B, n, _ = batch.next_feats.shape
    q_next = agent_q_np(target_params, batch.next_feats.reshape(B * n, -1)).reshape(B, n, -1)
    q_next = np.where(batch.next_masks, q_next, -np.inf)
    best = q_next.max(axis=2)
    q_tot_next = mix_np(best, batch.next_states, target_params, mixer)
    return batch.rewards + gamma * (1.0 - batch.done) * q_tot_next


def td_loss(leaves, batch, target_params, gamma, mixer):
    """Mean squared TD error as a graph scalar; targets are detached."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    y = td_targets(batch, target_params, gamma, mixer)
    B, n, _ = batch.feats.shape
    q = ad.mlp_forward(
        leaves, batch.feats.reshape(B * n, -1), activation="relu", prefix="agent_"
    )
    onehot = np.zeros((B * n, q.data.shape[1]))
    onehot[np.arange(B * n), batch.actions.reshape(-1)] = 1.0
    chosen = ad.reshape(ad.vsum(ad.mul(q, onehot), axis=1), (B, n))
    q_tot = mix_graph(chosen, batch.states, leaves, mixer)
    err = ad.sub(q_tot, ad.constant(y))
    return ad.vmean(ad.square(err))


def sync_target(params):
    """Exact copy; the caller owns the update-period bookkeeping."""
    return params.copy()


# ---------------------------------------------------------------------------
# acting controller + replay


class EgoController:
    """Owns parameters, target copy, optimizer state and history windows."""

    def __init__(self, spec, mixer="qmix", hidden=64, embed=32, window=4,
                 lr=4e-4, gamma=0.99, target_interval=200, rng=None):
        self.spec = spec
        self.mixer = mixer
        self.window = window
        self.gamma = gamma
        self.params = init_ego_params(spec, mixer, hidden, embed, window, rng)
        self.target_params = sync_target(self.params)
        self.optimizer = ad.RmsProp(lr)
        self.target_interval = target_interval
        self.updates = 0
        self._agent_eye = np.eye(spec.n_agents)
        self.histories = [
            History(window, spec.obs_len, spec.n_actions) for _ in range(spec.n_agents)
        ]
        self._prev_actions = None

    @property
    def feat_len(self):
        return self.window * (self.spec.obs_len + self.spec.n_actions) + self.spec.n_agents

    def begin_episode(self):
        for h in self.histories:
            h.reset()
        self._prev_actions = [-1] * self.spec.n_agents

    def observe(self, obs):
        for i, h in enumerate(self.histories):
            h.push(obs[i], self._prev_actions[i])

    def current_feats(self):
        return np.stack(
            [
                np.concatenate([h.features(), self._agent_eye[i]])
                for i, h in enumerate(self.histories)
            ]
        )

    def act(self, obs, masks, epsilon, rng):
        self.observe(obs)
        actions, qs = act(self.params, self.current_feats(), masks, epsilon, rng)
        self._prev_actions = [int(a) for a in actions]
        return actions, qs

    def update(self, batch):
        leaves = ad.bind(self.params)
        loss = td_loss(leaves, batch, self.target_params, self.gamma, self.mixer)
        grads = ad.backward(loss, leaves)
        self.params = self.optimizer.step(self.params, grads)
        self.updates += 1
        if self.updates % self.target_interval == 0:
            self.target_params = sync_target(self.params)
        return float(loss.data)


class EpisodeBuffer:
    """FIFO of whole episodes with uniform episode sampling."""

    def __init__(self, capacity, spec, window):
        self.capacity = capacity
        self.spec = spec
        self.windows = EpisodeWindows(window, spec.obs_len, spec.n_actions)
        self._agent_eye = np.eye(spec.n_agents)
        self.episodes = []

    def __len__(self):
        return len(self.episodes)

    def push(self, episode):
        """episode: dict with obs (L+1,n,o), states (L+1,S), masks (L+1,n,A),
        actions (L,n), rewards (L,)."""
        self.episodes.append(episode)
        if len(self.episodes) > self.capacity:
            self.episodes.pop(0)

    def _episode_transitions(self, ep):
        L = ep["actions"].shape[0]
        n = self.spec.n_agents
        feats = self.windows.build(ep["obs"], ep["actions"])
        eye = np.broadcast_to(self._agent_eye, (L + 1, n, n))
        feats = np.concatenate([feats, eye], axis=2)
        done = np.zeros(L)
        done[-1] = 1.0
        return dict(
            feats=feats[:-1],
            states=ep["states"][:-1],
            actions=ep["actions"],
            rewards=ep["rewards"],
            next_feats=feats[1:],
            next_states=ep["states"][1:],
            next_masks=ep["masks"][1:],
            done=done,
        )

    def sample(self, n_episodes, rng):
        if not self.episodes:
            raise ValueError("empty replay buffer")
        idx = rng.integers(0, len(self.episodes), size=n_episodes)
        parts = [self._episode_transitions(self.episodes[i]) for i in idx]
        return EgoBatch(
            feats=np.concatenate([p["feats"] for p in parts]),
            states=np.concatenate([p["states"] for p in parts]),
            actions=np.concatenate([p["actions"] for p in parts]),
            rewards=np.concatenate([p["rewards"] for p in parts]),
            next_feats=np.concatenate([p["next_feats"] for p in parts]),
            next_states=np.concatenate([p["next_states"] for p in parts]),
            next_masks=np.concatenate([p["next_masks"] for p in parts]),
            done=np.concatenate([p["done"] for p in parts]),
        )
