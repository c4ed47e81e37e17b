"""Quality-diversity archive of attackers.

Entries carry a parameter snapshot, a Monte-Carlo quality score (the
attacker's discounted return, i.e. negated team return), a snapshot of the
attack points that describe its behavior, and an insertion counter used for
oldest-first eviction.  New candidates are admitted when their behavior is
far enough from every current entry; near-duplicates survive a fair coin
flip against their nearest neighbor.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attacker import AttackPointBuffer, SprqAttacker, jsd


@dataclass
class ArchiveEntry:
    attacker: SprqAttacker
    quality: float
    age: int
    min_dist_at_insert: float = float("inf")
    via_threshold: bool = True

    def policy_at(self, points):
        return self.attacker.policy(points)


@dataclass
class Archive:
    capacity: int
    threshold: float
    smoothing: float = 0.02
    entries: list = field(default_factory=list)
    _counter: int = 0

    def __len__(self):
        return len(self.entries)

    def qualities(self):
        return np.array([e.quality for e in self.entries])

    def next_age(self):
        self._counter += 1
        return self._counter


def behavior_distance(entry_i, entry_j, smoothing=0.02):
    """Mean two-policy JSD over the union of the two attack-point sets; zero
    when both sets are empty (behaviorally silent attackers look identical)."""
    pts = []
    for e in (entry_i, entry_j):
        arr = e.attacker.buffer.array()
        if arr.size:
            pts.append(arr)
    if not pts:
        return 0.0
    points = np.concatenate(pts, axis=0)
    pi = entry_i.policy_at(points)
    pj = entry_j.policy_at(points)
    total = 0.0
    for a, b in zip(pi, pj):
        total += jsd([a, b], smoothing)
    return total / len(points)


def quality(attacker, ego_actor, attack_env, episodes, gamma, rng):
    """Monte-Carlo mean of the attacker's discounted return (negated team
    reward) under a greedy team and the attacker's own sampling policy."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    total = 0.0
    for _ in range(episodes):
        state, obs, masks = attack_env.reset()
        ego_actor.begin_episode()
        ret = 0.0
        disc = 1.0
        done = False
        while not done:
            actions, qs = ego_actor.act(obs, masks, 0.0, rng)
            victim = attacker.sample_victim(
                attack_env.attacker_obs(), attack_env.budget.remaining, rng
            )
            rec = attack_env.step(actions, victim, qs)
            ret += disc * (-rec.result.reward)
            disc *= gamma
            obs, masks, done = rec.result.obs, rec.result.masks, rec.result.done
        total += ret
    return total / episodes


def select(archive, n_p, rng):
    """Rank-proportional selection without replacement (rank r of m weighs
    m - r + 1); tops up with replacement when the archive is smaller than
    the population."""
    if n_p < 1:
        raise ValueError("population size must be >= 1")
    if not archive.entries:
        raise ValueError("cannot select from an empty archive")
    m = len(archive.entries)
    order = sorted(range(m), key=lambda i: -archive.entries[i].quality)
    weights = np.zeros(m)
    # ties share the average of their positional weights so equal qualities
    # are selected uniformly
    pos = 0
    while pos < m:
        end = pos
        q = archive.entries[order[pos]].quality
        while end + 1 < m and archive.entries[order[end + 1]].quality == q:
            end += 1
        w = np.mean([m - r for r in range(pos, end + 1)])
        for r in range(pos, end + 1):
            weights[order[r]] = w
        pos = end + 1
    chosen = []
    if m <= n_p:
        chosen = list(range(m))
        while len(chosen) < n_p:
            chosen.append(int(rng.choice(m, p=weights / weights.sum())))
    else:
        w = weights.copy()
        for _ in range(n_p):
            p = w / w.sum()
            pick = int(rng.choice(m, p=p))
            chosen.append(pick)
            w[pick] = 0.0
    return [archive.entries[i] for i in chosen]


def update_archive(archive, new_entries, rng):
    """Admit each candidate by nearest-neighbor distance: add when min
    distance >= threshold, otherwise keep exactly one of {candidate, nearest}
    uniformly at random; oldest-first eviction keeps size <= capacity."""
    for cand in new_entries:
        if archive.entries:
            dists = [
                behavior_distance(cand, e, archive.smoothing) for e in archive.entries
            ]
            nearest = int(np.argmin(dists))
            min_dist = float(dists[nearest])
        else:
            min_dist = float("inf")
        if min_dist >= archive.threshold:
            cand.age = archive.next_age()
            cand.min_dist_at_insert = min_dist
            cand.via_threshold = True
            archive.entries.append(cand)
        else:
            if rng.random() < 0.5:
                cand.age = archive.next_age()
                cand.min_dist_at_insert = min_dist
                cand.via_threshold = False
                archive.entries[nearest] = cand
        while len(archive.entries) > archive.capacity:
            oldest = int(np.argmin([e.age for e in archive.entries]))
            archive.entries.pop(oldest)
    return archive


def distance_matrix(archive, smoothing=None):
    s = archive.smoothing if smoothing is None else smoothing
    m = len(archive.entries)
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            d = behavior_distance(archive.entries[i], archive.entries[j], s)
            out[i, j] = out[j, i] = d
    return out


def export_distance_csv(archive, path):
    mat = distance_matrix(archive)
    with open(path, "w") as f:
        for row in mat:
            f.write(",".join(f"{x:.10g}" for x in row) + "\n")
    return mat


# ---------------------------------------------------------------------------
# persistence: one checkpoint file per entry plus an index


def save_archive(archive, dirpath):
    os.makedirs(dirpath, exist_ok=True)
    index = []
    for i, e in enumerate(archive.entries):
        name = f"entry_{i:03d}.json"
        buf = e.attacker.buffer
        ad.save_params(
            os.path.join(dirpath, name),
            e.attacker.params,
            extra={
                "quality": e.quality,
                "age": e.age,
                "min_dist_at_insert": e.min_dist_at_insert,
                "lam": e.attacker.lam,
                "p_ref": e.attacker.p_ref.tolist(),
                "attack_points": buf.array().tolist(),
                "buffer_capacity": buf.capacity,
            },
        )
        index.append(
            {
                "file": name,
                "quality": e.quality,
                "age": e.age,
                "buffer_digest": buf.digest(),
            }
        )
    with open(os.path.join(dirpath, "index.json"), "w") as f:
        json.dump({"format_version": 1, "entries": index}, f, indent=2)


def load_archive_entries(dirpath):
    """Load persisted entries as (entry, filename) pairs, index order."""
    with open(os.path.join(dirpath, "index.json")) as f:
        index = json.load(f)
    if index.get("format_version") != 1:
        raise ValueError("unsupported archive index version")
    out = []
    for rec in index["entries"]:
        params, extra = ad.load_params(os.path.join(dirpath, rec["file"]))
        buf = AttackPointBuffer(extra.get("buffer_capacity", 256))
        for pt in extra.get("attack_points", []):
            buf.push(np.asarray(pt))
        attacker = SprqAttacker(
            params=params,
            target_params=params.copy(),
            lam=extra["lam"],
            p_ref=np.asarray(extra["p_ref"]),
            buffer=buf,
        )
        entry = ArchiveEntry(
            attacker=attacker,
            quality=extra["quality"],
            age=extra["age"],
            min_dist_at_insert=extra.get("min_dist_at_insert", float("inf")),
        )
        out.append((entry, rec["file"]))
    return out
