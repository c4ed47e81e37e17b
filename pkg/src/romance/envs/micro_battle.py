"""MicroBattle: a deterministic 3v3 combat grid with scripted enemies.

An 8x8 board. Three learner-controlled allies spawn on the left column,
three scripted enemies on the right. All units have 10 HP, melee attacks
(Chebyshev range 1) deal 2 damage, and allies see radius 3. Team reward per
tick is damage dealt plus 10 per kill plus 200 on wiping the enemy side,
divided by a scale chosen so the maximum episode return is 20.

Tick order: allies resolve in index order (attacks and moves, deaths applied
immediately), then living enemies act in index order. An enemy attacks the
lowest-HP adjacent ally if any, otherwise takes the first in-bounds,
unoccupied move among up/down/left/right that reduces Manhattan distance to
its nearest ally (ties between equally near allies break to the lower ally
index).
"""

from __future__ import annotations

import numpy as np

from .base import Env, EnvSpec, StepResult

GRID = 8
N_ALLIES = 3
N_ENEMIES = 3
MAX_HP = 10
DAMAGE = 2
ATTACK_RANGE = 1      # Chebyshev
SIGHT = 3             # Chebyshev
EPISODE_LIMIT = 50
KILL_BONUS = 10.0
WIN_BONUS = 200.0
# total damage 30 + kill bonuses 30 + win bonus 200, normalized to 20
REWARD_SCALE = (N_ENEMIES * MAX_HP + N_ENEMIES * KILL_BONUS + WIN_BONUS) / 20.0

NOOP, STAY, UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3, 4, 5
ATTACK_BASE = 6
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

ALLY_COL = 0
ENEMY_COL = GRID - 1


def _cheb(p, q):
    return max(abs(p[0] - q[0]), abs(p[1] - q[1]))


def _manhattan(p, q):
    return abs(p[0] - q[0]) + abs(p[1] - q[1])


class MicroBattleEnv(Env):
    def __init__(self, episode_limit=EPISODE_LIMIT, seed=0):
        self._rng = np.random.default_rng(seed)
        n_actions = ATTACK_BASE + N_ENEMIES
        # per agent: own hp, then (vis, drow, dcol, hp) for 2 allies + 3 enemies
        obs_len = 1 + 4 * (N_ALLIES - 1 + N_ENEMIES)
        # per unit: row, col, hp, alive; plus normalized remaining time
        state_len = 4 * (N_ALLIES + N_ENEMIES) + 1
        self.spec = EnvSpec(
            n_agents=N_ALLIES,
            n_actions=n_actions,
            obs_len=obs_len,
            state_len=state_len,
            episode_limit=episode_limit,
            reward_scale=REWARD_SCALE,
        )
        self.done = True

    # -- views ---------------------------------------------------------------

    def _occupied(self, skip=None):
        occ = set()
        for units in (self.allies, self.enemies):
            for u in units:
                if u["hp"] > 0 and u is not skip:
                    occ.add(u["pos"])
        return occ

    def state_vector(self):
        feats = []
        for u in self.allies + self.enemies:
            if u["hp"] > 0:
                feats += [
                    u["pos"][0] / (GRID - 1),
                    u["pos"][1] / (GRID - 1),
                    u["hp"] / MAX_HP,
                    1.0,
                ]
            else:
                feats += [0.0, 0.0, 0.0, 0.0]
        feats.append((self.spec.episode_limit - self.t) / self.spec.episode_limit)
        return np.asarray(feats)

    def obs_vectors(self):
        obs = np.zeros((N_ALLIES, self.spec.obs_len))
        for i, me in enumerate(self.allies):
            if me["hp"] <= 0:
                continue
            feats = [me["hp"] / MAX_HP]
            others = [a for j, a in enumerate(self.allies) if j != i] + self.enemies
            for u in others:
                if u["hp"] > 0 and _cheb(me["pos"], u["pos"]) <= SIGHT:
                    feats += [
                        1.0,
                        (u["pos"][0] - me["pos"][0]) / GRID,
                        (u["pos"][1] - me["pos"][1]) / GRID,
                        u["hp"] / MAX_HP,
                    ]
                else:
                    feats += [0.0, 0.0, 0.0, 0.0]
            obs[i] = feats
        return obs

    def masks(self):
        masks = np.zeros((N_ALLIES, self.spec.n_actions), dtype=bool)
        occ = self._occupied()
        for i, me in enumerate(self.allies):
            if me["hp"] <= 0:
                masks[i, NOOP] = True
                continue
            masks[i, STAY] = True
            for act, (dr, dc) in MOVES.items():
                r, c = me["pos"][0] + dr, me["pos"][1] + dc
                if 0 <= r < GRID and 0 <= c < GRID and (r, c) not in occ:
                    masks[i, act] = True
            for j, en in enumerate(self.enemies):
                if en["hp"] > 0 and _cheb(me["pos"], en["pos"]) <= ATTACK_RANGE:
                    masks[i, ATTACK_BASE + j] = True
        return masks

    # -- dynamics ------------------------------------------------------------

    def reset(self, seed=None):
        if seed is not None:
            self.reseed(seed)
        ally_rows = np.sort(self._rng.choice(GRID, size=N_ALLIES, replace=False))
        enemy_rows = np.sort(self._rng.choice(GRID, size=N_ENEMIES, replace=False))
        self.allies = [{"pos": (int(r), ALLY_COL), "hp": MAX_HP} for r in ally_rows]
        self.enemies = [{"pos": (int(r), ENEMY_COL), "hp": MAX_HP} for r in enemy_rows]
        self.t = 0
        self.done = False
        return self.state_vector(), self.obs_vectors(), self.masks()

    def _move(self, unit, act):
        dr, dc = MOVES[act]
        r, c = unit["pos"][0] + dr, unit["pos"][1] + dc
        if 0 <= r < GRID and 0 <= c < GRID and (r, c) not in self._occupied(skip=unit):
            unit["pos"] = (r, c)

    def scripted_enemy_policy(self):
        """Joint enemy action labels, evaluated against current positions."""
        actions = []
        for en in self.enemies:
            if en["hp"] <= 0:
                actions.append(("stay",))
                continue
            adjacent = [
                (a["hp"], j)
                for j, a in enumerate(self.allies)
                if a["hp"] > 0 and _cheb(en["pos"], a["pos"]) <= ATTACK_RANGE
            ]
            if adjacent:
                actions.append(("attack", min(adjacent)[1]))
                continue
            living = [(j, a) for j, a in enumerate(self.allies) if a["hp"] > 0]
            if not living:
                actions.append(("stay",))
                continue
            target = min(living, key=lambda ja: (_manhattan(en["pos"], ja[1]["pos"]), ja[0]))
            actions.append(("chase", target[0]))
        return actions

    def _enemy_act(self, en, decision):
        if decision[0] == "stay" or en["hp"] <= 0:
            return
        if decision[0] == "attack":
            ally = self.allies[decision[1]]
            if ally["hp"] > 0 and _cheb(en["pos"], ally["pos"]) <= ATTACK_RANGE:
                ally["hp"] = max(0, ally["hp"] - DAMAGE)
            return
        goal = self.allies[decision[1]]["pos"]
        occ = self._occupied(skip=en)
        base = _manhattan(en["pos"], goal)
        for act in (UP, DOWN, LEFT, RIGHT):
            dr, dc = MOVES[act]
            r, c = en["pos"][0] + dr, en["pos"][1] + dc
            if not (0 <= r < GRID and 0 <= c < GRID) or (r, c) in occ:
                continue
            if _manhattan((r, c), goal) < base:
                en["pos"] = (r, c)
                return

    def step(self, joint_action):
        if self.done:
            raise RuntimeError("step() on finished episode; call reset()")
        joint_action = self._check_actions(joint_action, self.masks())
        damage = 0.0
        kills = 0
        # allies resolve first, deaths applied immediately
        for i, act in enumerate(joint_action):
            me = self.allies[i]
            if me["hp"] <= 0 or act in (NOOP, STAY):
                continue
            if act in MOVES:
                self._move(me, act)
                continue
            en = self.enemies[act - ATTACK_BASE]
            if en["hp"] > 0 and _cheb(me["pos"], en["pos"]) <= ATTACK_RANGE:
                dealt = min(DAMAGE, en["hp"])
                en["hp"] -= dealt
                damage += dealt
                if en["hp"] == 0:
                    kills += 1
        won = all(e["hp"] <= 0 for e in self.enemies)
        if not won:
            decisions = self.scripted_enemy_policy()
            for en, decision in zip(self.enemies, decisions):
                self._enemy_act(en, decision)
        self.t += 1
        reward = damage + KILL_BONUS * kills + (WIN_BONUS if won else 0.0)
        reward /= self.spec.reward_scale
        lost = all(a["hp"] <= 0 for a in self.allies)
        self.done = won or lost or self.t >= self.spec.episode_limit
        info = {
            "won": won,
            "kills": kills,
            "damage": damage,
            "allies_alive": sum(a["hp"] > 0 for a in self.allies),
            "enemies_alive": sum(e["hp"] > 0 for e in self.enemies),
        }
        return StepResult(
            self.state_vector(), self.obs_vectors(), self.masks(), reward, self.done, info
        )
