import numpy as np
import pytest

from romance.oracle import (
    TabularMDP,
    ValueTable,
    attacked_pair_values,
    bellman_residual,
    build_under_attack_mdp,
    compose_attack_kernel,
    policy_evaluation,
    soft_value_iteration,
    value_iteration,
)


def single_state_mdp(reward=1.0, gamma=0.5):
    P = np.ones((1, 1, 1))
    R = np.full((1, 1, 1), reward)
    return TabularMDP(P, R, np.zeros(1, dtype=bool), np.ones(1), gamma)


def random_mdp(n_states, n_actions, gamma, seed, reward_scale=1.0):
    rng = np.random.default_rng(seed)
    P = rng.random((n_states, n_actions, n_states))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.normal(size=(n_states, n_actions, n_states)) * reward_scale
    terminal = np.zeros(n_states, dtype=bool)
    initial = np.zeros(n_states)
    initial[0] = 1.0
    return TabularMDP(P, R, terminal, initial, gamma)


def chain3_mdp(gamma=0.9):
    # three moves 0 -> 1 -> 2 -> end, reward 1 on the final move
    P = np.zeros((4, 1, 4))
    R = np.zeros((4, 1, 4))
    P[0, 0, 1] = 1.0
    P[1, 0, 2] = 1.0
    P[2, 0, 3] = 1.0
    R[2, 0, 3] = 1.0
    P[3, 0, 3] = 1.0
    terminal = np.array([False, False, False, True])
    initial = np.array([1.0, 0.0, 0.0, 0.0])
    return TabularMDP(P, R, terminal, initial, gamma)


class TestValueIteration:
    def test_zero_rewards(self):
        mdp = random_mdp(5, 3, 0.9, 0)
        mdp.R[:] = 0.0
        table = value_iteration(mdp)
        assert np.allclose(table.values, 0.0, atol=1e-9)

    def test_geometric_series(self):
        table = value_iteration(single_state_mdp(1.0, 0.5), tol=1e-12)
        assert abs(table.values[0] - 2.0) < 1e-9

    def test_residual_verified_posthoc(self):
        mdp = random_mdp(6, 3, 0.95, 1)
        table = value_iteration(mdp, tol=1e-10)
        assert bellman_residual(mdp, table.values) < 1e-9

    def test_tie_break_lowest_action(self):
        # two identical actions
        P = np.ones((1, 2, 1))
        R = np.ones((1, 2, 1))
        mdp = TabularMDP(P, R, np.zeros(1, bool), np.ones(1), 0.5)
        table = value_iteration(mdp)
        assert table.greedy[0] == 0

    def test_monotone_contraction(self):
        mdp = random_mdp(8, 3, 0.9, 5)
        v = np.zeros(8)
        residuals = []
        for _ in range(40):
            q = mdp.expected_reward() + mdp.gamma * (mdp.P @ v)
            v_new = q.max(axis=1)
            residuals.append(np.abs(v_new - v).max())
            v = v_new
        for a, b in zip(residuals[1:], residuals[2:]):
            assert b <= a + 1e-12


class TestSoftValueIteration:
    def test_small_lambda_approaches_hard(self):
        mdp = random_mdp(3, 2, 0.9, 3)
        hard = value_iteration(mdp, tol=1e-12)
        soft, policy, _ = soft_value_iteration(mdp, np.full(2, 0.5), lam=1e-6, tol=1e-12)
        assert np.abs(soft.values - hard.values).max() < 1e-3

    def test_constant_reward_gamma_zero(self):
        c = 1.7
        mdp = random_mdp(4, 3, 0.0, 7)
        mdp.R[:] = c
        p_ref = np.array([0.2, 0.3, 0.5])
        soft, _, _ = soft_value_iteration(mdp, p_ref, lam=0.05)
        assert np.allclose(soft.values, c, atol=1e-9)

    def test_soft_policy_satisfies_prior_softmax_form(self):
        mdp = random_mdp(5, 3, 0.9, 11)
        p_ref = np.array([0.1, 0.1, 0.8])
        lam = 0.04
        table, policy, q = soft_value_iteration(mdp, p_ref, lam, tol=1e-12)
        # substitute the fixed-point Q into the closed-form policy
        logits = np.log(p_ref)[None, :] + q / lam
        m = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - m)
        expected = e / e.sum(axis=1, keepdims=True)
        assert np.abs(policy - expected).max() < 1e-10
        assert np.allclose(policy.sum(axis=1), 1.0, atol=1e-12)

    def test_lambda_must_be_positive(self):
        mdp = random_mdp(3, 2, 0.9, 0)
        with pytest.raises(ValueError):
            soft_value_iteration(mdp, np.full(2, 0.5), lam=0.0)


class TestPolicyEvaluation:
    def test_zero_rewards(self):
        mdp = random_mdp(5, 3, 0.9, 2)
        mdp.R[:] = 0.0
        policy = np.full((5, 3), 1.0 / 3.0)
        table = policy_evaluation(mdp, policy)
        assert np.allclose(table.values, 0.0, atol=1e-9)

    def test_three_step_chain_hand_computed(self):
        mdp = chain3_mdp(0.9)
        policy = np.ones((4, 1))
        table = policy_evaluation(mdp, policy)
        assert abs(table.values[0] - 0.81) < 1e-9
        assert abs(table.values[2] - 1.0) < 1e-9

    def test_consistency_with_value_iteration(self):
        mdp = random_mdp(6, 4, 0.9, 13)
        table = value_iteration(mdp, tol=1e-12)
        greedy = np.zeros((6, 4))
        greedy[np.arange(6), table.greedy] = 1.0
        pe = policy_evaluation(mdp, greedy, tol=1e-12)
        assert np.abs(pe.values - table.values).max() < 1e-8

    def test_invalid_policy_rejected(self):
        mdp = random_mdp(3, 2, 0.9, 0)
        with pytest.raises(ValueError):
            policy_evaluation(mdp, np.ones((3, 2)))


class TestValueTableExport:
    def test_csv_export(self, tmp_path):
        table = ValueTable(np.array([1.5, -0.25]), np.array([0, 1]), 1e-12, 10)
        path = tmp_path / "values.csv"
        table.export_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "state,value,greedy_action"
        assert lines[1].startswith("0,1.5,0")


class TestUnderAttackBound:
    """Small version of the value lower-bound check on a random base MDP with
    nonnegative rewards (the full enumerated-env version runs in the
    acceptance suite)."""

    def _setup(self, seed):
        rng = np.random.default_rng(seed)
        n_agents, n_act = 2, 2
        A = n_act**n_agents
        base = random_mdp(4, A, 0.9, seed)
        base.R[:] = rng.random(base.R.shape)  # nonnegative rewards
        worst = rng.integers(0, n_act, size=(4, n_agents))

        def decode(idx):
            return (idx // n_act, idx % n_act)

        def encode(parts):
            return parts[0] * n_act + parts[1]

        executed = compose_attack_kernel(base, worst, n_agents, decode, encode)
        K = 2
        victim = rng.random((4, K + 1, n_agents + 1))
        victim /= victim.sum(axis=2, keepdims=True)
        return base, executed, victim, K

    def test_surrogate_value_lower_bounds_true_value(self):
        for seed in range(5):
            base, executed, victim, K = self._setup(seed)
            rng = np.random.default_rng(1000 + seed)
            tilde = build_under_attack_mdp(base, victim, executed, K)
            for _ in range(4):
                ego = rng.random((4, base.n_actions))
                ego /= ego.sum(axis=1, keepdims=True)
                ego_aug = np.repeat(ego, K + 1, axis=0)
                tilde_v = policy_evaluation(tilde, ego_aug, tol=1e-11).values
                hat_v, _, _ = attacked_pair_values(
                    base, ego, victim, executed, K, tol=1e-11
                )
                assert np.all(tilde_v.reshape(4, K + 1) <= hat_v + 1e-9)

    def test_transparent_attacker_gives_equality(self):
        base, executed, _, K = self._setup(0)
        null_only = np.zeros((4, K + 1, 3))
        null_only[:, :, 2] = 1.0
        tilde = build_under_attack_mdp(base, null_only, executed, K)
        rng = np.random.default_rng(5)
        ego = rng.random((4, base.n_actions))
        ego /= ego.sum(axis=1, keepdims=True)
        ego_aug = np.repeat(ego, K + 1, axis=0)
        tilde_v = policy_evaluation(tilde, ego_aug, tol=1e-12).values.reshape(4, K + 1)
        hat_v, _, _ = attacked_pair_values(base, ego, null_only, executed, K, tol=1e-12)
        assert np.abs(tilde_v - hat_v).max() < 1e-8
