"""Dec-MDP container, validation, and exact dynamic-programming solvers."""

import json

import numpy as np
import pytest

import oracles
from parlab import (
    DecMdp,
    JointPolicy,
    QTable,
    evaluate_policy_q,
    greedy_joint_policy,
    policy_value,
    random_joint_policy,
    random_mdp,
    solve_q_star,
    validate,
)


def one_state_mdp(reward_row, gamma=0.9):
    n_actions = len(reward_row)
    return DecMdp(
        n_states=1,
        action_counts=(n_actions,),
        transition=np.ones((1, n_actions, 1)),
        reward=np.array([reward_row], dtype=np.float64),
        gamma=gamma,
        initial_dist=np.array([1.0]),
    )


# ---------------------------------------------------------------------------
# validation


def test_validate_clean_instance():
    assert validate(one_state_mdp([0.5])) == []


def test_validate_reward_bound():
    report = validate(one_state_mdp([1.5]))
    assert len(report) == 1
    assert "reward" in report[0]


def test_validate_transition_row_sum():
    mdp = DecMdp(
        n_states=2,
        action_counts=(1,),
        transition=np.array([[[0.6, 0.5]], [[0.0, 1.0]]]),
        reward=np.zeros((2, 1)),
        gamma=0.9,
        initial_dist=np.array([1.0, 0.0]),
    )
    report = validate(mdp)
    assert len(report) == 1
    assert "transition" in report[0] and "0" in report[0]


def test_validate_gamma_and_initial_dist():
    bad_gamma = DecMdp(1, (1,), np.ones((1, 1, 1)), np.zeros((1, 1)), 1.0,
                       np.array([1.0]))
    assert any("gamma" in v for v in validate(bad_gamma))
    bad_d0 = DecMdp(2, (1,), np.stack([np.ones((1, 2)) / 2] * 2), np.zeros((2, 1)),
                    0.9, np.array([0.7, 0.7]))
    assert any("initial_dist" in v for v in validate(bad_d0))


# ---------------------------------------------------------------------------
# solve_q_star


def test_q_star_geometric_series():
    q = solve_q_star(one_state_mdp([1.0, 1.0]))
    np.testing.assert_allclose(q.values, 10.0, atol=1e-7)


def test_q_star_zero_reward():
    q = solve_q_star(one_state_mdp([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(q.values, 0.0, atol=1e-9)


def test_q_star_chain_frozen_values(chain_mdp):
    # hand-derived fixed point: stay in state 0 forever, exit state 1
    q = solve_q_star(chain_mdp)
    np.testing.assert_allclose(q.values, [[10.0, 8.1], [7.6, 9.0]], atol=1e-7)


def test_q_star_matches_value_iteration_oracle():
    rng = np.random.default_rng(21)
    mdp = random_mdp(rng, 4, (2, 2), 0.9)
    tol = 1e-9
    q = solve_q_star(mdp, tol=tol)
    oracle = oracles.value_iteration(mdp.transition, mdp.reward, mdp.gamma, 400)
    assert np.abs(q.values - oracle).max() <= 2 * tol


def test_q_star_norm_bound():
    rng = np.random.default_rng(22)
    for _ in range(5):
        mdp = random_mdp(rng, 5, (2, 3), 0.95)
        q = solve_q_star(mdp)
        assert np.abs(q.values).max() <= 1.0 / (1.0 - mdp.gamma) + 1e-9


# ---------------------------------------------------------------------------
# evaluate_policy_q / policy_value


def test_policy_q_one_state_closed_form():
    reward_row = [0.3, -0.2, 0.9]
    mdp = one_state_mdp(reward_row)
    pi = JointPolicy(np.full((1, 3), 1.0 / 3.0))
    q = evaluate_policy_q(mdp, pi)
    mean_r = float(np.mean(reward_row))
    expected = np.array(reward_row) + 0.9 * mean_r / 0.1
    np.testing.assert_allclose(q.values[0], expected, atol=1e-9)


def test_policy_q_myopic_limit():
    rng = np.random.default_rng(23)
    mdp = random_mdp(rng, 4, (2,), 1e-6)
    pi = random_joint_policy(rng, 4, 2)
    q = evaluate_policy_q(mdp, pi)
    assert np.abs(q.values - mdp.reward).max() < 1e-5


def test_policy_q_uniform_chain_frozen_values(chain_mdp):
    # hand-derived: V = (1.625, 0.875) under the uniform policy
    pi = JointPolicy(np.full((2, 2), 0.5))
    q = evaluate_policy_q(chain_mdp, pi)
    np.testing.assert_allclose(
        q.values, [[2.4625, 0.7875], [0.2875, 1.4625]], atol=1e-9
    )
    assert abs(policy_value(chain_mdp, pi) - 1.625) < 1e-9


def test_policy_q_matches_iterative_oracle():
    rng = np.random.default_rng(24)
    mdp = random_mdp(rng, 5, (2, 2), 0.9)
    pi = random_joint_policy(rng, 5, 4)
    q = evaluate_policy_q(mdp, pi)
    oracle = oracles.policy_eval_iterative(
        mdp.transition, mdp.reward, mdp.gamma, pi.table
    )
    assert np.abs(q.values - oracle).max() < 1e-8


def test_policy_q_bellman_residual():
    rng = np.random.default_rng(25)
    mdp = random_mdp(rng, 6, (3,), 0.95)
    pi = random_joint_policy(rng, 6, 3)
    q = evaluate_policy_q(mdp, pi)
    v = (pi.table * q.values).sum(axis=1)
    residual = np.abs(q.values - (mdp.reward + mdp.gamma * mdp.transition @ v))
    assert residual.max() < 1e-9


def test_policy_value_constant_rewards():
    mdp = one_state_mdp([1.0, 1.0])
    pi = JointPolicy(np.array([[0.4, 0.6]]))
    assert abs(policy_value(mdp, pi) - 10.0) < 1e-9
    mdp0 = one_state_mdp([0.0])
    assert abs(policy_value(mdp0, JointPolicy(np.ones((1, 1))))) < 1e-12


def test_policy_value_matches_monte_carlo():
    rng = np.random.default_rng(26)
    mdp = random_mdp(rng, 4, (2, 2), 0.9)
    pi = random_joint_policy(rng, 4, 4)
    exact = policy_value(mdp, pi)
    # horizon long enough that the truncated tail is < 1e-4
    est, se = oracles.mc_discounted_value(
        mdp.transition, mdp.reward, pi.table, mdp.initial_dist, mdp.gamma,
        np.random.default_rng(27), episodes=40_000, horizon=120,
    )
    assert abs(est - exact) <= 3 * se + 1e-3


def test_policy_value_linear_in_reward():
    rng = np.random.default_rng(28)
    mdp = random_mdp(rng, 5, (2, 2), 0.9)
    pi = random_joint_policy(rng, 5, 4)
    half = DecMdp(mdp.n_states, mdp.action_counts, mdp.transition,
                  0.5 * mdp.reward, mdp.gamma, mdp.initial_dist)
    assert abs(policy_value(half, pi) - 0.5 * policy_value(mdp, pi)) < 1e-9


def test_greedy_policy_of_q_star_is_fixed_point():
    rng = np.random.default_rng(29)
    mdp = random_mdp(rng, 4, (2, 2), 0.9)
    tol = 1e-9
    qstar = solve_q_star(mdp, tol=tol)
    q_eval = evaluate_policy_q(mdp, greedy_joint_policy(qstar))
    assert np.abs(q_eval.values - qstar.values).max() <= 10 * tol


# ---------------------------------------------------------------------------
# serialization


def test_json_roundtrip_and_hash_stability(tiny_mdp, tmp_path):
    path = tmp_path / "mdp.json"
    tiny_mdp.save(path)
    loaded = DecMdp.load(path)
    np.testing.assert_array_equal(loaded.transition, tiny_mdp.transition)
    np.testing.assert_array_equal(loaded.reward, tiny_mdp.reward)
    assert loaded.content_hash() == tiny_mdp.content_hash()
    assert loaded.action_counts == tiny_mdp.action_counts


def test_hash_changes_with_content(tiny_mdp):
    other = DecMdp(tiny_mdp.n_states, tiny_mdp.action_counts, tiny_mdp.transition,
                   tiny_mdp.reward * 0.99, tiny_mdp.gamma, tiny_mdp.initial_dist)
    assert other.content_hash() != tiny_mdp.content_hash()


def test_qtable_clipping():
    q = QTable(np.array([[50.0, -50.0]]), 0.9)
    clipped = q.clipped()
    assert np.abs(clipped.values).max() <= 10.0 + 1e-12
