"""Shared fixtures and small builders for the test suite."""

import numpy as np
import pytest

from parlab import DecMdp, FactorizedPolicy, random_factorized, random_mdp


def deterministic_factorized(mdp: DecMdp, per_agent_actions) -> FactorizedPolicy:
    """Point-mass per-agent policy; per_agent_actions[i][s] is agent i's action."""
    tables = []
    for i, c in enumerate(mdp.action_counts):
        t = np.zeros((mdp.n_states, c))
        t[np.arange(mdp.n_states), np.asarray(per_agent_actions[i])] = 1.0
        tables.append(t)
    return FactorizedPolicy(tuple(tables))


@pytest.fixture
def tiny_mdp() -> DecMdp:
    """4 states, two binary agents, gamma 0.9; fixed seed."""
    return random_mdp(np.random.default_rng(11), 4, (2, 2), 0.9)


@pytest.fixture
def tiny_policies(tiny_mdp):
    rng = np.random.default_rng(12)
    pi = random_factorized(rng, tiny_mdp.n_states, tiny_mdp.action_counts)
    mu = random_factorized(rng, tiny_mdp.n_states, tiny_mdp.action_counts)
    return pi, mu


@pytest.fixture
def chain_mdp() -> DecMdp:
    """Hand-built 2-state single-agent chain with closed-form values.

    Action 0 stays (reward 1.0 in state 0, -0.5 in state 1); action 1
    switches states deterministically (reward 0 everywhere).
    """
    transition = np.zeros((2, 2, 2))
    transition[0, 0, 0] = 1.0
    transition[1, 0, 1] = 1.0
    transition[0, 1, 1] = 1.0
    transition[1, 1, 0] = 1.0
    reward = np.array([[1.0, 0.0], [-0.5, 0.0]])
    return DecMdp(
        n_states=2,
        action_counts=(2,),
        transition=transition,
        reward=reward,
        gamma=0.9,
        initial_dist=np.array([1.0, 0.0]),
        name="chain2",
    )
