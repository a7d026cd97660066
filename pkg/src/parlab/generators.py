"""Random instance generators for verification suites and tests.

Transition and policy rows are Dirichlet(1) (uniform on the simplex), so
instances have full support and occupancies stay non-degenerate. Rewards
are uniform in [-1, 1]. Q guesses are uniform in the clipped value range,
which makes them satisfy the 2/(1-gamma) range condition by construction.
"""

from __future__ import annotations

import numpy as np

from .decmdp import DecMdp, QTable
from .indexing import joint_size
from .policies import FactorizedPolicy, JointPolicy


def random_mdp(rng, n_states, action_counts, gamma, name="random") -> DecMdp:
    counts = tuple(int(c) for c in action_counts)
    a = joint_size(list(counts))
    return DecMdp(
        n_states=int(n_states),
        action_counts=counts,
        transition=rng.dirichlet(np.ones(n_states), size=(n_states, a)),
        reward=rng.uniform(-1.0, 1.0, (n_states, a)),
        gamma=float(gamma),
        initial_dist=rng.dirichlet(np.ones(n_states)),
        name=name,
    )


def random_factorized(rng, n_states, action_counts) -> FactorizedPolicy:
    return FactorizedPolicy(
        tuple(rng.dirichlet(np.ones(c), size=n_states) for c in action_counts)
    )


def random_joint_policy(rng, n_states, n_joint_actions) -> JointPolicy:
    return JointPolicy(rng.dirichlet(np.ones(n_joint_actions), size=n_states))


def random_qtable(rng, n_states, n_joint_actions, gamma) -> QTable:
    b = 1.0 / (1.0 - gamma)
    return QTable(rng.uniform(-b, b, (n_states, n_joint_actions)), gamma)


def random_sizes(rng, max_states=6, max_agents=3, max_actions=3):
    """Draw (n_states, action_counts) for a small random instance."""
    n_states = int(rng.integers(2, max_states + 1))
    n_agents = int(rng.integers(1, max_agents + 1))
    counts = tuple(int(rng.integers(2, max_actions + 1)) for _ in range(n_agents))
    return n_states, counts
