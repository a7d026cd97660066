"""Built-in desk-scale cooperative Dec-MDPs for benchmarking.

Three tasks, all exactly solvable and small enough for dense DP, chosen
to exercise the coordination-versus-stability tension offline learners
face: a two-agent meeting gridworld on a line (who yields?), a
three-agent switch chain (all must match a state-dependent bit to make
progress), and a stateful penalty coordination game (two high-reward
conventions separated by a heavy miscoordination penalty).
"""

from __future__ import annotations

import numpy as np

from .decmdp import DecMdp
from .indexing import all_joint_components


def meeting_gridworld(length: int = 4, slip: float = 0.1, gamma: float = 0.9) -> DecMdp:
    """Two agents on a line of `length` cells earn +1 while co-located.

    Actions: 0=left, 1=stay, 2=right. Each agent's action is replaced by a
    uniform one with probability `slip`. Walls clamp. Reward is 1 when the
    agents share a cell, -0.1 otherwise. Start distribution is uniform
    over the separated configurations.
    """
    L = length
    # per-agent move kernel M[p, a, p']
    m = np.zeros((L, 3, L))
    for p in range(L):
        for a in range(3):
            for c in range(3):
                prob = (1.0 - slip) * (c == a) + slip / 3.0
                m[p, a, min(max(p + c - 1, 0), L - 1)] += prob
    transition = np.einsum("iam,jbn->ijabmn", m, m).reshape(L * L, 9, L * L)

    together = np.array([[1.0 if i == j else -0.1 for j in range(L)] for i in range(L)])
    reward = np.repeat(together.reshape(L * L, 1), 9, axis=1)

    d0 = np.array([0.0 if i == j else 1.0 for i in range(L) for j in range(L)])
    d0 /= d0.sum()

    return DecMdp(
        n_states=L * L,
        action_counts=(3, 3),
        transition=transition,
        reward=reward,
        gamma=gamma,
        initial_dist=d0,
        name=f"meet{L}",
    )


def switch_chain(
    n_sites: int = 5, n_agents: int = 3, slip: float = 0.05, gamma: float = 0.9
) -> DecMdp:
    """Agents advance along a chain only when all press the site's parity bit.

    At site s < goal the target bit is s mod 2; unanimous agreement moves
    the team forward (reward 0.2), anything else slides it back (reward
    -0.1), each flipped with probability `slip`. The last site is
    absorbing with reward 1. Start uniform over the non-goal sites.
    """
    S = n_sites
    counts = (2,) * n_agents
    comps = all_joint_components(list(counts))  # (2^n, n)
    A = comps.shape[0]

    transition = np.zeros((S, A, S))
    reward = np.zeros((S, A))
    goal = S - 1
    for s in range(S):
        if s == goal:
            transition[s, :, s] = 1.0
            reward[s, :] = 1.0
            continue
        target = s % 2
        for a in range(A):
            ok = bool((comps[a] == target).all())
            up, down = min(s + 1, goal), max(s - 1, 0)
            if ok:
                transition[s, a, up] += 1.0 - slip
                transition[s, a, down] += slip
                reward[s, a] = 0.2
            else:
                transition[s, a, down] += 1.0 - slip
                transition[s, a, up] += slip
                reward[s, a] = -0.1

    d0 = np.zeros(S)
    d0[:goal] = 1.0 / goal

    return DecMdp(
        n_states=S,
        action_counts=counts,
        transition=transition,
        reward=reward,
        gamma=gamma,
        initial_dist=d0,
        name=f"switch{S}",
    )


def penalty_game(n_levels: int = 5, slip: float = 0.1, gamma: float = 0.9) -> DecMdp:
    """Stateful two-player penalty game on a tension ladder.

    Payoff matrix (corner conventions pay, one slightly better, the
    middle is safe, and mixing the corners is punished):

            a1=0   a1=1   a1=2
    a0=0     1.0    0.0   -1.0
    a0=1     0.0    0.3    0.0
    a0=2    -1.0    0.0    0.8

    States are tension levels scaling the payoff by 0.5..1.0 — the
    stakes grow as the rally builds. Corner coordination raises tension
    one level, the safe middle releases one level, miscoordination
    resets tension to zero, off-payoff combinations leave it alone; with
    probability `slip` the tension takes a uniform local step instead.
    Start uniform over the lower half of the ladder.
    """
    payoff = np.array(
        [[1.0, 0.0, -1.0], [0.0, 0.3, 0.0], [-1.0, 0.0, 0.8]]
    ).reshape(9)
    T = n_levels

    transition = np.zeros((T, 9, T))
    for s in range(T):
        neighbors = (max(s - 1, 0), s, min(s + 1, T - 1))
        for a in range(9):
            if payoff[a] >= 0.75:          # coordinated corner: build
                target = min(s + 1, T - 1)
            elif payoff[a] <= -0.9:        # miscoordination: collapse
                target = 0
            elif payoff[a] > 0.0:          # safe middle: release
                target = max(s - 1, 0)
            else:                          # neutral: hold
                target = s
            transition[s, a, target] += 1.0 - slip
            for nb in neighbors:
                transition[s, a, nb] += slip / 3.0

    scale = 0.5 + 0.5 * np.arange(T) / (T - 1)
    reward = scale[:, None] * payoff[None, :]

    d0 = np.zeros(T)
    half = (T + 1) // 2
    d0[:half] = 1.0 / half

    return DecMdp(
        n_states=T,
        action_counts=(3, 3),
        transition=transition,
        reward=reward,
        gamma=gamma,
        initial_dist=d0,
        name=f"penalty{T}",
    )


TASK_BUILDERS = {
    "meet": meeting_gridworld,
    "switch": switch_chain,
    "penalty": penalty_game,
}


def task_mdp(name: str) -> DecMdp:
    if name not in TASK_BUILDERS:
        raise ValueError(f"unknown task {name!r}; choose from {sorted(TASK_BUILDERS)}")
    return TASK_BUILDERS[name]()


def built_in_tasks() -> dict[str, DecMdp]:
    return {name: build() for name, build in TASK_BUILDERS.items()}
