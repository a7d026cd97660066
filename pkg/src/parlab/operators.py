"""Partial-replacement Bellman backup operators, exact and sampled.

The exact forms take expectations analytically (they need the mdp's
transition kernel): the individual operator bootstraps with one agent
following its learned policy and everyone else following behavior
marginals; the k-deviation operator averages over uniformly chosen
size-k subsets; the soft-partial operator is a convex combination over
k; the averaged-individual operator is the agent mean of individual
operators. The sampled forms need only logged batch records and realize
"others follow the data" with the record's own logged next action.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .datagen import TransitionDataset, sample_rows
from .decmdp import DecMdp, QTable
from .errors import ValidationError
from .indexing import radix_weights
from .policies import FactorizedPolicy, JointPolicy, mixed_policy

CONTRACTION_TOL = 1e-10


@dataclass(frozen=True)
class BackupTarget:
    """Per-record bootstrap targets and the subsets that produced them."""

    values: np.ndarray   # (m,) target values r + gamma * Q(s', a'^(k))
    k: int
    subsets: np.ndarray  # (m, k) replaced agent indices

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


def _expected_next(q: QTable, phi: JointPolicy) -> np.ndarray:
    return (phi.table * q.values).sum(axis=1)


def _backup(mdp: DecMdp, expected_v: np.ndarray) -> QTable:
    return QTable(mdp.reward + mdp.gamma * (mdp.transition @ expected_v), mdp.gamma)


def individual_backup_exact(
    mdp: DecMdp, q: QTable, pi: FactorizedPolicy, mu: FactorizedPolicy, agent: int
) -> QTable:
    """Agent `agent` bootstraps from its own policy, the rest from behavior."""
    return _backup(mdp, _expected_next(q, mixed_policy(pi, mu, {agent})))


def k_backup_exact(
    mdp: DecMdp, q: QTable, pi: FactorizedPolicy, mu: FactorizedPolicy, k: int
) -> QTable:
    """Exactly k uniformly chosen agents deviate to pi in the bootstrap."""
    n = pi.n_agents
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    evs = [
        _expected_next(q, mixed_policy(pi, mu, subset))
        for subset in itertools.combinations(range(n), k)
    ]
    return _backup(mdp, np.mean(evs, axis=0))


def soft_partial_exact(
    mdp: DecMdp, q: QTable, pi: FactorizedPolicy, mu: FactorizedPolicy, w
) -> QTable:
    """Convex combination over deviation counts: sum_k w_k T^(k)."""
    n = pi.n_agents
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,) or (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
        raise ValidationError(f"invalid weights {w!r}: need length {n}, >=0, summing to 1")
    ev = np.zeros(mdp.n_states)
    for k in range(1, n + 1):
        if w[k - 1] == 0.0:
            continue
        evs = [
            _expected_next(q, mixed_policy(pi, mu, subset))
            for subset in itertools.combinations(range(n), k)
        ]
        ev += w[k - 1] * np.mean(evs, axis=0)
    return _backup(mdp, ev)


def averaged_individual_exact(
    mdp: DecMdp, q: QTable, pi: FactorizedPolicy, mu: FactorizedPolicy
) -> QTable:
    """Arithmetic mean over agents of the individual operators."""
    n = pi.n_agents
    evs = [_expected_next(q, mixed_policy(pi, mu, {i})) for i in range(n)]
    return _backup(mdp, np.mean(evs, axis=0))


# ---------------------------------------------------------------------------
# sampled (batch) forms


def replace_actions(
    rng, components: np.ndarray, next_states: np.ndarray, pi: FactorizedPolicy, k: int
):
    """Replace a random size-k subset of each record's logged a' components.

    Subsets are the first k entries of a per-record permutation
    (Fisher-Yates prefix); when k equals the number of agents the
    permutation draw is skipped and agents are replaced in index order.
    Returns (new components (m, n), subsets (m, k)).
    """
    components = np.asarray(components)
    m, n = components.shape
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if k == n:
        subsets = np.tile(np.arange(n), (m, 1))
    else:
        subsets = rng.permuted(np.tile(np.arange(n), (m, 1)), axis=1)[:, :k]
    draws = rng.random((m, k))
    out = components.copy()
    for col in range(k):
        agents = subsets[:, col]
        for i in np.unique(agents):
            rows = np.where(agents == i)[0]
            out[rows, i] = sample_rows(pi.tables[i][next_states[rows]], draws[rows, col])
    return out, subsets


def _min_table(q) -> tuple[np.ndarray, float]:
    """Pointwise pessimistic table and discount tag from a QTable or list."""
    if isinstance(q, QTable):
        return q.values, q.gamma_tag
    tables = list(q)
    if not tables:
        raise ValueError("empty ensemble")
    vals = np.min([t.values for t in tables], axis=0)
    return vals, tables[0].gamma_tag


def sampled_backup(
    batch: TransitionDataset, q, pi: FactorizedPolicy, k: int, rng
) -> BackupTarget:
    """Batch-form backup: bootstrap at the logged a' with k components replaced.

    q may be a single QTable or an iterable of target-ensemble QTables, in
    which case the bootstrap value is the member minimum (pessimism).
    """
    if batch.a2 is None:
        raise ValidationError("batch records lack the logged next action a'")
    values, gamma = _min_table(q)
    comps, subsets = replace_actions(rng, batch.components("a2"), batch.s2, pi, k)
    flat = comps @ radix_weights(list(batch.action_counts))
    bound = 1.0 / (1.0 - gamma)
    y = np.clip(batch.r + gamma * values[batch.s2, flat], -bound, bound)
    return BackupTarget(y, k, subsets)


def exact_sampled_expectation(
    batch: TransitionDataset, q, pi: FactorizedPolicy, k: int
) -> np.ndarray:
    """Exact per-record conditional expectation of sampled_backup.

    Averages analytically over the uniform subset choice and the policy
    draws for the replaced components, holding each record's (s', a')
    fixed. This is the quantity sampled_backup estimates by Monte Carlo.
    """
    values, gamma = _min_table(q)
    counts = list(batch.action_counts)
    n = len(counts)
    radix = radix_weights(counts)
    comps = batch.components("a2")
    m = batch.size
    subsets = list(itertools.combinations(range(n), k))
    acc = np.zeros(m)
    for subset in subsets:
        for assignment in itertools.product(*[range(counts[i]) for i in subset]):
            mod = comps.copy()
            prob = np.ones(m)
            for i, c in zip(subset, assignment):
                mod[:, i] = c
                prob *= pi.tables[i][batch.s2, c]
            acc += prob * values[batch.s2, mod @ radix]
    acc /= len(subsets)
    bound = 1.0 / (1.0 - gamma)
    return np.clip(batch.r + gamma * acc, -bound, bound)


def contraction_check(op, q1: QTable, q2: QTable, gamma: float):
    """sup-norm contraction test: ||op Q1 - op Q2||_inf vs gamma ||Q1 - Q2||_inf."""
    lhs = float(np.abs(op(q1).values - op(q2).values).max())
    rhs = gamma * float(np.abs(q1.values - q2.values).max())
    return lhs, rhs, lhs <= rhs + CONTRACTION_TOL
