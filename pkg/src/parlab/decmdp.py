"""Finite Dec-MDPs and exact value computation.

A Dec-MDP here is a finite MDP whose action space factors across agents.
All value quantities are computed exactly: Q* by value iteration with a
certified stopping rule, Q^pi by a direct linear solve of the evaluation
fixed point. Tensors are dense; sizes are capped so dense solves stay
cheap and exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ValidationError
from .indexing import joint_size
from .policies import JointPolicy

# Dense-solve size caps. Everything in this package is desk-scale; the caps
# exist to fail loudly instead of grinding on an accidentally huge instance.
MAX_STATES = 512
MAX_JOINT_ACTIONS = 256

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class DecMdp:
    """Finite Dec-MDP with dense transition and reward tables.

    transition[s, a, s2] = P(s2 | s, a) with ``a`` a flat joint-action index
    (row-major over per-agent actions, agent 0 most significant; see
    ``parlab.indexing``). reward[s, a] in [-1, 1]. initial_dist is d0.
    """

    n_states: int
    action_counts: tuple[int, ...]
    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    initial_dist: np.ndarray
    name: str = "decmdp"
    _hash: str | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "action_counts", tuple(int(c) for c in self.action_counts))
        for attr in ("transition", "reward", "initial_dist"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, attr), dtype=np.float64))
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)

    @property
    def n_agents(self) -> int:
        return len(self.action_counts)

    @property
    def n_joint_actions(self) -> int:
        return joint_size(list(self.action_counts))

    @property
    def value_bound(self) -> float:
        """Sup-norm bound 1/(1-gamma) on any Q with rewards in [-1, 1]."""
        return 1.0 / (1.0 - self.gamma)

    def to_json(self) -> dict:
        return {
            "format": "decmdp-v1",
            "name": self.name,
            "n_states": int(self.n_states),
            "action_counts": [int(c) for c in self.action_counts],
            "gamma": float(self.gamma),
            "transition": [float(x) for x in self.transition.ravel()],
            "reward": [float(x) for x in self.reward.ravel()],
            "initial_dist": [float(x) for x in self.initial_dist],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DecMdp":
        if doc.get("format") != "decmdp-v1":
            raise ValidationError(f"unknown mdp format {doc.get('format')!r}")
        s = int(doc["n_states"])
        counts = [int(c) for c in doc["action_counts"]]
        a = joint_size(counts)
        mdp = cls(
            n_states=s,
            action_counts=tuple(counts),
            transition=np.asarray(doc["transition"], dtype=np.float64).reshape(s, a, s),
            reward=np.asarray(doc["reward"], dtype=np.float64).reshape(s, a),
            gamma=float(doc["gamma"]),
            initial_dist=np.asarray(doc["initial_dist"], dtype=np.float64),
            name=str(doc.get("name", "decmdp")),
        )
        problems = validate(mdp)
        if problems:
            raise ValidationError("; ".join(problems))
        return mdp

    def content_hash(self) -> str:
        """Hex digest of the canonical serialization; identifies the instance."""
        if self._hash is None:
            doc = self.to_json()
            doc.pop("name", None)  # hash is about dynamics, not labels
            canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
            object.__setattr__(self, "_hash", hashlib.sha256(canon.encode()).hexdigest())
        return self._hash

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "DecMdp":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class QTable:
    """Dense table over (state, flat joint action), tagged with its discount."""

    values: np.ndarray
    gamma_tag: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def value_bound(self) -> float:
        return 1.0 / (1.0 - self.gamma_tag)

    def clipped(self) -> "QTable":
        b = self.value_bound
        return QTable(np.clip(self.values, -b, b), self.gamma_tag)

    def copy(self) -> "QTable":
        return QTable(self.values.copy(), self.gamma_tag)


def validate(mdp: DecMdp) -> list[str]:
    """Check every structural invariant; return one message per violation.

    Violations are data, not exceptions: an empty list means the instance
    is valid.
    """
    out = []
    if mdp.n_states < 1:
        out.append("n_states: must be positive")
    if mdp.n_agents < 1:
        out.append("action_counts: need at least one agent")
    for i, c in enumerate(mdp.action_counts):
        if c < 1:
            out.append(f"action_counts[{i}]: must be positive, got {c}")
    if not (0.0 < mdp.gamma < 1.0):
        out.append(f"gamma: must lie in (0, 1), got {mdp.gamma}")

    s, a = mdp.n_states, mdp.n_joint_actions
    if mdp.transition.shape != (s, a, s):
        out.append(f"transition: shape {mdp.transition.shape} != {(s, a, s)}")
        return out  # shape wrong, entrywise checks would be misleading
    if mdp.reward.shape != (s, a):
        out.append(f"reward: shape {mdp.reward.shape} != {(s, a)}")
        return out
    if mdp.initial_dist.shape != (s,):
        out.append(f"initial_dist: shape {mdp.initial_dist.shape} != {(s,)}")
        return out

    row_sums = mdp.transition.sum(axis=2)
    bad = np.argwhere(np.abs(row_sums - 1.0) > ROW_SUM_TOL)
    for si, ai in bad:
        out.append(f"transition[{si},{ai},:]: row sums to {row_sums[si, ai]:.17g}, not 1")
    if (mdp.transition < 0).any():
        si, ai, zi = np.argwhere(mdp.transition < 0)[0]
        out.append(f"transition[{si},{ai},{zi}]: negative probability")

    bad_r = np.argwhere(np.abs(mdp.reward) > 1.0)
    for si, ai in bad_r:
        out.append(f"reward[{si},{ai}]: |{mdp.reward[si, ai]:.17g}| exceeds the bound 1")

    if (mdp.initial_dist < 0).any():
        out.append(f"initial_dist[{int(np.argmin(mdp.initial_dist))}]: negative entry")
    if abs(mdp.initial_dist.sum() - 1.0) > ROW_SUM_TOL:
        out.append(f"initial_dist: sums to {mdp.initial_dist.sum():.17g}, not 1")
    return out


def check_solve_size(mdp: DecMdp, max_states: int, max_joint_actions: int) -> None:
    if mdp.n_states > max_states or mdp.n_joint_actions > max_joint_actions:
        raise ValueError(
            f"instance {mdp.n_states} states x {mdp.n_joint_actions} joint actions "
            f"exceeds the exact-solve cap {max_states} x {max_joint_actions}"
        )


def solve_q_star(
    mdp: DecMdp,
    tol: float = 1e-9,
    max_iter: int = 1_000_000,
    max_states: int = MAX_STATES,
    max_joint_actions: int = MAX_JOINT_ACTIONS,
) -> QTable:
    """Optimal joint Q by value iteration.

    Iterates Q <- R + gamma * P max_a' Q until the sup-norm update drops
    below tol*(1-gamma)/(2*gamma), which certifies ||Q - Q*||_inf <= tol/2.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    check_solve_size(mdp, max_states, max_joint_actions)
    gamma = mdp.gamma
    stop = tol * (1.0 - gamma) / (2.0 * gamma)
    q = np.zeros((mdp.n_states, mdp.n_joint_actions))
    for _ in range(max_iter):
        v = q.max(axis=1)
        q_next = mdp.reward + gamma * (mdp.transition @ v)
        delta = np.abs(q_next - q).max()
        q = q_next
        if delta < stop:
            return QTable(q, gamma)
    raise ConvergenceError(
        f"value iteration did not reach tolerance after {max_iter} iterations "
        f"(last update {delta:.3e}, needed {stop:.3e})"
    )


def evaluate_policy_q(
    mdp: DecMdp,
    pi: JointPolicy,
    residual_tol: float = 1e-9,
    max_states: int = MAX_STATES,
    max_joint_actions: int = MAX_JOINT_ACTIONS,
) -> QTable:
    """Exact Q^pi from the linear evaluation fixed point, no iteration.

    Solves (I - gamma P^pi) v = r^pi for the state values of the induced
    Markov chain, then expands Q(s,a) = r(s,a) + gamma * P(.|s,a) @ v.
    Nonsingular for gamma < 1; the Bellman residual is checked anyway to
    surface numerical trouble.
    """
    check_solve_size(mdp, max_states, max_joint_actions)
    table = pi.table
    if table.shape != (mdp.n_states, mdp.n_joint_actions):
        raise ValueError(
            f"policy shape {table.shape} does not match mdp "
            f"{(mdp.n_states, mdp.n_joint_actions)}"
        )
    gamma = mdp.gamma
    r_pi = (table * mdp.reward).sum(axis=1)
    p_pi = np.einsum("sa,saz->sz", table, mdp.transition)
    v = np.linalg.solve(np.eye(mdp.n_states) - gamma * p_pi, r_pi)
    q = mdp.reward + gamma * (mdp.transition @ v)

    v_back = (table * q).sum(axis=1)
    residual = np.abs(q - (mdp.reward + gamma * (mdp.transition @ v_back))).max()
    if residual > residual_tol:
        raise ConvergenceError(f"policy evaluation residual {residual:.3e} exceeds {residual_tol}")
    return QTable(q, gamma)


def policy_value(mdp: DecMdp, pi: JointPolicy) -> float:
    """Expected discounted return from d0: sum_s d0(s) sum_a pi(a|s) Q^pi(s,a)."""
    q = evaluate_policy_q(mdp, pi)
    v = (pi.table * q.values).sum(axis=1)
    return float(mdp.initial_dist @ v)


def greedy_joint_policy(q: QTable) -> JointPolicy:
    """Deterministic joint policy, argmax per state. Ties break to the lowest index."""
    s, a = q.values.shape
    table = np.zeros((s, a))
    table[np.arange(s), q.values.argmax(axis=1)] = 1.0
    return JointPolicy(table)
