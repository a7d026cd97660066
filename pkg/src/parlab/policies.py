"""Factorized and joint policies, TV distances, mixing, excess correlation.

Joint tables index actions by the flat row-major code from
``parlab.indexing`` (agent 0 most significant). Correlation between
agents lives only in JointPolicy; FactorizedPolicy is always a product.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .indexing import joint_size

_ROW_TOL = 1e-9  # constructor guard; generated objects are tight to 1e-12


def _check_rows(arr: np.ndarray, label: str) -> None:
    if arr.ndim != 2:
        raise ValidationError(f"{label}: expected a (state, action) table, got shape {arr.shape}")
    if (arr < 0).any():
        s, a = np.argwhere(arr < 0)[0]
        raise ValidationError(f"{label}[{s},{a}]: negative probability")
    sums = arr.sum(axis=1)
    off = np.abs(sums - 1.0)
    if off.max() > _ROW_TOL:
        s = int(off.argmax())
        raise ValidationError(f"{label}[{s},:]: row sums to {sums[s]:.17g}, not 1")


@dataclass(frozen=True)
class FactorizedPolicy:
    """Per-agent conditional tables pi_i(a_i | s); the joint is their product."""

    tables: tuple[np.ndarray, ...]

    def __post_init__(self):
        frozen = []
        for i, t in enumerate(self.tables):
            arr = np.ascontiguousarray(np.asarray(t, dtype=np.float64))
            _check_rows(arr, f"agent {i}")
            arr.setflags(write=False)
            frozen.append(arr)
        if len({t.shape[0] for t in frozen}) > 1:
            raise ValidationError("agent tables disagree on the number of states")
        object.__setattr__(self, "tables", tuple(frozen))

    @property
    def n_agents(self) -> int:
        return len(self.tables)

    @property
    def n_states(self) -> int:
        return self.tables[0].shape[0]

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(t.shape[1] for t in self.tables)

    def to_json(self, mdp_hash: str | None = None) -> dict:
        return {
            "format": "factorized-policy-v1",
            "n_states": self.n_states,
            "action_counts": list(self.action_counts),
            "tables": [[float(x) for x in t.ravel()] for t in self.tables],
            "mdp_hash": mdp_hash,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FactorizedPolicy":
        if doc.get("format") != "factorized-policy-v1":
            raise ValidationError(f"unknown policy format {doc.get('format')!r}")
        s = int(doc["n_states"])
        return cls(
            tuple(
                np.asarray(flat, dtype=np.float64).reshape(s, a)
                for flat, a in zip(doc["tables"], doc["action_counts"])
            )
        )


@dataclass(frozen=True)
class JointPolicy:
    """Conditional table pi(a | s) over flat joint actions; may be correlated."""

    table: np.ndarray
    _hash: str | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.table, dtype=np.float64))
        _check_rows(arr, "joint policy")
        arr.setflags(write=False)
        object.__setattr__(self, "table", arr)

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    @property
    def n_joint_actions(self) -> int:
        return self.table.shape[1]

    def to_json(self, mdp_hash: str | None = None) -> dict:
        return {
            "format": "joint-policy-v1",
            "n_states": self.n_states,
            "n_joint_actions": self.n_joint_actions,
            "table": [float(x) for x in self.table.ravel()],
            "mdp_hash": mdp_hash,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "JointPolicy":
        if doc.get("format") != "joint-policy-v1":
            raise ValidationError(f"unknown policy format {doc.get('format')!r}")
        s = int(doc["n_states"])
        return cls(np.asarray(doc["table"], dtype=np.float64).reshape(s, -1))

    def content_hash(self) -> str:
        if self._hash is None:
            canon = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
            object.__setattr__(self, "_hash", hashlib.sha256(canon.encode()).hexdigest())
        return self._hash


@dataclass(frozen=True)
class SoftmaxPolicyParams:
    """Per-agent logit tables; the induced policy is row-wise softmax."""

    logits: tuple[np.ndarray, ...]
    temperature: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")
        object.__setattr__(
            self,
            "logits",
            tuple(np.asarray(t, dtype=np.float64) for t in self.logits),
        )

    def policy(self) -> FactorizedPolicy:
        tables = []
        for t in self.logits:
            z = t / self.temperature
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            tables.append(e / e.sum(axis=1, keepdims=True))
        return FactorizedPolicy(tuple(tables))


# ---------------------------------------------------------------------------
# distances


def tv_distance(p, q) -> float:
    """Total variation 0.5 * ||p - q||_1 between two probability vectors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def tv_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise TV between two stacks of distributions (last axis = support)."""
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    return 0.5 * np.abs(p - q).sum(axis=-1)


def policy_tv(pi_i: np.ndarray, mu_i: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-state TV vector and its sup for one agent's conditional tables.

    The sup-over-states number is what the divergence and value-error
    bounds consume; the vector is kept for state-wise diagnostics.
    """
    per_state = tv_rows(np.asarray(pi_i, dtype=np.float64), np.asarray(mu_i, dtype=np.float64))
    return per_state, float(per_state.max())


def factorized_tv(pi: FactorizedPolicy, mu: FactorizedPolicy) -> np.ndarray:
    """sup-state TV(pi_i, mu_i) for every agent, as a length-n vector."""
    if pi.action_counts != mu.action_counts or pi.n_states != mu.n_states:
        raise ValueError("policies have mismatched shapes")
    return np.array([policy_tv(p, m)[1] for p, m in zip(pi.tables, mu.tables)])


# ---------------------------------------------------------------------------
# products, mixing, marginals


def product_policy(fp: FactorizedPolicy) -> JointPolicy:
    """Joint table prod_i pi_i(a_i|s), flattened row-major (agent 0 slowest)."""
    out = np.ones((fp.n_states, 1))
    for t in fp.tables:
        out = (out[:, :, None] * t[:, None, :]).reshape(fp.n_states, -1)
    return JointPolicy(out)


def mixed_policy(pi: FactorizedPolicy, mu: FactorizedPolicy, subset) -> JointPolicy:
    """Joint policy where agents in ``subset`` play pi_i and the rest play mu_j."""
    if pi.action_counts != mu.action_counts or pi.n_states != mu.n_states:
        raise ValueError("pi and mu have mismatched shapes")
    subset = set(int(i) for i in subset)
    for i in subset:
        if not (0 <= i < pi.n_agents):
            raise ValueError(f"agent index {i} out of range for {pi.n_agents} agents")
    tables = tuple(
        pi.tables[i] if i in subset else mu.tables[i] for i in range(pi.n_agents)
    )
    return product_policy(FactorizedPolicy(tables))


def marginalize(joint: JointPolicy, action_counts, agent: int) -> np.ndarray:
    """Exact marginal table of one agent, summing the joint over all others."""
    counts = [int(c) for c in action_counts]
    if joint.n_joint_actions != joint_size(counts):
        raise ValueError("action_counts inconsistent with joint table width")
    if not (0 <= agent < len(counts)):
        raise ValueError(f"agent index {agent} out of range")
    cube = joint.table.reshape(joint.n_states, *counts)
    axes = tuple(1 + j for j in range(len(counts)) if j != agent)
    return cube.sum(axis=axes)


def exact_marginals(joint: JointPolicy, action_counts) -> FactorizedPolicy:
    """All per-agent marginals of a joint policy as a FactorizedPolicy."""
    return FactorizedPolicy(
        tuple(marginalize(joint, action_counts, i) for i in range(len(action_counts)))
    )


def excess_correlation(
    mu_joint: JointPolicy,
    marginals: FactorizedPolicy,
    strict: bool = True,
    marginal_tol: float = 1e-9,
) -> float:
    """Maximal excess correlation: sup_s TV(mu(.|s), prod_i mu_i(.|s)).

    Quantifies how far the joint behavior is from the product of its
    marginals; zero iff the behavior factorizes state-wise. With
    ``strict`` on (the default), the supplied marginals must actually be
    the marginals of ``mu_joint``; pass strict=False only to measure
    against deliberately different product references.
    """
    counts = marginals.action_counts
    if strict:
        true_marg = exact_marginals(mu_joint, counts)
        for i, (got, want) in enumerate(zip(marginals.tables, true_marg.tables)):
            err = np.abs(got - want).max()
            if err > marginal_tol:
                raise ValidationError(
                    f"agent {i} marginals deviate from the joint's true marginals "
                    f"by {err:.3e} (> {marginal_tol}); pass strict=False if intended"
                )
    prod = product_policy(marginals)
    return float(tv_rows(mu_joint.table, prod.table).max())
