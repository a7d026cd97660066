"""Behavior-policy regimes and offline transition datasets.

Regimes mirror the usual offline-RL data qualities: random (uniform),
expert (low-temperature softmax best responses against Q*), medium (an
expert/uniform mixture), medium-replay (a state-indexed mixture sweep
emulating a learning trace), and correlated (a convex combination of the
product of uniform marginals with their comonotone coupling, the
maximally correlated joint with those marginals).

Datasets are columnar records (s, a, r, s', a') with the generating mdp's
content hash, persisted as one JSON header line plus CSV rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .decmdp import DecMdp, solve_q_star
from .errors import UnsupportedStateError, ValidationError
from .indexing import decode_joint, joint_size
from .occupancy import occupancy
from .policies import FactorizedPolicy, JointPolicy, product_policy

REGIMES = ("random", "medium", "medium_replay", "expert", "correlated")
MODES = ("iid_occupancy", "trajectory")

# temperature of the expert component inside the mixture regimes
EXPERT_TEMP = 0.1
BEST_RESPONSE_SWEEPS = 3


@dataclass(frozen=True)
class BehaviorSpec:
    """Which data-collection regime to build, and its quality knobs.

    epsilon is regime-dependent: the softmax temperature for expert
    (default 0.1), the uniform-mixture weight for medium (default 0.5);
    ignored by random/medium_replay/correlated. rho is the correlation
    strength and only meaningful for the correlated regime.
    """

    regime: str
    epsilon: float | None = None
    rho: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValidationError(f"unknown regime {self.regime!r}; choose from {REGIMES}")
        if self.epsilon is not None and not (0.0 <= self.epsilon <= 1.0):
            raise ValidationError(f"epsilon must lie in [0,1], got {self.epsilon}")
        if not (0.0 <= self.rho <= 1.0):
            raise ValidationError(f"rho must lie in [0,1], got {self.rho}")
        if self.regime != "correlated" and self.rho != 0.0:
            raise ValidationError("rho is only meaningful for the correlated regime")

    def resolved_epsilon(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return {"expert": EXPERT_TEMP, "medium": 0.5}.get(self.regime, 0.0)

    def to_json(self) -> dict:
        return {
            "regime": self.regime,
            "epsilon": self.epsilon,
            "rho": self.rho,
            "seed": self.seed,
        }


def _uniform_tables(mdp: DecMdp) -> tuple[np.ndarray, ...]:
    return tuple(np.full((mdp.n_states, c), 1.0 / c) for c in mdp.action_counts)


def _expected_over_others(qvals: np.ndarray, tables, counts, agent: int) -> np.ndarray:
    """E over a_{-i} ~ prod tables_j of Q(s, a_i, a_{-i}) -> (S, A_i)."""
    s = qvals.shape[0]
    cube = np.moveaxis(qvals.reshape(s, *counts), 1 + agent, 1)
    others = [j for j in range(len(counts)) if j != agent]
    for j in reversed(others):
        t = tables[j].reshape((s,) + (1,) * (cube.ndim - 2) + (counts[j],))
        cube = (cube * t).sum(-1)
    return cube


def _softmax_rows(values: np.ndarray, temperature: float) -> np.ndarray:
    if temperature == 0.0:
        out = np.zeros_like(values)
        out[np.arange(values.shape[0]), values.argmax(axis=1)] = 1.0
        return out
    z = values / temperature
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def expert_tables(mdp: DecMdp, temperature: float) -> tuple[np.ndarray, ...]:
    """Per-agent softmax best responses against Q*, iterated a few sweeps.

    Starting from uniform play, each agent in turn softmaxes (at the
    given temperature) its counterfactual Q* values with the other
    agents' current tables marginalized out. A handful of sweeps settles
    onto coordinated near-optimal factorized behavior.
    """
    qstar = solve_q_star(mdp).values
    counts = mdp.action_counts
    tables = list(_uniform_tables(mdp))
    for _ in range(BEST_RESPONSE_SWEEPS):
        for i in range(mdp.n_agents):
            cf = _expected_over_others(qstar, tables, counts, i)
            tables[i] = _softmax_rows(cf, temperature)
    return tuple(tables)


def comonotone_coupling(marginals: list[np.ndarray]) -> np.ndarray:
    """Maximally correlated joint distribution with the given marginals.

    Actions are ranked by marginal probability (descending, ties to the
    lowest index) and quantile bands are glued: every agent sits in its
    rank-r action over the same stretch of the unit interval.
    """
    orders = [np.argsort(-np.asarray(p), kind="stable") for p in marginals]
    cums = [np.cumsum(np.asarray(p)[o]) for p, o in zip(marginals, orders)]
    counts = [len(p) for p in marginals]
    levels = np.unique(np.concatenate([c for c in cums] + [np.array([0.0])]))
    joint = np.zeros(joint_size(counts))
    lo = 0.0
    for hi in levels:
        mass = hi - lo
        if mass <= 0:
            continue
        mid = 0.5 * (lo + hi)
        flat = 0
        for order, cum, c in zip(orders, cums, counts):
            slot = int(np.searchsorted(cum, mid))
            flat = flat * c + int(order[min(slot, c - 1)])
        joint[flat] += mass
        lo = hi
    return joint


def make_behavior(mdp: DecMdp, spec: BehaviorSpec):
    """Build the behavior policy for a regime: FactorizedPolicy, except
    the correlated regime which returns a (generally non-product) JointPolicy."""
    eps = spec.resolved_epsilon()
    if spec.regime == "random":
        return FactorizedPolicy(_uniform_tables(mdp))
    if spec.regime == "expert":
        return FactorizedPolicy(expert_tables(mdp, eps))
    if spec.regime == "medium":
        exp = expert_tables(mdp, EXPERT_TEMP)
        uni = _uniform_tables(mdp)
        return FactorizedPolicy(
            tuple((1.0 - eps) * e + eps * u for e, u in zip(exp, uni))
        )
    if spec.regime == "medium_replay":
        exp = expert_tables(mdp, EXPERT_TEMP)
        uni = _uniform_tables(mdp)
        s = mdp.n_states
        sweep = np.full(s, 0.25) if s == 1 else 1.0 - 0.75 * np.arange(s) / (s - 1)
        mix = sweep[:, None]
        return FactorizedPolicy(
            tuple((1.0 - mix) * e + mix * u for e, u in zip(exp, uni))
        )
    # correlated: uniform marginals, comonotone-coupled with strength rho
    marg = _uniform_tables(mdp)
    prod = product_policy(FactorizedPolicy(marg)).table
    table = np.empty_like(prod)
    for s in range(mdp.n_states):
        como = comonotone_coupling([t[s] for t in marg])
        table[s] = (1.0 - spec.rho) * prod[s] + spec.rho * como
    return JointPolicy(table)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class TransitionDataset:
    """Columnar offline dataset of (s, a, r, s', a') with provenance."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    a2: np.ndarray
    mdp_hash: str
    n_states: int
    action_counts: tuple[int, ...]
    gamma: float = 0.9
    behavior: dict = field(default_factory=lambda: {"regime": "custom"})
    mode: str = "iid_occupancy"

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.int64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.r = np.asarray(self.r, dtype=np.float64)
        self.s2 = np.asarray(self.s2, dtype=np.int64)
        self.a2 = np.asarray(self.a2, dtype=np.int64)
        self.action_counts = tuple(int(c) for c in self.action_counts)

    @property
    def size(self) -> int:
        return len(self.s)

    @property
    def n_joint_actions(self) -> int:
        return joint_size(list(self.action_counts))

    def components(self, which: str = "a") -> np.ndarray:
        """Decode logged joint actions into per-agent components (N, n)."""
        flat = self.a if which == "a" else self.a2
        return decode_joint(flat, list(self.action_counts))

    def take(self, idx) -> "TransitionDataset":
        return replace(
            self, s=self.s[idx], a=self.a[idx], r=self.r[idx], s2=self.s2[idx], a2=self.a2[idx]
        )

    def header(self) -> dict:
        return {
            "format": "transition-dataset-v1",
            "mdp_hash": self.mdp_hash,
            "n_states": int(self.n_states),
            "action_counts": list(self.action_counts),
            "gamma": float(self.gamma),
            "behavior": self.behavior,
            "mode": self.mode,
            "size": self.size,
        }

    def verify_against(self, mdp: DecMdp) -> None:
        """Every record must be exactly consistent with the mdp's tables."""
        if mdp.content_hash() != self.mdp_hash:
            raise ValidationError(
                f"dataset was generated on mdp {self.mdp_hash[:12]}..., "
                f"got {mdp.content_hash()[:12]}..."
            )
        if self.gamma != mdp.gamma:
            raise ValidationError(
                f"dataset gamma {self.gamma} does not match mdp gamma {mdp.gamma}"
            )
        a = mdp.n_joint_actions
        for name, arr, hi in (("s", self.s, mdp.n_states), ("a", self.a, a),
                              ("s2", self.s2, mdp.n_states), ("a2", self.a2, a)):
            bad = np.where((arr < 0) | (arr >= hi))[0]
            if bad.size:
                raise ValidationError(f"record {bad[0]}: {name}={arr[bad[0]]} out of range")
        mism = np.where(self.r != mdp.reward[self.s, self.a])[0]
        if mism.size:
            i = int(mism[0])
            raise ValidationError(
                f"record {i}: reward {float(self.r[i])!r} does not match the mdp "
                f"table value {float(mdp.reward[self.s[i], self.a[i]])!r}"
            )
        impossible = np.where(mdp.transition[self.s, self.a, self.s2] <= 0.0)[0]
        if impossible.size:
            i = int(impossible[0])
            raise ValidationError(
                f"record {i}: s'={self.s2[i]} has zero probability under P(.|s,a)"
            )


def sample_rows(prob_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF lookup per row of a stack of distributions."""
    cum = np.cumsum(prob_rows, axis=1)
    idx = (u[:, None] > cum).sum(axis=1)
    return np.minimum(idx, prob_rows.shape[1] - 1)


def _sample_rows(rng, prob_rows: np.ndarray) -> np.ndarray:
    return sample_rows(prob_rows, rng.random(prob_rows.shape[0]))


def sample_dataset(
    mdp: DecMdp,
    behavior,
    size: int,
    mode: str = "iid_occupancy",
    seed: int = 0,
    behavior_spec: BehaviorSpec | None = None,
) -> TransitionDataset:
    """Draw an offline dataset from the behavior policy.

    iid_occupancy: records are independent, s ~ d^mu (discounted
    occupancy), a ~ mu(.|s), s' ~ P, a' ~ mu(.|s'). trajectory: one
    unbroken rollout from d0; consecutive records chain, so each record's
    (s', a') is the next record's (s, a).
    """
    if size < 1:
        raise ValidationError("size must be at least 1")
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; choose from {MODES}")
    joint = behavior if isinstance(behavior, JointPolicy) else product_policy(behavior)
    if joint.table.shape != (mdp.n_states, mdp.n_joint_actions):
        raise ValidationError("behavior policy does not match the mdp's shape")
    rng = np.random.default_rng(seed)

    if mode == "iid_occupancy":
        d = occupancy(mdp, joint).dist
        s = _sample_rows(rng, np.broadcast_to(d, (size, d.size)))
        a = _sample_rows(rng, joint.table[s])
        s2 = _sample_rows(rng, mdp.transition[s, a])
        a2 = _sample_rows(rng, joint.table[s2])
    else:
        states = np.empty(size + 1, dtype=np.int64)
        actions = np.empty(size + 1, dtype=np.int64)
        states[0] = _sample_rows(rng, mdp.initial_dist[None, :])[0]
        for t in range(size + 1):
            actions[t] = _sample_rows(rng, joint.table[states[t]][None, :])[0]
            if t < size:
                states[t + 1] = _sample_rows(
                    rng, mdp.transition[states[t], actions[t]][None, :]
                )[0]
        s, a = states[:-1], actions[:-1]
        s2, a2 = states[1:], actions[1:]

    spec_doc = behavior_spec.to_json() if behavior_spec else {"regime": "custom"}
    spec_doc = dict(spec_doc, sample_seed=seed)
    return TransitionDataset(
        s=s, a=a, r=mdp.reward[s, a], s2=s2, a2=a2,
        mdp_hash=mdp.content_hash(),
        n_states=mdp.n_states,
        action_counts=mdp.action_counts,
        gamma=mdp.gamma,
        behavior=spec_doc,
        mode=mode,
    )


def save_dataset(ds: TransitionDataset, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps(ds.header(), sort_keys=True, separators=(",", ":")) + "\n")
        fh.write("s,a,r,s2,a2\n")
        for i in range(ds.size):
            fh.write(
                f"{ds.s[i]},{ds.a[i]},{float(ds.r[i])!r},{ds.s2[i]},{ds.a2[i]}\n"
            )


def load_dataset(path, mdp: DecMdp | None = None) -> TransitionDataset:
    with open(path) as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as e:
            raise ValidationError(f"malformed dataset header: {e}") from e
        if header.get("format") != "transition-dataset-v1":
            raise ValidationError(f"unknown dataset format {header.get('format')!r}")
        cols = fh.readline().strip()
        if cols != "s,a,r,s2,a2":
            raise ValidationError(f"unexpected column line {cols!r}")
        s, a, r, s2, a2 = [], [], [], [], []
        for ln, line in enumerate(fh):
            parts = line.rstrip("\n").split(",")
            if len(parts) != 5:
                raise ValidationError(f"record {ln}: expected 5 fields, got {len(parts)}")
            s.append(int(parts[0])); a.append(int(parts[1])); r.append(float(parts[2]))
            s2.append(int(parts[3])); a2.append(int(parts[4]))
    ds = TransitionDataset(
        s=np.array(s, dtype=np.int64), a=np.array(a, dtype=np.int64),
        r=np.array(r), s2=np.array(s2, dtype=np.int64), a2=np.array(a2, dtype=np.int64),
        mdp_hash=header["mdp_hash"], n_states=int(header["n_states"]),
        action_counts=tuple(header["action_counts"]),
        gamma=float(header["gamma"]),
        behavior=header["behavior"], mode=header["mode"],
    )
    if ds.size != header["size"]:
        raise ValidationError(f"header claims {header['size']} records, file has {ds.size}")
    if mdp is not None:
        ds.verify_against(mdp)
    return ds


# ---------------------------------------------------------------------------
# empirical conditionals


@dataclass
class EmpiricalConditionals:
    """Normalized visit counts from a dataset; unvisited states stay flagged."""

    counts: np.ndarray  # (S, A) joint-action counts per state
    action_counts: tuple[int, ...]

    @property
    def visited(self) -> np.ndarray:
        return self.counts.sum(axis=1) > 0

    def state_count(self, s: int) -> int:
        return int(self.counts[s].sum())

    def joint_dist(self, s: int) -> np.ndarray:
        total = self.counts[s].sum()
        if total == 0:
            raise UnsupportedStateError(f"state {s} never appears in the dataset")
        return self.counts[s] / total

    def others_dist(self, s: int, agent: int) -> np.ndarray:
        """Empirical distribution over the other agents' joint action a_{-i}."""
        total = self.counts[s].sum()
        if total == 0:
            raise UnsupportedStateError(f"state {s} never appears in the dataset")
        cube = self.counts[s].reshape(*self.action_counts)
        return (cube.sum(axis=agent) / total).ravel()

    def marginal_dist(self, s: int, agent: int) -> np.ndarray:
        total = self.counts[s].sum()
        if total == 0:
            raise UnsupportedStateError(f"state {s} never appears in the dataset")
        cube = self.counts[s].reshape(*self.action_counts)
        axes = tuple(j for j in range(len(self.action_counts)) if j != agent)
        return cube.sum(axis=axes) / total


def empirical_conditionals(ds: TransitionDataset) -> EmpiricalConditionals:
    if ds.size == 0:
        raise ValidationError("dataset is empty")
    counts = np.zeros((ds.n_states, ds.n_joint_actions))
    np.add.at(counts, (ds.s, ds.a), 1.0)
    return EmpiricalConditionals(counts=counts, action_counts=ds.action_counts)
