"""Tabular offline multi-agent Q-learning with partial action replacement.

Three trainers share one vectorized engine:

* SPaCQL: per record, every deviation count k gets a bootstrap point
  built by replacing a random size-k subset of the logged next action
  with policy draws; ensemble disagreement at those points sets
  inverse-uncertainty weights, and the target is the weighted pessimistic
  (min over target members) value plus the CQL-style counterfactual
  penalty.
* ICQL-QS: the average of per-agent individual targets (each agent's own
  component replaced, companions logged), same pessimistic ensemble
  bootstrap and penalty.
* Joint-CQL baseline: the SPaCQL engine with the weight vector pinned to
  all-agents deviation and a joint (all-pi) counterfactual penalty.

All tables are clipped to [-1/(1-gamma), 1/(1-gamma)] after every step;
targets move only by Polyak mixing. Gradients are the exact analytic
table gradients of the summed batch losses (residual times indicator).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import TransitionDataset, sample_rows
from .decmdp import DecMdp, QTable, greedy_joint_policy, policy_value, solve_q_star
from .errors import ValidationError
from .indexing import joint_size, radix_weights
from .operators import replace_actions
from .policies import FactorizedPolicy, SoftmaxPolicyParams, product_policy

INIT_NOISE = 0.05  # member init amplitude as a fraction of the value bound
ALGO_NAMES = ("spacql", "icql-qs", "jointcql")


@dataclass
class LearnerConfig:
    """Hyperparameters shared by every trainer; defaults are tabular-scale."""

    ensemble_size: int = 10
    alpha: float = 1.0                     # conservative penalty weight (SPaCQL/joint)
    lambda_weights: tuple | None = None    # per-agent penalty weights, default 1/n
    icql_lambda: float = 1.0               # penalty weight in the ICQL-QS loss
    tau: float = 0.005                     # Polyak rate for target tables
    lr_q: float = 0.1
    lr_pi: float = 0.01
    batch_size: int = 64
    steps: int = 400
    u_min: float = 1e-6                    # uncertainty floor before inversion
    temperature: float = 1.0               # softmax policy temperature
    seed: int = 0
    uncertainty_source: str = "current"    # "current" or "target" ensemble for u_k
    eval_every: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.ensemble_size < 2:
            raise ValidationError("ensemble_size must be >= 2 (uncertainty needs variance)")
        if not (0.0 < self.tau <= 1.0):
            raise ValidationError(f"tau must lie in (0, 1], got {self.tau}")
        if self.u_min <= 0.0:
            raise ValidationError(f"u_min must be positive, got {self.u_min}")
        if self.temperature <= 0.0:
            raise ValidationError("temperature must be positive")
        if self.lr_q <= 0.0 or self.lr_pi < 0.0:
            raise ValidationError("learning rates must be positive (lr_pi may be 0)")
        if self.batch_size < 1 or self.steps < 0:
            raise ValidationError("batch_size must be >= 1 and steps >= 0")
        if self.alpha < 0.0 or self.icql_lambda < 0.0:
            raise ValidationError("penalty weights must be non-negative")
        if self.uncertainty_source not in ("current", "target"):
            raise ValidationError(f"unknown uncertainty_source {self.uncertainty_source!r}")
        if self.eval_every < 1:
            raise ValidationError("eval_every must be >= 1")

    def resolved_lambda(self, n_agents: int) -> tuple[float, ...]:
        if self.lambda_weights is None:
            return (1.0 / n_agents,) * n_agents
        lam = tuple(float(x) for x in self.lambda_weights)
        if len(lam) != n_agents or any(x < 0 for x in lam):
            raise ValidationError(
                f"lambda_weights must be {n_agents} non-negative entries, got {lam}"
            )
        return lam

    def to_json(self) -> dict:
        return {
            "ensemble_size": self.ensemble_size, "alpha": self.alpha,
            "lambda_weights": list(self.lambda_weights) if self.lambda_weights else None,
            "icql_lambda": self.icql_lambda, "tau": self.tau,
            "lr_q": self.lr_q, "lr_pi": self.lr_pi,
            "batch_size": self.batch_size, "steps": self.steps,
            "u_min": self.u_min, "temperature": self.temperature,
            "seed": self.seed, "uncertainty_source": self.uncertainty_source,
            "eval_every": self.eval_every,
        }


@dataclass
class QEnsemble:
    """J trained member tables plus their Polyak-tracked target tables."""

    members: np.ndarray   # (J, S, A)
    targets: np.ndarray   # (J, S, A)
    gamma_tag: float

    @property
    def size(self) -> int:
        return self.members.shape[0]

    def member(self, j: int) -> QTable:
        return QTable(self.members[j].copy(), self.gamma_tag)

    def target(self, j: int) -> QTable:
        return QTable(self.targets[j].copy(), self.gamma_tag)


@dataclass
class TrainLog:
    """Per-step training metrics plus per-state weight accumulators."""

    algo: str
    gamma: float
    td: np.ndarray           # (T,) mean squared TD residual
    penalty: np.ndarray      # (T,) per-record mean penalty value
    u: np.ndarray            # (T, n) batch-mean per-k uncertainties
    w: np.ndarray            # (T, n) batch-mean per-k weights
    k_eff: np.ndarray        # (T,)
    target_std: np.ndarray   # (T,) batch-mean ensemble std at the used targets
    q_range: np.ndarray      # (T,) widest member range after the step
    value: np.ndarray        # (T,) exact greedy-policy value (NaN without an mdp)
    score: np.ndarray        # (T,) normalized score (NaN without an mdp)
    state_w_sum: np.ndarray  # (S, n) summed per-record weights keyed by s'
    state_w_count: np.ndarray  # (S,)

    @property
    def steps(self) -> int:
        return len(self.td)

    @property
    def n_agents(self) -> int:
        return self.w.shape[1]

    def state_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-state time-averaged weight rows (NaN where never bootstrapped),
        plus the global average row."""
        out = np.full_like(self.state_w_sum, np.nan)
        seen = self.state_w_count > 0
        out[seen] = self.state_w_sum[seen] / self.state_w_count[seen, None]
        total = self.state_w_count.sum()
        glob = (
            self.state_w_sum.sum(axis=0) / total
            if total > 0
            else np.full(self.state_w_sum.shape[1], np.nan)
        )
        return out, glob

    def to_jsonl(self, path, header: dict | None = None) -> None:
        import json

        with open(path, "w", newline="\n") as fh:
            head = {"kind": "trainlog", "algo": self.algo, "gamma": self.gamma,
                    "steps": self.steps}
            if header:
                head.update(header)
            fh.write(json.dumps(head, sort_keys=True, separators=(",", ":")) + "\n")
            for t in range(self.steps):
                rec = {
                    "step": t,
                    "td": float(self.td[t]),
                    "penalty": float(self.penalty[t]),
                    "u": [float(x) for x in self.u[t]],
                    "w": [float(x) for x in self.w[t]],
                    "k_eff": float(self.k_eff[t]),
                    "target_std": float(self.target_std[t]),
                    "q_range": float(self.q_range[t]),
                    "value": None if np.isnan(self.value[t]) else float(self.value[t]),
                    "score": None if np.isnan(self.score[t]) else float(self.score[t]),
                }
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# building blocks


def compute_weights(u, u_min: float) -> np.ndarray:
    """Inverse-uncertainty weights: floor, invert, normalize along the last axis."""
    u = np.asarray(u, dtype=np.float64)
    if u.size == 0:
        raise ValueError("empty uncertainty vector")
    inv = 1.0 / np.maximum(u, u_min)
    return inv / inv.sum(axis=-1, keepdims=True)


def ensemble_uncertainty(members: np.ndarray, s_idx, a_idx) -> np.ndarray:
    """Population std across members at the queried (state, joint action) points."""
    if members.shape[0] < 2:
        raise ValidationError("uncertainty needs at least 2 members")
    return members[:, s_idx, a_idx].std(axis=0)


def spacql_target(
    batch: TransitionDataset,
    members: np.ndarray,
    targets: np.ndarray,
    pi: FactorizedPolicy,
    gamma: float,
    config: LearnerConfig,
    rng,
    weight_override=None,
):
    """Per-record soft-partial pessimistic targets, with the per-k ledger.

    For each record and each deviation count k: sample a subset, splice pi
    draws into the logged a', measure ensemble disagreement u_k there, and
    take the pessimistic (min over target members) value y_k. The target
    is r + gamma * sum_k w_k y_k with w the inverse-uncertainty weights
    (or a pinned override), clipped to the valid range.

    Returns (Y (m,), info) where info carries per-record u, w, y, k_eff.
    """
    if batch.a2 is None:
        raise ValidationError("batch records lack the logged next action a'")
    counts = list(batch.action_counts)
    n = len(counts)
    m = batch.size
    radix = radix_weights(counts)
    comps0 = batch.components("a2")
    unc_src = members if config.uncertainty_source == "current" else targets
    u_all = np.empty((m, n))
    y_all = np.empty((m, n))
    for k in range(1, n + 1):
        comps, _ = replace_actions(rng, comps0, batch.s2, pi, k)
        flat = comps @ radix
        u_all[:, k - 1] = unc_src[:, batch.s2, flat].std(axis=0)
        y_all[:, k - 1] = targets[:, batch.s2, flat].min(axis=0)
    if weight_override is None:
        w = compute_weights(u_all, config.u_min)
    else:
        w = np.asarray(weight_override, dtype=np.float64)
        if w.shape != (n,) or (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError(f"weight override must be a length-{n} distribution")
        w = np.broadcast_to(w, (m, n))
    bound = 1.0 / (1.0 - gamma)
    y = np.clip(batch.r + gamma * (w * y_all).sum(axis=1), -bound, bound)
    info = {
        "u": u_all,
        "w": w,
        "y": y_all,
        "k_eff": (w * np.arange(1, n + 1)).sum(axis=1),
    }
    return y, info


def _penalty_grad_and_values(q, batch, tables, alpha, lam, mode, radix, counts):
    """Shared-structure penalty gradient (member-independent) and per-member
    penalty values, both in summed-over-batch form."""
    j_members, s_count, a_count = q.shape
    grad = np.zeros((s_count, a_count))
    vals = np.zeros(j_members)
    if alpha == 0.0:
        return grad, vals
    s, a = batch.s, batch.a
    if mode == "per_agent":
        comps = batch.components("a")
        for i, (t, li) in enumerate(zip(tables, lam)):
            coef = alpha * li
            if coef == 0.0:
                continue
            base = a - comps[:, i] * radix[i]
            idx = base[:, None] + np.arange(counts[i])[None, :] * radix[i]
            p = t[s]
            np.add.at(grad, (s[:, None], idx), coef * p)
            np.add.at(grad, (s, a), -coef)
            slices = q[:, s[:, None], idx]  # (J, m, A_i)
            vals += coef * ((p[None] * slices).sum(axis=2) - q[:, s, a]).sum(axis=1)
    elif mode == "joint":
        prodp = np.ones((batch.size, 1))
        for t in tables:
            prodp = (prodp[:, :, None] * t[s][:, None, :]).reshape(batch.size, -1)
        np.add.at(grad, s, alpha * prodp)
        np.add.at(grad, (s, a), -alpha)
        vals = alpha * ((prodp[None] * q[:, s, :]).sum(axis=2) - q[:, s, a]).sum(axis=1)
    else:
        raise ValidationError(f"unknown penalty mode {mode!r}")
    return grad, vals


def conservative_penalty(
    member, batch: TransitionDataset, pi: FactorizedPolicy, alpha: float,
    lambda_weights, mode: str = "per_agent",
):
    """CQL-style counterfactual penalty for one member, with its exact gradient.

    Per record and agent: the expected Q over a_i ~ pi_i(.|s) paired with
    the record's logged companions a_{-i} (the empirical sample of the
    data conditional), minus Q at the logged joint action; aggregated
    with alpha and the per-agent weights, summed over the batch. The
    gradient pushes logged-action values up and pi-counterfactuals down.
    In "joint" mode all agents' components are replaced at once.
    """
    values = member.values if isinstance(member, QTable) else np.asarray(member)
    counts = list(batch.action_counts)
    lam = tuple(lambda_weights)
    grad, vals = _penalty_grad_and_values(
        values[None], batch, pi.tables, alpha, lam, mode, radix_weights(counts), counts
    )
    return float(vals[0]), grad


def _softmax_tables(logits, temperature):
    out = []
    for t in logits:
        z = t / temperature
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        out.append(e / e.sum(axis=1, keepdims=True))
    return tuple(out)


def _uniform_policy(n_states, counts) -> FactorizedPolicy:
    return FactorizedPolicy(tuple(np.full((n_states, c), 1.0 / c) for c in counts))


def _greedy_policy(tables) -> FactorizedPolicy:
    out = []
    for t in tables:
        g = np.zeros_like(t)
        g[np.arange(t.shape[0]), t.argmax(axis=1)] = 1.0
        out.append(g)
    return FactorizedPolicy(tuple(out))


# ---------------------------------------------------------------------------
# the engine


def _train_core(dataset, config, mdp, algo, weight_override, penalty_mode):
    config.validate()
    gamma = float(dataset.gamma)
    if mdp is not None:
        dataset.verify_against(mdp)
    s_count = dataset.n_states
    counts = list(dataset.action_counts)
    n = len(counts)
    a_count = joint_size(counts)
    j_members = config.ensemble_size
    lam = config.resolved_lambda(n)
    if algo == "icql-qs":
        pen_alpha, pen_lam = config.icql_lambda, (1.0 / n,) * n
    else:
        pen_alpha, pen_lam = config.alpha, lam

    rng = np.random.default_rng(config.seed)
    bound = 1.0 / (1.0 - gamma)
    amp = INIT_NOISE * bound
    q = rng.uniform(-amp, amp, (j_members, s_count, a_count))
    qbar = q.copy()
    logits = [np.zeros((s_count, c)) for c in counts]
    radix = radix_weights(counts)

    if mdp is not None:
        qstar = solve_q_star(mdp)
        v_star = policy_value(mdp, greedy_joint_policy(qstar))
        v_rand = policy_value(mdp, product_policy(_uniform_policy(s_count, counts)))
        denom = v_star - v_rand

    t_steps = config.steps
    log = TrainLog(
        algo=algo, gamma=gamma,
        td=np.zeros(t_steps), penalty=np.zeros(t_steps),
        u=np.zeros((t_steps, n)), w=np.zeros((t_steps, n)),
        k_eff=np.zeros(t_steps), target_std=np.zeros(t_steps),
        q_range=np.zeros(t_steps),
        value=np.full(t_steps, np.nan), score=np.full(t_steps, np.nan),
        state_w_sum=np.zeros((s_count, n)), state_w_count=np.zeros(s_count),
    )

    for t in range(t_steps):
        b = rng.integers(0, dataset.size, config.batch_size)
        batch = dataset.take(b)
        m = batch.size
        tables = _softmax_tables(logits, config.temperature)
        pi_t = FactorizedPolicy(tables)

        if algo == "icql-qs":
            draws = rng.random((m, n))
            comps0 = batch.components("a2")
            unc_src = q if config.uncertainty_source == "current" else qbar
            us = np.empty((m, n))
            ys = np.empty((m, n))
            for i in range(n):
                comps = comps0.copy()
                comps[:, i] = sample_rows(tables[i][batch.s2], draws[:, i])
                flat = comps @ radix
                us[:, i] = unc_src[:, batch.s2, flat].std(axis=0)
                ys[:, i] = qbar[:, batch.s2, flat].min(axis=0)
            y = np.clip(batch.r + gamma * ys.mean(axis=1), -bound, bound)
            u_row = np.zeros(n)
            u_row[0] = us.mean()
            w_row = np.zeros(n)
            w_row[0] = 1.0
            k_eff_step = 1.0
            t_std = float(us.mean(axis=1).mean())
            w_rec = np.broadcast_to(w_row, (m, n))
        else:
            y, info = spacql_target(
                batch, q, qbar, pi_t, gamma, config, rng, weight_override
            )
            u_row = info["u"].mean(axis=0)
            w_row = info["w"].mean(axis=0)
            k_eff_step = float(info["k_eff"].mean())
            t_std = float((info["w"] * info["u"]).sum(axis=1).mean())
            w_rec = info["w"]

        # member updates: exact gradient of 1/2 sum_b (Q_j(s,a) - Y)^2 + penalty
        res = q[:, batch.s, batch.a] - y[None, :]  # (J, m)
        flat_sa = batch.s * a_count + batch.a
        tdg = np.empty((j_members, s_count * a_count))
        for j in range(j_members):
            tdg[j] = np.bincount(flat_sa, weights=res[j], minlength=s_count * a_count)
        pgrad, pvals = _penalty_grad_and_values(
            q, batch, tables, pen_alpha, pen_lam, penalty_mode, radix, counts
        )
        q -= config.lr_q * (tdg.reshape(j_members, s_count, a_count) + pgrad[None])
        np.clip(q, -bound, bound, out=q)
        qbar = (1.0 - config.tau) * qbar + config.tau * q

        # policy ascent on member 0 with logged companions
        if config.lr_pi > 0.0:
            a_comps = batch.components("a")
            for i in range(n):
                base = batch.a - a_comps[:, i] * radix[i]
                idx = base[:, None] + np.arange(counts[i])[None, :] * radix[i]
                qs = q[0][batch.s[:, None], idx]
                p = tables[i][batch.s]
                gc = p * (qs - (p * qs).sum(axis=1, keepdims=True)) / config.temperature
                g = np.zeros((s_count, counts[i]))
                np.add.at(g, batch.s, gc)
                logits[i] += config.lr_pi * g

        log.td[t] = float((res ** 2).mean())
        log.penalty[t] = float(pvals.mean() / m)
        log.u[t] = u_row
        log.w[t] = w_row
        log.k_eff[t] = k_eff_step
        log.target_std[t] = t_std
        log.q_range[t] = float((q.max(axis=(1, 2)) - q.min(axis=(1, 2))).max())
        np.add.at(log.state_w_sum, batch.s2, w_rec)
        np.add.at(log.state_w_count, batch.s2, 1.0)
        if mdp is not None and (t % config.eval_every == 0 or t == t_steps - 1):
            greedy = _greedy_policy(_softmax_tables(logits, config.temperature))
            v = policy_value(mdp, product_policy(greedy))
            log.value[t] = v
            log.score[t] = 100.0 * (v - v_rand) / denom if abs(denom) > 1e-12 else np.nan

    ensemble = QEnsemble(members=q, targets=qbar, gamma_tag=gamma)
    policies = SoftmaxPolicyParams(tuple(np.array(l) for l in logits), config.temperature)
    return ensemble, policies, log


def train_spacql(
    dataset: TransitionDataset,
    config: LearnerConfig,
    mdp: DecMdp | None = None,
    weight_override=None,
    penalty_mode: str = "per_agent",
):
    """Algorithm: soft-partial conservative Q-learning. Returns
    (QEnsemble, SoftmaxPolicyParams, TrainLog)."""
    return _train_core(dataset, config, mdp, "spacql", weight_override, penalty_mode)


def train_icql_qs(dataset: TransitionDataset, config: LearnerConfig, mdp: DecMdp | None = None):
    """Per-agent individual targets averaged into one shared pessimistic table.

    Returns (shared QTable — the first ensemble member, SoftmaxPolicyParams,
    TrainLog)."""
    ensemble, policies, log = _train_core(dataset, config, mdp, "icql-qs", None, "per_agent")
    return ensemble.member(0), policies, log


def train_joint_cql_baseline(
    dataset: TransitionDataset, config: LearnerConfig, mdp: DecMdp | None = None
):
    """Full joint-pi targets (weights pinned to e_n) with a joint CQL penalty.

    Identical engine to train_spacql apart from those two switches.
    Returns (QTable — the first ensemble member, SoftmaxPolicyParams, TrainLog)."""
    n = len(dataset.action_counts)
    override = np.zeros(n)
    override[-1] = 1.0
    ensemble, policies, log = _train_core(
        dataset, config, mdp, "jointcql", override, "joint"
    )
    return ensemble.member(0), policies, log


def evaluate_learned(mdp: DecMdp, policies, mode: str = "greedy"):
    """Exact value of the learned joint product policy plus normalized score.

    Score is 100 * (V - V_uniform) / (V_optimal - V_uniform), both
    reference values exact; None when the mdp is degenerate (references
    coincide). Greedy mode takes per-agent argmax (ties to the lowest
    action index); softmax mode evaluates the stochastic policy itself.
    """
    if isinstance(policies, SoftmaxPolicyParams):
        fp = policies.policy()
    else:
        fp = policies
    if mode == "greedy":
        fp = _greedy_policy(fp.tables)
    elif mode != "softmax":
        raise ValueError(f"unknown evaluation mode {mode!r}")
    value = policy_value(mdp, product_policy(fp))
    qstar = solve_q_star(mdp)
    v_star = policy_value(mdp, greedy_joint_policy(qstar))
    v_rand = policy_value(mdp, product_policy(_uniform_policy(mdp.n_states, mdp.action_counts)))
    if abs(v_star - v_rand) < 1e-12:
        return value, None
    return value, 100.0 * (value - v_rand) / (v_star - v_rand)
