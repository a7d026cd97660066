"""Discounted occupancy measures and the divergence bounds they obey.

The discounted state occupancy of a joint policy phi is the unique fixed
point d = (1-gamma) d0 + gamma d P^phi, found here by a direct linear
solve. The checks below compare occupancies of partially-replaced
policies against the behavior occupancy and test them against the linear
divergence bounds (additive in per-agent TV, plus an excess-correlation
term for correlated behavior) and the product-difference inequality that
drives their proofs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decmdp import DecMdp, check_solve_size
from .errors import ConvergenceError
from .policies import (
    FactorizedPolicy,
    JointPolicy,
    exact_marginals,
    excess_correlation,
    factorized_tv,
    mixed_policy,
    product_policy,
    tv_distance,
)

FIXED_POINT_TOL = 1e-9
SUM_TOL = 1e-10
NEG_SLACK = -1e-12
HOLD_SLACK = -1e-9


@dataclass(frozen=True)
class OccupancyMeasure:
    """Discounted state occupancy d(s) of one policy on one mdp."""

    dist: np.ndarray
    policy_tag: str
    mdp_hash: str

    def __post_init__(self):
        arr = np.asarray(self.dist, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "dist", arr)


@dataclass(frozen=True)
class DivergenceCheck:
    """One evaluated bound instance: lhs vs rhs with slack bookkeeping."""

    lhs: float
    rhs: float
    subset: tuple[int, ...]
    kappa: float
    mdp_hash: str

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.slack >= HOLD_SLACK

    def to_json(self) -> dict:
        return {
            "mdp_hash": self.mdp_hash,
            "subset": list(self.subset),
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "kappa": self.kappa,
            "holds": self.holds,
        }


def occupancy(mdp: DecMdp, phi: JointPolicy, policy_tag: str = "") -> OccupancyMeasure:
    """Exact discounted occupancy via solve of (I - gamma P^phi^T) d = (1-gamma) d0."""
    check_solve_size(mdp, max_states=512, max_joint_actions=2**30)
    if phi.table.shape != (mdp.n_states, mdp.n_joint_actions):
        raise ValueError(
            f"policy shape {phi.table.shape} does not match mdp "
            f"{(mdp.n_states, mdp.n_joint_actions)}"
        )
    gamma = mdp.gamma
    p_phi = np.einsum("sa,saz->sz", phi.table, mdp.transition)
    d = np.linalg.solve(
        np.eye(mdp.n_states) - gamma * p_phi.T, (1.0 - gamma) * mdp.initial_dist
    )
    residual = np.abs(d - ((1.0 - gamma) * mdp.initial_dist + gamma * p_phi.T @ d)).max()
    if residual > FIXED_POINT_TOL:
        raise ConvergenceError(f"occupancy fixed-point residual {residual:.3e}")
    if d.min() < NEG_SLACK:
        raise ConvergenceError(f"occupancy entry {d.min():.3e} below numerical slack")
    d = np.clip(d, 0.0, None)
    if abs(d.sum() - 1.0) > SUM_TOL:
        raise ConvergenceError(f"occupancy sums to {d.sum():.17g}")
    return OccupancyMeasure(d, policy_tag, mdp.content_hash())


def state_action_occupancy(mdp: DecMdp, phi: JointPolicy) -> np.ndarray:
    """d(s) * phi(a|s): the (state, joint action) visitation table."""
    d = occupancy(mdp, phi).dist
    return d[:, None] * phi.table


def occupancy_w1(mdp: DecMdp, phi_a, phi_b) -> float:
    """W1 distance between two occupancies; equals TV under the 0-1 metric.

    Arguments may be JointPolicy (occupancy computed here) or precomputed
    OccupancyMeasure objects, which must carry this mdp's hash.
    """
    def to_measure(phi):
        if isinstance(phi, OccupancyMeasure):
            if phi.mdp_hash != mdp.content_hash():
                raise ValueError("occupancy was computed on a different mdp")
            return phi
        return occupancy(mdp, phi)

    da, db = to_measure(phi_a), to_measure(phi_b)
    return tv_distance(da.dist, db.dist)


def check_linear_divergence(
    mdp: DecMdp, pi: FactorizedPolicy, mu: FactorizedPolicy, subset
) -> DivergenceCheck:
    """Occupancy shift of replacing agents in ``subset`` vs the additive TV bound.

    lhs = W1(d^(S), d^(0)); rhs = gamma/(1-gamma) * sum_{i in S} sup_s TV(pi_i, mu_i).
    """
    subset = tuple(sorted(int(i) for i in set(subset)))
    d_mixed = occupancy(mdp, mixed_policy(pi, mu, subset))
    d_base = occupancy(mdp, product_policy(mu))
    lhs = tv_distance(d_mixed.dist, d_base.dist)
    tvs = factorized_tv(pi, mu)
    rhs = mdp.gamma / (1.0 - mdp.gamma) * float(sum(tvs[i] for i in subset))
    return DivergenceCheck(lhs, rhs, subset, 0.0, mdp.content_hash())


def check_correlated_divergence(
    mdp: DecMdp, pi: FactorizedPolicy, mu_joint: JointPolicy, subset
) -> DivergenceCheck:
    """Divergence bound against a possibly correlated behavior policy.

    Replaced agents play pi_i, the rest play the exact marginals of
    mu_joint; the reference occupancy is that of mu_joint itself. The
    bound gains the excess-correlation term kappa.
    """
    subset = tuple(sorted(int(i) for i in set(subset)))
    marginals = exact_marginals(mu_joint, pi.action_counts)
    kappa = excess_correlation(mu_joint, marginals)
    d_mixed = occupancy(mdp, mixed_policy(pi, marginals, subset))
    d_base = occupancy(mdp, mu_joint)
    lhs = tv_distance(d_mixed.dist, d_base.dist)
    tvs = factorized_tv(pi, marginals)
    rhs = mdp.gamma / (1.0 - mdp.gamma) * (float(sum(tvs[i] for i in subset)) + kappa)
    return DivergenceCheck(lhs, rhs, subset, kappa, mdp.content_hash())


def check_product_difference(p_marginals, q_marginals) -> tuple[float, float, bool]:
    """L1 gap between two product distributions vs twice the summed marginal TVs.

    lhs = sum over the full joint support of |prod p_i - prod q_i|;
    rhs = 2 * sum_i TV(p_i, q_i). Returns (lhs, rhs, holds).
    """
    if len(p_marginals) != len(q_marginals):
        raise ValueError("marginal lists have different arity")
    joint_p = np.ones(1)
    joint_q = np.ones(1)
    rhs = 0.0
    for p, q in zip(p_marginals, q_marginals):
        p = np.asarray(p, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        if p.shape != q.shape:
            raise ValueError("per-agent supports differ between p and q")
        rhs += 2.0 * tv_distance(p, q)
        joint_p = (joint_p[:, None] * p[None, :]).ravel()
        joint_q = (joint_q[:, None] * q[None, :]).ravel()
    lhs = float(np.abs(joint_p - joint_q).sum())
    return lhs, rhs, lhs <= rhs + 1e-12
