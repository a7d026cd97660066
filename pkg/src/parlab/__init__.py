"""Exact desk-scale laboratory for offline multi-agent Q-learning with
partial action replacement.

Finite Dec-MDPs are solved by dynamic programming and linear algebra so
that every theoretical quantity — occupancy divergences, value-error
bounds, operator contraction moduli, gradient identities — can be
verified mechanically rather than estimated.
"""

from .datagen import (
    BehaviorSpec,
    EmpiricalConditionals,
    TransitionDataset,
    comonotone_coupling,
    empirical_conditionals,
    load_dataset,
    make_behavior,
    sample_dataset,
    save_dataset,
)
from .decmdp import (
    DecMdp,
    QTable,
    evaluate_policy_q,
    greedy_joint_policy,
    policy_value,
    solve_q_star,
    validate,
)
from .errors import ConvergenceError, UnsupportedStateError, ValidationError
from .generators import random_factorized, random_joint_policy, random_mdp, random_qtable
from .harness import (
    ExperimentConfig,
    ResultsTable,
    default_benchmark_config,
    load_train_log,
    report_uncertainty,
    report_weights,
    run_experiment,
)
from .indexing import decode_joint, encode_joint, joint_size
from .learners import (
    LearnerConfig,
    QEnsemble,
    TrainLog,
    compute_weights,
    conservative_penalty,
    ensemble_uncertainty,
    evaluate_learned,
    spacql_target,
    train_icql_qs,
    train_joint_cql_baseline,
    train_spacql,
)
from .occupancy import (
    DivergenceCheck,
    OccupancyMeasure,
    check_correlated_divergence,
    check_linear_divergence,
    check_product_difference,
    occupancy,
    occupancy_w1,
    state_action_occupancy,
)
from .operators import (
    BackupTarget,
    averaged_individual_exact,
    contraction_check,
    exact_sampled_expectation,
    individual_backup_exact,
    k_backup_exact,
    replace_actions,
    sampled_backup,
    soft_partial_exact,
)
from .policies import (
    FactorizedPolicy,
    JointPolicy,
    SoftmaxPolicyParams,
    exact_marginals,
    excess_correlation,
    factorized_tv,
    marginalize,
    mixed_policy,
    policy_tv,
    product_policy,
    tv_distance,
)
from .tasks import built_in_tasks, task_mdp
from .theory import (
    BoundReport,
    gradient_equivalence_check,
    lipschitz_range_check,
    run_bound_suite,
    run_contraction_suite,
    run_correlated_suite,
    run_gradient_suite,
    run_lemma_suite,
    run_product_difference_suite,
    spacql_bound,
    value_error_bound,
    value_error_bound_corr,
    verify_theory,
)

__version__ = "0.1.0"
