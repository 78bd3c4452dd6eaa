"""Bias-tolerant fair classification on tabular data.

A small numpy library plus experiment CLI: a feedforward classifier with
hand-written gradients, a group-regularized training objective whose
group weights and regularizer intensities are meta-learned in a bi-level
loop, label/selection bias injection for simulation studies, fairness
metrics, and an exact enumeration oracle for the objective's
decomposition into clean risk, fairness, and bias-correction terms.
"""

from .bias import (BiasDomainError, BiasSpec, delta_factor, delta_for_group,
                   epsilon_from_theta, inject_label_bias, inject_selection_bias,
                   selection_removal_count, theta_from_epsilon)
from .data import (Dataset, DatasetRecipe, IngestionError, load_csv, load_dataset,
                   recipe_from_toml, save_dataset, split, standardize_train_test)
from .experiments import (ExperimentConfig, RunRecord, case1_rates,
                          intensity_study, preset, run_experiment,
                          with_sensitive_feature, write_outputs)
from .losses import (GroupLabelMarginals, MetaParams, bfarl_loss,
                     bfarl_objective, estimate_marginals, expected_group_loss,
                     peer_loss)
from .meta_opt import (Batch, MetaTrace, NumericError, actual_step, inner_step,
                       meta_gradient, meta_step, train, train_plain)
from .metrics import (MetricDomainError, MetricsReport, deo, evaluate, p_percent,
                      subgroup_risk_gap, weighted_macro_f1, zero_one_batch)
from .model import (Gradients, ModelParams, ShapeError, TrainConfig, bce_batch,
                    bce_loss, forward, forward_batch, grad, init_params,
                    predict_labels, sgd_step)
from .oracle import (DiscreteWorld, WorldError, clean_risk, lhs_expected_bfarl,
                     rhs_decomposition, sample_world, verify_decomposition,
                     weighted_group_risks)
from .synthetic import SyntheticConfig, generate

__version__ = "0.1.0"
