"""Sparse model selection for incomplete, high-dimensional panel data.

The pipeline combines tree-based chained-equation imputation, unit-block
bootstrap random lasso on within-transformed data, and stability selection
with a BIC-tuned threshold, plus pooled and single-imputation baselines and
a synthetic-panel oracle for verification.
"""

from .panel import (PanelDataset, Variable, WindowCandidate, DemeanedPanel,
                    PanelError, select_balanced_window, extract_window,
                    within_transform, standardize, recover_fixed_effects)
from .trees import (DecisionTree, TreeControls, TreeError, fit_regression_tree,
                    fit_classification_tree, predict_class, predict_label)
from .reem import (LmmFit, ReemModel, ReemError, fit_lmm_on_leaves, fit_reem,
                   predict_reem)
from .impute import (ImputationConfig, ImputedDataset, ImputationError,
                     placeholder_impute, run_mice, correlation_diagnostics,
                     imputed_to_wide)
from .lasso import (LassoSolution, LambdaGrid, CriterionValue, LassoError,
                    lasso_fit, lasso_path, lambda_max, pooled_lambda_max,
                    build_lambda_grid, post_lasso_ols, information_criterion,
                    full_model_sigma2, select_lambda_oc, kkt_violation)
from .pipeline import (PipelineConfig, PipelineError, ImportanceVector,
                       StabilityResult, AmirlReport, block_bootstrap,
                       resample_units, resample_rows, compute_importance,
                       sample_candidates, initial_estimates,
                       stability_probabilities, select_threshold,
                       amirl_estimates, run_pipeline, prepare_design,
                       step2_estimates)
from .inference import (FitStats, CoefficientInterval, InferenceError,
                        fit_statistics, bca_interval)
from .datagen import ScenarioSpec, GroundTruth, ScenarioError, generate

__version__ = "0.1.0"
