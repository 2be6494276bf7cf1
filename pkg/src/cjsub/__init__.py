"""Subsample-then-importance-correct Bayesian inference for
Cormack-Jolly-Seber capture-recapture models with Gaussian individual
random effects on survival."""

from .data import (CaptureHistory, CompressedDataset, ParseError, StratumKey,
                   cap_multiplicity, first_last, parse_dataset, stratify)
from .model import (Design, FixedValue, ModelSpec, NormalPrior, Theta,
                    UniformPrior, param_names, theta_from_vector,
                    theta_to_vector)
from .likelihood import (cond_loglik, history_loglik, marg_loglik_quadrature,
                         never_seen_again_prob, sum_to_one_check)
from .simulate import default_releases, simulate_dataset, true_summary
from .subsample import SubsamplePlan, draw_subsample
from .mcmc import (ChainConfig, DrawSet, geweke_joint_check, prior_logpdf,
                   run_subposterior_mcmc)
from .isweights import (TotalDepletionError, TwoStepConfig,
                        WeightEstimatorConfig, WeightedDraws, compute_weights,
                        log_weight_naive, log_weight_repeated,
                        log_weight_stratified, posterior_expectation,
                        sir_resample, snis_normalize, two_step_weights)
from .combine import (SubsampleDiagnostics, combination_weights,
                      combine_expectations, combined_quantiles,
                      subsample_report, summary_table)
from .pipeline import (PipelineConfig, config_from_dict, full_data_fit,
                       load_config, robustness_audit, run_pipeline)

__version__ = "0.1.0"
