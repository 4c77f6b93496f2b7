"""robustsel: feature selection that is accurate and adversarially robust.

A deep-Q agent pops features from six metric-ordered queues and directly
optimizes an attack-agnostic 0-1 robust loss. The package ships the
scoring metrics, FGSM/PGD attacks, baselines, an evaluation harness, and
a CLI that renders report figures next to the delimited output.
"""

__version__ = "0.1.0"

from .agent import AgentConfig, QNet, run_training
from .attacks import AttackConfig, calibrate_sigma, fgsm, gaussian_corrupt, pgd, transfer_pair_attack
from .baselines import BaselineResult, lasso_select, random_select, topk_metric_select
from .data import Dataset, SyntheticSpec, allocate, generate_synthetic, load_csv
from .env import EnvConfig, FeatureSelectionEnv, encode_state
from .harness import evaluate_features, ig_removal_curve, metric_sweep, prepare_attack_suite
from .nn import MlpModel, TrainConfig, forward, input_gradient, mlp_init, train
from .robust_loss import (
    DatasetEvaluator,
    EvalConfig,
    FeatureMask,
    RobustLossReport,
    TabularEvaluator,
    evaluate_mask,
    gaussian_error,
    natural_error,
)
from .scoring import (
    FeatureQueues,
    ForestConfig,
    ScoreTable,
    build_queues,
    combined_scores,
    compute_score_table,
    f_statistic,
    integrated_gradients,
    mutual_info_bits,
    robust_score_vector,
    tree_importance_scores,
)

__all__ = [name for name in dir() if not name.startswith("_")]
