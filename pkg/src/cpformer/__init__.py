"""Concept-bottleneck, physics-regularised Transformer forecaster in plain numpy."""

from .concepts import CONCEPT_NAMES, concept_loss, soft_target_matrix, soft_targets
from .data import load_dataset, load_series, make_samples, prepare
from .encoder import EncoderConfig, causal_mask, encode
from .errors import ConfigError, CPformerError, DataError, EvaluationError, NumericError, TrainingError
from .evaluation import ablation_run, evaluate, noise_robustness, persistence_baseline, rollout_forecast
from .model import ModelConfig, init_params, predict
from .physics import PhysicsWeights, residuals
from .training import TrainConfig, check_ramp, joint_loss, train

__version__ = "0.1.0"
