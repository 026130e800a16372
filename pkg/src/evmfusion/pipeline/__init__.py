"""Model assembly, variants, data, metrics and the training loop."""
from .config import FUSION_MODES, ModelConfig, RunConfig, TrainConfig, dump_text, from_flat, load_config, parse_text
from .data import DataError, Dataset, load_dataset, make_synthetic
from .metrics import Metrics, compute_metrics, confusion_matrix, evaluate_predictions
from .model import EVMFusion, cross_entropy, raw_features
from .optim import Adam
from .train import (TrainingDiverged, TrainState, evaluate, load_model, load_train_state, save_model,
                    save_train_state, train)
from .variants import VARIANT_NAMES, UnknownVariant, build_variant, parse_variants
