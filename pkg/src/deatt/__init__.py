"""Dual enhanced attention for CTR feature interaction, on a numpy gradient tape."""

from .codebook import ComboId, GatedSiameseCodebook, combo_id, estimate_joint_collision_rate
from .config import ExperimentConfig
from .datagen import Dataset, GenConfig, generate, load_csv
from .feature_space import EmbeddingTable, Example, FieldSchema, build_input
from .metrics import auc, gauc, logloss
from .model import VARIANTS, VariantConfig, build_variant, forward, train

__all__ = [
    "ComboId", "GatedSiameseCodebook", "combo_id", "estimate_joint_collision_rate",
    "ExperimentConfig", "Dataset", "GenConfig", "generate", "load_csv",
    "EmbeddingTable", "Example", "FieldSchema", "build_input",
    "auc", "gauc", "logloss", "VARIANTS", "VariantConfig", "build_variant", "forward", "train",
]

__version__ = "0.1.0"
