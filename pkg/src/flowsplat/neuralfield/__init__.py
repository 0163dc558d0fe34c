from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .coords import (embed_dim, normalize_coords, normalize_dual, positional_embedding,
                     positional_embedding_dual, sample_feature, sample_grid_dual)
from .model import ConditionedField, FieldConfig, HintMap, VelocityFieldModel

__all__ = ["CheckpointError", "ConditionedField", "FieldConfig", "HintMap", "VelocityFieldModel",
           "embed_dim", "load_checkpoint", "normalize_coords", "normalize_dual",
           "positional_embedding", "positional_embedding_dual", "sample_feature",
           "sample_grid_dual", "save_checkpoint"]
