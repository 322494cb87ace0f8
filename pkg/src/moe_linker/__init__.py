"""Multi-level mixture-of-experts multimodal entity linking."""
from .config import ABLATIONS, SEARCH_SPACE, RunConfig
from .data import (DatasetSplit, EntityCatalog, EntityRecord, MentionRecord, build_entity_catalog,
                   load_dataset, subsample_low_resource, validate_dataset)
from .errors import LinkerError
from .evaluation import compute_metrics, evaluate_split
from .model import MatchingModel, build_model
from .training import train

__all__ = [
    "ABLATIONS", "SEARCH_SPACE", "RunConfig", "DatasetSplit", "EntityCatalog", "EntityRecord",
    "MentionRecord", "build_entity_catalog", "load_dataset", "subsample_low_resource",
    "validate_dataset", "LinkerError", "compute_metrics", "evaluate_split", "MatchingModel",
    "build_model", "train",
]
__version__ = "0.1.0"
