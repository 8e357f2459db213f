"""Weakly supervised multi-instance log anomaly detection and localization.

Logs are ingested as labeled lines, variable-masked, embedded with a
deterministic feature hash, grouped into fixed-width bags, and scored by an
attention-MIL network with learnable prototypes. Training needs only
bag-level labels; localization picks the key instances inside positive bags
and checks them counterfactually by zeroing them out and re-scoring.
"""

from .bagging import Bag, BagDataset, block_bags, sliding_bags, split_dataset
from .config import RunConfig, load_config
from .errors import LogMilpError
from .evaluation import (
    MetricsReport,
    evaluate,
    loc_at_k,
    localize,
    prf_at_threshold,
    roc_auc,
    select_threshold,
    success_rate,
)
from .ingest import IngestResult, embed_tokens, ingest_file, ingest_lines, mask_variables
from .model import LogMilpModel, ModelConfig, load_checkpoint, save_checkpoint
from .synthgen import SynthSpec, generate, oracle_bags
from .training import TrainConfig, fit, score_dataset

__version__ = "0.1.0"

__all__ = [
    "Bag",
    "BagDataset",
    "IngestResult",
    "LogMilpError",
    "LogMilpModel",
    "MetricsReport",
    "ModelConfig",
    "RunConfig",
    "SynthSpec",
    "TrainConfig",
    "block_bags",
    "embed_tokens",
    "evaluate",
    "fit",
    "generate",
    "ingest_file",
    "ingest_lines",
    "load_checkpoint",
    "load_config",
    "loc_at_k",
    "localize",
    "mask_variables",
    "oracle_bags",
    "prf_at_threshold",
    "roc_auc",
    "save_checkpoint",
    "score_dataset",
    "select_threshold",
    "sliding_bags",
    "split_dataset",
    "success_rate",
]
