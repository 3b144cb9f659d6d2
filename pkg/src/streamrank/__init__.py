"""streamrank: online feature ranking for streaming network traffic.

A linear SVM is trained incrementally by mini-batch subgradient descent;
features are ranked in real time by the magnitude of their learned weights,
and the model retrains itself whenever the windowed prediction error crosses
a threshold.  Includes a pcap feature extractor, offline feature-selection
baselines, and a synthetic drifting-stream generator.
"""

__version__ = "0.1.0"

from .engine import EngineConfig, StreamEngine, WindowReport, window_mse
from .features import FEATURE_NAMES, ExtractedRecord, FlowTable, decode_packet
from .model import (
    FeatureRanking,
    Hyperparams,
    LabeledExample,
    ModelState,
    empirical_risk,
    hinge_loss,
    init_model,
    load_checkpoint,
    predict,
    rank_features,
    save_checkpoint,
    select_top_k,
    sgd_step,
    subgradient,
)
from .synth import DriftSchedule, RegimeSpec, generate, grid_oracle, planted_concept

__all__ = [
    "__version__",
    "EngineConfig",
    "StreamEngine",
    "WindowReport",
    "window_mse",
    "FEATURE_NAMES",
    "ExtractedRecord",
    "FlowTable",
    "decode_packet",
    "FeatureRanking",
    "Hyperparams",
    "LabeledExample",
    "ModelState",
    "empirical_risk",
    "hinge_loss",
    "init_model",
    "load_checkpoint",
    "predict",
    "rank_features",
    "save_checkpoint",
    "select_top_k",
    "sgd_step",
    "subgradient",
    "DriftSchedule",
    "RegimeSpec",
    "generate",
    "grid_oracle",
    "planted_concept",
]
