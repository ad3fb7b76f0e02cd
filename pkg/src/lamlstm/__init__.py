"""Windowed Bi-LSTM "looking at me" classifier with flip TTA and median smoothing.

Pure numpy. The pieces map onto the pipeline stages:

``lamlstm.data``       feature-track files, windows, flip stream, synthetic data
``lamlstm.model``      projection + Bi-LSTM + 4-layer head forward pass
``lamlstm.training``   cross-entropy, backprop, Adam, training loop, checkpoints
``lamlstm.inference``  per-track logits, flip fusion, ensembling, median smoothing
``lamlstm.metrics``    average precision and top-1 accuracy
``lamlstm.cli``        ``lamlstm`` command
"""

from .data import (
    FeatureTrack,
    SyntheticSpec,
    WindowSample,
    flip_stream,
    generate_synthetic,
    make_windows,
    read_feature_track,
    write_feature_track,
)
from .inference import (
    LogitSeries,
    ScoreSeries,
    ensemble_mean,
    median_smooth,
    predict_track,
    tta_fuse,
)
from .metrics import Metrics, average_precision, evaluate, top1_accuracy
from .model import ModelConfig, ModelParams, forward, init_params
from .numerics import Rng, affine, softmax
from .training import (
    AdamState,
    TrainConfig,
    adam_step,
    backward,
    cross_entropy,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
