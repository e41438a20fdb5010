"""Audiovisual recurrent video summarization.

Two feature streams (audio, visual) run through bidirectional LSTM encoders,
a learned gate fuses them, a fusion BiLSTM and a self-attention layer add
temporal and global context, and a sigmoid head scores each step's
importance.  Shot boundaries come from kernel temporal segmentation and the
summary is the knapsack-optimal subset of shots under a length budget.

Subpackages by concern:

- ``autodiff``: reverse-mode tape over float64 column vectors
- ``lstm``: LSTM cells and bidirectional sequence encoders
- ``fusion``: the two-stream gate and fused temporal encoder
- ``attention``: order-independent self-attention
- ``model``: variants, forward pass, Adam training loop, checkpoints
- ``segmentation``: kernel temporal segmentation and knapsack selection
- ``evaluation``: precision/recall/F and rank correlations
- ``data``: tensor container files, manifests, splits, toy data
- ``cli``: the ``avrn`` command
"""

from . import attention, autodiff, data, evaluation, fusion, lstm, model, segmentation
from .errors import (
    AlignmentError,
    AvrnError,
    ConfigError,
    DataError,
    DivergenceError,
    EmptySequenceError,
    NonFiniteError,
    ShapeError,
)
from .model import (
    AvrnParams,
    ImportanceCurve,
    ModelVariant,
    TrainConfig,
    TrainingTrace,
    forward,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "AvrnError",
    "AvrnParams",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "EmptySequenceError",
    "ImportanceCurve",
    "ModelVariant",
    "NonFiniteError",
    "ShapeError",
    "TrainConfig",
    "TrainingTrace",
    "attention",
    "autodiff",
    "data",
    "evaluation",
    "forward",
    "fusion",
    "load_checkpoint",
    "lstm",
    "model",
    "save_checkpoint",
    "segmentation",
    "train",
]
