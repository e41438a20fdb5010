"""Offline feature extractor producing AVFS containers.

Decodes a clip (video file plus optional sibling WAV, or a one-file .npz
bundle), embeds sampled frames and audio windows with deterministic
identifier-keyed models, aligns the two streams, and writes the binary
tensor container the summarization pipeline consumes. The two packages
share only that file format.
"""

from .avfs import FORMAT_VERSION, MAGIC, file_checksum, write_tensor_container
from .clips import Clip, load_clip
from .embedders import (AUDIO_DIM, AVAILABLE_MODELS, VISUAL_DIM, embed_frames,
                        embed_windows)
from .errors import DecodeError, ExtractionError, JobError, ModelError
from .extract import ExtractionJob, ExtractionResult, audio_windows, extract

__version__ = "0.1.0"

__all__ = [
    "AUDIO_DIM",
    "AVAILABLE_MODELS",
    "Clip",
    "DecodeError",
    "ExtractionError",
    "ExtractionJob",
    "ExtractionResult",
    "FORMAT_VERSION",
    "JobError",
    "MAGIC",
    "ModelError",
    "VISUAL_DIM",
    "audio_windows",
    "embed_frames",
    "embed_windows",
    "extract",
    "file_checksum",
    "load_clip",
    "write_tensor_container",
    "__version__",
]
