"""Turn one decoded clip into an aligned AVFS feature container.

Visual embeddings are taken every ``stride`` frames starting at frame 0.
Audio embeddings cover ``window``-second spans placed every ``hop``
seconds from the start; when the full spans leave a tail of samples
uncovered, one more zero-padded span is added for them. Both streams tick at what is meant to be
the same rate, so row i of one corresponds to row i of the other and only
the tail lengths can disagree; the longer stream is truncated before
writing. A clip with no usable audio gets an all-zero audio block and the
silent flag.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import avfs, embedders
from .clips import load_clip
from .errors import JobError


@dataclass
class ExtractionJob:
    """Everything needed to produce one feature container."""

    video: Path
    out: Path
    stride: int = 15
    window: float = 1.0
    hop: float = 0.5
    visual_model: str = "projection-v1"
    audio_model: str = "projection-v1"
    l2_normalize: bool = False

    def __post_init__(self):
        self.video = Path(self.video)
        self.out = Path(self.out)
        if int(self.stride) != self.stride or self.stride < 1:
            raise JobError(f"stride must be a positive integer, got {self.stride}")
        self.stride = int(self.stride)
        if not self.window > 0:
            raise JobError(f"window must be positive, got {self.window}")
        if not 0 < self.hop <= self.window:
            raise JobError(
                f"hop must be in (0, window]; got hop {self.hop}, "
                f"window {self.window}")


@dataclass
class ExtractionResult:
    path: Path
    n_steps: int
    n_visual: int
    n_audio: int
    silent: bool


def audio_windows(waveform: np.ndarray, sample_rate: int,
                  window: float, hop: float) -> np.ndarray:
    """(n, samples) matrix of spans; a partial final span is zero-padded."""
    waveform = np.asarray(waveform, dtype=np.float64).reshape(-1)
    spw = int(round(window * sample_rate))
    hop_s = int(round(hop * sample_rate))
    if spw < 1 or hop_s < 1:
        raise JobError(
            f"window/hop too short at {sample_rate} Hz: "
            f"{spw} and {hop_s} samples")
    total = waveform.size
    k = 0
    while k * hop_s + spw <= total:
        k += 1
    starts = [i * hop_s for i in range(k)]
    covered = (k - 1) * hop_s + spw if k else 0
    if covered < total:  # tail no full span reaches
        starts.append(k * hop_s)
    out = np.zeros((len(starts), spw))
    for i, s in enumerate(starts):
        chunk = waveform[s:s + spw]
        out[i, :chunk.size] = chunk
    return out


def _l2_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def extract(job: ExtractionJob) -> ExtractionResult:
    """Decode, embed, align, and write one AVFS container."""
    clip = load_clip(job.video)
    indices = np.arange(0, clip.n_frames, job.stride)
    visual = embedders.embed_frames(job.visual_model, clip.frames[indices])

    silent = not clip.has_audio or not np.any(clip.audio)
    if silent:
        audio = np.zeros((visual.shape[0], embedders.AUDIO_DIM), dtype=np.float32)
    else:
        windows = audio_windows(clip.audio, clip.sample_rate, job.window, job.hop)
        audio = embedders.embed_windows(job.audio_model, windows)

    n_visual, n_audio = visual.shape[0], audio.shape[0]
    n = min(n_visual, n_audio)
    visual, audio = visual[:n], audio[:n]
    if job.l2_normalize:
        visual, audio = _l2_rows(visual), _l2_rows(audio)

    avfs.write_tensor_container(job.out, {
        "visual": visual.astype("<f4"),
        "audio": audio.astype("<f4"),
        "silent": np.asarray([1 if silent else 0], dtype="u1"),
    })
    return ExtractionResult(job.out, n, n_visual, n_audio, silent)
