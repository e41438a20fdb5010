"""Deterministic stand-in embedders selected by model identifier.

Each identifier names a fixed random-projection network whose weights are
derived from the identifier string itself (sha256 to RNG seed), so the
same identifier always produces bit-identical embeddings and different
identifiers produce unrelated ones. They are inference-only stand-ins
with the conventional output widths (1024-dim visual, 128-dim audio); a
real pretrained backend can be slotted in behind the same two functions.
"""

import hashlib

import numpy as np

from .errors import DecodeError, ModelError

VISUAL_DIM = 1024
AUDIO_DIM = 128

AVAILABLE_MODELS = ("projection-v1", "projection-v2")

_GRID = 8          # visual stat blocks per axis
_BANDS = 64        # audio spectrum bands


def _weights(identifier: str, kind: str, out_dim: int, in_dim: int) -> np.ndarray:
    if identifier not in AVAILABLE_MODELS:
        raise ModelError(
            f"unknown {kind} model {identifier!r}; available: "
            f"{', '.join(AVAILABLE_MODELS)}")
    digest = hashlib.sha256(f"{kind}:{identifier}".encode()).digest()
    rng = np.random.default_rng(np.frombuffer(digest[:16], dtype=np.uint64))
    return rng.normal(size=(out_dim, in_dim)) / np.sqrt(in_dim)


def _frame_stats(frames: np.ndarray) -> np.ndarray:
    """(n, 198) block means plus channel moments, resolution independent."""
    n, h, w, _ = frames.shape
    if h < _GRID or w < _GRID:
        raise DecodeError(f"frames too small for statistics: {h}x{w}")
    x = frames.astype(np.float64) / 255.0
    rows = np.linspace(0, h, _GRID + 1, dtype=int)
    cols = np.linspace(0, w, _GRID + 1, dtype=int)
    blocks = np.empty((n, _GRID, _GRID, 3))
    for i in range(_GRID):
        for j in range(_GRID):
            blocks[:, i, j] = x[:, rows[i]:rows[i + 1], cols[j]:cols[j + 1]].mean(
                axis=(1, 2))
    moments = np.concatenate(
        [x.mean(axis=(1, 2)), x.std(axis=(1, 2))], axis=1)
    return np.concatenate([blocks.reshape(n, -1), moments], axis=1)


def _window_stats(windows: np.ndarray) -> np.ndarray:
    """(n, 66) log band energies plus level statistics per window."""
    spectrum = np.abs(np.fft.rfft(windows, axis=1))
    if spectrum.shape[1] < _BANDS:
        raise DecodeError(
            f"window of {windows.shape[1]} samples is too short for "
            f"{_BANDS} spectrum bands")
    bands = np.stack([np.log1p(chunk.mean(axis=1))
                      for chunk in np.array_split(spectrum, _BANDS, axis=1)],
                     axis=1)
    rms = np.log1p(np.sqrt(np.mean(windows ** 2, axis=1)))
    level = np.mean(np.abs(windows), axis=1)
    return np.concatenate([bands, rms[:, None], level[:, None]], axis=1)


def embed_frames(identifier: str, frames: np.ndarray) -> np.ndarray:
    """(n, h, w, 3) uint8 frames to (n, 1024) float32 embeddings."""
    stats = _frame_stats(np.asarray(frames))
    w = _weights(identifier, "visual", VISUAL_DIM, stats.shape[1])
    return (stats @ w.T).astype(np.float32)


def embed_windows(identifier: str, windows: np.ndarray) -> np.ndarray:
    """(n, samples) float windows to (n, 128) float32 embeddings."""
    stats = _window_stats(np.asarray(windows, dtype=np.float64))
    w = _weights(identifier, "audio", AUDIO_DIM, stats.shape[1])
    return (stats @ w.T).astype(np.float32)
