"""Clip loading: video files via OpenCV, bundles via .npz, audio via WAV.

Container audio tracks cannot be demuxed with the libraries available
here, so a video file's audio is read from a sibling ``<stem>.wav`` when
one exists; a clip without any audio source decodes with ``audio=None``.
``.npz`` bundles carry everything in one file (keys: frames, frame_rate,
and optionally audio, sample_rate), which keeps tests codec-independent.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DecodeError


@dataclass
class Clip:
    """Decoded media: frames (n, h, w, 3) uint8, mono waveform in [-1, 1]."""

    frames: np.ndarray
    frame_rate: float
    audio: np.ndarray | None = None
    sample_rate: int | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise DecodeError(
                f"frames must be (n, h, w, 3), got {self.frames.shape}")
        if self.frames.shape[0] == 0:
            raise DecodeError("clip has no frames")
        if self.frames.dtype != np.uint8:
            raise DecodeError(f"frames must be uint8, got {self.frames.dtype}")
        if not self.frame_rate > 0:
            raise DecodeError(f"frame rate must be positive, got {self.frame_rate}")
        if self.audio is not None:
            self.audio = np.asarray(self.audio, dtype=np.float64).reshape(-1)
            if self.sample_rate is None or self.sample_rate <= 0:
                raise DecodeError("audio present but sample rate missing")

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def has_audio(self) -> bool:
        return self.audio is not None and self.audio.size > 0


def _to_float_waveform(data: np.ndarray) -> np.ndarray:
    """Mono float64 in [-1, 1] from whatever wavfile returned."""
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype.kind == "i":
        scale = float(np.iinfo(data.dtype).max) + 1.0
        return data.astype(np.float64) / scale
    if data.dtype.kind == "u":
        scale = (float(np.iinfo(data.dtype).max) + 1.0) / 2.0
        return data.astype(np.float64) / scale - 1.0
    return data.astype(np.float64)


def _load_wav(path: Path):
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise DecodeError(f"{path}: unreadable WAV: {exc}") from exc
    return _to_float_waveform(data), int(rate)


def _load_npz(path: Path) -> Clip:
    try:
        bundle = np.load(path)
    except Exception as exc:
        raise DecodeError(f"{path}: unreadable bundle: {exc}") from exc
    if "frames" not in bundle or "frame_rate" not in bundle:
        raise DecodeError(f"{path}: bundle needs 'frames' and 'frame_rate'")
    audio = bundle["audio"].reshape(-1) if "audio" in bundle else None
    rate = int(bundle["sample_rate"]) if "sample_rate" in bundle else None
    if audio is not None and rate is None:
        raise DecodeError(f"{path}: bundle has audio but no 'sample_rate'")
    return Clip(frames=bundle["frames"],
                frame_rate=float(bundle["frame_rate"]),
                audio=audio, sample_rate=rate)


def _load_video(path: Path) -> Clip:
    import cv2

    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DecodeError(f"{path}: OpenCV cannot open this file")
    rate = cap.get(cv2.CAP_PROP_FPS)
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frames.append(frame[:, :, ::-1].copy())  # BGR to RGB
    cap.release()
    if not frames:
        raise DecodeError(f"{path}: no decodable frames")
    audio, sample_rate = None, None
    wav = path.with_suffix(".wav")
    if wav.exists():
        audio, sample_rate = _load_wav(wav)
    return Clip(frames=np.stack(frames), frame_rate=float(rate) if rate > 0 else 30.0,
                audio=audio, sample_rate=sample_rate)


def load_clip(path) -> Clip:
    """Decode a clip from a video file or an .npz bundle."""
    path = Path(path)
    if not path.exists():
        raise DecodeError(f"missing clip: {path}")
    if path.suffix.lower() == ".npz":
        return _load_npz(path)
    return _load_video(path)
