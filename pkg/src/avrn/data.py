"""Feature-file ingestion, alignment, ground truth and split generation.

Per-video features travel in AVFS containers: a little-endian binary file
holding named tensors (magic "AVFS", format version, then one record per
tensor: name length u16, name bytes, dtype code u8, rank u8, dims u64,
raw values).  Records are written in sorted name order, so equal content
always produces byte-identical files.  A JSON manifest lists the videos of
one or more datasets with paths, frame rates, sampling strides and a sha256
checksum per feature file; annotations are human-inspectable JSON.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    AlignmentError,
    ConfigError,
    DataError,
    EmptySequenceError,
    NonFiniteError,
    ShapeError,
)

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "write_tensor_container",
    "read_tensor_container",
    "file_checksum",
    "FeatureSequence",
    "VideoAnnotation",
    "AlignmentReport",
    "align",
    "make_ground_truth",
    "write_features",
    "write_annotation",
    "read_annotation",
    "write_manifest",
    "load_manifest",
    "load_dataset",
    "Organization",
    "SplitPlan",
    "make_splits",
    "make_toy_dataset",
    "training_pairs",
]

MAGIC = b"AVFS"
FORMAT_VERSION = 1
ENV_DATA_ROOT = "AVRN_DATA_ROOT"

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


# ---------------------------------------------------------------------------
# Tensor container
# ---------------------------------------------------------------------------


def write_tensor_container(path, tensors: dict):
    """Write named arrays to one AVFS file (records in sorted name order)."""
    path = Path(path)
    records = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.kind == "f":
            dtype = np.dtype("<f4") if arr.dtype.itemsize <= 4 else np.dtype("<f8")
        elif arr.dtype.kind in "uib" and arr.dtype.itemsize == 1:
            dtype = np.dtype("u1")
        else:
            raise ValueError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        arr = arr.astype(dtype, copy=False)
        name_b = name.encode("utf-8")
        if not 0 < len(name_b) < 2 ** 16:
            raise ValueError(f"tensor name length out of range: {name!r}")
        head = struct.pack("<H", len(name_b)) + name_b
        head += struct.pack("<BB", _CODES[dtype], arr.ndim)
        head += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        records.append(head + arr.tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        for rec in records:
            fh.write(rec)


def _read_exact(fh, count, path, what):
    data = fh.read(count)
    if len(data) != count:
        raise DataError(f"{path}: truncated file while reading {what}")
    return data


def read_tensor_container(path) -> dict:
    """Read an AVFS file back into {name: writable ndarray}."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing feature file: {path}")
    tensors = {}
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise DataError(f"{path}: not an AVFS container (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path, "version"))
        if version > FORMAT_VERSION:
            raise DataError(f"{path}: unsupported format version {version}")
        while True:
            head = fh.read(2)
            if not head:
                break
            if len(head) != 2:
                raise DataError(f"{path}: truncated record header")
            (name_len,) = struct.unpack("<H", head)
            name = _read_exact(fh, name_len, path, "tensor name").decode("utf-8")
            code, rank = struct.unpack("<BB", _read_exact(fh, 2, path, name))
            if code not in _DTYPES:
                raise DataError(f"{path}: tensor {name!r} has unknown dtype code {code}")
            dims = struct.unpack(
                f"<{rank}Q", _read_exact(fh, 8 * rank, path, name)) if rank else ()
            dtype = _DTYPES[code]
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            raw = _read_exact(fh, count * dtype.itemsize, path, name)
            tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    return tensors


def file_checksum(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass
class FeatureSequence:
    """Aligned per-step visual and audio feature rows for one video."""

    video_id: str
    visual: np.ndarray
    audio: np.ndarray
    frame_rate: float = 30.0
    stride: int = 15
    silent: bool = False

    def __post_init__(self):
        self.visual = np.asarray(self.visual, dtype=np.float32)
        self.audio = np.asarray(self.audio, dtype=np.float32)
        if self.visual.ndim != 2 or self.audio.ndim != 2:
            raise ShapeError(
                f"{self.video_id}: features must be 2-D, got visual "
                f"{self.visual.shape}, audio {self.audio.shape}")
        if self.visual.shape[0] != self.audio.shape[0]:
            raise AlignmentError(
                f"{self.video_id}: visual has {self.visual.shape[0]} steps, "
                f"audio has {self.audio.shape[0]}")
        if self.visual.shape[0] == 0:
            raise EmptySequenceError(f"{self.video_id}: zero-length features")
        for name, block in (("visual", self.visual), ("audio", self.audio)):
            if not np.isfinite(block).all():
                raise NonFiniteError(f"{self.video_id}: non-finite {name} features")
        if self.frame_rate <= 0:
            raise DataError(f"{self.video_id}: frame_rate must be positive")
        if self.stride < 1:
            raise DataError(f"{self.video_id}: stride must be >= 1")
        zero_audio = not np.any(self.audio)
        if bool(self.silent) != zero_audio:
            state = "all zeros" if zero_audio else "not all zeros"
            raise DataError(
                f"{self.video_id}: silent flag is {self.silent} but the audio "
                f"block is {state}")
        self.silent = bool(self.silent)

    @property
    def n(self) -> int:
        return self.visual.shape[0]

    @property
    def visual_dim(self) -> int:
        return self.visual.shape[1]

    @property
    def audio_dim(self) -> int:
        return self.audio.shape[1]


@dataclass
class VideoAnnotation:
    """Frame-level human labels: score vectors and/or 0/1 summary masks."""

    video_id: str
    n_frames: int
    frame_rate: float = 30.0
    stride: int = 15
    scores: list = field(default_factory=list)
    summaries: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_frames < 1:
            raise DataError(f"{self.video_id}: n_frames must be >= 1")
        self.scores = [np.asarray(s, dtype=np.float64).reshape(-1) for s in self.scores]
        self.summaries = [np.asarray(s).reshape(-1).astype(bool) for s in self.summaries]
        for kind, vectors in (("score", self.scores), ("summary", self.summaries)):
            for i, vec in enumerate(vectors):
                if vec.size != self.n_frames:
                    raise DataError(
                        f"{self.video_id}: {kind} vector {i} has length {vec.size}, "
                        f"expected {self.n_frames}")
        for i, vec in enumerate(self.scores):
            if not np.isfinite(vec).all():
                raise NonFiniteError(f"{self.video_id}: non-finite scores (annotator {i})")

    @property
    def n_annotators(self) -> int:
        return max(len(self.scores), len(self.summaries))


# ---------------------------------------------------------------------------
# Alignment and ground truth
# ---------------------------------------------------------------------------


@dataclass
class AlignmentReport:
    n_steps: int
    visual_dropped: int
    audio_dropped: int


def align(n_visual: int, n_audio: int) -> AlignmentReport:
    """Pair visual sample i with audio window i; truncate the longer stream.

    Both streams tick at the same subsampled rate (one visual frame per
    stride, one audio window per hop), so index i of one stream corresponds
    to index i of the other; only the tail lengths can disagree.
    """
    if n_visual < 1 or n_audio < 1:
        raise EmptySequenceError(
            f"cannot align empty streams (visual {n_visual}, audio {n_audio})")
    n = min(n_visual, n_audio)
    return AlignmentReport(n, n_visual - n, n_audio - n)


def _rescale_unit(g: np.ndarray) -> np.ndarray:
    """Map scores into [0, 1] without distorting values already inside.

    The range is only widened to cover out-of-range data: lower bound
    min(0, min g), upper bound max(1, max g).  A 0/1 mask mean is unchanged;
    a 1..5 rating scale is divided by 5.
    """
    lo = min(0.0, float(g.min()))
    hi = max(1.0, float(g.max()))
    return (g - lo) / (hi - lo)


def make_ground_truth(annotation: VideoAnnotation, n_steps=None) -> np.ndarray:
    """Consolidate annotators into one per-step supervision vector in [0, 1].

    Frame-level annotator vectors (masks count as 0/1 scores) are averaged,
    rescaled into [0, 1], then reduced to the subsampled grid by taking the
    mean of each stride-long frame interval.  ``n_steps`` (the aligned
    feature length) truncates the tail; it is an error for the annotation to
    cover fewer steps than requested.
    """
    vectors = list(annotation.scores) + [s.astype(np.float64) for s in annotation.summaries]
    if not vectors:
        raise DataError(f"{annotation.video_id}: annotation has no annotators")
    per_frame = _rescale_unit(np.mean(vectors, axis=0))
    stride = annotation.stride
    n_grid = int(math.ceil(annotation.n_frames / stride))
    g = np.array([per_frame[k * stride : min((k + 1) * stride, annotation.n_frames)].mean()
                  for k in range(n_grid)])
    if n_steps is not None:
        if n_grid < n_steps:
            raise AlignmentError(
                f"{annotation.video_id}: annotation covers {n_grid} steps, "
                f"features need {n_steps}")
        g = g[:n_steps]
    return g


def training_pairs(dataset) -> list:
    """(features, ground truth) pairs for the training loop."""
    return [(feats, make_ground_truth(ann, n_steps=feats.n)) for feats, ann in dataset]


# ---------------------------------------------------------------------------
# Files: features, annotations, manifest
# ---------------------------------------------------------------------------


def write_features(path, feats: FeatureSequence):
    """Write one video's tensors (visual, audio, silent flag) to AVFS."""
    write_tensor_container(path, {
        "visual": feats.visual.astype("<f4"),
        "audio": feats.audio.astype("<f4"),
        "silent": np.asarray([1 if feats.silent else 0], dtype="u1"),
    })


def write_annotation(path, annotation: VideoAnnotation):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "video_id": annotation.video_id,
        "n_frames": annotation.n_frames,
        "frame_rate": annotation.frame_rate,
        "stride": annotation.stride,
        "scores": [[float(v) for v in s] for s in annotation.scores],
        "summaries": [[int(v) for v in s] for s in annotation.summaries],
    }
    path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def read_annotation(path) -> VideoAnnotation:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing annotation file: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed annotation JSON: {exc}") from exc
    try:
        return VideoAnnotation(
            video_id=payload["video_id"],
            n_frames=payload["n_frames"],
            frame_rate=payload.get("frame_rate", 30.0),
            stride=payload.get("stride", 15),
            scores=payload.get("scores", []),
            summaries=payload.get("summaries", []),
        )
    except KeyError as exc:
        raise DataError(f"{path}: annotation lacks required key {exc}") from exc


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    if p.is_absolute():
        return p
    root = os.environ.get(ENV_DATA_ROOT)
    if root and (Path(root) / p).exists():
        return Path(root) / p
    return base / p


def write_manifest(root, groups: dict) -> Path:
    """Write feature/annotation files plus manifest.json under ``root``.

    ``groups`` maps dataset name -> list of (FeatureSequence, VideoAnnotation).
    Returns the manifest path.  Paths in the manifest are relative to it.
    """
    root = Path(root)
    entries = []
    for dataset in sorted(groups):
        for feats, ann in groups[dataset]:
            frel = f"features/{feats.video_id}.avfs"
            arel = f"annotations/{feats.video_id}.json"
            write_features(root / frel, feats)
            write_annotation(root / arel, ann)
            entries.append({
                "id": feats.video_id,
                "dataset": dataset,
                "features": frel,
                "annotations": arel,
                "frame_rate": feats.frame_rate,
                "stride": feats.stride,
                "checksum": file_checksum(root / frel),
            })
    entries.sort(key=lambda e: e["id"])
    manifest = {"format": FORMAT_VERSION, "videos": entries}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def load_manifest(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing manifest: {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed manifest JSON: {exc}") from exc
    if not isinstance(manifest, dict) or "videos" not in manifest:
        raise DataError(f"{path}: manifest must be an object with a 'videos' list")
    seen = set()
    for entry in manifest["videos"]:
        for key in ("id", "features", "annotations"):
            if key not in entry:
                raise DataError(f"{path}: video entry lacks required key '{key}'")
        if entry["id"] in seen:
            raise DataError(f"{path}: duplicate video id {entry['id']!r}")
        seen.add(entry["id"])
    return manifest


def load_dataset(manifest_path):
    """Load every (FeatureSequence, VideoAnnotation) pair listed in a manifest.

    Verifies checksums, stream alignment and annotation coverage; every
    failure names the offending video.
    """
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent
    out = []
    for entry in manifest["videos"]:
        vid = entry["id"]
        fpath = _resolve(base, entry["features"])
        if not fpath.exists():
            raise DataError(f"{vid}: missing feature file {fpath}")
        declared = entry.get("checksum")
        if declared:
            actual = file_checksum(fpath)
            if actual != declared:
                raise DataError(
                    f"{vid}: checksum mismatch for {fpath.name}: manifest says "
                    f"{declared[:12]}…, file hashes to {actual[:12]}…")
        tensors = read_tensor_container(fpath)
        for key in ("visual", "audio"):
            if key not in tensors:
                raise DataError(f"{vid}: feature file lacks a '{key}' tensor")
        visual, audio = tensors["visual"], tensors["audio"]
        if visual.ndim != 2 or audio.ndim != 2:
            raise DataError(
                f"{vid}: feature tensors must be rank 2, got visual "
                f"{visual.shape}, audio {audio.shape}")
        if visual.shape[0] != audio.shape[0]:
            raise AlignmentError(
                f"{vid}: visual has {visual.shape[0]} steps but audio has "
                f"{audio.shape[0]}")
        if "silent" in tensors:
            silent = bool(np.any(tensors["silent"]))
        else:
            silent = not np.any(audio)
        feats = FeatureSequence(
            vid, visual=visual, audio=audio,
            frame_rate=entry.get("frame_rate", 30.0),
            stride=entry.get("stride", 15), silent=silent)
        ann = read_annotation(_resolve(base, entry["annotations"]))
        if ann.video_id != vid:
            raise DataError(
                f"{vid}: annotation file belongs to video {ann.video_id!r}")
        ann.stride = feats.stride
        n_grid = int(math.ceil(ann.n_frames / feats.stride))
        if n_grid < feats.n:
            raise AlignmentError(
                f"{vid}: annotation covers {n_grid} steps, features have {feats.n}")
        out.append((feats, ann))
    return out


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


class Organization(str, Enum):
    CANONICAL = "canonical"
    AUGMENTED = "augmented"
    TRANSFER = "transfer"


@dataclass
class SplitPlan:
    organization: Organization
    split_index: int
    train_ids: tuple
    test_ids: tuple
    seed: int

    def __post_init__(self):
        self.train_ids = tuple(self.train_ids)
        self.test_ids = tuple(self.test_ids)
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise ValueError(f"split {self.split_index}: train/test overlap {sorted(overlap)}")
        if not self.test_ids:
            raise ValueError(f"split {self.split_index}: empty test set")

    def to_dict(self):
        return {
            "organization": self.organization.value,
            "split_index": self.split_index,
            "train_ids": list(self.train_ids),
            "test_ids": list(self.test_ids),
            "seed": self.seed,
        }


N_SPLITS = 5
TEST_FRACTION = 0.2


def make_splits(datasets: dict, organization, seed: int, target=None):
    """Five deterministic split plans over {dataset name: [video ids]}.

    Canonical draws five seeded 80/20 splits within the target dataset.
    Augmented keeps those test sets and adds every auxiliary-dataset video to
    the training side.  Transfer trains on all auxiliary videos and tests on
    the whole target dataset (all five plans coincide).
    """
    organization = Organization(organization)
    if not datasets:
        raise DataError("make_splits: no datasets")
    names = sorted(datasets)
    target = names[0] if target is None else target
    if target not in datasets:
        raise ConfigError(f"target dataset {target!r} not in {names}")
    all_ids = [v for name in names for v in datasets[name]]
    if len(set(all_ids)) != len(all_ids):
        raise DataError("video ids must be unique across datasets")
    target_ids = sorted(datasets[target])
    aux_ids = sorted(v for name in names if name != target for v in datasets[name])
    if organization is not Organization.CANONICAL and not aux_ids:
        raise ConfigError(
            f"organization '{organization.value}' needs at least one auxiliary dataset")

    if organization is Organization.TRANSFER:
        plan = dict(train_ids=tuple(aux_ids), test_ids=tuple(target_ids), seed=seed)
        return [SplitPlan(organization, k, **plan) for k in range(1, N_SPLITS + 1)]

    if len(target_ids) < 2:
        raise DataError(
            f"dataset {target!r} has {len(target_ids)} videos; need >= 2 to split")
    n_test = max(1, round(TEST_FRACTION * len(target_ids)))
    plans = []
    for k in range(1, N_SPLITS + 1):
        rng = np.random.default_rng([seed, k])
        perm = rng.permutation(len(target_ids))
        test = sorted(target_ids[i] for i in perm[:n_test])
        train = sorted(target_ids[i] for i in perm[n_test:])
        if organization is Organization.AUGMENTED:
            train = sorted(train + aux_ids)
        plans.append(SplitPlan(organization, k, tuple(train), tuple(test), seed))
    return plans


# ---------------------------------------------------------------------------
# Synthetic fixtures
# ---------------------------------------------------------------------------


def make_toy_dataset(n_videos=2, n_steps=12, audio_dim=6, visual_dim=6, seed=0,
                     stride=15, frame_rate=30.0, prefix="toy", annotators=2,
                     score_noise=0.05):
    """Random videos whose importance depends on both modalities.

    The per-step target is the min-max-normalised sum of the audio and
    visual feature norms, so neither stream alone determines it.  Annotator
    0 reports it exactly (repeated per frame); further annotators add
    clipped noise.  Each annotator also marks the top ~15% of steps as a
    summary mask.
    """
    pairs = []
    for i in range(n_videos):
        rng = np.random.default_rng([seed, i])
        audio = rng.normal(size=(n_steps, audio_dim))
        visual = rng.normal(size=(n_steps, visual_dim))
        raw = np.linalg.norm(audio, axis=1) + np.linalg.norm(visual, axis=1)
        span = raw.max() - raw.min()
        g = (raw - raw.min()) / span if span > 0 else np.full(n_steps, 0.5)
        n_frames = n_steps * stride
        base = np.repeat(g, stride)
        scores, summaries = [], []
        cut = np.quantile(g, 0.85)
        step_mask = g >= cut
        if not step_mask.any():
            step_mask[int(np.argmax(g))] = True
        for a in range(annotators):
            if a == 0:
                scores.append(base.copy())
                summaries.append(np.repeat(step_mask, stride))
            else:
                noisy = np.clip(base + score_noise * rng.normal(size=n_frames), 0, 1)
                scores.append(noisy)
                shifted = g + score_noise * rng.normal(size=n_steps)
                mask = shifted >= np.quantile(shifted, 0.85)
                if not mask.any():
                    mask[int(np.argmax(shifted))] = True
                summaries.append(np.repeat(mask, stride))
        vid = f"{prefix}-v{i:02d}"
        feats = FeatureSequence(vid, visual=visual, audio=audio,
                                frame_rate=frame_rate, stride=stride, silent=False)
        ann = VideoAnnotation(vid, n_frames=n_frames, frame_rate=frame_rate,
                              stride=stride, scores=scores, summaries=summaries)
        pairs.append((feats, ann))
    return pairs
