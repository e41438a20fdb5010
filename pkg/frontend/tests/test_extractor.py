"""Extractor tests, including conformance against the consuming package.

The consumer (avrn) appears only in tests: the package under test talks
to it purely through bytes on disk, and these tests prove those bytes
load cleanly on the other side.
"""

import json
from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

import avrn.data as consumer
from avrn_extract import (
    AUDIO_DIM, VISUAL_DIM, Clip, DecodeError, ExtractionJob, JobError,
    ModelError, audio_windows, cli, embed_frames, embed_windows, extract,
    load_clip)


def _write_bundle(path, seconds=10.0, fps=30.0, sample_rate=16000,
                  height=24, width=32, audio="tone", seed=0):
    """Synthetic clip bundle; audio is 'tone', 'zeros', or None."""
    rng = np.random.default_rng(seed)
    n_frames = int(round(seconds * fps))
    frames = rng.integers(0, 256, size=(n_frames, height, width, 3), dtype=np.uint8)
    payload = {"frames": frames, "frame_rate": fps}
    if audio is not None:
        n = int(round(seconds * sample_rate))
        t = np.arange(n) / sample_rate
        wave = (0.4 * np.sin(2 * np.pi * 440 * t) + 0.05 * rng.normal(size=n)
                if audio == "tone" else np.zeros(n))
        payload["audio"] = wave
        payload["sample_rate"] = sample_rate
    np.savez(path, **payload)
    return Path(path)


# ---------------------------------------------------------------------------
# Clip decoding
# ---------------------------------------------------------------------------


def test_bundle_round_trip(tmp_path):
    path = _write_bundle(tmp_path / "c.npz", seconds=2.0)
    clip = load_clip(path)
    assert clip.n_frames == 60
    assert clip.frame_rate == 30.0
    assert clip.has_audio and clip.audio.size == 32000
    assert clip.sample_rate == 16000


def test_missing_clip_raises(tmp_path):
    with pytest.raises(DecodeError, match="missing"):
        load_clip(tmp_path / "nope.npz")


def test_bundle_without_frames_rejected(tmp_path):
    np.savez(tmp_path / "bad.npz", frame_rate=30.0)
    with pytest.raises(DecodeError, match="frames"):
        load_clip(tmp_path / "bad.npz")


def test_bundle_audio_needs_sample_rate(tmp_path):
    np.savez(tmp_path / "bad.npz",
             frames=np.zeros((4, 16, 16, 3), dtype=np.uint8),
             frame_rate=30.0, audio=np.zeros(100))
    with pytest.raises(DecodeError, match="sample_rate"):
        load_clip(tmp_path / "bad.npz")


def test_clip_validates_frames():
    with pytest.raises(DecodeError, match="no frames"):
        Clip(frames=np.zeros((0, 8, 8, 3), dtype=np.uint8), frame_rate=30.0)
    with pytest.raises(DecodeError, match="uint8"):
        Clip(frames=np.zeros((2, 8, 8, 3)), frame_rate=30.0)
    with pytest.raises(DecodeError, match="rate"):
        Clip(frames=np.zeros((2, 8, 8, 3), dtype=np.uint8), frame_rate=0.0)


def test_int16_wav_scales_to_unit_range(tmp_path):
    rate = 8000
    wave = (0.5 * np.sin(2 * np.pi * 220 * np.arange(8000) / rate))
    wavfile.write(tmp_path / "t.wav", rate, (wave * 32767).astype(np.int16))
    frames = np.zeros((10, 16, 16, 3), dtype=np.uint8)
    import cv2

    writer = cv2.VideoWriter(str(tmp_path / "t.avi"),
                             cv2.VideoWriter_fourcc(*"MJPG"), 10.0, (16, 16))
    assert writer.isOpened()
    for f in frames:
        writer.write(f)
    writer.release()
    clip = load_clip(tmp_path / "t.avi")
    assert clip.n_frames == 10
    assert clip.has_audio and clip.sample_rate == rate
    assert abs(float(np.max(np.abs(clip.audio))) - 0.5) < 0.01


# ---------------------------------------------------------------------------
# Embedders
# ---------------------------------------------------------------------------


def test_embeddings_are_deterministic_per_identifier():
    rng = np.random.default_rng(3)
    frames = rng.integers(0, 256, size=(5, 24, 32, 3), dtype=np.uint8)
    windows = rng.normal(size=(4, 4000)) * 0.2
    for fn, x in ((embed_frames, frames), (embed_windows, windows)):
        a = fn("projection-v1", x)
        b = fn("projection-v1", x)
        c = fn("projection-v2", x)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


def test_embedding_shapes_and_dtype():
    rng = np.random.default_rng(4)
    frames = rng.integers(0, 256, size=(7, 30, 40, 3), dtype=np.uint8)
    v = embed_frames("projection-v1", frames)
    assert v.shape == (7, VISUAL_DIM) and v.dtype == np.float32
    a = embed_windows("projection-v1", rng.normal(size=(3, 2000)))
    assert a.shape == (3, AUDIO_DIM) and a.dtype == np.float32


def test_unknown_model_identifier_raises():
    frames = np.zeros((1, 16, 16, 3), dtype=np.uint8)
    with pytest.raises(ModelError, match="unknown visual model"):
        embed_frames("resnet-50", frames)
    with pytest.raises(ModelError, match="unknown audio model"):
        embed_windows("vgg", np.zeros((1, 2000)))


def test_tiny_frames_rejected():
    with pytest.raises(DecodeError, match="too small"):
        embed_frames("projection-v1", np.zeros((1, 4, 4, 3), dtype=np.uint8))


def test_short_window_rejected():
    with pytest.raises(DecodeError, match="too short"):
        embed_windows("projection-v1", np.zeros((1, 50)))


# ---------------------------------------------------------------------------
# Windowing arithmetic
# ---------------------------------------------------------------------------


def test_audio_windows_pad_an_uncovered_tail():
    # 1.8 s at 1 kHz: full spans at 0.0 and 0.5 cover 1.5 s; the last
    # 0.3 s get one extra zero-padded span
    w = audio_windows(np.ones(1800), 1000, 1.0, 0.5)
    assert w.shape == (3, 1000)
    assert np.all(w[:2] == 1.0)
    assert np.all(w[2, :800] == 1.0) and np.all(w[2, 800:] == 0.0)


def test_audio_windows_exact_fit_has_no_padding():
    # 1.5 s fits spans at 0.0 and 0.5 exactly
    w = audio_windows(np.ones(1500), 1000, 1.0, 0.5)
    assert w.shape == (2, 1000)
    assert np.all(w == 1.0)


def test_window_counts_scale_with_duration():
    rng = np.random.default_rng(5)
    for _ in range(20):
        seconds = float(rng.uniform(1.0, 8.0))
        n = int(round(seconds * 1000))
        w = audio_windows(rng.normal(size=n), 1000, 1.0, 0.5)
        full = (n - 1000) // 500 + 1
        assert w.shape[0] in (full, full + 1)
        assert w.shape[0] * 500 + 500 >= n  # every sample covered


def test_job_validation():
    with pytest.raises(JobError, match="stride"):
        ExtractionJob(video="a", out="b", stride=0)
    with pytest.raises(JobError, match="hop"):
        ExtractionJob(video="a", out="b", hop=2.0, window=1.0)
    with pytest.raises(JobError, match="window"):
        ExtractionJob(video="a", out="b", window=0.0)
    with pytest.raises(JobError, match="short"):
        audio_windows(np.ones(100), 10, 0.01, 0.01)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


def test_extract_aligns_streams(tmp_path):
    # 10 s at 30 fps, stride 15: 20 visual rows, 19 audio spans; the
    # container keeps the aligned 19
    clip = _write_bundle(tmp_path / "c.npz")
    result = extract(ExtractionJob(video=clip, out=tmp_path / "c.avfs"))
    assert (result.n_visual, result.n_audio) == (20, 19)
    assert result.n_steps == 19 and not result.silent
    tensors = consumer.read_tensor_container(result.path)
    assert tensors["visual"].shape == (19, VISUAL_DIM)
    assert tensors["audio"].shape == (19, AUDIO_DIM)
    assert tensors["visual"].dtype == np.float32
    assert list(tensors["silent"]) == [0]


def test_thirty_second_clip_row_counts(tmp_path):
    clip = _write_bundle(tmp_path / "c.npz", seconds=30.0, sample_rate=8000)
    result = extract(ExtractionJob(video=clip, out=tmp_path / "c.avfs"))
    assert result.n_visual == 60
    assert result.n_audio == 59
    assert result.n_steps == 59


def test_truncation_when_audio_is_shorter(tmp_path):
    # audio stops 3 s early: visual 20 rows, audio 13, container 13
    path = tmp_path / "c.npz"
    bundle = dict(np.load(_write_bundle(path)))
    bundle["audio"] = bundle["audio"][:7 * 16000]
    np.savez(path, **bundle)
    result = extract(ExtractionJob(video=path, out=tmp_path / "c.avfs"))
    assert result.n_visual == 20 and result.n_audio == 13
    assert result.n_steps == 13
    tensors = consumer.read_tensor_container(result.path)
    assert tensors["visual"].shape[0] == 13


def test_silent_clip_writes_zero_block_and_flag(tmp_path):
    for kind in (None, "zeros"):
        clip = _write_bundle(tmp_path / f"c-{kind}.npz", audio=kind)
        out = tmp_path / f"c-{kind}.avfs"
        result = extract(ExtractionJob(video=clip, out=out))
        assert result.silent
        tensors = consumer.read_tensor_container(out)
        assert tensors["audio"].shape == (20, AUDIO_DIM)
        assert not np.any(tensors["audio"])
        assert list(tensors["silent"]) == [1]


def test_rerun_is_byte_identical(tmp_path):
    clip = _write_bundle(tmp_path / "c.npz", seconds=3.0)
    a = extract(ExtractionJob(video=clip, out=tmp_path / "a.avfs"))
    b = extract(ExtractionJob(video=clip, out=tmp_path / "b.avfs"))
    assert a.path.read_bytes() == b.path.read_bytes()


def test_l2_normalization_flag(tmp_path):
    clip = _write_bundle(tmp_path / "c.npz", seconds=3.0)
    result = extract(ExtractionJob(video=clip, out=tmp_path / "n.avfs",
                                   l2_normalize=True))
    tensors = consumer.read_tensor_container(result.path)
    for key in ("visual", "audio"):
        norms = np.linalg.norm(tensors[key].astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)


def test_extract_from_video_file(tmp_path):
    import cv2

    rng = np.random.default_rng(9)
    writer = cv2.VideoWriter(str(tmp_path / "v.avi"),
                             cv2.VideoWriter_fourcc(*"MJPG"), 30.0, (32, 24))
    assert writer.isOpened()
    for _ in range(90):
        writer.write(rng.integers(0, 256, size=(24, 32, 3), dtype=np.uint8))
    writer.release()
    wave = 0.3 * np.sin(2 * np.pi * 330 * np.arange(48000) / 16000)
    wavfile.write(tmp_path / "v.wav", 16000, (wave * 32767).astype(np.int16))

    result = extract(ExtractionJob(video=tmp_path / "v.avi",
                                   out=tmp_path / "v.avfs"))
    assert result.n_visual == 6 and not result.silent
    assert result.n_steps == 5


# ---------------------------------------------------------------------------
# Conformance with the consuming package
# ---------------------------------------------------------------------------


def _manifest_for(root, avfs_path, video_id, n_frames, seed=0):
    """Manifest plus a synthetic annotation wrapped around one container."""
    rng = np.random.default_rng(seed)
    ann = consumer.VideoAnnotation(
        video_id=video_id, n_frames=n_frames, frame_rate=30.0, stride=15,
        scores=[rng.uniform(size=n_frames)],
        summaries=[rng.uniform(size=n_frames) < 0.2])
    consumer.write_annotation(root / "annotations" / f"{video_id}.json", ann)
    manifest = {"format": 1, "videos": [{
        "id": video_id,
        "dataset": "clips",
        "features": avfs_path.name,
        "annotations": f"annotations/{video_id}.json",
        "frame_rate": 30.0,
        "stride": 15,
        "checksum": consumer.file_checksum(avfs_path),
    }]}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def test_ten_second_clip_loads_through_consumer(tmp_path):
    clip = _write_bundle(tmp_path / "clip-01.npz")
    result = extract(ExtractionJob(video=clip, out=tmp_path / "clip-01.avfs"))
    manifest = _manifest_for(tmp_path, result.path, "clip-01", n_frames=300)

    loaded = consumer.load_dataset(manifest)
    assert len(loaded) == 1
    feats, ann = loaded[0]
    assert feats.video_id == "clip-01"
    assert feats.n == 19
    assert feats.visual.shape == (19, VISUAL_DIM)
    assert feats.audio.shape == (19, AUDIO_DIM)
    assert not feats.silent
    assert ann.n_annotators == 1
    g = consumer.make_ground_truth(ann, n_steps=feats.n)
    assert g.shape == (19,) and np.all((g >= 0) & (g <= 1))


def test_audio_less_clip_loads_as_silent(tmp_path):
    clip = _write_bundle(tmp_path / "clip-02.npz", audio=None)
    result = extract(ExtractionJob(video=clip, out=tmp_path / "clip-02.avfs"))
    manifest = _manifest_for(tmp_path, result.path, "clip-02", n_frames=300)

    feats, _ = consumer.load_dataset(manifest)[0]
    assert feats.silent
    assert not np.any(feats.audio)
    assert feats.audio.shape == (20, AUDIO_DIM)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_cli_extracts_and_reports(tmp_path, capsys):
    clip = _write_bundle(tmp_path / "c.npz", seconds=2.0)
    out = tmp_path / "c.avfs"
    assert cli.main(["--video", str(clip), "--out", str(out)]) == 0
    assert out.exists()
    assert "3 steps" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    clip = _write_bundle(tmp_path / "c.npz", seconds=2.0)
    out = str(tmp_path / "c.avfs")
    assert cli.main(["--video", str(clip), "--out", out, "--hop", "3.0"]) == 2
    assert cli.main(["--video", str(tmp_path / "nope.npz"), "--out", out]) == 3
    assert cli.main(["--video", str(clip), "--out", out,
                     "--visual-model", "unknown"]) == 4
