"""Adaptive audiovisual gating and the fusion recurrent layer.

The gate computes a coefficient c in (0, 1) from the two modality encodings
and blends them convexly: x_av = c * h_audio + (1 - c) * h_visual.  By
default c is a single scalar per timestep; an elementwise (per-coordinate)
gate is available as a configuration knob for ablations.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ShapeError
from .lstm import BiLstmLayer, bilstm_run, lstm_run

__all__ = ["FusionGateParams", "gate", "fuse_sequence"]


class FusionGateParams:
    """Gate maps: one row each for audio and visual (or square if elementwise)."""

    def __init__(self, w_audio, w_visual, bias, elementwise=False):
        self.w_audio = w_audio
        self.w_visual = w_visual
        self.bias = bias
        self.elementwise = bool(elementwise)
        out_dim = w_audio.value.shape[0]
        if w_visual.value.shape[0] != out_dim or bias.value.shape != (out_dim, 1):
            raise ShapeError("gate output dims of w_audio, w_visual and bias must agree")
        if w_audio.value.shape[1] != w_visual.value.shape[1]:
            raise ShapeError(
                f"gate input dims differ: audio {w_audio.value.shape}, "
                f"visual {w_visual.value.shape}")
        if not elementwise and out_dim != 1:
            raise ShapeError("scalar gate requires single-row maps")

    @property
    def input_dim(self):
        return self.w_audio.value.shape[1]

    @classmethod
    def init(cls, input_dim, rng, elementwise=False):
        out_dim = input_dim if elementwise else 1
        bound = 1.0 / np.sqrt(input_dim)
        return cls(
            ad.parameter(rng.uniform(-bound, bound, size=(out_dim, input_dim))),
            ad.parameter(rng.uniform(-bound, bound, size=(out_dim, input_dim))),
            ad.parameter(np.zeros((out_dim, 1))),
            elementwise=elementwise,
        )

    def named_parameters(self, prefix=""):
        yield f"{prefix}w_audio", self.w_audio
        yield f"{prefix}w_visual", self.w_visual
        yield f"{prefix}bias", self.bias


def gate(params: FusionGateParams, h_audio, h_visual):
    """Blend the two encodings; returns (c, x_av).

    c = sigmoid(w_audio @ h_audio + w_visual @ h_visual + bias); the fused
    vector is the convex combination c * h_audio + (1 - c) * h_visual, so
    every coordinate stays inside the envelope of the two inputs.
    """
    h_audio = ad.as_tensor(h_audio)
    h_visual = ad.as_tensor(h_visual)
    if h_audio.value.shape != h_visual.value.shape:
        raise ShapeError(
            f"gate: audio {h_audio.value.shape} and visual {h_visual.value.shape} dims differ")
    if h_audio.value.shape[0] != params.input_dim:
        raise ShapeError(
            f"gate: inputs are {h_audio.value.shape}, gate maps expect "
            f"({params.input_dim}, 1)")
    drive = ad.add(
        ad.add(ad.matmul(params.w_audio, h_audio), ad.matmul(params.w_visual, h_visual)),
        params.bias,
    )
    c = ad.sigmoid(drive)
    if params.elementwise:
        ones = ad.constant(np.ones_like(c.value))
        fused = ad.add(ad.mul(c, h_audio), ad.mul(ad.sub(ones, c), h_visual))
    else:
        one = ad.constant(np.ones((1, 1)))
        fused = ad.add(
            ad.scalar_mul(c, h_audio),
            ad.scalar_mul(ad.sub(one, c), h_visual),
        )
    return c, fused


def fuse_sequence(gate_params: FusionGateParams, fusion_layer: BiLstmLayer,
                  h_audio_seq, h_visual_seq, bidirectional=True):
    """Gate each timestep pair, then encode the fused sequence recurrently.

    Returns (gate_seq, fused_seq, encoded_seq).  With ``bidirectional=False``
    the fusion layer's forward cell alone is used (single-direction ablation).
    """
    h_audio_seq = list(h_audio_seq)
    h_visual_seq = list(h_visual_seq)
    if len(h_audio_seq) != len(h_visual_seq):
        raise ShapeError(
            f"fuse_sequence: lengths differ, audio {len(h_audio_seq)} vs "
            f"visual {len(h_visual_seq)}")
    gates, fused = [], []
    for a, v in zip(h_audio_seq, h_visual_seq):
        c, x = gate(gate_params, a, v)
        gates.append(c)
        fused.append(x)
    if bidirectional:
        encoded = bilstm_run(fusion_layer, fused)
    else:
        encoded = lstm_run(fusion_layer.forward_cell, fused)
    return gates, fused, encoded
