"""Importance-scoring model: two recurrent encoder streams (audio, visual),
a convex fusion gate, a fusion recurrent layer, global self-attention, and a
sigmoid head that emits one importance score per timestep.

Seven variants share one parameter container.  Each variant reads a subset
of the parameter groups; groups it never touches receive exactly zero
gradient, so ablations can be trained from a common allocation.  The head
weight is stored as one row block per input stage (fused vector, fusion
encoding, attention context, raw stream encodings) rather than a single
concatenated row: dropping a stage is then exactly equivalent to zeroing its
block, which keeps ablation outputs bit-comparable against the full model.

Training is plain stochastic Adam, one video per step, with mean-squared
error against the per-step ground-truth importance curve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, attend_all
from .errors import (
    AlignmentError,
    ConfigError,
    DataError,
    DivergenceError,
    EmptySequenceError,
    NonFiniteError,
    ShapeError,
)
from .fusion import FusionGateParams, fuse_sequence
from .lstm import BiLstmLayer, bilstm_run, lstm_run

__all__ = [
    "ModelVariant",
    "HeadParams",
    "AvrnParams",
    "ImportanceCurve",
    "TrainConfig",
    "TrainingTrace",
    "AdamState",
    "forward",
    "ForwardResult",
    "loss",
    "loss_node",
    "training_loss_node",
    "train",
    "learning_rate_at",
    "clip_gradients",
    "save_checkpoint",
    "load_checkpoint",
]


class ModelVariant(str, Enum):
    """Which stages run and which head blocks are read."""

    FULL = "full"
    AUDIO_ONLY = "audio-only"
    VISUAL_ONLY = "visual-only"
    TWO_STREAM = "two-stream"
    FUSION_ONLY = "fusion-only"
    NO_ATTENTION = "no-attention"
    SINGLE_DIRECTION = "single-direction"


class HeadParams:
    """Per-stage row blocks of the scoring head, all of width ``width``.

    w_fused reads the gated fusion vector, w_temporal the fusion-layer
    encoding, w_global the attention context, and w_audio / w_visual the raw
    stream encodings used by the stream-only variants.
    """

    BLOCKS = ("w_fused", "w_temporal", "w_global", "w_audio", "w_visual")

    def __init__(self, w_fused, w_temporal, w_global, w_audio, w_visual, bias):
        self.w_fused = w_fused
        self.w_temporal = w_temporal
        self.w_global = w_global
        self.w_audio = w_audio
        self.w_visual = w_visual
        self.bias = bias
        width = w_fused.value.shape[1]
        for name in self.BLOCKS:
            if getattr(self, name).value.shape != (1, width):
                raise ShapeError(
                    f"head block {name} is {getattr(self, name).value.shape}, "
                    f"expected (1, {width})")
        if bias.value.shape != (1, 1):
            raise ShapeError(f"head bias must be (1, 1), got {bias.value.shape}")

    @property
    def width(self):
        return self.w_fused.value.shape[1]

    @classmethod
    def init(cls, width, rng):
        bound = 1.0 / np.sqrt(width)
        blocks = [ad.parameter(rng.uniform(-bound, bound, size=(1, width)))
                  for _ in cls.BLOCKS]
        return cls(*blocks, ad.parameter(np.zeros((1, 1))))

    def named_parameters(self, prefix=""):
        for name in self.BLOCKS:
            yield f"{prefix}{name}", getattr(self, name)
        yield f"{prefix}bias", self.bias


class AvrnParams:
    """All trainable groups, allocated once and shared by every variant.

    ``single_direction`` halves the inner stage width: forward-only scans
    produce hidden_dim-wide encodings instead of 2*hidden_dim, and the gate,
    fusion layer, attention and head are sized to match.  A container built
    one way cannot run the other family of variants (checked in forward).
    """

    def __init__(self, audio_stream, visual_stream, gate, fusion_layer, attn,
                 head, single_direction=False):
        self.audio_stream = audio_stream
        self.visual_stream = visual_stream
        self.gate = gate
        self.fusion_layer = fusion_layer
        self.attn = attn
        self.head = head
        self.single_direction = bool(single_direction)
        hidden = audio_stream.hidden_dim
        if visual_stream.hidden_dim != hidden or fusion_layer.hidden_dim != hidden:
            raise ConfigError(
                "audio, visual and fusion layers must share one hidden dim, got "
                f"{audio_stream.hidden_dim}/{visual_stream.hidden_dim}/"
                f"{fusion_layer.hidden_dim}")
        width = hidden if self.single_direction else 2 * hidden
        mismatched = {
            "gate": gate.input_dim,
            "fusion layer input": fusion_layer.input_dim,
            "attention": attn.dim,
            "head": head.width,
        }
        for label, got in mismatched.items():
            if got != width:
                raise ConfigError(
                    f"{label} width {got} does not match stage width {width}")

    @property
    def audio_dim(self):
        return self.audio_stream.input_dim

    @property
    def visual_dim(self):
        return self.visual_stream.input_dim

    @property
    def hidden_dim(self):
        return self.audio_stream.hidden_dim

    @property
    def stage_width(self):
        """Width of the fused vector, fusion encoding and attention context."""
        return self.gate.input_dim

    @classmethod
    def init(cls, audio_dim, visual_dim, hidden_dim, rng, single_direction=False,
             elementwise_gate=False, scale_logits=False, forget_bias=1.0):
        width = hidden_dim if single_direction else 2 * hidden_dim
        return cls(
            BiLstmLayer.init(audio_dim, hidden_dim, rng, forget_bias),
            BiLstmLayer.init(visual_dim, hidden_dim, rng, forget_bias),
            FusionGateParams.init(width, rng, elementwise=elementwise_gate),
            BiLstmLayer.init(width, hidden_dim, rng, forget_bias),
            AttentionParams.init(width, rng, scale_logits=scale_logits),
            HeadParams.init(width, rng),
            single_direction=single_direction,
        )

    def named_parameters(self):
        yield from self.audio_stream.named_parameters("audio.")
        yield from self.visual_stream.named_parameters("visual.")
        yield from self.gate.named_parameters("gate.")
        yield from self.fusion_layer.named_parameters("fusion.")
        yield from self.attn.named_parameters("attn.")
        yield from self.head.named_parameters("head.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def config_dict(self):
        """Allocation arguments needed to rebuild an identical container."""
        return {
            "audio_dim": self.audio_dim,
            "visual_dim": self.visual_dim,
            "hidden_dim": self.hidden_dim,
            "single_direction": self.single_direction,
            "elementwise_gate": self.gate.elementwise,
            "scale_logits": self.attn.scale_logits,
        }


@dataclass
class ImportanceCurve:
    """Predicted scores p and ground truth g over one video's timesteps.

    Predictions come from a sigmoid, so they live in (0, 1); the closed
    endpoints are tolerated because extreme drives saturate in float64.
    """

    p: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64).reshape(-1)
        self.g = np.asarray(self.g, dtype=np.float64).reshape(-1)
        if self.p.size != self.g.size:
            raise ShapeError(
                f"curve lengths differ: p has {self.p.size}, g has {self.g.size}")
        if self.p.size == 0:
            raise EmptySequenceError("empty importance curve")
        for name, vec in (("p", self.p), ("g", self.g)):
            if not np.isfinite(vec).all():
                raise NonFiniteError(f"non-finite entries in {name}")
            if vec.min() < 0.0 or vec.max() > 1.0:
                raise ValueError(f"{name} entries must lie in [0, 1]")

    def __len__(self):
        return self.p.size


def loss(curve: ImportanceCurve) -> float:
    """Mean squared error (1/n) * sum((p - g)^2)."""
    d = curve.p - curve.g
    return float(np.mean(d * d))


def loss_node(p_nodes, g):
    """Tape node for the mean squared error of per-step score nodes vs g."""
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    if len(p_nodes) != g.size:
        raise ShapeError(f"loss: {len(p_nodes)} predictions vs {g.size} targets")
    p_row = ad.concat_cols(p_nodes)
    diff = ad.sub(p_row, ad.constant(g.reshape(1, -1)))
    return ad.smul(ad.sum_all(ad.mul(diff, diff)), 1.0 / g.size)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


@dataclass
class ForwardGraph:
    """Tape nodes of one forward pass (kept alive for backward)."""

    p_nodes: list
    gate_nodes: list | None = None
    fused_nodes: list | None = None
    encoded_nodes: list | None = None
    context_nodes: list | None = None
    attention: np.ndarray | None = None


@dataclass
class ForwardResult:
    """Plain-array view of a forward pass."""

    p: np.ndarray
    gates: np.ndarray | None = None
    fused: np.ndarray | None = None
    encoded: np.ndarray | None = None
    contexts: np.ndarray | None = None
    attention: np.ndarray | None = None


def _split_features(feats):
    """Accept a FeatureSequence-like object or an (audio, visual) pair."""
    if hasattr(feats, "audio") and hasattr(feats, "visual"):
        audio, visual = feats.audio, feats.visual
    else:
        audio, visual = feats
    audio = np.asarray(audio, dtype=np.float64)
    visual = np.asarray(visual, dtype=np.float64)
    if audio.ndim != 2 or visual.ndim != 2:
        raise ShapeError(
            f"features must be (steps, dim) matrices, got audio {audio.shape}, "
            f"visual {visual.shape}")
    if audio.shape[0] != visual.shape[0]:
        raise AlignmentError(
            f"misaligned streams: audio has {audio.shape[0]} steps, "
            f"visual has {visual.shape[0]}")
    if audio.shape[0] == 0:
        raise EmptySequenceError("zero-length feature sequence")
    return audio, visual


def _check_dims(params: AvrnParams, variant: ModelVariant, audio, visual):
    single = variant is ModelVariant.SINGLE_DIRECTION
    if single != params.single_direction:
        have = "single-direction" if params.single_direction else "bidirectional"
        raise ConfigError(
            f"parameters were allocated {have}; variant '{variant.value}' needs "
            f"the opposite stage width")
    if variant is ModelVariant.FUSION_ONLY:
        if audio.shape[1] != params.stage_width or visual.shape[1] != params.stage_width:
            raise ConfigError(
                "fusion-only gates raw features, so both feature dims must equal "
                f"the gate width {params.stage_width}; got audio {audio.shape[1]}, "
                f"visual {visual.shape[1]}")
        return
    if variant is not ModelVariant.VISUAL_ONLY and audio.shape[1] != params.audio_dim:
        raise ConfigError(
            f"audio features have dim {audio.shape[1]}, encoder expects {params.audio_dim}")
    if variant is not ModelVariant.AUDIO_ONLY and visual.shape[1] != params.visual_dim:
        raise ConfigError(
            f"visual features have dim {visual.shape[1]}, encoder expects {params.visual_dim}")


def _constants(rows: np.ndarray):
    return [ad.constant(rows[t].reshape(-1, 1)) for t in range(rows.shape[0])]


def _run_stream(layer, xs, bidirectional):
    if bidirectional:
        return bilstm_run(layer, xs)
    return lstm_run(layer.forward_cell, xs)


def _forward_graph(params: AvrnParams, variant: ModelVariant, feats) -> ForwardGraph:
    audio, visual = _split_features(feats)
    _check_dims(params, variant, audio, visual)
    head = params.head
    bidir = variant is not ModelVariant.SINGLE_DIRECTION

    if variant is ModelVariant.AUDIO_ONLY:
        h_a = _run_stream(params.audio_stream, _constants(audio), True)
        drives = [ad.add(ad.matmul(head.w_audio, h), head.bias) for h in h_a]
        return ForwardGraph([ad.sigmoid(d) for d in drives])

    if variant is ModelVariant.VISUAL_ONLY:
        h_v = _run_stream(params.visual_stream, _constants(visual), True)
        drives = [ad.add(ad.matmul(head.w_visual, h), head.bias) for h in h_v]
        return ForwardGraph([ad.sigmoid(d) for d in drives])

    if variant is ModelVariant.TWO_STREAM:
        h_a = _run_stream(params.audio_stream, _constants(audio), True)
        h_v = _run_stream(params.visual_stream, _constants(visual), True)
        drives = [
            ad.add(ad.add(ad.matmul(head.w_audio, a), ad.matmul(head.w_visual, v)),
                   head.bias)
            for a, v in zip(h_a, h_v)
        ]
        return ForwardGraph([ad.sigmoid(d) for d in drives])

    if variant is ModelVariant.FUSION_ONLY:
        gates, fused, encoded = fuse_sequence(
            params.gate, params.fusion_layer, _constants(audio), _constants(visual))
        drives = [ad.add(ad.matmul(head.w_temporal, h), head.bias) for h in encoded]
        return ForwardGraph([ad.sigmoid(d) for d in drives],
                            gate_nodes=gates, fused_nodes=fused, encoded_nodes=encoded)

    # full, no-attention, single-direction: the complete two-stream pipeline
    h_a = _run_stream(params.audio_stream, _constants(audio), bidir)
    h_v = _run_stream(params.visual_stream, _constants(visual), bidir)
    gates, fused, encoded = fuse_sequence(
        params.gate, params.fusion_layer, h_a, h_v, bidirectional=bidir)
    bases = [
        ad.add(ad.matmul(head.w_fused, x), ad.matmul(head.w_temporal, h))
        for x, h in zip(fused, encoded)
    ]
    contexts, attention = None, None
    if variant is ModelVariant.NO_ATTENTION:
        drives = [ad.add(b, head.bias) for b in bases]
    else:
        contexts, attention = attend_all(params.attn, fused)
        drives = [
            ad.add(ad.add(b, ad.matmul(head.w_global, v)), head.bias)
            for b, v in zip(bases, contexts)
        ]
    return ForwardGraph([ad.sigmoid(d) for d in drives],
                        gate_nodes=gates, fused_nodes=fused,
                        encoded_nodes=encoded, context_nodes=contexts,
                        attention=attention)


def training_loss_node(params: AvrnParams, variant: ModelVariant, feats, g):
    """Build the full forward graph and return its scalar loss node.

    Calling backward on the result accumulates gradients into the parameter
    tensors; this is the entry point the gradient checker differentiates.
    """
    graph = _forward_graph(params, variant, feats)
    return loss_node(graph.p_nodes, g)


def _cols(nodes):
    if nodes is None:
        return None
    return np.concatenate([n.value for n in nodes], axis=1)


def forward(params: AvrnParams, variant: ModelVariant, feats) -> ForwardResult:
    """Score every timestep; pure function of (params, variant, feats).

    Returns per-step scores in (0, 1) plus the intermediate stage values the
    variant produced (columns are timesteps); stages a variant skips are None.
    """
    graph = _forward_graph(params, variant, feats)
    return ForwardResult(
        p=np.array([n.value[0, 0] for n in graph.p_nodes]),
        gates=_cols(graph.gate_nodes),
        fused=_cols(graph.fused_nodes),
        encoded=_cols(graph.encoded_nodes),
        contexts=_cols(graph.context_nodes),
        attention=graph.attention,
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    decay_rate: float = 0.1
    decay_step: int = 30
    max_epochs: int = 60
    hidden_dim: int = 256
    seed: int = 0
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 < self.decay_rate <= 1:
            raise ConfigError(f"decay_rate must be in (0, 1], got {self.decay_rate}")
        if self.decay_step < 1:
            raise ConfigError(f"decay_step must be >= 1, got {self.decay_step}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive or None, got {self.clip_norm}")

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate,
            "decay_rate": self.decay_rate,
            "decay_step": self.decay_step,
            "max_epochs": self.max_epochs,
            "hidden_dim": self.hidden_dim,
            "seed": self.seed,
            "clip_norm": self.clip_norm,
        }


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    """Step decay: multiply by decay_rate once per decay_step epochs."""
    return cfg.learning_rate * cfg.decay_rate ** (epoch // cfg.decay_step)


class AdamState:
    """Adam moment buffers over a list of (name, tensor) pairs."""

    def __init__(self, named, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named = list(named)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(t.value) for _, t in self.named]
        self.v = [np.zeros_like(t.value) for _, t in self.named]

    def step(self, lr: float):
        """Apply one update from the current ``grad`` buffers."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for (name, p), m, v in zip(self.named, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_gradients(named, max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float(np.sum(t.grad * t.grad)) for _, t in named)))
    if total > max_norm > 0:
        scale = max_norm / total
        for _, t in named:
            t.grad *= scale
    return total


@dataclass
class TrainingTrace:
    variant: str
    seed: int
    mean_losses: list
    learning_rates: list

    @property
    def final_loss(self) -> float:
        if not self.mean_losses:
            raise EmptySequenceError("trace has no epochs")
        return self.mean_losses[-1]

    def to_dict(self):
        return {
            "variant": self.variant,
            "seed": self.seed,
            "mean_losses": self.mean_losses,
            "learning_rates": self.learning_rates,
        }


def train(params: AvrnParams, variant: ModelVariant, dataset, cfg: TrainConfig) -> TrainingTrace:
    """Adam over (features, g) pairs, one video per step, in dataset order.

    The trace records the mean per-video loss of each epoch (computed before
    that step's update).  Raises DivergenceError if any value goes non-finite.
    """
    dataset = list(dataset)
    if not dataset:
        raise DataError("train: empty dataset")
    named = list(params.named_parameters())
    for _, t in named:
        t.zero_grad()
    opt = AdamState(named)
    mean_losses, learning_rates = [], []
    for epoch in range(cfg.max_epochs):
        lr = learning_rate_at(cfg, epoch)
        step_losses = []
        for feats, g in dataset:
            try:
                graph = _forward_graph(params, variant, feats)
                node = loss_node(graph.p_nodes, g)
            except NonFiniteError as exc:
                raise DivergenceError(
                    f"training diverged at epoch {epoch}: {exc}") from exc
            ad.backward(node)
            if cfg.clip_norm is not None:
                clip_gradients(named, cfg.clip_norm)
            opt.step(lr)
            step_losses.append(float(node.value[0, 0]))
        mean_losses.append(float(np.mean(step_losses)))
        learning_rates.append(lr)
    return TrainingTrace(variant=variant.value, seed=cfg.seed,
                         mean_losses=mean_losses, learning_rates=learning_rates)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: AvrnParams, variant: ModelVariant, cfg: TrainConfig):
    """Write all parameter matrices plus the run configuration to one file."""
    from .data import write_tensor_container

    tensors = {name: t.value for name, t in params.named_parameters()}
    meta = {
        "model": params.config_dict(),
        "variant": variant.value,
        "train": cfg.to_dict(),
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    tensors["__config__"] = np.frombuffer(blob, dtype=np.uint8)
    write_tensor_container(path, tensors)


def load_checkpoint(path):
    """Rebuild (params, variant, cfg) from a checkpoint file."""
    from .data import read_tensor_container

    blocks = read_tensor_container(path)
    if "__config__" not in blocks:
        raise DataError(f"{path}: checkpoint carries no configuration record")
    meta = json.loads(bytes(blocks.pop("__config__")).decode("utf-8"))
    params = AvrnParams.init(rng=np.random.default_rng(0), **meta["model"])
    expected = dict(params.named_parameters())
    if set(blocks) != set(expected):
        missing = sorted(set(expected) - set(blocks))
        extra = sorted(set(blocks) - set(expected))
        raise DataError(
            f"{path}: tensor names do not match the declared model "
            f"(missing {missing}, unexpected {extra})")
    for name, arr in blocks.items():
        t = expected[name]
        if t.value.shape != arr.shape:
            raise DataError(
                f"{path}: tensor {name} has shape {arr.shape}, expected {t.value.shape}")
        t.value[...] = arr
    cfg = TrainConfig(**meta["train"])
    return params, ModelVariant(meta["variant"]), cfg
