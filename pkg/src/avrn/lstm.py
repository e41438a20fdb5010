"""LSTM cell and bidirectional wrapper used by the encoder streams.

The cell follows the standard recurrence: input/forget/output gates and a
tanh candidate, each driven by the concatenated [x; h_prev] vector.  The
bidirectional wrapper runs one cell left-to-right and an independent cell
right-to-left and concatenates the per-step hidden states.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import EmptySequenceError, ShapeError

__all__ = ["LstmCellParams", "BiLstmLayer", "cell_step", "lstm_run", "bilstm_run"]


def _uniform_init(rng, rows, cols, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(rows, cols))


class LstmCellParams:
    """Weights of one LSTM cell.

    Each gate block maps the concatenated [x; h_prev] vector (d_in + d_h) to
    the hidden dimension d_h.
    """

    GATES = ("input", "forget", "output", "candidate")

    def __init__(self, input_dim: int, hidden_dim: int, weights: dict, biases: dict):
        if hidden_dim <= 0:
            raise ShapeError(f"hidden_dim must be positive, got {hidden_dim}")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.weights = weights
        self.biases = biases
        expected = (hidden_dim, input_dim + hidden_dim)
        for gate in self.GATES:
            if weights[gate].value.shape != expected:
                raise ShapeError(
                    f"{gate} weight block is {weights[gate].value.shape}, expected {expected}")
            if biases[gate].value.shape != (hidden_dim, 1):
                raise ShapeError(
                    f"{gate} bias is {biases[gate].value.shape}, expected {(hidden_dim, 1)}")

    @classmethod
    def init(cls, input_dim, hidden_dim, rng, forget_bias=1.0):
        """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases.

        The forget-gate bias starts at ``forget_bias`` (default +1, a common
        stabiliser for long sequences; pass 0 to disable).
        """
        fan_in = input_dim + hidden_dim
        weights, biases = {}, {}
        for gate in cls.GATES:
            weights[gate] = ad.parameter(_uniform_init(rng, hidden_dim, fan_in, fan_in))
            bias = np.zeros((hidden_dim, 1))
            if gate == "forget":
                bias += forget_bias
            biases[gate] = ad.parameter(bias)
        return cls(input_dim, hidden_dim, weights, biases)

    @classmethod
    def zeros(cls, input_dim, hidden_dim):
        fan_in = input_dim + hidden_dim
        weights = {g: ad.parameter(np.zeros((hidden_dim, fan_in))) for g in cls.GATES}
        biases = {g: ad.parameter(np.zeros((hidden_dim, 1))) for g in cls.GATES}
        return cls(input_dim, hidden_dim, weights, biases)

    def named_parameters(self, prefix=""):
        for gate in self.GATES:
            yield f"{prefix}w_{gate}", self.weights[gate]
            yield f"{prefix}b_{gate}", self.biases[gate]


class BiLstmLayer:
    """Forward and backward cells with identical dimensions; output is 2*d_h."""

    def __init__(self, forward_cell: LstmCellParams, backward_cell: LstmCellParams):
        if (forward_cell.input_dim, forward_cell.hidden_dim) != (
            backward_cell.input_dim,
            backward_cell.hidden_dim,
        ):
            raise ShapeError("forward and backward cells must share input and hidden dims")
        self.forward_cell = forward_cell
        self.backward_cell = backward_cell

    @property
    def input_dim(self):
        return self.forward_cell.input_dim

    @property
    def hidden_dim(self):
        return self.forward_cell.hidden_dim

    @property
    def output_dim(self):
        return 2 * self.forward_cell.hidden_dim

    @classmethod
    def init(cls, input_dim, hidden_dim, rng, forget_bias=1.0):
        return cls(
            LstmCellParams.init(input_dim, hidden_dim, rng, forget_bias),
            LstmCellParams.init(input_dim, hidden_dim, rng, forget_bias),
        )

    @classmethod
    def zeros(cls, input_dim, hidden_dim):
        return cls(LstmCellParams.zeros(input_dim, hidden_dim),
                   LstmCellParams.zeros(input_dim, hidden_dim))

    def named_parameters(self, prefix=""):
        yield from self.forward_cell.named_parameters(prefix + "fwd.")
        yield from self.backward_cell.named_parameters(prefix + "bwd.")


def cell_step(p: LstmCellParams, x, h_prev, c_prev):
    """One LSTM step; returns the new (h, c) pair of (d_h, 1) tensors."""
    x = ad.as_tensor(x)
    h_prev = ad.as_tensor(h_prev)
    c_prev = ad.as_tensor(c_prev)
    if x.value.shape != (p.input_dim, 1):
        raise ShapeError(f"input is {x.value.shape}, cell expects {(p.input_dim, 1)}")
    if h_prev.value.shape != (p.hidden_dim, 1) or c_prev.value.shape != (p.hidden_dim, 1):
        raise ShapeError(
            f"state is {h_prev.value.shape}/{c_prev.value.shape}, "
            f"cell expects {(p.hidden_dim, 1)}")
    z = ad.concat_rows([x, h_prev])
    gate_in = ad.sigmoid(ad.add(ad.matmul(p.weights["input"], z), p.biases["input"]))
    gate_forget = ad.sigmoid(ad.add(ad.matmul(p.weights["forget"], z), p.biases["forget"]))
    gate_out = ad.sigmoid(ad.add(ad.matmul(p.weights["output"], z), p.biases["output"]))
    candidate = ad.tanh(ad.add(ad.matmul(p.weights["candidate"], z), p.biases["candidate"]))
    c = ad.add(ad.mul(gate_forget, c_prev), ad.mul(gate_in, candidate))
    h = ad.mul(gate_out, ad.tanh(c))
    return h, c


def lstm_run(cell: LstmCellParams, xs):
    """Scan the cell over the sequence from zero initial state; returns h_t list."""
    xs = list(xs)
    if not xs:
        raise EmptySequenceError("lstm_run: empty input sequence")
    h = ad.constant(np.zeros((cell.hidden_dim, 1)))
    c = ad.constant(np.zeros((cell.hidden_dim, 1)))
    outputs = []
    for x in xs:
        h, c = cell_step(cell, x, h, c)
        outputs.append(h)
    return outputs


def bilstm_run(layer: BiLstmLayer, xs):
    """Bidirectional scan; output_t = concat(forward h_t, backward h_t)."""
    xs = list(xs)
    if not xs:
        raise EmptySequenceError("bilstm_run: empty input sequence")
    fwd = lstm_run(layer.forward_cell, xs)
    bwd = lstm_run(layer.backward_cell, reversed(xs))[::-1]
    return [ad.concat_rows([f, b]) for f, b in zip(fwd, bwd)]
