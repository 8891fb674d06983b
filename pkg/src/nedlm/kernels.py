"""Differentiable building blocks for the encoder and the loss heads.

The recurrent cell is a standard LSTM with input, forget, and output
gates.  The character encoder embeds characters, runs a bank of 1-d
convolutions of several widths, max-pools each filter over time, and
projects the concatenation to the token dimension.  The sampled-softmax
head scores the target against a drawn negative set so gradients touch
only the rows actually used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    ContractError,
    DegenerateSetError,
    DimensionError,
    ParameterError,
    VocabularyError,
)
from .params import Parameter, make_parameter
from .rng import SeededRng


def affine(x: Tensor, weights: Parameter | Tensor, bias: Parameter | Tensor) -> Tensor:
    """x @ W + b with explicit extent checking."""
    w = weights.tensor if isinstance(weights, Parameter) else weights
    b = bias.tensor if isinstance(bias, Parameter) else bias
    if x.values.shape[-1] != w.values.shape[0] or w.values.shape[1] != b.values.shape[0]:
        raise DimensionError(
            f"affine extents do not conform: input {x.values.shape}, "
            f"weights {w.values.shape}, bias {b.values.shape}"
        )
    return ad.add(ad.matmul(x, w), b)


# ---------------------------------------------------------------------------
# Recurrent cell
# ---------------------------------------------------------------------------


@dataclass
class LstmCell:
    """One gated recurrent layer: weights [d_in + d_h, 4*d_h], bias [4*d_h].

    Gate order along the last axis is input, forget, candidate, output.
    """

    weights: Parameter
    bias: Parameter
    d_in: int
    d_h: int

    @classmethod
    def create(cls, prefix: str, d_in: int, d_h: int, rng: SeededRng) -> "LstmCell":
        bound = np.sqrt(6.0 / (d_in + d_h + 4 * d_h))
        w = rng.derive("init", prefix + ".W").uniform(-bound, bound, (d_in + d_h, 4 * d_h))
        b = np.zeros(4 * d_h)
        b[d_h : 2 * d_h] = 1.0  # forget gate opens at init
        return cls(
            weights=make_parameter(prefix + ".W", w),
            bias=make_parameter(prefix + ".b", b),
            d_in=d_in,
            d_h=d_h,
        )

    def parameters(self) -> list[Parameter]:
        return [self.weights, self.bias]


def _lstm_combine(gates: Tensor, c: Tensor, d_h: int) -> tuple[Tensor, Tensor]:
    """Fused gate nonlinearities: from preactivations and old cell to (h', c')."""
    a = gates.values
    i = ad._sigmoid_values(a[0:d_h])
    f = ad._sigmoid_values(a[d_h : 2 * d_h])
    g = np.tanh(a[2 * d_h : 3 * d_h])
    o = ad._sigmoid_values(a[3 * d_h :])

    c_new = Tensor(f * c.values + i * g, parents=(gates, c))
    c_old_values = c.values

    def backward_c(gc):
        dg = np.empty(4 * d_h)
        dg[0:d_h] = gc * g * i * (1.0 - i)
        dg[d_h : 2 * d_h] = gc * c_old_values * f * (1.0 - f)
        dg[2 * d_h : 3 * d_h] = gc * i * (1.0 - g * g)
        dg[3 * d_h :] = 0.0
        gates._accumulate(dg)
        c._accumulate(gc * f)

    c_new._backward = backward_c

    th = np.tanh(c_new.values)
    h_new = Tensor(o * th, parents=(gates, c_new))

    def backward_h(gh):
        dg = np.zeros(4 * d_h)
        dg[3 * d_h :] = gh * th * o * (1.0 - o)
        gates._accumulate(dg)
        c_new._accumulate(gh * o * (1.0 - th * th))

    h_new._backward = backward_h
    return h_new, c_new


def recurrent_cell_step(
    x_t: Tensor, state: tuple[Tensor, Tensor], cell: LstmCell
) -> tuple[Tensor, Tensor]:
    """One LSTM step on 1-d input and state vectors; returns (h', c')."""
    h, c = state
    if x_t.values.shape != (cell.d_in,) or h.values.shape != (cell.d_h,) or c.values.shape != (cell.d_h,):
        raise DimensionError(
            f"cell expects input ({cell.d_in},) and state ({cell.d_h},); got "
            f"input {x_t.values.shape}, h {h.values.shape}, c {c.values.shape}"
        )
    gates = affine(ad.concat([x_t, h]), cell.weights, cell.bias)
    return _lstm_combine(gates, c, cell.d_h)


# ---------------------------------------------------------------------------
# Character convolution encoder
# ---------------------------------------------------------------------------


@dataclass
class CharCnn:
    """Character embedding, a conv bank of several widths, and a projection."""

    embedding: Parameter  # [alphabet, d_char]
    conv_weights: list[Parameter]  # per width: [width * d_char, n_filters]
    conv_biases: list[Parameter]  # per width: [n_filters]
    projection: Parameter  # [sum n_filters, d_tok]
    projection_bias: Parameter  # [d_tok]
    widths: tuple[int, ...]
    d_char: int
    n_filters: int
    d_tok: int

    @classmethod
    def create(
        cls,
        alphabet_size: int,
        d_char: int,
        widths: tuple[int, ...],
        n_filters: int,
        d_tok: int,
        rng: SeededRng,
    ) -> "CharCnn":
        emb = rng.derive("init", "char.emb").normal((alphabet_size, d_char), scale=0.1)
        conv_w, conv_b = [], []
        for w in widths:
            fan_in = w * d_char
            bound = np.sqrt(6.0 / (fan_in + n_filters))
            conv_w.append(
                make_parameter(
                    f"char.conv{w}.W",
                    rng.derive("init", f"char.conv{w}.W").uniform(-bound, bound, (fan_in, n_filters)),
                )
            )
            conv_b.append(make_parameter(f"char.conv{w}.b", np.zeros(n_filters)))
        total = n_filters * len(widths)
        bound = np.sqrt(6.0 / (total + d_tok))
        proj = rng.derive("init", "char.proj.W").uniform(-bound, bound, (total, d_tok))
        return cls(
            embedding=make_parameter("char.emb", emb),
            conv_weights=conv_w,
            conv_biases=conv_b,
            projection=make_parameter("char.proj.W", proj),
            projection_bias=make_parameter("char.proj.b", np.zeros(d_tok)),
            widths=widths,
            d_char=d_char,
            n_filters=n_filters,
            d_tok=d_tok,
        )

    def parameters(self) -> list[Parameter]:
        return (
            [self.embedding]
            + self.conv_weights
            + self.conv_biases
            + [self.projection, self.projection_bias]
        )


def char_conv_encode(char_ids: np.ndarray, cnn: CharCnn) -> Tensor:
    """Context-independent token representations [n_tokens, d_tok].

    ``char_ids`` is an integer matrix [n_tokens, max_chars], already
    padded or truncated to a fixed length.
    """
    char_ids = np.asarray(char_ids, dtype=np.intp)
    alphabet_size = cnn.embedding.values.shape[0]
    if char_ids.min() < 0 or char_ids.max() >= alphabet_size:
        bad = int(char_ids.min()) if char_ids.min() < 0 else int(char_ids.max())
        raise VocabularyError(
            f"char id {bad} outside alphabet of size {alphabet_size}"
        )
    n_tokens, max_chars = char_ids.shape
    if max_chars < max(cnn.widths):
        raise DimensionError(
            f"token char length {max_chars} shorter than widest filter {max(cnn.widths)}"
        )
    emb = ad.take(cnn.embedding.tensor, char_ids)  # [n, max_chars, d_char]
    pooled_parts = []
    for w, conv_w, conv_b in zip(cnn.widths, cnn.conv_weights, cnn.conv_biases):
        n_pos = max_chars - w + 1
        windows = [
            ad.reshape(ad.take(emb, (slice(None), slice(i, i + w))), (n_tokens, 1, w * cnn.d_char))
            for i in range(n_pos)
        ]
        stacked = ad.concat(windows, axis=1)  # [n, n_pos, w*d_char]
        scores = ad.add(ad.matmul(stacked, conv_w.tensor), conv_b.tensor)
        pooled_parts.append(ad.max_(scores, axis=1))  # [n, n_filters]
    features = ad.concat(pooled_parts, axis=1)
    return affine(features, cnn.projection, cnn.projection_bias)


# ---------------------------------------------------------------------------
# Loss heads and dropout
# ---------------------------------------------------------------------------


def sampled_softmax_loss(
    context: Tensor,
    target_id: int,
    output_table: Parameter,
    negatives: np.ndarray,
) -> Tensor:
    """-log( exp(s_t) / (exp(s_t) + sum_n exp(s_n)) ) with s_v = context . table[v].

    Gradients flow to the context and to the target/negative rows only.
    """
    table_size, d = output_table.values.shape
    if context.values.shape != (d,):
        raise DimensionError(
            f"context shape {context.values.shape} does not match table row size {d}"
        )
    if not 0 <= target_id < table_size:
        raise VocabularyError(f"target id {target_id} outside table of size {table_size}")
    negatives = np.asarray(negatives, dtype=np.intp)
    if negatives.size == 0:
        raise DegenerateSetError("sampled softmax needs at least one negative")
    if negatives.min() < 0 or negatives.max() >= table_size:
        raise VocabularyError("negative id outside the output table")
    if (negatives == target_id).any():
        raise ContractError(f"negatives contain the target id {target_id}")
    if len(np.unique(negatives)) != negatives.size:
        raise ContractError("negatives must be distinct")

    ids = np.concatenate(([target_id], negatives))
    scores = ad.reshape(
        ad.matmul(ad.rows(output_table.tensor, ids), ad.reshape(context, (d, 1))),
        (ids.size,),
    )
    return ad.sub(ad.logsumexp(scores), ad.take(scores, 0))


def dropout_mask(shape, rate: float, rng: SeededRng, training: bool) -> Tensor:
    """Inverted-dropout mask: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return ad.constant(np.ones(shape))
    keep = rng.random(shape) >= rate
    return ad.constant(keep / (1.0 - rate))
