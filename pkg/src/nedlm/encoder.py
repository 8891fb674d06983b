"""Bidirectional contextual encoder.

Character-CNN token representations feed an L-layer forward stack and an
L-layer backward stack of recurrent cells.  Position 0 holds the BOS
sentinel and position T+1 the EOS sentinel, so states exist for every
prediction site, including the virtual targets beyond both paragraph
edges.  Forward states at position k depend only on tokens <= k, and
backward states only on tokens >= k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import BOS, EOS, CharAlphabet
from .errors import ParameterError
from .kernels import CharCnn, LstmCell, char_conv_encode, recurrent_cell_step
from .params import Parameter, make_parameter
from .rng import SeededRng


@dataclass
class LmModel:
    """Every parameter family: char-CNN, both recurrent stacks, output tables."""

    char_cnn: CharCnn
    forward_stack: list[LstmCell]
    backward_stack: list[LstmCell]
    word_table: Parameter  # [V, d_h]
    entity_table: Parameter  # [E, d_h]
    d_tok: int
    d_h: int

    def parameters(self) -> list[Parameter]:
        out = list(self.char_cnn.parameters())
        for cell in self.forward_stack + self.backward_stack:
            out.extend(cell.parameters())
        out.extend([self.word_table, self.entity_table])
        return out

    def encoder_parameters(self) -> list[Parameter]:
        """Everything except the word and entity output tables."""
        out = list(self.char_cnn.parameters())
        for cell in self.forward_stack + self.backward_stack:
            out.extend(cell.parameters())
        return out


def build_lm_model(
    vocab_size: int,
    alphabet_size: int,
    n_entities: int,
    cfg,
    seed_rng: SeededRng,
) -> LmModel:
    """Fresh randomly initialized model with extents taken from the config."""
    if cfg.layers < 1:
        raise ParameterError(f"need at least one recurrent layer, got {cfg.layers}")
    cnn = CharCnn.create(
        alphabet_size=alphabet_size,
        d_char=cfg.d_char,
        widths=tuple(cfg.conv_widths),
        n_filters=cfg.conv_filters,
        d_tok=cfg.d_tok,
        rng=seed_rng,
    )
    fwd, bwd = [], []
    for j in range(cfg.layers):
        d_in = cfg.d_tok if j == 0 else cfg.d_h
        fwd.append(LstmCell.create(f"lstm.f{j}", d_in, cfg.d_h, seed_rng))
        bwd.append(LstmCell.create(f"lstm.b{j}", d_in, cfg.d_h, seed_rng))
    words = make_parameter(
        "out.words", seed_rng.derive("init", "out.words").normal((vocab_size, cfg.d_h), scale=0.1)
    )
    entities = make_parameter(
        "out.entities",
        seed_rng.derive("init", "out.entities").normal((n_entities, cfg.d_h), scale=0.1),
    )
    return LmModel(cnn, fwd, bwd, words, entities, cfg.d_tok, cfg.d_h)


@dataclass
class EncodedSequence:
    """Per-position states for positions 0..T+1 (sentinels included).

    ``forward[j][k]`` and ``backward[j][k]`` are the layer-(j+1) states at
    position k; the last layer feeds the loss heads and the ranker.
    """

    token_reprs: Tensor  # [T+2, d_tok]
    forward: list[list[Tensor]]
    backward: list[list[Tensor]]

    @property
    def length(self) -> int:
        return self.token_reprs.values.shape[0]

    def final_forward(self, k: int) -> Tensor:
        return self.forward[-1][k]

    def final_backward(self, k: int) -> Tensor:
        return self.backward[-1][k]

    def detach_final(self) -> tuple[np.ndarray, np.ndarray]:
        """Copy last-layer states out of the graph: ([T+2, d_h], [T+2, d_h])."""
        fwd = np.stack([t.values for t in self.forward[-1]])
        bwd = np.stack([t.values for t in self.backward[-1]])
        return fwd, bwd


def encode(
    tokens: list[str],
    model: LmModel,
    alphabet: CharAlphabet,
    max_token_chars: int,
) -> EncodedSequence:
    """Run the char-CNN and both recurrent stacks over BOS + tokens + EOS."""
    padded = [BOS] + list(tokens) + [EOS]
    char_ids = np.array(
        [alphabet.encode(tok, max_token_chars) for tok in padded], dtype=np.intp
    )
    reprs = char_conv_encode(char_ids, model.char_cnn)
    n = len(padded)

    inputs: list[Tensor] = [ad.take(reprs, k) for k in range(n)]
    forward: list[list[Tensor]] = []
    backward: list[list[Tensor]] = []
    for j, cell in enumerate(model.forward_stack):
        layer_in = inputs if j == 0 else forward[j - 1]
        h = ad.constant(np.zeros(cell.d_h))
        c = ad.constant(np.zeros(cell.d_h))
        states = []
        for k in range(n):
            h, c = recurrent_cell_step(layer_in[k], (h, c), cell)
            states.append(h)
        forward.append(states)
    for j, cell in enumerate(model.backward_stack):
        layer_in = inputs if j == 0 else backward[j - 1]
        h = ad.constant(np.zeros(cell.d_h))
        c = ad.constant(np.zeros(cell.d_h))
        states: list[Tensor] = [None] * n  # type: ignore[list-item]
        for k in range(n - 1, -1, -1):
            h, c = recurrent_cell_step(layer_in[k], (h, c), cell)
            states[k] = h
        backward.append(states)
    return EncodedSequence(reprs, forward, backward)
