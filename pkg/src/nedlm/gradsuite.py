"""Seeded finite-difference sweep over every differentiable operation.

Each entry builds a small random configuration, runs the reverse-mode
gradient, and compares it per coordinate against central differences.
The full sweep covers the affine kernel, the recurrent cell, the
character encoder, the sampled softmax, the bin layer, the feed-forward
scorer, and the complete language-model and ranker losses.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .corpus import SynthSpec, build_priors, synth_corpus, CharAlphabet
from .encoder import build_lm_model
from .entity_lm import init_entity_embeddings, paragraph_loss
from .features import BinLayer, bin_project
from .gradcheck import max_rel_err
from .kernels import (
    CharCnn,
    LstmCell,
    affine,
    char_conv_encode,
    recurrent_cell_step,
    sampled_softmax_loss,
)
from .params import make_parameter
from .ranker import Disambiguator, RankerModel, build_queries, score
from .rng import SeededRng

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    seed: int
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _check_affine(seed: int) -> float:
    rng = SeededRng(seed)
    n = int(rng.integers(1, 5))
    a = int(rng.integers(1, 6))
    b = int(rng.integers(1, 6))
    x = make_parameter("x", rng.normal((n, a)))
    w = make_parameter("W", rng.normal((a, b)))
    bias = make_parameter("b", rng.normal((b,)))
    probe = ad.constant(rng.normal((n, b)))

    def loss():
        return ad.sum_(ad.mul(affine(x.tensor, w, bias), probe))

    return max_rel_err(loss, [x, w, bias], STEP)


def _check_cell(seed: int) -> float:
    rng = SeededRng(seed)
    d_in = int(rng.integers(2, 5))
    d_h = int(rng.integers(2, 5))
    cell = LstmCell.create("cell", d_in, d_h, rng)
    x1 = ad.constant(rng.normal((d_in,)))
    x2 = ad.constant(rng.normal((d_in,)))
    h0 = ad.constant(rng.normal((d_h,)))
    c0 = ad.constant(rng.normal((d_h,)))
    probe = ad.constant(rng.normal((d_h,)))

    def loss():
        h, c = recurrent_cell_step(x1, (h0, c0), cell)
        h, c = recurrent_cell_step(x2, (h, c), cell)
        return ad.add(ad.sum_(ad.mul(h, probe)), ad.sum_(ad.square(c)))

    return max_rel_err(loss, cell.parameters(), STEP)


def _check_char_cnn(seed: int) -> float:
    rng = SeededRng(seed)
    cnn = CharCnn.create(
        alphabet_size=int(rng.integers(5, 10)),
        d_char=int(rng.integers(2, 4)),
        widths=(1, 2),
        n_filters=int(rng.integers(1, 4)),
        d_tok=int(rng.integers(2, 5)),
        rng=rng,
    )
    ids = rng.integers(0, cnn.embedding.values.shape[0], (3, 5))
    probe = ad.constant(rng.normal((3, cnn.d_tok)))

    def loss():
        return ad.sum_(ad.mul(char_conv_encode(ids, cnn), probe))

    return max_rel_err(loss, cnn.parameters(), STEP)


def _check_sampled_softmax(seed: int) -> float:
    rng = SeededRng(seed)
    v = int(rng.integers(5, 12))
    d = int(rng.integers(2, 5))
    table = make_parameter("table", rng.normal((v, d)))
    ctx = make_parameter("ctx", rng.normal((d,)))
    target = int(rng.integers(0, v))
    k = int(rng.integers(1, v - 1))
    negatives = rng.sample_excluding(v, k, target)

    def loss():
        return sampled_softmax_loss(ctx.tensor, target, table, negatives)

    return max_rel_err(loss, [table, ctx], STEP)


def _check_bin_layer(seed: int) -> float:
    rng = SeededRng(seed)
    layer = BinLayer.create("bin", int(rng.integers(1, 8)))
    x = make_parameter("x", rng.uniform(-0.5, 1.5, ()))
    probe = ad.constant(rng.normal((layer.dim,)))

    def loss():
        return ad.sum_(ad.mul(bin_project(x.tensor, layer), probe))

    return max_rel_err(loss, [x] + layer.parameters(), STEP)


def _check_ff_scorer(seed: int) -> float:
    rng = SeededRng(seed)
    cfg = RunConfig(dropout=0.5, bins_prior=2, bins_lexical=2, ff_hidden=int(rng.integers(2, 6)))
    cfg = replace(cfg, use_prior=False, use_lexical=False)
    d_ctx = int(rng.integers(2, 4))
    ranker = RankerModel.create(cfg, d_ctx, d_ctx, rng)
    inputs = make_parameter("inputs", rng.normal((3, ranker.d_input)))
    probe = ad.constant(rng.normal((3,)))
    mask_rng = SeededRng(seed).derive("mask")

    def loss():
        s = score(inputs.tensor, ranker, cfg, training=True, rng=mask_rng)
        return ad.sum_(ad.mul(s, probe))

    return max_rel_err(loss, [inputs] + ranker.parameters(), STEP)


def _tiny_world(seed: int):
    spec = SynthSpec(
        n_entities=4,
        n_paragraphs=4,
        ambiguity=2,
        vocab_size=24,
        seed=seed,
        min_tokens=4,
        max_tokens=5,
        topic_words_per_entity=2,
    )
    paragraphs, inventory, vocab = synth_corpus(spec)
    alphabet = CharAlphabet.build(paragraphs, extra_tokens=inventory.titles)
    cfg = RunConfig(
        seed=seed,
        d_char=3,
        max_token_chars=6,
        conv_widths=(1, 2),
        conv_filters=2,
        d_tok=4,
        d_h=4,
        layers=2,
        n_neg_words=4,
        n_neg_entities=2,
        bins_prior=3,
        bins_lexical=2,
        dropout=0.5,
        ff_hidden=5,
    )
    model = build_lm_model(len(vocab), len(alphabet), len(inventory), cfg, SeededRng(seed))
    init_entity_embeddings(inventory, vocab, model)
    return paragraphs, inventory, vocab, alphabet, cfg, model


def _check_lm_loss(seed: int) -> float:
    paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(seed)
    paragraph = paragraphs[0]

    def loss():
        rng = SeededRng(seed).derive("neg", 0, 0)
        return paragraph_loss(paragraph, model, vocab, alphabet, inventory, cfg, rng).total

    return max_rel_err(loss, model.parameters(), STEP)


def _check_ranker_loss(seed: int) -> float:
    paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(seed)
    priors = build_priors(paragraphs, inventory)
    ranker = RankerModel.create(cfg, cfg.d_h, cfg.d_h, SeededRng(seed).derive("rank"))
    dis = Disambiguator(model, ranker, vocab, alphabet, inventory, priors, cfg)
    queries = [q for q in build_queries(paragraphs, priors, inventory) if len(q.candidates) > 1]
    query = queries[0]
    gold_pos = next(i for i, (eid, _) in enumerate(query.candidates) if eid == query.gold_id)

    def loss():
        scores = dis.score_query(query, training=True, rng=SeededRng(seed).derive("mask"))
        return ad.sub(ad.logsumexp(scores), ad.take(scores, gold_pos))

    return max_rel_err(loss, ranker.parameters(), STEP)


SUITE = (
    ("affine", _check_affine, 20),
    ("recurrent_cell", _check_cell, 15),
    ("char_cnn", _check_char_cnn, 12),
    ("sampled_softmax", _check_sampled_softmax, 15),
    ("bin_layer", _check_bin_layer, 15),
    ("ff_scorer", _check_ff_scorer, 11),
    ("lm_loss", _check_lm_loss, 6),
    ("ranker_loss", _check_ranker_loss, 6),
)


def run_suite(base_seed: int = 20) -> tuple[list[CheckResult], float]:
    """Run every configuration; returns (results, elapsed seconds)."""
    start = time.monotonic()
    results = []
    for name, fn, count in SUITE:
        for i in range(count):
            seed = base_seed + 1000 * len(name) + i
            results.append(CheckResult(name, seed, fn(seed)))
    return results, time.monotonic() - start
