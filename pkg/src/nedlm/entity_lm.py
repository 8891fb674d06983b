"""Entity-aware bidirectional language model objective and training loop.

A plain bidirectional LM predicts the next word from each forward state
and the previous word from each backward state.  Here, positions whose
predicted token falls inside a gold mention predict the mention's entity
instead: for a mention spanning tokens [s, e], forward positions
s-1 .. e-1 and backward positions s+1 .. e+1 carry the entity target.
The total loss is the word-term sum plus the entity-term sum; entity
rows live on the unit sphere and are reprojected after every update.

Training configurations:
  a: only the entity table updates;
  b: every parameter family updates;
  c: every parameter family updates, but word terms are dropped.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .corpus import EntityInventory, Paragraph, Vocabulary
from .encoder import EncodedSequence, LmModel, encode
from .errors import ContractError, DivergenceError, InitializationError, ParameterError
from .kernels import sampled_softmax_loss
from .optim import adagrad_step, renormalize_unit_sphere
from .rng import SeededRng

WORD = "word"
ENTITY = "entity"

# A target is ("word", word_id), ("entity", entity_id), or None.
Target = tuple[str, int] | None


@dataclass
class TargetPlan:
    """Per-position prediction targets for positions 0 .. T+1."""

    forward: list[Target]
    backward: list[Target]

    @property
    def length(self) -> int:
        return len(self.forward)

    def count(self, kind: str) -> int:
        return sum(
            1
            for side in (self.forward, self.backward)
            for t in side
            if t is not None and t[0] == kind
        )


def build_target_plan(
    paragraph: Paragraph, vocab: Vocabulary, inventory: EntityInventory
) -> TargetPlan:
    """Word targets everywhere, overwritten by entity intervals per mention."""
    tokens = paragraph.tokens
    t = len(tokens)
    ids = [vocab.bos_id] + [vocab.id(tok) for tok in tokens] + [vocab.eos_id]

    forward: list[Target] = [(WORD, ids[k + 1]) for k in range(t + 1)] + [None]
    backward: list[Target] = [None] + [(WORD, ids[k - 1]) for k in range(1, t + 2)]

    for m in paragraph.mentions:
        eid = inventory.id_of(m.entity)
        for k in range(m.start - 1, m.end):
            forward[k] = (ENTITY, eid)
        for k in range(m.start + 1, m.end + 2):
            backward[k] = (ENTITY, eid)
    return TargetPlan(forward, backward)


@dataclass
class LossBreakdown:
    """Graph nodes for the total loss and its word/entity parts."""

    total: Tensor
    words: Tensor
    entities: Tensor
    n_word_terms: int
    n_entity_terms: int
    touched_entities: set[int]


def _sum_terms(terms: list[Tensor]) -> Tensor:
    if not terms:
        return ad.constant(0.0)
    return functools.reduce(ad.add, terms)


@dataclass
class NegativeSampler:
    """Negative-id distributions: uniform, or unigram counts raised to 0.75."""

    word_probs: np.ndarray | None = None
    entity_probs: np.ndarray | None = None

    @classmethod
    def build(cls, mode: str, paragraphs, vocab, inventory) -> "NegativeSampler":
        if mode == "uniform":
            return cls()
        word_counts = np.ones(len(vocab))  # smoothing keeps every id samplable
        for p in paragraphs:
            for tok in p.tokens:
                word_counts[vocab.id(tok)] += 1.0
        entity_counts = np.asarray(inventory.frequencies, dtype=np.float64) + 1.0
        word_probs = word_counts**0.75
        entity_probs = entity_counts**0.75
        return cls(word_probs / word_probs.sum(), entity_probs / entity_probs.sum())

    def probs(self, kind: str) -> np.ndarray | None:
        return self.word_probs if kind == WORD else self.entity_probs


def negatives_for(
    rng: SeededRng,
    direction: str,
    position: int,
    kind: str,
    target: int,
    space: int,
    k: int,
    probs: np.ndarray | None = None,
) -> np.ndarray:
    """Keyed negative draw so every term's sample is reproducible in isolation."""
    term_rng = rng.derive(direction, position, kind)
    if probs is None:
        return term_rng.sample_excluding(space, k, target)
    weights = probs.copy()
    weights[target] = 0.0
    weights /= weights.sum()
    return term_rng.weighted_sample_without_replacement(space, k, weights)


def lm_loss(
    paragraph: Paragraph,
    plan: TargetPlan,
    model: LmModel,
    encoded: EncodedSequence,
    cfg: RunConfig,
    rng: SeededRng,
    sampler: NegativeSampler | None = None,
) -> LossBreakdown:
    """Negative log likelihood over every targeted position of the plan.

    ``rng`` must already be keyed to the (epoch, paragraph) visit; each
    term derives its own child stream from direction and position.
    """
    if plan.length != len(paragraph.tokens) + 2 or plan.length != encoded.length:
        raise ContractError(
            f"plan length {plan.length} does not match paragraph of "
            f"{len(paragraph.tokens)} tokens"
        )
    vocab_size = model.word_table.values.shape[0]
    n_entities = model.entity_table.values.shape[0]
    n_neg_words = min(cfg.n_neg_words, vocab_size - 1)
    n_neg_entities = min(cfg.n_neg_entities, n_entities - 1) if n_entities > 1 else 0

    word_terms: list[Tensor] = []
    entity_terms: list[Tensor] = []
    touched: set[int] = set()
    drop_words = cfg.lm_config == "c"
    sampler = sampler or NegativeSampler()

    for direction, side in (("f", plan.forward), ("b", plan.backward)):
        for k, target in enumerate(side):
            if target is None:
                continue
            kind, tid = target
            if kind == WORD and drop_words:
                continue
            context = (
                encoded.final_forward(k) if direction == "f" else encoded.final_backward(k)
            )
            if kind == WORD:
                negs = negatives_for(
                    rng, direction, k, WORD, tid, vocab_size, n_neg_words,
                    sampler.probs(WORD),
                )
                word_terms.append(
                    sampled_softmax_loss(context, tid, model.word_table, negs)
                )
            else:
                if n_neg_entities < 1:
                    raise ParameterError(
                        "entity targets need at least 2 entities to sample negatives from"
                    )
                negs = negatives_for(
                    rng, direction, k, ENTITY, tid, n_entities, n_neg_entities,
                    sampler.probs(ENTITY),
                )
                entity_terms.append(
                    sampled_softmax_loss(context, tid, model.entity_table, negs)
                )
                touched.add(tid)
                touched.update(int(n) for n in negs)

    words = _sum_terms(word_terms)
    entities = _sum_terms(entity_terms)
    if cfg.entity_loss_scale != 1.0:
        scaled_entities = ad.mul(entities, cfg.entity_loss_scale)
    else:
        scaled_entities = entities
    total = scaled_entities if drop_words else ad.add(words, scaled_entities)
    return LossBreakdown(
        total=total,
        words=words,
        entities=entities,
        n_word_terms=len(word_terms),
        n_entity_terms=len(entity_terms),
        touched_entities=touched,
    )


def paragraph_loss(
    paragraph: Paragraph,
    model: LmModel,
    vocab: Vocabulary,
    alphabet,
    inventory: EntityInventory,
    cfg: RunConfig,
    rng: SeededRng,
    sampler: NegativeSampler | None = None,
) -> LossBreakdown:
    """Encode, plan, and score one paragraph in a single call."""
    plan = build_target_plan(paragraph, vocab, inventory)
    encoded = encode(paragraph.tokens, model, alphabet, cfg.max_token_chars)
    return lm_loss(paragraph, plan, model, encoded, cfg, rng, sampler)


def init_entity_embeddings(
    inventory: EntityInventory, vocab: Vocabulary, model: LmModel
) -> None:
    """Entity rows start at the unit-normalized mean of their title-token rows."""
    words = model.word_table.values
    table = model.entity_table.values
    for eid in range(len(inventory)):
        toks = inventory.title_tokens(eid)
        if not toks:
            raise InitializationError(
                f"entity {inventory.names[eid]!r} has an empty title"
            )
        ids = [vocab.id(t) for t in toks]
        table[eid] = words[ids].mean(axis=0)
    renormalize_unit_sphere(range(len(inventory)), model.entity_table)


def apply_freeze_policy(model: LmModel, lm_config: str) -> None:
    """Config a freezes everything except the entity table."""
    entity_only = lm_config == "a"
    for p in model.parameters():
        p.trainable = True
    if entity_only:
        for p in model.parameters():
            if p.id != "out.entities":
                p.trainable = False


@dataclass
class EpochStats:
    epoch: int
    loss_words: float
    loss_entities: float
    loss_total: float


def train_lm(
    paragraphs: list[Paragraph],
    model: LmModel,
    vocab: Vocabulary,
    alphabet,
    inventory: EntityInventory,
    cfg: RunConfig,
    step_hook=None,
) -> list[EpochStats]:
    """AdaGrad over seeded-shuffled paragraphs; returns per-epoch mean losses.

    After every step, entity rows touched by the step are reprojected
    onto the unit sphere.  ``step_hook(model, touched)`` runs after each
    projection; tests use it to watch invariants.
    """
    cfg.validate()
    apply_freeze_policy(model, cfg.lm_config)
    params = sorted(model.parameters(), key=lambda p: p.id)
    trainable = [p for p in params if p.trainable]
    sampler = NegativeSampler.build(cfg.neg_sampling, paragraphs, vocab, inventory)
    base = SeededRng(cfg.seed)
    trace: list[EpochStats] = []

    for epoch in range(cfg.lm_epochs):
        order = base.derive("epoch-order", epoch).permutation(len(paragraphs))
        sum_w = sum_e = sum_t = 0.0
        for idx in order:
            paragraph = paragraphs[int(idx)]
            rng = base.derive("neg", epoch, int(idx))
            breakdown = paragraph_loss(
                paragraph, model, vocab, alphabet, inventory, cfg, rng, sampler
            )
            total = breakdown.total.item()
            if not np.isfinite(total):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} on paragraph {paragraph.doc_id!r}"
                )
            sum_w += breakdown.words.item()
            sum_e += breakdown.entities.item()
            sum_t += total
            for p in params:
                p.zero_grad()
            breakdown.total.backward()
            for p in trainable:
                if p.tensor.grad is not None:
                    adagrad_step(p, cfg.lm_lr)
            if breakdown.touched_entities and model.entity_table.trainable:
                renormalize_unit_sphere(breakdown.touched_entities, model.entity_table)
            if step_hook is not None:
                step_hook(model, breakdown.touched_entities)
        n = max(len(paragraphs), 1)
        trace.append(EpochStats(epoch, sum_w / n, sum_e / n, sum_t / n))
    return trace


def dump_loss_trace(trace: list[EpochStats]) -> str:
    lines = ["# epoch\tll_w\tll_e\ttotal"]
    for row in trace:
        lines.append(
            f"{row.epoch}\t{row.loss_words!r}\t{row.loss_entities!r}\t{row.loss_total!r}"
        )
    return "\n".join(lines) + "\n"
