"""Local disambiguation: feature assembly, feed-forward scoring, ranking.

For a query mention spanning tokens [s, e], the context representation
averages the last-layer forward states over positions s-1 .. e-1 and the
last-layer backward states over positions s+1 .. e+1 (the same intervals
the language model trains on).  Per candidate entity, the scorer sees
the binned prior, ten binned lexical features, both context vectors, and
the candidate's embedding row, concatenated in that fixed order, through
a two-layer ReLU network with dropout.  Candidates are ranked by score,
ties broken by ascending entity id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .corpus import CandidateTable, EntityInventory, Mention, Paragraph, Vocabulary
from .encoder import EncodedSequence, LmModel, encode
from .errors import DimensionError, DivergenceError, QueryError
from .features import N_LEXICAL, BinLayer, bin_project, lexical_features
from .kernels import affine, dropout_mask
from .optim import adam_step, renormalize_unit_sphere
from .params import Parameter, make_parameter
from .rng import SeededRng


@dataclass
class ContextRepr:
    """Mean last-layer states over the mention's two target intervals."""

    fwd: Tensor
    bwd: Tensor


def _intervals(mention: Mention) -> tuple[range, range]:
    return (
        range(mention.start - 1, mention.end),
        range(mention.start + 1, mention.end + 2),
    )


def context_repr(encoded: EncodedSequence, mention: Mention) -> ContextRepr:
    """Graph-mode context representation straight from an encoded sequence."""
    fwd_iv, bwd_iv = _intervals(mention)
    fwd = ad.mean(ad.stack([encoded.final_forward(k) for k in fwd_iv]), axis=0)
    bwd = ad.mean(ad.stack([encoded.final_backward(k) for k in bwd_iv]), axis=0)
    return ContextRepr(fwd, bwd)


def context_repr_frozen(
    fwd_states: np.ndarray, bwd_states: np.ndarray, mention: Mention
) -> ContextRepr:
    """Context representation from detached state matrices [T+2, d_h]."""
    fwd_iv, bwd_iv = _intervals(mention)
    return ContextRepr(
        ad.constant(fwd_states[list(fwd_iv)].mean(axis=0)),
        ad.constant(bwd_states[list(bwd_iv)].mean(axis=0)),
    )


def input_extent(cfg: RunConfig, d_ctx: int, d_entity: int) -> int:
    """Assembled feature-vector length under the given ablation flags."""
    n = 2 * d_ctx + d_entity
    if cfg.use_prior:
        n += cfg.bins_prior
    if cfg.use_lexical:
        n += N_LEXICAL * cfg.bins_lexical
    return n


@dataclass
class RankerModel:
    """Bin layers (per ablation flags) plus the two feed-forward layers."""

    bin_prior: BinLayer | None
    bin_lexical: list[BinLayer] | None
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter
    d_input: int

    @classmethod
    def create(cls, cfg: RunConfig, d_ctx: int, d_entity: int, rng: SeededRng) -> "RankerModel":
        d_input = input_extent(cfg, d_ctx, d_entity)
        hidden = cfg.ff_hidden if cfg.ff_hidden > 0 else max(d_input // 2, 1)
        bound1 = np.sqrt(6.0 / (d_input + hidden))
        bound2 = np.sqrt(6.0 / (hidden + 1))
        model = cls(
            bin_prior=BinLayer.create("rank.bin.prior", cfg.bins_prior) if cfg.use_prior else None,
            bin_lexical=(
                [BinLayer.create(f"rank.bin.lex{k}", cfg.bins_lexical) for k in range(N_LEXICAL)]
                if cfg.use_lexical
                else None
            ),
            w1=make_parameter(
                "rank.ff1.W", rng.derive("init", "rank.ff1.W").uniform(-bound1, bound1, (d_input, hidden))
            ),
            b1=make_parameter("rank.ff1.b", np.zeros(hidden)),
            w2=make_parameter(
                "rank.ff2.W", rng.derive("init", "rank.ff2.W").uniform(-bound2, bound2, (hidden, 1))
            ),
            b2=make_parameter("rank.ff2.b", np.zeros(1)),
            d_input=d_input,
        )
        if not cfg.train_bins:
            for layer in ([model.bin_prior] if model.bin_prior else []) + (model.bin_lexical or []):
                for p in layer.parameters():
                    p.trainable = False
        return model

    def parameters(self) -> list[Parameter]:
        out = []
        if self.bin_prior is not None:
            out.extend(self.bin_prior.parameters())
        if self.bin_lexical is not None:
            for layer in self.bin_lexical:
                out.extend(layer.parameters())
        out.extend([self.w1, self.b1, self.w2, self.b2])
        return out


@dataclass
class FeatureBundle:
    """Scalar features and their binned projections for one candidate."""

    f_p: float
    f_s: np.ndarray
    binned_prior: Tensor | None
    binned_lexical: list[Tensor] | None


def compute_bundle(
    mention_surface: str,
    entity_id: int,
    priors: CandidateTable,
    inventory: EntityInventory,
    ranker: RankerModel,
) -> FeatureBundle:
    f_p = priors.prior(mention_surface, entity_id)
    f_s = lexical_features(mention_surface, inventory.titles[entity_id])
    binned_p = bin_project(f_p, ranker.bin_prior) if ranker.bin_prior is not None else None
    binned_s = (
        [bin_project(float(f_s[k]), ranker.bin_lexical[k]) for k in range(N_LEXICAL)]
        if ranker.bin_lexical is not None
        else None
    )
    return FeatureBundle(f_p, f_s, binned_p, binned_s)


def assemble_input(ctx: ContextRepr, bundle: FeatureBundle, entity_row: Tensor, d_input: int) -> Tensor:
    """Concatenate [binned prior; binned lexical 1..10; fwd ctx; bwd ctx; entity row]."""
    parts: list[Tensor] = []
    if bundle.binned_prior is not None:
        parts.append(bundle.binned_prior)
    if bundle.binned_lexical is not None:
        parts.extend(bundle.binned_lexical)
    parts.extend([ctx.fwd, ctx.bwd, entity_row])
    out = ad.concat(parts)
    if out.values.shape != (d_input,):
        raise DimensionError(
            f"assembled input has extent {out.values.shape[0]}, expected {d_input}"
        )
    return out


def score(
    inputs: Tensor,
    ranker: RankerModel,
    cfg: RunConfig,
    training: bool = False,
    rng: SeededRng | None = None,
) -> Tensor:
    """Two-layer ReLU scorer over assembled inputs [n, d_input] -> scores [n]."""
    n = inputs.values.shape[0]
    if cfg.dropout_both_layers and training:
        inputs = ad.mul(inputs, dropout_mask(inputs.values.shape, cfg.dropout, rng.derive("drop-in"), True))
    h = ad.relu(affine(inputs, ranker.w1, ranker.b1))
    if training:
        h = ad.mul(h, dropout_mask(h.values.shape, cfg.dropout, rng.derive("drop-h"), True))
    return ad.reshape(affine(h, ranker.w2, ranker.b2), (n,))


# ---------------------------------------------------------------------------
# Queries and the assembled disambiguator
# ---------------------------------------------------------------------------


@dataclass
class Query:
    paragraph: Paragraph
    mention_index: int  # running index of the mention within its document
    mention: Mention
    gold_id: int
    candidates: list[tuple[int, float]]


@dataclass(frozen=True)
class ScoredCandidate:
    entity_id: int
    score: float
    rank: int


def build_queries(
    paragraphs: list[Paragraph], table: CandidateTable, inventory: EntityInventory
) -> list[Query]:
    """One query per gold mention, with document-level mention indexing."""
    per_doc: dict[str, int] = {}
    queries = []
    for p in paragraphs:
        for m in p.mentions:
            idx = per_doc.get(p.doc_id, 0)
            per_doc[p.doc_id] = idx + 1
            queries.append(
                Query(
                    paragraph=p,
                    mention_index=idx,
                    mention=m,
                    gold_id=inventory.id_of(m.entity),
                    candidates=table.candidates(m.surface),
                )
            )
    return queries


@dataclass
class Disambiguator:
    """Frozen language model plus ranker, with per-paragraph encoding cache."""

    model: LmModel
    ranker: RankerModel
    vocab: Vocabulary
    alphabet: object
    inventory: EntityInventory
    priors: CandidateTable
    cfg: RunConfig
    _cache: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def clear_cache(self) -> None:
        self._cache.clear()

    def _frozen_states(self, paragraph: Paragraph) -> tuple[np.ndarray, np.ndarray]:
        key = id(paragraph)
        if key not in self._cache:
            encoded = encode(paragraph.tokens, self.model, self.alphabet, self.cfg.max_token_chars)
            self._cache[key] = encoded.detach_final()
        return self._cache[key]

    def _context(self, query: Query, graph_mode: bool) -> ContextRepr:
        if graph_mode:
            encoded = encode(
                query.paragraph.tokens, self.model, self.alphabet, self.cfg.max_token_chars
            )
            return context_repr(encoded, query.mention)
        fwd, bwd = self._frozen_states(query.paragraph)
        return context_repr_frozen(fwd, bwd, query.mention)

    def score_query(
        self, query: Query, training: bool = False, rng: SeededRng | None = None
    ) -> Tensor:
        """Scores for every candidate of the query, in candidate-list order."""
        if not query.candidates:
            raise QueryError(
                f"mention {query.mention.surface!r} in {query.paragraph.doc_id!r} "
                "has no candidates"
            )
        graph_mode = training and self.cfg.joint_finetune
        ctx = self._context(query, graph_mode)
        inputs = []
        for eid, _prior in query.candidates:
            bundle = compute_bundle(
                query.mention.surface, eid, self.priors, self.inventory, self.ranker
            )
            if graph_mode:
                row = ad.take(self.model.entity_table.tensor, eid)
            else:
                row = ad.constant(self.model.entity_table.values[eid])
            inputs.append(
                ad.reshape(assemble_input(ctx, bundle, row, self.ranker.d_input), (1, -1))
            )
        return score(ad.concat(inputs, axis=0), self.ranker, self.cfg, training, rng)

    def rank(self, query: Query) -> list[ScoredCandidate]:
        scores = self.score_query(query, training=False).values
        order = sorted(
            range(len(query.candidates)),
            key=lambda i: (-scores[i], query.candidates[i][0]),
        )
        return [
            ScoredCandidate(query.candidates[i][0], float(scores[i]), rank + 1)
            for rank, i in enumerate(order)
        ]

    def predict(self, query: Query) -> ScoredCandidate:
        return self.rank(query)[0]


@dataclass
class RankerTrainStats:
    n_used: int
    n_skipped: int
    epoch_losses: list[float]


def train_ranker(
    dis: Disambiguator, queries: list[Query], step_hook=None
) -> RankerTrainStats:
    """Adam over per-query candidate cross-entropy; skips gold-missing queries.

    The upstream model stays frozen unless ``cfg.joint_finetune`` is set,
    in which case encoder and table parameters update too and touched
    entity rows are reprojected onto the unit sphere.
    """
    cfg = dis.cfg
    cfg.validate()
    usable = []
    n_skipped = 0
    for q in queries:
        if q.candidates and any(eid == q.gold_id for eid, _ in q.candidates):
            usable.append(q)
        else:
            n_skipped += 1

    params = sorted(dis.ranker.parameters(), key=lambda p: p.id)
    upstream: list[Parameter] = []
    if cfg.joint_finetune:
        upstream = sorted(dis.model.parameters(), key=lambda p: p.id)
    base = SeededRng(cfg.seed).derive("ranker")
    losses = []
    for epoch in range(cfg.ranker_epochs):
        order = base.derive("epoch-order", epoch).permutation(len(usable))
        total = 0.0
        for qpos in order:
            q = usable[int(qpos)]
            gold_pos = next(i for i, (eid, _) in enumerate(q.candidates) if eid == q.gold_id)
            rng = base.derive("step", epoch, int(qpos))
            scores = dis.score_query(q, training=True, rng=rng)
            loss = ad.sub(ad.logsumexp(scores), ad.take(scores, gold_pos))
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite ranker loss on {q.paragraph.doc_id!r} "
                    f"mention {q.mention_index}"
                )
            total += value
            for p in params + upstream:
                p.zero_grad()
            loss.backward()
            for p in params + upstream:
                if p.tensor.grad is not None:
                    adam_step(p, cfg.ranker_lr)
            if cfg.joint_finetune and dis.model.entity_table.trainable:
                touched = [eid for eid, _ in q.candidates]
                renormalize_unit_sphere(touched, dis.model.entity_table)
                dis.clear_cache()
            if step_hook is not None:
                step_hook(dis, q)
        losses.append(total / max(len(usable), 1))
    return RankerTrainStats(len(usable), n_skipped, losses)
