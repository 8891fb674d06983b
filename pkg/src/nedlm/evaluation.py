"""Micro-accuracy evaluation, bucketed breakdowns, and ablation runs.

Queries whose gold entity is missing from the candidate list count as
incorrect unless the caller filters them out.  Bucket boundaries follow
the frequency ranges 1-10 / 11-50 / >=51 (plus a separate bucket for
entities never linked in training) and the per-document mention-count
ranges 1-4 / 5-9 / 10-19 / >=20.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

from .config import RunConfig
from .corpus import CandidateTable, EntityInventory, Paragraph, Vocabulary
from .encoder import LmModel
from .errors import ContractError, ParseError
from .ranker import Disambiguator, Query, RankerModel, build_queries, train_ranker
from .rng import SeededRng

FREQUENCY_BUCKETS = (("unseen", 0, 0), ("1-10", 1, 10), ("11-50", 11, 50), (">=51", 51, None))
DOC_MENTION_BUCKETS = (("1-4", 1, 4), ("5-9", 5, 9), ("10-19", 10, 19), (">=20", 20, None))

MISSING = "-"


@dataclass(frozen=True)
class PredictionRecord:
    doc_id: str
    mention_index: int
    gold: str
    predicted: str  # entity name, or "-" when no candidate could be scored
    score: float


@dataclass
class BucketRow:
    label: str
    n: int
    n_correct: int

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n if self.n else 0.0


@dataclass
class EvalReport:
    micro_accuracy: float
    n_queries: int
    n_correct: int
    n_gold_missing: int
    frequency_buckets: list[BucketRow]
    doc_mention_buckets: list[BucketRow]


def micro_accuracy(predictions: list, gold: list) -> float:
    """Fraction of aligned prediction/gold pairs that match."""
    if len(predictions) != len(gold):
        raise ContractError(
            f"got {len(predictions)} predictions for {len(gold)} gold labels"
        )
    if not gold:
        warnings.warn("micro accuracy over an empty query set is defined as 0")
        return 0.0
    return sum(1 for p, g in zip(predictions, gold) if p == g) / len(gold)


def _bucket_label(value: int, buckets) -> str:
    for label, lo, hi in buckets:
        if value >= lo and (hi is None or value <= hi):
            return label
    return buckets[0][0]


def frequency_bucket(freq: int) -> str:
    return _bucket_label(freq, FREQUENCY_BUCKETS)


def doc_mention_bucket(count: int) -> str:
    return _bucket_label(count, DOC_MENTION_BUCKETS)


def evaluate(
    dis: Disambiguator, queries: list[Query], gold_in_candidates_only: bool = False
) -> tuple[list[PredictionRecord], list[Query]]:
    """Rank every query; returns prediction records aligned with kept queries."""
    records = []
    kept = []
    for q in queries:
        gold_present = any(eid == q.gold_id for eid, _ in q.candidates)
        if gold_in_candidates_only and not gold_present:
            continue
        kept.append(q)
        if q.candidates:
            top = dis.rank(q)[0]
            predicted = dis.inventory.names[top.entity_id]
            score = top.score
        else:
            predicted = MISSING
            score = 0.0
        records.append(
            PredictionRecord(
                q.paragraph.doc_id,
                q.mention_index,
                dis.inventory.names[q.gold_id],
                predicted,
                score,
            )
        )
    return records, kept


def build_report(
    records: list[PredictionRecord],
    inventory: EntityInventory,
    paragraphs: list[Paragraph],
    n_gold_missing: int | None = None,
) -> EvalReport:
    """Accuracy plus bucket rows; every record lands in exactly one bucket per axis."""
    doc_counts: dict[str, int] = {}
    for p in paragraphs:
        doc_counts[p.doc_id] = doc_counts.get(p.doc_id, 0) + len(p.mentions)

    freq_rows = {label: BucketRow(label, 0, 0) for label, _, _ in FREQUENCY_BUCKETS}
    doc_rows = {label: BucketRow(label, 0, 0) for label, _, _ in DOC_MENTION_BUCKETS}
    n_correct = 0
    for rec in records:
        correct = rec.predicted == rec.gold
        n_correct += correct
        freq = inventory.frequencies[inventory.id_of(rec.gold)]
        row = freq_rows[frequency_bucket(freq)]
        row.n += 1
        row.n_correct += correct
        drow = doc_rows[doc_mention_bucket(doc_counts.get(rec.doc_id, 0))]
        drow.n += 1
        drow.n_correct += correct

    n = len(records)
    if n_gold_missing is None:
        n_gold_missing = sum(1 for r in records if r.predicted == MISSING)
    return EvalReport(
        micro_accuracy=(n_correct / n if n else 0.0),
        n_queries=n,
        n_correct=n_correct,
        n_gold_missing=n_gold_missing,
        frequency_buckets=[freq_rows[label] for label, _, _ in FREQUENCY_BUCKETS],
        doc_mention_buckets=[doc_rows[label] for label, _, _ in DOC_MENTION_BUCKETS],
    )


def ablation_eval(
    model: LmModel,
    vocab: Vocabulary,
    alphabet,
    inventory: EntityInventory,
    priors: CandidateTable,
    cfg: RunConfig,
    train_paragraphs: list[Paragraph],
    eval_paragraphs: list[Paragraph],
) -> dict[str, EvalReport]:
    """Retrain the ranker once per feature-ablation combination and evaluate.

    Combinations: full, -prior, -lexical, -both.  Features are removed by
    rebuilding the scorer without the corresponding bin blocks, never by
    zeroing them at inference.
    """
    combos = {
        "full": (True, True),
        "-prior": (False, True),
        "-lexical": (True, False),
        "-both": (False, False),
    }
    out = {}
    for label, (use_prior, use_lexical) in combos.items():
        run_cfg = replace(cfg, use_prior=use_prior, use_lexical=use_lexical)
        ranker = RankerModel.create(
            run_cfg, model.d_h, model.d_h, SeededRng(run_cfg.seed).derive("ranker-init")
        )
        dis = Disambiguator(model, ranker, vocab, alphabet, inventory, priors, run_cfg)
        train_ranker(dis, build_queries(train_paragraphs, priors, inventory))
        records, _ = evaluate(dis, build_queries(eval_paragraphs, priors, inventory))
        out[label] = build_report(records, inventory, eval_paragraphs)
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def dump_predictions(records: list[PredictionRecord]) -> str:
    lines = [
        f"{r.doc_id}\t{r.mention_index}\t{r.gold}\t{r.predicted}\t{r.score!r}"
        for r in records
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def load_predictions(path) -> list[PredictionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 tab-separated fields")
            try:
                records.append(
                    PredictionRecord(parts[0], int(parts[1]), parts[2], parts[3], float(parts[4]))
                )
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return records


def render_report(report: EvalReport) -> str:
    lines = [
        f"queries           {report.n_queries}",
        f"correct           {report.n_correct}",
        f"gold missing      {report.n_gold_missing}",
        f"micro accuracy    {report.micro_accuracy:.4f}",
        "",
        "gold-entity training frequency",
    ]
    for row in report.frequency_buckets:
        lines.append(f"  {row.label:<8} n={row.n:<6} acc={row.accuracy:.4f}")
    lines.append("mentions per document")
    for row in report.doc_mention_buckets:
        lines.append(f"  {row.label:<8} n={row.n:<6} acc={row.accuracy:.4f}")
    return "\n".join(lines) + "\n"
