"""Command-line pipeline: synth, priors, train-lm, train-ranker, eval, report, gradcheck.

Every command validates its inputs, writes outputs atomically, persists
the effective configuration next to them, and exits nonzero with a
one-line diagnostic on failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .checkpoint import (
    load_checkpoint,
    restore_values,
    save_checkpoint,
    write_text_atomic,
)
from .config import RunConfig, apply_kv, dump_kv
from .corpus import (
    CandidateTable,
    CharAlphabet,
    EntityInventory,
    SynthSpec,
    Vocabulary,
    build_priors,
    candidate_recall,
    dump_candidates,
    dump_corpus,
    dump_inventory,
    load_candidates,
    load_corpus,
    load_inventory,
    synth_corpus,
)
from .encoder import build_lm_model
from .entity_lm import dump_loss_trace, init_entity_embeddings, train_lm
from .errors import NedlmError, ParameterError
from .evaluation import (
    build_report,
    dump_predictions,
    evaluate,
    load_predictions,
    render_report,
)
from .gradsuite import TOLERANCE, run_suite
from .ranker import Disambiguator, RankerModel, build_queries, train_ranker
from .rng import SeededRng


def _ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def _checkpoint_meta(vocab: Vocabulary, alphabet: CharAlphabet, inventory: EntityInventory) -> dict:
    return {
        "words": vocab.words,
        "chars": alphabet.chars,
        "entity_names": inventory.names,
        "entity_titles": inventory.titles,
        "entity_frequencies": inventory.frequencies,
    }


def _world_from_meta(meta: dict) -> tuple[Vocabulary, CharAlphabet, EntityInventory]:
    vocab = Vocabulary(list(meta["words"]))
    alphabet = CharAlphabet(list(meta["chars"]))
    inventory = EntityInventory()
    for name, title, freq in zip(
        meta["entity_names"], meta["entity_titles"], meta["entity_frequencies"]
    ):
        inventory.add(name, title, int(freq))
    return vocab, alphabet, inventory


def _load_model_checkpoint(path):
    ck = load_checkpoint(path)
    cfg = RunConfig.from_dict(ck.config)
    vocab, alphabet, inventory = _world_from_meta(ck.meta)
    model = build_lm_model(
        len(vocab), len(alphabet), len(inventory), cfg, SeededRng(cfg.seed)
    )
    restore_values(model.parameters(), ck.params)
    return ck, cfg, vocab, alphabet, inventory, model


def _restore_ranker(ck, cfg, model) -> RankerModel:
    ranker = RankerModel.create(cfg, model.d_h, model.d_h, SeededRng(cfg.seed).derive("ranker-init"))
    restore_values(ranker.parameters(), ck.params)
    return ranker


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "config_file", None):
        with open(args.config_file, encoding="utf-8") as fh:
            apply_kv(cfg, fh.read(), args.config_file)
    if getattr(args, "paper_dims", False):
        cfg = cfg.with_paper_dims()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg.lm_epochs = args.epochs
    if getattr(args, "ranker_epochs", None) is not None:
        cfg.ranker_epochs = args.ranker_epochs
    cfg.validate()
    return cfg


def cmd_synth(args) -> int:
    spec = SynthSpec()
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            apply_kv(spec, fh.read(), args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    paragraphs, inventory, vocab = synth_corpus(spec)
    table = build_priors(paragraphs, inventory)
    _ensure_dir(args.out)
    write_text_atomic(os.path.join(args.out, "corpus.jsonl"), dump_corpus(paragraphs))
    write_text_atomic(os.path.join(args.out, "inventory.tsv"), dump_inventory(inventory))
    write_text_atomic(os.path.join(args.out, "candidates.tsv"), dump_candidates(table, inventory))
    write_text_atomic(os.path.join(args.out, "synth.kv"), dump_kv(spec))
    print(
        f"wrote {len(paragraphs)} paragraphs, {len(inventory)} entities, "
        f"{len(vocab)} words to {args.out}"
    )
    return 0


def cmd_priors(args) -> int:
    inventory = load_inventory(args.inventory)
    paragraphs = load_corpus(args.corpus)
    table = build_priors(paragraphs, inventory)
    if args.cap > 0:
        table = table.capped(args.cap)
    recall = candidate_recall(paragraphs, table, inventory)
    _ensure_dir(args.out)
    write_text_atomic(os.path.join(args.out, "candidates.tsv"), dump_candidates(table, inventory))
    print(f"candidate recall: {recall:.4f}")
    return 0


def cmd_train_lm(args) -> int:
    cfg = _apply_overrides(RunConfig(), args)
    cfg.lm_config = args.config
    inventory = load_inventory(args.inventory)
    paragraphs = load_corpus(args.corpus)
    vocab = Vocabulary.build(paragraphs, extra_tokens=[t for ts in inventory.titles for t in ts.split()])
    alphabet = CharAlphabet.build(paragraphs, extra_tokens=inventory.titles)
    model = build_lm_model(len(vocab), len(alphabet), len(inventory), cfg, SeededRng(cfg.seed))
    init_entity_embeddings(inventory, vocab, model)
    trace = train_lm(paragraphs, model, vocab, alphabet, inventory, cfg)
    _ensure_dir(args.out)
    save_checkpoint(
        os.path.join(args.out, "checkpoint.bin"),
        model.parameters(),
        cfg.to_dict(),
        _checkpoint_meta(vocab, alphabet, inventory),
    )
    write_text_atomic(os.path.join(args.out, "trace.tsv"), dump_loss_trace(trace))
    write_text_atomic(os.path.join(args.out, "config.kv"), cfg.dump())
    final = trace[-1] if trace else None
    if final:
        print(
            f"trained config {cfg.lm_config} for {cfg.lm_epochs} epochs; "
            f"final mean loss {final.loss_total:.4f}"
        )
    return 0


def cmd_train_ranker(args) -> int:
    ck, cfg, vocab, alphabet, inventory, model = _load_model_checkpoint(args.lm_checkpoint)
    cfg.use_prior = not args.ablate_prior
    cfg.use_lexical = not args.ablate_lexical
    cfg = _apply_overrides(cfg, args)
    paragraphs = load_corpus(args.corpus)
    table = load_candidates(args.candidates, inventory)
    ranker = RankerModel.create(cfg, model.d_h, model.d_h, SeededRng(cfg.seed).derive("ranker-init"))
    dis = Disambiguator(model, ranker, vocab, alphabet, inventory, table, cfg)
    stats = train_ranker(dis, build_queries(paragraphs, table, inventory))
    _ensure_dir(args.out)
    save_checkpoint(
        os.path.join(args.out, "checkpoint.bin"),
        model.parameters() + ranker.parameters(),
        cfg.to_dict(),
        _checkpoint_meta(vocab, alphabet, inventory),
    )
    write_text_atomic(os.path.join(args.out, "config.kv"), cfg.dump())
    last = stats.epoch_losses[-1] if stats.epoch_losses else float("nan")
    print(
        f"trained ranker on {stats.n_used} queries ({stats.n_skipped} skipped); "
        f"final mean loss {last:.4f}"
    )
    return 0


def cmd_eval(args) -> int:
    ck, cfg, vocab, alphabet, inventory, model = _load_model_checkpoint(args.checkpoint)
    if args.ablate_prior != (not cfg.use_prior) or args.ablate_lexical != (not cfg.use_lexical):
        raise ParameterError(
            "ablation flags do not match the checkpoint "
            f"(trained with use_prior={cfg.use_prior}, use_lexical={cfg.use_lexical}); "
            "retrain the ranker for this configuration"
        )
    ranker = _restore_ranker(ck, cfg, model)
    paragraphs = load_corpus(args.corpus)
    table = load_candidates(args.candidates, inventory)
    dis = Disambiguator(model, ranker, vocab, alphabet, inventory, table, cfg)
    queries = build_queries(paragraphs, table, inventory)
    records, kept = evaluate(dis, queries, gold_in_candidates_only=args.gold_in_candidates_only)
    n_missing = sum(
        1 for q in kept if not any(eid == q.gold_id for eid, _ in q.candidates)
    )
    report = build_report(records, inventory, paragraphs, n_gold_missing=n_missing)
    _ensure_dir(args.out)
    write_text_atomic(os.path.join(args.out, "predictions.tsv"), dump_predictions(records))
    write_text_atomic(os.path.join(args.out, "report.txt"), render_report(report))
    write_text_atomic(os.path.join(args.out, "config.kv"), cfg.dump())
    print(f"micro accuracy: {report.micro_accuracy:.4f} over {report.n_queries} queries")
    return 0


def cmd_report(args) -> int:
    records = load_predictions(args.predictions)
    inventory = load_inventory(args.inventory)
    paragraphs = load_corpus(args.corpus)
    report = build_report(records, inventory, paragraphs)
    text = render_report(report)
    if args.out:
        _ensure_dir(args.out)
        write_text_atomic(os.path.join(args.out, "report.txt"), text)
    print(text, end="")
    return 0


def cmd_gradcheck(args) -> int:
    results, elapsed = run_suite(args.seed)
    by_name: dict[str, float] = {}
    for r in results:
        by_name[r.name] = max(by_name.get(r.name, 0.0), r.max_rel_err)
    for name, err in by_name.items():
        print(f"{name:<16} max rel err {err:.3e}")
    worst = max(r.max_rel_err for r in results)
    failures = [r for r in results if not r.passed]
    print(f"{len(results)} configurations in {elapsed:.1f}s; worst {worst:.3e}")
    if failures:
        print(f"FAILED: {len(failures)} configurations at tolerance {TOLERANCE}")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nedlm",
        description="Entity-aware bidirectional LM and local entity disambiguation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus, inventory, and candidate table")
    p.add_argument("--spec", help="key=value synthesis spec file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("priors", help="build a candidate table with priors from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--cap", type=int, default=30, help="per-mention candidate cap; 0 disables")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_priors)

    p = sub.add_parser("train-lm", help="train the entity-aware language model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--config", choices=("a", "b", "c"), required=True)
    p.add_argument("--config-file", help="key=value overrides for the run configuration")
    p.add_argument("--paper-dims", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_lm)

    p = sub.add_parser("train-ranker", help="train the local disambiguation model")
    p.add_argument("--lm-checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--config-file")
    p.add_argument("--ablate-prior", action="store_true")
    p.add_argument("--ablate-lexical", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--ranker-epochs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_ranker)

    p = sub.add_parser("eval", help="rank candidates and report micro accuracy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--ablate-prior", action="store_true")
    p.add_argument("--ablate-lexical", action="store_true")
    p.add_argument("--gold-in-candidates-only", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="bucketed breakdown from a predictions file")
    p.add_argument("--buckets", action="store_true")
    p.add_argument("--predictions", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference check of every kernel")
    p.add_argument("--seed", type=int, default=20)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NedlmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
