"""Shared fixtures: small corpora and trained models reused across modules."""

import pytest

from nedlm.config import RunConfig
from nedlm.corpus import CharAlphabet, SynthSpec, build_priors, split, synth_corpus
from nedlm.encoder import build_lm_model
from nedlm.entity_lm import init_entity_embeddings, train_lm
from nedlm.rng import SeededRng


def small_config(**overrides) -> RunConfig:
    base = dict(
        seed=13,
        d_char=6,
        max_token_chars=8,
        conv_widths=(1, 2),
        conv_filters=3,
        d_tok=8,
        d_h=8,
        layers=2,
        lm_config="b",
        lm_epochs=3,
        n_neg_words=8,
        n_neg_entities=4,
        bins_prior=4,
        bins_lexical=3,
        dropout=0.5,
        ranker_epochs=8,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def small_world():
    """A 8-entity corpus with an LM trained for a few epochs; shared read-only."""
    spec = SynthSpec(
        n_entities=8, n_paragraphs=48, ambiguity=2, vocab_size=80, seed=5
    )
    paragraphs, inventory, vocab = synth_corpus(spec)
    alphabet = CharAlphabet.build(paragraphs, extra_tokens=inventory.titles)
    cfg = small_config(lm_epochs=8)
    model = build_lm_model(len(vocab), len(alphabet), len(inventory), cfg, SeededRng(cfg.seed))
    init_entity_embeddings(inventory, vocab, model)
    train_lm(paragraphs, model, vocab, alphabet, inventory, cfg)
    priors = build_priors(paragraphs, inventory)
    return {
        "spec": spec,
        "paragraphs": paragraphs,
        "inventory": inventory,
        "vocab": vocab,
        "alphabet": alphabet,
        "cfg": cfg,
        "model": model,
        "priors": priors,
    }


@pytest.fixture(scope="session")
def acceptance_world():
    """The tiny-corpus training oracle: 25 entities, ambiguity 2, 200 paragraphs."""
    import time

    t0 = time.monotonic()
    spec = SynthSpec(
        n_entities=25, n_paragraphs=200, ambiguity=2, vocab_size=300, seed=13
    )
    paragraphs, inventory, vocab = synth_corpus(spec)
    train, dev, test = split(paragraphs, (0.8, 0.1, 0.1), seed=13)
    inventory.recount_frequencies(train)
    priors = build_priors(train, inventory)
    alphabet = CharAlphabet.build(train, extra_tokens=inventory.titles)
    cfg = RunConfig(lm_config="b", lm_epochs=30, ranker_epochs=30, seed=13)
    model = build_lm_model(len(vocab), len(alphabet), len(inventory), cfg, SeededRng(cfg.seed))
    init_entity_embeddings(inventory, vocab, model)

    sphere_deviation = [0.0]

    def watch_sphere(m, touched):
        import numpy as np

        if touched:
            rows = m.entity_table.values[sorted(touched)]
            norms = np.linalg.norm(rows, axis=1)
            sphere_deviation[0] = max(sphere_deviation[0], float(np.abs(norms - 1.0).max()))

    trace = train_lm(train, model, vocab, alphabet, inventory, cfg, step_hook=watch_sphere)
    return {
        "spec": spec,
        "train": train,
        "dev": dev,
        "test": test,
        "inventory": inventory,
        "vocab": vocab,
        "alphabet": alphabet,
        "cfg": cfg,
        "model": model,
        "priors": priors,
        "trace": trace,
        "sphere_deviation": sphere_deviation[0],
        "lm_seconds": time.monotonic() - t0,
    }
