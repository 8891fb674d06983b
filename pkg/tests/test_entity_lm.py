"""Target plans, the entity-aware objective, and the LM training loop."""

import numpy as np
import pytest

from nedlm.corpus import EntityInventory, Mention, Paragraph, Vocabulary
from nedlm.encoder import encode
from nedlm.entity_lm import (
    ENTITY,
    WORD,
    apply_freeze_policy,
    build_target_plan,
    init_entity_embeddings,
    lm_loss,
    negatives_for,
    paragraph_loss,
    train_lm,
)
from nedlm.errors import InitializationError
from nedlm.gradcheck import max_rel_err
from nedlm.gradsuite import _tiny_world
from nedlm.kernels import sampled_softmax_loss
from nedlm.rng import SeededRng

from oracles import nonoverlapping_mention_placements, plan_walker


def make_world(n_entities=4, tokens=None):
    tokens = tokens or [f"tok{i}" for i in range(12)]
    paragraphs = [Paragraph("w", tokens, [])]
    vocab = Vocabulary.build(paragraphs)
    inv = EntityInventory()
    for e in range(n_entities):
        inv.add(f"E{e}", f"tok{e}")
    return vocab, inv


def paragraph_with(tokens, spans):
    mentions = [Mention.from_span(tokens, s, e, ent) for s, e, ent in spans]
    p = Paragraph("p", tokens, mentions)
    p.validate()
    return p


class TestTargetPlan:
    def test_interval_rule_mid_paragraph(self):
        # nine tokens, mention [3,5] -> forward entity at 2..4, backward at 4..6
        vocab, inv = make_world()
        tokens = [f"tok{i}" for i in range(1, 10)]
        p = paragraph_with(tokens, [(3, 5, "E3")])
        plan = build_target_plan(p, vocab, inv)
        e3 = inv.id_of("E3")
        assert [k for k, t in enumerate(plan.forward) if t == (ENTITY, e3)] == [2, 3, 4]
        assert [k for k, t in enumerate(plan.backward) if t == (ENTITY, e3)] == [4, 5, 6]
        assert plan.forward[1] == (WORD, vocab.id("tok2"))

    def test_mention_free_plan_is_plain_bidirectional(self):
        vocab, inv = make_world()
        tokens = ["tok1", "tok2", "tok3"]
        plan = build_target_plan(paragraph_with(tokens, []), vocab, inv)
        ids = [vocab.bos_id] + [vocab.id(t) for t in tokens] + [vocab.eos_id]
        assert plan.forward == [(WORD, ids[1]), (WORD, ids[2]), (WORD, ids[3]), (WORD, ids[4]), None]
        assert plan.backward == [None, (WORD, ids[0]), (WORD, ids[1]), (WORD, ids[2]), (WORD, ids[3])]

    def test_mention_at_start_reaches_bos_position(self):
        vocab, inv = make_world()
        p = paragraph_with(["tok1", "tok2", "tok3"], [(1, 1, "E3")])
        plan = build_target_plan(p, vocab, inv)
        e3 = inv.id_of("E3")
        assert plan.forward[0] == (ENTITY, e3)
        assert plan.backward[2] == (ENTITY, e3)

    def test_mention_at_end_reaches_eos_position(self):
        vocab, inv = make_world()
        p = paragraph_with(["tok1", "tok2", "tok3"], [(3, 3, "E2")])
        plan = build_target_plan(p, vocab, inv)
        e2 = inv.id_of("E2")
        assert plan.forward[2] == (ENTITY, e2)
        assert plan.backward[4] == (ENTITY, e2)

    def test_exhaustive_equivalence_with_walker(self):
        # every paragraph length up to 6, every non-overlapping placement
        vocab, inv = make_world()
        checked = 0
        for t in range(1, 7):
            tokens = [f"tok{i}" for i in range(1, t + 1)]
            for placement in nonoverlapping_mention_placements(t):
                spans = [
                    (s, e, f"E{i % 4}") for i, (s, e) in enumerate(placement)
                ]
                p = paragraph_with(tokens, spans)
                assert build_target_plan(p, vocab, inv) == plan_walker(p, vocab, inv)
                checked += 1
        assert checked == 376  # all placements for T = 1..6, empty ones included


class TestLmLoss:
    def test_config_c_mention_free_is_zero_with_zero_gradient(self):
        paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(60)
        cfg.lm_config = "c"
        bare = Paragraph("bare", paragraphs[0].tokens, [])
        breakdown = paragraph_loss(
            bare, model, vocab, alphabet, inventory, cfg, SeededRng(1)
        )
        assert breakdown.total.item() == 0.0
        for p in model.parameters():
            p.zero_grad()
        breakdown.total.backward()
        for p in model.parameters():
            assert p.grad is None or not np.any(p.grad)

    def test_entity_term_count_follows_span(self):
        paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(61)
        tokens = list(paragraphs[0].tokens) + ["w0001", "w0002", "w0003"]
        p = paragraph_with(tokens, [(2, 4, inventory.names[0])])
        breakdown = paragraph_loss(p, model, vocab, alphabet, inventory, cfg, SeededRng(2))
        assert breakdown.n_entity_terms == 6  # |I| + |J| for a 3-token span
        t = len(tokens)
        assert breakdown.n_word_terms == 2 * (t + 1) - 6

    def test_additivity_total_equals_words_plus_entities(self):
        paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(62)
        for p in paragraphs:
            breakdown = paragraph_loss(p, model, vocab, alphabet, inventory, cfg, SeededRng(3))
            assert abs(
                breakdown.total.item() - (breakdown.words.item() + breakdown.entities.item())
            ) < 1e-12

    def test_word_part_equals_independent_word_only_recomputation(self):
        paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(63)
        p = paragraphs[1]
        rng = SeededRng(4)
        breakdown = paragraph_loss(p, model, vocab, alphabet, inventory, cfg, rng)

        # independent pass: walk the plan and score word targets directly
        plan = build_target_plan(p, vocab, inventory)
        encoded = encode(p.tokens, model, alphabet, cfg.max_token_chars)
        vocab_size = model.word_table.values.shape[0]
        n_neg = min(cfg.n_neg_words, vocab_size - 1)
        total = 0.0
        for direction, side in (("f", plan.forward), ("b", plan.backward)):
            for k, target in enumerate(side):
                if target is None or target[0] != WORD:
                    continue
                ctx = encoded.final_forward(k) if direction == "f" else encoded.final_backward(k)
                negs = negatives_for(rng, direction, k, WORD, target[1], vocab_size, n_neg)
                total += sampled_softmax_loss(ctx, target[1], model.word_table, negs).item()
        assert breakdown.words.item() == pytest.approx(total, abs=1e-12)

    def test_config_c_leaves_word_table_out_of_graph(self):
        paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(64)
        cfg.lm_config = "c"
        breakdown = paragraph_loss(
            paragraphs[0], model, vocab, alphabet, inventory, cfg, SeededRng(5)
        )
        for p in model.parameters():
            p.zero_grad()
        breakdown.total.backward()
        assert model.word_table.grad is None
        assert model.entity_table.grad is not None

    def test_full_loss_gradcheck(self):
        paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(65)
        p = paragraphs[0]

        def loss():
            return paragraph_loss(
                p, model, vocab, alphabet, inventory, cfg, SeededRng(6)
            ).total

        assert max_rel_err(loss, model.parameters()) < 1e-4


class TestEntityInit:
    def _model_with_word_rows(self, titles, word_rows):
        """A model whose word table is handcrafted; entities from ``titles``.

        Placeholder tokens A and B in titles/word_rows are remapped onto
        words guaranteed to exist in the fixture vocabulary.
        """
        from nedlm.params import make_parameter

        paragraphs, _, vocab, alphabet, cfg, model = _tiny_world(66)
        real = {"A": vocab.words[5], "B": vocab.words[6]}
        assert real["A"] != real["B"]
        w = np.zeros_like(model.word_table.values)
        for token, row in word_rows.items():
            w[vocab.id(real[token]), : len(row)] = row
        model.word_table = make_parameter("out.words", w)
        inv = EntityInventory()
        for i, title in enumerate(titles):
            mapped = " ".join(real.get(t, t) for t in title.split()) or title
            inv.add(f"X{i}", mapped)
        model.entity_table = make_parameter(
            "out.entities", np.zeros((len(titles), model.d_h))
        )
        return vocab, inv, model

    def test_single_token_title_is_normalized_row(self):
        vocab, inv, model = self._model_with_word_rows(
            ["A"], {"A": [3.0, 4.0]}
        )
        init_entity_embeddings(inv, vocab, model)
        expected = np.zeros(model.d_h)
        expected[0], expected[1] = 0.6, 0.8
        np.testing.assert_allclose(model.entity_table.values[0], expected, atol=1e-15)

    def test_repeated_title_token_equals_single(self):
        vocab, inv, model = self._model_with_word_rows(
            ["A A", "A"], {"A": [3.0, 4.0]}
        )
        init_entity_embeddings(inv, vocab, model)
        np.testing.assert_array_equal(
            model.entity_table.values[0], model.entity_table.values[1]
        )

    def test_orthonormal_pair_averages_to_diagonal(self):
        vocab, inv, model = self._model_with_word_rows(
            ["A B"], {"A": [1.0, 0.0], "B": [0.0, 1.0]}
        )
        init_entity_embeddings(inv, vocab, model)
        expected = np.zeros(model.d_h)
        expected[0] = expected[1] = 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(model.entity_table.values[0], expected, atol=1e-12)

    def test_blank_title_raises(self):
        vocab, inv, model = self._model_with_word_rows(
            [" "], {"A": [1.0, 0.0]}
        )
        with pytest.raises(InitializationError):
            init_entity_embeddings(inv, vocab, model)


class TestTrainLm:
    def test_config_a_freezes_everything_but_entities(self):
        paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(69)
        cfg.lm_config = "a"
        cfg.lm_epochs = 2
        before = {
            p.id: p.values.tobytes() for p in model.parameters() if p.id != "out.entities"
        }
        entity_before = model.entity_table.values.copy()
        train_lm(paragraphs, model, vocab, alphabet, inventory, cfg)
        for p in model.parameters():
            if p.id != "out.entities":
                assert p.values.tobytes() == before[p.id], p.id
        assert not np.array_equal(model.entity_table.values, entity_before)

    def test_same_seed_identical_final_parameters(self):
        results = []
        for _ in range(2):
            paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(70)
            cfg.lm_epochs = 2
            train_lm(paragraphs, model, vocab, alphabet, inventory, cfg)
            results.append({p.id: p.values.copy() for p in model.parameters()})
        for pid in results[0]:
            np.testing.assert_array_equal(results[0][pid], results[1][pid])

    def test_unit_sphere_holds_after_every_step(self):
        paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(71)
        cfg.lm_epochs = 2
        worst = [0.0]

        def hook(m, touched):
            if touched:
                rows = m.entity_table.values[sorted(touched)]
                norms = np.linalg.norm(rows, axis=1)
                worst[0] = max(worst[0], float(np.abs(norms - 1.0).max()))

        train_lm(paragraphs, model, vocab, alphabet, inventory, cfg, step_hook=hook)
        assert worst[0] < 1e-9

    def test_loss_trace_decreases_on_synthetic_corpus(self, small_world):
        # trained in the fixture for a few epochs; recompute trace by rerunning
        from nedlm.corpus import SynthSpec, synth_corpus, CharAlphabet
        from nedlm.encoder import build_lm_model
        from conftest import small_config

        spec = SynthSpec(n_entities=6, n_paragraphs=30, ambiguity=2, vocab_size=60, seed=9)
        paragraphs, inventory, vocab = synth_corpus(spec)
        alphabet = CharAlphabet.build(paragraphs, extra_tokens=inventory.titles)
        cfg = small_config(lm_epochs=12)
        model = build_lm_model(len(vocab), len(alphabet), len(inventory), cfg, SeededRng(9))
        init_entity_embeddings(inventory, vocab, model)
        trace = train_lm(paragraphs, model, vocab, alphabet, inventory, cfg)
        assert trace[-1].loss_total < trace[0].loss_total

    def test_freeze_policy_flags(self):
        paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(72)
        apply_freeze_policy(model, "a")
        assert model.entity_table.trainable
        assert not model.word_table.trainable
        apply_freeze_policy(model, "b")
        assert all(p.trainable for p in model.parameters())


class TestNegativeSampling:
    def test_unigram_draws_follow_counts(self):
        from nedlm.entity_lm import NegativeSampler, negatives_for

        paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(73)
        sampler = NegativeSampler.build("unigram", paragraphs, vocab, inventory)
        assert sampler.word_probs is not None
        assert sampler.word_probs.shape == (len(vocab),)
        assert sampler.word_probs.sum() == pytest.approx(1.0, abs=1e-12)
        rng = SeededRng(0)
        v = len(vocab)
        counts = np.zeros(v)
        for trial in range(300):
            negs = negatives_for(
                rng.derive(trial), "f", 0, WORD, 3, v, 4, sampler.word_probs
            )
            assert 3 not in negs
            assert len(set(int(n) for n in negs)) == 4
            counts[negs] += 1
        # ids that actually occur in text should be drawn more than smoothing-only ids
        top = int(np.argmax(sampler.word_probs))
        assert counts[top] > counts.mean()

    def test_unigram_mode_trains_deterministically(self):
        finals = []
        for _ in range(2):
            paragraphs, inventory, vocab, alphabet, cfg, model = _tiny_world(74)
            cfg.neg_sampling = "unigram"
            cfg.lm_epochs = 1
            train_lm(paragraphs, model, vocab, alphabet, inventory, cfg)
            finals.append(model.entity_table.values.copy())
        np.testing.assert_array_equal(finals[0], finals[1])

    def test_uniform_draw_excludes_target_and_is_distinct(self):
        from nedlm.entity_lm import negatives_for

        rng = SeededRng(1)
        for trial in range(200):
            negs = negatives_for(rng.derive(trial), "b", 2, WORD, 5, 12, 6)
            assert 5 not in negs
            assert len(set(int(n) for n in negs)) == 6
