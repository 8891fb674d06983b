"""End-to-end command wiring: every subcommand, error paths, determinism."""

import os

import numpy as np
import pytest

import nedlm.gradsuite as gradsuite
from nedlm.checkpoint import load_checkpoint
from nedlm.cli import main


SYNTH_SPEC = """\
n_entities=6
n_paragraphs=24
ambiguity=2
vocab_size=60
seed=11
"""

LM_OVERRIDES = """\
d_char=5
max_token_chars=8
conv_widths=1,2
conv_filters=3
d_tok=8
d_h=8
lm_epochs=2
n_neg_words=8
n_neg_entities=3
bins_prior=4
bins_lexical=3
ranker_epochs=3
dropout=0.5
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> train-lm -> train-ranker -> eval, shared by the read-only tests."""
    root = tmp_path_factory.mktemp("pipeline")
    spec = root / "synth.kv"
    spec.write_text(SYNTH_SPEC)
    overrides = root / "lm.kv"
    overrides.write_text(LM_OVERRIDES)
    data = root / "data"
    lm = root / "lm"
    rank = root / "rank"
    ev = root / "ev"
    assert main(["synth", "--spec", str(spec), "--out", str(data)]) == 0
    assert main([
        "train-lm", "--corpus", str(data / "corpus.jsonl"),
        "--inventory", str(data / "inventory.tsv"),
        "--config", "b", "--config-file", str(overrides), "--out", str(lm),
    ]) == 0
    assert main([
        "train-ranker", "--lm-checkpoint", str(lm / "checkpoint.bin"),
        "--corpus", str(data / "corpus.jsonl"),
        "--candidates", str(data / "candidates.tsv"),
        "--config-file", str(overrides), "--out", str(rank),
    ]) == 0
    assert main([
        "eval", "--checkpoint", str(rank / "checkpoint.bin"),
        "--corpus", str(data / "corpus.jsonl"),
        "--candidates", str(data / "candidates.tsv"), "--out", str(ev),
    ]) == 0
    return {"root": root, "data": data, "lm": lm, "rank": rank, "ev": ev,
            "spec": spec, "overrides": overrides}


class TestPipelineOutputs:
    def test_synth_outputs_exist(self, pipeline):
        for name in ("corpus.jsonl", "inventory.tsv", "candidates.tsv", "synth.kv"):
            assert (pipeline["data"] / name).exists()

    def test_every_output_dir_has_config(self, pipeline):
        for key in ("lm", "rank", "ev"):
            assert (pipeline[key] / "config.kv").exists()

    def test_trace_format(self, pipeline):
        lines = (pipeline["lm"] / "trace.tsv").read_text().splitlines()
        assert lines[0].startswith("#")
        for line in lines[1:]:
            epoch, ll_w, ll_e, total = line.split("\t")
            assert abs(float(ll_w) + float(ll_e) - float(total)) < 1e-9

    def test_predictions_format(self, pipeline):
        lines = (pipeline["ev"] / "predictions.tsv").read_text().splitlines()
        assert lines
        for line in lines:
            doc_id, idx, gold, predicted, score = line.split("\t")
            int(idx)
            float(score)

    def test_report_command_prints_buckets(self, pipeline, capsys):
        assert main([
            "report", "--buckets",
            "--predictions", str(pipeline["ev"] / "predictions.tsv"),
            "--inventory", str(pipeline["data"] / "inventory.tsv"),
            "--corpus", str(pipeline["data"] / "corpus.jsonl"),
        ]) == 0
        out = capsys.readouterr().out
        assert "micro accuracy" in out
        assert ">=51" in out and ">=20" in out

    def test_priors_command_reports_recall(self, pipeline, capsys, tmp_path):
        assert main([
            "priors", "--corpus", str(pipeline["data"] / "corpus.jsonl"),
            "--inventory", str(pipeline["data"] / "inventory.tsv"),
            "--out", str(tmp_path / "p"),
        ]) == 0
        out = capsys.readouterr().out
        assert "candidate recall: 1.0000" in out
        assert (tmp_path / "p" / "candidates.tsv").exists()


class TestFreezeContract:
    def test_config_a_preserves_non_entity_bytes(self, pipeline, tmp_path):
        data = pipeline["data"]
        out_a = tmp_path / "lm_a"
        assert main([
            "train-lm", "--corpus", str(data / "corpus.jsonl"),
            "--inventory", str(data / "inventory.tsv"),
            "--config", "a", "--config-file", str(pipeline["overrides"]),
            "--out", str(out_a),
        ]) == 0
        trained = load_checkpoint(out_a / "checkpoint.bin")
        cfg = trained.config

        # rebuild the untrained initialization with the same seed and extents
        from nedlm.cli import _world_from_meta
        from nedlm.config import RunConfig
        from nedlm.encoder import build_lm_model
        from nedlm.entity_lm import init_entity_embeddings
        from nedlm.rng import SeededRng

        vocab, alphabet, inventory = _world_from_meta(trained.meta)
        fresh = build_lm_model(
            len(vocab), len(alphabet), len(inventory), RunConfig.from_dict(cfg), SeededRng(cfg["seed"])
        )
        init_entity_embeddings(inventory, vocab, fresh)
        changed = []
        for p in fresh.parameters():
            same = trained.params[p.id].values.tobytes() == p.values.tobytes()
            if not same:
                changed.append(p.id)
        assert changed == ["out.entities"]


class TestDeterminism:
    def test_eval_twice_identical_predictions(self, pipeline, tmp_path):
        ev2 = tmp_path / "ev2"
        assert main([
            "eval", "--checkpoint", str(pipeline["rank"] / "checkpoint.bin"),
            "--corpus", str(pipeline["data"] / "corpus.jsonl"),
            "--candidates", str(pipeline["data"] / "candidates.tsv"),
            "--out", str(ev2),
        ]) == 0
        a = (pipeline["ev"] / "predictions.tsv").read_bytes()
        b = (ev2 / "predictions.tsv").read_bytes()
        assert a == b


class TestErrorPaths:
    def test_missing_corpus_is_one_line_error(self, capsys):
        code = main([
            "priors", "--corpus", "/nonexistent/c.jsonl",
            "--inventory", "/nonexistent/i.tsv", "--out", "/tmp/never",
        ])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert len(err.strip().splitlines()) == 1

    def test_malformed_corpus_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("this is not json\n")
        inv = tmp_path / "inv.tsv"
        inv.write_text("E0\ttitle\t0\n")
        code = main([
            "priors", "--corpus", str(bad), "--inventory", str(inv),
            "--out", str(tmp_path / "out"),
        ])
        assert code == 1
        assert ":1" in capsys.readouterr().err

    def test_eval_ablation_mismatch_rejected(self, pipeline, tmp_path, capsys):
        code = main([
            "eval", "--checkpoint", str(pipeline["rank"] / "checkpoint.bin"),
            "--corpus", str(pipeline["data"] / "corpus.jsonl"),
            "--candidates", str(pipeline["data"] / "candidates.tsv"),
            "--ablate-prior", "--out", str(tmp_path / "ev3"),
        ])
        assert code == 1
        assert "retrain" in capsys.readouterr().err


class TestAblatedRankerPipeline:
    def test_train_and_eval_ablated(self, pipeline, tmp_path):
        rank2 = tmp_path / "rank_np"
        ev2 = tmp_path / "ev_np"
        assert main([
            "train-ranker", "--lm-checkpoint", str(pipeline["lm"] / "checkpoint.bin"),
            "--corpus", str(pipeline["data"] / "corpus.jsonl"),
            "--candidates", str(pipeline["data"] / "candidates.tsv"),
            "--config-file", str(pipeline["overrides"]),
            "--ablate-prior", "--out", str(rank2),
        ]) == 0
        assert main([
            "eval", "--checkpoint", str(rank2 / "checkpoint.bin"),
            "--corpus", str(pipeline["data"] / "corpus.jsonl"),
            "--candidates", str(pipeline["data"] / "candidates.tsv"),
            "--ablate-prior", "--out", str(ev2),
        ]) == 0
        assert (ev2 / "predictions.tsv").exists()


class TestGradcheckCommand:
    def test_exit_zero_on_reduced_suite(self, monkeypatch, capsys):
        reduced = tuple((name, fn, 1) for name, fn, _ in gradsuite.SUITE[:4])
        monkeypatch.setattr(gradsuite, "SUITE", reduced)
        assert main(["gradcheck", "--seed", "33"]) == 0
        out = capsys.readouterr().out
        assert "worst" in out

    def test_exit_nonzero_on_failure(self, monkeypatch, capsys):
        def broken(seed):
            return 1.0  # far above tolerance

        monkeypatch.setattr(gradsuite, "SUITE", (("broken", broken, 2),))
        assert main(["gradcheck"]) == 1
        assert "FAILED" in capsys.readouterr().out
