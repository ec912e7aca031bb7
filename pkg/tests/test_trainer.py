import json

import numpy as np
import pytest

from topiceq import corpus, trainer
from topiceq.errors import BadMagic, EmptyBatch, TruncatedFile, VersionMismatch
from topiceq.gradcore import ParamStore, Rng, finite_diff_check, Tape
from topiceq.trainer import (
    TrainConfig,
    build_batch_loss,
    canonical_config_json,
    elbo_loss,
    encode_pairs,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
    write_metrics_log,
)

from conftest import tiny_config


class TestElboLoss:
    def test_breakdown_identity_exact(self, small_vocabs, encoded_pair):
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab)
        store = init_params(config, Rng(0))
        eps = Rng(1).normal((1, config.K))
        bd = elbo_loss(encoded_pair, store, config, eps)
        assert bd.total == -bd.bow_ll + bd.kl - bd.eq_ll + config.lambda_div * bd.diversity

    def test_frozen_eps_reproducible(self, small_vocabs, encoded_pair):
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab)
        store = init_params(config, Rng(0))
        eps = Rng(1).normal((1, config.K))
        a = elbo_loss(encoded_pair, store, config, eps)
        b = elbo_loss(encoded_pair, store, config, eps)
        assert a == b

    def test_zero_lambda_div(self, small_vocabs, encoded_pair):
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab, lambda_div=0.0)
        store = init_params(config, Rng(0))
        bd = elbo_loss(encoded_pair, store, config, np.zeros((1, config.K)))
        assert bd.total == -(bd.bow_ll - bd.kl + bd.eq_ll)

    def test_requires_nonempty_pair(self, small_vocabs):
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab)
        store = init_params(config, Rng(0))
        empty = trainer.EncodedPair(
            bow=corpus.SparseBow.from_counts({}), eq_ids=np.array([3, 4])
        )
        with pytest.raises(ValueError):
            elbo_loss(empty, store, config, np.zeros((1, config.K)))

    def test_kl_term_nonnegative_for_random_params(self, small_vocabs, encoded_pair):
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab)
        for seed in range(5):
            store = init_params(config, Rng(seed))
            bd = elbo_loss(encoded_pair, store, config, Rng(seed + 50).normal((1, config.K)))
            assert bd.kl >= 0.0

    def test_gradient_matches_finite_differences_tiny(self, small_vocabs, encoded_pair):
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab, width=4, embed_dim=3, enc_hidden=4)
        store = init_params(config, Rng(2))
        eps = Rng(3).normal((1, config.K))

        def build():
            tape = Tape()
            loss, _ = build_batch_loss(
                tape, store, config, [encoded_pair], eps, Rng(7), train=True
            )
            return tape, loss

        report = finite_diff_check(build, store, step=1e-5, tol=1e-4, coords_per_tensor=12)
        assert report.passed, report.per_tensor


class TestTrainLoop:
    def test_zero_lr_fixed_point(self, small_synthetic, small_vocabs):
        _, split = small_synthetic
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab, lr=1e-300, epochs=1)
        before = init_params(config, Rng(config.seed)).copy_values()
        result = train(config, split)
        for name, value in before.items():
            np.testing.assert_allclose(result.store.values[name], value, atol=1e-280)

    def test_same_seed_bitwise_identical(self, small_synthetic, small_vocabs):
        _, split = small_synthetic
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab, epochs=2)
        a = train(config, split)
        b = train(config, split)
        for name in a.store.names():
            np.testing.assert_array_equal(a.store.values[name], b.store.values[name])
        assert a.metrics == b.metrics

    def test_validation_perplexity_decreases_early(self, small_synthetic, small_vocabs):
        _, split = small_synthetic
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab, epochs=5, lr=0.005)
        result = train(config, split)
        ppls = [m["valid_ppl"] for m in result.metrics]
        assert all(b < a for a, b in zip(ppls, ppls[1:])), ppls

    def test_clipped_norm_bounded_before_every_step(
        self, small_synthetic, small_vocabs, monkeypatch
    ):
        _, split = small_synthetic
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab, epochs=1, clip=0.5)
        seen = []
        real_adam = trainer.adam_step

        def spy(store, lr, **kwargs):
            total = sum(float((g * g).sum()) for g in store.grads.values())
            seen.append(np.sqrt(total))
            real_adam(store, lr, **kwargs)

        monkeypatch.setattr(trainer, "adam_step", spy)
        train(config, split)
        assert seen and all(n <= config.clip + 1e-12 for n in seen)

    def test_metrics_log_schema(self, tiny_trained, tmp_path):
        result, _ = tiny_trained
        path = tmp_path / "metrics.jsonl"
        write_metrics_log(result.metrics, str(path))
        lines = path.read_text().strip().split("\n")
        assert len(lines) == len(result.metrics)
        for i, line in enumerate(lines, 1):
            rec = json.loads(line)
            assert set(rec) == {"epoch", "train_loss", "valid_ppl", "kl_mean"}
            assert rec["epoch"] == i

    def test_variant_validation(self, small_vocabs):
        word_vocab, math_vocab = small_vocabs
        with pytest.raises(ValueError):
            tiny_config(word_vocab, math_vocab, variant="NOPE").validate()

    def test_all_empty_bows_raise(self, small_vocabs):
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab, epochs=1)
        blank = [
            corpus.ContextEqPair(("the of.",) * 5, ("and or.",) * 5, ("E", "[", "X", "]") * 5)
            for _ in range(6)
        ]
        split = corpus.CorpusSplit(train=blank, valid=[], test=[])
        with pytest.raises(EmptyBatch):
            train(config, split)

    def test_context_only_variant_trains(self, small_synthetic, small_vocabs):
        _, split = small_synthetic
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab, variant="CONTEXT_ONLY", epochs=1)
        result = train(config, split)
        assert not any(n.startswith("eq.") for n in result.store.names())
        assert result.metrics[0]["valid_ppl"] > 0

    def test_fixed_topic_concat_freezes_topic_side(self, small_synthetic, small_vocabs):
        _, split = small_synthetic
        word_vocab, math_vocab = small_vocabs
        ctx = train(tiny_config(word_vocab, math_vocab, variant="CONTEXT_ONLY", epochs=1),
                    split)
        config = tiny_config(word_vocab, math_vocab, variant="FIXED_TOPIC_CONCAT", epochs=1)
        result = train(config, split, pretrained_topic=ctx.store)
        for name in result.store.names():
            if name.startswith(("enc.", "gmap.", "topics.")):
                np.testing.assert_array_equal(
                    result.store.values[name], ctx.store.values[name]
                )

    def test_fixed_topic_concat_requires_pretrained(self, small_synthetic, small_vocabs):
        _, split = small_synthetic
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab, variant="FIXED_TOPIC_CONCAT", epochs=1)
        with pytest.raises(ValueError):
            train(config, split)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tiny_trained, tmp_path):
        result, _ = tiny_trained
        path = str(tmp_path / "model.teq")
        save_checkpoint(path, result.store, result.config.to_dict())
        store, config_dict = load_checkpoint(path)
        assert store.names() == result.store.names()
        for name in store.names():
            np.testing.assert_array_equal(store.values[name], result.store.values[name])
        assert config_dict == result.config.to_dict()

    def test_config_json_byte_exact(self, tiny_trained, tmp_path):
        result, _ = tiny_trained
        path = str(tmp_path / "model.teq")
        save_checkpoint(path, result.store, result.config.to_dict())
        raw = open(path, "rb").read()
        blob_len = int.from_bytes(raw[8:12], "little")
        embedded = raw[12 : 12 + blob_len]
        assert embedded == canonical_config_json(result.config.to_dict())
        _, loaded = load_checkpoint(path)
        assert canonical_config_json(loaded) == embedded

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.teq"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(BadMagic):
            load_checkpoint(str(path))

    def test_version_mismatch(self, tiny_trained, tmp_path):
        result, _ = tiny_trained
        path = tmp_path / "model.teq"
        save_checkpoint(str(path), result.store, result.config.to_dict())
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatch):
            load_checkpoint(str(path))

    def test_truncated_file(self, tiny_trained, tmp_path):
        result, _ = tiny_trained
        path = tmp_path / "model.teq"
        save_checkpoint(str(path), result.store, result.config.to_dict())
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(TruncatedFile):
            load_checkpoint(str(path))

    def test_little_endian_layout(self, tmp_path):
        store = ParamStore()
        store.add("w", np.array([[1.0, 2.0]]))
        path = str(tmp_path / "tiny.teq")
        save_checkpoint(path, store, {"family": "topiceq"})
        raw = open(path, "rb").read()
        assert raw[:4] == b"TEQ1"
        assert int.from_bytes(raw[4:8], "little") == 1
