import numpy as np
import pytest

from topiceq import apps
from topiceq.gradcore import Rng
from topiceq.mathtok import detokenize
from topiceq.trainer import init_params

from conftest import tiny_config


class TestGenerateFromTopic:
    def test_invalid_theta_rejected(self, tiny_trained):
        result, _ = tiny_trained
        with pytest.raises(ValueError):
            apps.generate_from_topic(result.store, result.config, np.array([-0.5, 1.0, 0.5]))
        with pytest.raises(ValueError):
            apps.generate_from_topic(result.store, result.config, np.array([0.5, 0.2, 0.2]))

    def test_greedy_samples_identical(self, tiny_trained):
        result, _ = tiny_trained
        out = apps.generate_from_topic(
            result.store, result.config, apps.one_hot(1, 3), n=2, mode="greedy", max_len=40
        )
        assert out[0] == out[1]

    def test_topic_index_validation(self):
        with pytest.raises(ValueError):
            apps.one_hot(3, 3)

    def test_sampled_reproducible(self, tiny_trained):
        result, _ = tiny_trained
        a = apps.generate_from_topic(
            result.store, result.config, apps.one_hot(0, 3), n=3, rng=Rng(12), max_len=40
        )
        b = apps.generate_from_topic(
            result.store, result.config, apps.one_hot(0, 3), n=3, rng=Rng(12), max_len=40
        )
        assert a == b


class TestInterpolateTopics:
    def test_endpoints_bitwise_equal_one_hot_greedy(self, tiny_trained):
        result, _ = tiny_trained
        rows = apps.interpolate_topics(result.store, result.config, 0, 2, steps=5, max_len=40)
        direct0 = apps.generate_from_topic(
            result.store, result.config, apps.one_hot(0, 3), mode="greedy", max_len=40
        )[0]
        direct2 = apps.generate_from_topic(
            result.store, result.config, apps.one_hot(2, 3), mode="greedy", max_len=40
        )[0]
        assert rows[0][0] == 0.0 and rows[0][1] == direct0
        assert rows[-1][0] == 1.0 and rows[-1][1] == direct2

    def test_interpolants_on_simplex_exactly(self, tiny_trained):
        result, _ = tiny_trained
        e1, e2 = apps.one_hot(0, 3), apps.one_hot(1, 3)
        for i in range(7):
            t = i / 6
            theta = (1 - t) * e1 + t * e2
            assert theta.sum() == 1.0 and (theta >= 0).all()

    def test_prefix_carried_through(self, tiny_trained):
        result, _ = tiny_trained
        prefix = ["E", "["]
        rows = apps.interpolate_topics(
            result.store, result.config, 0, 1, steps=3, prefix=prefix, max_len=30
        )
        for _, toks in rows:
            assert toks[:2] == prefix

    def test_steps_validation(self, tiny_trained):
        result, _ = tiny_trained
        with pytest.raises(ValueError):
            apps.interpolate_topics(result.store, result.config, 0, 1, steps=1)


class TestInferEquationTopic:
    def test_single_topic_trivial(self, small_vocabs):
        word_vocab, math_vocab = small_vocabs
        config = tiny_config(word_vocab, math_vocab, K=1)
        store = init_params(config, Rng(2))
        ranking = apps.infer_equation_topic(store, config, "E [ X ] = P [ X ]")
        assert ranking.best == 0

    def test_total_order_and_stability(self, tiny_trained):
        result, _ = tiny_trained
        eq = "E [ X ] \\leq E [ X ]"
        r1 = apps.infer_equation_topic(result.store, result.config, eq, top_n=3)
        r2 = apps.infer_equation_topic(result.store, result.config, eq, top_n=3)
        assert r1.entries == r2.entries
        assert [k for k, _ in r1.entries] == sorted(
            range(3), key=lambda k: (-dict(r1.entries)[k], k)
        )
        lls = [ll for _, ll in r1.entries]
        assert lls == sorted(lls, reverse=True)

    def test_whitespace_invariance(self, tiny_trained):
        result, _ = tiny_trained
        a = apps.infer_equation_topic(result.store, result.config, "E [ X ]")
        b = apps.infer_equation_topic(result.store, result.config, "   E [ X ]  \t")
        assert a.entries == b.entries

    def test_empty_equation_rejected(self, tiny_trained):
        result, _ = tiny_trained
        with pytest.raises(ValueError):
            apps.infer_equation_topic(result.store, result.config, "   ")

    def test_top_words_attached(self, tiny_trained):
        result, _ = tiny_trained
        ranking = apps.infer_equation_topic(
            result.store, result.config, "E [ X ]", top_n=2, words_per_topic=5
        )
        assert len(ranking.entries) == 2
        for k, _ in ranking.entries:
            assert len(ranking.top_words[k]) == 5


class TestGenerateFromContext:
    def test_stopword_context_warns_and_uses_bias_path(self, tiny_trained):
        result, _ = tiny_trained
        with pytest.warns(UserWarning):
            theta, samples = apps.generate_from_context(
                result.store, result.config, "the of and to", n=1,
                rng=Rng(0), max_len=20,
            )
        assert theta.shape == (3,)
        np.testing.assert_allclose(theta.sum(), 1.0, atol=1e-9)
        assert len(samples) == 1

    def test_theta_on_simplex(self, tiny_trained):
        result, _ = tiny_trained
        theta, _ = apps.generate_from_context(
            result.store, result.config,
            "gradient descent convergence objective", n=1, rng=Rng(1), max_len=20,
        )
        np.testing.assert_allclose(theta.sum(), 1.0, atol=1e-9)
        assert (theta >= 0).all()

    def test_returned_samples_detokenizable(self, tiny_trained):
        result, _ = tiny_trained
        _, samples = apps.generate_from_context(
            result.store, result.config, "probability random variance",
            n=2, rng=Rng(2), max_len=30,
        )
        for toks in samples:
            assert isinstance(detokenize(toks), str)
