import numpy as np
import pytest

from topiceq import eqnet
from topiceq.eqnet import (
    EqModelConfig,
    bag_counts,
    bow_eq_log_likelihood,
    init_eq_params,
    sample_equations,
    sequence_log_likelihood,
    te_lstm_step,
    zero_state,
)
from topiceq.gradcore import ParamStore, Rng, Tape, finite_diff_check
from topiceq.mathtok import END_ID, START_ID, UNK_ID


def make_model(variant="TE", V=10, K=3, width=4, embed=5, layers=2, dropout=0.0, seed=3):
    cfg = EqModelConfig(
        variant=variant, vocab_size=V, K=K, layers=layers, width=width,
        embed_dim=embed, dropout=dropout,
    )
    store = ParamStore()
    init_eq_params(store, Rng(seed), cfg)
    return store, cfg


def zero_all(store):
    for v in store.values.values():
        v[:] = 0.0


class TestLstmStep:
    def test_zero_weights_zero_state(self):
        store, cfg = make_model()
        zero_all(store)
        tape = Tape()
        x = tape.const(np.zeros((1, cfg.embed_dim)))
        theta = tape.const(np.array([[1.0, 0.0, 0.0]]))
        state, logits = te_lstm_step(tape, store, cfg, x, zero_state(tape, cfg, 1), theta)
        for h, c in state:
            np.testing.assert_array_equal(h.value, np.zeros((1, cfg.width)))
            np.testing.assert_array_equal(c.value, np.zeros((1, cfg.width)))
        np.testing.assert_array_equal(logits.value, np.zeros((1, cfg.vocab_size)))

    def test_plain_ignores_theta_bitwise(self):
        store, cfg = make_model(variant="PLAIN")
        ids = [np.array([3, 4, 5])]

        def logits_with(theta_row):
            tape = Tape()
            theta = tape.const(theta_row)
            ll, _ = sequence_log_likelihood(tape, store, cfg, ids, theta)
            return ll.value.copy()

        a = logits_with(np.array([[1.0, 0.0, 0.0]]))
        b = logits_with(np.array([[0.0, 0.0, 1.0]]))
        np.testing.assert_array_equal(a, b)

    def test_te_and_td_respond_to_theta(self):
        for variant in ("TE", "TD", "FIXED_TOPIC_CONCAT"):
            store, cfg = make_model(variant=variant)
            ids = [np.array([3, 4, 5])]

            def ll_with(theta_row):
                tape = Tape()
                ll, _ = sequence_log_likelihood(
                    tape, store, cfg, ids, tape.const(theta_row)
                )
                return float(ll.value[0])

            assert ll_with(np.array([[1.0, 0.0, 0.0]])) != ll_with(
                np.array([[0.0, 1.0, 0.0]])
            ), variant

    def test_next_token_distribution_valid(self):
        for variant in ("TE", "TD", "PLAIN"):
            store, cfg = make_model(variant=variant)
            tape = Tape()
            x = tape.const(Rng(1).normal((2, cfg.embed_dim)))
            theta = tape.const(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
            _, logits = te_lstm_step(tape, store, cfg, x, zero_state(tape, cfg, 2), theta)
            probs = tape.softmax(logits).value
            np.testing.assert_allclose(probs.sum(axis=1), np.ones(2), atol=1e-9)
            assert (probs >= 0).all()


class TestSequenceLikelihood:
    def test_uniform_head_closed_form(self):
        store, cfg = make_model()
        zero_all(store)
        ids = [np.array([3, 4, 5, 6])]
        tape = Tape()
        theta = tape.const(np.array([[1.0, 0.0, 0.0]]))
        ll, counts = sequence_log_likelihood(tape, store, cfg, ids, theta)
        assert counts[0] == 5.0  # 4 tokens plus the <END> prediction
        np.testing.assert_allclose(
            ll.value, [-5.0 * np.log(cfg.vocab_size)], rtol=1e-12
        )

    def test_out_of_vocab_id_rejected(self):
        store, cfg = make_model()
        tape = Tape()
        theta = tape.const(np.array([[1.0, 0.0, 0.0]]))
        with pytest.raises(ValueError):
            sequence_log_likelihood(tape, store, cfg, [np.array([99])], theta)

    def test_empty_sequence_rejected(self):
        store, cfg = make_model()
        tape = Tape()
        theta = tape.const(np.array([[1.0, 0.0, 0.0]]))
        with pytest.raises(ValueError):
            sequence_log_likelihood(tape, store, cfg, [np.array([], dtype=int)], theta)

    def test_eval_passes_bitwise_identical(self):
        store, cfg = make_model(dropout=0.5)
        ids = [np.array([3, 4, 5]), np.array([6, 7, 8, 9])]

        def run():
            tape = Tape()
            theta = tape.const(np.eye(3)[:2])
            ll, _ = sequence_log_likelihood(tape, store, cfg, ids, theta, train=False)
            return ll.value.copy()

        np.testing.assert_array_equal(run(), run())

    def test_gradient_check_three_step_sequence(self):
        store, cfg = make_model(width=4, embed=3, V=8, dropout=0.5)
        ids = [np.array([3, 4, 5])]
        theta_row = np.array([[0.6, 0.3, 0.1]])

        def build():
            tape = Tape()
            ll, _ = sequence_log_likelihood(
                tape, store, cfg, ids, tape.const(theta_row), train=True, rng=Rng(42)
            )
            return tape, tape.neg(tape.mean_all(ll))

        report = finite_diff_check(build, store, step=1e-5, tol=1e-4, coords_per_tensor=30)
        assert report.passed, report.per_tensor


class TestBowVariant:
    def test_permutation_invariance_exact(self):
        store, cfg = make_model(variant="BOW")
        theta = np.array([[0.2, 0.5, 0.3]])
        a = [np.array([3, 4, 5, 4])]
        b = [np.array([4, 5, 4, 3])]
        t1, t2 = Tape(), Tape()
        ll_a = bow_eq_log_likelihood(t1, store, bag_counts(a, cfg.vocab_size), t1.const(theta))
        ll_b = bow_eq_log_likelihood(t2, store, bag_counts(b, cfg.vocab_size), t2.const(theta))
        np.testing.assert_array_equal(ll_a.value, ll_b.value)

    def test_uniform_rows_closed_form(self):
        store, cfg = make_model(variant="BOW")
        zero_all(store)  # zero logits -> uniform rows
        tape = Tape()
        theta = tape.const(np.array([[0.3, 0.3, 0.4]]))
        counts = bag_counts([np.array([3, 4, 5, 6, 7])], cfg.vocab_size)
        ll = bow_eq_log_likelihood(tape, store, counts, theta)
        np.testing.assert_allclose(ll.value, [5.0 * np.log(1.0 / cfg.vocab_size)], rtol=1e-9)

    def test_one_hot_theta_selects_row(self):
        store, cfg = make_model(variant="BOW")
        tape = Tape()
        theta = tape.const(np.array([[0.0, 1.0, 0.0]]))
        counts = bag_counts([np.array([3, 3, 4])], cfg.vocab_size)
        ll = bow_eq_log_likelihood(tape, store, counts, theta)
        beta_eq = Tape().softmax(Tape().const(store.values["eq.topics.logits"]))
        # row 1 alone determines the value
        expected = (
            2 * np.log(beta_eq.value[1, 3] + 1e-12) + np.log(beta_eq.value[1, 4] + 1e-12)
        )
        np.testing.assert_allclose(float(ll.value[0]), expected, rtol=1e-12)

    def test_sequence_dispatch_counts_tokens_without_end(self):
        store, cfg = make_model(variant="BOW")
        tape = Tape()
        theta = tape.const(np.array([[0.3, 0.3, 0.4]]))
        _, counts = sequence_log_likelihood(tape, store, cfg, [np.array([3, 4, 5])], theta)
        assert counts[0] == 3.0

    def test_cannot_sample(self):
        store, cfg = make_model(variant="BOW")
        with pytest.raises(ValueError):
            sample_equations(store, cfg, np.array([[1.0, 0.0, 0.0]]), mode="greedy")


class TestSampling:
    def test_greedy_deterministic(self):
        store, cfg = make_model()
        theta = np.array([[1.0, 0.0, 0.0]])
        a = sample_equations(store, cfg, theta, n=2, mode="greedy", max_len=20)
        b = sample_equations(store, cfg, theta, n=2, mode="greedy", max_len=20)
        for x, y in zip(a.ids, b.ids):
            np.testing.assert_array_equal(x, y)
        np.testing.assert_array_equal(a.ids[0], a.ids[1])

    def test_sampled_deterministic_under_seed(self):
        store, cfg = make_model()
        theta = np.array([[0.2, 0.3, 0.5]])
        a = sample_equations(store, cfg, theta, n=3, rng=Rng(5), max_len=30)
        b = sample_equations(store, cfg, theta, n=3, rng=Rng(5), max_len=30)
        for x, y in zip(a.ids, b.ids):
            np.testing.assert_array_equal(x, y)

    def test_never_emits_reserved_tokens(self):
        store, cfg = make_model()
        theta = np.array([[0.2, 0.3, 0.5]])
        out = sample_equations(store, cfg, theta, n=20, rng=Rng(9), max_len=50)
        for ids in out.ids:
            assert START_ID not in ids
            assert UNK_ID not in ids
            assert END_ID not in ids

    def test_max_len_respected(self):
        store, cfg = make_model()
        out = sample_equations(
            store, cfg, np.array([[1.0, 0.0, 0.0]]), n=4, rng=Rng(1), max_len=7
        )
        assert all(len(ids) <= 7 for ids in out.ids)

    def test_prefix_force_fed(self):
        store, cfg = make_model()
        out = sample_equations(
            store, cfg, np.array([[1.0, 0.0, 0.0]]), n=2, rng=Rng(3),
            max_len=15, prefix_ids=[4, 7],
        )
        for ids in out.ids:
            assert ids[0] == 4 and ids[1] == 7

    def test_scoring_matches_replay_logprob(self):
        store, cfg = make_model(V=8)
        theta = np.array([[0.5, 0.3, 0.2]])
        out = sample_equations(store, cfg, theta, n=6, rng=Rng(17), max_len=200)
        assert out.terminated.any()
        for i in range(6):
            if not out.terminated[i] or len(out.ids[i]) == 0:
                continue
            tape = Tape()
            ll, _ = sequence_log_likelihood(
                tape, store, cfg, [out.ids[i]], tape.const(theta)
            )
            np.testing.assert_allclose(float(ll.value[0]), out.logprob[i], rtol=1e-9)

    def test_temperature_validation(self):
        store, cfg = make_model()
        with pytest.raises(ValueError):
            sample_equations(store, cfg, np.array([[1.0, 0, 0]]), temperature=0.0, rng=Rng(0))

    def test_sample_mode_needs_rng(self):
        store, cfg = make_model()
        with pytest.raises(ValueError):
            sample_equations(store, cfg, np.array([[1.0, 0, 0]]), mode="sample")


class TestFixedTopicConcatHead:
    def test_head_consumes_width_plus_k(self):
        store, cfg = make_model(variant="FIXED_TOPIC_CONCAT")
        assert store.values["eq.out_w"].shape == (cfg.width + cfg.K, cfg.vocab_size)
