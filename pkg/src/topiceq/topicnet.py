"""Topic-model half: inference network, logistic-normal map, bag-of-words
likelihood, closed-form KL, diversity regularizer, topic inspection.

All weight matrices are stored input-major (rows = input dim) and applied as
``x @ W + b``.  Parameter names:

    enc.w1 enc.b1 enc.w2 enc.b2   2-layer tanh inference network
    enc.mu_w enc.mu_b             posterior mean head
    enc.lv_w enc.lv_b             posterior log-variance head
    gmap.w gmap.b                 simplex map theta = softmax(eta @ w + b)
    topics.logits                 K x V topic-word logits (rows softmaxed)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradcore import ParamStore, Rng, Tape, Var, glorot_uniform
from .mathtok import Vocab

LOGVAR_CLAMP = 10.0
PROB_FLOOR = 1e-12


@dataclass
class TopicState:
    mu: np.ndarray
    logvar: np.ndarray
    eta: np.ndarray
    theta: np.ndarray


def init_topic_params(store: ParamStore, rng: Rng, vocab_size: int, K: int, enc_hidden: int) -> None:
    H = enc_hidden
    store.add("enc.w1", glorot_uniform(rng, (vocab_size, H)))
    store.add("enc.b1", np.zeros(H))
    store.add("enc.w2", glorot_uniform(rng, (H, H)))
    store.add("enc.b2", np.zeros(H))
    store.add("enc.mu_w", glorot_uniform(rng, (H, K)))
    store.add("enc.mu_b", np.zeros(K))
    store.add("enc.lv_w", glorot_uniform(rng, (H, K)))
    store.add("enc.lv_b", np.zeros(K))
    store.add("gmap.w", glorot_uniform(rng, (K, K)))
    store.add("gmap.b", np.zeros(K))
    store.add("topics.logits", glorot_uniform(rng, (K, vocab_size)))


def normalize_counts(counts: np.ndarray) -> np.ndarray:
    """L1-normalize bag-of-words rows; all-zero rows stay zero."""
    counts = np.asarray(counts, dtype=np.float64)
    squeeze = counts.ndim == 1
    c2 = counts[None, :] if squeeze else counts
    totals = c2.sum(axis=1, keepdims=True)
    out = np.divide(c2, totals, out=np.zeros_like(c2), where=totals > 0)
    return out[0] if squeeze else out


def infer_posterior(tape: Tape, store: ParamStore, counts: np.ndarray) -> tuple[Var, Var]:
    """Posterior (mu, logvar) for a (B, V) count matrix.

    Counts are L1-normalized first, so scaling a bag leaves the posterior
    unchanged; an all-zero row degenerates to the bias path.
    """
    x = tape.const(normalize_counts(np.atleast_2d(counts)))
    h1 = tape.tanh(tape.affine(x, tape.param(store, "enc.w1"), tape.param(store, "enc.b1")))
    h2 = tape.tanh(tape.affine(h1, tape.param(store, "enc.w2"), tape.param(store, "enc.b2")))
    mu = tape.affine(h2, tape.param(store, "enc.mu_w"), tape.param(store, "enc.mu_b"))
    logvar = tape.clip(
        tape.affine(h2, tape.param(store, "enc.lv_w"), tape.param(store, "enc.lv_b")),
        -LOGVAR_CLAMP,
        LOGVAR_CLAMP,
    )
    return mu, logvar


def sample_theta(tape: Tape, store: ParamStore, mu: Var, logvar: Var, eps: np.ndarray) -> tuple[Var, Var]:
    """Reparameterized draw eta = mu + exp(logvar/2) * eps, mapped onto the simplex."""
    eps_c = tape.const(np.atleast_2d(eps))
    eta = tape.add(mu, tape.mul(tape.exp(tape.scale(logvar, 0.5)), eps_c))
    theta = tape.softmax(
        tape.affine(eta, tape.param(store, "gmap.w"), tape.param(store, "gmap.b"))
    )
    return eta, theta


def topic_word_dist(tape: Tape, store: ParamStore) -> Var:
    """Row-stochastic K x V topic matrix."""
    return tape.softmax(tape.param(store, "topics.logits"))


def bow_log_likelihood(tape: Tape, counts: np.ndarray, theta: Var, beta: Var) -> Var:
    """Per-pair sum of count(w) * log((theta^T beta)_w + floor); (B,) vector."""
    counts_c = tape.const(np.atleast_2d(counts))
    mix = tape.matmul(theta, beta)
    return tape.reduce_sum(tape.mul(counts_c, tape.log(tape.add_scalar(mix, PROB_FLOOR))), axis=1)


def kl_to_standard_normal(tape: Tape, mu: Var, logvar: Var) -> Var:
    """Closed-form KL(q || N(0, I)) per row: 0.5 * sum(exp(lv) + mu^2 - 1 - lv)."""
    inner = tape.add(
        tape.add(tape.exp(logvar), tape.mul(mu, mu)),
        tape.add_scalar(tape.neg(logvar), -1.0),
    )
    return tape.scale(tape.reduce_sum(inner, axis=1), 0.5)


def diversity_penalty(tape: Tape, beta: Var) -> Var:
    """Mean pairwise cosine similarity between topic rows (scalar)."""
    K = beta.value.shape[0]
    if K < 2:
        raise ValueError("diversity penalty needs at least 2 topics")
    norms = tape.sqrt(tape.reduce_sum(tape.mul(beta, beta), axis=1))
    norms_col = tape.reshape(norms, (K, 1))
    outer = tape.matmul(norms_col, tape.transpose(norms_col))
    cos = tape.div(tape.matmul(beta, tape.transpose(beta)), outer)
    off = tape.const(1.0 - np.eye(K))
    return tape.scale(tape.reduce_sum(tape.mul(cos, off)), 1.0 / (K * (K - 1)))


# ---------------------------------------------------------------------------
# evaluation-path helpers (tape forward, no gradients kept)
# ---------------------------------------------------------------------------


def posterior_mean_theta(store: ParamStore, counts: np.ndarray) -> TopicState:
    """Deterministic evaluation path: eps = 0, so eta is the posterior mean."""
    tape = Tape()
    mu, logvar = infer_posterior(tape, store, counts)
    eta, theta = sample_theta(tape, store, mu, logvar, np.zeros_like(mu.value))
    return TopicState(mu=mu.value, logvar=logvar.value, eta=eta.value, theta=theta.value)


def beta_matrix(store: ParamStore) -> np.ndarray:
    tape = Tape()
    return topic_word_dist(tape, store).value


def top_words(beta: np.ndarray, vocab: Vocab, topic: int, n: int) -> list[str]:
    """The n most probable words of one topic row, lexicographic tie-break."""
    row = beta[topic]
    order = sorted(range(len(row)), key=lambda i: (-row[i], vocab.token(i)))
    return [vocab.token(i) for i in order[:n]]


def topic_report(store: ParamStore, vocab: Vocab, n: int = 20) -> list[dict]:
    """Per topic: id plus top-n words with probabilities."""
    beta = beta_matrix(store)
    report = []
    for k in range(beta.shape[0]):
        words = top_words(beta, vocab, k, n)
        report.append(
            {
                "topic": k,
                "words": [
                    {"word": w, "prob": float(beta[k][vocab.id_of(w)])} for w in words
                ],
            }
        )
    return report
