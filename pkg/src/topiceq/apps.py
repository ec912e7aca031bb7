"""Application surface: topic-conditioned generation, topic interpolation,
equation topic inference, and context-conditioned generation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .eqnet import SampleResult, sample_equations, sequence_log_likelihood
from .gradcore import ParamStore, Rng, Tape
from .mathtok import tokenize
from .corpus import preprocess_context
from .trainer import CONTEXT_ONLY, TrainConfig
from . import topicnet


def _check_theta(theta: np.ndarray, K: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (K,):
        raise ValueError(f"theta must have shape ({K},)")
    if (theta < 0).any() or abs(theta.sum() - 1.0) > 1e-9:
        raise ValueError("theta must be a point on the probability simplex")
    return theta


def one_hot(k: int, K: int) -> np.ndarray:
    if not 0 <= k < K:
        raise ValueError(f"topic index {k} outside [0, {K})")
    e = np.zeros(K)
    e[k] = 1.0
    return e


def generate_from_topic(
    store: ParamStore,
    config: TrainConfig,
    theta: np.ndarray,
    n: int = 1,
    mode: str = "sample",
    temperature: float = 1.0,
    rng: Rng | None = None,
    prefix: list[str] | None = None,
    max_len: int = 200,
) -> list[list[str]]:
    """n decoded equations (token strings) conditioned on a fixed theta."""
    theta = _check_theta(theta, config.K)
    math_vocab = config.math_vocab_obj()
    prefix_ids = math_vocab.encode_math(prefix) if prefix else None
    result = sample_equations(
        store, config.eq_config(), theta[None, :], n=n, mode=mode,
        temperature=temperature, max_len=max_len, rng=rng, prefix_ids=prefix_ids,
    )
    return [math_vocab.decode_math(ids) for ids in result.ids]


def interpolate_topics(
    store: ParamStore,
    config: TrainConfig,
    k1: int,
    k2: int,
    steps: int = 5,
    prefix: list[str] | None = None,
    max_len: int = 200,
) -> list[tuple[float, list[str]]]:
    """Greedy decodes along theta(t) = (1-t) e_k1 + t e_k2, t evenly spaced
    over [0, 1] including both endpoints."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    e1, e2 = one_hot(k1, config.K), one_hot(k2, config.K)
    out = []
    for i in range(steps):
        t = i / (steps - 1)
        theta = (1.0 - t) * e1 + t * e2
        tokens = generate_from_topic(
            store, config, theta, n=1, mode="greedy", prefix=prefix, max_len=max_len
        )[0]
        out.append((t, tokens))
    return out


@dataclass
class TopicRanking:
    """Topics ordered by total equation log-likelihood, best first."""

    entries: list[tuple[int, float]]
    top_words: dict[int, list[str]]

    @property
    def best(self) -> int:
        return self.entries[0][0]


def infer_equation_topic(
    store: ParamStore,
    config: TrainConfig,
    equation: str,
    top_n: int = 5,
    words_per_topic: int = 5,
) -> TopicRanking:
    """Rank one-hot topics by p(equation | theta = e_k); ties favor smaller k."""
    tokens = tokenize(equation.strip())
    if not tokens:
        raise ValueError("equation tokenized to nothing")
    math_vocab = config.math_vocab_obj()
    ids = np.asarray(math_vocab.encode_math(tokens), dtype=np.int64)
    K = config.K
    tape = Tape()
    thetas = tape.const(np.eye(K))
    ll, _ = sequence_log_likelihood(
        tape, store, config.eq_config(), [ids] * K, thetas, train=False
    )
    scores = ll.value
    order = sorted(range(K), key=lambda k: (-scores[k], k))[:top_n]
    word_vocab = config.word_vocab_obj()
    beta = topicnet.beta_matrix(store)
    return TopicRanking(
        entries=[(k, float(scores[k])) for k in order],
        top_words={k: topicnet.top_words(beta, word_vocab, k, words_per_topic) for k in order},
    )


def infer_context_theta(
    store: ParamStore, config: TrainConfig, context_text: str
) -> np.ndarray:
    """Posterior-mean topic proportions of a context; the bias path (with a
    warning) when every word is filtered away."""
    word_vocab = config.word_vocab_obj()
    bow = preprocess_context([context_text], word_vocab)
    if len(bow) == 0:
        warnings.warn("context has no in-vocabulary words; using the prior-bias path")
    counts = bow.to_dense(len(word_vocab))[None, :]
    return topicnet.posterior_mean_theta(store, counts).theta[0]


def generate_from_context(
    store: ParamStore,
    config: TrainConfig,
    context_text: str,
    n: int = 1,
    mode: str = "sample",
    temperature: float = 1.0,
    rng: Rng | None = None,
    max_len: int = 200,
) -> tuple[np.ndarray, list[list[str]]]:
    """Infer theta from the context words, then sample n equations from it."""
    theta = infer_context_theta(store, config, context_text)
    if config.variant == CONTEXT_ONLY:
        return theta, []
    samples = generate_from_topic(
        store, config, theta, n=n, mode=mode, temperature=temperature,
        rng=rng, max_len=max_len,
    )
    return theta, samples
