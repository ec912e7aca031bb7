"""Topic coherence (NPMI), equation perplexity, and syntax-error rate.

NPMI uses document-level co-occurrence over a reference corpus of word-id
sets, +1 smoothing on the joint count, and is clamped into [-1, 1] (the
smoothing can push a perfectly co-occurring pair epsilon past 1).  A topic's
score is the mean over the 45 unordered pairs of its top-10 words; words
absent from every reference document contribute 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ContextEqPair, preprocess_context
from .eqnet import sample_equations, sequence_log_likelihood
from .gradcore import ParamStore, Rng, Tape
from .mathtok import Vocab, check_syntax
from .trainer import CONTEXT_ONLY, TrainConfig, encode_pairs
from . import topicnet


@dataclass
class CoherenceReport:
    per_topic: list[float]
    mean: float
    top_words: list[list[str]]


def pair_npmi(n_i: int, n_j: int, n_ij: int, n_docs: int) -> float:
    """NPMI of one word pair from document counts, +1-smoothed joint."""
    if n_i == 0 or n_j == 0:
        return 0.0
    p_i = n_i / n_docs
    p_j = n_j / n_docs
    p_ij = min(n_ij + 1, n_docs) / n_docs
    if p_ij >= 1.0:
        return 1.0 if (p_i < 1.0 or p_j < 1.0) else 0.0
    val = np.log(p_ij / (p_i * p_j)) / (-np.log(p_ij))
    return float(np.clip(val, -1.0, 1.0))


def npmi(
    topics_topwords: list[list[str]],
    reference_docs: list[set[int]],
    vocab: Vocab,
) -> CoherenceReport:
    if not reference_docs:
        raise ValueError("reference corpus is empty")
    n_docs = len(reference_docs)
    doc_count: dict[int, int] = {}
    for doc in reference_docs:
        for wid in doc:
            doc_count[wid] = doc_count.get(wid, 0) + 1

    per_topic = []
    for words in topics_topwords:
        ids = [vocab.id_of(w) for w in words]
        scores = []
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                ia, ib = ids[a], ids[b]
                if ia is None or ib is None:
                    scores.append(0.0)
                    continue
                n_i = doc_count.get(ia, 0)
                n_j = doc_count.get(ib, 0)
                if n_i == 0 or n_j == 0:
                    scores.append(0.0)
                    continue
                n_ij = sum(1 for doc in reference_docs if ia in doc and ib in doc)
                scores.append(pair_npmi(n_i, n_j, n_ij, n_docs))
        per_topic.append(float(np.mean(scores)) if scores else 0.0)
    return CoherenceReport(
        per_topic=per_topic,
        mean=float(np.mean(per_topic)),
        top_words=topics_topwords,
    )


def reference_doc_sets(pairs: list[ContextEqPair], word_vocab: Vocab) -> list[set[int]]:
    """Each pair's context as a set of word ids (document-level window)."""
    return [set(preprocess_context(p.sentences, word_vocab).ids.tolist()) for p in pairs]


def coherence(
    store: ParamStore,
    config: TrainConfig,
    reference_pairs: list[ContextEqPair],
    top_n: int = 10,
) -> CoherenceReport:
    word_vocab = config.word_vocab_obj()
    beta = topicnet.beta_matrix(store)
    tops = [topicnet.top_words(beta, word_vocab, k, top_n) for k in range(config.K)]
    return npmi(tops, reference_doc_sets(reference_pairs, word_vocab), word_vocab)


def perplexity(store: ParamStore, config: TrainConfig, pairs: list[ContextEqPair]) -> float:
    """exp(-sum logprob / sum token count) with the deterministic posterior-mean
    theta per pair (eps = 0)."""
    if not pairs:
        raise ValueError("perplexity needs at least one pair")
    if config.variant == CONTEXT_ONLY:
        raise ValueError("context-only models have no equation component")
    word_vocab = config.word_vocab_obj()
    math_vocab = config.math_vocab_obj()
    encoded = encode_pairs(pairs, word_vocab, math_vocab)
    V = len(word_vocab)
    total_lp, total_n = 0.0, 0.0
    bs = max(1, config.batch_size)
    for i in range(0, len(encoded), bs):
        chunk = encoded[i : i + bs]
        counts = np.stack([p.bow.to_dense(V) for p in chunk])
        state = topicnet.posterior_mean_theta(store, counts)
        tape = Tape()
        ll, n_tok = sequence_log_likelihood(
            tape, store, config.eq_config(), [p.eq_ids for p in chunk],
            tape.const(state.theta), train=False,
        )
        total_lp += float(ll.value.sum())
        total_n += float(n_tok.sum())
    return float(np.exp(-total_lp / total_n))


def prior_theta(store: ParamStore, config: TrainConfig, n: int, rng: Rng) -> np.ndarray:
    """Draw theta through the generative prior: eta ~ N(0, I), theta = g(eta)."""
    eta = rng.normal((n, config.K))
    tape = Tape()
    theta = tape.softmax(
        tape.affine(tape.const(eta), tape.param(store, "gmap.w"), tape.param(store, "gmap.b"))
    )
    return theta.value


def syntax_error_rate(
    store: ParamStore,
    config: TrainConfig,
    n_samples: int,
    temperature: float,
    rng: Rng,
    theta_source: str = "prior",
    pairs: list[ContextEqPair] | None = None,
    max_len: int = 200,
) -> float:
    """Fraction of sampled equations the syntax checker rejects.

    theta_source "prior" measures the generator itself; "posterior" runs the
    inference network over supplied pairs instead.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    math_vocab = config.math_vocab_obj()
    if theta_source == "prior":
        theta = prior_theta(store, config, n_samples, rng)
    elif theta_source == "posterior":
        if not pairs:
            raise ValueError("posterior theta needs reference pairs")
        word_vocab = config.word_vocab_obj()
        V = len(word_vocab)
        counts = np.stack(
            [
                preprocess_context(pairs[i % len(pairs)].sentences, word_vocab).to_dense(V)
                for i in range(n_samples)
            ]
        )
        theta = topicnet.posterior_mean_theta(store, counts).theta
    else:
        raise ValueError(f"unknown theta_source {theta_source!r}")

    result = sample_equations(
        store, config.eq_config(), theta, mode="sample",
        temperature=temperature, max_len=max_len, rng=rng,
    )
    failures = 0
    for ids in result.ids:
        tokens = math_vocab.decode_math(ids)
        if not check_syntax(tokens).valid:
            failures += 1
    return failures / n_samples


def evaluate(
    store: ParamStore,
    config: TrainConfig,
    test_pairs: list[ContextEqPair],
    seed: int = 0,
    n_syntax_samples: int = 200,
    temperature: float = 1.0,
    coherence_top_n: int = 10,
) -> dict:
    """Full evaluation report: coherence, perplexity, syntax error rate."""
    report: dict = {"config": config.to_dict()}
    coh = coherence(store, config, test_pairs, top_n=coherence_top_n)
    report["coherence"] = {
        "per_topic": coh.per_topic,
        "mean": coh.mean,
        "top_words": coh.top_words,
    }
    if config.variant != CONTEXT_ONLY:
        report["perplexity"] = perplexity(store, config, test_pairs)
        # the bag-of-tokens variant scores sequences but cannot generate them
        report["syntax_error_rate"] = (
            syntax_error_rate(store, config, n_syntax_samples, temperature, Rng(seed))
            if config.variant != "BOW"
            else None
        )
    else:
        report["perplexity"] = None
        report["syntax_error_rate"] = None
    return report
