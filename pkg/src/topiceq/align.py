"""Symbol-phrase alignment: a multinomial over word phrases conditioned on an
equation's bag of symbols, either through a static matrix (baseline) or a
topic-factored one, A(theta) = W_a diag(W_b theta) W_c, trained jointly with
the topic model.

Phrase occurrences are harvested from the immediate context only (the single
sentence on each side of the equation) by greedy longest match over the
lowercased word stream.  Each occurrence is paired with the full equation
bag; single-symbol queries use a one-hot bag as a surrogate.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field, asdict

import numpy as np

from .corpus import ContextEqPair, CorpusSplit, preprocess_context
from .errors import EmptyBatch, UnknownSymbol
from .gradcore import ParamStore, Rng, Tape, Var, adam_step, clip_global_norm, glorot_uniform
from .mathtok import Vocab
from .trainer import EncodedPair
from . import topicnet

log = logging.getLogger("topiceq")

MAX_PHRASE_WORDS = 4
BASELINE = "baseline"
TOPIC_AWARE = "topic_aware"

_PHRASE_WORD_RE = re.compile(r"[a-z]+")


@dataclass
class AlignConfig:
    K: int = 50
    mode: str = TOPIC_AWARE
    factors: int = 0  # 0 means "equal to K"
    lr: float = 0.002
    batch_size: int = 200
    clip: float = 1.0
    epochs: int = 10
    lambda_div: float = 0.1
    seed: int = 0
    enc_hidden: int = 300
    word_vocab: list[str] = field(default_factory=list)
    phrase_vocab: list[str] = field(default_factory=list)
    symbol_vocab: list[str] = field(default_factory=list)
    family: str = "alignment"

    @property
    def F(self) -> int:
        return self.factors or self.K

    def validate(self) -> None:
        if self.mode not in (BASELINE, TOPIC_AWARE):
            raise ValueError(f"unknown alignment mode {self.mode!r}")
        if not self.phrase_vocab or not self.symbol_vocab:
            raise ValueError("config must embed phrase and symbol vocabularies")
        if self.mode == TOPIC_AWARE and not self.word_vocab:
            raise ValueError("topic-aware alignment needs the word vocabulary")

    def word_vocab_obj(self) -> Vocab:
        return Vocab(self.word_vocab, n_reserved=0)

    def phrase_vocab_obj(self) -> Vocab:
        return Vocab(self.phrase_vocab, n_reserved=0)

    def symbol_vocab_obj(self) -> Vocab:
        return Vocab(self.symbol_vocab, n_reserved=0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AlignConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# ---------------------------------------------------------------------------
# vocabularies and feature extraction
# ---------------------------------------------------------------------------


def phrase_word_stream(sentences: list[str]) -> list[str]:
    return _PHRASE_WORD_RE.findall(" ".join(sentences).lower())


def match_phrases(words: list[str], phrase_vocab: Vocab) -> list[int]:
    """Greedy longest-match phrase ids over a word stream, non-overlapping."""
    phrase_tuples = {tuple(p.split()): phrase_vocab.id_of(p) for p in phrase_vocab.entries}
    out: list[int] = []
    i = 0
    while i < len(words):
        hit = None
        for width in range(min(MAX_PHRASE_WORDS, len(words) - i), 0, -1):
            pid = phrase_tuples.get(tuple(words[i : i + width]))
            if pid is not None:
                hit = (pid, width)
                break
        if hit is None:
            i += 1
        else:
            out.append(hit[0])
            i += hit[1]
    return out


def extract_phrase_occurrences(pair: ContextEqPair, phrase_vocab: Vocab) -> list[int]:
    """Phrase ids found in the immediate context (adjacent sentence each side)."""
    immediate = [pair.before[-1], pair.after[0]] if pair.before and pair.after else []
    return match_phrases(phrase_word_stream(immediate), phrase_vocab)


def build_phrase_vocab(
    pairs: list[ContextEqPair], phrase_list: list[str], max_size: int = 2000
) -> Vocab:
    """The max_size most frequent candidate phrases observed in the corpus's
    immediate contexts (lexicographic tie-break)."""
    seen = set()
    unique = [p for p in (q.strip().lower() for q in phrase_list)
              if p and not (p in seen or seen.add(p))]
    candidates = Vocab(unique, n_reserved=0)
    freq: Counter[str] = Counter()
    for pair in pairs:
        for pid in extract_phrase_occurrences(pair, candidates):
            freq[candidates.token(pid)] += 1
    if not freq:
        raise EmptyBatch("no candidate phrase occurs in the corpus")
    ranked = sorted(freq, key=lambda p: (-freq[p], p))
    return Vocab(ranked[:max_size], n_reserved=0)


def build_symbol_vocab(pairs: list[ContextEqPair], max_size: int = 200) -> Vocab:
    """The max_size most frequent equation tokens (lexicographic tie-break)."""
    freq: Counter[str] = Counter()
    for pair in pairs:
        freq.update(pair.eq_tokens)
    if not freq:
        raise EmptyBatch("no equation tokens in corpus")
    ranked = sorted(freq, key=lambda t: (-freq[t], t))
    return Vocab(ranked[:max_size], n_reserved=0)


def symbol_bag(eq_tokens: tuple[str, ...] | list[str], symbol_vocab: Vocab) -> np.ndarray:
    """Count vector over the symbol vocabulary."""
    s = np.zeros(len(symbol_vocab), dtype=np.float64)
    for t in eq_tokens:
        sid = symbol_vocab.id_of(t)
        if sid is not None:
            s[sid] += 1.0
    return s


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


def init_align_params(store: ParamStore, rng: Rng, config: AlignConfig) -> None:
    M, L = len(config.phrase_vocab), len(config.symbol_vocab)
    if config.mode == BASELINE:
        store.add("align.A", glorot_uniform(rng, (M, L)))
        return
    topicnet.init_topic_params(store, rng, len(config.word_vocab), config.K, config.enc_hidden)
    F = config.F
    store.add("align.wa", glorot_uniform(rng, (M, F)))
    store.add("align.wb", glorot_uniform(rng, (F, config.K)))
    store.add("align.wc", glorot_uniform(rng, (F, L)))


def alignment_matrix(theta: np.ndarray | None, store: ParamStore, mode: str) -> np.ndarray:
    """The full M x L alignment matrix: static A, or W_a diag(W_b theta) W_c."""
    if mode == BASELINE:
        return store.values["align.A"].copy()
    theta = np.asarray(theta, dtype=np.float64)
    wa, wb, wc = store.values["align.wa"], store.values["align.wb"], store.values["align.wc"]
    return wa @ np.diag(wb @ theta) @ wc


def phrase_logits(
    tape: Tape, store: ParamStore, mode: str, s_rows: np.ndarray, theta_rows: Var | None
) -> Var:
    """(N, M) logits of A(theta) s for a batch of bags (factored, no M x L blow-up)."""
    s_c = tape.const(np.atleast_2d(s_rows))
    if mode == BASELINE:
        return tape.matmul(s_c, tape.transpose(tape.param(store, "align.A")))
    u = tape.matmul(s_c, tape.transpose(tape.param(store, "align.wc")))
    g = tape.matmul(theta_rows, tape.transpose(tape.param(store, "align.wb")))
    return tape.matmul(tape.mul(g, u), tape.transpose(tape.param(store, "align.wa")))


def phrase_log_likelihood(
    phrase_id: int,
    s: np.ndarray,
    theta: np.ndarray | None,
    store: ParamStore,
    mode: str = TOPIC_AWARE,
) -> float:
    """log softmax(A(theta) s) at one phrase index."""
    tape = Tape()
    theta_v = tape.const(np.atleast_2d(theta)) if theta is not None else None
    logits = phrase_logits(tape, store, mode, s[None, :], theta_v)
    nll = tape.categorical_nll(logits, np.array([phrase_id]))
    return -float(nll.value[0])


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------


@dataclass
class AlignEncodedPair:
    bow: "np.ndarray | None"
    s: np.ndarray
    phrase_ids: list[int]


def encode_alignment_pairs(
    pairs: list[ContextEqPair], config: AlignConfig
) -> list[AlignEncodedPair]:
    phrase_vocab = config.phrase_vocab_obj()
    symbol_vocab = config.symbol_vocab_obj()
    word_vocab = config.word_vocab_obj() if config.word_vocab else None
    out = []
    for p in pairs:
        bow = (
            preprocess_context(p.sentences, word_vocab).to_dense(len(word_vocab))
            if word_vocab is not None
            else None
        )
        out.append(
            AlignEncodedPair(
                bow=bow,
                s=symbol_bag(p.eq_tokens, symbol_vocab),
                phrase_ids=extract_phrase_occurrences(p, phrase_vocab),
            )
        )
    return out


def _occurrence_rows(batch: list[AlignEncodedPair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pair_idx, phrase_ids = [], []
    for b, p in enumerate(batch):
        for pid in p.phrase_ids:
            pair_idx.append(b)
            phrase_ids.append(pid)
    pair_idx_a = np.asarray(pair_idx, dtype=np.int64)
    s_rows = (
        np.stack([batch[i].s for i in pair_idx_a])
        if len(pair_idx_a)
        else np.zeros((0, batch[0].s.shape[0]))
    )
    return pair_idx_a, np.asarray(phrase_ids, dtype=np.int64), s_rows


def build_alignment_loss(
    tape: Tape,
    store: ParamStore,
    config: AlignConfig,
    batch: list[AlignEncodedPair],
    eps: np.ndarray,
) -> tuple[Var, dict]:
    """Mean per-pair loss.  Topic-aware: -bow_ll + kl - phrase_ll + div penalty;
    pairs without occurrences contribute only the topic terms.  Baseline:
    -phrase_ll alone (it has no topic parameters)."""
    B = len(batch)
    pair_idx, phrase_ids, s_rows = _occurrence_rows(batch)

    if config.mode == BASELINE:
        if len(pair_idx) == 0:
            raise EmptyBatch("baseline alignment batch has no phrase occurrences")
        logits = phrase_logits(tape, store, BASELINE, s_rows, None)
        nll = tape.categorical_nll(logits, phrase_ids)
        assign = np.zeros((B, len(pair_idx)))
        assign[pair_idx, np.arange(len(pair_idx))] = 1.0
        pair_nll = tape.reshape(
            tape.matmul(tape.const(assign), tape.reshape(nll, (len(pair_idx), 1))), (B,)
        )
        total = tape.mean_all(pair_nll)
        return total, {"phrase_ll": -float(total.value), "total": float(total.value)}

    counts = np.stack([p.bow for p in batch])
    mu, logvar = topicnet.infer_posterior(tape, store, counts)
    _, theta = topicnet.sample_theta(tape, store, mu, logvar, eps)
    beta = topicnet.topic_word_dist(tape, store)
    bow_ll = tape.mean_all(topicnet.bow_log_likelihood(tape, counts, theta, beta))
    kl = tape.mean_all(topicnet.kl_to_standard_normal(tape, mu, logvar))
    div = topicnet.diversity_penalty(tape, beta)

    if len(pair_idx):
        theta_occ = tape.gather_rows(theta, pair_idx)
        logits = phrase_logits(tape, store, TOPIC_AWARE, s_rows, theta_occ)
        nll = tape.categorical_nll(logits, phrase_ids)
        assign = np.zeros((B, len(pair_idx)))
        assign[pair_idx, np.arange(len(pair_idx))] = 1.0
        pair_nll = tape.reshape(
            tape.matmul(tape.const(assign), tape.reshape(nll, (len(pair_idx), 1))), (B,)
        )
        phrase_ll = tape.neg(tape.mean_all(pair_nll))
    else:
        phrase_ll = tape.const(0.0)

    total = tape.add(
        tape.add(tape.neg(bow_ll), kl),
        tape.add(tape.neg(phrase_ll), tape.scale(div, config.lambda_div)),
    )
    parts = {
        "bow_ll": float(bow_ll.value),
        "kl": float(kl.value),
        "phrase_ll": float(phrase_ll.value),
        "diversity": float(div.value),
        "total": float(total.value),
    }
    return total, parts


def train_alignment(config: AlignConfig, split: CorpusSplit) -> tuple[ParamStore, list[dict]]:
    """Same optimizer stack as the joint trainer: minibatches, global-norm
    clipping, Adam, everything on one seeded stream."""
    config.validate()
    rng = Rng(config.seed)
    store = ParamStore()
    init_align_params(store, rng, config)

    encoded = encode_alignment_pairs(split.train, config)
    if config.mode == BASELINE:
        usable = [p for p in encoded if p.phrase_ids]
    else:
        usable = [p for p in encoded if p.bow is not None and p.bow.sum() > 0]
    if not usable:
        raise EmptyBatch("no usable alignment training pairs")
    valid_encoded = encode_alignment_pairs(split.valid, config) if split.valid else []

    metrics: list[dict] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(usable))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [usable[i] for i in order[start : start + config.batch_size]]
            eps = rng.normal((len(batch), config.K))
            tape = Tape()
            loss, _ = build_alignment_loss(tape, store, config, batch, eps)
            store.zero_grads()
            tape.backward(loss, store)
            clip_global_norm(store, config.clip)
            step += 1
            adam_step(store, config.lr, t=step)
            epoch_loss += float(loss.value)
            n_batches += 1
        valid_ppl = alignment_perplexity_encoded(store, config, valid_encoded) if valid_encoded else None
        rec = {
            "epoch": epoch,
            "train_loss": epoch_loss / max(1, n_batches),
            "valid_ppl": valid_ppl,
            "kl_mean": None,
        }
        metrics.append(rec)
        log.info("align epoch %d  loss %.4f  valid_ppl %s", epoch, rec["train_loss"],
                 "-" if valid_ppl is None else f"{valid_ppl:.4f}")
    return store, metrics


def alignment_perplexity_encoded(
    store: ParamStore, config: AlignConfig, encoded: list[AlignEncodedPair]
) -> float:
    total_lp, total_n = 0.0, 0
    bs = max(1, config.batch_size)
    for i in range(0, len(encoded), bs):
        chunk = [p for p in encoded[i : i + bs] if p.phrase_ids]
        if not chunk:
            continue
        pair_idx, phrase_ids, s_rows = _occurrence_rows(chunk)
        tape = Tape()
        if config.mode == BASELINE:
            theta_occ = None
        else:
            counts = np.stack([p.bow for p in chunk])
            theta = topicnet.posterior_mean_theta(store, counts).theta
            theta_occ = tape.const(theta[pair_idx])
        logits = phrase_logits(tape, store, config.mode, s_rows, theta_occ)
        nll = tape.categorical_nll(logits, phrase_ids)
        total_lp += -float(nll.value.sum())
        total_n += len(phrase_ids)
    if total_n == 0:
        raise EmptyBatch("no phrase occurrences to evaluate")
    return float(np.exp(-total_lp / total_n))


def alignment_perplexity(
    store: ParamStore, config: AlignConfig, pairs: list[ContextEqPair]
) -> float:
    """Held-out phrase perplexity, posterior-mean theta per pair."""
    return alignment_perplexity_encoded(store, config, encode_alignment_pairs(pairs, config))


def predict_phrases(
    store: ParamStore,
    config: AlignConfig,
    symbol: str,
    theta: np.ndarray | None = None,
    topic: int | None = None,
    context_text: str | None = None,
    top_n: int = 10,
) -> list[tuple[str, float]]:
    """Ranked phrases for a one-hot symbol query, descending probability with
    lexicographic tie-break.  Baseline checkpoints ignore any theta argument."""
    symbol_vocab = config.symbol_vocab_obj()
    sid = symbol_vocab.id_of(symbol)
    if sid is None:
        raise UnknownSymbol(f"symbol {symbol!r} not in the symbol vocabulary")
    s = np.zeros(len(symbol_vocab))
    s[sid] = 1.0

    theta_v = None
    if config.mode == TOPIC_AWARE:
        if topic is not None:
            theta = np.zeros(config.K)
            theta[topic] = 1.0
        elif context_text is not None:
            word_vocab = config.word_vocab_obj()
            bow = preprocess_context([context_text], word_vocab).to_dense(len(word_vocab))
            theta = topicnet.posterior_mean_theta(store, bow[None, :]).theta[0]
        if theta is None:
            raise ValueError("topic-aware prediction needs theta, topic, or context_text")
        theta_v_arr = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    tape = Tape()
    if config.mode == TOPIC_AWARE:
        theta_v = tape.const(theta_v_arr)
    logits = phrase_logits(tape, store, config.mode, s[None, :], theta_v)
    probs = tape.softmax(logits).value[0]
    phrase_vocab = config.phrase_vocab_obj()
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], phrase_vocab.token(i)))
    return [(phrase_vocab.token(i), float(probs[i])) for i in order[:top_n]]
