"""Context-equation corpus construction, preprocessing, and synthesis.

A corpus is a list of pairs: five sentences of prose on each side of a
single-line display equation, the equation kept only when it tokenizes to
20-150 tokens.  Corpora are stored as JSON Lines with the equation in
detokenized (space-joined) form.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyVocab, InvalidEscape, TooSmall
from .gradcore import Rng
from .mathtok import Vocab, detokenize, tokenize

MIN_EQ_TOKENS = 20
MAX_EQ_TOKENS = 150
CONTEXT_SENTENCES = 5


def _load_stopwords() -> frozenset[str]:
    text = (
        importlib_resources.files("topiceq.resources").joinpath("stopwords.txt").read_text("utf-8")
    )
    return frozenset(w for w in text.split() if w)


STOPWORDS = _load_stopwords()


@dataclass(frozen=True)
class SparseBow:
    """Bag of words as parallel id/count arrays, ids strictly increasing."""

    ids: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_counts(cls, counter: dict[int, int]) -> "SparseBow":
        ids = np.array(sorted(counter), dtype=np.int64)
        counts = np.array([counter[i] for i in ids], dtype=np.float64)
        return cls(ids, counts)

    def __len__(self) -> int:
        return len(self.ids)

    def total(self) -> float:
        return float(self.counts.sum())

    def to_dense(self, size: int) -> np.ndarray:
        dense = np.zeros(size, dtype=np.float64)
        dense[self.ids] = self.counts
        return dense


@dataclass(frozen=True)
class ContextEqPair:
    before: tuple[str, ...]
    after: tuple[str, ...]
    eq_tokens: tuple[str, ...]

    @property
    def sentences(self) -> tuple[str, ...]:
        return self.before + self.after


@dataclass
class CorpusSplit:
    train: list[ContextEqPair]
    valid: list[ContextEqPair]
    test: list[ContextEqPair]


# ---------------------------------------------------------------------------
# extraction from LaTeX sources
# ---------------------------------------------------------------------------

# Sentence boundary: terminal punctuation, whitespace, then an uppercase
# letter or a backslash command (scientific prose frequently opens with one).
_SENT_SPLIT = re.compile(r"(?<=[.!?])\s+(?=[A-Z\\])")

_DISPLAY_PATTERNS = [
    re.compile(r"\\\[(.*?)\\\]", re.S),
    re.compile(r"\$\$(.*?)\$\$", re.S),
    re.compile(r"\\begin\{equation\*?\}(.*?)\\end\{equation\*?\}", re.S),
]
_INLINE_PATTERNS = [
    re.compile(r"\\\((.*?)\\\)", re.S),
    re.compile(r"(?<!\$)\$(?!\$)(.*?)(?<!\$)\$(?!\$)", re.S),
]


def split_sentences(text: str) -> list[str]:
    parts = _SENT_SPLIT.split(text)
    return [p.strip() for p in parts if p.strip()]


def _strip_comments(text: str) -> str:
    """Drop % comments line by line; \\% survives as an escaped character."""
    out_lines = []
    for line in text.split("\n"):
        i = 0
        while i < len(line):
            if line[i] == "\\":
                i += 2
                continue
            if line[i] == "%":
                line = line[:i]
                break
            i += 1
        out_lines.append(line)
    return "\n".join(out_lines)


def _document_body(document: str) -> str:
    m = re.search(r"\\begin\{document\}(.*?)(\\end\{document\}|$)", document, re.S)
    return m.group(1) if m else document


def _clean_context(text: str) -> str:
    for pat in _INLINE_PATTERNS:
        text = pat.sub(" ", text)
    return text


def extract_pairs(document: str) -> list[ContextEqPair]:
    """Pull (5 sentences, equation, 5 sentences) triples out of LaTeX source.

    Display math is recognized as \\[...\\], $$...$$, or an equation
    environment.  Spans containing a line break (\\\\) are skipped as
    multi-line; equations that fail to tokenize or fall outside the 20-150
    token window are dropped, as are spans without five sentences on both
    sides.
    """
    body = _strip_comments(_document_body(document))

    spans: list[tuple[int, int, str]] = []
    for pat in _DISPLAY_PATTERNS:
        for m in pat.finditer(body):
            spans.append((m.start(), m.end(), m.group(1)))
    spans.sort()
    # drop overlapping matches (e.g. $$ inside an equation environment)
    kept: list[tuple[int, int, str]] = []
    last_end = -1
    for s, e, content in spans:
        if s >= last_end:
            kept.append((s, e, content))
            last_end = e

    pairs: list[ContextEqPair] = []
    for idx, (s, e, content) in enumerate(kept):
        normalized = " ".join(content.split())
        if "\\\\" in normalized:
            continue
        try:
            tokens = tokenize(normalized)
        except InvalidEscape:
            continue
        if not MIN_EQ_TOKENS <= len(tokens) <= MAX_EQ_TOKENS:
            continue

        before_text = _clean_context(
            " ".join(
                [body[: kept[0][0]]]
                + [body[kept[j][1] : kept[j + 1][0]] for j in range(idx)]
            )
            if idx
            else body[:s]
        )
        after_parts = [body[e : kept[idx + 1][0]] if idx + 1 < len(kept) else body[e:]]
        for j in range(idx + 1, len(kept)):
            after_parts.append(
                body[kept[j][1] : kept[j + 1][0]] if j + 1 < len(kept) else body[kept[j][1] :]
            )
        after_text = _clean_context(" ".join(after_parts))

        before = split_sentences(before_text)
        after = split_sentences(after_text)
        if len(before) < CONTEXT_SENTENCES or len(after) < CONTEXT_SENTENCES:
            continue
        pairs.append(
            ContextEqPair(
                before=tuple(before[-CONTEXT_SENTENCES:]),
                after=tuple(after[:CONTEXT_SENTENCES]),
                eq_tokens=tuple(tokens),
            )
        )
    return pairs


# ---------------------------------------------------------------------------
# word preprocessing and vocabularies
# ---------------------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z]+")


def context_words(sentences: Iterable[str]) -> list[str]:
    """Lowercase, split on non-alphabetic characters, drop short words and stopwords."""
    words = _WORD_RE.findall(" ".join(sentences).lower())
    return [w for w in words if len(w) >= 2 and w not in STOPWORDS]


def preprocess_context(sentences: Iterable[str], vocab: Vocab) -> SparseBow:
    counter: Counter[int] = Counter()
    for w in context_words(sentences):
        wid = vocab.id_of(w)
        if wid is not None:
            counter[wid] += 1
    return SparseBow.from_counts(counter)


def build_word_vocab(
    contexts: Iterable[Sequence[str]], min_doc_freq: int, max_size: int
) -> Vocab:
    """Words with document frequency >= min_doc_freq, capped to the max_size
    most frequent by total count (lexicographic tie-break)."""
    if min_doc_freq < 1:
        raise ValueError("min_doc_freq must be >= 1")
    doc_freq: Counter[str] = Counter()
    term_freq: Counter[str] = Counter()
    for sentences in contexts:
        words = context_words(sentences)
        term_freq.update(words)
        doc_freq.update(set(words))
    candidates = [w for w, df in doc_freq.items() if df >= min_doc_freq]
    if not candidates:
        raise EmptyVocab("no words survive the document-frequency threshold")
    ranked = sorted(candidates, key=lambda w: (-term_freq[w], w))
    return Vocab(ranked[:max_size], n_reserved=0)


# ---------------------------------------------------------------------------
# splitting and corruption
# ---------------------------------------------------------------------------


def split_corpus(
    pairs: Sequence[ContextEqPair],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> CorpusSplit:
    """Seeded shuffle then contiguous slices sized by largest-remainder rounding."""
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be positive and sum to 1")
    n = len(pairs)
    if n < 3:
        raise TooSmall(f"need at least 3 pairs to split, got {n}")
    sizes = [int(n * r) for r in ratios]
    fracs = [n * r - s for r, s in zip(ratios, sizes)]
    for _ in range(n - sum(sizes)):
        i = max(range(3), key=lambda k: (fracs[k], -k))
        sizes[i] += 1
        fracs[i] = -1.0
    order = Rng(seed).permutation(n)
    shuffled = [pairs[i] for i in order]
    a, b = sizes[0], sizes[0] + sizes[1]
    return CorpusSplit(train=shuffled[:a], valid=shuffled[a:b], test=shuffled[b:])


def shuffle_equation_tokens(pair: ContextEqPair, seed: int) -> ContextEqPair:
    """Copy of the pair with its equation tokens uniformly permuted."""
    order = Rng(seed).permutation(len(pair.eq_tokens))
    return ContextEqPair(
        before=pair.before,
        after=pair.after,
        eq_tokens=tuple(pair.eq_tokens[i] for i in order),
    )


# ---------------------------------------------------------------------------
# JSON Lines persistence
# ---------------------------------------------------------------------------


def write_corpus(pairs: Iterable[ContextEqPair], path: str) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(
                json.dumps(
                    {
                        "before": list(p.before),
                        "after": list(p.after),
                        "equation": detokenize(p.eq_tokens),
                    }
                )
                + "\n"
            )
            n += 1
    return n


def read_corpus(path: str) -> list[ContextEqPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            pairs.append(
                ContextEqPair(
                    before=tuple(rec["before"]),
                    after=tuple(rec["after"]),
                    eq_tokens=tuple(tokenize(rec["equation"])),
                )
            )
    return pairs


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


@dataclass
class TopicSpec:
    """One latent topic: a word distribution and an equation token grammar."""

    words: list[str]
    word_probs: list[float]
    units: list[list[str]]  # phrase units concatenated to form equations
    unit_probs: list[float]

    def validate(self) -> None:
        if abs(sum(self.word_probs) - 1.0) > 1e-9:
            raise ValueError("word_probs must sum to 1")
        if self.units and abs(sum(self.unit_probs) - 1.0) > 1e-9:
            raise ValueError("unit_probs must sum to 1")

    def alphabet(self) -> frozenset[str]:
        return frozenset(t for u in self.units for t in u)


@dataclass
class SyntheticSpec:
    topics: list[TopicSpec]
    num_pairs: int
    context_words: int
    eq_len_range: tuple[int, int]
    seed: int
    noise_word_rate: float = 0.0  # chance a context word comes from another topic

    def validate(self) -> None:
        for t in self.topics:
            t.validate()
        lo, hi = self.eq_len_range
        if not (MIN_EQ_TOKENS <= lo <= hi <= MAX_EQ_TOKENS):
            raise ValueError("eq_len_range must lie within the 20-150 corpus filter")
        alphabets = [t.alphabet() for t in self.topics]
        for i in range(len(alphabets)):
            for j in range(i + 1, len(alphabets)):
                if alphabets[i] & alphabets[j]:
                    raise ValueError(f"topic grammars {i} and {j} share tokens")

    def to_json(self) -> str:
        return json.dumps(
            {
                "topics": [
                    {
                        "words": t.words,
                        "word_probs": t.word_probs,
                        "units": t.units,
                        "unit_probs": t.unit_probs,
                    }
                    for t in self.topics
                ],
                "num_pairs": self.num_pairs,
                "context_words": self.context_words,
                "eq_len_range": list(self.eq_len_range),
                "seed": self.seed,
                "noise_word_rate": self.noise_word_rate,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        d = json.loads(text)
        spec = cls(
            topics=[
                TopicSpec(t["words"], t["word_probs"], t["units"], t["unit_probs"])
                for t in d["topics"]
            ],
            num_pairs=d["num_pairs"],
            context_words=d["context_words"],
            eq_len_range=tuple(d["eq_len_range"]),
            seed=d["seed"],
            noise_word_rate=d.get("noise_word_rate", 0.0),
        )
        spec.validate()
        return spec


def _draw_words(topic: TopicSpec, n: int, rng: Rng) -> list[str]:
    probs = np.asarray(topic.word_probs)
    return [topic.words[rng.categorical(probs)] for _ in range(n)]


def _words_to_sentences(words: list[str], n_sentences: int) -> list[str]:
    chunks = np.array_split(np.asarray(words, dtype=object), n_sentences)
    sentences = []
    for chunk in chunks:
        text = " ".join(chunk.tolist()) if len(chunk) else "nothing here"
        sentences.append(text.capitalize() + ".")
    return sentences


def _draw_equation(topic: TopicSpec, lo: int, hi: int, rng: Rng) -> list[str]:
    target = lo + rng.randint(hi - lo + 1)
    probs = np.asarray(topic.unit_probs)
    seq: list[str] = []
    while len(seq) < target:
        unit = topic.units[rng.categorical(probs)]
        if len(seq) + len(unit) > hi:
            break
        seq.extend(unit)
    while len(seq) < lo:
        unit = min(topic.units, key=len)
        if len(seq) + len(unit) > MAX_EQ_TOKENS:
            break
        seq.extend(unit)
    return seq


def generate_synthetic(spec: SyntheticSpec) -> list[ContextEqPair]:
    """Seeded corpus where each pair's words and equation share one topic."""
    spec.validate()
    rng = Rng(spec.seed)
    K = len(spec.topics)
    lo, hi = spec.eq_len_range
    pairs: list[ContextEqPair] = []
    for _ in range(spec.num_pairs):
        k = rng.randint(K)
        words = []
        for _ in range(spec.context_words):
            if spec.noise_word_rate > 0 and K > 1 and rng.uniform() < spec.noise_word_rate:
                other = rng.randint(K - 1)
                src = other if other < k else other + 1
            else:
                src = k
            words.extend(_draw_words(spec.topics[src], 1, rng))
        sentences = _words_to_sentences(words, 2 * CONTEXT_SENTENCES)
        eq = _draw_equation(spec.topics[k], lo, hi, rng)
        pairs.append(
            ContextEqPair(
                before=tuple(sentences[:CONTEXT_SENTENCES]),
                after=tuple(sentences[CONTEXT_SENTENCES:]),
                eq_tokens=tuple(eq),
            )
        )
    return pairs


def synthetic_topic_of(pair: ContextEqPair, spec: SyntheticSpec) -> int:
    """Recover the generating topic from the (disjoint) equation alphabet."""
    overlaps = [len(set(pair.eq_tokens) & t.alphabet()) for t in spec.topics]
    return int(np.argmax(overlaps))


def default_synthetic_spec(
    num_pairs: int = 3000,
    seed: int = 7,
    context_words: int = 40,
    noise_word_rate: float = 0.15,
) -> SyntheticSpec:
    """Three well-separated topics with disjoint word supports and grammars."""
    gravity = TopicSpec(
        words="""metric tensor curvature gravity spacetime horizon geodesic manifold
                 einstein schwarzschild black hole relativity cosmological inflation
                 graviton ricci scalar covariant lorentz""".split(),
        word_probs=_harmonic(20),
        units=[
            ["G", "_", "{", "\\mu", "\\nu", "}"],
            ["R", "_", "{", "\\mu", "\\nu", "}"],
            ["g", "_", "{", "\\mu", "\\nu", "}"],
            ["\\Lambda", "g", "_", "{", "\\mu", "\\nu", "}"],
            ["="],
        ],
        unit_probs=[0.3, 0.25, 0.2, 0.1, 0.15],
    )
    optimization = TopicSpec(
        words="""gradient convex objective minimize constraint descent optimal
                 convergence regularization solver dual feasible iterate stepsize
                 loss smooth penalty lagrangian stationary projection""".split(),
        word_probs=_harmonic(20),
        units=[
            ["\\min", "f", "(", "x", ")"],
            ["\\min", "f", "(", "y", ")"],
            ["+", "\\lambda", "x", "^", "2"],
            ["+", "\\lambda", "y", "^", "2"],
            ["f", "(", "x", ")", "^", "2"],
            ["+", "x"],
            ["\\nabla", "f", "(", "y", ")"],
        ],
        unit_probs=[0.2, 0.1, 0.15, 0.1, 0.2, 0.15, 0.1],
    )
    probability = TopicSpec(
        words="""probability random variance expectation distribution gaussian
                 stochastic measure martingale moment density sample independence
                 markov entropy likelihood bayesian posterior prior estimator""".split(),
        word_probs=_harmonic(20),
        units=[
            ["E", "[", "X", "]"],
            ["P", "[", "X", "]"],
            ["\\leq", "E", "[", "X", "]"],
            ["\\int", "X"],
            ["\\leq", "\\int", "X"],
        ],
        unit_probs=[0.3, 0.25, 0.2, 0.15, 0.1],
    )
    spec = SyntheticSpec(
        topics=[gravity, optimization, probability],
        num_pairs=num_pairs,
        context_words=context_words,
        eq_len_range=(20, 34),
        seed=seed,
        noise_word_rate=noise_word_rate,
    )
    spec.validate()
    return spec


def _harmonic(n: int) -> list[float]:
    raw = [1.0 / (i + 1.0) for i in range(n)]
    z = sum(raw)
    return [r / z for r in raw]


# Renaming map used to probe structure-preserving variable changes: swaps two
# symbols that occupy the same grammatical position in their topic's units.
RENAME_MAP = {"G": "R", "R": "G", "x": "y", "y": "x", "E": "P", "P": "E"}


def rename_variables(pair: ContextEqPair) -> ContextEqPair:
    return ContextEqPair(
        before=pair.before,
        after=pair.after,
        eq_tokens=tuple(RENAME_MAP.get(t, t) for t in pair.eq_tokens),
    )


# ---------------------------------------------------------------------------
# planted symbol-phrase alignment corpus
# ---------------------------------------------------------------------------


@dataclass
class AlignmentSyntheticSpec:
    """Topic-labelled corpus whose equations share symbols across topics, with a
    planted (topic, symbol) -> phrase table realized in the immediate context."""

    topics: list[TopicSpec]  # only words/word_probs are used
    symbols: list[str]
    planted: list[dict[str, str]]  # per topic: symbol -> phrase
    filler_tokens: list[str] = field(default_factory=lambda: ["=", "+", "(", ")"])
    num_pairs: int = 2000
    context_words: int = 40
    eq_len_range: tuple[int, int] = (20, 30)
    seed: int = 11
    symbols_per_eq: int = 2

    def validate(self) -> None:
        if len(self.planted) != len(self.topics):
            raise ValueError("one planted table per topic required")
        for table in self.planted:
            for s in table:
                if s not in self.symbols:
                    raise ValueError(f"planted symbol {s!r} missing from symbol list")


def generate_alignment_synthetic(spec: AlignmentSyntheticSpec) -> list[ContextEqPair]:
    """Corpus for symbol-phrase alignment: each equation carries a few shared
    symbols whose describing phrase in the immediate context depends on the
    pair's topic."""
    spec.validate()
    rng = Rng(spec.seed)
    K = len(spec.topics)
    lo, hi = spec.eq_len_range
    pairs: list[ContextEqPair] = []
    for _ in range(spec.num_pairs):
        k = rng.randint(K)
        planted_syms = sorted(spec.planted[k])
        chosen: list[str] = []
        for _ in range(spec.symbols_per_eq):
            remaining = [s for s in planted_syms if s not in chosen]
            chosen.append(remaining[rng.randint(len(remaining))])

        pool = chosen + spec.filler_tokens
        eq: list[str] = list(chosen)  # guarantee every chosen symbol occurs
        target = lo + rng.randint(hi - lo + 1)
        while len(eq) < target:
            eq.append(pool[rng.randint(len(pool))])

        words = _draw_words(spec.topics[k], spec.context_words, rng)
        sentences = _words_to_sentences(words, 2 * CONTEXT_SENTENCES)
        # plant phrases in the immediate context only (adjacent sentences)
        half = len(chosen) // 2 or 1
        before_phrases = [spec.planted[k][s] for s in chosen[:half]]
        after_phrases = [spec.planted[k][s] for s in chosen[half:]]
        sentences[CONTEXT_SENTENCES - 1] = (
            sentences[CONTEXT_SENTENCES - 1][:-1] + " " + " ".join(before_phrases) + "."
        )
        sentences[CONTEXT_SENTENCES] = (
            sentences[CONTEXT_SENTENCES][:-1] + " " + " ".join(after_phrases) + "."
        )
        pairs.append(
            ContextEqPair(
                before=tuple(sentences[:CONTEXT_SENTENCES]),
                after=tuple(sentences[CONTEXT_SENTENCES:]),
                eq_tokens=tuple(eq),
            )
        )
    return pairs


def alignment_topic_of(pair: ContextEqPair, spec: AlignmentSyntheticSpec) -> int:
    """Recover the generating topic from the (disjoint) context word supports."""
    words = set(context_words(pair.sentences))
    overlaps = [len(words & set(t.words)) for t in spec.topics]
    return int(np.argmax(overlaps))


def default_alignment_spec(num_pairs: int = 2000, seed: int = 11) -> AlignmentSyntheticSpec:
    base = default_synthetic_spec()
    symbols = ["E", "M", "p", "T", "V", "\\sigma"]
    planted = [
        {  # gravity
            "E": "energy",
            "M": "mass",
            "p": "pressure",
            "T": "stress tensor",
            "V": "volume",
            "\\sigma": "surface density",
        },
        {  # optimization
            "E": "error",
            "M": "matrix",
            "p": "penalty",
            "T": "total iterations",
            "V": "objective function",
            "\\sigma": "step size",
        },
        {  # probability
            "E": "expectation",
            "M": "martingale",
            "p": "probability",
            "T": "stopping time",
            "V": "variance",
            "\\sigma": "standard deviation",
        },
    ]
    spec = AlignmentSyntheticSpec(
        topics=base.topics,
        symbols=symbols,
        planted=planted,
        num_pairs=num_pairs,
        seed=seed,
    )
    spec.validate()
    return spec
