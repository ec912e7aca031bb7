"""LaTeX math tokenization, syntax checking, and token vocabularies.

Tokenizer grammar: a token is either a backslash command (``\\`` followed by
one non-letter character, or by a maximal run of ASCII letters) or a single
non-space character.  Numbers therefore split one digit per token, decimal
points are their own token, and whitespace never survives.  A bare ``%``
starts a comment that runs to the end of the input; ``\\%`` is an ordinary
command token.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import EmptyCorpus, InvalidEscape

UNK, START, END = "<UNK>", "<START>", "<END>"
RESERVED = (UNK, START, END)
UNK_ID, START_ID, END_ID = 0, 1, 2

# Commands whose brace-group arguments the syntax checker enforces.  Anything
# not listed is treated as arity 0 (LaTeX is open-vocabulary).
COMMAND_ARITY = {
    "\\frac": 2,
    "\\sqrt": 1,
    "\\hat": 1,
    "\\bar": 1,
    "\\vec": 1,
    "\\mathbb": 1,
    "\\mathrm": 1,
    "\\mathbf": 1,
    "\\mathcal": 1,
    "\\text": 1,
    "\\dot": 1,
    "\\tilde": 1,
}

UNBALANCED_BRACE = "UnbalancedBrace"
UNBALANCED_LEFT_RIGHT = "UnbalancedLeftRight"
BAD_ARG_COUNT = "BadArgCount"
UNKNOWN_ENVIRONMENT = "UnknownEnvironment"
DANGLING_SCRIPT = "DanglingScript"


def _is_ascii_letter(ch: str) -> bool:
    return ("a" <= ch <= "z") or ("A" <= ch <= "Z")


def tokenize(latex: str) -> list[str]:
    """Split a math-mode string (no ``$`` delimiters) into tokens.

    Raises InvalidEscape for a backslash at end of input or directly before
    whitespace.
    """
    tokens: list[str] = []
    i, n = 0, len(latex)
    while i < n:
        ch = latex[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "%":
            break
        if ch == "\\":
            if i + 1 >= n:
                raise InvalidEscape("lone trailing backslash")
            nxt = latex[i + 1]
            if nxt.isspace():
                raise InvalidEscape(f"backslash before whitespace at index {i}")
            if _is_ascii_letter(nxt):
                j = i + 1
                while j < n and _is_ascii_letter(latex[j]):
                    j += 1
                tokens.append(latex[i:j])
                i = j
            else:
                tokens.append(latex[i : i + 2])
                i += 2
            continue
        tokens.append(ch)
        i += 1
    return tokens


def detokenize(tokens: Iterable[str]) -> str:
    """Join tokens with single spaces; inverse of tokenize up to re-tokenizing."""
    return " ".join(tokens)


@dataclass(frozen=True)
class SyntaxIssue:
    position: int
    kind: str


@dataclass(frozen=True)
class SyntaxReport:
    valid: bool
    first_error: SyntaxIssue | None = None


def _parse_env_name(tokens: list[str], i: int) -> tuple[str, int] | None:
    """Read the ``{ n a m e }`` group after a \\begin or \\end at index i.

    Returns (name, index just past the closing brace), or None if malformed.
    Environment names are letter tokens plus an optional trailing ``*``.
    """
    j = i + 1
    if j >= len(tokens) or tokens[j] != "{":
        return None
    j += 1
    chars: list[str] = []
    while j < len(tokens) and tokens[j] != "}":
        t = tokens[j]
        if len(t) == 1 and (_is_ascii_letter(t) or t == "*"):
            chars.append(t)
            j += 1
        else:
            return None
    if j >= len(tokens) or not chars:
        return None
    return "".join(chars), j + 1


def _group_end(tokens: list[str], start: int) -> int | None:
    """Index just past the brace group opening at tokens[start]; None if unterminated."""
    depth = 0
    for j in range(start, len(tokens)):
        if tokens[j] == "{":
            depth += 1
        elif tokens[j] == "}":
            depth -= 1
            if depth == 0:
                return j + 1
    return None


def check_syntax(tokens: list[str]) -> SyntaxReport:
    """Validate a token sequence against the shipped well-formedness rules.

    Checks brace balance, \\left/\\right pairing at matching brace depth,
    brace-group arity for the commands in COMMAND_ARITY, script tokens
    (``^``/``_``) having an argument, and \\begin/\\end name matching and
    nesting.  The first error in scan order is reported; leftover openers at
    end of input are reported at the earliest unclosed one.
    """

    def fail(pos: int, kind: str) -> SyntaxReport:
        return SyntaxReport(False, SyntaxIssue(pos, kind))

    stack: list[tuple[str, int, str]] = []  # (kind, position, env name or "")
    i, n = 0, len(tokens)
    while i < n:
        t = tokens[i]
        if t == "{":
            stack.append(("brace", i, ""))
        elif t == "}":
            if not stack:
                return fail(i, UNBALANCED_BRACE)
            kind, pos, _ = stack.pop()
            if kind == "left":
                return fail(pos, UNBALANCED_LEFT_RIGHT)
            if kind == "env":
                return fail(pos, UNKNOWN_ENVIRONMENT)
        elif t == "\\left":
            stack.append(("left", i, ""))
        elif t == "\\right":
            if not stack or stack[-1][0] != "left":
                return fail(i, UNBALANCED_LEFT_RIGHT)
            stack.pop()
        elif t == "\\begin":
            parsed = _parse_env_name(tokens, i)
            if parsed is None:
                return fail(i, UNKNOWN_ENVIRONMENT)
            name, nxt = parsed
            stack.append(("env", i, name))
            i = nxt
            continue
        elif t == "\\end":
            parsed = _parse_env_name(tokens, i)
            if parsed is None:
                return fail(i, UNKNOWN_ENVIRONMENT)
            name, nxt = parsed
            if not stack or stack[-1][0] != "env" or stack[-1][2] != name:
                return fail(i, UNKNOWN_ENVIRONMENT)
            stack.pop()
            i = nxt
            continue
        elif t in ("^", "_"):
            if i + 1 >= n or tokens[i + 1] in ("^", "_", "}"):
                return fail(i, DANGLING_SCRIPT)
        elif t in COMMAND_ARITY:
            j = i + 1
            for _ in range(COMMAND_ARITY[t]):
                if j >= n or tokens[j] != "{":
                    return fail(i, BAD_ARG_COUNT)
                end = _group_end(tokens, j)
                if end is None:
                    return fail(i, BAD_ARG_COUNT)
                j = end
        i += 1

    if stack:
        kind, pos, _ = stack[0]
        if kind == "brace":
            return fail(pos, UNBALANCED_BRACE)
        if kind == "left":
            return fail(pos, UNBALANCED_LEFT_RIGHT)
        return fail(pos, UNKNOWN_ENVIRONMENT)
    return SyntaxReport(True, None)


class Vocab:
    """Ordered token/word list with bidirectional lookup.

    Math vocabularies carry the three reserved entries at ids 0..2; word
    vocabularies have no reserved entries.
    """

    def __init__(self, entries: Iterable[str], n_reserved: int = 0):
        self.entries: tuple[str, ...] = tuple(entries)
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("duplicate vocab entries")
        self.n_reserved = n_reserved
        if n_reserved and self.entries[:3] != RESERVED:
            raise ValueError("math vocab must start with <UNK>, <START>, <END>")
        self._ids = {tok: i for i, tok in enumerate(self.entries)}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int | None:
        return self._ids.get(token)

    def token(self, idx: int) -> str:
        return self.entries[idx]

    def encode_math(self, tokens: Iterable[str]) -> list[int]:
        """Map tokens to ids, unknown tokens to <UNK>."""
        return [self._ids.get(t, UNK_ID) for t in tokens]

    def decode_math(self, ids: Iterable[int]) -> list[str]:
        return [self.entries[i] for i in ids]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.entries:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str, math: bool = False) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            entries = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(entries, n_reserved=3 if math else 0)


def build_token_vocab(corpus: Iterator[list[str]] | Iterable[list[str]], max_size: int) -> Vocab:
    """Reserved tokens plus the (max_size - 3) most frequent corpus tokens.

    Ties are broken lexicographically.  Raises EmptyCorpus when the corpus
    yields no sequences at all.
    """
    if max_size < 4:
        raise ValueError("max_size must be at least 4")
    counts: Counter[str] = Counter()
    saw_any = False
    for tokens in corpus:
        saw_any = True
        counts.update(tokens)
    if not saw_any:
        raise EmptyCorpus("no token sequences to build a vocabulary from")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    entries = list(RESERVED) + [tok for tok, _ in ranked[: max_size - 3]]
    return Vocab(entries, n_reserved=3)
