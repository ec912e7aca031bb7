"""Equation models: topic-embedded LSTM and its comparison variants.

Variants
    TE                  topic vector joins every layer's gate input
    TD                  topic vector enters only additively at the output layer
    PLAIN               no topic information anywhere
    FIXED_TOPIC_CONCAT  frozen pre-trained topic vector concatenated to the top
                        hidden state before the output head
    BOW                 order-free bag-of-tokens mixture, no recurrence

Parameter names: ``eq.embed``, per layer ``eq.l{i}.{wi,bi,wf,bf,wc,bc,wo,bo}``,
``eq.out_w``, ``eq.out_b``, TD's ``eq.topic_out``, BOW's ``eq.topics.logits``.
Forget-gate biases start at +1; other weights are Glorot uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradcore import ParamStore, Rng, Tape, Var, glorot_uniform
from .mathtok import END_ID, START_ID, UNK_ID
from .topicnet import PROB_FLOOR

VARIANTS = ("TE", "TD", "PLAIN", "FIXED_TOPIC_CONCAT", "BOW")
RECURRENT_VARIANTS = ("TE", "TD", "PLAIN", "FIXED_TOPIC_CONCAT")


@dataclass
class EqModelConfig:
    variant: str
    vocab_size: int
    K: int
    layers: int = 2
    width: int = 500
    embed_dim: int = 128
    dropout: float = 0.5

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.layers < 1 or self.width < 1:
            raise ValueError("layers and width must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def init_eq_params(store: ParamStore, rng: Rng, cfg: EqModelConfig) -> None:
    cfg.validate()
    if cfg.variant == "BOW":
        store.add("eq.topics.logits", glorot_uniform(rng, (cfg.K, cfg.vocab_size)))
        return
    store.add("eq.embed", glorot_uniform(rng, (cfg.vocab_size, cfg.embed_dim)))
    topic_in = cfg.K if cfg.variant == "TE" else 0
    for layer in range(cfg.layers):
        in_dim = (cfg.embed_dim if layer == 0 else cfg.width) + cfg.width + topic_in
        for gate in ("wi", "wf", "wc", "wo"):
            store.add(f"eq.l{layer}.{gate}", glorot_uniform(rng, (in_dim, cfg.width)))
        store.add(f"eq.l{layer}.bi", np.zeros(cfg.width))
        store.add(f"eq.l{layer}.bf", np.ones(cfg.width))  # forget-gate bias +1
        store.add(f"eq.l{layer}.bc", np.zeros(cfg.width))
        store.add(f"eq.l{layer}.bo", np.zeros(cfg.width))
    head_in = cfg.width + (cfg.K if cfg.variant == "FIXED_TOPIC_CONCAT" else 0)
    store.add("eq.out_w", glorot_uniform(rng, (head_in, cfg.vocab_size)))
    store.add("eq.out_b", np.zeros(cfg.vocab_size))
    if cfg.variant == "TD":
        store.add("eq.topic_out", glorot_uniform(rng, (cfg.K, cfg.vocab_size)))


def zero_state(tape: Tape, cfg: EqModelConfig, batch: int) -> list[tuple[Var, Var]]:
    return [
        (tape.const(np.zeros((batch, cfg.width))), tape.const(np.zeros((batch, cfg.width))))
        for _ in range(cfg.layers)
    ]


def te_lstm_step(
    tape: Tape,
    store: ParamStore,
    cfg: EqModelConfig,
    x_emb: Var,
    state: list[tuple[Var, Var]],
    theta: Var | None,
    train: bool = False,
    rng: Rng | None = None,
    topic_logits: Var | None = None,
) -> tuple[list[tuple[Var, Var]], Var]:
    """One time step for all recurrent variants.

    Gate equations per layer: i, f, o = sigmoid(W [inp; h; (theta)] + b),
    c~ = tanh(W_c [inp; h; (theta)] + b_c), c = f*c_prev + i*c~,
    h = o * tanh(c).  Dropout hits each layer's h on its way up (never the
    recurrent connection).  `topic_logits` carries TD's precomputed
    theta @ W_d so batch loops pay for it once.
    """
    if cfg.variant == "BOW":
        raise ValueError("BOW variant has no recurrent step")
    new_state: list[tuple[Var, Var]] = []
    inp = x_emb
    for layer in range(cfg.layers):
        h_prev, c_prev = state[layer]
        parts = [inp, h_prev]
        if cfg.variant == "TE":
            if theta is None:
                raise ValueError("TE variant requires theta")
            parts.append(theta)
        gate_in = tape.concat_cols(parts)
        p = f"eq.l{layer}."
        i_g = tape.sigmoid(tape.affine(gate_in, tape.param(store, p + "wi"), tape.param(store, p + "bi")))
        f_g = tape.sigmoid(tape.affine(gate_in, tape.param(store, p + "wf"), tape.param(store, p + "bf")))
        c_tilde = tape.tanh(tape.affine(gate_in, tape.param(store, p + "wc"), tape.param(store, p + "bc")))
        o_g = tape.sigmoid(tape.affine(gate_in, tape.param(store, p + "wo"), tape.param(store, p + "bo")))
        c = tape.add(tape.mul(f_g, c_prev), tape.mul(i_g, c_tilde))
        h = tape.mul(o_g, tape.tanh(c))
        new_state.append((h, c))
        inp = tape.dropout(h, cfg.dropout, rng, train) if rng is not None else h

    head_in = inp
    if cfg.variant == "FIXED_TOPIC_CONCAT":
        if theta is None:
            raise ValueError("FIXED_TOPIC_CONCAT variant requires theta")
        head_in = tape.concat_cols([inp, theta])
    logits = tape.affine(head_in, tape.param(store, "eq.out_w"), tape.param(store, "eq.out_b"))
    if cfg.variant == "TD":
        if topic_logits is None:
            if theta is None:
                raise ValueError("TD variant requires theta")
            topic_logits = tape.matmul(theta, tape.param(store, "eq.topic_out"))
        logits = tape.add(logits, topic_logits)
    return new_state, logits


def _padded_batch(token_ids: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Teacher-forcing inputs [<START>, y..] and targets [y.., <END>] with mask."""
    lengths = np.array([len(ids) + 1 for ids in token_ids], dtype=np.int64)
    B, T = len(token_ids), int(lengths.max())
    inputs = np.full((B, T), END_ID, dtype=np.int64)
    targets = np.full((B, T), END_ID, dtype=np.int64)
    mask = np.zeros((B, T), dtype=np.float64)
    for b, ids in enumerate(token_ids):
        L = len(ids) + 1
        inputs[b, 0] = START_ID
        inputs[b, 1:L] = ids
        targets[b, : L - 1] = ids
        targets[b, L - 1] = END_ID
        mask[b, :L] = 1.0
    return inputs, targets, mask


def sequence_log_likelihood(
    tape: Tape,
    store: ParamStore,
    cfg: EqModelConfig,
    token_ids: list[np.ndarray],
    theta: Var | None,
    train: bool = False,
    rng: Rng | None = None,
) -> tuple[Var, np.ndarray]:
    """Teacher-forced total log-likelihood per sequence.

    Returns a (B,) tape value of sum_t log p(y_t | y_<t, theta) including the
    <END> prediction, and the per-sequence token counts (T + 1).
    """
    if cfg.variant == "BOW":
        counts = bag_counts(token_ids, cfg.vocab_size)
        return bow_eq_log_likelihood(tape, store, counts, theta), np.array(
            [float(len(ids)) for ids in token_ids]
        )
    for ids in token_ids:
        if len(ids) == 0:
            raise ValueError("empty token sequence")
        if np.max(ids) >= cfg.vocab_size or np.min(ids) < 0:
            raise ValueError("token id out of vocabulary range")
    inputs, targets, mask = _padded_batch([np.asarray(t, dtype=np.int64) for t in token_ids])
    B, T = inputs.shape
    state = zero_state(tape, cfg, B)
    embed = tape.param(store, "eq.embed")
    topic_logits = None
    if cfg.variant == "TD":
        if theta is None:
            raise ValueError("TD variant requires theta")
        topic_logits = tape.matmul(theta, tape.param(store, "eq.topic_out"))
    total_nll: Var | None = None
    for t in range(T):
        x = tape.embed_lookup(embed, inputs[:, t])
        state, logits = te_lstm_step(
            tape, store, cfg, x, state, theta, train=train, rng=rng, topic_logits=topic_logits
        )
        nll_t = tape.mul(tape.categorical_nll(logits, targets[:, t]), tape.const(mask[:, t]))
        total_nll = nll_t if total_nll is None else tape.add(total_nll, nll_t)
    return tape.neg(total_nll), mask.sum(axis=1)


def bag_counts(token_ids: list[np.ndarray], vocab_size: int) -> np.ndarray:
    counts = np.zeros((len(token_ids), vocab_size), dtype=np.float64)
    for b, ids in enumerate(token_ids):
        np.add.at(counts[b], np.asarray(ids, dtype=np.int64), 1.0)
    return counts


def bow_eq_log_likelihood(
    tape: Tape, store: ParamStore, eq_counts: np.ndarray, theta: Var | None
) -> Var:
    """Bag-of-tokens likelihood sum_t log((theta^T beta_eq)_{y_t}); (B,) vector."""
    if theta is None:
        raise ValueError("BOW variant requires theta")
    beta_eq = tape.softmax(tape.param(store, "eq.topics.logits"))
    mix = tape.matmul(theta, beta_eq)
    counts_c = tape.const(np.atleast_2d(eq_counts))
    return tape.reduce_sum(
        tape.mul(counts_c, tape.log(tape.add_scalar(mix, PROB_FLOOR))), axis=1
    )


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass
class SampleResult:
    ids: list[np.ndarray]  # emitted tokens, <START>/<END> stripped
    logprob: np.ndarray  # sum of full-softmax log-probs incl. the <END> step
    terminated: np.ndarray  # False where max_len cut the sequence


def sample_equations(
    store: ParamStore,
    cfg: EqModelConfig,
    theta: np.ndarray | None,
    n: int | None = None,
    mode: str = "sample",
    temperature: float = 1.0,
    max_len: int = 200,
    rng: Rng | None = None,
    prefix_ids: list[int] | None = None,
) -> SampleResult:
    """Autoregressive decode from <START>; <UNK> and <START> are never emitted.

    `theta` is an (n, K) matrix (or a single K vector broadcast to n rows).
    Greedy mode is deterministic; sample mode draws from the temperature-scaled
    masked distribution on the supplied rng stream.  Prefix tokens are force-fed
    first and included in the output and its log-probability.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    if mode not in ("sample", "greedy"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sample mode requires an rng")
    if cfg.variant == "BOW":
        raise ValueError("BOW variant cannot generate sequences")

    if theta is not None:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        n = theta.shape[0] if n is None else n
        if theta.shape[0] == 1 and n > 1:
            theta = np.repeat(theta, n, axis=0)
    elif n is None:
        n = 1

    prefix_ids = list(prefix_ids or [])
    tape = Tape()
    theta_v = tape.const(theta) if theta is not None else None
    state = zero_state(tape, cfg, n)
    embed = tape.param(store, "eq.embed")
    cur = np.full(n, START_ID, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    seqs: list[list[int]] = [[] for _ in range(n)]
    logprob = np.zeros(n, dtype=np.float64)

    for t in range(max_len):
        x = tape.embed_lookup(embed, cur)
        state, logits_v = te_lstm_step(tape, store, cfg, x, state, theta_v, train=False)
        logits = logits_v.value
        m = logits.max(axis=1, keepdims=True)
        full_logp = logits - (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))

        if t < len(prefix_ids):
            nxt = np.full(n, prefix_ids[t], dtype=np.int64)
        else:
            masked = logits.copy()
            masked[:, UNK_ID] = -np.inf
            masked[:, START_ID] = -np.inf
            if mode == "greedy":
                nxt = masked.argmax(axis=1)
            else:
                z = masked / temperature
                z -= z.max(axis=1, keepdims=True)
                probs = np.exp(z)
                probs /= probs.sum(axis=1, keepdims=True)
                nxt = rng.categorical_rows(probs)

        for b in range(n):
            if not alive[b]:
                nxt[b] = END_ID
                continue
            logprob[b] += full_logp[b, nxt[b]]
            if nxt[b] == END_ID:
                alive[b] = False
            else:
                seqs[b].append(int(nxt[b]))
        cur = nxt
        if not alive.any():
            break

    return SampleResult(
        ids=[np.asarray(s, dtype=np.int64) for s in seqs],
        logprob=logprob,
        terminated=~alive,
    )
