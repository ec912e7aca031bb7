"""Joint variational training of the topic and equation models, plus the
binary checkpoint container.

The per-pair loss is the negative evidence lower bound plus the diversity
penalty:  total = -bow_ll + kl - eq_ll + lambda_div * diversity.  One noise
draw per pair per step reparameterizes the posterior sample.  Everything that
consumes randomness (init, batch order, noise, dropout) runs off one seeded
stream, so a (seed, config, corpus) triple fully determines the checkpoint.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, asdict
from typing import BinaryIO

import numpy as np

from .corpus import ContextEqPair, CorpusSplit, SparseBow, preprocess_context
from .errors import BadMagic, EmptyBatch, TruncatedFile, VersionMismatch
from .eqnet import (
    EqModelConfig,
    bag_counts,
    bow_eq_log_likelihood,
    init_eq_params,
    sequence_log_likelihood,
)
from .gradcore import ParamStore, Rng, Tape, Var, adam_step, clip_global_norm
from .mathtok import Vocab
from . import topicnet

log = logging.getLogger("topiceq")

MAGIC = b"TEQ1"
FORMAT_VERSION = 1

CONTEXT_ONLY = "CONTEXT_ONLY"
TRAIN_VARIANTS = ("TE", "TD", "PLAIN", "FIXED_TOPIC_CONCAT", "BOW", CONTEXT_ONLY)


@dataclass
class TrainConfig:
    K: int = 50
    variant: str = "TE"
    lr: float = 0.002
    batch_size: int = 200
    clip: float = 1.0
    epochs: int = 10
    lambda_div: float = 0.1
    seed: int = 0
    eval_every: int = 1
    enc_hidden: int = 300
    width: int = 500
    layers: int = 2
    embed_dim: int = 128
    dropout: float = 0.5
    kl_anneal_epochs: int = 0  # 0 disables annealing
    word_vocab: list[str] = field(default_factory=list)
    math_vocab: list[str] = field(default_factory=list)
    word_vocab_path: str = ""
    math_vocab_path: str = ""
    family: str = "topiceq"

    def validate(self) -> None:
        if self.variant not in TRAIN_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in ("K", "lr", "batch_size", "clip", "epochs", "eval_every",
                     "enc_hidden", "width", "layers", "embed_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.word_vocab or (self.variant != CONTEXT_ONLY and not self.math_vocab):
            raise ValueError("config must embed its vocabularies")

    def eq_config(self) -> EqModelConfig:
        return EqModelConfig(
            variant=self.variant,
            vocab_size=len(self.math_vocab),
            K=self.K,
            layers=self.layers,
            width=self.width,
            embed_dim=self.embed_dim,
            dropout=self.dropout,
        )

    def word_vocab_obj(self) -> Vocab:
        return Vocab(self.word_vocab, n_reserved=0)

    def math_vocab_obj(self) -> Vocab:
        return Vocab(self.math_vocab, n_reserved=3)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def canonical_config_json(config_dict: dict) -> bytes:
    return json.dumps(config_dict, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class LossBreakdown:
    bow_ll: float
    kl: float
    eq_ll: float
    diversity: float
    total: float


@dataclass
class EncodedPair:
    bow: SparseBow
    eq_ids: np.ndarray


def encode_pairs(
    pairs: list[ContextEqPair], word_vocab: Vocab, math_vocab: Vocab
) -> list[EncodedPair]:
    return [
        EncodedPair(
            bow=preprocess_context(p.sentences, word_vocab),
            eq_ids=np.asarray(math_vocab.encode_math(p.eq_tokens), dtype=np.int64),
        )
        for p in pairs
    ]


def init_params(config: TrainConfig, rng: Rng) -> ParamStore:
    store = ParamStore()
    topicnet.init_topic_params(store, rng, len(config.word_vocab), config.K, config.enc_hidden)
    if config.variant != CONTEXT_ONLY:
        init_eq_params(store, rng, config.eq_config())
    return store


def build_batch_loss(
    tape: Tape,
    store: ParamStore,
    config: TrainConfig,
    batch: list[EncodedPair],
    eps: np.ndarray,
    rng: Rng | None,
    train: bool,
    kl_weight: float = 1.0,
) -> tuple[Var, LossBreakdown]:
    """Mean per-pair loss over a batch, with its additive breakdown.

    With kl_weight = 1 (the default; annealing off) the breakdown satisfies
    total = -bow_ll + kl - eq_ll + lambda_div * diversity exactly.
    """
    B = len(batch)
    V = len(config.word_vocab)
    counts = np.stack([p.bow.to_dense(V) for p in batch])
    mu, logvar = topicnet.infer_posterior(tape, store, counts)
    _, theta = topicnet.sample_theta(tape, store, mu, logvar, eps)
    beta = topicnet.topic_word_dist(tape, store)

    bow_ll = tape.mean_all(topicnet.bow_log_likelihood(tape, counts, theta, beta))
    kl = tape.mean_all(topicnet.kl_to_standard_normal(tape, mu, logvar))

    if config.variant == CONTEXT_ONLY:
        eq_ll = tape.const(0.0)
    else:
        eq_cfg = config.eq_config()
        if config.variant == "BOW":
            eq_counts = bag_counts([p.eq_ids for p in batch], eq_cfg.vocab_size)
            eq_ll = tape.mean_all(bow_eq_log_likelihood(tape, store, eq_counts, theta))
        else:
            ll_rows, _ = sequence_log_likelihood(
                tape, store, eq_cfg, [p.eq_ids for p in batch], theta, train=train, rng=rng
            )
            eq_ll = tape.mean_all(ll_rows)

    div = topicnet.diversity_penalty(tape, beta)
    total = tape.add(
        tape.add(tape.neg(bow_ll), tape.scale(kl, kl_weight)),
        tape.add(tape.neg(eq_ll), tape.scale(div, config.lambda_div)),
    )
    breakdown = LossBreakdown(
        bow_ll=float(bow_ll.value),
        kl=float(kl.value),
        eq_ll=float(eq_ll.value),
        diversity=float(div.value),
        total=float(total.value),
    )
    return total, breakdown


def elbo_loss(
    pair: EncodedPair, store: ParamStore, config: TrainConfig, eps: np.ndarray,
    rng: Rng | None = None, train: bool = False,
) -> LossBreakdown:
    """Single-pair loss breakdown (one-sample bound with the given noise)."""
    if len(pair.bow) == 0 or len(pair.eq_ids) == 0:
        raise ValueError("elbo_loss requires a nonempty bow and equation")
    tape = Tape()
    _, breakdown = build_batch_loss(
        tape, store, config, [pair], np.atleast_2d(eps), rng, train
    )
    return breakdown


@dataclass
class TrainResult:
    store: ParamStore
    config: TrainConfig
    metrics: list[dict]
    best_values: dict[str, np.ndarray]
    best_epoch: int
    skipped_empty_bow: int


def _valid_perplexity(store: ParamStore, config: TrainConfig, pairs: list[EncodedPair]) -> float:
    """Equation perplexity on the posterior-mean path (word perplexity for
    context-only models)."""
    V = len(config.word_vocab)
    total_lp, total_n = 0.0, 0.0
    bs = max(1, config.batch_size)
    for i in range(0, len(pairs), bs):
        chunk = pairs[i : i + bs]
        counts = np.stack([p.bow.to_dense(V) for p in chunk])
        state = topicnet.posterior_mean_theta(store, counts)
        tape = Tape()
        theta = tape.const(state.theta)
        if config.variant == CONTEXT_ONLY:
            beta = topicnet.topic_word_dist(tape, store)
            ll = topicnet.bow_log_likelihood(tape, counts, theta, beta)
            total_lp += float(ll.value.sum())
            total_n += float(sum(p.bow.total() for p in chunk))
        else:
            ll, n_tok = sequence_log_likelihood(
                tape, store, config.eq_config(), [p.eq_ids for p in chunk], theta, train=False
            )
            total_lp += float(ll.value.sum())
            total_n += float(n_tok.sum())
    if total_n == 0:
        return float("nan")
    return float(np.exp(-total_lp / total_n))


def train(
    config: TrainConfig,
    split: CorpusSplit,
    pretrained_topic: ParamStore | None = None,
) -> TrainResult:
    """Minibatch training loop: mean pair loss, backward, global-norm clip,
    Adam.  Metrics are recorded per epoch; the best epoch by validation
    perplexity is kept alongside the final parameters."""
    config.validate()
    if config.variant == "FIXED_TOPIC_CONCAT" and pretrained_topic is None:
        raise ValueError("FIXED_TOPIC_CONCAT requires a pretrained topic model store")

    word_vocab = config.word_vocab_obj()
    math_vocab = config.math_vocab_obj() if config.math_vocab else None

    rng = Rng(config.seed)
    store = init_params(config, rng)
    if pretrained_topic is not None:
        topic_values = {
            n: v for n, v in pretrained_topic.values.items()
            if n.startswith(("enc.", "gmap.", "topics."))
        }
        store.load_values(topic_values)
        for name in topic_values:
            store.frozen.add(name)

    encoded = encode_pairs(split.train, word_vocab, math_vocab or word_vocab)
    usable = [p for p in encoded if len(p.bow) > 0 and len(p.eq_ids) > 0]
    skipped = len(encoded) - len(usable)
    if not usable:
        raise EmptyBatch("every training pair was skipped (empty bow or equation)")
    valid_encoded = encode_pairs(split.valid, word_vocab, math_vocab or word_vocab)

    use_eps0 = config.variant == "FIXED_TOPIC_CONCAT"  # frozen topic side: deterministic theta
    metrics: list[dict] = []
    best_ppl, best_epoch = float("inf"), -1
    best_values = store.copy_values()
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(usable))
        kl_weight = (
            min(1.0, epoch / config.kl_anneal_epochs) if config.kl_anneal_epochs > 0 else 1.0
        )
        epoch_loss, epoch_kl, n_batches = 0.0, 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [usable[i] for i in order[start : start + config.batch_size]]
            eps = np.zeros((len(batch), config.K)) if use_eps0 else rng.normal((len(batch), config.K))
            tape = Tape()
            loss, breakdown = build_batch_loss(
                tape, store, config, batch, eps, rng, train=True, kl_weight=kl_weight
            )
            store.zero_grads()
            tape.backward(loss, store)
            clip_global_norm(store, config.clip)
            step += 1
            adam_step(store, config.lr, t=step)
            epoch_loss += breakdown.total
            epoch_kl += breakdown.kl
            n_batches += 1

        valid_ppl = (
            _valid_perplexity(store, config, valid_encoded)
            if valid_encoded and epoch % config.eval_every == 0
            else None
        )
        record = {
            "epoch": epoch,
            "train_loss": epoch_loss / max(1, n_batches),
            "valid_ppl": valid_ppl,
            "kl_mean": epoch_kl / max(1, n_batches),
        }
        metrics.append(record)
        log.info(
            "epoch %d  loss %.4f  valid_ppl %s  kl %.4f",
            epoch,
            record["train_loss"],
            "-" if valid_ppl is None else f"{valid_ppl:.4f}",
            record["kl_mean"],
        )
        if valid_ppl is not None and valid_ppl < best_ppl:
            best_ppl, best_epoch = valid_ppl, epoch
            best_values = store.copy_values()

    if skipped:
        log.info("skipped %d pairs with empty bag-of-words", skipped)
    return TrainResult(
        store=store,
        config=config,
        metrics=metrics,
        best_values=best_values,
        best_epoch=best_epoch,
        skipped_empty_bow=skipped,
    )


def write_metrics_log(metrics: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in metrics:
            fh.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------
# Layout (little-endian): magic "TEQ1"; u32 version; u32 config-JSON length;
# config JSON; u32 tensor count; per tensor: u16 name length, name bytes,
# u8 dtype (0 = f64), u8 rank, u32 dims[rank], row-major f64 payload.


def save_checkpoint(path: str, store: ParamStore, config_dict: dict) -> None:
    blob = canonical_config_json(config_dict)
    names = store.names()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            nb = name.encode("utf-8")
            arr = store.values[name]
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", 0, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFile(f"expected {n} bytes, got {len(data)}")
    return data


def load_checkpoint(path: str) -> tuple[ParamStore, dict]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise BadMagic(f"{path} is not a TEQ1 checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config_dict = json.loads(_read_exact(fh, blob_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        store = ParamStore()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            dtype_code, rank = struct.unpack("<BB", _read_exact(fh, 2))
            if dtype_code != 0:
                raise VersionMismatch(f"unknown dtype code {dtype_code}")
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            n_elem = int(np.prod(dims)) if rank else 1
            payload = _read_exact(fh, 8 * n_elem)
            store.add(name, np.frombuffer(payload, dtype="<f8").reshape(dims).copy())
    return store, config_dict
