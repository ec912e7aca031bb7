import numpy as np
import pytest

from topiceq import corpus, trainer
from topiceq.mathtok import build_token_vocab


@pytest.fixture(scope="session")
def small_synthetic():
    spec = corpus.default_synthetic_spec(num_pairs=240, seed=13)
    pairs = corpus.generate_synthetic(spec)
    split = corpus.split_corpus(pairs, (0.8, 0.1, 0.1), seed=13)
    return spec, split


@pytest.fixture(scope="session")
def small_vocabs(small_synthetic):
    _, split = small_synthetic
    pairs = split.train + split.valid + split.test
    word_vocab = corpus.build_word_vocab((p.sentences for p in pairs), 1, 200)
    math_vocab = build_token_vocab((list(p.eq_tokens) for p in pairs), 60)
    return word_vocab, math_vocab


def tiny_config(word_vocab, math_vocab, **overrides):
    base = dict(
        K=3, variant="TE", lr=0.002, batch_size=24, clip=1.0, epochs=2,
        lambda_div=0.1, seed=11, eval_every=1, enc_hidden=16, width=10,
        layers=2, embed_dim=8, dropout=0.3,
        word_vocab=list(word_vocab.entries), math_vocab=list(math_vocab.entries),
    )
    base.update(overrides)
    return trainer.TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_trained(small_synthetic, small_vocabs):
    _, split = small_synthetic
    word_vocab, math_vocab = small_vocabs
    config = tiny_config(word_vocab, math_vocab, epochs=3)
    result = trainer.train(config, split)
    return result, split


@pytest.fixture()
def encoded_pair(small_synthetic, small_vocabs):
    _, split = small_synthetic
    word_vocab, math_vocab = small_vocabs
    encoded = trainer.encode_pairs(split.train[:4], word_vocab, math_vocab)
    return [p for p in encoded if len(p.bow) > 0][0]
