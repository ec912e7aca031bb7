"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/model error.  Flag values win
over JSON config-file keys, which win over built-in defaults.  Randomized
commands take --seed and are reproducible under it.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import align as align_mod
from . import apps, corpus, evalsuite, report, topicnet, trainer
from .errors import TopicEqError
from .gradcore import Rng
from .mathtok import Vocab, build_token_vocab, detokenize

log = logging.getLogger("topiceq")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    return int(os.environ.get("TOPICEQ_THREADS", "1"))


def _emit(payload, args) -> None:
    out = getattr(args, "out", None)
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _resolve(args, cfg_file: dict, key: str, default):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in cfg_file:
        return cfg_file[key]
    return default


def _ratios(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise _UsageError("ratios must be three comma-separated numbers")
    return tuple(parts)  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def _cmd_build_corpus(args) -> int:
    paths: list[str] = []
    for item in args.input:
        if os.path.isdir(item):
            paths.extend(sorted(glob.glob(os.path.join(item, "**", "*.tex"), recursive=True)))
        else:
            paths.append(item)
    if not paths:
        raise TopicEqError("no input documents found")

    def load_and_extract(path: str):
        with open(path, "r", encoding="utf-8", errors="replace") as fh:
            return corpus.extract_pairs(fh.read())

    n_threads = _threads(args)
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            per_doc = list(pool.map(load_and_extract, paths))
    else:
        per_doc = [load_and_extract(p) for p in paths]
    pairs = [p for doc_pairs in per_doc for p in doc_pairs]
    n = corpus.write_corpus(pairs, args.out)
    print(f"wrote {n} pairs from {len(paths)} documents to {args.out}", file=sys.stderr)
    return 0


def _cmd_build_vocabs(args) -> int:
    pairs = corpus.read_corpus(args.corpus)
    word_vocab = corpus.build_word_vocab(
        (p.sentences for p in pairs), args.min_doc_freq, args.max_word_vocab
    )
    math_vocab = build_token_vocab((list(p.eq_tokens) for p in pairs), args.max_math_vocab)
    word_vocab.save(args.out_word_vocab)
    math_vocab.save(args.out_math_vocab)
    print(
        f"word vocab {len(word_vocab)} -> {args.out_word_vocab}; "
        f"math vocab {len(math_vocab)} -> {args.out_math_vocab}",
        file=sys.stderr,
    )
    return 0


def _cmd_synth(args) -> int:
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = corpus.SyntheticSpec.from_json(fh.read())
        pairs = corpus.generate_synthetic(spec)
        spec_json = spec.to_json()
    elif args.preset == "alignment":
        aspec = corpus.default_alignment_spec(num_pairs=args.pairs, seed=args.seed)
        pairs = corpus.generate_alignment_synthetic(aspec)
        spec_json = None
    else:
        spec = corpus.default_synthetic_spec(num_pairs=args.pairs, seed=args.seed)
        pairs = corpus.generate_synthetic(spec)
        spec_json = spec.to_json()
    n = corpus.write_corpus(pairs, args.out)
    if args.dump_spec and spec_json:
        with open(args.dump_spec, "w", encoding="utf-8") as fh:
            fh.write(spec_json)
    print(f"wrote {n} synthetic pairs to {args.out}", file=sys.stderr)
    return 0


_TRAIN_DEFAULTS = {
    "num_topics": 50, "variant": "TE", "lr": 0.002, "batch_size": 200, "clip": 1.0,
    "epochs": 10, "lambda_div": 0.1, "seed": 0, "eval_every": 1, "enc_hidden": 300,
    "width": 500, "layers": 2, "embed_dim": 128, "dropout": 0.5, "kl_anneal_epochs": 0,
    "ratios": "0.8,0.1,0.1",
}


def _cmd_train(args) -> int:
    cfg_file = _load_config_file(args.config)
    get = lambda key: _resolve(args, cfg_file, key, _TRAIN_DEFAULTS[key])  # noqa: E731
    word_vocab = Vocab.load(args.word_vocab)
    math_vocab = Vocab.load(args.math_vocab, math=True)
    config = trainer.TrainConfig(
        K=get("num_topics"), variant=get("variant"), lr=get("lr"),
        batch_size=get("batch_size"), clip=get("clip"), epochs=get("epochs"),
        lambda_div=get("lambda_div"), seed=get("seed"), eval_every=get("eval_every"),
        enc_hidden=get("enc_hidden"), width=get("width"), layers=get("layers"),
        embed_dim=get("embed_dim"), dropout=get("dropout"),
        kl_anneal_epochs=get("kl_anneal_epochs"),
        word_vocab=list(word_vocab.entries), math_vocab=list(math_vocab.entries),
        word_vocab_path=args.word_vocab, math_vocab_path=args.math_vocab,
    )
    pairs = corpus.read_corpus(args.corpus)
    split = corpus.split_corpus(pairs, _ratios(get("ratios")), seed=config.seed)
    if args.shuffle_equations:
        shuffle_seed = args.shuffle_seed if args.shuffle_seed is not None else config.seed
        split.train = [
            corpus.shuffle_equation_tokens(p, shuffle_seed + i)
            for i, p in enumerate(split.train)
        ]
    pretrained = None
    if args.pretrained_topic:
        pretrained, _ = trainer.load_checkpoint(args.pretrained_topic)
    result = trainer.train(config, split, pretrained_topic=pretrained)
    trainer.save_checkpoint(args.out, result.store, config.to_dict())
    best_path = args.out + ".best"
    best_store = trainer.ParamStore()
    for name, value in result.best_values.items():
        best_store.add(name, value)
    trainer.save_checkpoint(best_path, best_store, config.to_dict())
    if args.metrics_log:
        trainer.write_metrics_log(result.metrics, args.metrics_log)
    if args.figures_dir:
        report.render_train_figures(result.metrics, args.figures_dir)
    print(
        f"saved {args.out} (best epoch {result.best_epoch} -> {best_path}); "
        f"skipped {result.skipped_empty_bow} empty-bow pairs",
        file=sys.stderr,
    )
    return 0


def _external_syntax_rate(store, config, cmd: str, n: int, temperature: float, seed: int) -> float:
    rng = Rng(seed)
    theta = evalsuite.prior_theta(store, config, n, rng)
    from .eqnet import sample_equations

    result = sample_equations(store, config.eq_config(), theta, mode="sample",
                              temperature=temperature, rng=rng)
    vocab = config.math_vocab_obj()
    failures = 0
    for ids in result.ids:
        eq = detokenize(vocab.decode_math(ids))
        proc = subprocess.run(cmd, shell=True, input=eq.encode(), capture_output=True)
        failures += proc.returncode != 0
    return failures / n


def _cmd_eval(args) -> int:
    store, config_dict = trainer.load_checkpoint(args.model)
    pairs = corpus.read_corpus(args.corpus)
    if config_dict.get("family") == "alignment":
        config = align_mod.AlignConfig.from_dict(config_dict)
        rep: dict = {"config": config_dict, "family": "alignment"}
        rep["alignment_perplexity"] = align_mod.alignment_perplexity(store, config, pairs)
        if config.mode == align_mod.TOPIC_AWARE:
            coh = evalsuite.coherence(store, config, pairs, top_n=args.coherence_top_n)
            rep["coherence"] = {
                "per_topic": coh.per_topic, "mean": coh.mean, "top_words": coh.top_words,
            }
    else:
        config = trainer.TrainConfig.from_dict(config_dict)
        rep = evalsuite.evaluate(
            store, config, pairs, seed=args.seed,
            n_syntax_samples=args.syntax_samples, temperature=args.temperature,
            coherence_top_n=args.coherence_top_n,
        )
        generative = config.variant not in (trainer.CONTEXT_ONLY, "BOW")
        if args.syntax_theta == "posterior" and generative:
            rep["syntax_error_rate"] = evalsuite.syntax_error_rate(
                store, config, args.syntax_samples, args.temperature,
                Rng(args.seed), theta_source="posterior", pairs=pairs,
            )
        if args.external_syntax_cmd and generative:
            rep["external_syntax_error_rate"] = _external_syntax_rate(
                store, config, args.external_syntax_cmd,
                min(args.syntax_samples, 50), args.temperature, args.seed,
            )
    if args.figures_dir:
        report.render_eval_figures(rep, args.figures_dir)
    _emit(rep, args)
    return 0


def _theta_from_args(args, config) -> np.ndarray:
    if args.theta is not None:
        return np.asarray([float(x) for x in args.theta.split(",")])
    if args.topic is not None:
        return apps.one_hot(args.topic, config.K)
    raise _UsageError("one of --topic, --theta, or --context is required")


def _cmd_generate(args) -> int:
    store, config_dict = trainer.load_checkpoint(args.model)
    config = trainer.TrainConfig.from_dict(config_dict)
    rng = Rng(args.seed)
    prefix = args.prefix.split() if args.prefix else None
    if args.context is not None:
        theta, samples = apps.generate_from_context(
            store, config, args.context, n=args.num, mode=args.mode,
            temperature=args.temperature, rng=rng, max_len=args.max_len,
        )
    else:
        theta = _theta_from_args(args, config)
        samples = apps.generate_from_topic(
            store, config, theta, n=args.num, mode=args.mode,
            temperature=args.temperature, rng=rng, prefix=prefix, max_len=args.max_len,
        )
    if args.format == "text":
        _emit("\n".join(detokenize(s) for s in samples), args)
    else:
        _emit({"theta": [float(x) for x in np.asarray(theta)],
               "samples": [detokenize(s) for s in samples]}, args)
    return 0


def _cmd_interpolate(args) -> int:
    store, config_dict = trainer.load_checkpoint(args.model)
    config = trainer.TrainConfig.from_dict(config_dict)
    prefix = args.prefix.split() if args.prefix else None
    rows = apps.interpolate_topics(
        store, config, args.topic_a, args.topic_b, steps=args.steps,
        prefix=prefix, max_len=args.max_len,
    )
    if args.format == "text":
        _emit("\n".join(f"{t:.3f}\t{detokenize(toks)}" for t, toks in rows), args)
    else:
        _emit([{"t": t, "equation": detokenize(toks)} for t, toks in rows], args)
    return 0


def _cmd_infer_topic(args) -> int:
    store, config_dict = trainer.load_checkpoint(args.model)
    config = trainer.TrainConfig.from_dict(config_dict)
    ranking = apps.infer_equation_topic(store, config, args.equation, top_n=args.top_n)
    _emit(
        {
            "ranking": [
                {"topic": k, "log_likelihood": ll, "top_words": ranking.top_words[k]}
                for k, ll in ranking.entries
            ]
        },
        args,
    )
    return 0


_ALIGN_DEFAULTS = {
    "num_topics": 50, "mode": "topic_aware", "factors": 0, "lr": 0.002,
    "batch_size": 200, "clip": 1.0, "epochs": 10, "lambda_div": 0.1, "seed": 0,
    "enc_hidden": 300, "max_phrases": 2000, "max_symbols": 200,
    "min_doc_freq": 2, "max_word_vocab": 2000, "ratios": "0.8,0.1,0.1",
}


def _cmd_align_train(args) -> int:
    cfg_file = _load_config_file(args.config)
    get = lambda key: _resolve(args, cfg_file, key, _ALIGN_DEFAULTS[key])  # noqa: E731
    pairs = corpus.read_corpus(args.corpus)
    with open(args.phrases, "r", encoding="utf-8") as fh:
        phrase_list = [line.strip() for line in fh if line.strip()]
    phrase_vocab = align_mod.build_phrase_vocab(pairs, phrase_list, get("max_phrases"))
    symbol_vocab = align_mod.build_symbol_vocab(pairs, get("max_symbols"))
    if args.word_vocab:
        word_vocab = Vocab.load(args.word_vocab)
    else:
        word_vocab = corpus.build_word_vocab(
            (p.sentences for p in pairs), get("min_doc_freq"), get("max_word_vocab")
        )
    config = align_mod.AlignConfig(
        K=get("num_topics"), mode=get("mode"), factors=get("factors"), lr=get("lr"),
        batch_size=get("batch_size"), clip=get("clip"), epochs=get("epochs"),
        lambda_div=get("lambda_div"), seed=get("seed"), enc_hidden=get("enc_hidden"),
        word_vocab=list(word_vocab.entries),
        phrase_vocab=list(phrase_vocab.entries),
        symbol_vocab=list(symbol_vocab.entries),
    )
    split = corpus.split_corpus(pairs, _ratios(get("ratios")), seed=config.seed)
    store, metrics = align_mod.train_alignment(config, split)
    trainer.save_checkpoint(args.out, store, config.to_dict())
    if args.metrics_log:
        trainer.write_metrics_log(metrics, args.metrics_log)
    if args.figures_dir:
        report.render_train_figures(metrics, args.figures_dir)
    print(f"saved alignment model to {args.out}", file=sys.stderr)
    return 0


def _cmd_align_predict(args) -> int:
    store, config_dict = trainer.load_checkpoint(args.model)
    if config_dict.get("family") != "alignment":
        raise TopicEqError(f"{args.model} is not an alignment checkpoint")
    config = align_mod.AlignConfig.from_dict(config_dict)
    theta = None
    if args.theta is not None:
        theta = np.asarray([float(x) for x in args.theta.split(",")])
    ranked = align_mod.predict_phrases(
        store, config, args.symbol, theta=theta, topic=args.topic,
        context_text=args.context, top_n=args.top_n,
    )
    _emit({"symbol": args.symbol,
           "phrases": [{"phrase": p, "prob": pr} for p, pr in ranked]}, args)
    return 0


def _cmd_topics(args) -> int:
    store, config_dict = trainer.load_checkpoint(args.model)
    if config_dict.get("family") == "alignment":
        config = align_mod.AlignConfig.from_dict(config_dict)
    else:
        config = trainer.TrainConfig.from_dict(config_dict)
    vocab = config.word_vocab_obj()
    _emit(topicnet.topic_report(store, vocab, n=args.top_n), args)
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def _add_out_format(p, formats=("json", "text")):
    p.add_argument("--out", help="write output here instead of stdout")
    p.add_argument("--format", choices=formats, default="json", help="output format (default json)")


def build_parser() -> _Parser:
    parser = _Parser(prog="topiceq", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("build-corpus", help="extract context-equation pairs from LaTeX sources")
    p.add_argument("--input", nargs="+", required=True, help=".tex files or directories")
    p.add_argument("--out", required=True, help="output corpus JSONL")
    p.add_argument("--threads", type=int, help="parallel documents (default $TOPICEQ_THREADS or 1)")
    p.set_defaults(func=_cmd_build_corpus)

    p = sub.add_parser("build-vocabs", help="build word and math-token vocabularies")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-word-vocab", required=True)
    p.add_argument("--out-math-vocab", required=True)
    p.add_argument("--min-doc-freq", type=int, default=2, help="default 2")
    p.add_argument("--max-word-vocab", type=int, default=2000, help="default 2000")
    p.add_argument("--max-math-vocab", type=int, default=300, help="default 300")
    p.set_defaults(func=_cmd_build_vocabs)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--preset", choices=["topic", "alignment"], default="topic", help="default topic")
    p.add_argument("--spec", help="JSON spec file overriding the preset")
    p.add_argument("--pairs", type=int, default=3000, help="default 3000")
    p.add_argument("--seed", type=int, default=7, help="default 7")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-spec", help="also write the resolved spec JSON here")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a joint topic-equation model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--word-vocab", required=True)
    p.add_argument("--math-vocab", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.best written alongside)")
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--num-topics", type=int, help="default 50")
    p.add_argument("--variant",
                   choices=["TE", "TD", "PLAIN", "FIXED_TOPIC_CONCAT", "BOW", "CONTEXT_ONLY"],
                   help="default TE")
    p.add_argument("--lr", type=float, help="default 0.002")
    p.add_argument("--batch-size", type=int, help="default 200")
    p.add_argument("--clip", type=float, help="default 1.0")
    p.add_argument("--epochs", type=int, help="default 10")
    p.add_argument("--lambda-div", type=float, help="default 0.1")
    p.add_argument("--seed", type=int, help="default 0")
    p.add_argument("--eval-every", type=int, help="default 1")
    p.add_argument("--enc-hidden", type=int, help="default 300")
    p.add_argument("--width", type=int, help="default 500")
    p.add_argument("--layers", type=int, help="default 2")
    p.add_argument("--embed-dim", type=int, help="default 128")
    p.add_argument("--dropout", type=float, help="default 0.5")
    p.add_argument("--kl-anneal-epochs", type=int, help="default 0 (off)")
    p.add_argument("--ratios", help="train,valid,test split ratios; default 0.8,0.1,0.1")
    p.add_argument("--pretrained-topic", help="checkpoint whose topic side is loaded and frozen")
    p.add_argument("--shuffle-equations", action="store_true",
                   help="shuffle each training equation's token order (ablation)")
    p.add_argument("--shuffle-seed", type=int, help="seed for --shuffle-equations (default --seed)")
    p.add_argument("--metrics-log", help="write per-epoch JSONL metrics here")
    p.add_argument("--figures-dir", help="render training curves and CSV here")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True, help="held-out pairs JSONL")
    p.add_argument("--seed", type=int, default=0, help="default 0")
    p.add_argument("--syntax-samples", type=int, default=200, help="default 200")
    p.add_argument("--temperature", type=float, default=1.0, help="default 1.0")
    p.add_argument("--coherence-top-n", type=int, default=10, help="default 10")
    p.add_argument("--syntax-theta", choices=["prior", "posterior"], default="prior",
                   help="theta source for syntax sampling (default prior)")
    p.add_argument("--external-syntax-cmd",
                   help="shell command cross-validating sampled equations (reads stdin, exit 0 = valid)")
    p.add_argument("--figures-dir", help="render coherence figure and CSV here")
    _add_out_format(p, formats=("json",))
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("generate", help="generate equations from a topic, theta, or context")
    p.add_argument("--model", required=True)
    p.add_argument("--topic", type=int, help="one-hot topic index")
    p.add_argument("--theta", help="comma-separated simplex vector")
    p.add_argument("--context", help="context text; theta inferred from it")
    p.add_argument("--num", type=int, default=1, help="default 1")
    p.add_argument("--mode", choices=["sample", "greedy"], default="sample", help="default sample")
    p.add_argument("--temperature", type=float, default=1.0, help="default 1.0")
    p.add_argument("--seed", type=int, default=0, help="default 0")
    p.add_argument("--prefix", help="space-separated tokens to force-feed first")
    p.add_argument("--max-len", type=int, default=200, help="default 200")
    _add_out_format(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("interpolate", help="greedy decodes along a topic interpolation")
    p.add_argument("--model", required=True)
    p.add_argument("--topic-a", type=int, required=True)
    p.add_argument("--topic-b", type=int, required=True)
    p.add_argument("--steps", type=int, default=5, help="default 5")
    p.add_argument("--prefix", help="space-separated tokens to force-feed first")
    p.add_argument("--max-len", type=int, default=200, help="default 200")
    _add_out_format(p)
    p.set_defaults(func=_cmd_interpolate)

    p = sub.add_parser("infer-topic", help="rank topics by equation likelihood")
    p.add_argument("--model", required=True)
    p.add_argument("--equation", required=True, help="LaTeX math string")
    p.add_argument("--top-n", type=int, default=5, help="default 5")
    _add_out_format(p, formats=("json",))
    p.set_defaults(func=_cmd_infer_topic)

    p = sub.add_parser("align-train", help="train a symbol-phrase alignment model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--phrases", required=True, help="phrase list file, one lowercase phrase per line")
    p.add_argument("--word-vocab", help="word vocab file (built from the corpus when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--mode", choices=["baseline", "topic_aware"], help="default topic_aware")
    p.add_argument("--num-topics", type=int, help="default 50")
    p.add_argument("--factors", type=int, help="default 0 (= num topics)")
    p.add_argument("--lr", type=float, help="default 0.002")
    p.add_argument("--batch-size", type=int, help="default 200")
    p.add_argument("--clip", type=float, help="default 1.0")
    p.add_argument("--epochs", type=int, help="default 10")
    p.add_argument("--lambda-div", type=float, help="default 0.1")
    p.add_argument("--seed", type=int, help="default 0")
    p.add_argument("--enc-hidden", type=int, help="default 300")
    p.add_argument("--max-phrases", type=int, help="default 2000")
    p.add_argument("--max-symbols", type=int, help="default 200")
    p.add_argument("--min-doc-freq", type=int, help="default 2")
    p.add_argument("--max-word-vocab", type=int, help="default 2000")
    p.add_argument("--ratios", help="default 0.8,0.1,0.1")
    p.add_argument("--metrics-log", help="write per-epoch JSONL metrics here")
    p.add_argument("--figures-dir", help="render training curves and CSV here")
    p.set_defaults(func=_cmd_align_train)

    p = sub.add_parser("align-predict", help="rank phrases for a math symbol")
    p.add_argument("--model", required=True)
    p.add_argument("--symbol", required=True)
    p.add_argument("--topic", type=int, help="condition on a one-hot topic")
    p.add_argument("--theta", help="comma-separated simplex vector")
    p.add_argument("--context", help="context text; theta inferred from it")
    p.add_argument("--top-n", type=int, default=10, help="default 10")
    _add_out_format(p, formats=("json",))
    p.set_defaults(func=_cmd_align_predict)

    p = sub.add_parser("topics", help="report each topic's top words")
    p.add_argument("--model", required=True)
    p.add_argument("--top-n", type=int, default=20, help="default 20")
    _add_out_format(p, formats=("json",))
    p.set_defaults(func=_cmd_topics)

    return parser


def dispatch(argv: list[str]) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            print(parser.format_usage(), file=sys.stderr)
            return 1
        return args.func(args)
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit as e:  # argparse --help exits 0
        code = e.code if isinstance(e.code, int) else 0
        return code if code == 0 else 1
    except (TopicEqError, OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
