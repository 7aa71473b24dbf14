"""Command-line entry point.

Commands: build-vocab, synth, train, eval, export, shift-analysis.
Exit codes: 0 success, 1 usage error, 2 data error.  Logs go to standard
error; the CTXVEC_LOG environment variable sets the level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evalsuite, params, synthworld, trainer
from .errors import CtxvecError, UsageError
from .modelspec import GRAMMAR_HELP, parse_model
from .objectives import BASE_O
from .scenegraph import load_patch_features, load_scenes
from .textcorpus import Vocabulary, build_vocab, load_corpus, read_sentences

logger = logging.getLogger(__name__)

_DATA_ERRORS = (CtxvecError, FileNotFoundError, IsADirectoryError, PermissionError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _configure_logging() -> None:
    level = os.environ.get("CTXVEC_LOG", "WARNING").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _write_report(payload: dict, path: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _load_embeddings(path, vocab_path=None) -> dict:
    """Word -> vector dict from either a native store (+vocab) or a text file."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == params.STORE_MAGIC:
        store = params.load(path)
        vocab_file = Path(vocab_path) if vocab_path else Path(str(path) + ".vocab")
        if not vocab_file.exists():
            raise UsageError(
                f"native store {path} needs a vocabulary file "
                f"(looked for {vocab_file}); pass --vocab"
            )
        vocab = Vocabulary.load(vocab_file)
        if len(vocab) != store.vocab_size:
            raise UsageError(
                f"vocabulary size {len(vocab)} does not match store rows "
                f"{store.vocab_size}"
            )
        return {w: store.T[i] for i, w in enumerate(vocab.words)}
    words, mat = params.read_text_embeddings(path)
    return {w: mat[i] for i, w in enumerate(words)}


# ---------------------------------------------------------------------------
# commands


def _cmd_build_vocab(args) -> int:
    sentences = read_sentences(args.corpus)
    vocab = build_vocab((t for s in sentences for t in s), min_count=args.min_count)
    vocab.save(args.out)
    logger.info("wrote %d words to %s", len(vocab), args.out)
    return 0


def _parse_rule(raw: str):
    parts = raw.split(",")
    if len(parts) != 3:
        raise UsageError("--rule takes ENTITY_CAT,CONTEXT_CAT,RELATION")
    try:
        ec, cc = int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError("rule categories must be integers")
    rel = parts[2].strip()
    if rel not in synthworld.RELATIONS:
        raise UsageError(f"relation must be one of {synthworld.RELATIONS}")
    return (ec, cc), rel


def _cmd_synth(args) -> int:
    rules = dict(_parse_rule(r) for r in args.rule or [])
    spec = synthworld.WorldSpec(
        n_categories=args.categories,
        words_per_category=args.words_per_category,
        scenes=args.scenes,
        objects_per_scene=args.objects_per_scene,
        affinity=args.affinity,
        rules=rules,
        sentences=args.sentences,
        tokens_per_sentence=args.tokens_per_sentence,
        visual_fraction=args.visual_fraction,
        feature_dim=args.feature_dim,
        seed=args.seed,
    )
    try:
        world = synthworld.generate(spec, args.out)
    except ValueError as e:
        raise UsageError(str(e))
    for p in (world.corpus_path, world.scenes_path, world.features_path,
              world.gold_path, world.benchmark_path):
        logger.info("wrote %s", p)
    print(json.dumps({
        "corpus": str(world.corpus_path),
        "scenes": str(world.scenes_path),
        "features": str(world.features_path),
        "gold": str(world.gold_path),
        "benchmark": str(world.benchmark_path),
    }, indent=2))
    return 0


def _init_store(args, cfg, corpus, scenes, features):
    obj_words = []
    if scenes:
        obj_words = sorted({inst.word for sc in scenes for inst in sc.instances})
    feature_dim = features.feature_dim if features is not None else 1
    fresh_spec = params.InitSpec(params.MODE_UNIFORM, seed=cfg.seed)
    if not args.init_from:
        return params.init(
            len(corpus.vocab), len(obj_words), cfg.d, feature_dim, fresh_spec,
            obj_words=np.asarray(obj_words, dtype=np.int32),
        )
    with open(args.init_from, "rb") as fh:
        magic = fh.read(4)
    if magic == params.STORE_MAGIC:
        old = params.load(args.init_from)
        if old.vocab_size != len(corpus.vocab):
            raise UsageError(
                f"store {args.init_from} was trained with a different vocabulary "
                f"({old.vocab_size} words vs {len(corpus.vocab)})"
            )
        sidecar = Path(str(args.init_from) + ".vocab")
        if sidecar.exists():
            old_vocab = Vocabulary.load(sidecar)
            if old_vocab.words != corpus.vocab.words:
                raise UsageError(
                    f"vocabulary of {args.init_from} differs from the corpus"
                )
        cfg.d = old.d
        store = params.init(
            len(corpus.vocab), len(obj_words), cfg.d, feature_dim, fresh_spec,
            obj_words=np.asarray(obj_words, dtype=np.int32),
        )
        store.T[:] = old.T
        store.U[:] = old.U
        if np.array_equal(old.obj_words, store.obj_words) and old.feature_dim == feature_dim:
            store.V[:] = old.V
            store.N[:] = old.N
            store.M_concat[:] = old.M_concat
            store.M_bilin[:] = old.M_bilin
        return store
    spec = params.InitSpec(params.MODE_PRETRAINED, seed=cfg.seed,
                           pretrained_path=args.init_from)
    return params.init(
        len(corpus.vocab), len(obj_words), cfg.d, feature_dim, spec,
        vocab_words=corpus.vocab.words,
        obj_words=np.asarray(obj_words, dtype=np.int32),
    )


def _cmd_train(args) -> int:
    cfg = trainer.TrainConfig()
    if args.config:
        trainer.apply_config_mapping(cfg, trainer.read_config_file(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.alpha is not None:
        cfg.alpha = args.alpha
    if args.parallel:
        cfg.deterministic = False
    elif args.deterministic:
        cfg.deterministic = True
    if args.model:
        spec = parse_model(args.model)
        if spec.sequential:
            raise UsageError(
                "sequential models are built with `export --text-emb/--visual-emb`, "
                "not trained; " + GRAMMAR_HELP
            )
        cfg.model = spec.to_weights(alpha=cfg.alpha)

    corpus = load_corpus(args.corpus, min_count=cfg.min_count)
    scenes = load_scenes(args.scenes, corpus.vocab) if args.scenes else []
    features = load_patch_features(args.features) if args.features else None
    store = _init_store(args, cfg, corpus, scenes, features)
    store, report = trainer.train(cfg, corpus, scenes, features, store)
    params.save(store, args.out)
    corpus.vocab.save(str(args.out) + ".vocab")
    logger.info("wrote %s (+.vocab)", args.out)
    if args.report:
        _write_report({"config": cfg.to_dict(), **report.to_dict()}, args.report)
    return 0


def _cmd_eval(args) -> int:
    embeddings = _load_embeddings(args.emb, args.vocab)
    restrict = None
    if args.filter_words:
        restrict = set(Path(args.filter_words).read_text().split())
    if args.task == "similarity":
        if not args.pairs:
            raise UsageError("--task similarity needs --pairs")
        bench = evalsuite.load_similarity_benchmark(args.pairs)
        rho, coverage = evalsuite.spearman_eval(embeddings, bench, restrict_to=restrict)
        payload = {"task": "similarity", "benchmark": bench.name,
                   "rho": rho, "coverage": coverage}
    elif args.task == "norms":
        if not args.norms or not args.categories:
            raise UsageError("--task norms needs --norms and --categories")
        ds = evalsuite.load_feature_norms(args.norms, args.categories)
        per_cat, per_char, skipped = evalsuite.feature_norm_eval(
            embeddings, ds, seed=args.seed
        )
        payload = {"task": "norms", "categories": per_cat,
                   "characteristics": per_char, "skipped": skipped}
    elif args.task == "concreteness":
        if not args.concreteness:
            raise UsageError("--task concreteness needs --concreteness")
        ds = evalsuite.load_concreteness(args.concreteness)
        r2 = evalsuite.concreteness_eval(embeddings, ds, seed=args.seed)
        payload = {"task": "concreteness", "r2": r2}
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown task {args.task!r}")
    _write_report(payload, args.report)
    return 0


def _cmd_export(args) -> int:
    if args.text_emb or args.visual_emb:
        if not (args.text_emb and args.visual_emb and args.dim):
            raise UsageError("sequential export needs --text-emb, --visual-emb and --dim")
        text = _load_embeddings(args.text_emb)
        visual = _load_embeddings(args.visual_emb)
        combined = evalsuite.sequential_baseline(text, visual, args.dim)
        words = list(combined)
        params.write_text_embeddings(words, np.stack([combined[w] for w in words]), args.out)
        return 0
    if not args.emb:
        raise UsageError("export needs --emb (or --text-emb/--visual-emb)")
    embeddings = _load_embeddings(args.emb, args.vocab)
    words = list(embeddings)
    params.write_text_embeddings(words, np.stack([embeddings[w] for w in words]), args.out)
    return 0


def _cmd_shift_analysis(args) -> int:
    initial = _load_embeddings(args.init_from)
    final = _load_embeddings(args.emb, args.vocab)
    ds = evalsuite.load_concreteness(args.concreteness)
    result = evalsuite.shift_analysis(initial, final, ds)
    payload = {
        "task": "shift-analysis",
        "outcome": result.outcome,
        "rho": result.rho,
        "words": result.words_used,
        "skipped_zero": result.skipped_zero,
    }
    _write_report(payload, args.report)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="ctxvec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build and save a vocabulary file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("synth", help="generate a synthetic world")
    p.add_argument("--out", required=True)
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--words-per-category", type=int, default=10)
    p.add_argument("--scenes", type=int, default=500)
    p.add_argument("--objects-per-scene", type=int, default=4)
    p.add_argument("--affinity", type=float, default=0.9)
    p.add_argument("--sentences", type=int, default=500)
    p.add_argument("--tokens-per-sentence", type=int, default=8)
    p.add_argument("--visual-fraction", type=float, default=1.0)
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--rule", action="append",
                   help="ENTITY_CAT,CONTEXT_CAT,RELATION (repeatable)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--model", help=GRAMMAR_HELP)
    p.add_argument("--corpus", required=True)
    p.add_argument("--scenes")
    p.add_argument("--features")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--init-from")
    p.add_argument("--deterministic", action="store_true", default=False,
                   help="force deterministic single-threaded updates (default)")
    p.add_argument("--parallel", action="store_true", default=False,
                   help="lock-free parallel updates; final state is run-dependent")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate embeddings")
    p.add_argument("--task", required=True,
                   choices=["similarity", "norms", "concreteness"])
    p.add_argument("--emb", required=True)
    p.add_argument("--vocab")
    p.add_argument("--pairs")
    p.add_argument("--norms")
    p.add_argument("--categories")
    p.add_argument("--concreteness")
    p.add_argument("--filter-words")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export", help="export embeddings to the text format")
    p.add_argument("--emb")
    p.add_argument("--vocab")
    p.add_argument("--out", required=True)
    p.add_argument("--text-emb", help="sequential mode: text embeddings")
    p.add_argument("--visual-emb", help="sequential mode: visual embeddings")
    p.add_argument("--dim", type=int, help="sequential mode: output dimension")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("shift-analysis",
                       help="correlate embedding shift with concreteness")
    p.add_argument("--init-from", required=True, help="initial embeddings")
    p.add_argument("--emb", required=True, help="final embeddings")
    p.add_argument("--vocab")
    p.add_argument("--concreteness", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_shift_analysis)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
