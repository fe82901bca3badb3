"""Command-line entry point: ``patsnd <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .contrastive import Label, Triple
from .dsbuild import align, import_annotation_xml, read_corpus, read_instances, read_triples, split, write_instances
from .encoder import EmbeddingCache, make_encoder
from .errors import PatSndError
from .evaluation import evaluate, read_annotations, score_instances
from .io import iter_jsonl, write_json, write_jsonl
from .kb import KnowledgeBase, build_kb_from_triples, load_kb, relation_catalog, save_kb
from .pat import explain
from .relclf import (OracleClassifier, load_classifier, macro_f1, predict_instances, save_classifier,
                     train_relation_classifier)
from .synthetic import generate_benchmark, write_benchmark
from .training import TrainConfig, load_checkpoint, load_config, save_checkpoint, train

log = logging.getLogger("patsnd")

CACHE_ENV = "PAT_SND_CACHE_DIR"
ENCODER_SEED = 0


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


def _require(path, what="file"):
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}")
    return p


# -- encoder / cache --------------------------------------------------------------


def _cache_path(kind, dim_f):
    root = os.environ.get(CACHE_ENV)
    return Path(root) / f"embeddings-{kind}-{dim_f}.bin" if root else None


def _open_encoder(kind, dim_f=768):
    cache = EmbeddingCache()
    path = _cache_path(kind, dim_f)
    if path is not None and path.exists():
        cache.load(path, dim=dim_f)
    return make_encoder(kind, dim_f=dim_f, seed=ENCODER_SEED, cache=cache)


def _close_encoder(encoder):
    path = _cache_path(encoder.name, encoder.dim_f)
    if path is not None and len(encoder.cache):
        encoder.cache.save(path)


def _encoder_info(encoder):
    return {"encoder": encoder.name, "dim_f": encoder.dim_f, "encoder_seed": ENCODER_SEED}


def _encoder_for(args, info):
    kind = args.encoder or info.get("encoder", "fallback")
    if info and kind != info.get("encoder", kind):
        raise CliError(f"checkpoint was trained with the {info['encoder']!r} encoder, not {kind!r}")
    return _open_encoder(kind, info.get("dim_f", 768))


# -- shared loading -------------------------------------------------------------


def _load_kb(args):
    relations = relation_catalog(_require(args.relations, "relation catalog"))
    return load_kb(_require(args.kb, "knowledge base"), relations)


def _classifier(args, kb, model):
    if args.oracle_relations:
        return OracleClassifier(model.relations)
    if not args.relclf:
        raise CliError("pass --oracle-relations or --relclf CHECKPOINT")
    return load_classifier(_require(args.relclf, "classifier checkpoint"))


# -- subcommands ------------------------------------------------------------------


def cmd_build_kb(args):
    relations = relation_catalog(_require(args.relations, "relation catalog"))
    if args.triples:
        labels, descriptions = {}, {}
        for _, obj in iter_jsonl(_require(args.labels, "labels file")):
            labels[obj["id"]] = obj["label"]
            descriptions[obj["id"]] = obj.get("description", "")
        plabels = {r.relation_id: r.label for r in relations}
        kb = build_kb_from_triples(read_triples(_require(args.triples, "triples file")), labels, descriptions,
                                   plabels, relations)
    else:
        kb = load_kb(_require(args.kb, "knowledge base"), relations)
    stats = {
        "entities": len(kb),
        "pairs": sum(len(r.pairs) for r in kb.entities.values()),
        "properties": len(kb.property_ids),
        "relations": len(kb.relations),
    }
    if args.out:
        save_kb(kb, args.out)
    print(json.dumps(stats))


def cmd_build_dataset(args):
    out = Path(args.out)
    if args.xml:
        instances, records = import_annotation_xml(_require(args.xml, "annotation file"),
                                                   relation_id=args.relation, label=Label(args.label))
        write_instances(out / "annotated.jsonl", instances)
        save_kb(KnowledgeBase({r.entity_id: r for r in records}), out / "annotated_kb.jsonl")
        print(json.dumps({"instances": len(instances), "entities": len(records)}))
        return
    if not (args.corpus and args.triples):
        raise CliError("build-dataset needs --corpus and --triples (or --xml)")
    catalog = {r.relation_id for r in relation_catalog(_require(args.relations, "relation catalog"))}
    triples = {t for t in read_triples(_require(args.triples, "triples file")) if t[1] in catalog}
    instances = align(read_corpus(_require(args.corpus, "corpus")), triples)
    rng = np.random.default_rng(args.seed)
    train_part, pool = split(instances, rng, args.test_fraction)
    write_instances(out / "train.jsonl", train_part)
    write_instances(out / "test_pool.jsonl", pool)
    print(json.dumps({"instances": len(instances), "train": len(train_part), "test_pool": len(pool)}))


def _config(args):
    overrides = {"seed": args.seed}
    if args.config:
        return load_config(_require(args.config, "config file"), **overrides)
    return TrainConfig(**overrides)


def cmd_train_relclf(args):
    config = _config(args)
    relations = [r.relation_id for r in relation_catalog(_require(args.relations, "relation catalog"))]
    data = read_instances(_require(args.dataset, "dataset"))
    encoder = _open_encoder(args.encoder or "fallback")
    model = train_relation_classifier(data, encoder, config, relations=relations)
    preds = predict_instances(model, data, encoder)
    save_classifier(model, args.out, _encoder_info(encoder))
    _close_encoder(encoder)
    print(json.dumps({"train_macro_f1": macro_f1([i.relation_id for i in data], [p.relation_id for p in preds])}))


def cmd_train(args):
    config = _config(args)
    kb = _load_kb(args)
    data = read_instances(_require(args.dataset, "dataset"))
    triples = [i.triple for i in data if i.label is Label.NORMAL]
    encoder = _open_encoder(args.encoder or "fallback")
    relations = kb.relation_ids or sorted({t.relation_id for t in triples})
    model, history = train(triples, kb, encoder, config, relations=relations, log_path=args.log)
    save_checkpoint(model, args.out, _encoder_info(encoder))
    _close_encoder(encoder)
    print(json.dumps(history[-1]))


def _scoring_setup(args):
    model = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    kb = _load_kb(args)
    encoder = _encoder_for(args, getattr(model, "checkpoint_extra", {}))
    data = read_instances(_require(args.dataset, "dataset"))
    return model, kb, encoder, data, _classifier(args, kb, model)


def cmd_score(args):
    model, kb, encoder, data, clf = _scoring_setup(args)
    scores, triples = score_instances(data, kb, model, encoder, clf)
    write_jsonl(args.out, (
        {"id": inst.instance_id, "e1": t.e1, "relation": t.relation_id, "e2": t.e2, "novelty_score": s}
        for inst, t, s in zip(data, triples, scores)
    ))
    _close_encoder(encoder)


def cmd_explain(args):
    model, kb, encoder, data, clf = _scoring_setup(args)
    preds = predict_instances(clf, data, encoder)
    out = Path(args.out)
    for n, (inst, pred) in enumerate(zip(data, preds)):
        iid = inst.instance_id if inst.instance_id is not None else str(n)
        triple = Triple(inst.e1.entity_id, pred.relation_id, inst.e2.entity_id)
        rep = explain(triple, kb, model, encoder, instance_id=iid)
        rep.extra["text"] = inst.text
        write_json(out / f"{iid}.json", rep.to_json())
    _close_encoder(encoder)


def cmd_evaluate(args):
    model, kb, encoder, data, clf = _scoring_setup(args)
    annotations = read_annotations(_require(args.annotations, "annotations")) if args.annotations else None
    result = evaluate(data, kb, model, encoder, clf, annotations=annotations, top_ns=args.top_n,
                      report_dir=args.reports, seed=args.seed, baseline_trials=args.baseline_trials,
                      roc_csv=args.roc_csv)
    payload = result.to_json()
    if args.out:
        write_json(args.out, payload)
    print(json.dumps(payload))
    _close_encoder(encoder)


def cmd_gen_synthetic(args):
    bench = generate_benchmark(seed=args.seed, per_type=args.per_type, n_train=args.n_train,
                               n_test_normal=args.n_test, n_test_novel=args.n_test)
    paths = write_benchmark(bench, args.out)
    print(json.dumps({k: str(v) for k, v in paths.items()}))


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patsnd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0, help="seed for every randomized step (default 0)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    def encoder_flag(p):
        p.add_argument("--encoder", choices=["fallback", "pretrained"], default=None,
                       help="text encoder (default: fallback, or whatever the checkpoint used)")

    p = add("build-kb", cmd_build_kb, "validate a KB file (or build one from triples) and report its size")
    p.add_argument("--kb", help="KB JSON Lines file to validate")
    p.add_argument("--triples", help="tab-separated head/relation/tail triples to build from")
    p.add_argument("--labels", help="JSON Lines {id, label, description} used with --triples")
    p.add_argument("--relations", help="relation catalog JSON Lines (default: built-in 20 relations)")
    p.add_argument("--out", help="write the normalized KB here")

    p = add("build-dataset", cmd_build_dataset, "align a corpus with KB triples and split it, or import XML")
    p.add_argument("--corpus", help="entity-linked corpus JSON Lines")
    p.add_argument("--triples", help="tab-separated repository triples")
    p.add_argument("--relations", help="relation catalog JSON Lines")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--xml", help="annotation XML to convert instead of aligning")
    p.add_argument("--relation", help="relation id for XML instances lacking <relation>")
    p.add_argument("--label", choices=["NORMAL", "NOVEL"], default="NOVEL", help="label for XML instances")
    p.add_argument("--out", required=True, help="output directory")

    p = add("train-relclf", cmd_train_relclf, "train the relation classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--relations")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="classifier checkpoint path")
    encoder_flag(p)

    p = add("train", cmd_train, "train the novelty scorer")
    p.add_argument("--kb", required=True)
    p.add_argument("--relations")
    p.add_argument("--dataset", required=True, help="training instances (NORMAL ones are used)")
    p.add_argument("--config", help="key = value file with TrainConfig fields")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch JSON Lines training log")
    encoder_flag(p)

    for name, func, help_ in [
        ("score", cmd_score, "write novelty scores (higher = more novel) as JSON Lines"),
        ("explain", cmd_explain, "write one attention report per instance"),
        ("evaluate", cmd_evaluate, "compute AUC and NCS on a labeled test set"),
    ]:
        p = add(name, func, help_)
        p.add_argument("--kb", required=True)
        p.add_argument("--relations")
        p.add_argument("--dataset", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--oracle-relations", action="store_true", help="use gold relations from the dataset")
        p.add_argument("--relclf", help="relation classifier checkpoint")
        encoder_flag(p)
        if name == "evaluate":
            p.add_argument("--annotations", help="key-property annotations JSON Lines")
            p.add_argument("--top-n", type=int, nargs="+", default=[1, 2, 3])
            p.add_argument("--reports", help="directory for per-instance attention reports")
            p.add_argument("--baseline-trials", type=int, default=1000,
                           help="shuffles for the random NCS baseline (0 to skip)")
            p.add_argument("--roc-csv", help="write (fpr, tpr) points here")
            p.add_argument("--out", help="evaluation JSON path")
        else:
            p.add_argument("--out", required=True)

    p = add("gen-synthetic", cmd_gen_synthetic, "write the seeded synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--per-type", type=int, default=36)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=200, help="NORMAL and NOVEL test instances each")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, PatSndError, OSError, KeyError, ValueError) as exc:
        print(f"patsnd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
