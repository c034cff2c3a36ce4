"""Command line entry point: ``pedattr <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import features as feat
from .inference import REGIMES, InferenceConfig, RegimeModels, TransductiveData, regime_graph, \
    run_regime, write_graph
from .ingest import UNKNOWN, write_manifest
from .pipeline import (CACHE_ENV, PipelineError, RunConfig, extract_features, load_config,
                       load_dataset, run_pipeline, stage, train_forest, train_unaries)
from .report import EvalReport, evaluate, read_predictions, write_predictions
from .similarity import load_forest, save_forest
from .synth import generate_synthetic
from .unary import load_model, save_model

log = logging.getLogger("pedattr")


def _add_data_args(p, scheme=True):
    p.add_argument("--manifest", help="tab-separated dataset manifest")
    p.add_argument("--synth-n", type=int, help="use a synthetic dataset of this size instead")
    p.add_argument("--synth-attrs", type=int)
    p.add_argument("--synth-noise", type=float)
    p.add_argument("--seed", type=int)
    if scheme:
        p.add_argument("--scheme", choices=feat.SCHEMES + ("fore-back", "fore-whole"))
        p.add_argument("--filter-bank", help="JSON filter bank (default: bundled bank)")
        p.add_argument("--features", help="feature file written by `extract`")


def _regime_args(p):
    p.add_argument("--regime", action="append",
                   help=f"one of {', '.join(REGIMES)} (or mrf1/mrf2 with --pairwise); repeatable")
    p.add_argument("--pairwise", choices=("gauss", "forest"))
    p.add_argument("--k", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--sigma", type=float, help="Gaussian bandwidth (default: tuned on verify)")
    p.add_argument("--trees", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pedattr", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic dataset and write its manifest")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--attrs", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clusters", type=int)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("extract", help="compute strip-histogram descriptors")
    _add_data_args(p)
    p.add_argument("--out", required=True, help="output .npz")

    p = sub.add_parser("train-unary", help="train calibrated ikSVM unaries")
    _add_data_args(p)
    p.add_argument("--attr", action="append", help="attribute name; repeatable (default all)")
    p.add_argument("--C", type=float)
    p.add_argument("--tune-C", action="store_true", default=None)
    p.add_argument("--no-augment", dest="augment", action="store_false", default=None)
    p.add_argument("--out", required=True, help="model directory")

    p = sub.add_parser("train-forest", help="train the unsupervised similarity forest")
    _add_data_args(p)
    p.add_argument("--trees", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--out", required=True, help="output .npz")

    p = sub.add_parser("infer", help="label the test split under one or more regimes")
    _add_data_args(p)
    _regime_args(p)
    p.add_argument("--models", required=True, help="directory written by train-unary")
    p.add_argument("--forest", help="forest written by train-forest")
    p.add_argument("--attr", action="append")
    p.add_argument("--dump-graph", help="write the k-NN graph to this TSV")
    p.add_argument("--out", required=True, help="predictions TSV")

    p = sub.add_parser("evaluate", help="score a predictions TSV against the manifest")
    _add_data_args(p, scheme=False)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", help="report directory (default: print)")

    p = sub.add_parser("pipeline", help="run every stage and write the accuracy report")
    p.add_argument("--config", help="flat key = value config file")
    _add_data_args(p)
    _regime_args(p)
    p.add_argument("--attr", action="append")
    p.add_argument("--C", type=float)
    p.add_argument("--tune-C", action="store_true", default=None)
    p.add_argument("--no-augment", dest="augment", action="store_false", default=None)
    p.add_argument("--cache-dir", help=f"feature cache (default: ${CACHE_ENV})")
    p.add_argument("--predictions", action="store_true", default=None,
                   help="also write predictions.tsv")
    p.add_argument("--out", help="report directory")
    return ap


def _resolve_regimes(args) -> tuple[str, ...] | None:
    if not getattr(args, "regime", None):
        return None
    out = []
    for r in args.regime:
        r = r.lower()
        if r in ("mrf1", "mrf2"):
            if not args.pairwise:
                raise ValueError(f"regime {r} needs --pairwise")
            r = ("mrfg" if args.pairwise == "gauss" else "mrfr") + r[-1]
        elif args.pairwise and r != "iksvm" and r[3] != {"gauss": "g", "forest": "r"}[args.pairwise]:
            raise ValueError(f"regime {r} conflicts with --pairwise {args.pairwise}")
        out.append(r)
    return tuple(out)


def _config(args, **extra) -> RunConfig:
    over = {
        "manifest": args.manifest, "synth_n": args.synth_n, "synth_attrs": args.synth_attrs,
        "synth_noise": args.synth_noise, "seed": args.seed,
        "filter_bank": getattr(args, "filter_bank", None),
        "schemes": (args.scheme,) if getattr(args, "scheme", None) else None,
        "attributes": tuple(args.attr) if getattr(args, "attr", None) else None,
    }
    for name in ("k", "lam", "sigma", "trees", "C", "tune_C", "augment", "cache_dir"):
        over[name] = getattr(args, name, None)
    over["regimes"] = _resolve_regimes(args)
    over.update(extra)
    over = {k: v for k, v in over.items() if v is not None}
    if getattr(args, "config", None):
        return load_config(args.config, **over)
    return RunConfig(**over)


def _dataset(cfg: RunConfig, args):
    with stage("load"):
        registry, samples, dataset_id = load_dataset(cfg)
        bank = (feat.FilterBankConfig.from_json(cfg.filter_bank) if cfg.filter_bank
                else feat.FilterBankConfig.default())
    with stage("extract"):
        scheme = cfg.schemes[0]
        fs = None
        if getattr(args, "features", None):
            fs = feat.load_features(args.features)
            if fs.ids != tuple(s.id for s in samples):
                raise ValueError(f"{args.features}: ids do not match the dataset")
            if getattr(args, "scheme", None) and fs.scheme != scheme:
                raise ValueError(f"{args.features}: scheme {fs.scheme}, requested {scheme}")
        else:
            fs = extract_features(cfg, samples, scheme, dataset_id, bank)
    return registry, samples, fs, bank


def _transductive(samples, fs, attributes) -> TransductiveData:
    train = tuple(s.id for s in samples if s.split == "train")
    test = tuple(s.id for s in samples if s.split == "test")
    labels = {a: {s.id: s.labels.get(a, UNKNOWN) for s in samples if s.split == "train"}
              for a in attributes}
    return TransductiveData(fs.ids, fs.X, train, test, labels)


def cmd_synth(args) -> int:
    with stage("synth"):
        registry, samples = generate_synthetic(args.n, args.attrs, args.noise, args.seed,
                                               args.clusters)
        out = Path(args.out)
        write_manifest(out / "manifest.tsv", registry, samples)
    print(out / "manifest.tsv")
    return 0


def cmd_extract(args) -> int:
    cfg = _config(args)
    _, _, fs, _ = _dataset(cfg, args)
    with stage("write"):
        feat.save_features(args.out, fs)
    print(f"{len(fs.ids)} descriptors of dim {fs.X.shape[1]} -> {args.out}")
    return 0


def cmd_train_unary(args) -> int:
    cfg = _config(args)
    registry, samples, fs, bank = _dataset(cfg, args)
    attributes = list(cfg.attributes or registry.names)
    with stage("train-unary"):
        outcome = train_unaries(cfg, samples, fs, attributes, bank)
    with stage("write"):
        out = Path(args.out)
        for attr, model in outcome.models.items():
            save_model(out / f"{attr}.npz", model)
            print(f"{attr}: {model.support_vectors.shape[0]} support vectors -> {out / attr}.npz")
        for attr, why in outcome.skipped.items():
            print(f"{attr}: skipped ({why})", file=sys.stderr)
    return 0


def cmd_train_forest(args) -> int:
    cfg = _config(args, tree_depth=args.depth)
    registry, samples, fs, _ = _dataset(cfg, args)
    with stage("train-forest"):
        forest = train_forest(cfg, _transductive(samples, fs, registry.names))
        save_forest(args.out, forest)
    print(f"{forest.T} trees -> {args.out}")
    return 0


def cmd_infer(args) -> int:
    cfg = _config(args)
    registry, samples, fs, _ = _dataset(cfg, args)
    with stage("load-models"):
        attributes = list(cfg.attributes or registry.names)
        models, skipped = {}, []
        for a in attributes:
            path = Path(args.models) / f"{a}.npz"
            if path.is_file():
                models[a] = load_model(path)
            elif cfg.attributes:
                raise FileNotFoundError(path)
            else:
                skipped.append(a)
        attributes = [a for a in attributes if a in models]
        forest = load_forest(args.forest) if args.forest else None
    data = _transductive(samples, fs, attributes)
    rows = []
    for regime in cfg.regimes:
        with stage(f"infer[{regime}]"):
            needs_forest = regime.startswith("mrfr")
            rm = RegimeModels(models, forest=forest)
            if needs_forest and forest is None:
                rm = RegimeModels(models, leaves=train_forest(cfg, data).leaves(fs.X))
            if regime.startswith("mrfg") and cfg.sigma is None:
                raise ValueError("--sigma is required for Gaussian regimes outside `pipeline`")
            icfg = InferenceConfig(cfg.k, cfg.lam, cfg.sigma)
            graph = None
            if regime != "iksvm":
                nodes = (data.train_ids if regime.endswith("2") else ()) + data.test_ids
                graph = regime_graph(regime, data, rm, icfg, nodes)
                if args.dump_graph:
                    dump = Path(args.dump_graph)
                    if len(cfg.regimes) > 1:
                        dump = dump.with_name(f"{dump.stem}.{regime}{dump.suffix}")
                    write_graph(dump, graph)
            res = run_regime(regime, data, rm, icfg, attributes, graph=graph)
            for a in attributes:
                rows.extend((a, regime, fs.scheme, s, lab) for s, lab in res[a].as_dict().items())
    with stage("write"):
        write_predictions(args.out, rows)
    for a in skipped:
        print(f"{a}: no model, skipped", file=sys.stderr)
    print(f"{len(rows)} predictions -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    with stage("load"):
        _, samples, dataset_id = load_dataset(cfg)
        by_id = {s.id: s for s in samples}
        preds = read_predictions(args.predictions)
    with stage("evaluate"):
        attributes = list(dict.fromkeys(a for a, _, _ in preds))
        columns = list(dict.fromkeys((r, s) for _, r, s in preds))
        report = EvalReport([], columns, metadata={"dataset": dataset_id,
                                                   "predictions": Path(args.predictions).name})
        for a in attributes:
            report.attributes.append(a)
            for col in columns:
                pred = preds.get((a,) + col)
                if pred is None:
                    raise ValueError(f"missing predictions for {a} under {col}")
                truth = {s: by_id[s].labels.get(a, UNKNOWN) for s in pred}
                truth = {s: t for s, t in truth.items() if t in (0, 1)}
                acc, bal = evaluate({s: pred[s] for s in truth}, truth)
                report.add(a, col, acc, bal)
    if args.out:
        with stage("write"):
            report.write(args.out)
    print(report.to_text(), end="")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config(args, out_dir=args.out, write_predictions=args.predictions)
    report = run_pipeline(cfg)
    print(report.to_text(), end="")
    return 0


COMMANDS = {
    "synth": cmd_synth, "extract": cmd_extract, "train-unary": cmd_train_unary,
    "train-forest": cmd_train_forest, "infer": cmd_infer, "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except PipelineError as exc:
        print(f"pedattr {args.command}: error {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"pedattr {args.command}: error [config] {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
