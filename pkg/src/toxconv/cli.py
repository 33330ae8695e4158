"""Command-line pipeline: synth, ingest, score, analyze, features, label, train, transfer, report."""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import shutil
import sys

import numpy as np

from . import analysis, corpus as corpus_mod, features, labeling, learner, synth
from .ingest import (CorpusFilter, CycleDetected, UnreadableInput, filter_conversations,
                     link_replies, post_to_record, read_posts, read_snapshots)
from .model import conversation_before, prefix
from .parallel import default_workers
from .toxicity import DEFAULT_THRESHOLD, RemoteScorer, StubScorer

log = logging.getLogger("toxconv")

EXIT_ERROR, EXIT_USAGE, EXIT_MISSING, EXIT_SCHEMA = 1, 2, 3, 4

DEFAULTS = {
    "seed": 0, "workers": None, "prefix_size": 10, "min_bucket": 200, "task": "prefix",
    "feature_sets": "all", "scorer": "stub", "threshold": DEFAULT_THRESHOLD,
    "grid": ",".join(str(g) for g in learner.DEFAULT_GRID), "stub_terms": None,
    "learning_rate": 0.1, "max_depth": 3,
}


class UsageError(Exception):
    pass


class SchemaError(Exception):
    pass


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _settings(args) -> dict:
    """Flags override the config file, which overrides the defaults."""
    conf = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise FileNotFoundError(args.config)
        with open(args.config, encoding="utf-8") as fh:
            try:
                conf = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"config {args.config}: {exc}") from exc
        if not isinstance(conf, dict):
            raise SchemaError("config file must hold a JSON object")
    out = dict(DEFAULTS)
    out.update({k.replace("-", "_"): v for k, v in conf.items()})
    for k, v in vars(args).items():
        if v is not None:
            out[k] = v
    if out.get("workers") is None:
        out["workers"] = default_workers()
    return out


def _grid(s) -> tuple:
    if isinstance(s, (list, tuple)):
        vals = [int(x) for x in s]
    else:
        try:
            vals = [int(x) for x in str(s).split(",") if x.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --grid {s!r}") from exc
    if not vals or min(vals) < 1:
        raise UsageError("--grid needs positive integers")
    return tuple(sorted(set(vals)))


def _need_input(path, what="input") -> str:
    if path is None:
        raise UsageError(f"--{what} is required")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return path


def _need_output(path) -> str:
    if path is None:
        raise UsageError("--output is required")
    return path


def _task(s) -> str:
    t = {"prefix": "prefix", "next-reply": "next_reply", "next_reply": "next_reply"}.get(s)
    if t is None:
        raise UsageError(f"unknown task {s!r}")
    return t


def _catalog(task, sets) -> features.FeatureCatalog:
    try:
        return features.FeatureCatalog.parse(task, sets)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load(path, threshold) -> corpus_mod.Corpus:
    if not os.path.exists(os.path.join(path, corpus_mod.POSTS_FILE)):
        raise FileNotFoundError(os.path.join(path, corpus_mod.POSTS_FILE))
    c = corpus_mod.load_corpus(path, threshold=threshold)
    if c.snapshots is None:
        raise FileNotFoundError(os.path.join(path, corpus_mod.SNAPSHOTS_FILE))
    return c


# ---------------------------------------------------------------- commands


def cmd_synth(args, s) -> None:
    out = _need_output(args.output)
    conf = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            conf = json.load(fh)
    conf = {k: v for k, v in conf.items() if k in synth.GeneratorConfig.__dataclass_fields__}
    if args.seed is not None:
        conf["seed"] = args.seed
    if args.threshold is not None:
        conf["threshold"] = args.threshold
    if args.n_conversations is not None:
        conf["n_conversations"] = args.n_conversations
    try:
        cfg = synth.GeneratorConfig.from_dict(conf)
    except synth.InvalidConfig as exc:
        raise SchemaError(str(exc)) from exc
    synth.write_corpus(synth.generate(cfg), out)
    print(f"wrote {cfg.n_conversations} conversations to {out}")


def cmd_ingest(args, s) -> None:
    src = _need_input(args.input)
    out = _need_output(args.output)
    posts_path = os.path.join(src, corpus_mod.POSTS_FILE) if os.path.isdir(src) else src
    base = os.path.dirname(posts_path)
    posts = read_posts(posts_path)
    report = {"parsed": len(posts), "skipped": posts.skipped, "duplicates": posts.duplicates}
    try:
        trees = link_replies(posts, strict=True)
        report["cycle_posts"] = 0
    except CycleDetected as exc:
        trees = exc.forest
        report["cycle_posts"] = len(exc.cycle_ids)
    report["trees"] = len(trees)
    report["orphan_rooted"] = sum(t.orphan_rooted for t in trees)
    tracked_path = os.path.join(base, corpus_mod.TRACKED_FILE)
    tracked = s.get("tracked")
    if tracked:
        tracked = frozenset(tracked)
    elif os.path.exists(tracked_path):
        tracked = corpus_mod.read_tracked(tracked_path)
    else:
        raise UsageError(f"no tracked accounts ({tracked_path} missing and no 'tracked' in config)")
    kept = filter_conversations(trees, CorpusFilter(tracked))
    report["kept"] = len(kept)
    report["kept_posts"] = sum(t.size for t in kept)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, corpus_mod.POSTS_FILE), "w", encoding="utf-8") as fh:
        for p in sorted((p for t in kept for p in t.posts.values()), key=lambda p: p.order_key):
            fh.write(json.dumps(post_to_record(p), sort_keys=True) + "\n")
    with open(os.path.join(out, corpus_mod.TRACKED_FILE), "w", encoding="utf-8") as fh:
        fh.write("\n".join(sorted(tracked)) + "\n")
    for name in (corpus_mod.SNAPSHOTS_FILE, corpus_mod.ALIGNMENT_FILE, "stub_terms.tsv"):
        p = os.path.join(base, name)
        if os.path.exists(p) and os.path.abspath(p) != os.path.abspath(os.path.join(out, name)):
            shutil.copyfile(p, os.path.join(out, name))
    snap = os.path.join(out, corpus_mod.SNAPSHOTS_FILE)
    if os.path.exists(snap):
        report["snapshot_users"] = len(read_snapshots(snap).users())
    _dump_json(report, os.path.join(out, "ingest_report.json"))
    print(f"kept {report['kept']} of {report['trees']} conversations")


def cmd_score(args, s) -> None:
    src = _need_input(args.input)
    out = _need_output(args.output)
    posts = read_posts(os.path.join(src, corpus_mod.POSTS_FILE))
    if s["scorer"] == "stub":
        terms = s.get("stub_terms") or os.path.join(src, "stub_terms.tsv")
        if not os.path.exists(terms):
            raise FileNotFoundError(terms)
        scorer = StubScorer.from_file(terms)
    elif s["scorer"] == "remote":
        try:
            scorer = RemoteScorer()
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    else:
        raise UsageError(f"unknown scorer {s['scorer']!r}")
    scores = scorer.score_batch([p.text for p in posts])
    os.makedirs(out, exist_ok=True)
    n_missing = 0
    with open(os.path.join(out, corpus_mod.POSTS_FILE), "w", encoding="utf-8") as fh:
        for p, sc in zip(posts, scores):
            rec = post_to_record(p)
            rec["toxicity"] = None if sc is None else round(float(sc), 6)
            n_missing += sc is None
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    for name in (corpus_mod.SNAPSHOTS_FILE, corpus_mod.ALIGNMENT_FILE, corpus_mod.TRACKED_FILE):
        p = os.path.join(src, name)
        if os.path.exists(p) and os.path.abspath(src) != os.path.abspath(out):
            shutil.copyfile(p, os.path.join(out, name))
    _dump_json({"scorer": s["scorer"], "scored": len(posts) - n_missing, "failed": n_missing},
               os.path.join(out, "score_report.json"))
    print(f"scored {len(posts) - n_missing} posts ({n_missing} failed)")


def cmd_analyze(args, s) -> None:
    c = _load(_need_input(args.input), s["threshold"])
    out = _need_output(args.output)
    os.makedirs(out, exist_ok=True)
    tables = analysis.run_all(c, workers=s["workers"])
    for stem, series in tables.items():
        with open(os.path.join(out, f"{stem}.csv"), "w", encoding="utf-8") as fh:
            fh.write(analysis.series_to_csv(series))
    summary = {"conversations": len(c), "threshold": s["threshold"],
               "time_to_size": [analysis.time_to_size(c, n) for n in (10, 100)]}
    for mode in analysis.HOMOPHILY_MODES:
        try:
            summary[f"homophily_{mode}"] = analysis.homophily(c, mode)
        except ValueError as exc:
            summary[f"homophily_{mode}"] = None
            log.info("homophily %s undefined: %s", mode, exc)
    _dump_json(summary, os.path.join(out, "summary.json"))
    print(f"wrote {len(tables)} tables to {out}")


def cmd_features(args, s) -> None:
    c = _load(_need_input(args.input), s["threshold"])
    out = _need_output(args.output)
    task = _task(s["task"])
    cat = _catalog(task, s["feature_sets"])
    ctx = features.context_for(c)
    ids, vecs = [], []
    if task == "prefix":
        k = int(s["prefix_size"])
        for t in c.trees:
            if len(t.replies()) >= k:
                vecs.append(features.prefix_features(prefix(t, k), ctx, cat))
                ids.append(t.root.id)
    else:
        for t in c.trees:
            for p in t.replies():
                if p.parent == t.root.id or t.parent_author(p) == p.author:
                    continue
                before = conversation_before(t, p)
                if p.parent not in before.posts:
                    continue
                vecs.append(features.next_reply_features(before, p.author, p.parent, ctx, cat, at=p.time))
                ids.append(p.id)
    if not vecs:
        raise UsageError("no eligible instances for feature extraction")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        features.write_matrix(fh, vecs[0].names, np.vstack([v.values for v in vecs]), [("id", ids)])
    print(f"wrote {len(vecs)} x {len(vecs[0])} features to {out}")


def _build_dataset(path, s):
    c = _load(path, s["threshold"])
    task = _task(s["task"])
    cat = _catalog(task, s["feature_sets"])
    if task == "prefix":
        try:
            return labeling.prefix_label_dataset(c, int(s["prefix_size"]), int(s["min_bucket"]), cat,
                                                 seed=int(s["seed"]), workers=s["workers"])
        except labeling.NoQualifyingBuckets as exc:
            raise UsageError(f"{exc} (lower --min-bucket or --prefix-size)") from exc
    return labeling.paired_next_reply_dataset(c, int(s["seed"]), cat, workers=s["workers"])


def cmd_label(args, s) -> None:
    src = _need_input(args.input)
    out = _need_output(args.output)
    ds = _build_dataset(src, s)
    os.makedirs(out, exist_ok=True)
    ds.write(os.path.join(out, "dataset.csv"), os.path.join(out, "manifest.json"))
    print(f"wrote {len(ds)} instances ({int(ds.y.sum())} positive) to {out}")


def _read_dataset(path):
    with open(path, encoding="utf-8") as fh:
        names, extra, X = features.read_matrix(fh, n_extra=2)
    if "group" not in extra or "label" not in extra:
        raise SchemaError(f"{path}: missing group/label columns")
    try:
        y = np.array([int(v) for v in extra["label"]])
    except ValueError as exc:
        raise SchemaError(f"{path}: non-integer label") from exc
    return names, X, y, np.array(extra["group"])


def _dataset_from(path, s):
    """A dataset directory (dataset.csv) or a corpus directory to label on the fly."""
    ds_file = os.path.join(path, "dataset.csv") if os.path.isdir(path) else path
    if os.path.isfile(ds_file) and ds_file.endswith(".csv"):
        return _read_dataset(ds_file)
    ds = _build_dataset(path, s)
    return ds.names, ds.X, ds.y, np.array(ds.groups)


def _params(s) -> dict:
    return {"learning_rate": float(s["learning_rate"]), "max_depth": int(s["max_depth"])}


def cmd_train(args, s) -> None:
    src = _need_input(args.input)
    out = _need_output(args.output)
    grid = _grid(s["grid"])
    names, X, y, groups = _dataset_from(src, s)
    rep = learner.nested_cv(X, y, groups, grid=grid, seed=int(s["seed"]), params=_params(s),
                            workers=s["workers"])
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "cv_report.json"), "w", encoding="utf-8") as fh:
        fh.write(rep.to_json() + "\n")
    with open(os.path.join(out, "cv_report.csv"), "w", encoding="utf-8") as fh:
        fh.write(rep.to_csv())
    best, _ = learner.select_n_estimators(X, y, groups, grid, 5, int(s["seed"]), _params(s))
    model = learner.GradientBoostedTrees(n_estimators=best, **_params(s)).fit(X, y)
    d = model.to_dict()
    d["feature_names"] = list(names)
    _dump_json(d, os.path.join(out, "model.json"))
    acc = rep.mean["accuracy"]
    print(f"accuracy {acc:.4f} ci ({rep.ci['accuracy'][0]:.4f}, {rep.ci['accuracy'][1]:.4f})")


def cmd_transfer(args, s) -> None:
    a = _need_input(args.input)
    b = _need_input(args.test_input, "test-input")
    out = _need_output(args.output)
    grid = _grid(s["grid"])
    na, Xa, ya, ga = _dataset_from(a, s)
    nb, Xb, yb, gb = _dataset_from(b, s)
    if list(na) != list(nb):
        raise SchemaError("the two datasets have different feature columns")
    res = {"a_to_b": learner.domain_transfer(Xa, ya, ga, Xb, yb, gb, grid, int(s["seed"]), _params(s)),
           "b_to_a": learner.domain_transfer(Xb, yb, gb, Xa, ya, ga, grid, int(s["seed"]), _params(s))}
    os.makedirs(out, exist_ok=True)
    _dump_json(res, os.path.join(out, "transfer.json"))
    print(json.dumps({k: {"in": v["in_domain"]["accuracy"], "cross": v["cross_domain"]["accuracy"]}
                      for k, v in res.items()}, sort_keys=True))


FIGURES = {
    "individual": "individual", "dyads": "dyads", "tree": "tree_shape",
    "wiener": "tree_wiener", "follow_graph": "follow_graph", "time_to_size": "time_to_size",
}


def _read_csv_rows(path) -> list:
    import csv

    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_report(args, s) -> None:
    inputs = args.input_dirs or ([args.input] if args.input else [])
    if not inputs:
        raise UsageError("--input is required")
    out = _need_output(args.output)
    bundle = {}
    for d in inputs:
        _need_input(d)
        for path in sorted(glob.glob(os.path.join(d, "*.csv"))):
            stem = os.path.splitext(os.path.basename(path))[0]
            if stem in FIGURES:
                bundle[FIGURES[stem]] = _read_csv_rows(path)
        for name, key in (("summary.json", "summary"), ("cv_report.json", "prediction"),
                          ("transfer.json", "transfer"), ("manifest.json", "datasets")):
            p = os.path.join(d, name)
            if os.path.exists(p):
                with open(p, encoding="utf-8") as fh:
                    bundle.setdefault(key, {})[os.path.basename(os.path.normpath(d))] = json.load(fh)
    if not bundle:
        raise FileNotFoundError("no analysis or training outputs found in the inputs")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    _dump_json(bundle, out)
    print(f"bundled {len(bundle)} sections into {out}")


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "score": cmd_score, "analyze": cmd_analyze,
    "features": cmd_features, "label": cmd_label, "train": cmd_train, "transfer": cmd_transfer,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="toxconv", description="Conversation structure and toxicity pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--input", help="input file or directory")
        sp.add_argument("--output", help="output file or directory")
        sp.add_argument("--config", help="JSON config; flags take precedence")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--threshold", type=float)
        if name == "synth":
            sp.add_argument("--n-conversations", type=int, dest="n_conversations")
        if name == "score":
            sp.add_argument("--scorer", choices=("remote", "stub"))
            sp.add_argument("--stub-terms", dest="stub_terms", help="TSV of term<TAB>weight")
        if name in ("features", "label", "train", "transfer"):
            sp.add_argument("--task", choices=("prefix", "next-reply"))
            sp.add_argument("--prefix-size", "--k", type=int, dest="prefix_size")
            sp.add_argument("--min-bucket", type=int, dest="min_bucket")
            sp.add_argument("--feature-sets", dest="feature_sets",
                            help="all, content, structure, or a comma list of set names")
        if name in ("train", "transfer"):
            sp.add_argument("--grid", help="comma-separated n_estimators values")
            sp.add_argument("--learning-rate", type=float, dest="learning_rate")
            sp.add_argument("--max-depth", type=int, dest="max_depth")
        if name == "transfer":
            sp.add_argument("--test-input", dest="test_input", help="second corpus or dataset")
        if name == "report":
            sp.add_argument("input_dirs", nargs="*", help="more input directories")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report" and args.input:
        args.input_dirs = [args.input] + list(args.input_dirs)
    try:
        s = _settings(args)
        COMMANDS[args.command](args, s)
    except UsageError as exc:
        print(f"toxconv {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, UnreadableInput) as exc:
        print(f"toxconv {args.command}: missing or unreadable input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (SchemaError, json.JSONDecodeError, features.CatalogMismatch) as exc:
        print(f"toxconv {args.command}: schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (learner.TooFewGroups, learner.SingleClass, learner.EmptyData) as exc:
        print(f"toxconv {args.command}: not enough data: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
