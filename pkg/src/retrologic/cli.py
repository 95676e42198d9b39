"""Command-line interface.

Subcommands: extract, cache, train, predict, eval, inspect, stats.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from .cache import CacheStore, StaleCacheError, build_caches, corpus_stats, verify_truth
from .chem import SmilesError, parse_molecule
from .data import DataError, load_reactions
from .model import EmptySupportError, GlnModel, ModelConfig, SupportCapError
from .params_io import ContainerError
from .templates import (
    TemplateError,
    dedup_templates,
    extract_template,
    load_templates,
    write_templates,
)
from .training import NumericAbort, SupportMissError, TrainConfig, config_dict, prepare_items, train

log = logging.getLogger("retrologic")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# config keys that name files; relative values resolve against the config file's directory
PATH_KEYS = ("train", "val", "test", "templates", "cache", "model", "log")
OTHER_KEYS = ("radius", "beam", "threads", "class_conditional", "score_mode")
MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    for kind in (int, float):
        try:
            return kind(value)
        except ValueError:
            pass
    return value


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment. Unknown keys are usage errors."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    known = set(PATH_KEYS + OTHER_KEYS + MODEL_KEYS + TRAIN_KEYS)
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in PATH_KEYS:
            out[key] = str((path.parent / value).resolve()) if value else None
        else:
            out[key] = _coerce(value)
    return out


def _settings(args) -> dict:
    """Config file values overridden by explicit command-line flags."""
    conf = read_config(args.config) if getattr(args, "config", None) else {}
    for key in PATH_KEYS + OTHER_KEYS + ("seed",):
        v = getattr(args, key, None)
        if v is not None and v is not False:
            conf[key] = v
    return conf


def _need(conf: dict, key: str, flag: Optional[str] = None) -> str:
    if not conf.get(key):
        raise UsageError(f"missing --{flag or key} (or '{key}' in the config file)")
    return conf[key]


# ---------------------------------------------------------------------------
# shared loading
# ---------------------------------------------------------------------------


def _records(path, split="train"):
    ds = load_reactions(path, split)
    log.info("%s: %s", path, ds.report.summary())
    return ds.records


def _templates_for(conf: dict, train_records=None):
    if conf.get("templates"):
        templates, report = load_templates(conf["templates"])
        if not templates and report.rejected:
            raise DataError(f"{conf['templates']}: no usable templates")
        return dedup_templates(templates)
    if train_records is None:
        raise UsageError("missing --templates (or 'templates' in the config file)")
    return extract_all(train_records, conf.get("radius", 1))


def _store_for(conf: dict, templates, products) -> CacheStore:
    if conf.get("cache") and Path(conf["cache"]).exists():
        try:
            return CacheStore.load(conf["cache"], templates)
        except StaleCacheError:
            raise
        except (ValueError, KeyError) as exc:
            raise DataError(str(exc)) from exc
    return build_caches(products, templates, conf.get("threads") or 1)


def _load_model(conf: dict) -> GlnModel:
    path = _need(conf, "model")
    try:
        return GlnModel.load(path)
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def extract_all(records, radius: int = 1):
    """Deduplicated templates of every record that yields one, tagged with record classes."""
    out, failed = [], 0
    for rec in records:
        try:
            t = extract_template(rec, radius)
        except TemplateError as exc:
            failed += 1
            log.debug("%s: %s", rec.record_id, exc)
            continue
        out.append(t.with_classes([rec.reaction_class]) if rec.reaction_class is not None else t)
    if failed:
        log.warning("template extraction failed for %d of %d records", failed, len(records))
    return dedup_templates(out)


def _beam(conf: dict, default: int = 50) -> int:
    beam = conf.get("beam", default)
    if not isinstance(beam, int) or isinstance(beam, bool) or beam <= 0:
        raise UsageError(f"beam must be a positive integer, got {beam!r}")
    return beam


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_extract(args, out) -> int:
    conf = _settings(args)
    records = _records(_need(conf, "train", "data"))
    templates = extract_all(records, conf.get("radius", 1))
    dest = args.out or conf.get("templates")
    if not dest:
        raise UsageError("missing --out")
    write_templates(dest, templates)
    print(f"templates\t{len(templates)}", file=out)
    print(f"centers\t{len({t.center_key for t in templates})}", file=out)
    return EXIT_OK


def cmd_cache(args, out) -> int:
    conf = _settings(args)
    data = args.data or [conf[k] for k in ("train", "val", "test") if conf.get(k)]
    templates = _templates_for(conf)
    if data:
        records = [r for path in data for r in _records(path)]
        store = build_caches([r.product for r in records], templates, conf.get("threads") or 1)
        dest = args.out or conf.get("cache")
        if dest:
            store.save(dest)
        missing = verify_truth(records, store)
        print(f"products\t{len(store.product_templates)}", file=out)
        print(f"excluded\t{len(store.excluded)}", file=out)
        print(f"truth_missing\t{len(missing)}", file=out)
    else:
        src = conf.get("cache")
        if not src or not args.verify:
            raise UsageError("give --data to build a cache, or --cache with --verify to check one")
        try:
            store = CacheStore.load(src, templates)
        except StaleCacheError:
            raise
        except (ValueError, KeyError) as exc:
            raise DataError(str(exc)) from exc
    if args.verify:
        problems = store.verify()
        for p in problems:
            print(f"problem\t{p}", file=out)
        print(f"verify\t{'ok' if not problems else 'failed'}", file=out)
        if problems:
            return EXIT_DATA
    return EXIT_OK


def model_config(conf: dict) -> ModelConfig:
    kw = {k: conf[k] for k in MODEL_KEYS if k in conf}
    try:
        return ModelConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad model settings: {exc}") from exc


def train_config(conf: dict) -> TrainConfig:
    kw = {k: conf[k] for k in TRAIN_KEYS if k in conf}
    if conf.get("class_conditional"):
        kw["class_conditional"] = True
    try:
        return TrainConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training settings: {exc}") from exc


def cmd_train(args, out) -> int:
    from .inference import top1_accuracy

    conf = _settings(args)
    mconf, tconf = model_config(conf), train_config(conf)
    dest = _need(conf, "model", "model")
    train_recs = _records(_need(conf, "train"))
    val_recs = _records(conf["val"], "val") if conf.get("val") else []
    templates = _templates_for(conf, train_recs)
    store = _store_for(conf, templates, [r.product for r in train_recs + val_recs])
    cc = tconf.class_conditional
    items, missed = prepare_items(train_recs, store, cc)
    val_items, _ = prepare_items(val_recs, store, cc)
    if missed:
        log.warning("%d training records have no ground truth in their supports", len(missed))
    if not items:
        raise DataError("no trainable records")
    model = GlnModel.init(mconf, class_conditional=cc)
    beam = _beam(conf, tconf.eval_beam)

    def acc(m, its):
        return top1_accuracy(m, its, store, beam, cc)

    result = train(model, items, tconf, val_items, acc, conf.get("log"))
    meta = {"train": config_dict(tconf), "epochs": result.epochs, "updates": result.updates}
    result.model.save(dest, meta)
    for rec in result.metrics:
        if rec["kind"] == "epoch":
            cols = [f"epoch={rec['epoch']}", f"train_loss={rec['train_loss']:.6f}"]
            for k in ("train_top1", "val_loss", "val_top1"):
                if k in rec:
                    cols.append(f"{k}={rec[k]:.4f}")
            print("\t".join(cols), file=out)
    print(f"saved\t{dest}", file=out)
    return EXIT_OK


def _products(args, conf):
    """(record_id, product, record or None) triples from --product or --data."""
    if args.product:
        try:
            return [(f"p{i + 1}", parse_molecule(s), None) for i, s in enumerate(args.product)]
        except SmilesError as exc:
            raise DataError(str(exc)) from exc
    path = args.data or conf.get("test")
    if not path:
        raise UsageError("give --product or --data")
    return [(r.record_id, r.product, r) for r in _records(path, "test")]


def cmd_predict(args, out) -> int:
    from .inference import beam_search, format_prediction_lines

    conf = _settings(args)
    beam = _beam(conf)
    model = _load_model(conf)
    rows = _products(args, conf)
    templates = _templates_for(conf)
    store = _store_for(conf, templates, [p for _, p, _ in rows])
    cc = bool(conf.get("class_conditional"))
    mode = conf.get("score_mode", "logprob")
    print("# record_id\trank\tscore\ttemplate\treactants", file=out)
    for rid, O, rec in rows:
        cls = rec.reaction_class if (cc and rec is not None) else None
        try:
            preds = beam_search(model, O, store, beam, cls, score_mode=mode)
        except SupportCapError as exc:
            log.warning("%s: %s", rid, exc)
            preds = []
        for line in format_prediction_lines(rid, preds):
            print(line, file=out)
    return EXIT_OK


def cmd_eval(args, out) -> int:
    from .inference import DEFAULT_KS, evaluate, uniform_baseline_top1

    conf = _settings(args)
    beam = _beam(conf)
    model = _load_model(conf)
    path = args.data or conf.get("test")
    if not path:
        raise UsageError("missing --data")
    records = _records(path, "test")
    templates = _templates_for(conf)
    store = _store_for(conf, templates, [r.product for r in records])
    cc = bool(conf.get("class_conditional"))
    ks = tuple(args.ks) if args.ks else DEFAULT_KS
    report = evaluate(records, model, store, ks, beam, cc, conf.get("score_mode", "logprob"))
    for line in report.lines():
        print(line, file=out)
    print(f"uniform_baseline_top-1\t{uniform_baseline_top1(records, store, cc):.4f}", file=out)
    return EXIT_OK


def cmd_inspect(args, out) -> int:
    from .inference import atom_scores
    from .model import prob_center
    from .chem import write_molecule

    conf = _settings(args)
    model = _load_model(conf)
    if not args.product or len(args.product) != 1:
        raise UsageError("inspect needs exactly one --product")
    try:
        O = parse_molecule(args.product[0])
    except SmilesError as exc:
        raise DataError(str(exc)) from exc
    templates = _templates_for(conf)
    store = _store_for(conf, templates, [O])
    support = store.support_t(O)
    if not support.groups:
        print("no matching reaction center", file=out)
        return EXIT_OK
    probs = prob_center(model, O, support)
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], support.groups[i].center_key))
    top = args.top or 1
    print(f"product\t{write_molecule(O)}", file=out)
    for gi in order[:top]:
        g = support.groups[gi]
        print(f"center\t{g.center_key}\tp={probs[gi]:.6f}", file=out)
        scores = atom_scores(model, O, g.center)
        for v, s in enumerate(scores):
            a = O.atoms[v]
            print(f"atom\t{v}\t{a.element}{'(ar)' if a.aromatic else ''}\t{s:.6f}", file=out)
    return EXIT_OK


def cmd_stats(args, out) -> int:
    conf = _settings(args)
    path = args.data or conf.get("train")
    if not path:
        raise UsageError("missing --data")
    records = _records(path)
    templates = _templates_for(conf)
    store = _store_for(conf, templates, [r.product for r in records])
    for line in corpus_stats(records, store).lines():
        print(line, file=out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="flat key=value settings file")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--threads", type=int, default=d, help="worker processes for cache building")
    p.add_argument("--beam", type=int, default=d)
    p.add_argument("--class-conditional", dest="class_conditional", action="store_true",
                   default=argparse.SUPPRESS if suppress else False)
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="retrologic", description="Template-based retrosynthesis with graph logic networks.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, help_text, fn):
        p = sub.add_parser(name, help=help_text, description=help_text)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("extract", "extract radius-1 templates from a reaction file", cmd_extract)
    p.add_argument("--data", dest="train")
    p.add_argument("--radius", type=int)
    p.add_argument("--out")

    p = add("cache", "build, save and optionally verify support caches", cmd_cache)
    p.add_argument("--data", nargs="+")
    p.add_argument("--templates")
    p.add_argument("--cache")
    p.add_argument("--out")
    p.add_argument("--verify", action="store_true", help="replay template and reactant checks on every entry")

    p = add("train", "train a model", cmd_train)
    p.add_argument("--train")
    p.add_argument("--val")
    p.add_argument("--templates")
    p.add_argument("--cache")
    p.add_argument("--model", help="output parameter file")
    p.add_argument("--log", help="append JSON-lines training log here")

    for name, fn, text in (("predict", cmd_predict, "ranked reactant predictions"),
                           ("eval", cmd_eval, "top-k exact-match evaluation")):
        p = add(name, text, fn)
        p.add_argument("--model")
        p.add_argument("--templates")
        p.add_argument("--cache")
        p.add_argument("--data")
        p.add_argument("--score-mode", dest="score_mode", choices=("logprob", "energy"))
        if name == "predict":
            p.add_argument("--product", action="append", help="product molecule (repeatable)")
        else:
            p.add_argument("--ks", type=int, nargs="+")

    p = add("inspect", "per-atom scores for the most likely reaction centers", cmd_inspect)
    p.add_argument("--model")
    p.add_argument("--templates")
    p.add_argument("--cache")
    p.add_argument("--product", action="append")
    p.add_argument("--top", type=int)

    p = add("stats", "corpus statistics under a template table", cmd_stats)
    p.add_argument("--data")
    p.add_argument("--templates")
    p.add_argument("--cache")
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage() + "retrologic: error: a command is required")
        if args.beam is not None and args.beam <= 0:
            raise UsageError(f"--beam must be positive, got {args.beam}")
        if args.threads is not None and args.threads <= 0:
            raise UsageError(f"--threads must be positive, got {args.threads}")
        level = logging.WARNING - 10 * min(args.verbose, 2)
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args, out)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except NumericAbort as exc:
        print(f"retrologic: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, SmilesError, TemplateError, StaleCacheError, ContainerError,
            SupportMissError, EmptySupportError, OSError) as exc:
        print(f"retrologic: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
