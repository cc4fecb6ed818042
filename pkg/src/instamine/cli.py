"""Command-line entry point: stats, extract, label, train, predict, eval.

Settings come from an optional JSON config file and are overridden by flags.
Every artifact records the config hash and seed. JSONL outputs start with a
``{"meta": ...}`` line, delimited tables and the training log with a
``# config_hash=... seed=...`` comment line, and PNG figures carry the same
string in their Description chunk.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from . import evaluation as ev
from . import plotting, stats, textcnn, weaklabel
from .corpus import default_stopwords, default_vocabulary, load_corpus, read_word_list
from .embeddings import load_table
from .extract import (
    CATEGORIES, ENGINES, ScoringWeights, extraction_to_json, load_cache, load_ontology, make_extractor,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

PATH_KEYS = ("corpus", "ontology", "embeddings", "cache", "gold", "labels", "checkpoint",
             "predictions", "stopwords", "lang_tags")
LIST_PATH_KEYS = ("votes",)

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "out": ".",
    "engine": "semcluster",
    "combiner": "dp",
    "threshold": 0.5,
    "strip_online_tokens": False,
    "average": "example",
    "votes": [],
    "vocabularies": {},
    "lfs": ["semcluster", "keyword_syntactic", "keyword_semantic"],
    "weights": {},
    "label_model": {},
    "cnn": {},
    "min_freq": 1,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- configuration -----------------------------------------------------------


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_config(path) -> dict:
    """Read a JSON config; relative paths resolve against the config file's directory."""
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    base = Path(path).resolve().parent

    def fix(p):
        q = Path(p)
        return str(q if q.is_absolute() else base / q)

    for k in PATH_KEYS + ("out",):
        if cfg.get(k) is not None:
            cfg[k] = fix(cfg[k])
    for k in LIST_PATH_KEYS:
        if k in cfg:
            cfg[k] = [fix(p) for p in cfg[k]]
    if "vocabularies" in cfg:
        cfg["vocabularies"] = {n: fix(p) for n, p in cfg["vocabularies"].items()}
    return cfg


def config_hash(cfg: dict, command: str) -> str:
    """sha256 over settings, with every input path replaced by its content digest.

    Output locations are excluded, so the same inputs give the same hash
    wherever they live and wherever results go.
    """
    view: dict[str, Any] = {"command": command}
    for k, v in sorted(cfg.items()):
        if k == "out":
            continue
        if k in PATH_KEYS:
            view[k] = None if v is None else _file_digest(v)
        elif k in LIST_PATH_KEYS:
            view[k] = [_file_digest(p) for p in v]
        elif k == "vocabularies":
            view[k] = {n: _file_digest(p) for n, p in sorted(v.items())}
        else:
            view[k] = v
    blob = json.dumps(view, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _require(cfg: dict, *keys: str) -> None:
    for k in keys:
        if not cfg.get(k):
            raise UsageError(f"--{k.replace('_', '-')} is required (flag or config)")


def _check_paths(cfg: dict) -> None:
    for k in PATH_KEYS:
        if cfg.get(k) is not None and not Path(cfg[k]).is_file():
            raise FileNotFoundError(f"{k} file not found: {cfg[k]}")
    for p in cfg.get("votes", []):
        if not Path(p).is_file():
            raise FileNotFoundError(f"vote file not found: {p}")
    for n, p in cfg.get("vocabularies", {}).items():
        if not Path(p).is_file():
            raise FileNotFoundError(f"vocabulary {n!r} not found: {p}")


# --- output helpers ----------------------------------------------------------


class Run:
    """Resolved settings plus the provenance stamped on every output."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.seed = int(cfg["seed"])
        self.hash = config_hash(cfg, command)
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)

    @property
    def meta(self) -> dict:
        return {"command": self.command, "config_hash": self.hash, "seed": self.seed,
                "version": __version__}

    @property
    def stamp(self) -> str:
        return f"config_hash={self.hash} seed={self.seed}"

    def path(self, name: str) -> Path:
        return self.out / name

    def write_json(self, name: str, doc: dict) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"meta": self.meta, **doc}, fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
        return p

    def write_jsonl(self, name: str, records) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps({"meta": self.meta}, sort_keys=True) + "\n")
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
        return p

    def write_table(self, name: str, header: list[str], rows, sep: str = "\t") -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# {self.stamp}\n")
            fh.write(sep.join(header) + "\n")
            for row in rows:
                fh.write(sep.join(_cell(v) for v in row) + "\n")
        return p

    def figure(self, fn, name: str, *args, **kwargs) -> Path:
        p = self.path(name)
        fn(*args, p, stamp=self.stamp, **kwargs)
        return p


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def read_jsonl(path) -> list[dict]:
    """Records of a JSONL file, skipping blank lines and a leading meta header."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise ValueError(f"{path}: line {lineno}: malformed JSON") from None
            if isinstance(rec, dict) and set(rec) == {"meta"}:
                continue
            out.append(rec)
    return out


# --- loaders -----------------------------------------------------------------


def _corpus(cfg):
    stop = read_word_list(cfg["stopwords"]) if cfg.get("stopwords") else default_stopwords()
    return load_corpus(cfg["corpus"], stopwords=stop)


def _weights(cfg) -> ScoringWeights:
    return ScoringWeights.from_dict(cfg.get("weights") or {})


def _extractor(cfg, engine, corpus):
    ontology = load_ontology(cfg["ontology"])
    cache = load_cache(cfg["cache"]) if cfg.get("cache") else None
    table = load_table(cfg["embeddings"]) if cfg.get("embeddings") else None
    if engine == "semcluster" and table is None:
        raise UsageError("engine semcluster needs --embeddings")
    return make_extractor(engine, ontology, corpus, table, cache, _weights(cfg))


# --- commands ----------------------------------------------------------------


def cmd_stats(run: Run) -> int:
    cfg = run.cfg
    _require(cfg, "corpus")
    corpus = _corpus(cfg)
    vocabs = {n: read_word_list(p) for n, p in sorted(cfg["vocabularies"].items())}
    if not vocabs:
        vocabs = {"english": default_vocabulary()}
    strip = bool(cfg["strip_online_tokens"])
    noise = stats.lexical_noise(corpus, vocabs, strip_online_tokens=strip)
    dist = stats.text_distribution(corpus)
    doc = {"noise": noise.to_json(), "distribution": dist.to_json()}
    if cfg.get("lang_tags"):
        doc["languages"] = stats.language_distribution(stats.load_language_tags(cfg["lang_tags"]))
    run.write_json("stats.json", doc)
    run.write_table("stats_noise.tsv", ["measure", "count", "fraction", "per_post"],
                    [(k, noise.counts[k], noise.fractions[k], noise.per_post[k]) for k in noise.counts])
    run.write_table("stats_comment_histogram.tsv", ["comments", "posts"], sorted(dist.histogram.items()))
    run.figure(plotting.comment_distribution, "comment_distribution.png", dist.histogram, dist.fit)
    run.figure(plotting.noise_bars, "lexical_noise.png", noise.fractions)
    return EXIT_OK


def _ranked_lists(records: dict[str, dict], gold: dict, category: str):
    ids = [pid for pid in sorted(gold) if pid in records]
    ranked = [[t for t, _ in records[pid].get(category, [])] for pid in ids]
    relevant = [gold[pid].categories.get(category, set()) for pid in ids]
    return ids, ranked, relevant


def _extract_all(cfg, engine, corpus) -> dict[str, dict]:
    ex = _extractor(cfg, engine, corpus)
    return {p.id: extraction_to_json(ex.extract(p)) for p in corpus.posts}


def _ranking_reports(results, gold) -> dict:
    reports = {}
    for cat in CATEGORIES:
        _, ranked, relevant = _ranked_lists(results, gold, cat)
        reports[cat] = ev.ranking_report(ranked, relevant)
    return reports


def _metric_rows(name, reports):
    rows = []
    for cat, rep in reports.items():
        for m, v in rep.items():
            rows.append((name, cat, m, v))
    return rows


def cmd_extract(run: Run) -> int:
    cfg = run.cfg
    _require(cfg, "corpus", "ontology")
    engine = cfg["engine"]
    if engine not in ENGINES:
        raise UsageError(f"unknown engine {engine!r}; choose from {', '.join(ENGINES)}")
    corpus = _corpus(cfg)
    engines = list(ENGINES) if cfg.get("compare") else [engine]
    results = {e: _extract_all(cfg, e, corpus) for e in engines}
    for e in engines:
        run.write_jsonl(f"extract_{e}.jsonl",
                        ({"post_id": p.id, "engine": e, "ranked": results[e][p.id]} for p in corpus.posts))
    if not (cfg.get("eval") or cfg.get("compare")):
        return EXIT_OK
    _require(cfg, "gold")
    gold = ev.load_gold(cfg["gold"], categories=CATEGORIES)
    reports = {e: _ranking_reports(results[e], gold) for e in engines}
    doc: dict[str, Any] = {"reports": reports}
    if cfg.get("compare"):
        tests = {}
        for cat in CATEGORIES:
            a_ids, a_ranked, rel = _ranked_lists(results["semcluster"], gold, cat)
            _, b_ranked, _ = _ranked_lists(results["syncluster"], gold, cat)
            keep = [i for i, r in enumerate(rel) if r]
            if len(keep) < 2:
                tests[cat] = None
                continue
            a = [ev.average_precision(a_ranked[i], rel[i]) for i in keep]
            b = [ev.average_precision(b_ranked[i], rel[i]) for i in keep]
            t, p = ev.paired_ttest(a, b)
            tests[cat] = {"metric": "average_precision", "n": len(keep), "t": _finite(t), "p": p,
                          "significant_at_0.05": p < 0.05}
        doc["paired_ttest"] = tests
    name = "compare" if cfg.get("compare") else f"extract_{engine}_metrics"
    run.write_json(f"{name}.json", doc)
    rows = [r for e in engines for r in _metric_rows(e, reports[e])]
    run.write_table(f"{name}.tsv", ["engine", "category", "metric", "value"], rows)
    metrics = [f"ndcg@{k}" for k in ev.KS] + [f"p@{k}" for k in ev.KS] + ["map"]
    run.figure(plotting.metric_bars, f"{name}_items.png", {e: reports[e]["items"] for e in engines},
               metrics, title="items")
    return EXIT_OK


def _finite(x: float):
    """JSON has no infinity; report it as a string."""
    return x if np.isfinite(x) else ("inf" if x > 0 else "-inf")


def _label_functions(cfg, corpus) -> list:
    lfs: list = []
    builtins = cfg.get("lfs") or []
    if builtins:
        _require(cfg, "ontology")
        ontology = load_ontology(cfg["ontology"])
        table = load_table(cfg["embeddings"]) if cfg.get("embeddings") else None
        for name in builtins:
            if name == "semcluster":
                if table is not None:
                    lfs.append(weaklabel.SemClusterLF(_extractor(cfg, "semcluster", corpus)))
            elif name == "keyword_syntactic":
                lfs.append(weaklabel.KeywordSyntacticLF(ontology))
            elif name == "keyword_semantic":
                if table is not None:
                    lfs.append(weaklabel.KeywordSemanticLF(ontology, table))
            else:
                raise UsageError(f"unknown labeling function {name!r}")
    ids = [p.id for p in corpus.posts]
    for path in cfg.get("votes", []):
        lfs.extend(weaklabel.load_vote_file(path, ids))
    if not lfs:
        raise UsageError("no labeling functions configured")
    return lfs


def cmd_label(run: Run) -> int:
    cfg = run.cfg
    _require(cfg, "corpus")
    combiner = cfg["combiner"]
    if combiner not in ("dp", "majority"):
        raise UsageError(f"unknown combiner {combiner!r}; choose dp or majority")
    corpus = _corpus(cfg)
    lm_cfg = dict(cfg.get("label_model") or {})
    priors = lm_cfg.pop("priors", None)
    em = weaklabel.EMConfig(**{"seed": run.seed, **lm_cfg})
    matrix = weaklabel.apply_lfs(corpus, _label_functions(cfg, corpus))
    C = weaklabel.CLASSES
    run.write_table("lf_coverage.tsv", ["lf", "coverage"],
                    [(lf, sum(v is not None for v in matrix.column(lf)) / max(1, len(matrix.post_ids)))
                     for lf in matrix.lf_ids])
    if combiner == "majority":
        labels, no_signal = weaklabel.majority_vote(matrix, em.mode)
        recs = ({"post_id": pid, "classes": [C[k] for k in np.flatnonzero(labels[i])],
                 "no_signal": bool(no_signal[i])} for i, pid in enumerate(matrix.post_ids))
        run.write_jsonl("labels_majority.jsonl", recs)
        return EXIT_OK
    model = weaklabel.fit_label_model(matrix, em, priors)
    probs = weaklabel.posterior_labels(model, matrix)
    hard = weaklabel.threshold_posteriors(probs)
    recs = ({"post_id": pid, "probs": [float(x) for x in probs[i]],
             "classes": [C[k] for k in np.flatnonzero(hard[i])]} for i, pid in enumerate(matrix.post_ids))
    run.write_jsonl("labels_dp.jsonl", recs)
    doc = {"classes": list(C), "params": model.to_json(),
           "fit": {c: {"n_iter": p.n_iter, "converged": p.converged, "unidentifiable": p.unidentifiable,
                       "loglik": p.loglik[-1] if p.loglik else None}
                   for c, p in model.params.items()}}
    run.write_json("label_model.json", doc)
    alpha = np.array([[model.params[c].alpha[model.params[c].lf_ids.index(lf)] for lf in matrix.lf_ids]
                      for c in C])
    run.write_table("lf_accuracy.tsv", ["class", *matrix.lf_ids],
                    [(c, *[float(a) for a in alpha[k]]) for k, c in enumerate(C)])
    run.figure(plotting.lf_accuracy_heatmap, "lf_accuracy.png", alpha, C, matrix.lf_ids)
    return EXIT_OK


def _label_targets(records: list[dict], ids: list[str]) -> np.ndarray:
    C = weaklabel.CLASSES
    by_id = {r["post_id"]: r for r in records}
    missing = [pid for pid in ids if pid not in by_id]
    if missing:
        raise ValueError(f"labels file has no row for post {missing[0]!r}")
    Y = np.zeros((len(ids), len(C)))
    for i, pid in enumerate(ids):
        r = by_id[pid]
        if "probs" in r:
            if len(r["probs"]) != len(C):
                raise ValueError(f"post {pid!r}: expected {len(C)} probabilities")
            Y[i] = r["probs"]
        else:
            for c in r.get("classes", []):
                if c not in C:
                    raise ValueError(f"post {pid!r}: unknown class {c!r}")
                Y[i, C.index(c)] = 1.0
    return Y


def cmd_train(run: Run) -> int:
    cfg = run.cfg
    _require(cfg, "corpus", "labels")
    corpus = _corpus(cfg)
    vocab = textcnn.build_vocab(corpus, int(cfg["min_freq"]))
    cnn = {"seed": run.seed, **(cfg.get("cnn") or {})}
    ccfg = textcnn.CnnConfig(vocab_size=len(vocab) + 2, **cnn)
    ids = textcnn.encode_corpus(corpus, vocab, ccfg.max_len)
    Y = _label_targets(read_jsonl(cfg["labels"]), [p.id for p in corpus.posts])
    model, losses = textcnn.train(textcnn.init_model(ccfg), ids, Y, ccfg)
    textcnn.save_checkpoint(model, vocab, run.path("model.ckpt"), extra={"meta": run.meta})
    run.write_table("train_log.csv", ["epoch", "loss"], [(e, l) for e, l in enumerate(losses, 1)], sep=",")
    run.figure(plotting.loss_curve, "train_loss.png", losses)
    return EXIT_OK


def cmd_predict(run: Run) -> int:
    cfg = run.cfg
    _require(cfg, "corpus", "checkpoint")
    corpus = _corpus(cfg)
    model, vocab, _ = textcnn.load_checkpoint(cfg["checkpoint"])
    ids = textcnn.encode_corpus(corpus, vocab, model.config.max_len)
    probs = textcnn.predict_proba(model, ids)
    thr = float(cfg["threshold"])
    C = weaklabel.CLASSES
    recs = ({"post_id": p.id, "classes": [C[k] for k in np.flatnonzero(probs[i] >= thr)],
             "probs": [float(x) for x in probs[i]]} for i, p in enumerate(corpus.posts))
    run.write_jsonl("predictions.jsonl", recs)
    return EXIT_OK


def cmd_eval(run: Run) -> int:
    cfg = run.cfg
    _require(cfg, "predictions", "gold")
    gold = ev.load_gold(cfg["gold"], classes=weaklabel.CLASSES)
    preds = {}
    for r in read_jsonl(cfg["predictions"]):
        if "post_id" not in r:
            raise ValueError(f"{cfg['predictions']}: record without post_id")
        preds[r["post_id"]] = r.get("classes", [])
    report = ev.classification_metrics(preds, {pid: g.classes for pid, g in gold.items()},
                                       weaklabel.CLASSES, cfg["average"])
    run.write_json("eval_metrics.json", {"classification": report})
    keys = ["accuracy", "precision", "recall", "f1"]
    run.write_table("eval_metrics.tsv", ["metric", "value"], [(k, report[k]) for k in keys] + [("n", report["n"])])
    run.figure(plotting.metric_bars, "eval_metrics.png", {"model": report}, keys)
    return EXIT_OK


COMMANDS = {"stats": cmd_stats, "extract": cmd_extract, "label": cmd_label, "train": cmd_train,
            "predict": cmd_predict, "eval": cmd_eval}


# --- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    for k in ("corpus", "ontology", "embeddings", "cache", "gold", "stopwords"):
        common.add_argument(f"--{k}")

    p = _Parser(prog="instamine", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("stats", parents=[common], help="lexical noise and text distributions")
    s.add_argument("--strip-online-tokens", action="store_true", default=None)
    s.add_argument("--vocab", action="append", metavar="NAME=PATH", help="named OOV vocabulary")
    s.add_argument("--lang-tags", help="TSV comment_id<TAB>language from an external identifier")

    s = sub.add_parser("extract", parents=[common], help="ranked attribute extraction")
    s.add_argument("--engine")
    s.add_argument("--eval", action="store_true", default=None, help="score against --gold")
    s.add_argument("--compare", action="store_true", default=None,
                   help="run both engines and a paired t-test on per-post AP")
    for name in ("gamma", "eta", "alpha", "gate"):
        s.add_argument(f"--{name}", type=float)
    s.add_argument("--k", type=int)

    s = sub.add_parser("label", parents=[common], help="combine labeling functions")
    s.add_argument("--combiner")
    s.add_argument("--votes", action="append", help="external vote file (repeatable)")
    s.add_argument("--lfs", help="comma-separated built-in LFs, or 'none'")
    s.add_argument("--prior", type=float)
    s.add_argument("--mode", choices=("complete", "partial"))

    s = sub.add_parser("train", parents=[common], help="train the text CNN on labels")
    s.add_argument("--labels")
    s.add_argument("--epochs", type=int)
    s.add_argument("--min-freq", type=int)

    s = sub.add_parser("predict", parents=[common], help="predict classes with a checkpoint")
    s.add_argument("--checkpoint")
    s.add_argument("--threshold", type=float)

    s = sub.add_parser("eval", parents=[common], help="classification metrics against gold")
    s.add_argument("--predictions")
    s.add_argument("--average", choices=("example", "micro"))
    return p


def resolve(args: argparse.Namespace) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if args.config:
        cfg.update(load_config(args.config))
    a = vars(args)
    for k in ("seed", "out", "engine", "combiner", "threshold", "strip_online_tokens", "average",
              "eval", "compare", "min_freq", "labels", "checkpoint", "predictions", "lang_tags",
              *("corpus", "ontology", "embeddings", "cache", "gold", "stopwords")):
        if a.get(k) is not None:
            cfg[k] = a[k]
    if a.get("votes"):
        cfg["votes"] = a["votes"]
    if a.get("vocab"):
        vocabs = {}
        for item in a["vocab"]:
            name, sep, path = item.partition("=")
            if not sep or not name:
                raise UsageError(f"--vocab expects NAME=PATH, got {item!r}")
            vocabs[name] = path
        cfg["vocabularies"] = vocabs
    if a.get("lfs") is not None:
        cfg["lfs"] = [] if a["lfs"] == "none" else [x for x in a["lfs"].split(",") if x]
    for name in ("gamma", "eta", "alpha", "gate", "k"):
        if a.get(name) is not None:
            cfg["weights"] = {**cfg["weights"], name: a[name]}
    for name in ("prior", "mode"):
        if a.get(name) is not None:
            cfg["label_model"] = {**cfg["label_model"], name: a[name]}
    if a.get("epochs") is not None:
        cfg["cnn"] = {**cfg["cnn"], "epochs": a["epochs"]}
    return cfg


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        _check_paths(cfg)
        run = Run(args.command, cfg)
        return COMMANDS[args.command](run)
    except UsageError as e:
        print(f"instamine: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (weaklabel.NumericError, textcnn.NumericError, FloatingPointError) as e:
        print(f"instamine: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, TypeError) as e:
        print(f"instamine: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
