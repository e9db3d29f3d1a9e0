"""``btlner`` command line: ingest, synth, train, eval, probe, report.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command that writes a run directory also writes ``config.json`` with
the resolved parameters, seeds and the corpus hash.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .bias import epoch_ratio_series, write_reports_csv, write_reports_json
from .corpus import (
    CorpusSplit,
    TokenVocab,
    check_proportions,
    corpus_hash,
    generate_random_labels,
    load_corpus,
    merge_labels,
    read_brat_dir,
    read_tsv_dir,
    save_corpus,
    split_train_test,
)
from .errors import BtlnerError, ConfigError, CorpusError
from .evaluation import compute_metrics, knn_fit, knn_predict_many, write_metrics_csv, write_metrics_json
from .model import ModelConfig, init_model, load_checkpoint, save_checkpoint
from .synthetic import learnable_corpus, zipf_text_corpus
from .trainer import TrainConfig, evaluate, train, write_traces

log = logging.getLogger("btlner")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "train_fraction": 0.85,
    "max_len": 512,
    "regime": "atl",
    "epochs": 20,
    "lr": 5e-5,
    "batch_size": 4,
    "seed": 0,
    "seeds": [0],
    "k": 17,
    "bins": 60,
    "hidden": 64,
    "layers": 2,
    "heads": 4,
    "loss_variant": "log",
    "proportions": [0.6, 0.2, 0.2],
    "eval_every": 1,
}


class UsageError(ConfigError):
    pass


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_run_flags(p, seeds=False):
    p.add_argument("--corpus", help="corpus JSON written by `ingest` or `synth`")
    p.add_argument("--config", help="JSON file of parameters; flags override it")
    p.add_argument("--out-dir", help="run directory")
    p.add_argument("--regime", choices=("atl", "btl"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    if seeds:
        p.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    else:
        p.add_argument("--seed", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--max-len", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--loss-variant", choices=("log", "prob"))
    p.add_argument("--eval-every", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="btlner", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"btlner {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read brat or TSV files into a corpus JSON")
    p.add_argument("--input", required=True, help="directory (or single .tsv file)")
    p.add_argument("--format", choices=("brat", "tsv"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--merge", action="append", default=[], metavar="SRC=DST",
                   help="merge label SRC into DST (repeatable)")

    p = sub.add_parser("synth", help="write a synthetic corpus JSON")
    p.add_argument("--kind", choices=("random", "learnable"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=int, default=480)
    p.add_argument("--doc-len", type=int, default=50)
    p.add_argument("--vocab", type=int, default=400, help="background vocabulary size")
    p.add_argument("--entities", type=int, default=9, help="entity classes (learnable)")
    p.add_argument("--proportions", type=_float_list, default=None,
                   help="label proportions (random), default 0.6,0.2,0.2")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train, fit KNN on train logits, write metrics")
    _add_run_flags(p)
    p.add_argument("--k", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its test split")
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--out-dir")
    p.add_argument("--k", type=int)
    p.add_argument("--config")

    p = sub.add_parser("probe", help="random-label bias probe over one or more seeds")
    _add_run_flags(p, seeds=True)
    p.add_argument("--proportions", type=_float_list)

    p = sub.add_parser("report", help="print the tables of a run directory")
    p.add_argument("--run-dir", required=True)
    return parser


def resolve(args, keys) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = {k: DEFAULTS[k] for k in keys if k in DEFAULTS}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(keys)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _require(cfg, *names):
    for n in names:
        if not cfg.get(n):
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _train_config(cfg, seed) -> TrainConfig:
    return TrainConfig(epochs=cfg["epochs"], learning_rate=cfg["lr"], regime=cfg["regime"],
                       batch_size=cfg["batch_size"], seed=seed, eval_every=cfg["eval_every"],
                       loss_variant=cfg["loss_variant"], bins=cfg["bins"])


def _model_config(cfg, split: CorpusSplit, seed) -> ModelConfig:
    return ModelConfig(vocab_size=len(split.token_vocab), num_classes=len(split.vocab),
                       hidden_dim=cfg["hidden"], layers=cfg["layers"], heads=cfg["heads"],
                       max_len=cfg["max_len"], seed=seed)


def _validate_split(cfg):
    if not 0 < cfg["train_fraction"] < 1:
        raise UsageError("--train-fraction must lie in (0, 1)")
    if cfg["max_len"] < 1:
        raise UsageError("--max-len must be >= 1")


def _load(path):
    if not Path(path).is_file():
        raise UsageError(f"corpus file not found: {path}")
    return load_corpus(path)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_jsonable), encoding="utf-8")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _snapshot(out: Path, command, cfg, corpus, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {"command": command, "version": __version__,
                                      "corpus_hash": corpus_hash(corpus), **cfg, **(extra or {})})


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise UsageError(f"input not found: {src}")
    if src.is_dir() and not any(src.iterdir()):
        raise UsageError(f"input directory is empty: {src}")
    merge_map = {}
    for item in args.merge:
        if "=" not in item:
            raise UsageError(f"--merge expects SRC=DST, got {item!r}")
        s, d = item.split("=", 1)
        merge_map[s] = d
    try:
        corpus = read_brat_dir(src) if args.format == "brat" else read_tsv_dir(src)
    except CorpusError as exc:
        if "no ." in str(exc):
            raise UsageError(str(exc))
        raise
    corpus = merge_labels(corpus, merge_map)
    save_corpus(corpus, args.out)
    print(f"documents: {len(corpus.documents)}  tokens: {corpus.num_tokens}")
    for name, n in zip(corpus.vocab.classes, corpus.vocab.counts):
        print(f"  {name}\t{n}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.docs < 2 or args.doc_len < 1:
        raise UsageError("--docs must be >= 2 and --doc-len >= 1")
    if args.kind == "random":
        props = args.proportions or DEFAULTS["proportions"]
        base = zipf_text_corpus(args.docs, args.doc_len, args.vocab, seed=args.seed)
        corpus = generate_random_labels(base, props, seed=args.seed)
    else:
        corpus = learnable_corpus(args.docs, args.doc_len, args.entities,
                                  background_vocab=args.vocab, seed=args.seed)
    save_corpus(corpus, args.out)
    shares = corpus.vocab.counts / max(corpus.vocab.total, 1)
    print(f"documents: {len(corpus.documents)}  tokens: {corpus.num_tokens}")
    for name, s in zip(corpus.vocab.classes, shares):
        print(f"  {name}\t{s:.4f}")
    return EXIT_OK


TRAIN_KEYS = ("corpus", "out_dir", "regime", "epochs", "lr", "batch_size", "seed", "bins",
              "train_fraction", "max_len", "hidden", "layers", "heads", "loss_variant",
              "eval_every", "k")


def _decision_tables(model, split, k):
    test = evaluate(model, split.test)
    train_rec = evaluate(model, split.train)
    knn = knn_fit(train_rec, k)
    return {
        "softmax": compute_metrics(test.labels, test.predictions(), split.vocab),
        "knn": compute_metrics(test.labels, knn_predict_many(knn, test.logits), split.vocab),
    }


def cmd_train(args) -> int:
    cfg = resolve(args, TRAIN_KEYS)
    _require(cfg, "corpus", "out_dir")
    _validate_split(cfg)
    tcfg = _train_config(cfg, cfg["seed"])
    if cfg["k"] < 1:
        raise UsageError("--k must be >= 1")
    corpus = _load(cfg["corpus"])
    split = split_train_test(corpus, cfg["train_fraction"], cfg["seed"], cfg["max_len"])
    mcfg = _model_config(cfg, split, cfg["seed"])
    out = Path(cfg["out_dir"])
    _snapshot(out, "train", cfg, corpus, {"model": asdict(mcfg)})

    model, traces = train(init_model(mcfg), split, tcfg)
    meta = {"train_fraction": cfg["train_fraction"], "split_seed": cfg["seed"],
            "max_len": cfg["max_len"], "token_vocab": split.token_vocab.itos,
            "classes": split.vocab.classes, "corpus_hash": corpus_hash(corpus)}
    save_checkpoint(out / "checkpoint.npz", model, meta)
    write_traces(out / "traces.jsonl", traces)
    reports = [t.bias_report for t in traces if t.bias_report]
    write_reports_csv(out / "bias.csv", reports)
    write_reports_json(out / "bias.json", reports)
    tables = _decision_tables(model, split, cfg["k"])
    write_metrics_csv(out / "metrics.csv", tables)
    write_metrics_json(out / "metrics.json", tables)
    for rule, t in tables.items():
        print(f"{rule:8s} unweighted acc {100 * t.unweighted_accuracy:.2f}  "
              f"overall F1 {100 * t.micro[2]:.2f}  except-O F1 {100 * t.except_o[2]:.2f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve(args, ("corpus", "checkpoint", "out_dir", "k"))
    _require(cfg, "corpus", "checkpoint", "out_dir")
    if not Path(cfg["checkpoint"]).is_file():
        raise UsageError(f"checkpoint not found: {cfg['checkpoint']}")
    model, meta = load_checkpoint(cfg["checkpoint"])
    corpus = _load(cfg["corpus"])
    if meta.get("corpus_hash") and meta["corpus_hash"] != corpus_hash(corpus):
        log.warning("corpus hash differs from the one the checkpoint was trained on")
    split = split_train_test(corpus, meta["train_fraction"], meta["split_seed"], meta["max_len"])
    tv = TokenVocab(meta["token_vocab"][2:])
    for p in split.train + split.test:
        p.token_ids = tv.encode(p.tokens)
    split.token_vocab = tv
    out = Path(cfg["out_dir"])
    _snapshot(out, "eval", cfg, corpus)
    tables = _decision_tables(model, split, cfg["k"])
    write_metrics_csv(out / "metrics.csv", tables)
    write_metrics_json(out / "metrics.json", tables)
    for rule, t in tables.items():
        print(f"{rule:8s} unweighted acc {100 * t.unweighted_accuracy:.2f}")
    return EXIT_OK


PROBE_KEYS = ("corpus", "out_dir", "regime", "epochs", "lr", "batch_size", "seeds", "bins",
              "train_fraction", "max_len", "hidden", "layers", "heads", "loss_variant",
              "eval_every", "proportions")


def cmd_probe(args) -> int:
    cfg = resolve(args, PROBE_KEYS)
    _require(cfg, "corpus", "out_dir", "seeds")
    _validate_split(cfg)
    check_proportions(cfg["proportions"])
    for s in cfg["seeds"]:
        _train_config(cfg, s)
    corpus = _load(cfg["corpus"])
    out = Path(cfg["out_dir"])
    _snapshot(out, "probe", cfg, corpus)

    series = []
    for s in cfg["seeds"]:
        rc = generate_random_labels(corpus, cfg["proportions"], seed=s)
        split = split_train_test(rc, cfg["train_fraction"], s, cfg["max_len"])
        model = init_model(_model_config(cfg, split, s))
        _, traces = train(model, split, _train_config(cfg, s))
        run = out / f"seed{s}"
        run.mkdir(exist_ok=True)
        reports = [t.bias_report for t in traces]
        write_traces(run / "traces.jsonl", traces)
        write_reports_csv(run / "bias.csv", reports, {"seed": s})
        write_reports_json(run / "bias.json", reports)
        rs = epoch_ratio_series(traces)
        _write_json(run / "series.json", rs.to_dict())
        series.append(rs)
        last = reports[-1]
        print(f"seed {s}: A={np.round(last.predicted_share, 3).tolist()} "
              f"N={np.round(last.true_share, 3).tolist()} max|A-N|={last.max_gap():.3f}")
    A = np.mean([r.predicted_share for r in series], axis=0)
    N = np.mean([r.true_share for r in series], axis=0)
    mean = {"epochs": series[0].epochs.tolist(), "A": A.tolist(), "N_share": N.tolist(),
            "max_gap": np.abs(A - N).max(axis=1).tolist()}
    _write_json(out / "series_mean.json", mean)
    print(f"mean final max|A-N| over seeds: {mean['max_gap'][-1]:.3f}")
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    if not run.is_dir():
        raise UsageError(f"not a run directory: {run}")
    shown = False
    metrics = run / "metrics.json"
    if metrics.is_file():
        shown = True
        data = json.loads(metrics.read_text(encoding="utf-8"))
        rules = list(data)
        print("entity".ljust(16) + "N%".rjust(7) + "".join(f"{r + ' P/R/F1':>24s}" for r in rules))
        for i, row in enumerate(data[rules[0]]["classes"]):
            cells = "".join("{:>8.1f}{:>8.1f}{:>8.1f}".format(
                *(100 * data[r]["classes"][i][m] for m in "PRF"[:2]), 100 * data[r]["classes"][i]["F1"])
                for r in rules)
            print(row["name"][:16].ljust(16) + f"{100 * row['N_share']:7.2f}" + cells)
        for r in rules:
            print(f"{r}: unweighted acc {100 * data[r]['unweighted_accuracy']:.2f}  "
                  f"weighted acc {100 * data[r]['weighted_accuracy']:.2f}")
    for bias in [run / "bias.csv", *sorted(run.glob("seed*/bias.csv"))]:
        if bias.is_file():
            shown = True
            lines = bias.read_text(encoding="utf-8").splitlines()
            print(f"== {bias.relative_to(run)} (header + last epoch)")
            header, rows = lines[0], lines[1:]
            last_epoch = rows[-1].split(",")[header.split(",").index("epoch")] if rows else None
            print(header)
            for line in rows:
                if line.split(",")[header.split(",").index("epoch")] == last_epoch:
                    print(line)
    if not shown:
        raise UsageError(f"{run}: no metrics.json or bias.csv found")
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "probe": cmd_probe, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"btlner {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BtlnerError, OSError, ValueError) as exc:
        print(f"btlner {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
