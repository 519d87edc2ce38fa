"""Command-line workflows tying the modules together.

Subcommands: train, eval, predict, gradcheck, graph-stats, synth,
validate-manifest. Settings resolve as defaults < JSON config file <
explicit flags, and the fully resolved config is written into the run
directory, so a run is reproducible from that file alone.

Exit codes: 0 success, 1 validation or load failure, 2 non-finite numerics.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import training
from .corpus import (Corpus, CorpusError, EmbeddingStore, ExpectedCounts,
                     MMELD_EXPECTED, SPLIT_NAMES, load_corpus, load_embeddings,
                     save_corpus, save_embeddings, validate_manifest,
                     verify_coverage)
from .graph import GraphError, build_graph, edge_stats, summarize_densities
from .metrics import MetricsReport, format_report
from .model import (ConfigError, ModelConfig, forward, init_params,
                    load_checkpoint, save_checkpoint)
from .synth import SynthConfig, generate_synthetic
from .training import EpochStats, TrainConfig, evaluate, predict_dialogue


# Every knob a train run resolves; None means "derive from the data"
# (dim_u, num_classes) or "must be supplied" (paths).
_TRAIN_DEFAULTS: dict = {
    "data": None,
    "embeddings": None,
    "out": None,
    "dim_u": None,
    "dim_g": 300,
    "dim_h": 300,
    "gat_layers": 2,
    "num_classes": None,
    "lr": 1e-5,
    "batch_size": 16,
    "epochs": 50,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "clip_norm": None,
    "seed": 0,
    "shuffle": True,
    "class_weighted": False,
    "ignore_edges": False,
    "resume_from": None,
}


def _resolve_run_config(args: argparse.Namespace) -> dict:
    resolved = dict(_TRAIN_DEFAULTS)
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise CorpusError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise CorpusError(f"{path}: malformed JSON ({e.msg})") from None
        if not isinstance(file_cfg, dict):
            raise CorpusError(f"{path}: config must be a JSON object")
        unknown = sorted(set(file_cfg) - set(resolved))
        if unknown:
            raise CorpusError(f"{path}: unknown config keys {unknown}")
        resolved.update(file_cfg)
    for key in resolved:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    if args.no_shuffle:
        resolved["shuffle"] = False

    for key in ("data", "out"):
        if resolved[key] is None:
            raise CorpusError(f"train: missing required setting {key!r} (flag --{key})")
    if resolved["embeddings"] is None:
        resolved["embeddings"] = str(Path(resolved["data"]) / "embeddings")
    return resolved


def _load_data(data_dir: str, embeddings_stem: str) -> tuple[Corpus, EmbeddingStore]:
    corpus = load_corpus(Path(data_dir))
    stem = Path(embeddings_stem)
    store = load_embeddings(stem.with_suffix(".bin"), stem.with_suffix(".json"))
    verify_coverage(corpus, store)
    return corpus, store


def _check_compat(config: ModelConfig, corpus: Corpus, store: EmbeddingStore) -> None:
    if config.num_classes != corpus.num_classes:
        raise ConfigError(f"model expects {config.num_classes} classes, "
                          f"corpus declares {corpus.num_classes}")
    if config.dim_u != store.dim:
        raise ConfigError(f"model expects embedding dim {config.dim_u}, "
                          f"store provides {store.dim}")


def _save_report(report: MetricsReport, path: Path,
                 label_names: Sequence[str] | None) -> None:
    names = list(label_names) if label_names else [str(i) for i in range(len(report.per_class))]
    payload = {
        "weighted_f1": report.weighted_f1,
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "total": report.total,
        "per_class": [{"label": names[i], "precision": c.precision, "recall": c.recall,
                       "f1": c.f1, "support": c.support}
                      for i, c in enumerate(report.per_class)],
        "confusion": report.confusion.tolist(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _epoch_line(stats: EpochStats) -> str:
    line = f"epoch {stats.epoch:4d}  loss {stats.train_loss:.6f}"
    if stats.dev_wf1 is not None:
        line += f"  dev_wf1 {stats.dev_wf1:.4f}"
    return line


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> int:
    resolved = _resolve_run_config(args)
    corpus, store = _load_data(resolved["data"], resolved["embeddings"])
    for key, actual, what in (("dim_u", store.dim, "embedding dim"),
                              ("num_classes", corpus.num_classes, "corpus class count")):
        if resolved[key] is not None and resolved[key] != actual:
            raise ConfigError(f"{key} {resolved[key]} does not match {what} {actual}")
        resolved[key] = actual

    model_config = ModelConfig(dim_u=resolved["dim_u"], dim_g=resolved["dim_g"],
                               dim_h=resolved["dim_h"], gat_layers=resolved["gat_layers"],
                               num_classes=resolved["num_classes"])
    train_config = TrainConfig(lr=resolved["lr"], batch_size=resolved["batch_size"],
                               epochs=resolved["epochs"], beta1=resolved["beta1"],
                               beta2=resolved["beta2"], eps=resolved["eps"],
                               clip_norm=resolved["clip_norm"], seed=resolved["seed"],
                               shuffle=resolved["shuffle"],
                               class_weighted=resolved["class_weighted"])
    model_config.validate()
    train_config.validate()

    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")

    if resolved["resume_from"]:
        params, _ = load_checkpoint(Path(resolved["resume_from"]))
        if params.config != model_config:
            raise ConfigError(f"resume checkpoint config {params.config} does not match "
                              f"requested config {model_config}")
    else:
        params = init_params(model_config, resolved["seed"])
    history = training.train(params, corpus.splits["train"], store, train_config,
                             dev_dialogues=corpus.splits.get("dev", ()),
                             ignore_edges=resolved["ignore_edges"],
                             log=lambda s: print(_epoch_line(s)))

    save_checkpoint(params, out / "checkpoint", meta={"seed": resolved["seed"]})
    (out / "history.json").write_text(
        json.dumps({"best_epoch": history.best_epoch,
                    "epochs": [asdict(e) for e in history.epochs]}, indent=2) + "\n",
        encoding="utf-8")
    for split in ("dev", "test"):
        dialogues = corpus.splits.get(split, ())
        if dialogues:
            report = evaluate(params, dialogues, store,
                              ignore_edges=resolved["ignore_edges"])
            _save_report(report, out / f"report-{split}.json", corpus.label_names)
            print(f"{split} weighted F1: {report.weighted_f1:.4f}")
    print(f"run artifacts in {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    params, _ = load_checkpoint(Path(args.checkpoint))
    embeddings = args.embeddings or str(Path(args.data) / "embeddings")
    corpus, store = _load_data(args.data, embeddings)
    _check_compat(params.config, corpus, store)
    dialogues = corpus.splits.get(args.split, ())
    if not dialogues:
        raise CorpusError(f"split {args.split!r} is empty")
    report = evaluate(params, dialogues, store, ignore_edges=bool(args.ignore_edges))
    print(format_report(report, corpus.label_names))
    report_path = (Path(args.report) if args.report
                   else Path(args.checkpoint).parent / f"report-{args.split}.json")
    _save_report(report, report_path, corpus.label_names)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    params, _ = load_checkpoint(Path(args.checkpoint))
    embeddings = args.embeddings or str(Path(args.data) / "embeddings")
    corpus, store = _load_data(args.data, embeddings)
    _check_compat(params.config, corpus, store)
    dialogues = corpus.splits.get(args.split, ())
    if not dialogues:
        raise CorpusError(f"split {args.split!r} is empty")
    lines = []
    for dialogue in dialogues:
        preds = predict_dialogue(params, dialogue, store,
                                 ignore_edges=bool(args.ignore_edges))
        lines.append(json.dumps({"dialogue_id": dialogue.id, "predictions": preds}))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote predictions for {len(lines)} dialogues to {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Analytic vs central-difference gradients on a small random instance.

    The fixed graph gives node 2 two predecessors (a real attention softmax),
    node 3 one (constant softmax), and node 1 none (passthrough), so every
    branch of the encoder contributes to the checked loss.
    """
    config = ModelConfig(dim_u=args.dim_u, dim_g=args.dim_g, dim_h=args.dim_h,
                         gat_layers=args.gat_layers, num_classes=args.num_classes)
    graph = build_graph(4, [(0, 2), (1, 2), (2, 3)])
    rng = np.random.default_rng(args.seed)
    emb = rng.standard_normal((graph.n, config.dim_u))
    labels = [int(rng.integers(0, config.num_classes)) for _ in range(graph.n)]
    params = init_params(config, args.seed + 1)

    def build_loss(leaves):
        tape = next(iter(leaves.values())).tape
        utterances = [tape.leaf(row) for row in emb]
        logits = forward(leaves, config, utterances, graph)
        nlls = [ad.nll_logits(row, lab) for row, lab in zip(logits, labels)]
        return ad.scalar_mean(ad.concat(*nlls))

    worst = ad.grad_check(build_loss, params.values, eps=args.eps)
    ok = worst < args.threshold
    print(f"max relative gradient error {worst:.3e} vs threshold {args.threshold:.1e}: "
          + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


def cmd_graph_stats(args: argparse.Namespace) -> int:
    corpus = load_corpus(Path(args.data))
    splits = SPLIT_NAMES if args.split == "all" else (args.split,)
    rows = []
    for split in splits:
        for dialogue in corpus.splits.get(split, ()):
            rows.append((dialogue.id,
                         edge_stats(build_graph(len(dialogue), dialogue.edge_pairs()))))
    if not rows:
        raise CorpusError(f"no dialogues in split(s): {', '.join(splits)}")
    print(f"{'dialogue':<28} {'n':>4} {'edges':>6} {'density':>8}")
    for dialogue_id, stats in rows:
        print(f"{dialogue_id:<28} {stats.n:>4} {stats.edge_count:>6} {stats.density:>8.4f}")
    agg = summarize_densities([stats for _, stats in rows])
    print(f"dialogues {agg['dialogues']}  mean density {agg['mean_density']:.4f}  "
          f"median density {agg['median_density']:.4f}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = SynthConfig(n_dialogues=args.n_dialogues,
                      len_range=(args.len_min, args.len_max),
                      dim=args.dim, num_classes=args.num_classes, task=args.task,
                      n_dev=args.n_dev, n_test=args.n_test, noise=args.noise,
                      speakers=args.speakers)
    corpus, store = generate_synthetic(cfg, args.seed)
    out = Path(args.out)
    save_corpus(corpus, out)
    save_embeddings(store, out / "embeddings.bin", out / "embeddings.json")
    n_dialogues = sum(len(v) for v in corpus.splits.values())
    n_utterances = sum(len(d) for d in corpus.dialogues())
    print(f"wrote {n_dialogues} dialogues ({n_utterances} utterances, "
          f"task={cfg.task}) to {out}")
    return 0


def cmd_validate_manifest(args: argparse.Namespace) -> int:
    corpus = load_corpus(Path(args.data))
    if args.expected:
        path = Path(args.expected)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise CorpusError(f"{path}: malformed JSON ({e.msg})") from None
        if not isinstance(raw, dict) or "dialogues" not in raw or "utterances" not in raw:
            raise CorpusError(f"{path}: expected keys 'dialogues' and 'utterances'")
        expected = ExpectedCounts(dialogues=raw["dialogues"], utterances=raw["utterances"])
    else:
        expected = MMELD_EXPECTED[args.language]
    report = validate_manifest(corpus, expected)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="disclstm",
                                     description="Discourse-aware conversation classifier.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--data", required=True, help="corpus directory (train/dev/test.jsonl)")
        p.add_argument("--embeddings", default=None,
                       help="embedding stem; expects <stem>.bin and <stem>.json "
                            "(default: <data>/embeddings)")

    p = sub.add_parser("train", help="train a model and write run artifacts")
    p.add_argument("--data", default=None, help="corpus directory")
    p.add_argument("--embeddings", default=None, help="embedding stem")
    p.add_argument("--out", default=None, help="output directory for run artifacts")
    p.add_argument("--config", default=None, help="JSON file with any train settings")
    p.add_argument("--dim-u", type=int, default=None, help="embedding dim (checked vs data)")
    p.add_argument("--dim-g", type=int, default=None)
    p.add_argument("--dim-h", type=int, default=None)
    p.add_argument("--gat-layers", type=int, default=None)
    p.add_argument("--num-classes", type=int, default=None, help="checked vs corpus")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--beta2", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-shuffle", action="store_true", default=None)
    p.add_argument("--class-weighted", action="store_true", default=None,
                   help="weight the loss by inverse class frequency", dest="class_weighted")
    p.add_argument("--ignore-edges", action="store_true", default=None,
                   help="train and evaluate with empty discourse graphs")
    p.add_argument("--resume-from", default=None, dest="resume_from",
                   help="checkpoint stem to initialize parameters from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    add_data_flags(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint stem (no extension)")
    p.add_argument("--split", choices=SPLIT_NAMES, default="test")
    p.add_argument("--ignore-edges", action="store_true", default=None)
    p.add_argument("--report", default=None, help="where to save the report JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write per-utterance predictions as JSONL")
    add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=SPLIT_NAMES, default="test")
    p.add_argument("--ignore-edges", action="store_true", default=None)
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="verify gradients on a tiny random model")
    p.add_argument("--dim-u", type=int, default=8)
    p.add_argument("--dim-g", type=int, default=6)
    p.add_argument("--dim-h", type=int, default=4)
    p.add_argument("--gat-layers", type=int, default=2)
    p.add_argument("--num-classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("graph-stats", help="per-dialogue edge counts and densities")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=SPLIT_NAMES + ("all",), default="all")
    p.set_defaults(func=cmd_graph_stats)

    p = sub.add_parser("synth", help="generate a synthetic corpus + embeddings")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--task", choices=("local", "discourse"), default="local")
    p.add_argument("--n-dialogues", type=int, default=20, help="train-split size")
    p.add_argument("--n-dev", type=int, default=0)
    p.add_argument("--n-test", type=int, default=0)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--num-classes", type=int, default=3)
    p.add_argument("--len-min", type=int, default=4)
    p.add_argument("--len-max", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--speakers", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate-manifest", help="check split counts against expectations")
    p.add_argument("--data", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--language", choices=sorted(MMELD_EXPECTED))
    group.add_argument("--expected", default=None,
                       help="JSON file with per-split dialogue/utterance counts")
    p.set_defaults(func=cmd_validate_manifest)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ad.NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, GraphError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
