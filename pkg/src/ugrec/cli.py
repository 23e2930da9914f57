"""Command-line entry point: ``ugrec prepare|train|evaluate|recommend|experiment|synth``.

Configuration is resolved as built-in defaults, then a JSON ``--config``
file, then explicit command-line flags.  The resolved configuration is
written to ``<output-dir>/config.json`` by every command that has an output
directory.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import CheckpointError, ContractError, DataError, NumericalError, UGRecError
from .evaluation import (
    DEFAULT_GROUPS,
    DEFAULT_RATIOS,
    GAMES_GROUPS,
    ablation_study,
    cooccurrence_sweep,
    evaluate,
    rank_items,
    write_table,
)
from .graph import (
    EntityKind,
    Vocabulary,
    filter_min_interactions,
    graph_statistics,
    leave_one_out_split,
    load_graph,
    load_split,
    parse_catalog,
    save_split,
    write_triplet_file,
)
from .model import ModelConfig, load_checkpoint, save_checkpoint, vocabulary_hash
from .synth import SynthConfig, generate_synthetic_graph, trivial_solution_probe
from .training import LEARNING_RATE_GRID, TrainConfig, fit_full

log = logging.getLogger("ugrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str | None = None
    triplets: str | None = None
    catalog: str | None = None
    threshold: int = 4
    output_dir: str | None = None
    K: int = 20
    grouping: tuple = DEFAULT_GROUPS
    deterministic: bool = False

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("model", "train")}
        d["grouping"] = list(self.grouping)
        d["model"] = self.model.to_dict()
        d["train"] = self.train.to_dict()
        return d


_MODEL_FLAGS = {"k": int, "use_attention": None, "undirected_scorer": str, "shared_attention": None,
                "scale_attention": None}
_TRAIN_FLAGS = {"learning_rate": float, "margin_interaction": float, "margin_other": float, "neg_pool": int,
                "lambda_d": float, "lambda_c": float, "epochs": int, "eval_every": int, "eval_k": int,
                "seed": int, "ablation": str, "batch_size": int, "patience": int, "hardest": str}


def _parse_grouping(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    text = str(value).strip().lower()
    if text == "default":
        return DEFAULT_GROUPS
    if text == "games":
        return GAMES_GROUPS
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ContractError(f"bad grouping {value!r}; use 'default', 'games' or e.g. 5,10,15") from None


def resolve_config(args) -> RunConfig:
    raw: dict = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ContractError(f"cannot read config {args.config}: {exc}") from None
    model_d = dict(raw.get("model", {}))
    train_d = dict(raw.get("train", {}))
    top = {k: v for k, v in raw.items() if k not in ("model", "train")}
    for name in _MODEL_FLAGS:
        if getattr(args, name, None) is not None:
            model_d[name] = getattr(args, name)
    for name in _TRAIN_FLAGS:
        if getattr(args, name, None) is not None:
            train_d[name] = getattr(args, name)
    if getattr(args, "no_early_stop", False):
        train_d["patience"] = None
    for name in ("data", "triplets", "catalog", "threshold", "output_dir", "K", "grouping"):
        if getattr(args, name, None) is not None:
            top[name] = getattr(args, name)
    if getattr(args, "deterministic", False):
        top["deterministic"] = True
    unknown = (set(top) - set(RunConfig.__dataclass_fields__)) | \
        {f"model.{k}" for k in set(model_d) - set(ModelConfig.__dataclass_fields__)} | \
        {f"train.{k}" for k in set(train_d) - set(TrainConfig.__dataclass_fields__)}
    if unknown:
        raise ContractError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = RunConfig(model=ModelConfig.from_dict(model_d), train=TrainConfig.from_dict(train_d),
                        **{k: v for k, v in top.items()})
    except (TypeError, ValueError) as exc:
        raise ContractError(f"invalid configuration: {exc}") from None
    cfg.grouping = _parse_grouping(cfg.grouping)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.output_dir:
        raise ContractError("--output-dir is required")
    d = Path(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _echo_config(cfg: RunConfig, d: Path, command: str) -> None:
    body = {"command": command, **cfg.to_dict()}
    body.pop("output_dir")
    (d / "config.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(value, flag):
    if not value:
        raise ContractError(f"{flag} is required")
    return value


# -- commands -------------------------------------------------------------------


def cmd_prepare(cfg: RunConfig) -> int:
    catalog = parse_catalog(_require(cfg.catalog, "--catalog"))
    graph = load_graph(_require(cfg.triplets, "--triplets"), catalog)
    graph = filter_min_interactions(graph, cfg.threshold)
    split = leave_one_out_split(graph)
    out = _out_dir(cfg)
    save_split(split, out)
    stats = graph_statistics(graph)
    lines = [f"{k}\t{v:.6f}" if isinstance(v, float) else f"{k}\t{v}" for k, v in stats.items()]
    (out / "stats.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _echo_config(cfg, out, "prepare")
    print("\n".join(lines))
    return EXIT_OK


def _checkpoint_extra(split, cfg: RunConfig, **more) -> dict:
    return {"vocab_hash": vocabulary_hash(split.train.vocab), "variant": cfg.train.ablation.value, **more}


def cmd_train(cfg: RunConfig) -> int:
    split = load_split(_require(cfg.data, "--data"))
    out = _out_dir(cfg)
    _echo_config(cfg, out, "train")
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        def on_eval(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            log.info("epoch %d  val HR@%d=%.4f  NDCG=%.4f", rec["epoch"], rec["K"], rec["hr"], rec["ndcg"])

        result = fit_full(split, cfg.train, cfg.model, on_eval=on_eval)
    save_checkpoint(out / "best.ckpt", result.params, _checkpoint_extra(split, cfg, epoch=result.best_epoch))
    if cfg.train.epochs > 0:
        save_checkpoint(out / "final.ckpt", result.final, _checkpoint_extra(split, cfg, epoch=result.epochs_run))
    print(f"best validation HR@{cfg.train.eval_k}: {result.best_hr:.4f} (epoch {result.best_epoch})")
    return EXIT_OK


def _load_bound_checkpoint(path, split):
    params, meta = load_checkpoint(_require(path, "--checkpoint"))
    want_cat = split.train.catalog.hash()
    want_vocab = vocabulary_hash(split.train.vocab)
    got_vocab = meta.get("extra", {}).get("vocab_hash")
    if params.catalog_hash != want_cat:
        raise CheckpointError(f"catalog hash mismatch: checkpoint {params.catalog_hash or '<none>'} "
                              f"vs data {want_cat}")
    if params.n_entities != split.train.n_entities or (got_vocab and got_vocab != want_vocab):
        raise CheckpointError(f"vocabulary mismatch: checkpoint has {params.n_entities} entities "
                              f"(hash {got_vocab}), data has {split.train.n_entities} (hash {want_vocab})")
    return params, meta


def cmd_evaluate(cfg: RunConfig, checkpoint: str) -> int:
    split = load_split(_require(cfg.data, "--data"))
    params, _ = _load_bound_checkpoint(checkpoint, split)
    report = evaluate(split, params, K=cfg.K, grouping=cfg.grouping)
    text = report.to_text()
    if cfg.output_dir:
        out = _out_dir(cfg)
        (out / "report.txt").write_text(text, encoding="utf-8")
        write_table(report.group_rows(), out / "groups.csv")
        v = split.train.vocab
        write_table([{"user": v.name(u), "rank": r} for u, r in sorted(report.per_user_rank.items())],
                    out / "ranks.csv")
        _echo_config(cfg, out, "evaluate")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_recommend(cfg: RunConfig, checkpoint: str, user: str, n: int) -> int:
    split = load_split(_require(cfg.data, "--data"))
    params, _ = _load_bound_checkpoint(checkpoint, split)
    vocab = split.train.vocab
    uid = vocab.lookup(EntityKind.USER, "", user)
    if uid is None:
        names = [vocab.name(i) for i in split.train.users]
        close = difflib.get_close_matches(user, names, n=5, cutoff=0.0)
        raise DataError(f"unknown user {user!r}; nearest valid ids: {', '.join(close)}")
    seen = split.train.user_histories.get(uid, [])
    items, dists = rank_items(uid, params, split.train, exclude=seen, return_distances=True)
    for item, d in zip(items[:n].tolist(), dists[:n].tolist()):
        print(f"{vocab.name(item)}\t{d:.6f}")
    return EXIT_OK


def cmd_experiment(cfg: RunConfig, kind: str, ratios, checkpoint: str | None) -> int:
    split = load_split(_require(cfg.data, "--data"))
    out = _out_dir(cfg)
    _echo_config(cfg, out, f"experiment {kind}")
    K = cfg.K
    if kind == "ablation":
        reports = ablation_study(split, cfg.train, cfg.model, K=K)
        rows = [rep.summary_row(variant=v) for v, rep in reports.items()]
    elif kind == "co-ratio-sweep":
        reports = cooccurrence_sweep(split, ratios or DEFAULT_RATIOS, cfg.train, cfg.model, K=K)
        rows = [rep.summary_row(ratio=r) for r, rep in reports.items()]
    elif kind == "sparsity-report":
        if checkpoint:
            params, _ = _load_bound_checkpoint(checkpoint, split)
        else:
            params = fit_full(split, cfg.train, cfg.model).params
        rows = evaluate(split, params, K=K, grouping=cfg.grouping).group_rows()
    elif kind == "trivial-probe":
        rows = [r.as_row() for r in trivial_solution_probe(split.train, cfg.train, cfg.model)]
    elif kind == "lr-search":
        rows = []
        for lr in LEARNING_RATE_GRID:
            res = fit_full(split, replace(cfg.train, learning_rate=lr), cfg.model)
            rep = evaluate(split, res.params, K=K)
            rows.append(rep.summary_row(learning_rate=lr, best_val_hr=round(res.best_hr, 6)))
        best = max(rows, key=lambda r: r["best_val_hr"])
        log.info("selected learning rate %s", best["learning_rate"])
    else:
        raise ContractError(f"unknown experiment {kind!r}")
    text = write_table(rows, out / f"{kind}.csv")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SynthConfig(**{k: getattr(args, k) for k in SynthConfig.__dataclass_fields__
                         if getattr(args, k, None) is not None})
    graph, clusters = generate_synthetic_graph(cfg)
    out = Path(_require(args.output_dir, "--output-dir"))
    out.mkdir(parents=True, exist_ok=True)
    write_triplet_file(graph, out / "triplets.tsv")
    (out / "catalog.tsv").write_text(graph.catalog.to_text(), encoding="utf-8")
    with open(out / "clusters.tsv", "w", encoding="utf-8") as fh:
        for j, c in enumerate(clusters.tolist()):
            fh.write(f"i{j}\t{c}\n")
    (out / "synth_config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    print(f"wrote {out / 'triplets.tsv'}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded, bit-reproducible execution")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_training(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model / training")
    g.add_argument("--data", help="directory written by 'prepare'")
    g.add_argument("--k", type=int, help="embedding dimension (64)")
    g.add_argument("--use-attention", dest="use_attention", type=_bool)
    g.add_argument("--undirected-scorer", dest="undirected_scorer",
                   choices=["hyperplane", "distmult", "directed-pair"])
    g.add_argument("--shared-attention", dest="shared_attention", type=_bool)
    g.add_argument("--scale-attention", dest="scale_attention", type=_bool)
    g.add_argument("--lr", "--learning-rate", dest="learning_rate", type=float)
    g.add_argument("--margin-interaction", dest="margin_interaction", type=float)
    g.add_argument("--margin-other", dest="margin_other", type=float)
    g.add_argument("--neg-pool", dest="neg_pool", type=int)
    g.add_argument("--lambda-d", dest="lambda_d", type=float)
    g.add_argument("--lambda-c", dest="lambda_c", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--eval-every", dest="eval_every", type=int)
    g.add_argument("--eval-k", dest="eval_k", type=int)
    g.add_argument("--ablation", help="full, o-dc, o-c, o-d or o-att")
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--no-early-stop", dest="no_early_stop", action="store_true")
    g.add_argument("--hardest", choices=["closest", "farthest"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ugrec", description="Train and evaluate unified-graph recommenders.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter raw triplets and write the leave-one-out split")
    _add_common(p)
    p.add_argument("--triplets", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--threshold", type=int, help="minimum interactions per user/item (4)")

    p = sub.add_parser("train", help="train and write best/final checkpoints plus a log")
    _add_common(p)
    _add_training(p)

    p = sub.add_parser("evaluate", help="HR@K / NDCG@K on the test split")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--K", "--top-k", dest="K", type=int, help="cut-off (20)")
    p.add_argument("--grouping", help="default (5,10,15), games (5,10,30) or comma list")

    p = sub.add_parser("recommend", help="top-n unconsumed items for one user")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("-n", type=int, default=10)

    p = sub.add_parser("experiment", help="ablation, co-ratio-sweep, sparsity-report, trivial-probe, lr-search")
    p.add_argument("kind", choices=["ablation", "co-ratio-sweep", "sparsity-report", "trivial-probe", "lr-search"])
    _add_common(p)
    _add_training(p)
    p.add_argument("--K", "--top-k", dest="K", type=int)
    p.add_argument("--grouping")
    p.add_argument("--ratios", help="comma-separated co-occurrence ratios")
    p.add_argument("--checkpoint", help="sparsity-report: evaluate this checkpoint instead of training")

    p = sub.add_parser("synth", help="write a planted-cluster synthetic dataset")
    p.add_argument("--output-dir", dest="output_dir", required=True)
    for name, f in SynthConfig.__dataclass_fields__.items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=type(f.default))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        cfg = resolve_config(args)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint)
        if args.command == "recommend":
            return cmd_recommend(cfg, args.checkpoint, args.user, args.n)
        if args.command == "experiment":
            ratios = [float(x) for x in args.ratios.split(",")] if args.ratios else None
            return cmd_experiment(cfg, args.kind, ratios, args.checkpoint)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UGRecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
