"""Command-line entry point: prepare, build-graph, train, eval, verify, export."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .checkpoint import CheckpointError, load_checkpoint
from .corpus import CorpusError, leave_one_out_split, load_interactions, read_prepared, write_prepared
from .evaluation import EvaluationError, ModelScorer, config_digest, evaluate_seeds, pop_baseline
from .graph import GlobalGraph, GraphError, build_global_graph
from .model import ABLATIONS, EGDGNNNet, HyperParams, ModelError, global_aggregate, init_params
from .numerics import NumericsError
from .training import TrainConfig, TrainingError, train

log = logging.getLogger("egd_gnn")

# flag name -> (config key, type)
HP_FLAGS = {
    "channels": ("K", int),
    "dim": ("d_in", int),
    "channel_dim": ("d_channel", int),
    "window": ("L", int),
    "max_len": ("T", int),
    "beta": ("beta", float),
    "dropout": ("dropout", float),
    "lr": ("lr", float),
    "batch_size": ("batch_size", int),
    "epochs": ("epochs", int),
    "seed": ("seed", int),
    "ablation": ("ablation", str),
    "activation": ("activation", str),
    "eval_every": ("eval_every", int),
    "patience": ("patience", int),
    "grad_clip": ("grad_clip", float),
    "max_degree": ("max_degree", int),
}
DEFAULT_MAX_LEN = {"movielens-dat": 200, "amazon-jsonl": 50}

ERROR_MODULES = (
    (CorpusError, "corpus"),
    (GraphError, "graph"),
    (NumericsError, "numerics"),
    (ModelError, "model"),
    (CheckpointError, "model"),
    (TrainingError, "training"),
    (EvaluationError, "eval"),
)


class CliError(ValueError):
    pass


def read_config_file(path) -> dict:
    """Flat config: a JSON object, or ``key = value`` lines with ``#`` comments."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
    else:
        data = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            data[k.replace("-", "_")] = v
    out = {}
    types = {key: typ for key, typ in HP_FLAGS.values()}
    for k, v in data.items():
        key = HP_FLAGS[k][0] if k in HP_FLAGS else k
        typ = types.get(key)
        out[key] = typ(v) if typ is not None and v is not None else v
    return out


def resolve_config(args, data_dir: Path | None = None) -> dict:
    cfg = {**HyperParams().to_dict(), "eval_every": 1, "patience": None, "grad_clip": None, "max_degree": None}
    if data_dir is not None and (data_dir / "stats.json").exists():
        fmt = json.loads((data_dir / "stats.json").read_text()).get("source_format")
        if fmt in DEFAULT_MAX_LEN:
            cfg["T"] = DEFAULT_MAX_LEN[fmt]
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for flag, (key, _) in HP_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        hp=HyperParams.from_dict(cfg),
        eval_every=int(cfg.get("eval_every") or 0),
        patience=cfg.get("patience"),
        grad_clip=cfg.get("grad_clip"),
        max_degree=cfg.get("max_degree"),
    )


def write_config(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)


def load_graph(data_dir: Path, corpus, splits, cfg) -> GlobalGraph:
    path = data_dir / "graph.tsv"
    if path.exists() and cfg.get("max_degree") is None:
        graph = GlobalGraph.from_tsv(path)
        if graph.n_items != corpus.n_items:
            raise GraphError(f"{path}: {graph.n_items} items, corpus has {corpus.n_items}")
        return graph
    return build_global_graph(splits.train_sequences(), corpus.n_items, cfg.get("max_degree"), cfg.get("seed", 0))


# ---------------------------------------------------------------- commands


def cmd_prepare(args) -> int:
    k_core = args.kcore if args.kcore is not None else (0 if args.format == "tsv" else 5)
    corpus = load_interactions(args.input, args.format, header=args.header, k_core=k_core)
    splits = leave_one_out_split(corpus)
    out = Path(args.out)
    write_prepared(corpus, splits, out)
    stats = json.loads((out / "stats.json").read_text())
    stats.update(source_format=args.format, k_core=k_core)
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True))
    write_config(out, {"input": str(args.input), "format": args.format, "header": args.header, "k_core": k_core})
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_build_graph(args) -> int:
    data = Path(args.data)
    corpus, splits = read_prepared(data)
    graph = build_global_graph(splits.train_sequences(), corpus.n_items, args.max_degree, args.seed or 0)
    out = Path(args.out) if args.out else data / "graph.tsv"
    graph.to_tsv(out)
    print(f"items={graph.n_items} edges={graph.edge_count} -> {out}")
    return 0


def cmd_train(args) -> int:
    data = Path(args.data)
    corpus, splits = read_prepared(data)
    cfg = resolve_config(args, data)
    config = train_config(cfg)
    graph = load_graph(data, corpus, splits, cfg) if config.hp.uses_global else None
    out = Path(args.out)
    write_config(out, {**cfg, "data": str(data)})
    result = train(corpus, splits, graph, config, out_dir=out)
    last = result.history[-1] if result.history else {}
    print(json.dumps({"epochs": len(result.history), **{k: last[k] for k in ("loss", "recon", "kl") if k in last}}))
    return 0


def _scorer_factory(args, corpus, splits, data):
    if args.baseline == "pop":
        scorer = pop_baseline(splits, corpus.n_items)
        return (lambda seed: scorer), {"baseline": "pop"}
    if not args.checkpoint:
        raise CliError("eval needs --checkpoint or --baseline pop")
    params, manifest = load_checkpoint(args.checkpoint)
    cfg = dict(manifest["hyperparams"])
    hp = HyperParams.from_dict(cfg)
    expected = {k: v.shape for k, v in init_params(hp, corpus.n_items, seed=0).items()}
    for name, shape in expected.items():
        if name not in params or params[name].shape != shape:
            got = params[name].shape if name in params else None
            raise CheckpointError(f"checkpoint parameter {name}: shape {got}, config expects {shape}")
    graph = load_graph(data, corpus, splits, cfg) if hp.uses_global else None
    scorer = ModelScorer(EGDGNNNet(hp, corpus.n_items, graph), params)
    return (lambda seed: scorer), cfg


def cmd_eval(args) -> int:
    data = Path(args.data)
    corpus, splits = read_prepared(data)
    factory, cfg = _scorer_factory(args, corpus, splits, data)
    report = evaluate_seeds(factory, corpus, splits, args.split, args.seeds, config_digest(cfg))
    payload = report.to_dict()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    write_config(out.parent, {**cfg, "split": args.split, "seeds": args.seeds, "checkpoint": args.checkpoint})
    print(json.dumps({k: payload[k] for k in ("ndcg@5", "recall@5", "ndcg@10", "recall@10")}))
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(include_gradients=not args.skip_gradients)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_export(args) -> int:
    from .export import write_exports

    data = Path(args.data)
    corpus, splits = read_prepared(data)
    params, manifest = load_checkpoint(args.checkpoint)
    cfg = manifest["hyperparams"]
    hp = HyperParams.from_dict(cfg)
    if params["item_embed"].shape[0] != corpus.n_items + 1:
        raise CheckpointError("checkpoint item table does not match the corpus")
    graph = load_graph(data, corpus, splits, cfg)
    z_g, raw = global_aggregate(graph, params["item_embed"], params["channel_W"], activation=hp.activation, return_raw=True)
    out = Path(args.out)
    paths = write_exports(out, corpus.item_ids, z_g, raw)
    write_config(out, {**cfg, "checkpoint": args.checkpoint, "data": str(data)})
    print(" ".join(str(p) for p in paths.values()))
    return 0


# ---------------------------------------------------------------- parser


def _add_hp_flags(p):
    p.add_argument("--config", help="flat config file (JSON object or key = value lines)")
    p.add_argument("--channels", type=int, help="number of channels K")
    p.add_argument("--dim", type=int, help="item embedding size d_in")
    p.add_argument("--channel-dim", type=int, help="per-channel width d_channel")
    p.add_argument("--window", type=int, help="sliding window length L")
    p.add_argument("--max-len", type=int, help="sequence length T")
    p.add_argument("--beta", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--activation", choices=("tanh", "sigmoid", "identity"))
    p.add_argument("--eval-every", type=int, help="validate every N epochs (0 = never)")
    p.add_argument("--patience", type=int)
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--max-degree", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egd-gnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse a raw log into a prepared corpus directory")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=corpus_mod.FORMATS, default="tsv")
    p.add_argument("--out", required=True)
    p.add_argument("--header", action="store_true", help="tsv input has a header line")
    p.add_argument("--kcore", type=int, help="k-core filter (default 5, or 0 for tsv)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("build-graph", help="write graph.tsv for a prepared corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--max-degree", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train and checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_hp_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="101-candidate ranking evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=("pop",))
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--out", default="metrics.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="gradient and property self-checks")
    p.add_argument("--skip-gradients", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export", help="embeddings, channel assignment and 2-D PCA as TSV")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        module = next((m for cls, m in ERROR_MODULES if isinstance(exc, cls)), "cli")
        msg = str(exc).replace("\n", " ")
        print(f"ERROR:{module}:{msg}", file=sys.stderr)
        if args.verbose:
            log.exception("traceback")
        return 1


if __name__ == "__main__":
    sys.exit(main())
