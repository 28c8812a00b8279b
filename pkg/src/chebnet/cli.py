"""Command-line interface: train, eval, export, synth.

Exit codes: 0 success, 1 usage/validation/schema errors, 2 numeric failure
(training divergence).  ``CHEBNET_OUTPUT_ROOT`` overrides where run
directories are placed without changing the resolved config.
"""

import argparse
import os
import sys

import numpy as np

from chebnet import data as datamod
from chebnet.archive import ArchiveError, load_archive, restore_model, save_archive
from chebnet.config import (ConfigError, config_json, resolve_config,
                            training_config)
from chebnet.data import SchemaError
from chebnet.graph import build_graph_context
from chebnet.metrics import compute_metrics, confusion_csv, format_metrics
from chebnet.model import build_model
from chebnet.training import (SEED_SYNTH, DivergenceError, HISTORY_HEADER,
                              cross_validate, fit_full, predict, subseed)


class _CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _CliError(message)


def _fmt(x):
    return repr(float(x))


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _output_root(cfg):
    return os.environ.get("CHEBNET_OUTPUT_ROOT", cfg["output_dir"])


def load_task_dataset(cfg):
    """Build the Dataset selected by cfg['task']."""
    task = cfg["task"]
    path = cfg["data"]["path"]
    t = cfg["training"]
    if task == "synthetic":
        s = cfg["synth"]
        dataset, _ = datamod.synth_generate(
            n_samples=int(s["n_samples"]),
            n_channels=int(s["n_channels"]),
            n_classes=int(s["n_classes"]),
            separation=float(s["separation"]),
            seed=subseed(cfg["seed"], SEED_SYNTH),
            threshold=float(cfg["graph"]["threshold"]),
        )
        return dataset
    if path is None:
        raise ConfigError(f"task {task!r} needs data.path")
    if task == "dataco-risk":
        return datamod.load_dataco(
            path,
            target_column=cfg["data"]["target_column"],
            feature_columns=cfg["data"]["feature_columns"],
        )
    sg = datamod.load_supplygraph(path)
    if task == "sg-product":
        return datamod.build_sg_node_dataset(
            sg, window=int(t["window"]), stride=int(t["stride"]))
    if task == "sg-product-edges":
        return datamod.build_sg_edge_dataset(sg, "product_group")
    if task == "sg-plant-edges":
        return datamod.build_sg_edge_dataset(sg, "plant")
    raise ConfigError(f"unknown task {task!r}")


def _history_csv(history):
    lines = [",".join(HISTORY_HEADER)]
    for epoch, lg, lc, lt, acc in history:
        lines.append(f"{epoch},{_fmt(lg)},{_fmt(lc)},{_fmt(lt)},{_fmt(acc)}")
    return "\n".join(lines) + "\n"


def _fold_plan_csv(plan):
    lines = ["sample_index,fold"]
    lines.extend(f"{i},{int(f)}" for i, f in enumerate(plan))
    return "\n".join(lines) + "\n"


def _checkpoint_entries(model, graph, mean, std):
    entries = list(model.named_arrays())
    entries.append(("extra.adjacency", graph.adjacency))
    entries.append(("extra.norm_mean", mean))
    entries.append(("extra.norm_std", std))
    return entries


def _checkpoint_meta(cfg, dataset, model, graph):
    return {
        "task": cfg["task"],
        "variant": cfg["variant"],
        "n_classes": int(dataset.n_classes),
        "alpha": float(model.alpha),
        "conv_shape": list(model.conv_shape),
        "graph_dims": [bn.width for _, bn in model.blocks],
        "channel_names": list(graph.channel_names),
        "class_names": list(dataset.class_names),
    }


def cmd_train(args):
    cfg = resolve_config(args.config, args.overrides)
    run_dir = os.path.join(_output_root(cfg), cfg["variant"])
    os.makedirs(run_dir, exist_ok=True)
    _write(os.path.join(run_dir, "resolved_config.json"), config_json(cfg))

    dataset = load_task_dataset(cfg)
    tcfg = training_config(cfg)
    result = cross_validate(dataset, tcfg)
    model, history, graph, mean, std = fit_full(dataset, tcfg)

    report = format_metrics(result.pooled, dataset.class_names)
    report += "\nfold\taccuracy\n"
    for fr in result.fold_results:
        report += f"{fr.fold}\t{fr.metrics.accuracy!r}\n"
    _write(os.path.join(run_dir, "metrics.txt"), report)
    _write(os.path.join(run_dir, "confusion.csv"),
           confusion_csv(result.pooled, dataset.class_names))
    _write(os.path.join(run_dir, "history.csv"), _history_csv(history))
    _write(os.path.join(run_dir, "fold_plan.csv"),
           _fold_plan_csv(result.fold_plan))
    save_archive(os.path.join(run_dir, "checkpoint.bin"),
                 _checkpoint_entries(model, graph, mean, std),
                 _checkpoint_meta(cfg, dataset, model, graph))
    print(f"wrote {run_dir} (pooled accuracy {result.pooled.accuracy:.4f})")
    return 0


def _restore(args, cfg):
    """Load the archive, rebuild the model per config and restore weights."""
    entries, meta = load_archive(args.checkpoint)
    model_entries = {k: v for k, v in entries.items()
                     if not k.startswith("extra.")}
    adjacency = entries["extra.adjacency"]
    mean = entries["extra.norm_mean"]
    std = entries["extra.norm_std"]
    graph = build_graph_context(adjacency, meta.get("channel_names", ()))

    task = "edge-class" if meta["task"].endswith("-edges") else "node-class"
    width = adjacency.shape[0] if task == "node-class" else mean.shape[0]
    m = cfg["model"]
    model = build_model(
        task=task,
        variant=cfg["variant"],
        width=width,
        n_classes=int(meta["n_classes"]),
        conv_shape=tuple(meta["conv_shape"]),
        rng=np.random.default_rng(0),
        cheb_orders=tuple(int(k) for k in m["cheb_orders"]),
        graph_dims=None if m["graph_dims"] is None
        else tuple(int(d) for d in m["graph_dims"]),
        conv_kernels=int(m["conv_kernels"]),
        dropout_p=float(m["dropout"]),
        alpha=float(meta["alpha"]),
        embedding_dim=int(m["embedding_dim"]),
    )
    restore_model(model, model_entries)
    return model, graph, mean, std, meta


def cmd_eval(args):
    cfg = resolve_config(args.config, args.overrides)
    model, graph, mean, std, meta = _restore(args, cfg)
    dataset = load_task_dataset(cfg)
    feats = datamod.apply_zscore(dataset.features, mean, std)
    preds = predict(model, graph, feats, dataset.edges)
    metrics = compute_metrics(preds, dataset.targets, int(meta["n_classes"]))

    os.makedirs(args.out, exist_ok=True)
    names = meta.get("class_names") or None
    _write(os.path.join(args.out, "eval_metrics.txt"),
           format_metrics(metrics, names))
    _write(os.path.join(args.out, "eval_confusion.csv"),
           confusion_csv(metrics, names))
    print(f"accuracy {metrics.accuracy!r}")
    return 0


def cmd_export(args):
    if args.what not in ("graph", "embeddings"):
        raise _CliError(f"unknown export target {args.what!r}")
    cfg = resolve_config(args.config, args.overrides)
    os.makedirs(args.out, exist_ok=True)
    if args.what == "graph":
        entries, meta = load_archive(args.checkpoint)
        datamod.write_adjacency_csv(
            os.path.join(args.out, "adjacency.csv"),
            entries["extra.adjacency"], meta.get("channel_names", ()))
        print(f"wrote {args.out}/adjacency.csv")
        return 0
    model, graph, mean, std, _ = _restore(args, cfg)
    dataset = load_task_dataset(cfg)
    feats = datamod.apply_zscore(dataset.features, mean, std)
    acts = model.layer_activations(graph, feats, dataset.edges)
    labels = ["input"] + [f"layer{i + 1}" for i in range(len(acts) - 1)]
    for label, act in zip(labels, acts):
        path = os.path.join(args.out, f"embeddings_{label}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(f"f{j}" for j in range(act.shape[1])) + "\n")
            for row in act:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    print(f"wrote {len(acts)} embedding files to {args.out}")
    return 0


def cmd_synth(args):
    cfg = resolve_config(args.config, args.overrides)
    os.makedirs(args.out, exist_ok=True)
    s = cfg["synth"]
    if args.kind == "node":
        dataset, truth = datamod.synth_generate(
            n_samples=int(s["n_samples"]),
            n_channels=int(s["n_channels"]),
            n_classes=int(s["n_classes"]),
            separation=float(s["separation"]),
            seed=subseed(cfg["seed"], SEED_SYNTH),
            threshold=float(cfg["graph"]["threshold"]),
        )
        datamod.write_dataco_csv(dataset,
                                 os.path.join(args.out, "synthetic.csv"),
                                 target_column="target")
        datamod.write_adjacency_csv(
            os.path.join(args.out, "truth_adjacency.csv"), truth,
            dataset.channel_names)
        print(f"wrote {args.out}/synthetic.csv")
    else:
        directory = datamod.write_supplygraph_dir(
            os.path.join(args.out, "supplygraph"),
            seed=int(cfg["seed"]))
        print(f"wrote {directory}")
    return 0


def _add_common(sub):
    sub.add_argument("--config", default=None, help="JSON config file")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE",
                     help="override a config key, e.g. training.epochs=50")


def build_parser():
    parser = _Parser(prog="chebnet",
                     description="Chebyshev ensemble graph network toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    p_train = subs.add_parser("train", help="cross-validate, fit and report")
    _add_common(p_train)

    p_eval = subs.add_parser("eval", help="evaluate a checkpoint on data")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--out", default=os.path.join("runs", "eval"))

    p_export = subs.add_parser("export", help="export graph or embeddings")
    _add_common(p_export)
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--what", required=True,
                          help="graph or embeddings")
    p_export.add_argument("--out", default=os.path.join("runs", "export"))

    p_synth = subs.add_parser("synth", help="write a synthetic dataset")
    _add_common(p_synth)
    p_synth.add_argument("--kind", default="node",
                         help="node (transaction CSV) or edges "
                              "(supply-graph directory)")
    p_synth.add_argument("--out", default=os.path.join("runs", "synth"))
    return parser


_COMMANDS = {"train": cmd_train, "eval": cmd_eval, "export": cmd_export,
             "synth": cmd_synth}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "kind", "node") not in ("node", "edges"):
            raise _CliError(f"unknown synth kind {args.kind!r}")
        return _COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (_CliError, ConfigError, SchemaError, ArchiveError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
