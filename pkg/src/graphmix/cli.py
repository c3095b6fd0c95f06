"""Command-line driver for reproducible runs.

Every subcommand reads a JSON config file, applies ``--set key=value``
overrides, resolves the result into one flat record, and writes that
record plus its hash, the seeds and the library versions into a
manifest next to its outputs. Two runs with equal manifests produce
equal primary outputs when run with ``--workers 1`` (which
``--deterministic`` enforces).

Exit codes: 0 success, 2 usage or configuration, 3 data integrity,
4 numerical failure.
"""

import argparse
import concurrent.futures
import hashlib
import json
import os
import platform
import sys
from dataclasses import dataclass, field

import numpy as np
import scipy

from . import __version__
from .cgmm import load_params, params_to_json
from .classifiers import (ClassifierConfig, export_predictions,
                          load_classifier, predict, save_classifier, score,
                          train_classifier)
from .ecgmm import load_ecgmm_params
from .embeddings import embed_dataset, export_embeddings, load_embeddings
from .errors import (ConfigError, DataError, FormatError, GraphmixError,
                     IntegrityError, NumericalError, ParseError)
from .evaluation import (Grid, assess_fold, build_report, counter_seed,
                         load_split, model_assessment, render_csv,
                         render_markdown, save_split, split_axes,
                         stratified_kfold, stratified_holdout)
from .icgmm import load_state
from .pipeline import (MODELS, StackConfig, layer_seed, load_stack,
                       train_stack)
from .statistics import FrozenPosterior

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# which stack axes a config file may set explicitly, per model kind
_SHARED_AXES = {"model", "layers", "mode"}
_EM_AXES = {"C", "emission", "epochs", "threshold", "init"}
_AXES_BY_MODEL = {
    "cgmm": _SHARED_AXES | _EM_AXES | {"layer_scope"},
    "ecgmm": _SHARED_AXES | _EM_AXES | {"C_E", "arc_source"},
    "icgmm": _SHARED_AXES | {"sweeps", "alpha0", "gamma", "auto",
                             "init_states", "burn_in", "thin"},
}
_AXES_BY_MODEL["icgmm-fast"] = _AXES_BY_MODEL["icgmm"]


def check_model_axes(model, axes):
    """Refuse hyper-parameters that belong to a different model kind."""
    if model not in MODELS:
        raise ConfigError(f"unknown model '{model}'; choose from {MODELS}")
    allowed = _AXES_BY_MODEL[model]
    for name in axes:
        if name not in allowed:
            owners = sorted(m for m, a in _AXES_BY_MODEL.items()
                            if name in a)
            raise ConfigError(
                f"axis '{name}' does not apply to {model} models"
                + (f" (it belongs to {', '.join(owners)})" if owners else ""))


@dataclass
class RunConfig:
    """One resolved run: the subcommand, its settings, and the knobs
    shared by every subcommand."""

    command: str
    settings: dict = field(default_factory=dict)
    out: str = "."
    seed: int = 0
    workers: int = 1
    deterministic: bool = False
    long_mode: bool = False
    verbose: bool = False

    def check(self):
        if self.workers < 1:
            raise ConfigError("--workers must be at least 1")
        if self.deterministic and self.workers != 1:
            raise ConfigError("--deterministic requires --workers 1")
        try:
            os.makedirs(self.out, exist_ok=True)
            probe = os.path.join(self.out, ".write-probe")
            with open(probe, "w", encoding="utf-8"):
                pass
            os.remove(probe)
        except OSError as exc:
            raise ConfigError(f"output directory not writable: {exc}") \
                from None

    def say(self, message):
        if self.verbose:
            print(message, file=sys.stderr)


def load_config_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config


def apply_overrides(config, pairs):
    """``key=value`` flag overrides; dots descend into nested objects."""
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override '{pair}' is not key=value")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{key}' descends into a "
                                  f"non-object value")
        node[parts[-1]] = value
    return config


def config_hash(config):
    dump = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(dump.encode()).hexdigest()


def write_manifest(run, seeds=None):
    manifest = {
        "command": run.command,
        "config": run.settings,
        "config_hash": config_hash(run.settings),
        "seeds": {"experiment": run.seed, **(seeds or {})},
        "workers": run.workers,
        "deterministic": run.deterministic,
        "long_mode": run.long_mode,
        "versions": {"graphmix": __version__,
                     "python": platform.python_version(),
                     "numpy": np.__version__,
                     "scipy": scipy.__version__},
    }
    path = os.path.join(run.out, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_dataset(path):
    from .graphs import load_text_dataset
    if not os.path.exists(path):
        raise ConfigError(f"dataset file not found: {path}")
    return load_text_dataset(path)


def _pop(settings, key, default=None, required=False):
    if required and key not in settings:
        raise ConfigError(f"config needs '{key}'")
    return settings.pop(key, default)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_ingest(run):
    """TU-format directory -> self-describing dataset cache file."""
    from .graphs import load_tu_dataset, save_text_dataset
    settings = dict(run.settings)
    path = _pop(settings, "path", required=True)
    name = _pop(settings, "name", required=True)
    out_file = _pop(settings, "file", f"{name}.jsonl")
    source = _pop(settings, "feature_source", "auto")
    if settings:
        raise ConfigError(f"unknown ingest settings {sorted(settings)}")
    d = load_tu_dataset(path, name, feature_source=source)
    cache = os.path.join(run.out, out_file)
    save_text_dataset(d, cache)
    write_manifest(run)
    run.say(f"{d.num_graphs} graphs, {d.total_vertices} vertices -> {cache}")
    print(cache)
    return EXIT_OK


def cmd_embed(run):
    """Train a layer stack and export the dataset's embeddings."""
    settings = dict(run.settings)
    dataset = _pop(settings, "dataset", required=True)
    fmt = _pop(settings, "format", "binary")
    stack_axes, embed_axes, clf_axes = split_axes(settings)
    if clf_axes:
        raise ConfigError(f"classifier axes {sorted(clf_axes)} do not "
                          f"apply to embed")
    model = stack_axes.get("model", "cgmm")
    check_model_axes(model, stack_axes)

    d = _load_dataset(dataset)
    config = StackConfig(seed=run.seed, **stack_axes)
    run.say(f"training {config.layers} {model} layer(s)")
    stack = train_stack(d, config,
                        checkpoint_dir=os.path.join(run.out, "stack"))
    arcs = stack.frozen_arcs if embed_axes.get("arcs") else None
    table = embed_dataset(d, stack.frozen,
                          kind=embed_axes.get("kind", "unigram"),
                          aggregation=embed_axes.get("aggregation", "sum"),
                          neighbors=embed_axes.get("neighbors", "in"),
                          arc_layers=arcs or None, model=model,
                          seed=run.seed)
    suffix = "csv" if fmt == "csv" else "bin"
    out_path = os.path.join(run.out, f"embeddings.{suffix}")
    export_embeddings(table, out_path, format=fmt)

    metadata = {"state_counts": stack.state_counts(),
                "width": table.width,
                "layer_seeds": [layer_seed(run.seed, l)
                                for l in range(stack.num_layers)]}
    if model.startswith("icgmm"):
        metadata["alpha0_trajectory"] = [
            [s["alpha0"] for s in state.history] for state in stack.params]
        metadata["gamma_trajectory"] = [
            [s["gamma"] for s in state.history] for state in stack.params]
    with open(os.path.join(run.out, "metadata.json"), "w",
              encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=2)
        fh.write("\n")
    write_manifest(run)
    run.say(f"embeddings {table.vectors.shape} -> {out_path}")
    print(out_path)
    return EXIT_OK


def cmd_classify(run):
    """Train a classifier on exported embeddings, report its metrics."""
    settings = dict(run.settings)
    emb_path = _pop(settings, "embeddings", required=True)
    dataset = _pop(settings, "dataset", required=True)
    metric = _pop(settings, "metric", "accuracy")
    val_fraction = _pop(settings, "val_fraction", 0.1)
    _, embed_axes, clf_axes = split_axes(settings)
    if embed_axes:
        raise ConfigError(f"embedding axes {sorted(embed_axes)} do not "
                          f"apply to classify")

    table = load_embeddings(emb_path)
    d = _load_dataset(dataset)
    if table.vectors.shape[0] != d.num_graphs:
        raise IntegrityError(
            f"{table.vectors.shape[0]} embedding rows for "
            f"{d.num_graphs} graphs")
    y = d.targets()
    if any(t is None for t in y):
        raise DataError("every graph needs a target to classify")
    y = y.astype(np.float64 if metric == "mae" else np.int64)

    hold_labels = y.astype(np.int64) if metric != "mae" \
        else np.zeros(len(y), dtype=np.int64)
    fit, held = stratified_holdout(
        hold_labels, np.arange(len(y)),
        counter_seed(run.seed, "classify"), 0, frac=val_fraction)
    config = ClassifierConfig(metric=metric, seed=run.seed, **clf_axes)
    run.say(f"training on {len(fit)} graphs, validating on {len(held)}")
    params = train_classifier(table.vectors[fit], y[fit],
                              table.vectors[held], y[held], config)

    save_classifier(params, os.path.join(run.out, "classifier.bin"))
    predictions = predict(params, table.vectors)
    export_predictions(predictions,
                       os.path.join(run.out, "predictions.csv"))
    report = {"metric": metric,
              "validation": float(params.best_metric),
              "training_set": float(score(predict(params,
                                                  table.vectors[fit]),
                                          y[fit], metric)),
              "epochs": params.epoch,
              "snapshot_epoch": params.snapshot_epoch}
    with open(os.path.join(run.out, "metrics.json"), "w",
              encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    write_manifest(run)
    print(json.dumps(report))
    return EXIT_OK


def _fold_task(payload):
    d, fold, axes, metric, seed, R = payload
    return assess_fold(d, fold, Grid(axes), metric, seed, R)


def cmd_evaluate(run):
    """Full risk assessment: outer folds, guarded selection, report."""
    settings = dict(run.settings)
    dataset = _pop(settings, "dataset", required=True)
    axes = _pop(settings, "grid", required=True)
    k = _pop(settings, "k", 10)
    R = _pop(settings, "final_runs", 3)
    metric = _pop(settings, "metric", "accuracy")
    split_file = _pop(settings, "split", None)
    long_run = _pop(settings, "long", False)
    if settings:
        raise ConfigError(f"unknown evaluate settings {sorted(settings)}")
    if long_run and not run.long_mode:
        raise ConfigError("this experiment is marked long; pass --long-mode")
    grid = Grid(axes)
    models = set(axes.get("model", ["cgmm"]))
    allowed = set().union(*(_AXES_BY_MODEL[m] for m in models))
    for name in axes:
        if name in set().union(*_AXES_BY_MODEL.values()) \
                and name not in allowed:
            raise ConfigError(f"grid axis '{name}' does not apply to "
                              f"{sorted(models)}")

    d = _load_dataset(dataset)
    labels = d.targets()
    if any(t is None for t in labels):
        raise DataError("every graph needs a target for evaluation")
    if split_file is not None:
        plan = load_split(split_file)
    else:
        plan = stratified_kfold(labels.astype(np.int64), k, run.seed)
    save_split(plan, os.path.join(run.out, "split.json"))

    if run.workers == 1:
        report = model_assessment(d, grid, k, R, metric=metric,
                                  seed=run.seed, workdir=run.out, plan=plan)
    else:
        # fold-level fan-out; the reduce stays single-threaded and the
        # per-fold work is seed-determined, so the records match a
        # sequential run
        payloads = [(d, fold, axes, metric, run.seed, R)
                    for fold in plan.folds]
        with concurrent.futures.ProcessPoolExecutor(run.workers) as pool:
            records = list(pool.map(_fold_task, payloads))
        for f, record in enumerate(records):
            with open(os.path.join(run.out, f"fold_{f:02d}.json"), "w",
                      encoding="utf-8") as fh:
                json.dump(record, fh, indent=2)
                fh.write("\n")
        report = build_report(records, grid, k, R, metric, run.seed)

    with open(os.path.join(run.out, "report.json"), "w",
              encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(run.out, "report.md"), "w",
              encoding="utf-8") as fh:
        fh.write(render_markdown(report))
    with open(os.path.join(run.out, "report.csv"), "w",
              encoding="utf-8") as fh:
        fh.write(render_csv(report))
    write_manifest(run)
    if "mean" in report:
        print(f"{report['mean']:.4f} ± {report['std']:.4f} ({metric})")
    else:
        print("incomplete")
    return EXIT_OK


def _describe_binary(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"GPRM":
        try:
            header = params_to_json(load_params(path))
            header = {k: v for k, v in header.items()
                      if not isinstance(v, list) or len(v) < 20}
            return {"kind": "layer-parameters", **{
                k: header[k] for k in ("C", "layer_subset", "emission",
                                       "layer_index") if k in header}}
        except FormatError:
            params = load_ecgmm_params(path)
            return {"kind": "two-network layer-parameters",
                    "C_V": params.vertex_component.C,
                    "C_E": params.edge_component.C,
                    "layer_index": params.layer_index,
                    "arc_source": params.arc_source}
    if magic == b"GPST":
        post = FrozenPosterior.load(path)
        return {"kind": "frozen posterior", "layer": post.layer,
                "mode": post.mode, "vertices": post.values.shape[0],
                "states": post.width}
    if magic == b"GHDP":
        state = load_state(path)
        return {"kind": "sampler state", "states": state.C,
                "alpha0": state.alpha0, "gamma": state.gamma,
                "sweeps": len(state.history)}
    if magic == b"GEMB":
        table = load_embeddings(path, format="binary")
        info = dict(table.metadata)
        info["embedding_kind"] = info.pop("kind", None)
        info.update({"kind": "embeddings", "rows": table.vectors.shape[0]})
        return info
    if magic == b"GCLS":
        params = load_classifier(path)
        return {"kind": "classifier",
                "architecture": params.config.architecture,
                "features": params.num_features,
                "outputs": params.num_outputs,
                "epochs": params.epoch,
                "best_metric": float(params.best_metric)}
    raise FormatError(f"{path}: unrecognized file")


def cmd_inspect(run):
    """Summarize any artifact this package writes, as JSON on stdout."""
    path = run.settings["path"]
    if os.path.isdir(path):
        manifest = os.path.join(path, "stack.json")
        if os.path.exists(manifest):
            stack = load_stack(path)
            info = {"kind": "layer stack", "model": stack.model,
                    "layers": stack.num_layers,
                    "state_counts": stack.state_counts()}
        else:
            raise ConfigError(f"{path}: directory holds no stack manifest")
    elif not os.path.exists(path):
        raise ConfigError(f"no such file: {path}")
    elif path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            content = json.load(fh)
        info = {"kind": "json", "keys": sorted(content)} \
            if isinstance(content, dict) else {"kind": "json"}
    else:
        with open(path, "rb") as fh:
            head = fh.read(4)
        if head[:1] == b"{":
            from .graphs import load_text_dataset
            d = load_text_dataset(path)
            info = {"kind": "dataset", "graphs": d.num_graphs,
                    "vertices": d.total_vertices,
                    "vertex_alphabet": d.vertex_alphabet_size,
                    "edge_alphabet": d.edge_alphabet_size,
                    "task": d.task, "classes": d.num_classes}
        elif path.endswith(".csv"):
            with open(path, encoding="utf-8") as fh:
                header = fh.readline().strip()
                rows = sum(1 for _ in fh)
            info = {"kind": "csv", "columns": header.split(","),
                    "rows": rows}
        else:
            info = _describe_binary(path)
    print(json.dumps(info, indent=2, sort_keys=True, default=str))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing

def _common_flags(parser):
    parser.add_argument("--seed", type=int, default=0,
                        help="experiment seed; every random choice "
                             "derives from it")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel workers (1 guarantees determinism)")
    parser.add_argument("--deterministic", action="store_true",
                        help="refuse anything that could break exact "
                             "reproducibility")
    parser.add_argument("--long-mode", action="store_true",
                        help="allow full-scale experiments that take hours")
    parser.add_argument("--verbose", "-v", action="store_true")
    parser.add_argument("--out", default=".",
                        help="output directory (default: current)")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        dest="overrides",
                        help="override one config entry; repeatable")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="graphmix",
        description="Layer-wise probabilistic graph models: ingest data, "
                    "train stacks, export embeddings, classify, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="TU directory -> dataset cache")
    p.add_argument("--path", help="directory holding the dataset folder")
    p.add_argument("--name", help="dataset folder name")
    _common_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="train a stack, export embeddings")
    _common_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("classify", help="train a classifier on embeddings")
    _common_flags(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="full nested risk assessment")
    _common_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="summarize any artifact")
    p.add_argument("path")
    _common_flags(p)
    p.set_defaults(func=cmd_inspect)

    return parser


def build_run(args):
    settings = load_config_file(args.config) if args.config else {}
    apply_overrides(settings, args.overrides)
    if args.command == "ingest":
        if args.path is not None:
            settings["path"] = args.path
        if args.name is not None:
            settings["name"] = args.name
    if args.command == "inspect":
        settings["path"] = args.path
    run = RunConfig(command=args.command, settings=settings, out=args.out,
                    seed=args.seed, workers=args.workers,
                    deterministic=args.deterministic,
                    long_mode=args.long_mode, verbose=args.verbose)
    run.check()
    return run


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = build_run(args)
        return args.func(run)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, IntegrityError, DataError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GraphmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
