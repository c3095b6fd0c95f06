"""Risk assessment with leak-free model selection.

Outer stratified k-fold cross validation estimates the risk; inside
each outer fold a 90/10 holdout picks the configuration, and the
winner is retrained several times on the whole outer training set with
a fresh early-stopping holdout per run. Test graphs are reachable only
through an access guard that logs every read and refuses them outside
the scoring phase, so "selection never saw the test set" is a checkable
property of the log rather than a promise.

Every random choice draws from ``derive(seed, role, *counters)`` with
the experiment seed at the root: ``("split", class)`` for outer folds,
``("inner", fold, class)`` for the selection holdout, ``("select",
fold)`` for selection-time training, ``("final", fold, run)`` for
final-run training and ``("holdout", fold, run)`` for its early-stop
split. Rerunning with the same seed reproduces the report bit for bit.
"""

import itertools
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .classifiers import (ClassifierConfig, predict, score,
                          train_classifier)
from .embeddings import embed_dataset
from .errors import ConfigError, DataError, IntegrityError
from .pipeline import StackConfig, train_stack, transform
from .rng import derive


def counter_seed(seed, *path):
    """Integer sub-seed for one named role in the experiment."""
    return int(derive(seed, *path).integers(0, 2 ** 32))


# ---------------------------------------------------------------------------
# Access guard

class AccessGuard:
    """All dataset reads go through here, and all of them are logged.

    ``forbidden`` holds the current fold's test indices. Any phase
    other than ``"test"`` that asks for one of them fails hard; the
    request is logged first, so the evidence survives the failure.
    """

    def __init__(self, d, forbidden=()):
        self._d = d
        self.forbidden = frozenset(int(i) for i in forbidden)
        self.log = []

    def take(self, indices, phase):
        indices = [int(i) for i in indices]
        self.log.append({"phase": phase, "indices": indices})
        if phase != "test":
            hit = sorted(set(indices) & self.forbidden)
            if hit:
                raise IntegrityError(
                    f"phase {phase!r} touched held-out test graph(s) "
                    f"{hit[:5]}")
        return self._d.subset(indices)

    def reads(self, phase):
        """Every index the phase has read, duplicates included."""
        out = []
        for entry in self.log:
            if entry["phase"] == phase:
                out.extend(entry["indices"])
        return out


# ---------------------------------------------------------------------------
# Splits

@dataclass
class Fold:
    """Index sets of one outer fold, all into the full dataset."""

    train: list
    test: list
    inner_train: list
    val: list


@dataclass
class SplitPlan:
    """Precomputed outer folds plus the per-fold selection holdout."""

    folds: list
    seed: int
    class_counts: dict = field(default_factory=dict)

    @property
    def num_folds(self):
        return len(self.folds)

    def check(self, labels):
        """Assert the split invariants against the labels it came from."""
        labels = np.asarray(labels)
        n = labels.size
        seen = []
        for fold in self.folds:
            seen.extend(fold.test)
            if set(fold.train) & set(fold.test):
                raise IntegrityError("train and test overlap")
            if not set(fold.val) <= set(fold.train):
                raise IntegrityError("selection holdout leaks outside "
                                     "the outer training set")
            if sorted(fold.inner_train + fold.val) != sorted(fold.train):
                raise IntegrityError("inner split does not partition "
                                     "the outer training set")
        if sorted(seen) != list(range(n)):
            raise IntegrityError("test folds do not partition the dataset")
        k = self.num_folds
        for c in np.unique(labels):
            total = int((labels == c).sum())
            for fold in self.folds:
                got = int((labels[fold.test] == c).sum())
                if abs(got - total / k) > 1:
                    raise IntegrityError(
                        f"class {c}: fold holds {got} of {total} samples, "
                        f"more than one away from {total / k:.2f}")

    def to_json(self):
        return {"seed": self.seed,
                "class_counts": {str(c): n
                                 for c, n in self.class_counts.items()},
                "folds": [{"train": f.train, "test": f.test,
                           "inner_train": f.inner_train, "val": f.val}
                          for f in self.folds]}

    @classmethod
    def from_json(cls, record):
        folds = [Fold(f["train"], f["test"], f["inner_train"], f["val"])
                 for f in record["folds"]]
        counts = {int(c): n for c, n in record["class_counts"].items()}
        return cls(folds, record["seed"], counts)


def stratified_kfold(labels, k, seed):
    """Deterministic stratified outer folds with a 90/10 inner holdout.

    Each class is shuffled once, split into k nearly equal chunks, and
    the chunks are dealt to folds with a per-class rotation so that no
    single fold collects all the remainders. Per fold and class the
    test count is within one sample of total/k.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ConfigError("labels must form a nonempty 1-D array")
    if k < 2:
        raise ConfigError("need at least 2 folds")
    classes = np.unique(labels)
    test_sets = [[] for _ in range(k)]
    counts = {}
    for ci, c in enumerate(classes):
        members = np.flatnonzero(labels == c)
        counts[int(c)] = members.size
        if members.size < k:
            raise ConfigError(
                f"class {c} has only {members.size} samples; "
                f"use k <= {members.size}")
        members = members[derive(seed, "split", int(c)).permutation(
            members.size)]
        for j, chunk in enumerate(np.array_split(members, k)):
            test_sets[(j + ci) % k].extend(int(i) for i in chunk)
    folds = []
    for f in range(k):
        test = sorted(test_sets[f])
        train = sorted(set(range(labels.size)) - set(test))
        inner_train, val = stratified_holdout(labels, train, seed, f)
        folds.append(Fold(train, test, inner_train, val))
    return SplitPlan(folds, seed, counts)


def stratified_holdout(labels, train, seed, fold, frac=0.1):
    """Split one fold's training indices 90/10, per class, at least one
    sample of every class staying on the training side."""
    labels = np.asarray(labels)
    train = np.asarray(train)
    val = []
    for c in np.unique(labels[train]):
        members = train[labels[train] == c]
        take = int(round(frac * members.size))
        take = min(members.size - 1, max(1, take)) if members.size > 1 else 0
        order = derive(seed, "inner", fold, int(c)).permutation(members.size)
        val.extend(int(i) for i in members[order[:take]])
    inner = sorted(set(int(i) for i in train) - set(val))
    return inner, sorted(val)


def save_split(plan, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan.to_json(), fh, indent=2)
        fh.write("\n")


def load_split(path):
    with open(path, encoding="utf-8") as fh:
        return SplitPlan.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# Hyper-parameter grid

class Grid:
    """Ordered hyper-parameter axes and their cartesian expansion.

    Expansion follows axis insertion order with the last axis varying
    fastest; the position of a configuration in that order is part of
    the experiment record, and ties in selection break toward the
    earlier position.
    """

    def __init__(self, axes):
        if not axes:
            raise ConfigError("the grid needs at least one axis")
        self.axes = {}
        for name, values in axes.items():
            values = list(values)
            if not values:
                raise ConfigError(f"grid axis {name!r} has no values")
            self.axes[name] = values
        try:
            json.dumps(self.axes)
        except TypeError as exc:
            raise ConfigError(f"grid values must be serializable: {exc}") \
                from None

    def __len__(self):
        out = 1
        for values in self.axes.values():
            out *= len(values)
        return out

    def __iter__(self):
        names = list(self.axes)
        for combo in itertools.product(*self.axes.values()):
            yield dict(zip(names, combo))

    def configuration(self, position):
        for i, config in enumerate(self):
            if i == position:
                return config
        raise ConfigError(f"grid has {len(self)} configurations, "
                          f"no position {position}")


_STACK_AXES = ("model", "layers", "C", "C_E", "mode", "emission",
               "arc_source", "epochs", "threshold", "init", "layer_scope",
               "sweeps", "alpha0", "gamma", "auto", "init_states",
               "burn_in", "thin")
_EMBED_AXES = ("kind", "aggregation", "neighbors", "arcs")
_CLF_AXES = ("architecture", "hidden_units", "learning_rate", "l2",
             "batch_size", "max_epochs", "patience")


def split_axes(config):
    """Partition one grid configuration into its three consumers."""
    stack, embed, clf = {}, {}, {}
    for name, value in config.items():
        if name in _STACK_AXES:
            stack[name] = value
        elif name in _EMBED_AXES:
            embed[name] = value
        elif name in _CLF_AXES:
            clf[name] = value
        else:
            raise ConfigError(f"unknown grid axis {name!r}")
    return stack, embed, clf


def _stack_group(stack_axes):
    """Configs differing only in depth share one trained stack."""
    rest = {k: v for k, v in stack_axes.items() if k != "layers"}
    return json.dumps(rest, sort_keys=True)


def _embed_tables(stack, d_fit, others, embed_axes):
    """Embedding matrix of the fitting set and of each held-out part."""
    kind = embed_axes.get("kind", "unigram")
    aggregation = embed_axes.get("aggregation", "sum")
    neighbors = embed_axes.get("neighbors", "in")
    with_arcs = embed_axes.get("arcs", False)
    arcs = stack.frozen_arcs if with_arcs and stack.frozen_arcs else None
    tables = [embed_dataset(d_fit, stack.frozen, kind=kind,
                            aggregation=aggregation, neighbors=neighbors,
                            arc_layers=arcs, model=stack.model).vectors]
    for d in others:
        vertex, arc_layers = transform(stack, d)
        arcs = arc_layers if with_arcs and arc_layers else None
        tables.append(embed_dataset(d, vertex, kind=kind,
                                    aggregation=aggregation,
                                    neighbors=neighbors, arc_layers=arcs,
                                    model=stack.model).vectors)
    return tables


def _labels_of(d, metric):
    y = d.targets()
    if any(t is None for t in y):
        raise DataError("every graph needs a target for evaluation")
    return y.astype(np.float64) if metric == "mae" \
        else y.astype(np.int64)


def _improves(metric, value, best):
    if best is None:
        return True
    return value < best if metric == "mae" else value > best


def _classifier_config(clf_axes, metric, seed):
    return ClassifierConfig(metric=metric, seed=seed, **clf_axes)


# ---------------------------------------------------------------------------
# Model selection

@dataclass
class SelectionResult:
    best: dict
    position: int
    records: list


def model_selection(d, fold, grid, metric="accuracy", seed=0, budget=None,
                    guard=None):
    """Pick the grid configuration with the best holdout score.

    Stacks are trained on the inner 90% only; the holdout graphs are
    embedded by inference. Configurations that differ only in depth
    reuse one stack, truncated, which is exact because shallow layers
    never depend on deeper ones. ``budget`` caps how many grid
    positions are tried, in expansion order.
    """
    if guard is None:
        guard = AccessGuard(d, fold.test)
    d_inner = guard.take(fold.inner_train, "selection")
    d_val = guard.take(fold.val, "selection")
    y_inner = _labels_of(d_inner, metric)
    y_val = _labels_of(d_val, metric)

    configs = list(grid)
    if budget is not None:
        configs = configs[:budget]
    stack_seed = counter_seed(seed, "select", _fold_id(fold))

    stacks = {}
    best = best_pos = None
    records = []
    for position, config in enumerate(configs):
        stack_axes, embed_axes, clf_axes = split_axes(config)
        group = _stack_group(stack_axes)
        depth = stack_axes.get("layers", StackConfig.layers)
        if group not in stacks:
            deepest = max(split_axes(c)[0].get("layers", StackConfig.layers)
                          for c in configs
                          if _stack_group(split_axes(c)[0]) == group)
            stacks[group] = train_stack(
                d_inner, StackConfig(seed=stack_seed,
                                     **{**stack_axes, "layers": deepest}))
        stack = stacks[group]
        if depth != stack.config.layers:
            stack = stack.truncate(depth) if depth else \
                train_stack(d_inner, StackConfig(layers=0))
        x_inner, x_val = _embed_tables(stack, d_inner, [d_val], embed_axes)
        clf_cfg = _classifier_config(
            clf_axes, metric, counter_seed(seed, "select",
                                           _fold_id(fold), position))
        params = train_classifier(x_inner, y_inner, x_val, y_val, clf_cfg)
        value = params.best_metric
        records.append({"position": position, "config": config,
                        "val": float(value)})
        if _improves(metric, value, best):
            best, best_pos = value, position
    return SelectionResult(configs[best_pos], best_pos, records)


def _fold_id(fold):
    # the smallest test index is unique per fold and stable across runs
    return min(fold.test)


# ---------------------------------------------------------------------------
# Model assessment

def _final_run(guard, fold, config, metric, seed, run):
    """Retrain the winning configuration on the whole outer training
    set, early-stopping on a fresh 10% holdout, and score the test."""
    stack_axes, embed_axes, clf_axes = split_axes(config)
    d_train = guard.take(fold.train, "final")
    d_test = guard.take(fold.test, "test")
    y_all = _labels_of(d_train, metric)

    stack = train_stack(d_train, StackConfig(
        seed=counter_seed(seed, "final", _fold_id(fold), run),
        **stack_axes))
    x_all, x_test = _embed_tables(stack, d_train, [d_test], embed_axes)

    hold_labels = y_all if metric != "mae" else np.zeros_like(y_all, int)
    fit, held = stratified_holdout(
        hold_labels, np.arange(len(fold.train)),
        counter_seed(seed, "holdout", _fold_id(fold), run), run)
    clf_cfg = _classifier_config(
        clf_axes, metric,
        counter_seed(seed, "final-clf", _fold_id(fold), run))
    params = train_classifier(x_all[fit], y_all[fit], x_all[held],
                              y_all[held], clf_cfg)
    y_test = _labels_of(d_test, metric)
    return float(score(predict(params, x_test), y_test, metric))


def assess_fold(d, fold, grid, metric, seed, R):
    """One outer fold end to end: selection, final runs, test scores."""
    guard = AccessGuard(d, fold.test)
    selection = model_selection(d, fold, grid, metric=metric, seed=seed,
                                guard=guard)
    touched = set(guard.reads("selection")) & guard.forbidden
    scores = [_final_run(guard, fold, selection.best, metric, seed, r)
              for r in range(R)]
    return {"test_indices": list(fold.test),
            "best": selection.best,
            "best_position": selection.position,
            "selection": selection.records,
            "final_scores": scores,
            "test_score": float(np.mean(scores)),
            "selection_test_reads": sorted(touched),
            "complete": True}


def _record_path(workdir, f):
    return os.path.join(workdir, f"fold_{f:02d}.json")


def model_assessment(d, grid, k, R, metric="accuracy", seed=0,
                     workdir=None, plan=None):
    """Full protocol over all outer folds, resumable per fold.

    With ``workdir`` every finished fold lands in its own JSON record
    and a rerun skips it; a fold that fails leaves a record marked
    incomplete before the error propagates.
    """
    if R < 1:
        raise ConfigError("need at least one final run")
    labels = _labels_of(d, metric)
    if plan is None:
        if metric == "mae":
            raise ConfigError("regression needs a precomputed split plan")
        plan = stratified_kfold(labels, k, seed)
    elif plan.num_folds != k:
        raise ConfigError(f"split plan has {plan.num_folds} folds, not {k}")
    if workdir is not None:
        os.makedirs(workdir, exist_ok=True)
    records = []
    for f, fold in enumerate(plan.folds):
        if workdir is not None and os.path.exists(_record_path(workdir, f)):
            with open(_record_path(workdir, f), encoding="utf-8") as fh:
                record = json.load(fh)
            if record.get("complete"):
                records.append(record)
                continue
        try:
            record = assess_fold(d, fold, grid, metric, seed, R)
        except Exception as exc:
            if workdir is not None:
                failed = {"complete": False, "error": str(exc)}
                with open(_record_path(workdir, f), "w",
                          encoding="utf-8") as fh:
                    json.dump(failed, fh, indent=2)
            raise
        if workdir is not None:
            with open(_record_path(workdir, f), "w", encoding="utf-8") as fh:
                json.dump(record, fh, indent=2)
                fh.write("\n")
        records.append(record)
    return build_report(records, grid, k, R, metric, seed)


def build_report(records, grid, k, R, metric, seed):
    """Reduce fold records; the mean is re-derivable from the records."""
    complete = [r for r in records if r.get("complete")]
    scores = [r["test_score"] for r in complete]
    report = {"metric": metric, "k": k, "final_runs": R, "seed": seed,
              "grid": grid.axes if isinstance(grid, Grid) else grid,
              "folds": records,
              "incomplete": len(complete) < k}
    if scores:
        report["mean"] = float(np.mean(scores))
        report["std"] = float(np.std(scores))
    return report


# ---------------------------------------------------------------------------
# Report rendering

def render_markdown(report):
    lines = ["# Assessment report",
             "",
             f"Metric: {report['metric']}, {report['k']} outer folds, "
             f"{report['final_runs']} final runs, seed {report['seed']}.",
             ""]
    if report.get("incomplete"):
        lines += ["**Incomplete: some folds are missing.**", ""]
    lines += ["| fold | test score | best configuration |",
              "| ---- | ---------- | ------------------ |"]
    for f, record in enumerate(report["folds"]):
        if not record.get("complete"):
            lines.append(f"| {f} | failed | {record.get('error', '')} |")
            continue
        best = json.dumps(record["best"], sort_keys=True)
        lines.append(f"| {f} | {record['test_score']:.4f} | {best} |")
    if "mean" in report:
        lines += ["", f"**{report['mean']:.4f} ± {report['std']:.4f}** "
                      f"({report['metric']})"]
    return "\n".join(lines) + "\n"


def render_csv(report):
    lines = ["fold,test_score,best_position,final_scores"]
    for f, record in enumerate(report["folds"]):
        if not record.get("complete"):
            lines.append(f"{f},,,")
            continue
        finals = ";".join(f"{s:.17g}" for s in record["final_scores"])
        lines.append(f"{f},{record['test_score']:.17g},"
                     f"{record['best_position']},{finals}")
    if "mean" in report:
        lines.append(f"mean,{report['mean']:.17g},,")
        lines.append(f"std,{report['std']:.17g},,")
    return "\n".join(lines) + "\n"
