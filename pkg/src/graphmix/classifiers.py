"""Classifiers and regressors trained on top of frozen graph embeddings.

Two architectures cover the downstream stage: multinomial logistic
regression and a one-hidden-layer rectifier network. Both minimize
cross-entropy (squared error for regression and indicator targets) with
an L2 penalty under adaptive-moment gradient descent, and early-stop on
a validation metric with plain patience. The embedding stage never sees
labels, so everything supervised lives here.
"""

import numpy as np
from dataclasses import dataclass, fields

from .errors import ConfigError, NumericalError
from .fileio import read_container, write_container
from .numerics import logsumexp, softmax
from .rng import derive

ARCHITECTURES = ("linear", "one-hidden")
METRICS = ("accuracy", "micro-f1", "mae")

# Fixed optimizer constants; only the learning rate is a search axis.
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_CLS_MAGIC = b"GCLS"
_CLS_VERSION = 1


@dataclass
class ClassifierConfig:
    """Training knobs for the downstream predictor."""

    architecture: str = "linear"
    hidden_units: int = 32
    learning_rate: float = 1e-3
    l2: float = 0.0
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    metric: str = "accuracy"
    seed: int = 0


def _check_config(config):
    if config.architecture not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture '{config.architecture}'; "
                          f"choose from {ARCHITECTURES}")
    if config.architecture == "one-hidden" and config.hidden_units < 1:
        raise ConfigError("one-hidden architecture needs hidden_units >= 1")
    if config.metric not in METRICS:
        raise ConfigError(f"unknown metric '{config.metric}'; "
                          f"choose from {METRICS}")
    if config.max_epochs < 1:
        raise ConfigError("max_epochs must be at least 1")
    if not 0 <= config.patience <= config.max_epochs:
        raise ConfigError(f"patience must lie in [0, max_epochs], got "
                          f"{config.patience} with max_epochs="
                          f"{config.max_epochs}")
    if config.learning_rate <= 0:
        raise ConfigError("learning_rate must be positive")
    if config.batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    if config.l2 < 0:
        raise ConfigError("l2 must be non-negative")


def _target_kind(y):
    y = np.asarray(y)
    if y.ndim == 2:
        return "indicator"
    if y.ndim == 1 and np.issubdtype(y.dtype, np.integer):
        return "classes"
    if y.ndim == 1:
        return "values"
    raise ConfigError(f"targets must be a vector or an indicator matrix, "
                      f"got shape {y.shape}")


# Metric compatibility: accuracy needs hard labels, MAE a numeric target,
# micro-F1 either labels or indicators.
_METRIC_KINDS = {"accuracy": ("classes",),
                 "micro-f1": ("classes", "indicator"),
                 "mae": ("values",)}


class ClassifierParams:
    """Weights, optimizer accumulators, and the best-validation snapshot.

    ``weights`` and ``biases`` are parallel lists, one entry per affine
    stage (one for linear, two for one-hidden). The snapshot holds the
    arrays from the epoch with the best validation metric and is what
    training restores before returning.
    """

    def __init__(self, weights, biases, num_features, num_outputs, output,
                 config):
        self.weights = weights
        self.biases = biases
        self.num_features = int(num_features)
        self.num_outputs = int(num_outputs)
        self.output = output  # "softmax" or "identity"
        self.config = config
        every = weights + biases
        self.moment1 = [np.zeros_like(a) for a in every]
        self.moment2 = [np.zeros_like(a) for a in every]
        self.step = 0
        self.epoch = 0
        self.snapshot_epoch = 0
        self.best_metric = None
        self.history = {"loss": [], "val": []}

    def arrays(self):
        return self.weights + self.biases

    def check(self):
        for a in self.arrays() + self.moment1 + self.moment2:
            if not np.all(np.isfinite(a)):
                raise NumericalError("classifier parameters are non-finite")
        if self.snapshot_epoch > self.epoch:
            raise NumericalError(f"snapshot epoch {self.snapshot_epoch} "
                                 f"exceeds trained epoch {self.epoch}")

    def copy(self):
        out = ClassifierParams([w.copy() for w in self.weights],
                               [b.copy() for b in self.biases],
                               self.num_features, self.num_outputs,
                               self.output, self.config)
        out.moment1 = [m.copy() for m in self.moment1]
        out.moment2 = [v.copy() for v in self.moment2]
        out.step = self.step
        out.epoch = self.epoch
        out.snapshot_epoch = self.snapshot_epoch
        out.best_metric = self.best_metric
        out.history = {k: list(v) for k, v in self.history.items()}
        return out


def init_classifier(config, num_features, num_outputs, output="softmax"):
    """Fresh parameters: zeros for linear, scaled normal for one-hidden.

    Zero initialization keeps the linear start state exactly uniform
    (every logit 0), which the first tests pin down; the hidden variant
    must break symmetry and draws from the seed-derived stream.
    """
    _check_config(config)
    D, O = int(num_features), int(num_outputs)
    if D < 1 or O < 1:
        raise ConfigError(f"need at least one feature and one output, "
                          f"got {D} and {O}")
    if config.architecture == "linear":
        weights = [np.zeros((D, O))]
        biases = [np.zeros(O)]
    else:
        h = config.hidden_units
        rng = derive(config.seed, "classifier", "init")
        weights = [rng.normal(0.0, np.sqrt(2.0 / D), (D, h)),
                   rng.normal(0.0, np.sqrt(2.0 / h), (h, O))]
        biases = [np.zeros(h), np.zeros(O)]
    return ClassifierParams(weights, biases, D, O, output, config)


def _forward(params, x):
    """Returns (logits, hidden pre-activation or None, hidden or None)."""
    if len(params.weights) == 1:
        return x @ params.weights[0] + params.biases[0], None, None
    pre = x @ params.weights[0] + params.biases[0]
    hidden = np.maximum(pre, 0.0)
    return hidden @ params.weights[1] + params.biases[1], pre, hidden


def loss_and_gradients(params, x, y):
    """Mean loss over the batch plus its gradient, snapshot-free.

    The gradient list is aligned with ``params.arrays()``. The L2 term
    covers weight matrices only, never biases.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    logits, pre, hidden = _forward(params, x)
    if params.output == "softmax":
        y = np.asarray(y)
        lse = logsumexp(logits, axis=1)
        loss = float(np.mean(lse - logits[np.arange(n), y]))
        dz = softmax(logits, axis=1)
        dz[np.arange(n), y] -= 1.0
        dz /= n
    else:
        target = np.asarray(y, dtype=np.float64).reshape(n, -1)
        resid = logits - target
        # Divergence shows up as inf here; the caller turns it into a
        # diagnostic, so the overflow itself is expected.
        with np.errstate(over="ignore"):
            loss = float(np.mean(resid ** 2))
        dz = 2.0 * resid / resid.size

    l2 = params.config.l2
    if l2 > 0:
        loss += 0.5 * l2 * sum(float(np.sum(w ** 2)) for w in params.weights)

    if len(params.weights) == 1:
        grads_w = [x.T @ dz]
        grads_b = [dz.sum(axis=0)]
    else:
        gw2 = hidden.T @ dz
        gb2 = dz.sum(axis=0)
        dh = dz @ params.weights[1].T
        dh[pre <= 0] = 0.0
        grads_w = [x.T @ dh, gw2]
        grads_b = [dh.sum(axis=0), gb2]
    if l2 > 0:
        grads_w = [g + l2 * w for g, w in zip(grads_w, params.weights)]
    return loss, grads_w + grads_b


def adam_step(params, grads):
    """One adaptive-moment update over every parameter array in place."""
    params.step += 1
    t = params.step
    lr = params.config.learning_rate
    for a, g, m, v in zip(params.arrays(), grads,
                          params.moment1, params.moment2):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g ** 2
        m_hat = m / (1.0 - ADAM_BETA1 ** t)
        v_hat = v / (1.0 - ADAM_BETA2 ** t)
        a -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def _better(metric, candidate, incumbent):
    if incumbent is None:
        return True
    if metric == "mae":
        return candidate < incumbent
    return candidate > incumbent


def train_classifier(x, y, x_val, y_val, config, params=None):
    """Minibatch training with a best-validation snapshot.

    Stops once the validation metric has gone ``patience`` consecutive
    epochs without strict improvement (patience 0 therefore stops after
    exactly one epoch) or the epoch budget runs out, whichever is first,
    and restores the snapshot before returning. Deterministic given the
    config seed.
    """
    _check_config(config)
    x = np.asarray(x, dtype=np.float64)
    x_val = np.asarray(x_val, dtype=np.float64)
    y = np.asarray(y)
    y_val = np.asarray(y_val)
    if x.ndim != 2 or x_val.ndim != 2:
        raise ConfigError("embeddings must be 2-D arrays")
    if x.shape[0] == 0:
        raise ConfigError("training set is empty")
    if x_val.shape[0] == 0:
        raise ConfigError("validation set is empty; early stopping "
                          "needs held-out samples")
    if x_val.shape[1] != x.shape[1]:
        raise ConfigError(f"validation width {x_val.shape[1]} does not "
                          f"match training width {x.shape[1]}")
    kind = _target_kind(y)
    if _target_kind(y_val) != kind:
        raise ConfigError("training and validation targets disagree in kind")
    if kind not in _METRIC_KINDS[config.metric]:
        raise ConfigError(f"metric '{config.metric}' does not apply to "
                          f"{kind} targets")

    if kind == "classes":
        if y.min() < 0 or y_val.min() < 0:
            raise ConfigError("class labels must be non-negative")
        num_outputs = int(max(y.max(), y_val.max())) + 1
        output = "softmax"
    elif kind == "indicator":
        if y.shape[1] != y_val.shape[1]:
            raise ConfigError("indicator targets differ in width")
        num_outputs = y.shape[1]
        output = "identity"
    else:
        num_outputs = 1
        output = "identity"

    if params is None:
        params = init_classifier(config, x.shape[1], num_outputs, output)
    elif params.num_features != x.shape[1]:
        raise ConfigError(f"warm-start parameters expect width "
                          f"{params.num_features}, embeddings are "
                          f"{x.shape[1]} wide")

    rng = derive(config.seed, "classifier", "shuffle")
    n = x.shape[0]
    batch = min(config.batch_size, n)
    snapshot = [a.copy() for a in params.arrays()]
    stall = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            rows = order[lo:lo + batch]
            loss, grads = loss_and_gradients(params, x[rows], y[rows])
            if not np.isfinite(loss):
                raise NumericalError(
                    f"loss became non-finite in epoch {epoch}; try a "
                    f"learning rate below {config.learning_rate:g}")
            adam_step(params, grads)
        params.epoch = epoch
        full_loss, _ = loss_and_gradients(params, x, y)
        val = score(predict(params, x_val), y_val, config.metric)
        params.history["loss"].append(full_loss)
        params.history["val"].append(val)
        if _better(config.metric, val, params.best_metric):
            params.best_metric = val
            params.snapshot_epoch = epoch
            snapshot = [a.copy() for a in params.arrays()]
            stall = 0
        else:
            stall += 1
        if stall >= config.patience:
            break
    for a, best in zip(params.arrays(), snapshot):
        a[...] = best
    params.check()
    return params


def predict(params, x):
    """Class probabilities (softmax head) or raw values (identity head)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError("embeddings must form a 2-D array")
    if x.shape[1] != params.num_features:
        raise ConfigError(f"embeddings are {x.shape[1]} wide, model "
                          f"expects {params.num_features}")
    logits, _, _ = _forward(params, x)
    if params.output == "softmax":
        return softmax(logits, axis=1)
    return logits if params.num_outputs > 1 else logits[:, 0]


def _indicator_rows(predictions, targets):
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if targets.ndim == 2:
        return predictions >= 0.5, targets >= 0.5
    labels = predictions.argmax(axis=1) if predictions.ndim == 2 \
        else predictions.astype(np.int64)
    width = int(max(labels.max(), targets.max())) + 1
    pred = np.zeros((labels.size, width), dtype=bool)
    true = np.zeros_like(pred)
    pred[np.arange(labels.size), labels] = True
    true[np.arange(labels.size), targets] = True
    return pred, true


def score(predictions, targets, metric):
    """Scalar quality of ``predictions`` against ``targets``."""
    if metric == "accuracy":
        predictions = np.asarray(predictions)
        labels = predictions.argmax(axis=1) if predictions.ndim == 2 \
            else predictions
        return float(np.mean(labels == np.asarray(targets)))
    if metric == "micro-f1":
        pred, true = _indicator_rows(predictions, targets)
        tp = float(np.sum(pred & true))
        fp = float(np.sum(pred & ~true))
        fn = float(np.sum(~pred & true))
        if tp == 0:
            return 0.0
        return 2 * tp / (2 * tp + fp + fn)
    if metric == "mae":
        return float(np.mean(np.abs(np.asarray(predictions, dtype=np.float64)
                                    - np.asarray(targets, dtype=np.float64))))
    raise ConfigError(f"unknown metric '{metric}'; choose from {METRICS}")


# ---------------------------------------------------------------------------
# Persistence

def save_classifier(params, path):
    """Checkpoint with optimizer state, resumable and inference-ready."""
    cfg = {f.name: getattr(params.config, f.name)
           for f in fields(params.config)}
    header = {"config": cfg, "output": params.output,
              "num_features": params.num_features,
              "num_outputs": params.num_outputs,
              "num_stages": len(params.weights),
              "step": params.step, "epoch": params.epoch,
              "snapshot_epoch": params.snapshot_epoch,
              "best_metric": params.best_metric}
    arrays = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    for i, (m, v) in enumerate(zip(params.moment1, params.moment2)):
        arrays[f"m{i}"] = m
        arrays[f"v{i}"] = v
    arrays["hist_loss"] = np.asarray(params.history["loss"])
    arrays["hist_val"] = np.asarray(params.history["val"])
    write_container(path, _CLS_MAGIC, _CLS_VERSION, header, arrays)


def load_classifier(path):
    header, arrays = read_container(path, _CLS_MAGIC, _CLS_VERSION)
    config = ClassifierConfig(**header["config"])
    stages = header["num_stages"]
    params = ClassifierParams([arrays[f"w{i}"] for i in range(stages)],
                              [arrays[f"b{i}"] for i in range(stages)],
                              header["num_features"], header["num_outputs"],
                              header["output"], config)
    params.moment1 = [arrays[f"m{i}"] for i in range(2 * stages)]
    params.moment2 = [arrays[f"v{i}"] for i in range(2 * stages)]
    params.step = header["step"]
    params.epoch = header["epoch"]
    params.snapshot_epoch = header["snapshot_epoch"]
    params.best_metric = header["best_metric"]
    params.history = {"loss": list(arrays["hist_loss"]),
                      "val": list(arrays["hist_val"])}
    params.check()
    return params


def export_predictions(predictions, path, ids=None):
    """Prediction CSV: one row per sample, exact decimal floats."""
    predictions = np.asarray(predictions)
    n = predictions.shape[0]
    ids = np.arange(n) if ids is None else np.asarray(ids)
    if ids.shape[0] != n:
        raise ConfigError(f"{ids.shape[0]} ids for {n} predictions")
    with open(path, "w", encoding="utf-8") as fh:
        if predictions.ndim == 2:
            width = predictions.shape[1]
            cols = ",".join(f"p_{j}" for j in range(width))
            fh.write(f"graph_id,label,{cols}\n")
            labels = predictions.argmax(axis=1)
            for i in range(n):
                row = ",".join("%.17g" % v for v in predictions[i])
                fh.write(f"{ids[i]},{labels[i]},{row}\n")
        else:
            fh.write("graph_id,value\n")
            for i in range(n):
                fh.write(f"{ids[i]},%.17g\n" % predictions[i])
