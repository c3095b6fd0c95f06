"""Incremental construction of frozen layer stacks.

One function trains any of the supported encoders layer by layer,
freezing each posterior before the next layer starts. Per-layer seeds
derive from the experiment seed and the layer index alone, so training
a depth-L stack and then truncating it to L' is bitwise identical to
having trained a depth-L' stack: the shallow layers never see the deep
ones. A depth of zero yields the structure-agnostic identity encoder
whose unigram is a plain bag of vertex features.
"""

import json
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .cgmm import (CgmmConfig, infer_layer, load_params, save_params,
                   train_layer)
from .ecgmm import (EcgmmConfig, infer_edge_posteriors,
                    infer_vertex_posteriors, load_ecgmm_params,
                    save_ecgmm_params, train_ecgmm_layer)
from .errors import ConfigError, FormatError
from .icgmm import (EmissionPrior, IcgmmConfig, infer_icgmm, load_state,
                    make_view, save_state, train_icgmm_layer)
from .rng import derive
from .statistics import FrozenPosterior, compute_statistics

MODELS = ("cgmm", "ecgmm", "icgmm", "icgmm-fast")
LAYER_SCOPES = ("previous", "all")

_MANIFEST = "stack.json"


@dataclass
class StackConfig:
    """Shared and model-specific knobs of one stack run.

    Only the axes matching ``model`` are read; the command layer is
    responsible for rejecting configurations that set foreign axes.
    """

    model: str = "cgmm"
    layers: int = 1
    seed: int = 0
    mode: str = "continuous"
    layer_scope: str = "previous"
    # finite-mixture axes
    C: int = 10
    C_E: int = 4
    emission: str = "categorical"
    arc_source: str = "auto"
    epochs: int = 10
    threshold: float | None = None
    init: str = "dirichlet"
    # nonparametric axes
    sweeps: int = 20
    alpha0: float = 1.0
    gamma: float = 1.0
    auto: bool = False
    prior: EmissionPrior | None = None
    init_states: int = 0
    burn_in: int = 0
    thin: int = 1


def _check_stack_config(config):
    if config.model not in MODELS:
        raise ConfigError(f"unknown model '{config.model}'; "
                          f"choose from {MODELS}")
    if config.layers < 0:
        raise ConfigError("layers must be non-negative")
    if config.mode not in ("continuous", "one_hot"):
        raise ConfigError(f"unknown posterior mode '{config.mode}'")
    if config.layer_scope not in LAYER_SCOPES:
        raise ConfigError(f"unknown layer scope '{config.layer_scope}'")
    if config.layer_scope == "all" and config.model != "cgmm":
        raise ConfigError("only the single-network model supports "
                          "conditioning on all previous layers")
    if config.C < 1 or config.C_E < 1:
        raise ConfigError("state counts must be at least 1")


def layer_seed(seed, layer):
    """Stable per-layer seed; depends on nothing but (seed, layer)."""
    return int(derive(seed, "stack", layer).integers(0, 2 ** 32))


def identity_posterior(d):
    """Indicator rows of the raw vertex symbols, the zero-layer encoder."""
    K = d.vertex_alphabet_size
    if K == 0:
        raise ConfigError("the identity encoder needs discrete vertex "
                          "features")
    rows = np.zeros((d.total_vertices, K))
    rows[np.arange(d.total_vertices), d.features_concat()] = 1.0
    return FrozenPosterior(0, rows, "one_hot")


class LayerStack:
    """Trained per-layer parameters plus their frozen posteriors.

    ``frozen`` holds the vertex posteriors used for embeddings and for
    conditioning deeper layers; ``frozen_arcs`` is populated by the
    edge-aware model only. A zero-layer stack has no parameters and a
    single identity pseudo-posterior.
    """

    def __init__(self, config):
        self.config = config
        self.model = config.model
        self.params = []
        self.frozen = []
        self.frozen_arcs = []

    @property
    def num_layers(self):
        return len(self.params)

    def state_counts(self):
        return [f.width for f in self.frozen]

    def truncate(self, depth):
        """First ``depth`` layers as a stack of their own."""
        if not 1 <= depth <= self.num_layers:
            raise ConfigError(f"cannot truncate a {self.num_layers}-layer "
                              f"stack to depth {depth}")
        out = LayerStack(replace(self.config, layers=depth))
        out.params = self.params[:depth]
        out.frozen = self.frozen[:depth]
        out.frozen_arcs = self.frozen_arcs[:depth]
        return out


def config_record(config):
    """JSON-safe dictionary capturing every axis of the stack config."""
    record = asdict(config)
    record["prior"] = None if config.prior is None \
        else config.prior.as_header()
    return record


def record_to_config(record):
    record = dict(record)
    if record.get("prior") is not None:
        record["prior"] = EmissionPrior.from_header(record["prior"])
    return StackConfig(**record)


def _layer_paths(directory, model, layer):
    stem = os.path.join(directory, f"layer_{layer:02d}")
    paths = [stem + ".params", stem + ".vertex.post"]
    if model == "ecgmm":
        paths.append(stem + ".arc.post")
    return paths


def _load_layer(stack, paths):
    if stack.model == "cgmm":
        stack.params.append(load_params(paths[0]))
    elif stack.model == "ecgmm":
        stack.params.append(load_ecgmm_params(paths[0]))
        stack.frozen_arcs.append(FrozenPosterior.load(paths[2]))
    else:
        stack.params.append(load_state(paths[0]))
    stack.frozen.append(FrozenPosterior.load(paths[1]))


def _save_layer(stack, paths):
    if stack.model == "cgmm":
        save_params(stack.params[-1], paths[0])
    elif stack.model == "ecgmm":
        save_ecgmm_params(stack.params[-1], paths[0])
        stack.frozen_arcs[-1].save(paths[2])
    else:
        save_state(stack.params[-1], paths[0])
    stack.frozen[-1].save(paths[1])


def _cgmm_subset(config, layer):
    if layer == 0:
        return ()
    if config.layer_scope == "previous":
        return (layer - 1,)
    return tuple(range(layer))


def _train_one_layer(d, config, layer, stack):
    if config.model == "cgmm":
        sub = _cgmm_subset(config, layer)
        stats = compute_statistics(d, stack.frozen, sub) if sub else None
        cfg = CgmmConfig(C=config.C, layer_subset=sub,
                         emission=config.emission, epochs=config.epochs,
                         threshold=config.threshold,
                         seed=layer_seed(config.seed, layer),
                         init=config.init)
        params = train_layer(d, stats, cfg)
        params.layer_index = layer
        stack.params.append(params)
        stack.frozen.append(infer_layer(d, params, stats, mode=config.mode,
                                        layer=layer))
    elif config.model == "ecgmm":
        prev_v = stack.frozen[-1] if layer else None
        prev_e = stack.frozen_arcs[-1] if layer else None
        cfg = EcgmmConfig(C_V=config.C, C_E=config.C_E,
                          vertex_emission=config.emission,
                          arc_source=config.arc_source,
                          epochs=config.epochs, threshold=config.threshold,
                          seed=layer_seed(config.seed, layer),
                          init=config.init)
        params = train_ecgmm_layer(d, prev_v, prev_e, cfg)
        stack.params.append(params)
        stack.frozen.append(infer_vertex_posteriors(
            d, params, prev_v, prev_e, mode=config.mode))
        stack.frozen_arcs.append(infer_edge_posteriors(
            d, params, prev_v, mode=config.mode))
    else:
        prev = stack.frozen[-1] if layer else None
        cfg = IcgmmConfig(sweeps=config.sweeps, seed=config.seed,
                          alpha0=config.alpha0, gamma=config.gamma,
                          auto=config.auto,
                          mode="fast" if config.model == "icgmm-fast"
                          else "exact",
                          prior=config.prior,
                          init_states=config.init_states,
                          burn_in=config.burn_in, thin=config.thin,
                          export=config.mode)
        state, q = train_icgmm_layer(d, prev, cfg)
        stack.params.append(state)
        stack.frozen.append(q)


def train_stack(d, config, checkpoint_dir=None):
    """Train ``config.layers`` layers bottom-up, freezing each in turn.

    With ``checkpoint_dir`` every completed layer is written out and a
    rerun resumes after the last complete layer; the resumed run equals
    an uninterrupted one bitwise, because each layer's randomness is
    derived from the experiment seed and layer index only. A manifest
    pins the configuration; resuming under a different one is refused.
    """
    _check_stack_config(config)
    stack = LayerStack(config)
    if config.layers == 0:
        stack.frozen.append(identity_posterior(d))
        return stack
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        manifest = os.path.join(checkpoint_dir, _MANIFEST)
        record = config_record(config)
        if os.path.exists(manifest):
            with open(manifest, encoding="utf-8") as fh:
                stored = json.load(fh)
            if stored != record:
                raise ConfigError(f"{manifest} was written by a different "
                                  f"configuration; refusing to resume")
        else:
            with open(manifest, "w", encoding="utf-8") as fh:
                json.dump(record, fh, indent=2, sort_keys=True)
                fh.write("\n")
    for layer in range(config.layers):
        if checkpoint_dir is not None:
            paths = _layer_paths(checkpoint_dir, config.model, layer)
            if all(os.path.exists(p) for p in paths):
                _load_layer(stack, paths)
                continue
            _train_one_layer(d, config, layer, stack)
            _save_layer(stack, paths)
        else:
            _train_one_layer(d, config, layer, stack)
    return stack


def load_stack(checkpoint_dir):
    """Rebuild a fully trained stack from its checkpoint directory."""
    manifest = os.path.join(checkpoint_dir, _MANIFEST)
    try:
        with open(manifest, encoding="utf-8") as fh:
            record = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"{checkpoint_dir}: no stack manifest") from None
    config = record_to_config(record)
    stack = LayerStack(config)
    for layer in range(config.layers):
        paths = _layer_paths(checkpoint_dir, config.model, layer)
        if not all(os.path.exists(p) for p in paths):
            raise FormatError(f"{checkpoint_dir}: layer {layer} is "
                              f"incomplete")
        _load_layer(stack, paths)
    return stack


def transform(stack, d):
    """Frozen posteriors of unseen graphs under an already trained stack.

    Returns ``(vertex_layers, arc_layers)`` shaped like the stack's own
    lists. Nothing is re-estimated; each layer only runs inference.
    """
    config = stack.config
    if stack.num_layers == 0:
        return [identity_posterior(d)], []
    vertex, arcs = [], []
    if stack.model == "cgmm":
        for layer, params in enumerate(stack.params):
            sub = params.layer_subset
            stats = compute_statistics(d, vertex, sub) if sub else None
            vertex.append(infer_layer(d, params, stats, mode=config.mode,
                                      layer=layer))
    elif stack.model == "ecgmm":
        prev_v = prev_e = None
        for params in stack.params:
            fv = infer_vertex_posteriors(d, params, prev_v, prev_e,
                                         mode=config.mode)
            fe = infer_edge_posteriors(d, params, prev_v, mode=config.mode)
            vertex.append(fv)
            arcs.append(fe)
            prev_v, prev_e = fv, fe
    else:
        prev = None
        for state in stack.params:
            view = make_view(d, prev)
            prev = infer_icgmm(view, state, mode=config.mode)
            vertex.append(prev)
    return vertex, arcs
