"""Edge-aware layer: a second mixture network over arc features.

Arc generation gets its own latent state with ``C_E`` values. Its
context is the pair of endpoint posteriors frozen at the previous
layer, chosen by a two-way switching parent (source endpoint or
destination endpoint); on data that was undirected at load time that
choice is pinned uniform. The inferred arc posteriors then serve as
soft pseudo-labels for the vertex network of the next layer: instead
of grouping neighbors by a stored edge label, pseudo-label ``a``
weights neighbor ``v`` by its share ``q_uv(a) / sum_v' q_uv'(a)`` of
the label's total mass. The grouping therefore changes from layer to
layer, even when every arc carries the same constant feature.

Both networks of a layer are independent given the frozen inputs, and
each trains by the exact EM of :mod:`graphmix.cgmm`.
"""

from dataclasses import dataclass

import numpy as np

from .cgmm import (
    CgmmConfig,
    _PARAM_MAGIC,
    _PARAM_VERSION,
    _pack_params,
    _unpack_params,
    infer_layer,
    init_layer,
    train_layer,
)
from .errors import ConfigError, FormatError, IntegrityError
from .fileio import read_container, write_container
from .graphs import Dataset, Graph
from .rng import seed_sequence
from .statistics import LayerStatistics

SOURCE, DEST = 0, 1  # endpoint ids of the arc switching parent


@dataclass
class EcgmmConfig:
    """Training knobs shared by the two networks of one layer."""

    C_V: int
    C_E: int
    vertex_emission: str = "categorical"
    arc_source: str = "auto"  # auto | continuous | label | constant
    epochs: int = 10
    threshold: float | None = None
    seed: int = 0
    init: str = "dirichlet"
    batch_graphs: int | None = None
    sigma_floor_frac: float = 1e-3


class EcgmmLayerParams:
    """Trained vertex and edge networks of one layer.

    ``arc_source`` records which arc observable the edge network was
    fitted on ("continuous", "label" or "constant") so inference reads
    the same one; ``arc_alphabet`` is its symbol count (0 when
    continuous).
    """

    def __init__(self, vertex_component, edge_component, arc_source,
                 arc_alphabet, layer_index=None):
        self.vertex_component = vertex_component
        self.edge_component = edge_component
        self.arc_source = str(arc_source)
        self.arc_alphabet = int(arc_alphabet)
        self.layer_index = layer_index
        self.validate()

    @property
    def C_V(self):
        return self.vertex_component.C

    @property
    def C_E(self):
        return self.edge_component.C

    def validate(self):
        self.vertex_component.validate()
        self.edge_component.validate()
        if self.arc_source not in ("continuous", "label", "constant"):
            raise IntegrityError(f"unknown arc source {self.arc_source!r}")
        if not self.edge_component.is_root:
            if self.edge_component.num_labels != 2:
                raise IntegrityError("edge network must switch over the two endpoints")


def resolve_arc_features(d, arc_source="auto"):
    """Pick the arc observable: (values, emission kind, alphabet size).

    ``auto`` prefers the continuous per-arc feature when every graph
    carries one, then stored discrete labels when the alphabet is
    informative. Data with neither needs the explicit ``constant``
    source, which models a dummy single-symbol feature so that arc
    states are driven purely by endpoint context.
    """
    if d.total_arcs == 0:
        raise ConfigError("no arcs to model")
    has_continuous = all(g.arc_feature is not None for g in d.graphs
                         if g.num_arcs > 0)
    real_labels = d.edge_alphabet_size - (1 if d.bottom else 0)
    if arc_source == "auto":
        if has_continuous:
            arc_source = "continuous"
        elif real_labels >= 2:
            arc_source = "label"
        else:
            raise ConfigError(
                "dataset has no arc features; set arc_source='constant' "
                "to model a dummy one")
    if arc_source == "continuous":
        if not has_continuous:
            raise ConfigError("continuous arc features missing from some graph")
        values = np.concatenate([
            g.arc_feature if g.arc_feature is not None else np.zeros(0)
            for g in d.graphs])
        return values, "gaussian", 0
    if arc_source == "label":
        if real_labels < 1:
            raise ConfigError("dataset stores no real edge labels")
        values = np.concatenate([g.arcs[:, 2] for g in d.graphs])
        return values, "categorical", real_labels
    if arc_source == "constant":
        return np.zeros(d.total_arcs, dtype=np.int64), "categorical", 1
    raise ConfigError(f"unknown arc source {arc_source!r}")


def _arc_dataset(d, values, kind, K):
    """Arcs recast as featureless vertices, one graph per source graph."""
    graphs = []
    offsets = d.arc_offsets
    for gi, g in enumerate(d.graphs):
        feats = values[offsets[gi]:offsets[gi + 1]]
        graphs.append(Graph(g.num_arcs, np.zeros((0, 3), dtype=np.int64), feats))
    return Dataset(graphs, K if kind == "categorical" else 0, 1)


def endpoint_statistics(d, frozen_vertex):
    """Per-arc context: the frozen posteriors of both endpoints.

    Returned as two-label statistics over the arc dataset, so the edge
    network can reuse the vertex machinery unchanged. Both labels are
    always present (every arc has both endpoints).
    """
    layer = frozen_vertex.layer
    rows = frozen_vertex.values
    offsets = d.offsets
    src, dst = [], []
    for gi, g in enumerate(d.graphs):
        base = offsets[gi]
        src.append(rows[base + g.arcs[:, 0]])
        dst.append(rows[base + g.arcs[:, 1]])
    macro = np.stack([np.concatenate(src), np.concatenate(dst)], axis=1)
    return LayerStatistics((layer,), {layer: macro},
                           np.ones(macro.shape[:2]), 2)


def dynamic_statistics(d, frozen_vertex, frozen_edge):
    """Soft neighbor grouping by the previous layer's arc posteriors.

    For pseudo-label ``a``, the macro-state of vertex ``u`` is the
    average of its in-neighbors' frozen posteriors weighted by each
    in-arc's posterior mass on ``a``; the count channel carries the
    total mass, so a pseudo-label with none contributes nothing and the
    switching parent renormalizes over the rest.
    """
    if frozen_edge.values.shape[0] != d.total_arcs:
        raise IntegrityError("arc posterior row count does not match the dataset")
    layer = frozen_vertex.layer
    C_V = frozen_vertex.values.shape[1]
    C_E = frozen_edge.values.shape[1]
    N = d.total_vertices
    acc = np.zeros((N, C_E, C_V))
    mass = np.zeros((N, C_E))
    offsets, aoffsets = d.offsets, d.arc_offsets
    for gi, g in enumerate(d.graphs):
        if g.num_arcs == 0:
            continue
        base = offsets[gi]
        w = frozen_edge.values[aoffsets[gi]:aoffsets[gi + 1]]  # (m, C_E)
        q_src = frozen_vertex.values[base + g.arcs[:, 0]]  # (m, C_V)
        dst = base + g.arcs[:, 1]
        np.add.at(acc, dst, w[:, :, None] * q_src[:, None, :])
        np.add.at(mass, dst, w)
    macro = np.zeros_like(acc)
    nz = mass > 0
    macro[nz] = acc[nz] / mass[nz][:, None]
    return LayerStatistics((layer,), {layer: macro}, mass, C_E)


def _edge_seed(seed):
    # separate stream so the edge draws never shift the vertex draws
    return int(seed_sequence(seed, "edge").generate_state(1)[0])


def train_ecgmm_layer(d, frozen_vertex, frozen_edge, config):
    """EM on the two independent networks of one layer.

    At the root layer (no frozen inputs) both are plain mixtures. Deeper
    layers condition the edge network on endpoint posteriors and the
    vertex network on the dynamic grouping. Per-network likelihood
    trajectories are in the components' ``history``.
    """
    if (frozen_vertex is None) != (frozen_edge is None):
        raise ConfigError("need both frozen posteriors or neither")
    values, kind, K = resolve_arc_features(d, config.arc_source)
    arc_d = _arc_dataset(d, values, kind, K)
    layer = 0 if frozen_vertex is None else frozen_vertex.layer + 1

    edge_cfg = CgmmConfig(
        C=config.C_E, emission=kind, epochs=config.epochs,
        threshold=config.threshold, seed=_edge_seed(config.seed),
        init=config.init, batch_graphs=config.batch_graphs,
        sigma_floor_frac=config.sigma_floor_frac)
    if layer == 0:
        edge_params = train_layer(arc_d, None, edge_cfg)
    else:
        estats = endpoint_statistics(d, frozen_vertex)
        edge_params = init_layer(
            config.C_E, (layer - 1,), 2, kind, edge_cfg.seed, config.init,
            K=K or None, data=values if kind == "gaussian" else None,
            source_widths={layer - 1: frozen_vertex.values.shape[1]},
            sigma_floor_frac=config.sigma_floor_frac)
        if d.undirected_source:
            edge_params.sp_edge = np.full((1, 2), 0.5)
            edge_params.fixed_sp_edge = True
        edge_cfg.layer_subset = (layer - 1,)
        edge_params = train_layer(arc_d, estats, edge_cfg, edge_params)
    edge_params.layer_index = layer

    vertex_cfg = CgmmConfig(
        C=config.C_V, emission=config.vertex_emission, epochs=config.epochs,
        threshold=config.threshold, seed=config.seed, init=config.init,
        batch_graphs=config.batch_graphs,
        sigma_floor_frac=config.sigma_floor_frac)
    if layer == 0:
        vertex_params = train_layer(d, None, vertex_cfg)
    else:
        vstats = dynamic_statistics(d, frozen_vertex, frozen_edge)
        # same init path as the single-network model, so that a
        # degenerate edge setup reproduces it exactly
        vertex_params = init_layer(
            config.C_V, (layer - 1,), frozen_edge.values.shape[1],
            config.vertex_emission, config.seed, config.init,
            K=d.vertex_alphabet_size or None,
            data=d.features_concat() if config.vertex_emission == "gaussian" else None,
            source_widths={layer - 1: frozen_vertex.values.shape[1]},
            sigma_floor_frac=config.sigma_floor_frac)
        vertex_cfg.layer_subset = (layer - 1,)
        vertex_params = train_layer(d, vstats, vertex_cfg, vertex_params)
    vertex_params.layer_index = layer

    return EcgmmLayerParams(vertex_params, edge_params, kind_to_source(kind, K),
                            K, layer_index=layer)


def kind_to_source(kind, K):
    if kind == "gaussian":
        return "continuous"
    return "constant" if K == 1 else "label"


def infer_edge_posteriors(d, params, frozen_vertex, mode="continuous"):
    """Normalized arc-state posterior of every arc, in arc order."""
    values, kind, K = resolve_arc_features(d, params.arc_source)
    if kind == "categorical" and K != params.arc_alphabet:
        raise ConfigError("arc label alphabet differs from the trained one")
    arc_d = _arc_dataset(d, values, kind, K)
    edge = params.edge_component
    stats = None if edge.is_root else endpoint_statistics(d, frozen_vertex)
    return infer_layer(arc_d, edge, stats, mode=mode,
                       layer=params.layer_index)


def infer_vertex_posteriors(d, params, frozen_vertex=None, frozen_edge=None,
                            mode="continuous"):
    """Frozen vertex posterior under the trained vertex network."""
    vertex = params.vertex_component
    if vertex.is_root:
        stats = None
    else:
        stats = dynamic_statistics(d, frozen_vertex, frozen_edge)
    return infer_layer(d, vertex, stats, mode=mode, layer=params.layer_index)


def edge_context_distribution(edge_params, q_u, q_v):
    """Arc state distribution from endpoint posteriors alone.

    The inference path for vertex pairs with no stored arc: the emission
    term is absent, leaving the switching-parent mixture of the two
    endpoint transitions (the plain mixing weights at the root layer).
    """
    if edge_params.is_root:
        return edge_params.prior.copy()
    layer = edge_params.layer_subset[0]
    T = edge_params.transition[layer]  # (2, C_E, C_V)
    sp = edge_params.sp_edge[0]
    return sp[SOURCE] * (T[SOURCE] @ np.asarray(q_u)) \
        + sp[DEST] * (T[DEST] @ np.asarray(q_v))


def edge_link_embedding(g, arc_posteriors, u, v, context_fn=None):
    """Link representation of the vertex pair ``(u, v)`` of one graph.

    ``arc_posteriors`` is a sequence over layers, each entry the
    ``(num_arcs, C_E)`` posterior block of ``g`` at that layer. Per
    layer the two directed posteriors are averaged (parallel arcs first
    average among themselves); a direction with no stored arc is filled
    by ``context_fn(layer_pos, u, v)``, the on-demand inference path.
    """
    fwd = (g.arcs[:, 0] == u) & (g.arcs[:, 1] == v)
    rev = (g.arcs[:, 0] == v) & (g.arcs[:, 1] == u)
    blocks = []
    for t, post in enumerate(arc_posteriors):
        sides = []
        for mask in (fwd, rev):
            if mask.any():
                sides.append(post[mask].mean(axis=0))
            elif context_fn is not None:
                sides.append(np.asarray(context_fn(t, u, v)))
            else:
                raise ConfigError(
                    f"no stored arc between {u} and {v} and no on-demand path")
        blocks.append(0.5 * (sides[0] + sides[1]))
    return np.concatenate(blocks)


def vertex_link_embedding(h_u, h_v):
    """Fallback link representation from two vertex embeddings."""
    return 0.5 * (np.asarray(h_u) + np.asarray(h_v))


# ---------------------------------------------------------------------------
# Persistence: same container as single-network layers, two tagged components


def save_ecgmm_params(params, path):
    vh, va = _pack_params(params.vertex_component, "vertex/")
    eh, ea = _pack_params(params.edge_component, "edge/")
    header = {
        "components": {"vertex": vh, "edge": eh},
        "arc_source": params.arc_source,
        "arc_alphabet": params.arc_alphabet,
        "layer_index": params.layer_index,
    }
    write_container(path, _PARAM_MAGIC, _PARAM_VERSION, header, {**va, **ea})


def load_ecgmm_params(path):
    header, arrays = read_container(path, _PARAM_MAGIC, _PARAM_VERSION)
    if "components" not in header:
        raise FormatError(f"{path}: single-component layer file")
    vertex = _unpack_params(header["components"]["vertex"], arrays, "vertex/")
    edge = _unpack_params(header["components"]["edge"], arrays, "edge/")
    return EcgmmLayerParams(vertex, edge, header["arc_source"],
                            header["arc_alphabet"], header["layer_index"])
