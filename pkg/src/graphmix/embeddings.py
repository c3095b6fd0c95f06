"""Vertex and graph embeddings over a trained layer stack.

A vertex keeps one block per layer: the exported posterior row itself
(unigram, width C of that layer), the flattened neighbor co-occurrence
``outer(q_u, sum of neighbor rows)`` (bigram, width C squared), or both
side by side (unibigram). Graph embeddings aggregate vertex blocks per
layer with sum or mean and concatenate across layers; a model with arc
posteriors additionally aggregates those per layer, each layer's vector
being the vertex part followed by the arc part.

Aggregation is canonical: every column is summed in ascending value
order, so the result depends on the multiset of values alone and any
vertex relabeling or arc reordering reproduces the identical floats.
The neighbor sums inside bigram rows follow the same rule.

Embedding files come in two formats, both with a ``<path>.meta.json``
sidecar. CSV holds ``graph_id,dim_0,...`` rows at 17 significant
digits, which restores the exact doubles; the binary container is
bit-exact by construction. The sidecar (and the binary header) records
the metadata schema consumers rely on: ``model``, ``kind``,
``aggregation``, ``posterior_mode``, ``neighbors``, ``seed``,
``num_graphs``, ``vertex_dims`` and ``arc_dims`` (per-layer block
widths, in vector order), ``width`` (their total) and the free-form
``config`` of the producing run. Widths may differ across layers, so
consumers must read the dims instead of assuming a uniform state count.
"""

import json

import numpy as np

from .errors import ConfigError, FormatError, ParseError
from .fileio import read_container, write_container

KINDS = ("unigram", "bigram", "unibigram")
AGGREGATIONS = ("sum", "mean")
NEIGHBOR_SIDES = ("in", "out")

_EMB_MAGIC = b"GEMB"
_EMB_VERSION = 1


def canonical_total(rows, aggregation="sum"):
    """Permutation-invariant column aggregate of a row block."""
    rows = np.asarray(rows, dtype=np.float64)
    total = np.sort(rows, axis=0).sum(axis=0)
    return total / rows.shape[0] if aggregation == "mean" else total


def bigram_rows(g, q_rows, neighbors="in"):
    """Neighbor co-occurrence block of one graph, one row per vertex.

    Row u flattens ``outer(q_u, S_u)`` where ``S_u`` sums the posterior
    rows of u's neighbors on the chosen side; vertices without any stay
    zero. Dummy bottom neighbors are bookkeeping, never stored arcs, so
    they take no part here.
    """
    if neighbors not in NEIGHBOR_SIDES:
        raise ConfigError(f"unknown neighbor side {neighbors!r}")
    q_rows = np.asarray(q_rows, dtype=np.float64)
    num, C = q_rows.shape
    out = np.zeros((num, C * C))
    arcs = g.arcs if neighbors == "in" else g.arcs[:, [1, 0, 2]]
    if not arcs.shape[0]:
        return out
    order = np.argsort(arcs[:, 1], kind="stable")
    tgt, src = arcs[order, 1], arcs[order, 0]
    lo = np.searchsorted(tgt, np.arange(num), side="left")
    hi = np.searchsorted(tgt, np.arange(num), side="right")
    for u in range(num):
        if lo[u] == hi[u]:
            continue
        total = np.sort(q_rows[src[lo[u]:hi[u]]], axis=0).sum(axis=0)
        out[u] = np.outer(q_rows[u], total).ravel()
    return out


class VertexEmbedding:
    """Per-layer representation blocks of one graph's vertices."""

    __slots__ = ("blocks", "kind")

    def __init__(self, blocks, kind):
        if kind not in KINDS:
            raise ConfigError(f"unknown embedding kind {kind!r}")
        blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
        if not blocks:
            raise ConfigError("at least one layer block required")
        num = blocks[0].shape[0]
        if any(b.ndim != 2 or b.shape[0] != num for b in blocks):
            raise ConfigError("layer blocks must share the vertex count")
        self.blocks = blocks
        self.kind = kind

    @property
    def num_vertices(self):
        return self.blocks[0].shape[0]

    @property
    def widths(self):
        return [b.shape[1] for b in self.blocks]

    def concat(self):
        return np.concatenate(self.blocks, axis=1)


def build_vertex_embeddings(d, gi, layers, kind="unigram", neighbors="in"):
    """Assemble one graph's per-layer vertex blocks.

    ``layers`` are the stack's exported posteriors in depth order, all
    sharing one posterior mode; their widths are free to differ. The
    bigram of each layer correlates that same layer's rows with its
    neighbors' rows.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown embedding kind {kind!r}")
    if not layers:
        raise ConfigError("no trained layers to embed from")
    modes = {frozen.mode for frozen in layers}
    if len(modes) > 1:
        raise ConfigError("layers mix posterior modes "
                          f"{sorted(modes)}; pick one for the whole stack")
    g = d.graphs[gi]
    blocks = []
    for frozen in layers:
        q = frozen.for_graph(d, gi)
        if kind == "unigram":
            blocks.append(q)
            continue
        big = bigram_rows(g, q, neighbors=neighbors)
        blocks.append(big if kind == "bigram"
                      else np.concatenate([q, big], axis=1))
    return VertexEmbedding(blocks, kind)


def build_graph_embedding(vemb, aggregation="sum"):
    """Collapse one graph's vertex blocks into a single vector."""
    if aggregation not in AGGREGATIONS:
        raise ConfigError(f"unknown aggregation {aggregation!r}")
    if vemb.num_vertices == 0:
        raise ConfigError("empty graph has no vertex blocks to aggregate")
    return np.concatenate([canonical_total(b, aggregation)
                           for b in vemb.blocks])


class GraphEmbedding:
    """Embedding matrix of a graph collection plus its provenance.

    ``vectors`` holds one row per graph; ``metadata`` follows the
    module-level schema and must account for every coordinate.
    """

    def __init__(self, vectors, aggregation, metadata):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ConfigError("embedding vectors must form a 2-d matrix")
        if aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {aggregation!r}")
        metadata = dict(metadata)
        vdims = [int(w) for w in metadata.get("vertex_dims", [])]
        adims = [int(w) for w in metadata.get("arc_dims", [])]
        width = int(metadata.get("width", vectors.shape[1]))
        if width != vectors.shape[1] or sum(vdims) + sum(adims) != width:
            raise ConfigError(
                f"metadata declares width {width} with blocks "
                f"{vdims}+{adims}, vectors are {vectors.shape[1]} wide")
        metadata.update(width=width, vertex_dims=vdims, arc_dims=adims,
                        aggregation=aggregation)
        self.vectors = vectors
        self.aggregation = aggregation
        self.metadata = metadata

    @property
    def num_graphs(self):
        return self.vectors.shape[0]

    @property
    def width(self):
        return self.vectors.shape[1]


def embed_dataset(d, layers, kind="unigram", aggregation="sum",
                  neighbors="in", arc_layers=None, model="cgmm",
                  seed=None, config=None):
    """Embed every graph of a dataset over a trained stack.

    ``arc_layers``, when given, holds one arc posterior per layer; each
    layer's arc rows aggregate separately and follow that layer's
    vertex part in the vector. Arcless graphs contribute zeros there.
    """
    if arc_layers is not None and len(arc_layers) != len(layers):
        raise ConfigError("need exactly one arc posterior per layer")
    rows = []
    vertex_dims = arc_dims = None
    for gi in range(len(d.graphs)):
        vemb = build_vertex_embeddings(d, gi, layers, kind, neighbors)
        parts = [canonical_total(b, aggregation) for b in vemb.blocks]
        if vertex_dims is None:
            vertex_dims = vemb.widths
        if arc_layers is not None:
            lo, hi = int(d.arc_offsets[gi]), int(d.arc_offsets[gi + 1])
            merged = []
            for vpart, arc in zip(parts, arc_layers):
                apart = (canonical_total(arc.values[lo:hi], aggregation)
                         if hi > lo else np.zeros(arc.width))
                merged.extend([vpart, apart])
            parts = merged
            if arc_dims is None:
                arc_dims = [arc.width for arc in arc_layers]
        rows.append(np.concatenate(parts))
    if vertex_dims is None:
        raise ConfigError("cannot embed an empty dataset")
    metadata = {
        "model": model, "kind": kind, "aggregation": aggregation,
        "posterior_mode": layers[0].mode, "neighbors": neighbors,
        "seed": seed, "num_graphs": len(d.graphs),
        "vertex_dims": vertex_dims, "arc_dims": arc_dims or [],
        "width": int(sum(vertex_dims) + sum(arc_dims or [])),
        "config": dict(config) if config else {},
    }
    return GraphEmbedding(np.vstack(rows), aggregation, metadata)


def _resolve_format(path, format):
    if format is None:
        return "csv" if str(path).endswith(".csv") else "binary"
    if format not in ("csv", "binary"):
        raise ConfigError(f"unknown embedding format {format!r}")
    return format


def _sidecar(path):
    return str(path) + ".meta.json"


def export_embeddings(emb, path, format=None):
    """Persist an embedding set; the metadata sidecar rides along.

    Format defaults to csv for a ``.csv`` suffix and binary otherwise.
    Both round-trip the exact doubles.
    """
    format = _resolve_format(path, format)
    if format == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("graph_id," + ",".join(f"dim_{i}"
                                            for i in range(emb.width)) + "\n")
            for gid in range(emb.num_graphs):
                row = ",".join(f"{v:.17g}" for v in emb.vectors[gid])
                fh.write(f"{gid},{row}\n")
    else:
        write_container(path, _EMB_MAGIC, _EMB_VERSION,
                        {"metadata": emb.metadata},
                        {"vectors": emb.vectors})
    with open(_sidecar(path), "w", encoding="utf-8") as fh:
        json.dump(emb.metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_embeddings(path, format=None):
    """Load an exported embedding set, checking width against metadata."""
    format = _resolve_format(path, format)
    if format == "binary":
        header, arrays = read_container(path, _EMB_MAGIC, _EMB_VERSION)
        metadata = header["metadata"]
        vectors = arrays["vectors"]
    else:
        try:
            with open(_sidecar(path), encoding="utf-8") as fh:
                metadata = json.load(fh)
        except FileNotFoundError:
            raise FormatError(f"{path}: metadata sidecar "
                              f"{_sidecar(path)} is missing") from None
        with open(path, encoding="utf-8") as fh:
            head = fh.readline().rstrip("\n").split(",")
            if head[:1] != ["graph_id"]:
                raise ParseError(path, 1, "not an embedding CSV")
            rows = []
            for ln, line in enumerate(fh, start=2):
                cells = line.rstrip("\n").split(",")
                if len(cells) != len(head):
                    raise ParseError(path, ln, f"expected {len(head)} "
                                     f"cells, got {len(cells)}")
                try:
                    rows.append([float(v) for v in cells[1:]])
                except ValueError as exc:
                    raise ParseError(path, ln, str(exc)) from None
        vectors = (np.asarray(rows, dtype=np.float64) if rows
                   else np.zeros((0, len(head) - 1)))
    declared = sum(metadata.get("vertex_dims", [])) \
        + sum(metadata.get("arc_dims", []))
    if declared != vectors.shape[1] \
            or metadata.get("width") != vectors.shape[1]:
        raise FormatError(f"{path}: vectors are {vectors.shape[1]} wide, "
                          f"metadata declares {metadata.get('width')}")
    return GraphEmbedding(vectors, metadata.get("aggregation", "sum"),
                          metadata)
