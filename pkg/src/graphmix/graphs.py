"""Graph and dataset model, file ingestion and structural preprocessing.

Graphs are stored in a canonical directed form: every stored arc is
oriented, and undirectedness only exists at ingestion time. Vertex ids
are dense and 0-based within each graph; the dataset exposes an offset
table so per-vertex quantities of all graphs can live in one array.

Each vertex carries exactly one feature, either a discrete id in
``{0..K-1}`` or a continuous scalar. Arcs may carry one continuous
scalar feature. Multi-dimensional attributes are rejected at load.
"""

import json
import os

import numpy as np

from .errors import ConfigError, IntegrityError, ParseError

TEXT_FORMAT_NAME = "graphmix-dataset"
TEXT_FORMAT_VERSION = 1


class Graph:
    """A single attributed directed multigraph.

    Parameters
    ----------
    num_vertices : int
    arcs : array-like of shape (m, 3)
        Rows ``(src, dst, label)``. With ``directed=False`` each row is
        an unordered edge listed once; :func:`to_directed` expands it.
    vertex_feature : array-like of shape (num_vertices,)
        Discrete ids (integer dtype) or continuous scalars (float).
    arc_feature : array-like of shape (m,), optional
    target : int or float, optional
        Graph-level label or regression value.
    vertex_targets : array-like, optional
        Per-vertex labels for vertex classification tasks.
    bottom_count : array-like of shape (num_vertices,), optional
        Number of dummy in-neighbors per vertex; set by
        :func:`augment_bottom`, never by hand. The dummy source vertex
        is not materialized, so these arcs never appear in ``arcs``.
    """

    __slots__ = ("num_vertices", "arcs", "vertex_feature", "arc_feature",
                 "target", "vertex_targets", "directed", "bottom_count")

    def __init__(self, num_vertices, arcs, vertex_feature, arc_feature=None,
                 target=None, vertex_targets=None, directed=True, bottom_count=None):
        self.num_vertices = int(num_vertices)
        arcs = np.asarray(arcs, dtype=np.int64).reshape(-1, 3)
        if arcs.size and (arcs[:, :2].min() < 0 or arcs[:, :2].max() >= self.num_vertices):
            raise IntegrityError("arc endpoint outside vertex range")
        if arcs.size and arcs[:, 2].min() < 0:
            raise IntegrityError("negative edge label id")
        self.arcs = arcs
        feat = np.asarray(vertex_feature)
        if feat.ndim != 1 or feat.shape[0] != self.num_vertices:
            raise IntegrityError("vertex_feature must hold one value per vertex")
        self.vertex_feature = feat if feat.dtype.kind == "f" else feat.astype(np.int64)
        if arc_feature is not None:
            arc_feature = np.asarray(arc_feature, dtype=np.float64)
            if arc_feature.shape != (arcs.shape[0],):
                raise IntegrityError("arc_feature must hold one value per arc")
        self.arc_feature = arc_feature
        self.target = target
        self.vertex_targets = None if vertex_targets is None else np.asarray(vertex_targets)
        self.directed = bool(directed)
        if bottom_count is not None:
            bottom_count = np.asarray(bottom_count, dtype=np.int64)
            if bottom_count.shape != (self.num_vertices,) or bottom_count.min() < 0:
                raise IntegrityError("bottom_count must be a nonnegative per-vertex array")
        self.bottom_count = bottom_count

    @property
    def num_arcs(self):
        return self.arcs.shape[0]

    def in_degree(self):
        """Number of stored (real) arcs pointing at each vertex."""
        return np.bincount(self.arcs[:, 1], minlength=self.num_vertices)

    def replace(self, **kw):
        """Copy with the given fields replaced."""
        fields = {name: getattr(self, name) for name in self.__slots__}
        fields.update(kw)
        return Graph(**fields)

    def __repr__(self):
        return (f"Graph(n={self.num_vertices}, m={self.num_arcs}, "
                f"directed={self.directed}, target={self.target!r})")


class Dataset:
    """A collection of graphs sharing feature alphabets and task.

    ``vertex_alphabet_size`` is 0 when vertex features are continuous.
    ``edge_alphabet_size`` counts all valid edge label ids, including
    the dedicated bottom label when ``bottom`` is True (the bottom label
    is then the largest id and never appears on stored arcs).
    """

    TASKS = ("graph-classification", "vertex-classification",
             "graph-regression", "link-prediction")

    def __init__(self, graphs, vertex_alphabet_size, edge_alphabet_size,
                 task="graph-classification", num_classes=0,
                 undirected_source=False, bottom=False):
        if task not in self.TASKS:
            raise ConfigError(f"unknown task {task!r}")
        self.graphs = list(graphs)
        self.vertex_alphabet_size = int(vertex_alphabet_size)
        self.edge_alphabet_size = int(edge_alphabet_size)
        self.task = task
        self.num_classes = int(num_classes)
        self.undirected_source = bool(undirected_source)
        self.bottom = bool(bottom)
        self._validate()

    def _validate(self):
        limit = self.edge_alphabet_size - (1 if self.bottom else 0)
        for gi, g in enumerate(self.graphs):
            if g.arcs.size and g.arcs[:, 2].max() >= limit:
                raise IntegrityError(f"graph {gi}: edge label outside alphabet")
            if self.vertex_alphabet_size > 0:
                if g.vertex_feature.dtype.kind == "f":
                    raise IntegrityError(f"graph {gi}: continuous feature in a discrete dataset")
                if g.vertex_feature.size and g.vertex_feature.max() >= self.vertex_alphabet_size:
                    raise IntegrityError(f"graph {gi}: vertex feature outside alphabet")
            if self.num_classes and self.task == "graph-classification" and g.target is not None:
                if not 0 <= int(g.target) < self.num_classes:
                    raise IntegrityError(f"graph {gi}: class label {g.target} out of range")

    @property
    def feature_kind(self):
        return "categorical" if self.vertex_alphabet_size > 0 else "continuous"

    @property
    def num_graphs(self):
        return len(self.graphs)

    @property
    def total_vertices(self):
        return int(self.offsets[-1])

    @property
    def offsets(self):
        """Global offset table: vertices of graph i occupy offsets[i]:offsets[i+1]."""
        sizes = [g.num_vertices for g in self.graphs]
        return np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)])

    @property
    def arc_offsets(self):
        """Like ``offsets`` but counting arcs instead of vertices."""
        sizes = [g.num_arcs for g in self.graphs]
        return np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)])

    @property
    def total_arcs(self):
        return int(self.arc_offsets[-1])

    def targets(self):
        return np.array([g.target for g in self.graphs])

    def features_concat(self):
        """All vertex features in one array, in offset order."""
        return np.concatenate([g.vertex_feature for g in self.graphs])

    def subset(self, indices):
        """New dataset sharing the selected graph objects."""
        return Dataset([self.graphs[i] for i in indices],
                       self.vertex_alphabet_size, self.edge_alphabet_size,
                       self.task, self.num_classes, self.undirected_source, self.bottom)

    def map_graphs(self, fn, **dataset_fields):
        fields = dict(vertex_alphabet_size=self.vertex_alphabet_size,
                      edge_alphabet_size=self.edge_alphabet_size, task=self.task,
                      num_classes=self.num_classes,
                      undirected_source=self.undirected_source, bottom=self.bottom)
        fields.update(dataset_fields)
        return Dataset([fn(g) for g in self.graphs], **fields)

    def with_bottom(self):
        """Dataset-level bottom augmentation: dummy arcs plus one fresh edge label."""
        if self.bottom:
            return self
        return self.map_graphs(augment_bottom,
                               edge_alphabet_size=self.edge_alphabet_size + 1, bottom=True)

    def __repr__(self):
        return (f"Dataset({self.num_graphs} graphs, K={self.vertex_alphabet_size}, "
                f"|A|={self.edge_alphabet_size}, task={self.task})")


class NeighborIndex:
    """Per-vertex, per-edge-label in-neighbor lists of one graph.

    Neighbors are stored in one flat array segmented by ``(u, a)``; each
    segment is sorted and may contain repeats (parallel arcs). ``deg``
    counts real arcs only; dummy bottom neighbors are visible through
    ``bottom_count`` and the dedicated last label id.
    """

    __slots__ = ("num_vertices", "num_labels", "neighbors", "offsets",
                 "deg", "deg_max", "bottom_count", "bottom_label")

    def __init__(self, num_vertices, num_labels, neighbors, offsets, deg,
                 bottom_count=None, bottom_label=None):
        self.num_vertices = num_vertices
        self.num_labels = num_labels
        self.neighbors = neighbors
        self.offsets = offsets
        self.deg = deg
        self.deg_max = int(deg.max()) if num_vertices else 0
        self.bottom_count = bottom_count
        self.bottom_label = bottom_label

    def segment(self, u, a):
        """Sorted in-neighbors of ``u`` along edge label ``a``."""
        if a == self.bottom_label:
            raise ValueError("bottom label has no materialized neighbors")
        k = u * self.num_labels + a
        return self.neighbors[self.offsets[k]:self.offsets[k + 1]]

    def count(self, u, a):
        if a == self.bottom_label:
            return int(self.bottom_count[u]) if self.bottom_count is not None else 0
        k = u * self.num_labels + a
        return int(self.offsets[k + 1] - self.offsets[k])


def build_neighbor_index(g, num_labels=None):
    """Build the in-neighbor index of a directed graph.

    ``num_labels`` counts the real edge labels (the dataset's alphabet
    without the bottom label); it defaults to the largest label present
    plus one. When the graph carries bottom counts, the index exposes
    them under the dedicated label id ``num_labels``.
    """
    if not g.directed:
        raise ConfigError("build_neighbor_index requires a directed graph")
    if num_labels is None:
        num_labels = int(g.arcs[:, 2].max()) + 1 if g.num_arcs else 1
    keys = g.arcs[:, 1] * num_labels + g.arcs[:, 2]
    order = np.lexsort((g.arcs[:, 0], keys))
    neighbors = g.arcs[order, 0]
    counts = np.bincount(keys, minlength=g.num_vertices * num_labels)
    offsets = np.concatenate([[0], np.cumsum(counts, dtype=np.int64)])
    deg = g.in_degree()
    bottom_label = num_labels if g.bottom_count is not None else None
    return NeighborIndex(g.num_vertices, num_labels, neighbors, offsets, deg,
                         bottom_count=g.bottom_count, bottom_label=bottom_label)


def to_directed(g):
    """Canonical directed form: each unordered edge becomes two opposite arcs.

    Arc features are copied onto both orientations. Already-directed
    graphs are returned unchanged, making the operation idempotent.
    """
    if g.directed:
        return g
    m = g.num_arcs
    arcs = np.empty((2 * m, 3), dtype=np.int64)
    arcs[0::2] = g.arcs
    arcs[1::2] = g.arcs[:, [1, 0, 2]]
    feat = None
    if g.arc_feature is not None:
        feat = np.repeat(g.arc_feature, 2)
    return g.replace(arcs=arcs, arc_feature=feat, directed=True)


def augment_bottom(g):
    """Record ``deg_max - deg(u)`` dummy in-neighbors per vertex.

    The dummies sit in a dedicated hidden state behind a dedicated fresh
    edge label, so downstream aggregation sees every vertex with the
    same in-degree and the true degree becomes visible. The virtual
    source is not materialized as a vertex and emissions never read a
    feature for it. Dataset-level label bookkeeping lives in
    :meth:`Dataset.with_bottom`.
    """
    if not g.directed:
        raise ConfigError("augment_bottom requires a directed graph")
    deg = g.in_degree()
    deg_max = int(deg.max()) if g.num_vertices else 0
    return g.replace(bottom_count=deg_max - deg)


def add_degree_feature(d, force=False):
    """Replace vertex features with the continuous in-degree.

    Intended for datasets without informative features. Refuses when
    discrete features already carry information (K > 1) unless
    ``force`` is set.
    """
    if d.vertex_alphabet_size > 1 and not force:
        raise ConfigError("dataset has informative discrete features; pass force=True to overwrite")
    return d.map_graphs(
        lambda g: g.replace(vertex_feature=g.in_degree().astype(np.float64)),
        vertex_alphabet_size=0)


# ---------------------------------------------------------------------------
# TU-format ingestion


def _read_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read().splitlines()


def _parse_int_row(path, lineno, line, width):
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != width:
        raise ParseError(path, lineno, f"expected {width} comma-separated fields")
    try:
        return [int(p) for p in parts]
    except ValueError as exc:
        raise ParseError(path, lineno, str(exc)) from exc


def _remap_dense(values):
    """Map arbitrary int codes onto dense 0-based ids (sorted order)."""
    uniq = sorted(set(values))
    lookup = {v: i for i, v in enumerate(uniq)}
    return [lookup[v] for v in values], len(uniq)


def load_tu_dataset(root_path, name, feature_source="auto",
                    allow_truncate_attributes=False):
    """Load a benchmark dataset laid out in the TU text format.

    Expects ``{name}_A.txt`` and ``{name}_graph_indicator.txt`` under
    ``root_path/name/``; graph labels, vertex labels, edge labels and
    vertex attributes are picked up when present. Vertex ids in the
    files are 1-based and global; they are remapped to dense 0-based
    per-graph ids. Both directions of an undirected edge are expected to
    be listed and are preserved as-is.

    ``feature_source`` selects between ``_node_labels`` (discrete) and
    ``_node_attributes`` (continuous) when both files exist; attribute
    rows with more than one column are rejected unless
    ``allow_truncate_attributes`` keeps only the first.
    """
    base = os.path.join(root_path, name)
    if not os.path.isdir(base):
        raise ConfigError(f"dataset directory not found: {base}")
    prefix = os.path.join(base, name)

    indicator_path = prefix + "_graph_indicator.txt"
    adjacency_path = prefix + "_A.txt"
    for path in (indicator_path, adjacency_path):
        if not os.path.exists(path):
            raise ConfigError(f"required file missing: {path}")

    indicator = []
    for lineno, line in enumerate(_read_lines(indicator_path), 1):
        if line.strip():
            indicator.append(_parse_int_row(indicator_path, lineno, line, 1)[0])
    num_graphs = max(indicator)
    if sorted(set(indicator)) != list(range(1, num_graphs + 1)):
        raise IntegrityError("graph indicator ids are not contiguous from 1")

    # Global 1-based vertex id -> (graph, local 0-based id).
    sizes = np.bincount(indicator, minlength=num_graphs + 1)[1:]
    local = np.empty(len(indicator), dtype=np.int64)
    seen = np.zeros(num_graphs, dtype=np.int64)
    graph_of = np.asarray(indicator, dtype=np.int64) - 1
    for v, gi in enumerate(graph_of):
        local[v] = seen[gi]
        seen[gi] += 1

    arcs = [[] for _ in range(num_graphs)]
    arc_rows = []
    for lineno, line in enumerate(_read_lines(adjacency_path), 1):
        if not line.strip():
            continue
        i, j = _parse_int_row(adjacency_path, lineno, line, 2)
        if not (1 <= i <= len(indicator) and 1 <= j <= len(indicator)):
            raise ParseError(adjacency_path, lineno, f"vertex id out of range: {line!r}")
        gi, gj = graph_of[i - 1], graph_of[j - 1]
        if gi != gj:
            raise IntegrityError(
                f"{adjacency_path}:{lineno}: arc {i} -> {j} crosses graphs {gi + 1} and {gj + 1}")
        arc_rows.append((gi, local[i - 1], local[j - 1]))

    edge_labels_path = prefix + "_edge_labels.txt"
    if os.path.exists(edge_labels_path):
        raw = [_parse_int_row(edge_labels_path, no, ln, 1)[0]
               for no, ln in enumerate(_read_lines(edge_labels_path), 1) if ln.strip()]
        if len(raw) != len(arc_rows):
            raise IntegrityError("edge label count does not match arc count")
        labels, num_edge_labels = _remap_dense(raw)
    else:
        labels, num_edge_labels = [0] * len(arc_rows), 1
    for (gi, u, v), a in zip(arc_rows, labels):
        arcs[gi].append((u, v, a))

    node_labels_path = prefix + "_node_labels.txt"
    node_attr_path = prefix + "_node_attributes.txt"
    have_labels = os.path.exists(node_labels_path)
    have_attrs = os.path.exists(node_attr_path)
    if feature_source == "auto":
        if have_labels and have_attrs:
            raise ConfigError(
                "both node labels and node attributes present; set feature_source")
        feature_source = "labels" if have_labels else ("attributes" if have_attrs else "none")

    if feature_source == "labels":
        raw = [_parse_int_row(node_labels_path, no, ln, 1)[0]
               for no, ln in enumerate(_read_lines(node_labels_path), 1) if ln.strip()]
        if len(raw) != len(indicator):
            raise IntegrityError("node label count does not match vertex count")
        feats, alphabet = _remap_dense(raw)
        features = np.asarray(feats, dtype=np.int64)
    elif feature_source == "attributes":
        rows = []
        for no, ln in enumerate(_read_lines(node_attr_path), 1):
            if not ln.strip():
                continue
            parts = [p.strip() for p in ln.split(",")]
            if len(parts) > 1 and not allow_truncate_attributes:
                raise ConfigError(
                    f"{node_attr_path}:{no}: {len(parts)} attribute columns; the model "
                    "takes a single scalar (allow_truncate_attributes keeps the first)")
            try:
                rows.append(float(parts[0]))
            except ValueError as exc:
                raise ParseError(node_attr_path, no, str(exc)) from exc
        if len(rows) != len(indicator):
            raise IntegrityError("node attribute count does not match vertex count")
        features, alphabet = np.asarray(rows, dtype=np.float64), 0
    else:
        features, alphabet = np.zeros(len(indicator), dtype=np.int64), 1

    graph_labels_path = prefix + "_graph_labels.txt"
    if os.path.exists(graph_labels_path):
        raw = [_parse_int_row(graph_labels_path, no, ln, 1)[0]
               for no, ln in enumerate(_read_lines(graph_labels_path), 1) if ln.strip()]
        if len(raw) != num_graphs:
            raise IntegrityError("graph label count does not match graph count")
        targets, num_classes = _remap_dense(raw)
    else:
        targets, num_classes = [None] * num_graphs, 0

    graphs = []
    for gi in range(num_graphs):
        mask = graph_of == gi
        graphs.append(Graph(
            num_vertices=int(sizes[gi]),
            arcs=np.asarray(arcs[gi], dtype=np.int64).reshape(-1, 3),
            vertex_feature=features[mask],
            target=targets[gi]))
    return Dataset(graphs, alphabet, num_edge_labels,
                   task="graph-classification", num_classes=num_classes,
                   undirected_source=True)


# ---------------------------------------------------------------------------
# Line-delimited self-describing text format (synthetic data interchange)


def save_text_dataset(d, path):
    """One JSON header line, then one JSON graph object per line.

    Floats survive the round trip exactly (shortest-repr decimal).
    """
    with open(path, "w", encoding="utf-8") as fh:
        header = {"format": TEXT_FORMAT_NAME, "version": TEXT_FORMAT_VERSION,
                  "vertex_alphabet_size": d.vertex_alphabet_size,
                  "edge_alphabet_size": d.edge_alphabet_size,
                  "task": d.task, "num_classes": d.num_classes,
                  "undirected_source": d.undirected_source, "bottom": d.bottom}
        fh.write(json.dumps(header) + "\n")
        for g in d.graphs:
            rec = {"n": g.num_vertices, "arcs": g.arcs.tolist(),
                   "x": g.vertex_feature.tolist(),
                   "ax": None if g.arc_feature is None else g.arc_feature.tolist(),
                   "y": g.target,
                   "vy": None if g.vertex_targets is None else g.vertex_targets.tolist(),
                   "bottom": None if g.bottom_count is None else g.bottom_count.tolist()}
            fh.write(json.dumps(rec) + "\n")


def load_text_dataset(path):
    lines = _read_lines(path)
    if not lines:
        raise ParseError(path, 1, "empty dataset file")
    try:
        header = json.loads(lines[0])
    except ValueError as exc:
        raise ParseError(path, 1, f"bad header: {exc}") from exc
    if header.get("format") != TEXT_FORMAT_NAME:
        raise ParseError(path, 1, "not a dataset file")
    if header.get("version") != TEXT_FORMAT_VERSION:
        raise ParseError(path, 1, f"unsupported version {header.get('version')}")
    discrete = header["vertex_alphabet_size"] > 0
    graphs = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from exc
        feat = np.asarray(rec["x"], dtype=np.int64 if discrete else np.float64)
        graphs.append(Graph(
            num_vertices=rec["n"],
            arcs=np.asarray(rec["arcs"], dtype=np.int64).reshape(-1, 3),
            vertex_feature=feat,
            arc_feature=None if rec.get("ax") is None else np.asarray(rec["ax"]),
            target=rec.get("y"),
            vertex_targets=rec.get("vy"),
            bottom_count=rec.get("bottom")))
    return Dataset(graphs, header["vertex_alphabet_size"], header["edge_alphabet_size"],
                   header["task"], header["num_classes"],
                   header["undirected_source"], header.get("bottom", False))
