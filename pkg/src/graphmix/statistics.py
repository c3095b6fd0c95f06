"""Frozen per-layer posteriors and pre-computed neighborhood statistics.

A trained layer leaves behind one probability vector per vertex; those
vectors are the only information later layers may consume. This module
stores them, collapses each vertex's neighborhood into per-edge-label
macro-state vectors (the arithmetic mean of the neighbors' posteriors),
and owns the on-disk format so a stack can be trained incrementally
without ever recomputing earlier layers.

All per-vertex arrays are dataset-level, indexed by the global vertex
offsets of the owning :class:`~graphmix.graphs.Dataset`.
"""

import numpy as np

from .errors import ConfigError, IntegrityError
from .fileio import read_container, write_container
from .graphs import build_neighbor_index

ROW_SUM_TOL = 1e-9

_STATS_MAGIC = b"GSTA"
_STATS_VERSION = 1
_POST_MAGIC = b"GPST"
_POST_VERSION = 1


class FrozenPosterior:
    """Per-vertex state distribution of one trained layer, never modified.

    Parameters
    ----------
    layer : int
        Index of the layer that produced these posteriors.
    values : ndarray of shape (total_vertices, C)
        One probability row per vertex, in dataset offset order.
    mode : {"continuous", "one_hot"}
    """

    def __init__(self, layer, values, mode="continuous"):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise IntegrityError("posterior values must be a (vertices, states) matrix")
        if values.size:
            if values.min() < 0:
                raise IntegrityError("negative posterior entry")
            err = np.abs(values.sum(axis=1) - 1.0).max()
            if err > ROW_SUM_TOL:
                raise IntegrityError(f"posterior rows must sum to 1 (max error {err:.3g})")
        if mode not in ("continuous", "one_hot"):
            raise ConfigError(f"unknown posterior mode {mode!r}")
        if mode == "one_hot" and values.size and not np.all((values == 0) | (values == 1)):
            raise IntegrityError("one_hot mode requires indicator rows")
        self.layer = int(layer)
        self.values = values
        self.mode = mode

    @property
    def width(self):
        return self.values.shape[1]

    def for_graph(self, dataset, gi):
        off = dataset.offsets
        return self.values[off[gi]:off[gi + 1]]

    def save(self, path):
        write_container(path, _POST_MAGIC, _POST_VERSION,
                        {"layer": self.layer, "mode": self.mode},
                        {"values": self.values})

    @classmethod
    def load(cls, path):
        header, arrays = read_container(path, _POST_MAGIC, _POST_VERSION)
        return cls(header["layer"], arrays["values"], header["mode"])


class LayerStatistics:
    """Macro-state vectors and neighbor counts for one consuming layer.

    For each vertex ``u``, prior layer ``l`` in ``layer_subset`` and
    edge label ``a``, ``macro[l][u, a]`` holds the mean of the frozen
    posteriors of ``u``'s in-neighbors along ``a`` (zero vector when the
    set is empty), and ``counts[u, a]`` its size. Counts are float so
    the edge-posterior-weighted variant can store soft masses.

    When bottom augmentation is active every macro vector gains one
    trailing coordinate reserved for the dummy state, so its width is
    the source layer's state count plus one.
    """

    def __init__(self, layer_subset, macro, counts, num_labels, bottom=False):
        self.layer_subset = tuple(layer_subset)
        self.macro = {int(l): np.asarray(macro[l], dtype=np.float64) for l in macro}
        self.counts = np.asarray(counts, dtype=np.float64)
        self.num_labels = int(num_labels)
        self.bottom = bool(bottom)
        self.validate()

    @property
    def widths(self):
        return {l: self.macro[l].shape[2] for l in self.layer_subset}

    @property
    def num_vertices(self):
        return self.counts.shape[0]

    def validate(self):
        if set(self.layer_subset) != set(self.macro):
            raise IntegrityError("macro blocks do not match layer_subset")
        if self.counts.shape != (self.counts.shape[0], self.num_labels):
            raise IntegrityError("counts shape mismatch")
        nonempty = self.counts > 0
        for l, block in self.macro.items():
            if block.shape[:2] != self.counts.shape:
                raise IntegrityError(f"macro block {l} shape mismatch")
            sums = block.sum(axis=2)
            if nonempty.any() and np.abs(sums[nonempty] - 1.0).max() > ROW_SUM_TOL:
                raise IntegrityError(f"nonempty macro rows of layer {l} must sum to 1")
            if (~nonempty).any() and np.abs(sums[~nonempty]).max() > 0:
                raise IntegrityError(f"empty macro rows of layer {l} must be zero")


def compute_statistics(d, frozen, layer_subset):
    """Collapse neighborhoods into macro-states for the given prior layers.

    Parameters
    ----------
    d : Dataset
    frozen : sequence of FrozenPosterior
        Must cover every index in ``layer_subset``.
    layer_subset : iterable of int

    The macro-state of ``(u, l, a)`` is the arithmetic mean of
    ``q_v^l`` over the in-neighbors ``v`` of ``u`` along label ``a``.
    Dummy bottom neighbors contribute a one-hot vector on the trailing
    bottom coordinate under the dedicated last edge label.
    """
    layer_subset = tuple(layer_subset)
    by_layer = {fp.layer: fp for fp in frozen}
    missing = [l for l in layer_subset if l not in by_layer]
    if missing:
        raise ConfigError(f"no frozen posterior for layer(s) {missing}")

    num_labels = d.edge_alphabet_size
    real_labels = num_labels - (1 if d.bottom else 0)
    n_total = d.total_vertices
    offsets = d.offsets

    counts = np.zeros((n_total, num_labels), dtype=np.float64)
    macro = {}
    for l in layer_subset:
        width = by_layer[l].width + (1 if d.bottom else 0)
        macro[l] = np.zeros((n_total, num_labels, width), dtype=np.float64)

    for gi, g in enumerate(d.graphs):
        base = offsets[gi]
        if g.num_arcs:
            seg = g.arcs[:, 1] * real_labels + g.arcs[:, 2]
            cnt = np.bincount(seg, minlength=g.num_vertices * real_labels).astype(np.float64)
            counts[base:base + g.num_vertices, :real_labels] = cnt.reshape(
                g.num_vertices, real_labels)
        for l in layer_subset:
            q = by_layer[l].for_graph(d, gi)
            width = q.shape[1]
            acc = np.zeros((g.num_vertices * real_labels, width))
            if g.num_arcs:
                np.add.at(acc, seg, q[g.arcs[:, 0]])
            acc = acc.reshape(g.num_vertices, real_labels, width)
            cnt_g = counts[base:base + g.num_vertices, :real_labels]
            nonzero = cnt_g > 0
            acc[nonzero] /= cnt_g[nonzero, None]
            macro[l][base:base + g.num_vertices, :real_labels, :width] = acc
        if d.bottom:
            if g.bottom_count is None:
                raise ConfigError("dataset flagged bottom but graph lacks bottom counts")
            counts[base:base + g.num_vertices, real_labels] = g.bottom_count
            present = g.bottom_count > 0
            for l in layer_subset:
                macro[l][base:base + g.num_vertices, real_labels, -1] = present

    return LayerStatistics(layer_subset, macro, counts, num_labels, bottom=d.bottom)


def save_statistics(stats, path):
    """Persist statistics; round trips are exact to the last bit."""
    header = {"layer_subset": list(stats.layer_subset),
              "num_labels": stats.num_labels,
              "bottom": stats.bottom,
              "num_vertices": stats.num_vertices,
              "widths": {str(l): w for l, w in stats.widths.items()}}
    arrays = {"counts": stats.counts}
    for l in stats.layer_subset:
        arrays[f"macro_{l}"] = stats.macro[l]
    write_container(path, _STATS_MAGIC, _STATS_VERSION, header, arrays)


def load_statistics(path):
    header, arrays = read_container(path, _STATS_MAGIC, _STATS_VERSION)
    macro = {l: arrays[f"macro_{l}"] for l in header["layer_subset"]}
    return LayerStatistics(header["layer_subset"], macro, arrays["counts"],
                           header["num_labels"], header["bottom"])


def neighbor_counts_match(d, stats):
    """Cross-check statistics counts against a fresh neighbor index."""
    real_labels = stats.num_labels - (1 if stats.bottom else 0)
    offsets = d.offsets
    for gi, g in enumerate(d.graphs):
        idx = build_neighbor_index(g, num_labels=real_labels)
        base = offsets[gi]
        for u in range(g.num_vertices):
            for a in range(real_labels):
                if stats.counts[base + u, a] != idx.count(u, a):
                    return False
    return True
