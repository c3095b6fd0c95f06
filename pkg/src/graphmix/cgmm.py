"""One EM-trained mixture layer over graph vertices.

Each vertex carries a latent state with ``C`` values. At the root layer
the model is a plain mixture over vertex features. At deeper layers the
state prior is conditioned on the frozen posteriors of earlier layers
through two switching parents: one categorical choice over the prior
layers in the layer subset, one over edge labels. Given those choices
the neighborhood collapses into a single macro-state vector, so the
conditional prior is a convex combination of transition columns:

    P(state = i | context) =
        sum_l sp_layer[l] * sum_a sp_edge[l, a] *
        sum_j transition[l][a, i, j] * macro[u, l, a, j]

Training is exact EM: expectations accumulate over the whole dataset
(mini-batches exist purely for memory control) and every distribution
has a closed-form update. All likelihood math runs in log space with
per-vertex max subtraction.
"""

from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2

from .errors import ConfigError, FormatError, IntegrityError, NumericalError
from .fileio import read_container, write_container
from .numerics import LOG_TINY, logsumexp, xlog
from .rng import derive

SIMPLEX_TOL = 1e-9
TENSOR_TOL = 1e-8


# ---------------------------------------------------------------------------
# Emission distributions


class CategoricalEmission:
    """P(x = k | state = i) stored as a (K, C) column-stochastic matrix."""

    kind = "categorical"

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 2:
            raise IntegrityError("categorical emission must be a (K, C) matrix")
        if np.abs(probs.sum(axis=0) - 1.0).max() > SIMPLEX_TOL:
            raise IntegrityError("emission columns must sum to 1")
        self.probs = probs

    @property
    def num_states(self):
        return self.probs.shape[1]

    def log_prob(self, x):
        return xlog(self.probs[np.asarray(x, dtype=np.int64)])

    def m_step(self, weights, x):
        """Closed-form update; degenerate states keep their old column.

        Returns (new emission, number of degenerate states).
        """
        K, C = self.probs.shape
        num = np.zeros((K, C))
        np.add.at(num, np.asarray(x, dtype=np.int64), weights)
        denom = num.sum(axis=0)
        dead = denom <= 0
        probs = self.probs.copy()
        probs[:, ~dead] = num[:, ~dead] / denom[~dead]
        return CategoricalEmission(probs), int(dead.sum())


class GaussianEmission:
    """Per-state univariate Gaussian with a configured sigma floor."""

    kind = "gaussian"

    def __init__(self, mu, sigma, sigma_floor):
        self.mu = np.asarray(mu, dtype=np.float64)
        self.sigma_floor = float(sigma_floor)
        sigma = np.maximum(np.asarray(sigma, dtype=np.float64), self.sigma_floor)
        if sigma.min() <= 0:
            raise IntegrityError("sigma must be positive")
        self.sigma = sigma

    @property
    def num_states(self):
        return self.mu.shape[0]

    def log_prob(self, x):
        x = np.asarray(x, dtype=np.float64)[:, None]
        z = (x - self.mu) / self.sigma
        return -0.5 * z * z - np.log(self.sigma) - 0.5 * np.log(2.0 * np.pi)

    def m_step(self, weights, x):
        x = np.asarray(x, dtype=np.float64)
        denom = weights.sum(axis=0)
        dead = denom <= 0
        mu = self.mu.copy()
        sigma = self.sigma.copy()
        alive = ~dead
        if alive.any():
            mu[alive] = (weights[:, alive] * x[:, None]).sum(axis=0) / denom[alive]
            dev = x[:, None] - mu[alive]
            var = (weights[:, alive] * dev * dev).sum(axis=0) / denom[alive]
            sigma[alive] = np.sqrt(var)
        return GaussianEmission(mu, sigma, self.sigma_floor), int(dead.sum())


# ---------------------------------------------------------------------------
# Layer parameters


class CgmmLayerParams:
    """All distributions of one trained layer.

    ``layer_subset`` is empty at the root layer, in which case ``prior``
    is the plain mixing distribution and no transition or switching
    parent exists. Otherwise ``transition[l]`` has shape
    ``(num_labels, C, source_width_l)`` with columns over the first axis
    of states summing to 1, ``sp_layer`` runs over the subset and
    ``sp_edge[l]`` over edge labels.
    """

    def __init__(self, C, layer_subset, num_labels, emission, transition=None,
                 sp_layer=None, sp_edge=None, prior=None, layer_index=None,
                 fixed_sp_edge=False):
        self.C = int(C)
        self.layer_subset = tuple(layer_subset)
        self.num_labels = int(num_labels)
        self.emission = emission
        self.transition = {} if transition is None else dict(transition)
        self.sp_layer = sp_layer if sp_layer is None else np.asarray(sp_layer, dtype=np.float64)
        self.sp_edge = sp_edge if sp_edge is None else np.asarray(sp_edge, dtype=np.float64)
        self.prior = prior if prior is None else np.asarray(prior, dtype=np.float64)
        self.layer_index = layer_index
        # pinned switching parent (kept through M-steps), used for data
        # where the label choice must stay uniform by model definition
        self.fixed_sp_edge = bool(fixed_sp_edge)
        self.history = []
        self.degenerate = {"emission": 0, "transition_columns": 0}
        self.validate()

    @property
    def is_root(self):
        return not self.layer_subset

    def source_widths(self):
        return {l: self.transition[l].shape[2] for l in self.layer_subset}

    def validate(self):
        if self.emission.num_states != self.C:
            raise IntegrityError("emission state count mismatch")
        if self.is_root:
            if self.prior is None:
                raise IntegrityError("root layer needs a prior")
            if abs(self.prior.sum() - 1.0) > SIMPLEX_TOL:
                raise IntegrityError("prior must sum to 1")
            return
        L = len(self.layer_subset)
        if self.sp_layer is None or self.sp_layer.shape != (L,):
            raise IntegrityError("sp_layer shape mismatch")
        if abs(self.sp_layer.sum() - 1.0) > SIMPLEX_TOL:
            raise IntegrityError("sp_layer must sum to 1")
        if self.sp_edge is None or self.sp_edge.shape != (L, self.num_labels):
            raise IntegrityError("sp_edge shape mismatch")
        if np.abs(self.sp_edge.sum(axis=1) - 1.0).max() > SIMPLEX_TOL:
            raise IntegrityError("each sp_edge row must sum to 1")
        for l in self.layer_subset:
            t = self.transition[l]
            if t.shape[0] != self.num_labels or t.shape[1] != self.C:
                raise IntegrityError(f"transition block {l} shape mismatch")
            if np.abs(t.sum(axis=1) - 1.0).max() > SIMPLEX_TOL:
                raise IntegrityError(f"transition columns of layer {l} must sum to 1")

    def copy(self):
        out = CgmmLayerParams(
            self.C, self.layer_subset, self.num_labels, self.emission,
            {l: t.copy() for l, t in self.transition.items()},
            None if self.sp_layer is None else self.sp_layer.copy(),
            None if self.sp_edge is None else self.sp_edge.copy(),
            None if self.prior is None else self.prior.copy(),
            self.layer_index, self.fixed_sp_edge)
        out.history = list(self.history)
        out.degenerate = dict(self.degenerate)
        return out


@dataclass
class CgmmConfig:
    """Training knobs for one layer."""

    C: int
    layer_subset: tuple = ()
    emission: str = "categorical"
    epochs: int = 10
    threshold: float | None = None
    seed: int = 0
    init: str = "dirichlet"  # gaussian means: "kmeans" or "quantile"
    batch_graphs: int | None = None
    sigma_floor_frac: float = 1e-3
    mode: str = "continuous"


class PosteriorTensor:
    """Joint and marginal expectations of one E-step pass.

    ``joint[l][u, i, a, j]`` is the expected indicator of state ``i``
    with switching choices ``(l, a)`` and macro coordinate ``j``. Rows
    sum to 1 per vertex, except for vertices flagged in ``isolated``:
    those carry zero joint mass and only inform the emission update.
    The flag covers vertices with no neighbor under any label (uniform
    conditional prior fallback) and the rare vertex whose numerators all
    underflowed and was clamped to a uniform state posterior.
    """

    def __init__(self, layer_subset, joint, marg_state, marg_layer, marg_edge,
                 loglik, isolated, underflows=0):
        self.layer_subset = tuple(layer_subset)
        self.joint = joint
        self.marg_state = marg_state
        self.marg_layer = marg_layer
        self.marg_edge = marg_edge
        self.loglik = float(loglik)
        self.isolated = isolated
        self.underflows = int(underflows)

    def validate(self):
        total = np.abs(self.marg_state.sum(axis=1) - 1.0).max()
        if total > TENSOR_TOL:
            raise IntegrityError(f"state marginals must sum to 1 (err {total:.3g})")
        if not self.layer_subset:
            return
        connected = ~self.isolated
        joint_total = np.zeros(self.marg_state.shape[0])
        for l_pos, l in enumerate(self.layer_subset):
            block = self.joint[l]
            joint_total += block.sum(axis=(1, 2, 3))
            err = np.abs(block.sum(axis=3) - self.marg_edge[:, :, l_pos, :]).max()
            if err > SIMPLEX_TOL:
                raise IntegrityError("edge marginal inconsistent with joint")
            err = np.abs(block.sum(axis=(2, 3)) - self.marg_layer[:, :, l_pos]).max()
            if err > SIMPLEX_TOL:
                raise IntegrityError("layer marginal inconsistent with joint")
        if connected.any() and np.abs(joint_total[connected] - 1.0).max() > TENSOR_TOL:
            raise IntegrityError("joint tensor must sum to 1 per connected vertex")
        if self.isolated.any() and np.abs(joint_total[self.isolated]).max() > 0:
            raise IntegrityError("isolated vertices must carry zero joint mass")


# ---------------------------------------------------------------------------
# Operations


def init_layer(C, layer_subset, num_labels, emission_kind, seed, init="dirichlet",
               *, K=None, data=None, source_widths=None, sigma_floor_frac=1e-3,
               layer_index=None):
    """Draw valid starting distributions for one layer.

    Categorical emissions come from a symmetric Dirichlet. Gaussian
    means come from k-means on the feature values (``init="kmeans"``) or
    evenly spaced quantiles (``init="quantile"``); every state starts at
    the data standard deviation, which also sets the sigma floor at
    ``sigma_floor_frac`` times it.
    """
    if C < 1:
        raise ConfigError("C must be at least 1")
    layer_subset = tuple(layer_subset)
    rng = derive(seed, "init", layer_index if layer_index is not None else "layer")

    if emission_kind == "categorical":
        if K is None:
            raise ConfigError("categorical emission needs the alphabet size K")
        emission = CategoricalEmission(rng.dirichlet(np.ones(K), size=C).T)
    elif emission_kind == "gaussian":
        if data is None or len(data) == 0:
            raise ConfigError("gaussian init needs the feature values")
        data = np.asarray(data, dtype=np.float64)
        std = float(data.std())
        floor = sigma_floor_frac * std if std > 0 else sigma_floor_frac
        if init == "kmeans":
            if C == 1:
                mu = np.array([data.mean()])
            else:
                mu, _ = kmeans2(data[:, None], C, minit="++",
                                seed=int(rng.integers(2**31)))
                mu = np.sort(mu[:, 0])
        elif init in ("quantile", "dirichlet"):
            mu = np.quantile(data, (np.arange(C) + 0.5) / C)
        else:
            raise ConfigError(f"unknown init {init!r}")
        emission = GaussianEmission(mu, np.full(C, max(std, floor)), floor)
    else:
        raise ConfigError(f"unknown emission kind {emission_kind!r}")

    if not layer_subset:
        return CgmmLayerParams(C, (), num_labels, emission,
                               prior=rng.dirichlet(np.ones(C)),
                               layer_index=layer_index)

    if source_widths is None:
        raise ConfigError("deep layers need the source posterior widths")
    transition = {}
    for l in layer_subset:
        W = int(source_widths[l])
        # columns over the state axis drawn from a symmetric Dirichlet
        block = rng.dirichlet(np.ones(C), size=(num_labels, W))
        transition[l] = np.transpose(block, (0, 2, 1))
    L = len(layer_subset)
    return CgmmLayerParams(C, layer_subset, num_labels, emission,
                           transition=transition,
                           sp_layer=np.full(L, 1.0 / L),
                           sp_edge=np.full((L, num_labels), 1.0 / num_labels),
                           layer_index=layer_index)


def _renormalized_sp_edge(params, stats, u):
    """sp_edge restricted to labels with a nonempty neighbor set at u."""
    present = stats.counts[u] > 0
    out = np.zeros_like(params.sp_edge)
    if not present.any():
        return out, False
    masked = params.sp_edge * present[None, :]
    out = masked / masked.sum(axis=1, keepdims=True)
    return out, True


def aggregate_prior(params, stats, u):
    """Conditional state prior of vertex ``u`` given its macro-states.

    Labels with an empty neighbor set get zero switching mass and the
    rest is renormalized. A vertex with no neighbors under any label
    falls back to the uniform prior (documented choice).
    """
    if params.is_root:
        return params.prior.copy()
    sp_edge, connected = _renormalized_sp_edge(params, stats, u)
    if not connected:
        return np.full(params.C, 1.0 / params.C)
    out = np.zeros(params.C)
    for l_pos, l in enumerate(params.layer_subset):
        mix = params.transition[l] @ stats.macro[l][u][:, :, None]  # (A, C, 1)
        out += params.sp_layer[l_pos] * (sp_edge[l_pos] @ mix[:, :, 0])
    return out


def e_step(d, params, stats=None):
    """Expectations of the latent indicators for every vertex of ``d``.

    Returns a :class:`PosteriorTensor`. The reported log-likelihood is
    the sum over vertices of the stable log-normalizer. Vertices whose
    numerators all underflow to zero are clamped to a uniform state
    posterior and counted in ``underflows``.
    """
    x = d.features_concat()
    log_em = params.emission.log_prob(x)  # (N, C)
    N = log_em.shape[0]

    if params.is_root:
        log_num = log_em + xlog(params.prior)[None, :]
        logZ = logsumexp(log_num, axis=1)
        bad = ~np.isfinite(logZ)
        marg = np.empty_like(log_num)
        ok = ~bad
        marg[ok] = np.exp(log_num[ok] - logZ[ok, None])
        if bad.any():
            marg[bad] = 1.0 / params.C
            logZ = np.where(bad, LOG_TINY, logZ)
        tensor = PosteriorTensor((), {}, marg, None, None, logZ.sum(),
                                 isolated=np.zeros(N, dtype=bool),
                                 underflows=int(bad.sum()))
        tensor.validate()
        return tensor

    if stats is None:
        raise ConfigError("deep layers need neighborhood statistics")
    L = len(params.layer_subset)
    A = params.num_labels
    present = stats.counts > 0  # (N, A)
    isolated = ~present.any(axis=1)
    connected = ~isolated

    # per-vertex switching mass over present labels, renormalized
    log_sp_edge = np.full((N, L, A), -np.inf)
    mass = present @ params.sp_edge.T  # (N, L)
    with np.errstate(divide="ignore", invalid="ignore"):
        renorm = params.sp_edge[None, :, :] * present[:, None, :] / mass[:, :, None]
    log_sp_edge[connected] = xlog(renorm[connected])

    log_sp_layer = xlog(params.sp_layer)

    # context term per prior layer: log of sp and transition mixed macro
    log_ctx = {}
    s_layer = np.full((N, params.C, L), -np.inf)
    for l_pos, l in enumerate(params.layer_subset):
        log_T = xlog(params.transition[l])  # (A, C, W)
        log_macro = xlog(stats.macro[l])  # (N, A, W)
        arr = (log_T.transpose(1, 0, 2)[None, :, :, :]
               + log_macro[:, None, :, :]
               + log_sp_edge[:, None, l_pos, :, None]
               + log_sp_layer[l_pos])
        log_ctx[l] = arr  # (N, C, A, W)
        s_layer[:, :, l_pos] = logsumexp(arr.reshape(N, params.C, -1), axis=2)

    ctx_total = logsumexp(s_layer, axis=2)  # (N, C)
    ctx_total[isolated] = -np.log(params.C)  # uniform fallback
    log_num = log_em + ctx_total
    logZ = logsumexp(log_num, axis=1)
    bad = ~np.isfinite(logZ)
    if bad.any():
        logZ = np.where(bad, LOG_TINY, logZ)
    excluded = isolated | bad

    marg_state = np.empty((N, params.C))
    ok = ~bad
    marg_state[ok] = np.exp(log_num[ok] - logZ[ok, None])
    marg_state[bad] = 1.0 / params.C

    joint = {}
    marg_layer = np.exp(log_em[:, :, None] + s_layer - logZ[:, None, None])
    marg_layer[excluded] = 0.0
    marg_edge = np.zeros((N, params.C, L, A))
    for l_pos, l in enumerate(params.layer_subset):
        block = np.exp(log_em[:, :, None, None] + log_ctx[l] - logZ[:, None, None, None])
        block[excluded] = 0.0
        joint[l] = block
        marg_edge[:, :, l_pos, :] = block.sum(axis=3)

    tensor = PosteriorTensor(params.layer_subset, joint, marg_state, marg_layer,
                             marg_edge, logZ.sum(), excluded, int(bad.sum()))
    tensor.validate()
    return tensor


class Accumulator:
    """Sufficient statistics of one epoch, accumulated batch by batch."""

    def __init__(self, params):
        self.params = params
        L, A, C = len(params.layer_subset), params.num_labels, params.C
        self.trans_num = {l: np.zeros_like(params.transition[l])
                          for l in params.layer_subset}
        self.sp_layer_num = np.zeros(L)
        self.sp_edge_num = np.zeros((L, A))
        self.weights = []
        self.features = []
        self.loglik = 0.0
        self.underflows = 0

    def add(self, tensor, x):
        self.loglik += tensor.loglik
        self.underflows += tensor.underflows
        self.weights.append(tensor.marg_state)
        self.features.append(np.asarray(x))
        if not self.params.layer_subset:
            return
        self.sp_layer_num += tensor.marg_layer.sum(axis=(0, 1))
        self.sp_edge_num += tensor.marg_edge.sum(axis=(0, 1))
        for l in self.params.layer_subset:
            # joint is (N, C, A, W); transition blocks are (A, C, W)
            self.trans_num[l] += tensor.joint[l].sum(axis=0).transpose(1, 0, 2)


def m_step(acc):
    """Closed-form maximization from accumulated sufficient statistics.

    Ratios with zero denominators keep the previous parameter value and
    are counted in the ``degenerate`` report of the returned params.
    """
    params = acc.params
    weights = np.vstack(acc.weights)
    x = np.concatenate(acc.features)
    emission, dead_states = params.emission.m_step(weights, x)

    out = params.copy()
    out.emission = emission
    out.degenerate = {"emission": dead_states, "transition_columns": 0}

    if params.is_root:
        out.prior = weights.sum(axis=0) / weights.shape[0]
        out.validate()
        return out

    dead_cols = 0
    for l in params.layer_subset:
        num = acc.trans_num[l]
        denom = num.sum(axis=1, keepdims=True)  # (A, 1, W)
        block = params.transition[l].copy()
        alive = np.broadcast_to(denom > 0, num.shape)
        np.divide(num, np.broadcast_to(denom, num.shape), out=block, where=alive)
        dead_cols += int((denom <= 0).sum())
        out.transition[l] = block
    out.degenerate["transition_columns"] = dead_cols

    total = acc.sp_layer_num.sum()
    if total > 0:
        out.sp_layer = acc.sp_layer_num / total
    if not params.fixed_sp_edge:
        edge_tot = acc.sp_edge_num.sum(axis=1, keepdims=True)
        sp_edge = params.sp_edge.copy()
        np.divide(acc.sp_edge_num, np.broadcast_to(edge_tot, acc.sp_edge_num.shape),
                  out=sp_edge, where=np.broadcast_to(edge_tot > 0, acc.sp_edge_num.shape))
        out.sp_edge = sp_edge
    out.validate()
    return out


def _batches(d, batch_graphs):
    if batch_graphs is None or batch_graphs >= d.num_graphs:
        yield list(range(d.num_graphs))
        return
    for start in range(0, d.num_graphs, batch_graphs):
        yield list(range(start, min(start + batch_graphs, d.num_graphs)))


def _stats_slice(stats, lo, hi):
    if stats is None:
        return None
    from .statistics import LayerStatistics
    macro = {l: stats.macro[l][lo:hi] for l in stats.layer_subset}
    out = LayerStatistics.__new__(LayerStatistics)
    out.layer_subset = stats.layer_subset
    out.macro = macro
    out.counts = stats.counts[lo:hi]
    out.num_labels = stats.num_labels
    out.bottom = stats.bottom
    return out


def train_layer(d, stats, config, params=None):
    """Exact EM until the epoch budget or the improvement threshold.

    The per-epoch log-likelihood trajectory lands in ``params.history``
    and is non-decreasing up to numerical jitter. ``config.threshold``
    of None disables early stopping; a finite value stops once the
    likelihood gain drops to it or below, and infinity therefore stops
    after exactly one EM iteration.
    """
    if params is None:
        kind = config.emission
        data = d.features_concat() if kind == "gaussian" else None
        widths = None
        if config.layer_subset:
            widths = {l: stats.macro[l].shape[2] for l in config.layer_subset}
        params = init_layer(config.C, config.layer_subset, d.edge_alphabet_size,
                            kind, config.seed, config.init,
                            K=d.vertex_alphabet_size or None, data=data,
                            source_widths=widths,
                            sigma_floor_frac=config.sigma_floor_frac)

    offsets = d.offsets
    prev_ll = -np.inf
    for _ in range(config.epochs):
        acc = Accumulator(params)
        for batch in _batches(d, config.batch_graphs):
            view = d.subset(batch)
            lo, hi = offsets[batch[0]], offsets[batch[-1] + 1]
            tensor = e_step(view, params, _stats_slice(stats, lo, hi))
            acc.add(tensor, view.features_concat())
        if not np.isfinite(acc.loglik):
            row = int(np.argmax(~np.isfinite(np.vstack(acc.weights).sum(axis=1))))
            raise NumericalError(f"non-finite likelihood near vertex {row}")
        new_params = m_step(acc)
        new_params.history = params.history + [acc.loglik]
        new_params.layer_index = params.layer_index
        params = new_params
        delta = acc.loglik - prev_ll
        prev_ll = acc.loglik
        if config.threshold is not None and delta <= config.threshold:
            break
    return params


# ---------------------------------------------------------------------------
# Persistence

_PARAM_MAGIC = b"GPRM"
_PARAM_VERSION = 1


def _pack_params(params, prefix=""):
    """Header fields and array blocks of one component, names prefixed."""
    header = {
        "C": params.C,
        "layer_subset": list(params.layer_subset),
        "num_labels": params.num_labels,
        "layer_index": params.layer_index,
        "emission": params.emission.kind,
        "fixed_sp_edge": params.fixed_sp_edge,
        "history": list(params.history),
        "degenerate": dict(params.degenerate),
    }
    arrays = {}
    if params.emission.kind == "categorical":
        arrays[prefix + "emission_probs"] = params.emission.probs
    else:
        header["sigma_floor"] = params.emission.sigma_floor
        arrays[prefix + "emission_mu"] = params.emission.mu
        arrays[prefix + "emission_sigma"] = params.emission.sigma
    if params.is_root:
        arrays[prefix + "prior"] = params.prior
    else:
        arrays[prefix + "sp_layer"] = params.sp_layer
        arrays[prefix + "sp_edge"] = params.sp_edge
        for l in params.layer_subset:
            arrays[prefix + f"transition_{l}"] = params.transition[l]
    return header, arrays


def _unpack_params(header, arrays, prefix=""):
    if header["emission"] == "categorical":
        emission = CategoricalEmission(arrays[prefix + "emission_probs"])
    else:
        emission = GaussianEmission(arrays[prefix + "emission_mu"],
                                    arrays[prefix + "emission_sigma"],
                                    header["sigma_floor"])
    subset = tuple(header["layer_subset"])
    if not subset:
        params = CgmmLayerParams(header["C"], (), header["num_labels"], emission,
                                 prior=arrays[prefix + "prior"],
                                 layer_index=header["layer_index"],
                                 fixed_sp_edge=header["fixed_sp_edge"])
    else:
        transition = {l: arrays[prefix + f"transition_{l}"] for l in subset}
        params = CgmmLayerParams(header["C"], subset, header["num_labels"], emission,
                                 transition=transition,
                                 sp_layer=arrays[prefix + "sp_layer"],
                                 sp_edge=arrays[prefix + "sp_edge"],
                                 layer_index=header["layer_index"],
                                 fixed_sp_edge=header["fixed_sp_edge"])
    params.history = list(header["history"])
    params.degenerate = dict(header["degenerate"])
    return params


def save_params(params, path, component="vertex"):
    """Binary layer-parameter file; exact float round-trip."""
    header, arrays = _pack_params(params)
    header["component"] = component
    write_container(path, _PARAM_MAGIC, _PARAM_VERSION, header, arrays)


def load_params(path):
    header, arrays = read_container(path, _PARAM_MAGIC, _PARAM_VERSION)
    if "components" in header:
        raise FormatError(f"{path}: holds a multi-component layer, "
                          "load it with the edge-aware loader")
    return _unpack_params(header, arrays)


def params_to_json(params):
    """Plain-type view of the distributions, for the inspection surface."""
    header, arrays = _pack_params(params)
    out = dict(header)
    for name, arr in arrays.items():
        out[name] = np.asarray(arr).tolist()
    return out


def infer_layer(d, params, stats=None, mode="continuous", layer=None):
    """Frozen posterior of every vertex under trained parameters.

    Continuous mode stores the normalized E-step state marginal; one-hot
    mode stores the argmax indicator with ties broken toward the lowest
    state index.
    """
    from .statistics import FrozenPosterior
    tensor = e_step(d, params, stats)
    values = tensor.marg_state
    if mode == "one_hot":
        hard = np.zeros_like(values)
        hard[np.arange(values.shape[0]), values.argmax(axis=1)] = 1.0
        values = hard
    elif mode != "continuous":
        raise ConfigError(f"unknown inference mode {mode!r}")
    if layer is None:
        layer = params.layer_index if params.layer_index is not None else 0
    return FrozenPosterior(layer, values, mode)
