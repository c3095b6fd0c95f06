"""Gibbs-sampled mixture layer that sizes itself.

The fixed-width layers elsewhere in the package need their state count
chosen up front; this one grows and shrinks it during training. Vertices
fall into groups keyed by neighborhood (the strongest coordinate of the
mean in-neighbor posterior from the previous layer), every group mixes
over one shared open-ended pool of emission components, and a two-level
stick-breaking prior ties the group mixtures together: group weights
concentrate around a global base vector with strength ``alpha0``, while
``gamma`` controls how much base mass stays aside for states nobody has
used yet.

Training is collapsed Gibbs sampling. Each vertex drops out of the
bookkeeping and redraws its state with weights ``(alpha0 * beta_c +
n_jc) * f(x_u | theta_c)``, plus one extra option proportional to the
unassigned stick mass under a fresh prior draw, which is how new states
are born. Seat bookkeeping (members of a group sit at tables, one served
state per table) tracks exactly the counts the base-weight update needs
and avoids the awkward combinatorial weights of updating the base
directly. Emission rows are redrawn from conjugate posteriors after
every sweep, and both concentrations can be re-estimated the same way.
"""

import numpy as np

from .errors import ConfigError, FormatError, IntegrityError, NumericalError
from .fileio import read_container, write_container
from .numerics import xlog
from .rng import derive
from .statistics import FrozenPosterior

# beta must stay on the positive simplex to this tolerance
BETA_TOL = 1e-9

_LOG_2PI = float(np.log(2.0 * np.pi))

_STATE_MAGIC = b"GHDP"
_STATE_VERSION = 1


class EmissionPrior:
    """Conjugate prior over per-state emission parameters.

    ``dirichlet`` pairs with categorical features: a symmetric prior with
    pseudo-count ``eta`` per symbol. ``normal-gamma`` pairs with scalar
    continuous features in precision form: ``tau ~ Gamma(a0, rate=b0)``
    and ``mu | tau ~ Normal(mu0, 1 / (lam0 * tau))``. The two hyper
    pairs are (shape, rate) of the Gamma hyper-priors used when the
    layer re-estimates its own concentrations.
    """

    KINDS = ("dirichlet", "normal-gamma")

    def __init__(self, kind, eta=1.0, mu0=0.0, lam0=0.01, a0=1.0, b0=1.0,
                 alpha_hyper=(1.0, 0.01), gamma_hyper=(1.0, 0.01)):
        if kind not in self.KINDS:
            raise ConfigError(f"unknown emission prior kind {kind!r}")
        if eta <= 0:
            raise ConfigError(f"symbol pseudo-count must be positive, got {eta}")
        if lam0 <= 0 or a0 <= 0 or b0 <= 0:
            raise ConfigError("lam0, a0 and b0 must all be positive")
        for name, pair in (("alpha_hyper", alpha_hyper), ("gamma_hyper", gamma_hyper)):
            if len(pair) != 2 or pair[0] <= 0 or pair[1] <= 0:
                raise ConfigError(f"{name} must be a positive (shape, rate) pair")
        self.kind = kind
        self.eta = float(eta)
        self.mu0 = float(mu0)
        self.lam0 = float(lam0)
        self.a0 = float(a0)
        self.b0 = float(b0)
        self.alpha_hyper = (float(alpha_hyper[0]), float(alpha_hyper[1]))
        self.gamma_hyper = (float(gamma_hyper[0]), float(gamma_hyper[1]))

    @property
    def emission_kind(self):
        return "categorical" if self.kind == "dirichlet" else "gaussian"

    def sample(self, rng, K=0):
        """One fresh parameter row drawn from the prior."""
        if self.kind == "dirichlet":
            return rng.dirichlet(np.full(K, self.eta))
        tau = rng.gamma(self.a0, 1.0 / self.b0)
        mu = rng.normal(self.mu0, 1.0 / np.sqrt(self.lam0 * tau))
        return np.array([mu, tau])

    def posterior(self, rng, values, K=0):
        """Conjugate posterior draw given one state's member observations.

        The continuous case draws the precision first and the mean at
        that fresh precision; the spread term uses the biased (1/N)
        variance of the members.
        """
        if self.kind == "dirichlet":
            counts = np.bincount(np.asarray(values, dtype=np.int64), minlength=K)
            return rng.dirichlet(self.eta + counts)
        values = np.asarray(values, dtype=np.float64)
        num = values.size
        mean = values.mean()
        spread = values.var()
        lam = self.lam0 + num
        mu = (self.lam0 * self.mu0 + num * mean) / lam
        a = self.a0 + 0.5 * num
        b = self.b0 + 0.5 * (num * spread
                             + self.lam0 * num * (mean - self.mu0) ** 2 / lam)
        tau = rng.gamma(a, 1.0 / b)
        return np.array([rng.normal(mu, 1.0 / np.sqrt(lam * tau)), tau])

    def as_header(self):
        return {"kind": self.kind, "eta": self.eta, "mu0": self.mu0,
                "lam0": self.lam0, "a0": self.a0, "b0": self.b0,
                "alpha_hyper": list(self.alpha_hyper),
                "gamma_hyper": list(self.gamma_hyper)}

    @classmethod
    def from_header(cls, header):
        return cls(header["kind"], eta=header["eta"], mu0=header["mu0"],
                   lam0=header["lam0"], a0=header["a0"], b0=header["b0"],
                   alpha_hyper=tuple(header["alpha_hyper"]),
                   gamma_hyper=tuple(header["gamma_hyper"]))


def default_prior(view):
    """Data-driven default: uniform symbol prior, or a continuous prior
    centered on the sample moments with a weak mean attachment."""
    if view.kind == "categorical":
        return EmissionPrior("dirichlet", eta=1.0)
    x = view.x
    spread = float(x.var()) if x.size else 1.0
    return EmissionPrior("normal-gamma",
                         mu0=float(x.mean()) if x.size else 0.0,
                         lam0=0.01, a0=1.0, b0=max(spread, 1e-6))


class LayerView:
    """Flat per-vertex observations for one layer plus the group split.

    ``x`` concatenates the vertex features of every graph in dataset
    order, ``offsets`` are the graph boundaries, ``groups[u]`` the
    deterministic group of vertex u. ``K`` is the symbol alphabet size,
    zero for continuous features.
    """

    __slots__ = ("x", "offsets", "groups", "num_groups", "layer", "K")

    def __init__(self, x, offsets, groups, num_groups, layer, K=0):
        self.x = np.asarray(x)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.groups = np.asarray(groups, dtype=np.int64)
        self.num_groups = int(num_groups)
        self.layer = int(layer)
        self.K = int(K)
        if self.groups.shape != self.x.shape[:1]:
            raise ConfigError("one group per vertex required")
        if self.groups.size and not (0 <= self.groups.min()
                                     and self.groups.max() < self.num_groups):
            raise ConfigError("vertex group outside 0..num_groups-1")

    @property
    def kind(self):
        return "categorical" if self.K else "gaussian"

    @property
    def num_vertices(self):
        return self.x.shape[0]

    @property
    def num_graphs(self):
        return self.offsets.size - 1


def select_group(u, frozen_rows, index):
    """Group of one vertex: argmax of its mean in-neighbor posterior.

    ``frozen_rows`` holds the previous layer's posterior row of every
    vertex in the same graph, ``index`` that graph's neighbor index.
    Ties break toward the lower state index; a vertex with no inbound
    arcs lands in group 0. Pure: nothing is sampled or mutated.
    """
    segments = [index.segment(u, a) for a in range(index.num_labels)]
    inbound = np.concatenate(segments) if segments else np.zeros(0, dtype=np.int64)
    if inbound.size == 0:
        return 0
    return int(np.argmax(frozen_rows[inbound].sum(axis=0)))


def select_groups(d, frozen=None):
    """Deterministic group of every vertex of the dataset.

    Returns ``(groups, num_groups)``. With no previous layer there is a
    single group 0. Otherwise the group is the strongest coordinate of
    the mean posterior over in-neighbors; scaling by the in-degree never
    moves the argmax, so the sums are compared directly.
    """
    total = d.total_vertices
    if frozen is None:
        return np.zeros(total, dtype=np.int64), 1
    acc = np.zeros((total, frozen.width))
    deg = np.zeros(total, dtype=np.int64)
    for gi, g in enumerate(d.graphs):
        base = d.offsets[gi]
        deg[base:base + g.num_vertices] = g.in_degree()
        if g.arcs.shape[0]:
            rows = frozen.for_graph(d, gi)
            np.add.at(acc, base + g.arcs[:, 1], rows[g.arcs[:, 0]])
    groups = np.zeros(total, dtype=np.int64)
    has = deg > 0
    groups[has] = np.argmax(acc[has], axis=1)
    return groups, frozen.width


def make_view(d, frozen=None):
    """Bundle a dataset and its previous-layer posterior for sampling."""
    groups, num_groups = select_groups(d, frozen)
    layer = 0 if frozen is None else frozen.layer + 1
    K = d.vertex_alphabet_size if d.feature_kind == "categorical" else 0
    return LayerView(d.features_concat(), d.offsets, groups, num_groups,
                     layer, K=K)


class HdpState:
    """Complete sampler state of one self-sizing layer.

    Dense over the current ``C`` states: ``beta`` carries one extra
    trailing entry holding the unassigned stick mass, ``n`` and ``m``
    are (num_groups, C) member and occupied-table counts, ``theta`` one
    emission row per state (symbol distributions, or (mean, precision)
    pairs). ``tables[j]`` is a list of mutable ``[state, occupancy]``
    seats; ``t[u]`` indexes into the list of u's group. Unassigned
    vertices hold -1 in both ``q`` and ``t``.
    """

    def __init__(self, groups, num_groups, prior, K, alpha0, gamma, rng):
        self.groups = np.asarray(groups, dtype=np.int64)
        self.num_groups = int(num_groups)
        if self.groups.size and not (0 <= self.groups.min()
                                     and self.groups.max() < self.num_groups):
            raise ConfigError("vertex group outside 0..num_groups-1")
        if alpha0 < 0:
            raise ConfigError(f"alpha0 must be nonnegative, got {alpha0}")
        if gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {gamma}")
        self.prior = prior
        self.K = int(K)
        self.alpha0 = float(alpha0)
        self.gamma = float(gamma)
        self.rng = rng
        total = self.groups.size
        self.q = np.full(total, -1, dtype=np.int64)
        self.t = np.full(total, -1, dtype=np.int64)
        self.beta = np.ones(1)
        width = self.K if prior.kind == "dirichlet" else 2
        self.theta = np.zeros((0, width))
        self.n = np.zeros((self.num_groups, 0), dtype=np.int64)
        self.m = np.zeros((self.num_groups, 0), dtype=np.int64)
        self.tables = [[] for _ in range(self.num_groups)]
        self.history = []

    @property
    def C(self):
        return self.theta.shape[0]

    @property
    def num_vertices(self):
        return self.q.size

    def copy(self):
        """Independent deep copy, cloned rng position included."""
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        out = HdpState(self.groups.copy(), self.num_groups, self.prior,
                       self.K, self.alpha0, self.gamma, rng)
        out.q = self.q.copy()
        out.t = self.t.copy()
        out.beta = self.beta.copy()
        out.theta = self.theta.copy()
        out.n = self.n.copy()
        out.m = self.m.copy()
        out.tables = [[list(tb) for tb in pool] for pool in self.tables]
        out.history = [dict(h) for h in self.history]
        return out

    def check(self):
        """Assert every bookkeeping invariant, raising with a dump.

        Meant for sweep boundaries; mid-sweep the counters of a vacated
        vertex legitimately disagree.
        """
        problems = []
        assigned = self.q >= 0
        if int(self.n.sum()) != int(assigned.sum()):
            problems.append(f"n sums to {int(self.n.sum())}, "
                            f"{int(assigned.sum())} vertices assigned")
        recount = np.zeros_like(self.n)
        if assigned.any():
            if self.q.max() >= self.C:
                problems.append("assignment beyond the kept states")
            else:
                np.add.at(recount, (self.groups[assigned], self.q[assigned]), 1)
                if not np.array_equal(recount, self.n):
                    problems.append("n disagrees with the per-vertex assignments")
        for j in range(self.num_groups):
            pool = self.tables[j]
            served = np.zeros(self.C, dtype=np.int64)
            seats = np.zeros(self.C, dtype=np.int64)
            for c, occ in pool:
                if not 0 <= c < self.C:
                    problems.append(f"group {j}: table serves unknown state {c}")
                    continue
                if occ < 0:
                    problems.append(f"group {j}: negative occupancy {occ}")
                if occ > 0:
                    served[c] += 1
                seats[c] += occ
            if self.m.shape[1] == self.C and not np.array_equal(served, self.m[j]):
                problems.append(f"group {j}: m={self.m[j].tolist()} but "
                                f"occupied tables are {served.tolist()}")
            if self.n.shape[1] == self.C and not np.array_equal(seats, self.n[j]):
                problems.append(f"group {j}: seat totals {seats.tolist()} "
                                f"disagree with n={self.n[j].tolist()}")
            members = np.flatnonzero((self.groups == j) & assigned)
            if members.size:
                ti = self.t[members]
                if ti.min() < 0 or ti.max() >= len(pool):
                    problems.append(f"group {j}: seat index out of range")
                else:
                    dish = np.array([c for c, _occ in pool], dtype=np.int64)
                    if not np.array_equal(dish[ti], self.q[members]):
                        problems.append(f"group {j}: some member sits at a table "
                                        "serving a different state")
        totals = self.n.sum(axis=0)
        if self.C and totals.min() <= 0:
            empty = np.flatnonzero(totals == 0).tolist()
            problems.append(f"memberless state(s) {empty} kept")
        if self.beta.shape != (self.C + 1,):
            problems.append(f"beta has {self.beta.size} entries, wanted {self.C + 1}")
        elif self.beta.min() <= 0 or abs(self.beta.sum() - 1.0) > BETA_TOL:
            problems.append(f"beta off the simplex: sum={self.beta.sum()!r}, "
                            f"min={self.beta.min()!r}")
        if self.prior.kind == "dirichlet":
            if self.C and (self.theta.min() < 0
                           or np.abs(self.theta.sum(axis=1) - 1.0).max() > BETA_TOL):
                problems.append("a symbol distribution row left the simplex")
        elif self.C and self.theta[:, 1].min() <= 0:
            problems.append("a state has nonpositive precision")
        if problems:
            dump = (f"C={self.C} V={self.num_vertices} J={self.num_groups} "
                    f"alpha0={self.alpha0!r} gamma={self.gamma!r} "
                    f"n_totals={totals.tolist()}")
            raise IntegrityError("sampler bookkeeping inconsistent:\n  "
                                 + "\n  ".join(problems) + "\n  " + dump)


def _theta_log_like(prior, theta, xs):
    """(len(xs), C) log emission densities, vectorized both ways."""
    if theta.shape[0] == 0:
        return np.zeros((len(xs), 0))
    if prior.kind == "dirichlet":
        return xlog(theta[:, np.asarray(xs, dtype=np.int64)].T)
    mu, tau = theta[:, 0], theta[:, 1]
    z = np.asarray(xs, dtype=np.float64)[:, None] - mu
    return 0.5 * (np.log(tau) - _LOG_2PI) - 0.5 * tau * z * z


def _theta_log_like_one(prior, theta, x):
    """(C,) log emission densities of a single observation."""
    if prior.kind == "dirichlet":
        return xlog(theta[:, int(x)])
    mu, tau = theta[:, 0], theta[:, 1]
    z = float(x) - mu
    return 0.5 * (np.log(tau) - _LOG_2PI) - 0.5 * tau * z * z


def _choose(cs, unit):
    """Index drawn from a cumulative weight row given one uniform draw.

    side="right" skips zero-weight entries, whose cumulative value
    repeats the previous one. Shared by both sweep flavors so that a
    batch of one vertex replays the sequential draw bit for bit.
    """
    return min(int(np.searchsorted(cs, unit * cs[-1], side="right")), cs.size - 1)


def _log_pick(rng, logw):
    top = logw.max()
    if not np.isfinite(top):
        raise NumericalError("every candidate state has zero probability")
    return _choose(np.cumsum(np.exp(logw - top)), rng.random())


def _append_state(state, theta_row):
    # one stick break: Beta(1, gamma) cut of the unassigned mass
    cut = state.rng.beta(1.0, state.gamma)
    rest = state.beta[-1]
    state.beta = np.concatenate([state.beta[:-1], [cut * rest, (1.0 - cut) * rest]])
    state.theta = np.vstack([state.theta, np.asarray(theta_row)[None, :]])
    pad = np.zeros((state.num_groups, 1), dtype=np.int64)
    state.n = np.concatenate([state.n, pad], axis=1)
    state.m = np.concatenate([state.m, pad], axis=1)


def sample_dish(u, state, x):
    """Redraw the state of vertex u and record it in the counts.

    The caller must already have removed u's old membership from ``n``.
    Existing states weigh ``(alpha0 * beta_c + n_jc) * f(x | theta_c)``;
    one extra candidate weighs ``alpha0`` times the unassigned stick
    mass under parameters drawn fresh from the prior, and keeping it is
    what creates a state. The fresh draw happens up front either way so
    the rng stream does not depend on the outcome.
    """
    j = state.groups[u]
    theta_new = state.prior.sample(state.rng, state.K)
    logw = np.empty(state.C + 1)
    logw[:-1] = (xlog(state.alpha0 * state.beta[:-1] + state.n[j])
                 + _theta_log_like_one(state.prior, state.theta, x))
    logw[-1] = (xlog(state.alpha0 * state.beta[-1])
                + float(_theta_log_like_one(state.prior, theta_new[None, :], x)[0]))
    c = _log_pick(state.rng, logw)
    if c == state.C:
        _append_state(state, theta_new)
    state.q[u] = c
    state.n[j, c] += 1
    return c


def sample_table(u, state):
    """Seat vertex u at a table of its group serving its current state.

    The caller must already have vacated u's old seat. Existing tables
    weigh by occupancy, a fresh one by ``alpha0 * beta_c``; opening it
    bumps ``m``. The winner's occupancy is incremented here.
    """
    j = state.groups[u]
    c = state.q[u]
    pool = state.tables[j]
    cand = [ti for ti, tb in enumerate(pool) if tb[0] == c]
    w = np.empty(len(cand) + 1)
    for k, ti in enumerate(cand):
        w[k] = pool[ti][1]
    w[-1] = state.alpha0 * state.beta[c]
    cs = np.cumsum(w)
    if cs[-1] <= 0:
        raise NumericalError("no seat has positive probability")
    k = _choose(cs, state.rng.random())
    if k == len(cand):
        pool.append([int(c), 0])
        state.m[j, c] += 1
        ti = len(pool) - 1
    else:
        ti = cand[k]
    pool[ti][1] += 1
    state.t[u] = ti
    return ti


def sample_beta(state):
    """Redraw the base weights from the occupied-table counts.

    Dirichlet over the per-state table totals with ``gamma`` on the
    unassigned entry. Coordinates that underflow to zero are floored at
    the smallest positive double so downstream logs stay finite.
    """
    conc = np.concatenate([state.m.sum(axis=0), [state.gamma]]).astype(np.float64)
    if conc[:-1].min(initial=np.inf) <= 0:
        raise IntegrityError("a kept state owns no occupied table")
    draw = np.maximum(state.rng.dirichlet(conc), np.finfo(np.float64).tiny)
    state.beta = draw / draw.sum()
    return state.beta


def sample_emissions(state, view):
    """Redraw every state's emission row from its conjugate posterior,
    in ascending state order."""
    for c in range(state.C):
        values = view.x[state.q == c]
        if values.size == 0:
            raise IntegrityError(f"state {c} reached the emission update "
                                 "with no members")
        state.theta[c] = state.prior.posterior(state.rng, values, state.K)
    return state.theta


def sample_alpha0(state):
    """Auxiliary-variable redraw of the group-level concentration.

    One (Beta, Bernoulli) pair per nonempty group in ascending group
    order, then a Gamma whose shape drops by the flag total and whose
    rate absorbs the log Beta draws. With no members anywhere this is a
    draw straight from the hyper-prior.
    """
    shape, rate = state.prior.alpha_hyper
    shape += float(state.m.sum())
    for nj in state.n.sum(axis=1):
        nj = float(nj)
        if nj <= 0:
            continue
        w = state.rng.beta(state.alpha0 + 1.0, nj)
        if state.rng.random() < nj / (nj + state.alpha0):
            shape -= 1.0
        rate -= np.log(w)
    state.alpha0 = float(state.rng.gamma(shape, 1.0 / rate))
    return state.alpha0


def sample_gamma(state):
    """Auxiliary-variable redraw of the top-level concentration.

    A single (Beta, Bernoulli) pair against the occupied-table total,
    then a Gamma whose shape grows with the state count. With no tables
    this is a draw straight from the hyper-prior.
    """
    shape, rate = state.prior.gamma_hyper
    shape += float(state.C)
    total = float(state.m.sum())
    if total > 0:
        r = state.rng.beta(state.gamma + 1.0, total)
        if state.rng.random() < total / (total + state.gamma):
            shape -= 1.0
        rate -= np.log(r)
    state.gamma = float(state.rng.gamma(shape, 1.0 / rate))
    return state.gamma


def _prune(state):
    """Drop empty tables, then states with no members anywhere.

    Seats and state labels are re-indexed in place; a dead state's base
    weight folds back into the unassigned entry. Survivors keep their
    relative order. Returns the number of states removed.
    """
    for j in range(state.num_groups):
        pool = state.tables[j]
        if all(occ > 0 for _c, occ in pool):
            continue
        remap = np.full(len(pool), -1, dtype=np.int64)
        kept = []
        for ti, (c, occ) in enumerate(pool):
            if occ > 0:
                remap[ti] = len(kept)
                kept.append([c, occ])
            else:
                state.m[j, c] -= 1
        state.tables[j] = kept
        members = np.flatnonzero((state.groups == j) & (state.t >= 0))
        if members.size:
            state.t[members] = remap[state.t[members]]
    totals = state.n.sum(axis=0)
    dead = np.flatnonzero(totals == 0)
    if dead.size == 0:
        return 0
    keep = np.flatnonzero(totals > 0)
    relabel = np.full(state.C, -1, dtype=np.int64)
    relabel[keep] = np.arange(keep.size)
    state.theta = state.theta[keep]
    state.n = state.n[:, keep]
    state.m = state.m[:, keep]
    state.beta = np.concatenate([state.beta[keep],
                                 [state.beta[-1] + state.beta[dead].sum()]])
    held = state.q >= 0
    state.q[held] = relabel[state.q[held]]
    for pool in state.tables:
        for tb in pool:
            tb[0] = int(relabel[tb[0]])
    return int(dead.size)


def _assigned_loglik(view, state):
    rows = _theta_log_like(state.prior, state.theta, view.x)
    return float(rows[np.arange(state.num_vertices), state.q].sum())


def _check_view(view, state):
    if (view.num_vertices != state.num_vertices
            or not np.array_equal(view.groups, state.groups)):
        raise ConfigError("view does not match the trained state's "
                          "vertices or groups")


def _finish_sweep(view, state, auto, born):
    died = _prune(state)
    sample_beta(state)
    sample_emissions(state, view)
    if auto:
        sample_alpha0(state)
        sample_gamma(state)
    state.history.append({
        "C": int(state.C), "born": int(born), "died": int(died),
        "tables": int(sum(len(pool) for pool in state.tables)),
        "alpha0": state.alpha0, "gamma": state.gamma,
        "loglik": _assigned_loglik(view, state),
    })
    state.check()


def gibbs_sweep_exact(view, state, auto=False):
    """One sequential pass over every vertex in dataset order.

    Per vertex: leave the counts, redraw the state (possibly creating
    one), vacate the old seat, take a new one. Afterwards empty tables
    and memberless states are dropped, the base weights and emission
    rows are redrawn, with ``auto`` both concentrations too, and the
    bookkeeping is validated before returning.
    """
    _check_view(view, state)
    born = 0
    for u in range(state.num_vertices):
        j = state.groups[u]
        if state.q[u] >= 0:
            state.n[j, state.q[u]] -= 1
        before = state.C
        sample_dish(u, state, view.x[u])
        born += state.C - before
        if state.t[u] >= 0:
            state.tables[j][state.t[u]][1] -= 1
        sample_table(u, state)
    _finish_sweep(view, state, auto, born)
    return state


def gibbs_sweep_fast(view, state, auto=False):
    """One pass redrawing whole graphs at a time.

    A graph's vertices all leave the counts together and their state
    weights are computed against that one snapshot, with a single
    shared fresh candidate: at most one state is born per graph and
    every innovator in the batch joins it. Commits and reseating then
    run vertex by vertex. On one-vertex graphs this replays the exact
    sweep draw for draw.
    """
    _check_view(view, state)
    rng = state.rng
    born = 0
    for gi in range(view.num_graphs):
        lo, hi = int(view.offsets[gi]), int(view.offsets[gi + 1])
        if lo == hi:
            continue
        batch = np.arange(lo, hi)
        groups = state.groups[batch]
        old = state.q[batch]
        held = old >= 0
        if held.any():
            np.subtract.at(state.n, (groups[held], old[held]), 1)
            for u in batch[held]:
                state.tables[state.groups[u]][state.t[u]][1] -= 1
        theta_new = state.prior.sample(rng, state.K)
        logw = np.empty((batch.size, state.C + 1))
        logw[:, :-1] = (xlog(state.alpha0 * state.beta[None, :-1]
                             + state.n[groups])
                        + _theta_log_like(state.prior, state.theta, view.x[batch]))
        logw[:, -1] = (xlog(state.alpha0 * state.beta[-1])
                       + _theta_log_like(state.prior, theta_new[None, :],
                                         view.x[batch])[:, 0])
        units = rng.random(batch.size)
        top = logw.max(axis=1, keepdims=True)
        if not np.isfinite(top).all():
            raise NumericalError("every candidate state has zero probability")
        cum = np.cumsum(np.exp(logw - top), axis=1)
        picks = np.empty(batch.size, dtype=np.int64)
        for k in range(batch.size):
            picks[k] = _choose(cum[k], units[k])
        if (picks == state.C).any():
            _append_state(state, theta_new)
            born += 1
        state.q[batch] = picks
        np.add.at(state.n, (groups, picks), 1)
        for u in batch:
            sample_table(u, state)
    _finish_sweep(view, state, auto, born)
    return state


def infer_icgmm(view, state, mode="continuous"):
    """Freeze per-vertex state distributions out of trained bookkeeping.

    State c weighs ``(alpha0 * beta_c + n_jc) * f(x_u | theta_c)`` over
    the kept states only; nothing new can be born here and the stored
    counts are left untouched, so unseen data flows through the same
    way as training data. Rows with no admissible state fall back to
    uniform. ``one_hot`` keeps the argmax instead.
    """
    if state.C == 0:
        raise ConfigError("nothing trained: the state holds no components")
    if mode not in ("continuous", "one_hot"):
        raise ConfigError(f"unknown posterior mode {mode!r}")
    if view.groups.size and view.groups.max() >= state.num_groups:
        raise ConfigError("view group outside the trained group range")
    if (view.K > 0) != (state.prior.kind == "dirichlet"):
        raise ConfigError("feature kind does not match the trained prior")
    if view.K and view.K != state.K:
        raise ConfigError(f"alphabet size {view.K} differs from the "
                          f"trained {state.K}")
    logw = (xlog(state.alpha0 * state.beta[None, :-1]
                 + state.n[view.groups].astype(np.float64))
            + _theta_log_like(state.prior, state.theta, view.x))
    top = logw.max(axis=1, keepdims=True)
    values = np.full(logw.shape, 1.0 / state.C)
    ok = np.isfinite(top[:, 0])
    if ok.any():
        w = np.exp(logw[ok] - top[ok])
        values[ok] = w / w.sum(axis=1, keepdims=True)
    if mode == "one_hot":
        hot = np.zeros_like(values)
        hot[np.arange(values.shape[0]), values.argmax(axis=1)] = 1.0
        values = hot
    return FrozenPosterior(view.layer, values, mode)


def seed_assignments(view, k):
    """Deterministic k-way pre-assignment used to start from k states.

    Continuous features are rank-binned into k equal-mass slices,
    categorical ones take their symbol modulo k; bins that catch no
    vertex are dropped, so fewer than k states can come out.
    """
    if k <= 0 or k > view.num_vertices:
        raise ConfigError(f"seed state count must be in 1..{view.num_vertices}")
    if view.kind == "categorical":
        raw = view.x.astype(np.int64) % k
    else:
        order = np.argsort(view.x, kind="stable")
        raw = np.empty(view.num_vertices, dtype=np.int64)
        raw[order] = (np.arange(view.num_vertices) * k) // view.num_vertices
    _used, dense = np.unique(raw, return_inverse=True)
    return dense.astype(np.int64)


def adopt_assignments(state, view, assignments):
    """Load a full assignment into a fresh state.

    Every occupied (group, state) pair gets exactly one table holding
    all its members; base weights and emission rows are then drawn in
    the same order a sweep tail uses.
    """
    if state.C or (state.q >= 0).any():
        raise ConfigError("assignments can only seed an untouched state")
    assignments = np.asarray(assignments, dtype=np.int64)
    if assignments.shape != state.q.shape or assignments.min() < 0:
        raise ConfigError("need one nonnegative seed state per vertex")
    C = int(assignments.max()) + 1
    width = state.K if state.prior.kind == "dirichlet" else 2
    state.q = assignments.copy()
    state.theta = np.zeros((C, width))
    state.n = np.zeros((state.num_groups, C), dtype=np.int64)
    state.m = np.zeros((state.num_groups, C), dtype=np.int64)
    np.add.at(state.n, (state.groups, state.q), 1)
    state.tables = [[] for _ in range(state.num_groups)]
    seat = {}
    for j in range(state.num_groups):
        for c in np.flatnonzero(state.n[j]):
            seat[(j, int(c))] = len(state.tables[j])
            state.tables[j].append([int(c), int(state.n[j, c])])
            state.m[j, c] = 1
    for u in range(state.num_vertices):
        state.t[u] = seat[(int(state.groups[u]), int(state.q[u]))]
    sample_beta(state)
    sample_emissions(state, view)
    state.check()
    return state


class IcgmmConfig:
    """Training knobs for one self-sizing layer.

    ``burn_in`` switches the export from the final sweep's posterior to
    an average over the post-burn-in sweeps, ``thin`` keeping every
    thin-th of them. ``init_states`` seeds that many states before the
    first sweep instead of starting empty.
    """

    def __init__(self, sweeps=20, seed=0, alpha0=1.0, gamma=1.0, auto=False,
                 mode="exact", prior=None, init_states=0, burn_in=0, thin=1,
                 export="continuous"):
        self.sweeps = int(sweeps)
        self.seed = int(seed)
        self.alpha0 = float(alpha0)
        self.gamma = float(gamma)
        self.auto = bool(auto)
        self.mode = mode
        self.prior = prior
        self.init_states = int(init_states)
        self.burn_in = int(burn_in)
        self.thin = int(thin)
        self.export = export


def train_icgmm_layer(d, frozen, config, state=None):
    """Run Gibbs sweeps over a dataset and freeze the resulting layer.

    ``frozen`` is the previous layer's exported posterior, None at the
    root. Passing a checkpointed ``state`` continues its chain for
    another ``config.sweeps`` sweeps instead of starting fresh. Returns
    ``(state, posterior)``; per-sweep diagnostics accumulate in
    ``state.history``.

    With ``burn_in`` the export averages the thinned posteriors of the
    trailing stretch of sweeps over which no state was born or died
    (state labels only stay comparable across such sweeps); the final
    sweep is always included.
    """
    if config.sweeps <= 0:
        raise ConfigError("sweeps must be positive: nothing would be trained")
    if config.mode not in ("exact", "fast"):
        raise ConfigError(f"unknown sweep mode {config.mode!r}")
    if config.export not in ("continuous", "one_hot"):
        raise ConfigError(f"unknown export mode {config.export!r}")
    if config.burn_in < 0 or config.thin < 1:
        raise ConfigError("burn_in must be nonnegative and thin positive")
    if config.burn_in and config.export == "one_hot":
        raise ConfigError("averaged export needs continuous posteriors")
    view = make_view(d, frozen)
    start = len(state.history) if state is not None else 0
    if config.burn_in and config.burn_in >= start + config.sweeps:
        raise ConfigError("burn_in consumes every sweep")
    if state is None:
        prior = config.prior if config.prior is not None else default_prior(view)
        if prior.emission_kind != view.kind:
            raise ConfigError(f"{prior.kind!r} prior cannot model "
                              f"{view.kind} features")
        rng = derive(config.seed, "gibbs", view.layer)
        state = HdpState(view.groups, view.num_groups, prior, view.K,
                         config.alpha0, config.gamma, rng)
        if config.init_states:
            adopt_assignments(state, view, seed_assignments(view, config.init_states))
    else:
        _check_view(view, state)
    sweep = gibbs_sweep_exact if config.mode == "exact" else gibbs_sweep_fast
    collected = []
    for s in range(config.sweeps):
        sweep(view, state, auto=config.auto)
        if not config.burn_in:
            continue
        last = state.history[-1]
        if last["born"] or last["died"]:
            collected = []
        done = start + s + 1
        due = done > config.burn_in and (done - config.burn_in - 1) % config.thin == 0
        if due or (s == config.sweeps - 1 and not collected):
            collected.append(infer_icgmm(view, state).values)
    if config.burn_in:
        values = np.stack(collected).mean(axis=0)
        values /= values.sum(axis=1, keepdims=True)
        post = FrozenPosterior(view.layer, values)
    elif config.export == "one_hot":
        rows = np.zeros((state.num_vertices, state.C))
        rows[np.arange(state.num_vertices), state.q] = 1.0
        post = FrozenPosterior(view.layer, rows, "one_hot")
    else:
        post = infer_icgmm(view, state)
    return state, post


def save_state(state, path):
    """Checkpoint the whole sampler state, rng position included."""
    header = {
        "num_groups": state.num_groups,
        "K": state.K,
        "alpha0": state.alpha0,
        "gamma": state.gamma,
        "C": state.C,
        "prior": state.prior.as_header(),
        "tables": [[[int(c), int(occ)] for c, occ in pool]
                   for pool in state.tables],
        "history": state.history,
        "rng": state.rng.bit_generator.state,
    }
    arrays = {"beta": state.beta, "theta": state.theta, "n": state.n,
              "m": state.m, "q": state.q, "t": state.t,
              "groups": state.groups}
    write_container(path, _STATE_MAGIC, _STATE_VERSION, header, arrays)


def load_state(path):
    """Restore a checkpoint; the chain continues exactly where it was."""
    header, arrays = read_container(path, _STATE_MAGIC, _STATE_VERSION)
    rng_state = header["rng"]
    kind = rng_state.get("bit_generator")
    maker = getattr(np.random, str(kind), None)
    if maker is None:
        raise FormatError(f"{path}: unsupported rng kind {kind!r}")
    rng = np.random.Generator(maker())
    rng.bit_generator.state = rng_state
    state = HdpState(arrays["groups"], header["num_groups"],
                     EmissionPrior.from_header(header["prior"]), header["K"],
                     header["alpha0"], header["gamma"], rng)
    state.beta = arrays["beta"]
    state.theta = arrays["theta"]
    state.n = arrays["n"]
    state.m = arrays["m"]
    state.q = arrays["q"]
    state.t = arrays["t"]
    state.tables = [[[int(c), int(occ)] for c, occ in pool]
                    for pool in header["tables"]]
    state.history = list(header["history"])
    if state.C != header["C"]:
        raise FormatError(f"{path}: header claims {header['C']} states, "
                          f"blocks hold {state.C}")
    state.check()
    return state
