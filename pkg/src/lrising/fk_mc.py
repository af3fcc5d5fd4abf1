"""Long-range FK-Ising Monte Carlo by Edwards-Sokal alternation.

One sweep resamples spins given bonds (a fair sign per cluster, the ghost
cluster forced to +) and then bonds given spins (each agreeing pair open
independently with p = 1 - exp(-2 beta J)).  Both half-steps are exact Gibbs
updates of the joint Edwards-Sokal measure, so its bond marginal, the FK
measure, is invariant.

Long-range bonds are drawn as a Poisson process over displacement classes:
class delta carries rate 2 beta J_delta per pair, so a pair is hit at least
once with probability p.  Drawing the number of hits and then a class from an
alias table costs O(number of hits) rather than O(|E|).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .lattice import LatticeBox
from .model import CouplingModel, coupling, fk_probability, ghost_couplings
from .oracle import EventContext, FiniteGraph
from .rng import AliasTable, default_seed, make_rng
from .stats import Estimate, estimate_series, exact_estimate, merge_estimates


@dataclass(frozen=True)
class McConfig:
    model: CouplingModel
    beta: float
    N: int
    bc: str = "free"
    sweeps: int = 4000
    burn_in: int = 400
    seed: int = field(default_factory=default_seed)
    batch_count: int = 16
    chains: int = 1
    outer_radius: int | None = None

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.bc not in ("free", "plus"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if not self.sweeps > self.burn_in >= 0:
            raise ValueError("need sweeps > burn_in >= 0")
        if self.batch_count < 8:
            raise ValueError("batch_count must be at least 8")
        if self.sweeps - self.burn_in < self.batch_count:
            raise ValueError("fewer measured sweeps than batches")
        if self.chains < 1:
            raise ValueError("need at least one chain")

    @property
    def box(self) -> LatticeBox:
        return LatticeBox(self.model.d, self.N)


# --- bond tables ------------------------------------------------------------


class BondTable:
    n_sites: int
    ghost: bool

    def sample_bonds(self, rng, spins) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class BoxBondTable(BondTable):
    """Poisson thinning over displacement classes of a box, plus ghost bonds."""

    def __init__(self, model: CouplingModel, beta: float, box: LatticeBox, bc="free",
                 outer_radius=None, max_range=None):
        self.model, self.beta, self.box = model, beta, box
        d, N = box.d, box.N
        R = 2 * N if max_range is None else min(2 * N, max_range)
        disp = LatticeBox(d, R).points
        # one representative per pair: first nonzero coordinate positive
        nz = disp != 0
        first = np.argmax(nz, axis=1)
        lead = disp[np.arange(len(disp)), first]
        disp = disp[nz.any(axis=1) & (lead > 0)]
        self.displacements = disp
        self.pair_counts = np.prod(box.side - np.abs(disp), axis=1).astype(float)
        self.J = coupling(model, disp) if len(disp) else np.zeros(0)
        self.rates = 2.0 * beta * self.J
        weights = self.pair_counts * self.rates
        self.total_rate = float(weights.sum())
        self.alias = AliasTable(weights) if len(weights) else None
        self.n_sites = box.volume
        self.ghost = bc == "plus"
        self.ghost_J = np.zeros(self.n_sites)
        self.ghost_tail_bound = 0.0
        if self.ghost:
            self.ghost_J, self.ghost_tail_bound = ghost_couplings(model, box.points, outer_radius)
        self.ghost_p = fk_probability(beta, self.ghost_J)

    def expected_open_bonds(self) -> float:
        """sum of p_e over all box pairs (and ghost edges), i.e. E|open| when all spins agree."""
        return math.fsum(self.pair_counts * fk_probability(self.beta, self.J)) + math.fsum(
            self.ghost_p if self.ghost else [])

    def sample_bonds(self, rng, spins):
        box = self.box
        k = rng.poisson(self.total_rate) if self.total_rate > 0 else 0
        us, vs = [np.zeros(0, np.int64)], [np.zeros(0, np.int64)]
        if k:
            cls = self.alias.draw(rng, k)
            delta = self.displacements[cls]
            count = box.side - np.abs(delta)
            lo = -box.N + np.maximum(-delta, 0)
            start = lo + np.floor(rng.random(delta.shape) * count).astype(np.int64)
            a = box.indices(start)
            b = box.indices(start + delta)
            keep = spins[a] == spins[b]
            key = np.unique(a[keep] * self.n_sites + b[keep])
            us.append(key // self.n_sites)
            vs.append(key % self.n_sites)
        if self.ghost:
            open_g = np.flatnonzero((rng.random(self.n_sites) < self.ghost_p) & (spins[:self.n_sites] == 1))
            us.append(open_g)
            vs.append(np.full(len(open_g), self.n_sites, np.int64))
        return np.concatenate(us), np.concatenate(vs)


class EdgeListBondTable(BondTable):
    """Per-edge Bernoulli bonds on an explicit finite graph."""

    def __init__(self, graph: FiniteGraph, beta: float):
        self.graph = graph
        self.n_sites = graph.n_sites
        self.ghost = graph.ghost
        self.p = fk_probability(beta, graph.J)

    def sample_bonds(self, rng, spins):
        g = self.graph
        hit = (rng.random(g.n_edges) < self.p) & (spins[g.u] == spins[g.v])
        return g.u[hit], g.v[hit]


def build_bond_tables(model: CouplingModel, beta: float, box: LatticeBox, bc="free", outer_radius=None,
                      max_range=None) -> BoxBondTable:
    return BoxBondTable(model, beta, box, bc, outer_radius, max_range)


# --- states and sweeps ------------------------------------------------------


def _labels(n_vertices, u, v) -> np.ndarray:
    if len(u) == 0:
        return np.arange(n_vertices)
    adj = coo_matrix((np.ones(len(u), dtype=np.int8), (u, v)), shape=(n_vertices, n_vertices))
    return connected_components(adj, directed=False)[1]


@dataclass
class PercolationConfig:
    n_sites: int
    ghost: bool
    u: np.ndarray
    v: np.ndarray
    labels: np.ndarray
    spins: np.ndarray | None = None

    @classmethod
    def from_edges(cls, n_sites, ghost, u, v, spins=None):
        nv = n_sites + int(ghost)
        return cls(n_sites, ghost, u, v, _labels(nv, u, v), spins)

    @classmethod
    def empty(cls, n_sites, ghost):
        z = np.zeros(0, np.int64)
        return cls.from_edges(n_sites, ghost, z, z)

    @property
    def n_vertices(self):
        return self.n_sites + int(self.ghost)

    def connected(self, a, b) -> bool:
        return bool(self.labels[a] == self.labels[b])

    def restricted_labels(self, inside: np.ndarray) -> np.ndarray:
        """Cluster labels using only open edges with both endpoints in ``inside`` (bool per vertex)."""
        keep = inside[self.u] & inside[self.v]
        return _labels(self.n_vertices, self.u[keep], self.v[keep])

    def check_cache(self) -> bool:
        fresh = _labels(self.n_vertices, self.u, self.v)
        # same partition: labels map one-to-one
        pairs = set(zip(fresh.tolist(), self.labels.tolist()))
        return len(pairs) == len(set(fresh.tolist())) == len(set(self.labels.tolist()))

    def edge_list_text(self) -> str:
        g = self.n_sites if self.ghost else -1
        return "".join(f"{a} {'G' if b == g else b}\n" for a, b in zip(self.u, self.v))


def sweep(state: PercolationConfig, table: BondTable, rng: np.random.Generator) -> PercolationConfig:
    """One Edwards-Sokal update: cluster signs, then bonds on agreeing pairs."""
    coins = rng.integers(0, 2, size=state.n_vertices) * 2 - 1
    spins = coins[state.labels]
    if state.ghost:
        spins = spins * spins[state.n_sites]  # global flip keeps the law and fixes the ghost to +
    u, v = table.sample_bonds(rng, spins)
    return PercolationConfig.from_edges(state.n_sites, state.ghost, u, v, spins)


def run_chain(table: BondTable, sweeps: int, burn_in: int, rng, measure) -> np.ndarray:
    """Measure after every post-burn-in sweep; returns an array (sweeps - burn_in, k)."""
    state = PercolationConfig.empty(table.n_sites, table.ghost)
    out = []
    for i in range(sweeps):
        state = sweep(state, table, rng)
        if i >= burn_in:
            out.append(np.atleast_1d(measure(state)))
    return np.asarray(out, dtype=float)


def _estimates(cfg: McConfig, table: BondTable, measure) -> list[Estimate]:
    per_chain = []
    for chain in range(cfg.chains):
        rng = make_rng(cfg.seed, chain)
        series = run_chain(table, cfg.sweeps, cfg.burn_in, rng, measure)
        per_chain.append([estimate_series(series[:, k], cfg.batch_count) for k in range(series.shape[1])])
    return [merge_estimates([c[k] for c in per_chain]) for k in range(len(per_chain[0]))]


def _table(cfg: McConfig) -> BoxBondTable:
    return build_bond_tables(cfg.model, cfg.beta, cfg.box, cfg.bc, cfg.outer_radius)


# --- estimators -----------------------------------------------------------


def estimate_connectivity(cfg: McConfig, x, restricted_to: int | None = None):
    """Phi(0 <-> x in Lambda_n) for one point x or an (k, d) array of points."""
    box = cfg.box
    xs = np.asarray(x, dtype=np.int64).reshape(-1, box.d)
    if not all(box.contains(p) for p in xs):
        raise ValueError("target outside the box")
    single = np.ndim(x) <= 1
    inside = None
    if restricted_to is not None:
        if not all(np.abs(p).max() <= restricted_to for p in xs):
            raise ValueError("target outside the restriction box")
        inside = np.zeros(box.volume + int(cfg.bc == "plus"), bool)
        inside[:box.volume] = box.sub_box_mask(restricted_to)
    idx = box.indices(xs)
    o = box.origin
    trivial = idx == o
    if cfg.beta == 0 or trivial.all():
        out = [exact_estimate(1.0 if t else 0.0) for t in trivial]
        return out[0] if single else out

    def measure(state):
        lab = state.labels if inside is None else state.restricted_labels(inside)
        return (lab[idx] == lab[o]).astype(float)

    out = _estimates(cfg, _table(cfg), measure)
    out = [exact_estimate(1.0) if t else e for t, e in zip(trivial, out)]
    return out[0] if single else out


def estimate_tilted_partial_sum(cfg: McConfig, n, t):
    """sum_{x in Lambda_n} exp(t.x) 1{0 <-> x in Lambda_n}, for one n or a list."""
    from .geometry import dual_norm_eval

    t = np.atleast_1d(np.asarray(t, dtype=float))
    if dual_norm_eval(cfg.model.norm, t) > 1 + 1e-9:
        raise ValueError("tilt lies outside the Wulff shape")
    single = np.ndim(n) == 0
    ns = [int(k) for k in np.atleast_1d(n)]
    if any(k > cfg.N or k < 0 for k in ns):
        raise ValueError("need 0 <= n <= N")
    box = cfg.box
    pts = box.points
    o = box.origin
    weight = np.exp(pts @ t)
    nv = box.volume + int(cfg.bc == "plus")
    masks = []
    for k in ns:
        m = np.zeros(nv, bool)
        m[:box.volume] = box.sub_box_mask(k)
        masks.append(m)
    if cfg.beta == 0 or all(k == 0 for k in ns):
        out = [exact_estimate(1.0) for _ in ns]
        return out[0] if single else out

    def measure(state):
        vals = []
        for m in masks:
            lab = state.restricted_labels(m)
            hit = (lab[:box.volume] == lab[o]) & m[:box.volume]
            vals.append(weight[hit].sum())
        return np.array(vals)

    out = _estimates(cfg, _table(cfg), measure)
    return out[0] if single else out


@numba.njit(cache=True)
def _star_conditional(a, b, ou, ov, nv, ghost, Ja, Jb, Jag, Jbg, Jab, beta):
    """P[a <-> b, a not<-> ghost | all bonds not touching a or b].

    The conditional law only sees, for each cluster K of the remaining bonds,
    whether some bond from a (from b) into K is open.  Those bundles are
    independent with p = 1 - exp(-2 beta sum_{y in K} J), and the cluster
    weight 2 per non-ghost cluster is handled in closed form.
    """
    parent = np.arange(nv)
    for e in range(len(ou)):
        x, y = ou[e], ov[e]
        if x == a or x == b or y == a or y == b:
            continue
        rx = x
        while parent[rx] != rx:
            parent[rx] = parent[parent[rx]]
            rx = parent[rx]
        ry = y
        while parent[ry] != ry:
            parent[ry] = parent[parent[ry]]
            ry = parent[ry]
        if rx != ry:
            parent[max(rx, ry)] = min(rx, ry)
    ha = np.zeros(nv)
    hb = np.zeros(nv)
    n_sites = len(Ja)
    for y in range(n_sites):
        if y == a or y == b:
            continue
        r = y
        while parent[r] != r:
            r = parent[r]
        ha[r] += Ja[y]
        hb[r] += Jb[y]
    rg = -1
    if ghost:
        rg = nv - 1
        while parent[rg] != rg:
            rg = parent[rg]
    pag = 0.0
    pbg = 0.0
    if ghost:
        pag = -math.expm1(-2.0 * beta * (Jag + ha[rg]))
        pbg = -math.expm1(-2.0 * beta * (Jbg + hb[rg]))
    log_ratio = 0.0  # log of T/U, T and U the bridge-allowed and bridge-free products
    for y in range(n_sites):
        if y == a or y == b or parent[y] != y or y == rg:
            continue
        pa = -math.expm1(-2.0 * beta * ha[y])
        pb = -math.expm1(-2.0 * beta * hb[y])
        u = 2.0 * (1.0 - pa) * (1.0 - pb) + pa * (1.0 - pb) + (1.0 - pa) * pb
        log_ratio += math.log1p(pa * pb / u)
    pab = -math.expm1(-2.0 * beta * Jab)
    bridge = math.expm1(log_ratio)
    conn = pab * (1.0 + bridge) + (1.0 - pab) * bridge
    disc = 1.0 - pab
    z = 0.0
    for ag in range(2):
        wa = pag if ag else 1.0 - pag
        for bg in range(2):
            wb = pbg if bg else 1.0 - pbg
            fc = 1.0 if (ag or bg) else 2.0
            fa = 1.0 if ag else 2.0
            fb = 1.0 if bg else 2.0
            z += wa * wb * (conn * fc + disc * fa * fb)
    num = (1.0 - pag) * (1.0 - pbg) * conn * 2.0
    return num / z


class _Displacements:
    """J(y - a) for all sites y, from a table over box displacements."""

    def __init__(self, model, box):
        self.box = box
        span = LatticeBox(box.d, 2 * box.N)
        self.table = coupling(model, span.points)
        self.span = span

    def from_site(self, a_point):
        return self.table[self.span.indices(self.box.points - a_point)]


def estimate_truncated_surrogate(cfg: McConfig, x, translations=None):
    """Phi(a <-> a+x, a not<-> ghost) under the + boundary, averaged over translations a.

    Default translation set is the origin alone.  Each sample contributes the
    exact conditional probability given all bonds not touching a or a+x, an
    unbiased and much less noisy substitute for the raw indicator.  ``x`` may
    be one point or an array of points; every target is measured on the same
    chain.
    """
    if cfg.bc != "plus":
        raise ValueError("the truncated surrogate needs bc='plus'")
    box = cfg.box
    xs = np.asarray(x, dtype=np.int64).reshape(-1, box.d)
    single = np.ndim(x) <= 1
    shifts = np.zeros((1, box.d), np.int64) if translations is None else np.asarray(translations, np.int64).reshape(-1, box.d)
    table = _table(cfg)
    disp = _Displacements(cfg.model, box)
    pairs = []  # (row, a, b, Ja, Jb, Jag, Jbg, Jab)
    for row, xv in enumerate(xs):
        for s in shifts:
            if not (box.contains(s) and box.contains(s + xv)):
                raise ValueError("translated pair leaves the box")
            a, b = box.index(s), box.index(s + xv)
            pairs.append((row, a, b, disp.from_site(s), disp.from_site(s + xv),
                          table.ghost_J[a], table.ghost_J[b], coupling(cfg.model, xv)))
    counts = np.bincount([p[0] for p in pairs], minlength=len(xs))
    if cfg.beta == 0:
        out = [exact_estimate(1.0 if not xv.any() else 0.0) for xv in xs]
        return out[0] if single else out
    nv = box.volume + 1

    def measure(state):
        vals = np.zeros(len(xs))
        for row, a, b, Ja, Jb, Jag, Jbg, Jab in pairs:
            if a == b:
                vals[row] += float(state.labels[a] != state.labels[box.volume])
            else:
                vals[row] += _star_conditional(a, b, state.u, state.v, nv, True, Ja, Jb, Jag, Jbg, Jab, cfg.beta)
        return vals / counts

    out = _estimates(cfg, table, measure)
    return out[0] if single else out


def truncated_surrogate_doubling(cfg: McConfig, x, translations=None):
    """The surrogate at N and 2N, to expose finite-size drift."""
    from dataclasses import replace

    small = estimate_truncated_surrogate(cfg, x, translations)
    big = estimate_truncated_surrogate(replace(cfg, N=2 * cfg.N), x, translations)
    return small, big


# --- explicit graphs ------------------------------------------------------


def sample_graph_events(graph: FiniteGraph, beta: float, events, sweeps: int, burn_in: int, seed: int,
                        chain_id: int = 0, batch_count: int = 16) -> list[Estimate]:
    """FK Monte Carlo on an explicit graph; events are oracle events on edge masks."""
    table = EdgeListBondTable(graph, beta)
    key = {(int(a), int(b)): e for e, (a, b) in enumerate(zip(graph.u, graph.v))}
    masks = []

    def measure(state):
        m = 0
        for a, b in zip(state.u, state.v):
            m |= 1 << key[(int(a), int(b))]
        masks.append(m)
        return 0.0

    run_chain(table, sweeps, burn_in, make_rng(seed, chain_id), measure)
    ctx = EventContext(graph, np.array(masks, dtype=np.int64))
    return [estimate_series(ev.evaluate(ctx).astype(float), batch_count) for ev in events]


# --- output -----------------------------------------------------------------


def estimates_csv(rows, d: int) -> str:
    """CSV text with columns observable, x0..x{d-1}, n, mean, stderr, tau_int, n_samples, seed.

    ``rows`` holds (observable, x, n, Estimate, seed); all quantities are dimensionless.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["observable"] + [f"x{i}" for i in range(d)] + ["n", "mean", "stderr", "tau_int", "n_samples", "seed"])
    for obs, xv, n, est, seed in rows:
        xv = np.zeros(d, np.int64) if xv is None else np.atleast_1d(xv)
        w.writerow([obs] + [int(c) for c in xv] + ["" if n is None else int(n), repr(float(est.mean)),
                                                   repr(float(est.stderr)), repr(float(est.tau_int)),
                                                   int(est.n_samples), int(seed)])
    return buf.getvalue()
