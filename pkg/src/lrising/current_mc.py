"""Random currents by a parity worm plus independent even-edge promotion.

The parity marginal of a current with sources B weighs an odd-edge set O by
prod_{e in O} tanh(beta J_e) subject to boundary(O) = B.  The worm samples
the extended space boundary(O) = B xor {head, tail}; a head move flips the
edge (head, y), with y proposed from an alias table over tanh(beta J_{head, y})
and accepted by Metropolis-Hastings.  States with head == tail carry
boundary(O) = B; those visits form the sample stream.

Given the parity pattern, an edge of even class is positive (n_e >= 2)
independently with probability (cosh - 1)/cosh.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numba
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .lattice import LatticeBox
from .model import CouplingModel
from .oracle import FiniteGraph, box_graph
from .rng import make_rng
from .stats import Estimate, estimate_series, merge_estimates

UNIFORM_BLOCK = 1 << 20


# --- worm kernels -----------------------------------------------------------


@numba.njit(cache=True)
def _alias_rows(W):
    """Walker alias tables for every row of a nonnegative matrix."""
    V, n = W.shape
    prob = np.ones((V, n))
    alias = np.zeros((V, n), np.int64)
    small = np.empty(n, np.int64)
    large = np.empty(n, np.int64)
    for r in range(V):
        tot = 0.0
        for j in range(n):
            alias[r, j] = j
            tot += W[r, j]
        if tot <= 0:
            continue
        sc = np.empty(n)
        ns = 0
        nl = 0
        for j in range(n):
            sc[j] = W[r, j] * n / tot
            if sc[j] < 1.0:
                small[ns] = j
                ns += 1
            else:
                large[nl] = j
                nl += 1
        while ns > 0 and nl > 0:
            ns -= 1
            s = small[ns]
            nl -= 1
            l = large[nl]
            prob[r, s] = sc[s]
            alias[r, s] = l
            sc[l] -= 1.0 - sc[s]
            if sc[l] < 1.0:
                small[ns] = l
                ns += 1
            else:
                large[nl] = l
                nl += 1
        for k in range(ns):
            prob[r, small[k]] = 1.0
        for k in range(nl):
            prob[r, large[k]] = 1.0
    return prob, alias


@numba.njit(cache=True)
def _worm_steps(T, K, aprob, aidx, O, st, unif, target, kick):
    """Advance the worm until ``target`` visits to head == tail or uniforms run out."""
    V = T.shape[0]
    h = st[0]
    t = st[1]
    visits = st[2]
    i = 0
    n = len(unif)
    while i + 4 <= n:
        if kick and h == t:
            h = min(int(unif[i] * V), V - 1)
            t = h
        i += 1
        if K[h] > 0:
            j = min(int(unif[i] * V), V - 1)
            y = j if unif[i + 1] < aprob[h, j] else aidx[h, j]
            r = 1.0 / T[h, y] if O[h, y] else T[h, y]
            if unif[i + 2] < r * K[h] / K[y]:
                O[h, y] ^= 1
                O[y, h] ^= 1
                h = y
        i += 3
        if h == t:
            visits += 1
            if visits >= target:
                break
    st[0] = h
    st[1] = t
    st[2] = visits
    return i


@numba.njit(cache=True)
def _odd_flip(O, nbr, pos, deg, a, b):
    """Toggle odd edge (a, b), keeping per-vertex lists of odd neighbours."""
    if O[a, b]:
        for u, w in ((a, b), (b, a)):
            k = pos[u, w]
            last = nbr[u, deg[u] - 1]
            nbr[u, k] = last
            pos[u, last] = k
            deg[u] -= 1
    else:
        for u, w in ((a, b), (b, a)):
            nbr[u, deg[u]] = w
            pos[u, w] = deg[u]
            deg[u] += 1
    O[a, b] ^= 1
    O[b, a] ^= 1


@numba.njit(cache=True)
def _tilted_worm_steps(T, Kw, aprob, aidx, O, nbr, pos, deg, st, unif, w, hist):
    """Worm with the tail pinned; the head is weighted by w[head].  Counts head positions.

    Proposal: with probability 1/2 the alias table over tanh(beta J_{h,y}) w[y]
    (row sums Kw), otherwise a uniform odd edge at the head (falling back to
    the alias table when there is none).  Weighting the proposal by w keeps
    creation and removal of long odd edges at comparable rates when w is far
    from flat; the odd-edge branch removes long edges quickly.
    """
    V = T.shape[0]
    h = st[0]
    i = 0
    n = len(unif)
    while i + 4 <= n:
        hist[h] += 1
        if Kw[h] > 0:
            if unif[i + 3] < 0.5 or deg[h] == 0:
                j = min(int(unif[i] * V), V - 1)
                y = j if unif[i + 1] < aprob[h, j] else aidx[h, j]
            else:
                y = nbr[h, min(int(unif[i] * deg[h]), deg[h] - 1)]
            was_odd = O[h, y]
            r = 1.0 / T[h, y] if was_odd else T[h, y]
            qa = T[h, y] * w[y] / Kw[h]
            fwd = 0.5 * qa + (0.5 * was_odd / deg[h] if deg[h] > 0 else 0.5 * qa)
            deg_y = deg[y] - 1 if was_odd else deg[y] + 1
            qb = T[y, h] * w[h] / Kw[y]
            rev = 0.5 * qb + (0.5 * (1 - was_odd) / deg_y if deg_y > 0 else 0.5 * qb)
            if unif[i + 2] * fwd * w[h] < r * rev * w[y]:
                _odd_flip(O, nbr, pos, deg, h, y)
                h = y
        i += 4
    st[0] = h
    return i


# --- parity state -----------------------------------------------------------


class WormKernel:
    """Dense tanh matrix of a graph (ghost included as a vertex) and its proposal tables."""

    def __init__(self, graph: FiniteGraph, beta: float):
        self.graph = graph
        self.beta = beta
        V = graph.n_vertices
        self.T = np.tanh(beta * graph.coupling_matrix())
        np.fill_diagonal(self.T, 0.0)
        self.K = self.T.sum(axis=1)
        self.aprob, self.aidx = _alias_rows(self.T)
        self.n_vertices = V


@dataclass
class ParityState:
    """Odd-edge set as a symmetric 0/1 matrix, plus worm head and tail."""

    odd: np.ndarray
    sources: tuple[int, ...]
    head: int
    tail: int

    def boundary(self) -> set[int]:
        return set(np.flatnonzero(self.odd.sum(axis=1) % 2).tolist())

    def check_parity(self) -> bool:
        want = set(self.sources) ^ ({self.head} ^ {self.tail})
        return self.boundary() == want


def _source_set(graph: FiniteGraph, sources) -> tuple[int, ...]:
    A = sorted({graph.vertex(a) for a in sources})
    if len(A) % 2:
        if not graph.ghost:
            raise ValueError("odd source set needs a ghost vertex")
        A = sorted(set(A) ^ {graph.ghost_index})
    return tuple(A)


def _bfs_path(T, a, b):
    prev = {a: None}
    q = deque([a])
    while q:
        v = q.popleft()
        if v == b:
            break
        for y in np.flatnonzero(T[v] > 0):
            y = int(y)
            if y not in prev:
                prev[y] = v
                q.append(y)
    if b not in prev:
        raise ValueError("sources lie in different components")
    path = [b]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def initial_parity_state(kernel: WormKernel, sources) -> ParityState:
    g = kernel.graph
    A = _source_set(g, sources)
    V = kernel.n_vertices
    odd = np.zeros((V, V), np.uint8)
    for a, b in zip(A[0::2], A[1::2]):
        p = _bfs_path(kernel.T, a, b)
        for x, y in zip(p[:-1], p[1:]):
            odd[x, y] ^= 1
            odd[y, x] ^= 1
    return ParityState(odd, A, 0, 0)


class Worm:
    """A parity-worm chain fed by one Philox stream."""

    def __init__(self, kernel: WormKernel, sources, rng: np.random.Generator):
        self.kernel = kernel
        self.rng = rng
        self.state = initial_parity_state(kernel, sources)
        self._st = np.zeros(3, np.int64)
        self._buf = np.zeros(0)

    def _uniforms(self):
        if len(self._buf) < 4:
            self._buf = self.rng.random(UNIFORM_BLOCK)
        return self._buf

    def sweep(self, z_visits: int) -> ParityState:
        k = self.kernel
        st = self._st
        st[0], st[1], st[2] = self.state.head, self.state.tail, 0
        if k.K.sum() == 0:
            return self.state
        while True:
            buf = self._uniforms()
            used = _worm_steps(k.T, k.K, k.aprob, k.aidx, self.state.odd, st, buf, z_visits, True)
            self._buf = buf[used:]
            if st[2] >= z_visits:
                break
        self.state.head, self.state.tail = int(st[0]), int(st[1])
        return self.state


def worm_sweep(worm: Worm, z_visits: int | None = None) -> ParityState:
    """Advance to the z_visits-th configuration with boundary equal to the sources (default: |V|)."""
    return worm.sweep(worm.kernel.n_vertices if z_visits is None else z_visits)


# --- augmentation and traces -----------------------------------------------


@dataclass
class CurrentConfig:
    """Per-edge class 0 (zero), 1 (even positive) or 2 (odd) on the graph's edge list."""

    classes: np.ndarray
    sources: tuple[int, ...]

    @property
    def positive(self) -> np.ndarray:
        return self.classes > 0


def promotion_probability(beta: float, J) -> np.ndarray:
    c = np.cosh(beta * np.asarray(J, dtype=float))
    return (c - 1.0) / c


def augment_positive_edges(state: ParityState, graph: FiniteGraph, beta: float, rng) -> CurrentConfig:
    """Odd edges are positive; each even edge is promoted with probability (cosh - 1)/cosh."""
    odd = state.odd[graph.u, graph.v].astype(bool)
    q = promotion_probability(beta, graph.J)
    promoted = ~odd & (rng.random(graph.n_edges) < q)
    classes = np.where(odd, 2, np.where(promoted, 1, 0)).astype(np.int8)
    return CurrentConfig(classes, state.sources)


def _trace_labels(graph: FiniteGraph, open_mask: np.ndarray) -> np.ndarray:
    V = graph.n_vertices
    u, v = graph.u[open_mask], graph.v[open_mask]
    adj = coo_matrix((np.ones(len(u), np.int8), (u, v)), shape=(V, V))
    return connected_components(adj, directed=False)[1]


def sample_traces(graph: FiniteGraph, beta: float, sources, n_samples: int, rng, z_visits=None,
                  burn_in: int = 10):
    """Yield positive-edge masks of independent-augmentation current samples."""
    worm = Worm(WormKernel(graph, beta), sources, rng)
    for _ in range(burn_in):
        worm_sweep(worm, z_visits)
    for _ in range(n_samples):
        st = worm_sweep(worm, z_visits)
        yield augment_positive_edges(st, graph, beta, rng).positive


def _mask_int(mask: np.ndarray) -> int:
    return int(sum(1 << int(e) for e in np.flatnonzero(mask)))


def sample_current_events(graph: FiniteGraph, beta: float, sources, events, n_samples: int, seed: int,
                          chain_id: int = 0, double=False, z_visits=None, batch_count: int = 16):
    """Monte Carlo probabilities of oracle events on the trace (n > 0) of a current."""
    from .oracle import EventContext

    rng = make_rng(seed, chain_id)
    masks = [_mask_int(m) for m in sample_traces(graph, beta, sources, n_samples, rng, z_visits)]
    if double:
        rng0 = make_rng(seed, chain_id + (1 << 20))
        masks0 = [_mask_int(m) for m in sample_traces(graph, beta, [], n_samples, rng0, z_visits)]
        masks = [a | b for a, b in zip(masks, masks0)]
    ctx = EventContext(graph, np.array(masks, dtype=np.int64))
    return [estimate_series(ev.evaluate(ctx).astype(float), batch_count) for ev in events]


def estimate_disconnection_graph(graph: FiniteGraph, beta: float, o, x, double=False, n_samples=4000,
                                 seed=0, chain_id=0, z_visits=None, batch_count=16) -> Estimate:
    """P[o not<-> ghost] in the trace of a current with sources {o, x} (optionally plus a sourceless one)."""
    if not graph.ghost:
        raise ValueError("disconnection from the ghost needs a ghost vertex")
    o, x = graph.vertex(o), graph.vertex(x)
    gi = graph.ghost_index
    rng = make_rng(seed, chain_id)
    it = sample_traces(graph, beta, [o, x], n_samples, rng, z_visits)
    it0 = sample_traces(graph, beta, [], n_samples, make_rng(seed, chain_id + (1 << 20)), z_visits) if double else None
    vals = np.empty(n_samples)
    for k, m in enumerate(it):
        if it0 is not None:
            m = m | next(it0)
        lab = _trace_labels(graph, m)
        vals[k] = float(lab[o] != lab[gi])
    return estimate_series(vals, batch_count)


def estimate_disconnection(model: CouplingModel, beta: float, box: LatticeBox, x, double=False,
                           n_samples=4000, seed=0, chains=1, outer_radius=None, z_visits=None) -> Estimate:
    """P^{{0,x}}[0 not<-> ghost] (or its double-current version) on the box with + boundary."""
    g = box_graph(model, box, "plus", outer_radius)
    o, xi = box.origin, box.index(x)
    parts = [estimate_disconnection_graph(g, beta, o, xi, double, n_samples, seed, c, z_visits) for c in range(chains)]
    return merge_estimates(parts)


# --- tilted worm ------------------------------------------------------------


@dataclass(frozen=True)
class TiltedProfile:
    """exp(t.x) <sigma_0 sigma_x> per site and the Laplace sum, from head-position counts."""

    points: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    laplace_sum: float
    laplace_stderr: float
    steps: int


def _jackknife_ratio(num: np.ndarray, den: np.ndarray):
    """Ratio of batch totals with jackknife error; num (B, k), den (B,)."""
    B = len(den)
    full = num.sum(axis=0) / den.sum()
    loo = (num.sum(axis=0)[None, :] - num) / (den.sum() - den)[:, None]
    se = np.sqrt((B - 1) / B * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return full, se


def tilted_profile_graph(graph: FiniteGraph, beta: float, root: int, tilt: np.ndarray, steps: int, seed: int,
                         chain_id: int = 0, batches: int = 32, burn_in_fraction: float = 0.05,
                         flatten_rounds: int = 0, flatten_steps: int | None = None,
                         flatten_mask: np.ndarray | None = None) -> TiltedProfile:
    """Worm with tail pinned at ``root``; estimates tilt[x]/tilt[root] <sigma_root sigma_x>.

    The head is weighted by tilt * bias, so head counts N(x) are proportional to
    tilt[x] bias[x] <sigma_root sigma_x>, and N(x) bias[root] / (N(root) bias[x])
    is the estimate.  With ``flatten_rounds`` > 0 the bias is first tuned
    multicanonically so that the head visits every vertex of ``flatten_mask``
    (default all) about equally often; otherwise bias = 1.
    """
    kernel = WormKernel(graph, beta)
    rng = make_rng(seed, chain_id)
    V = kernel.n_vertices
    odd = np.zeros((V, V), np.uint8)
    nbr = np.zeros((V, V), np.int64)
    pos = np.zeros((V, V), np.int64)
    deg = np.zeros(V, np.int64)
    st = np.array([root, root, 0], np.int64)
    tilt = np.asarray(tilt, dtype=float)
    if tilt.shape != (V,) or np.any(tilt <= 0):
        raise ValueError("tilt must be a positive weight per vertex")
    bias = np.ones(V)
    per_batch = max(steps // batches, 1)

    def run(n_steps, hist):
        left = 4 * n_steps
        w = tilt * bias
        w = w / w.max()
        TW = kernel.T * w[None, :]
        aprob, aidx = _alias_rows(TW)
        Kw = TW.sum(axis=1)
        while left > 0:
            buf = rng.random(min(left, UNIFORM_BLOCK))
            used = _tilted_worm_steps(kernel.T, Kw, aprob, aidx, odd, nbr, pos, deg, st, buf, w, hist)
            left -= used
            if used == 0:
                break

    run(int(burn_in_fraction * steps), np.zeros(V, np.int64))
    live = kernel.K > 0
    if flatten_mask is not None:
        live &= np.asarray(flatten_mask, bool)
    live[root] = True
    f_steps = flatten_steps if flatten_steps is not None else max(steps // (4 * max(flatten_rounds, 1)), 1)
    for _ in range(flatten_rounds):
        hist = np.zeros(V, np.int64)
        run(f_steps, hist)
        target = hist[live].mean()
        factor = np.sqrt(np.clip(target / np.maximum(hist, 0.5), 1e-4, 1e4))
        bias = np.where(live, bias * factor, bias)
        bias /= bias[root]
    H = np.zeros((batches, V), np.int64)
    for b in range(batches):
        run(per_batch, H[b])
    num = H / bias[None, :]
    den = num[:, root]
    if np.any(den == 0):
        raise RuntimeError("a batch never visited the root; increase steps")
    val, se = _jackknife_ratio(num, den)
    # a never-visited site gets the error of a single visit, so 3 sigma is the rule-of-three bound
    unseen = H.sum(axis=0) == 0
    se[unseen] = (1.0 / bias[unseen]) / den.sum()
    lap, lap_se = _jackknife_ratio(num.sum(axis=1, keepdims=True), den)
    pts = graph.points if graph.points is not None else np.arange(V)[:, None]
    keep = slice(0, graph.n_sites) if graph.ghost else slice(None)
    return TiltedProfile(pts, val[keep], se[keep], float(lap[0]), float(lap_se[0]), batches * per_batch)


def tilted_profile(model: CouplingModel, beta: float, box: LatticeBox, t, steps: int, seed: int,
                   chain_id: int = 0, batches: int = 32, flatten_rounds: int = 0) -> TiltedProfile:
    """exp(t.x) <sigma_0 sigma_x> on the free box, all x at once."""
    g = box_graph(model, box, "free")
    tx = box.points @ np.atleast_1d(np.asarray(t, dtype=float))
    # flattening the half-space t.x < 0 only traps the head where exp(t.x) Phi is negligible
    return tilted_profile_graph(g, beta, box.origin, np.exp(tx), steps, seed, chain_id, batches,
                                flatten_rounds=flatten_rounds, flatten_mask=tx >= 0)


# --- path extraction ---------------------------------------------------------


@dataclass(frozen=True)
class ExtractedPath:
    original: tuple[tuple[int, ...], ...]
    path: tuple[tuple[int, ...], ...]
    breakpoints: tuple[int, ...]
    segment_lengths: tuple[int, ...]
    jumps: int

    @property
    def length(self) -> int:
        return len(self.path) - 1

    def half_length_holds(self) -> bool:
        """sum_k lambda_k >= |path| / 2."""
        return 2 * sum(self.segment_lengths) >= self.length


def _adjacency(edges):
    adj = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return {k: sorted(v) for k, v in adj.items()}


def _min_path(adj, a, b, allowed=None):
    """Shortest path from a to b, ties broken lexicographically on the vertex sequence."""
    if a == b:
        return [a]
    dist = {b: 0}
    q = deque([b])
    while q:
        v = q.popleft()
        for y in adj.get(v, ()):
            if y not in dist and (allowed is None or y in allowed):
                dist[y] = dist[v] + 1
                q.append(y)
    if a not in dist:
        return None
    path = [a]
    while path[-1] != b:
        v = path[-1]
        path.append(min(y for y in adj[v] if dist.get(y) == dist[v] - 1))
    return path


def _basic_classes(edges):
    parent = {}

    def find(z):
        while parent.setdefault(z, z) != z:
            parent[z] = parent[parent[z]]
            z = parent[z]
        return z

    for a, b in edges:
        if sum(abs(i - j) for i, j in zip(a, b)) == 1:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    return find


def extract_path(trace, x, origin=None) -> ExtractedPath:
    """Basic-segment decomposition of the minimal open path from the origin to x.

    ``trace`` is an iterable of open edges given as pairs of lattice points.
    The minimal path gamma is the shortest one, ties broken lexicographically.
    Breakpoints: r_0 = 0, r_1 = last index of gamma in the basic class of the
    origin, r_{k+1} = last index (after r_k) in the basic class of
    gamma_{r_k + 1}.  Each stretch gamma_{r_k + 1} .. gamma_{r_{k+1}} is replaced
    by the minimal basic path inside that class, and consecutive stretches are
    joined by the jump edge (gamma_{r_k}, gamma_{r_k + 1}).
    """
    edges = [(tuple(int(c) for c in a), tuple(int(c) for c in b)) for a, b in trace]
    x = tuple(int(c) for c in np.atleast_1d(x))
    o = tuple([0] * len(x)) if origin is None else tuple(int(c) for c in origin)
    adj = _adjacency(edges)
    gamma = _min_path(adj, o, x) if o in adj or o == x else None
    if gamma is None:
        raise ValueError("origin and target are not connected in the trace")
    find = _basic_classes(edges)
    basic_adj = _adjacency([(a, b) for a, b in edges if sum(abs(i - j) for i, j in zip(a, b)) == 1])
    n = len(gamma) - 1
    cls = [find(z) for z in gamma]
    r = [0]
    r.append(max(i for i in range(n + 1) if cls[i] == cls[0]))
    while r[-1] < n:
        k = r[-1]
        r.append(max(i for i in range(k + 1, n + 1) if cls[i] == cls[k + 1]))
    starts = [0] + [rk + 1 for rk in r[1:-1]]
    ends = r[1:]
    new_path = []
    lengths = []
    for s, e in zip(starts, ends):
        members = {z for z in basic_adj if find(z) == cls[s]} | {gamma[s]}
        alpha = _min_path(basic_adj, gamma[s], gamma[e], members)
        lengths.append(len(alpha) - 1)
        new_path.extend(alpha)
    return ExtractedPath(tuple(gamma), tuple(new_path), tuple(r), tuple(lengths), len(starts) - 1)


def trace_points(graph: FiniteGraph, open_mask: np.ndarray, lattice_only=True):
    """Open edges of a trace as pairs of lattice points (ghost edges dropped)."""
    pts = graph.points
    keep = open_mask.copy()
    if lattice_only and graph.ghost:
        keep &= ~graph.ghost_edges()
    return [(tuple(pts[a]), tuple(pts[b])) for a, b in zip(graph.u[keep], graph.v[keep])]


def dump_trace(edges) -> str:
    """One open edge per line: comma-separated coordinates of both endpoints."""
    return "".join(f"{','.join(map(str, a))} {','.join(map(str, b))}\n" for a, b in edges)


def load_trace(text: str):
    out = []
    for line in text.splitlines():
        line = line.strip()
        if line:
            a, b = line.split()
            out.append((tuple(int(c) for c in a.split(",")), tuple(int(c) for c in b.split(","))))
    return out
