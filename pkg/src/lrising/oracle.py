"""Exact enumeration on small graphs: Ising spins, FK bonds and random currents.

All vertices are integers 0..n_sites-1; an optional ghost vertex (the "+"
boundary spin, fixed to +1) gets index n_sites and can be referred to by the
literal ``"G"`` wherever a vertex is expected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numba
import numpy as np

from .lattice import LatticeBox
from .model import CouplingModel, coupling, fk_probability, ghost_couplings

GHOST = "G"
MAX_SPIN_SITES = 24
MAX_FK_EDGES = 24
MAX_CURRENT_EDGES = 15
MAX_BRUTE_DOUBLE_EDGES = 10


class GuardError(ValueError):
    """Raised when an enumeration would exceed its size guard."""


@dataclass
class FiniteGraph:
    n_sites: int
    u: np.ndarray
    v: np.ndarray
    J: np.ndarray
    ghost: bool = False
    points: np.ndarray | None = None
    ghost_tail_bound: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.int64)
        self.v = np.asarray(self.v, dtype=np.int64)
        self.J = np.asarray(self.J, dtype=float)
        if not (len(self.u) == len(self.v) == len(self.J)):
            raise ValueError("edge arrays differ in length")
        if np.any(self.u == self.v):
            raise ValueError("self-loops are not allowed")
        if np.any(self.J < 0):
            raise ValueError("couplings must be nonnegative")
        nv = self.n_vertices
        if len(self.u) and (min(self.u.min(), self.v.min()) < 0 or max(self.u.max(), self.v.max()) >= nv):
            raise ValueError("edge endpoint out of range")
        if not self.ghost and self.n_sites in set(self.u) | set(self.v):
            raise ValueError("edge to ghost in a graph without ghost")
        lo, hi = np.minimum(self.u, self.v), np.maximum(self.u, self.v)
        key = lo * nv + hi
        if len(np.unique(key)) != len(key):
            raise ValueError("duplicate edge")
        self.u, self.v = lo, hi

    @classmethod
    def from_edges(cls, n_sites, edges, ghost=False, **kw):
        g_index = n_sites
        uu, vv, jj = [], [], []
        for a, b, J in edges:
            uu.append(g_index if a == GHOST else int(a))
            vv.append(g_index if b == GHOST else int(b))
            jj.append(float(J))
        return cls(n_sites, np.array(uu, dtype=np.int64), np.array(vv, dtype=np.int64), np.array(jj), ghost, **kw)

    @property
    def n_vertices(self) -> int:
        return self.n_sites + int(self.ghost)

    @property
    def n_edges(self) -> int:
        return len(self.J)

    @property
    def ghost_index(self) -> int | None:
        return self.n_sites if self.ghost else None

    def vertex(self, a) -> int:
        if a == GHOST:
            if not self.ghost:
                raise ValueError("graph has no ghost vertex")
            return self.n_sites
        a = int(a)
        if not 0 <= a < self.n_vertices:
            raise ValueError(f"vertex {a} not in graph")
        return a

    def ghost_edges(self) -> np.ndarray:
        if not self.ghost:
            return np.zeros(self.n_edges, bool)
        return self.v == self.n_sites

    def without_ghost(self) -> "FiniteGraph":
        keep = ~self.ghost_edges()
        return FiniteGraph(self.n_sites, self.u[keep], self.v[keep], self.J[keep], False, self.points)

    def coupling_matrix(self) -> np.ndarray:
        M = np.zeros((self.n_vertices, self.n_vertices))
        M[self.u, self.v] = self.J
        M[self.v, self.u] = self.J
        return M

    def edge_list_text(self) -> str:
        lines = []
        for a, b, J in zip(self.u, self.v, self.J):
            b = GHOST if self.ghost and b == self.n_sites else str(b)
            lines.append(f"{a} {b} {float(J)!r}")
        return "\n".join(lines) + "\n"


def parse_edge_list(text: str, n_sites: int | None = None) -> FiniteGraph:
    """Read one "u v J" triple per line; "G" denotes the ghost; '#' starts a comment."""
    edges = []
    top = -1
    ghost = False
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {ln}: expected 'u v J'")
        a, b = (p if p == GHOST else int(p) for p in parts[:2])
        for p in (a, b):
            if p == GHOST:
                ghost = True
            else:
                top = max(top, p)
        edges.append((a, b, float(parts[2])))
    n = top + 1 if n_sites is None else n_sites
    return FiniteGraph.from_edges(n, edges, ghost=ghost)


def box_graph(model: CouplingModel, box: LatticeBox, bc: str = "free", outer_radius=None) -> FiniteGraph:
    """Complete graph on the box with exact couplings; ghost edges under bc='plus'."""
    return points_graph(model, box.points, bc, outer_radius)


def points_graph(model, points, bc="free", outer_radius=None, nearest_neighbour=False) -> FiniteGraph:
    pts = np.asarray(points, dtype=np.int64).reshape(-1, model.d)
    n = len(pts)
    iu, iv = np.triu_indices(n, 1)
    diff = pts[iv] - pts[iu]
    if nearest_neighbour:
        keep = np.abs(diff).sum(axis=1) == 1
        iu, iv, diff = iu[keep], iv[keep], diff[keep]
    J = coupling(model, diff) if len(diff) else np.zeros(0)
    u, v = list(iu), list(iv)
    J = list(np.atleast_1d(J))
    tail = 0.0
    if bc == "plus":
        gJ, tail = ghost_couplings(model, pts, outer_radius)
        u += list(range(n))
        v += [n] * n
        J += list(gJ)
    elif bc != "free":
        raise ValueError(f"unknown boundary condition {bc!r}")
    return FiniteGraph(n, np.array(u, dtype=np.int64), np.array(v, dtype=np.int64), np.array(J, dtype=float),
                       bc == "plus", pts, tail)


def chain_graph(model: CouplingModel, length: int, bc="free", nearest_neighbour=False, outer_radius=None):
    """Sites 0..length-1 along the first axis."""
    pts = np.zeros((length, model.d), dtype=np.int64)
    pts[:, 0] = np.arange(length)
    return points_graph(model, pts, bc, outer_radius, nearest_neighbour)


# --- enumeration kernels ---------------------------------------------------


@numba.njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@numba.njit(cache=True)
def _component_labels(masks, eu, ev, nv):
    out = np.empty((len(masks), nv), np.int32)
    parent = np.empty(nv, np.int64)
    for k in range(len(masks)):
        m = masks[k]
        for i in range(nv):
            parent[i] = i
        for e in range(len(eu)):
            if (m >> e) & 1:
                a = _find(parent, eu[e])
                b = _find(parent, ev[e])
                if a != b:
                    if a < b:
                        parent[b] = a
                    else:
                        parent[a] = b
        for i in range(nv):
            out[k, i] = _find(parent, i)
    return out


def _product_table(on, off) -> np.ndarray:
    """w[mask] = prod_e (on[e] if bit e set else off[e]); bit e has stride 2^e."""
    w = np.ones(1)
    for a, b in zip(on, off):
        w = np.concatenate([w * b, w * a])
    return w


def _boundary_table(g: FiniteGraph) -> np.ndarray:
    """Bitmask of odd-degree vertices of each edge subset."""
    bits = (np.int64(1) << g.u) ^ (np.int64(1) << g.v)
    out = np.zeros(1, dtype=np.int64)
    for b in bits:
        out = np.concatenate([out, out ^ b])
    return out


def _vertex_bits(vertices) -> int:
    return reduce(lambda acc, a: acc ^ (1 << a), vertices, 0)


# --- events ----------------------------------------------------------------


class EventContext:
    """Edge subsets (bit masks) with cached cluster labels."""

    def __init__(self, graph: FiniteGraph, masks: np.ndarray):
        self.graph = graph
        self.masks = masks
        self._labels = {}

    def labels(self, within=None) -> np.ndarray:
        key = None if within is None else frozenset(within)
        if key not in self._labels:
            masks = self.masks
            if key is not None:
                inside = np.isin(self.graph.u, list(key)) & np.isin(self.graph.v, list(key))
                restrict = int(sum(1 << int(e) for e in np.flatnonzero(inside)))
                masks = masks & restrict
            self._labels[key] = _component_labels(masks, self.graph.u, self.graph.v, self.graph.n_vertices)
        return self._labels[key]

    def edge_open(self, e: int) -> np.ndarray:
        return ((self.masks >> e) & 1).astype(bool)


class Event:
    def evaluate(self, ctx: EventContext) -> np.ndarray:
        raise NotImplementedError

    def __and__(self, other):
        return _Combine(np.logical_and, self, other)

    def __or__(self, other):
        return _Combine(np.logical_or, self, other)

    def __invert__(self):
        return _Not(self)


class _Combine(Event):
    def __init__(self, op, a, b):
        self.op, self.a, self.b = op, a, b

    def evaluate(self, ctx):
        return self.op(self.a.evaluate(ctx), self.b.evaluate(ctx))


class _Not(Event):
    def __init__(self, a):
        self.a = a

    def evaluate(self, ctx):
        return ~self.a.evaluate(ctx)


class Always(Event):
    def evaluate(self, ctx):
        return np.ones(len(ctx.masks), bool)


class Connected(Event):
    """{a <-> b}, optionally using only edges with both endpoints in ``within``."""

    def __init__(self, a, b, within=None):
        self.a, self.b = a, b
        self.within = None if within is None else tuple(within)

    def evaluate(self, ctx):
        g = ctx.graph
        a, b = g.vertex(self.a), g.vertex(self.b)
        within = None if self.within is None else {g.vertex(w) for w in self.within}
        if a == b:
            return np.ones(len(ctx.masks), bool) if within is None or a in within else np.zeros(len(ctx.masks), bool)
        if within is not None and (a not in within or b not in within):
            return np.zeros(len(ctx.masks), bool)
        lab = ctx.labels(within)
        return lab[:, a] == lab[:, b]


class EdgeOpen(Event):
    def __init__(self, e: int):
        self.e = int(e)

    def evaluate(self, ctx):
        return ctx.edge_open(self.e)


class Predicate(Event):
    def __init__(self, fn):
        self.fn = fn

    def evaluate(self, ctx):
        return np.asarray(self.fn(ctx), dtype=bool)


def _event_probabilities(g: FiniteGraph, law: np.ndarray, events, chunk=1 << 16):
    single = isinstance(events, Event)
    events = [events] if single else list(events)
    acc = [[] for _ in events]
    support = np.flatnonzero(law > 0)
    for i in range(0, len(support), chunk):
        masks = support[i:i + chunk].astype(np.int64)
        ctx = EventContext(g, masks)
        w = law[masks]
        for k, ev in enumerate(events):
            acc[k].append(float(w[ev.evaluate(ctx)].sum()))
    out = [math.fsum(a) for a in acc]
    return out[0] if single else out


# --- Ising spins -----------------------------------------------------------


def _resolve_set(g: FiniteGraph, A) -> list[int]:
    if isinstance(A, (int, np.integer, str)):
        A = [A]
    return [g.vertex(a) for a in A]


def _graph_for_bc(g: FiniteGraph, bc):
    if bc is None:
        return g
    if bc == "free":
        return g.without_ghost() if g.ghost else g
    if bc == "plus":
        if not g.ghost:
            raise ValueError("bc='plus' needs a ghost vertex")
        return g
    raise ValueError(f"unknown boundary condition {bc!r}")


def spin_moments_exact(g: FiniteGraph, beta: float, sets, chunk_bits: int = 18) -> list[float]:
    """<sigma_A> for each A in ``sets`` by summing over all 2^n_sites spin states."""
    n = g.n_sites
    if n > MAX_SPIN_SITES:
        raise GuardError(f"{n} sites exceed the spin enumeration guard {MAX_SPIN_SITES}")
    sets = [_resolve_set(g, A) for A in sets]
    gi = g.ghost_index
    shift = beta * g.J.sum()
    total = 2 ** n
    step = 2 ** min(n, chunk_bits)
    Z, num = [], [[] for _ in sets]
    for start in range(0, total, step):
        s = np.arange(start, min(start + step, total), dtype=np.int64)
        spin = 1 - 2 * ((s[:, None] >> np.arange(n)) & 1)  # bit 0 is spin +1
        if g.ghost:
            spin = np.concatenate([spin, np.ones((len(s), 1), dtype=np.int64)], axis=1)
        energy = (spin[:, g.u] * spin[:, g.v]) @ g.J
        w = np.exp(beta * energy - shift)
        Z.append(float(w.sum()))
        for k, A in enumerate(sets):
            prod = np.ones(len(s), dtype=np.int64)
            for a in A:
                if a != gi:
                    prod = prod * spin[:, a]
            num[k].append(float(w @ prod))
    z = math.fsum(Z)
    return [math.fsum(v) / z for v in num]


def spin_correlation_row(g: FiniteGraph, beta: float, root=0, chunk_bits: int = 16) -> np.ndarray:
    """<sigma_root sigma_x> for every site x in one pass over the 2^n_sites spin states.

    Same enumeration as ``spin_moments_exact`` but with the energy as a
    quadratic form, which is much faster on dense graphs.
    """
    n = g.n_sites
    if n > MAX_SPIN_SITES:
        raise GuardError(f"{n} sites exceed the spin enumeration guard {MAX_SPIN_SITES}")
    root = g.vertex(root)
    M = g.coupling_matrix()
    field = M[:n, n] if g.ghost else np.zeros(n)
    M = M[:n, :n]
    shift = beta * np.abs(g.J).sum()
    step = 2 ** min(n, chunk_bits)
    Z, num = [], []
    for start in range(0, 2 ** n, step):
        s = np.arange(start, min(start + step, 2 ** n), dtype=np.int64)
        spin = (1 - 2 * ((s[:, None] >> np.arange(n)) & 1)).astype(float)
        energy = 0.5 * np.einsum("ij,ij->i", spin @ M, spin) + spin @ field
        w = np.exp(beta * energy - shift)
        Z.append(math.fsum(w))
        num.append((w * spin[:, root]) @ spin)
    return np.sum(num, axis=0) / math.fsum(Z)


def ising_two_point_exact(g: FiniteGraph, beta: float, A, bc=None) -> float:
    """<sigma_A> by exact spin summation; the ghost spin is fixed to +1."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return spin_moments_exact(_graph_for_bc(g, bc), beta, [A])[0]


def truncated_two_point_exact(g: FiniteGraph, beta: float, x, o=0) -> float:
    """<sigma_o sigma_x> - <sigma_o><sigma_x> under the + boundary condition."""
    if not g.ghost:
        raise ValueError("truncated two-point function needs the + boundary (ghost vertex)")
    if x == GHOST or o == GHOST:
        raise ValueError("the ghost spin is fixed; its covariance is zero")
    x, o = g.vertex(x), g.vertex(o)
    if g.ghost_index in (x, o):
        raise ValueError("the ghost spin is fixed; its covariance is zero")
    m_ox, m_o, m_x = spin_moments_exact(g, beta, [[o, x], [o], [x]])
    if o == x:
        return 1.0 - m_o * m_o
    return m_ox - m_o * m_x


# --- high-temperature (parity) expansion ----------------------------------


def _effective_sources(g: FiniteGraph, A) -> list[int]:
    A = sorted(set(_resolve_set(g, A)))
    if len(A) % 2:
        if not g.ghost:
            raise ValueError("odd source set needs a ghost vertex")
        gi = g.ghost_index
        A = sorted(set(A) ^ {gi})
    return A


def parity_law(g: FiniteGraph, beta: float, A) -> np.ndarray:
    """P[odd edge set = O] for currents with sources A (weights prod sinh * prod cosh)."""
    if g.n_edges > MAX_FK_EDGES:
        raise GuardError(f"{g.n_edges} edges exceed the parity enumeration guard")
    B = _effective_sources(g, A)
    bnd = _boundary_table(g)
    w = _product_table(np.tanh(beta * g.J), np.ones(g.n_edges))
    w = np.where(bnd == _vertex_bits(B), w, 0.0)
    z = math.fsum(w)
    if z == 0:
        raise ValueError("no current has the requested sources")
    return w / z


def parity_two_point_exact(g: FiniteGraph, beta: float, A) -> float:
    """<sigma_A> = Z(A)/Z(empty) summed over edge subsets with prescribed odd-degree set."""
    if g.n_edges > MAX_FK_EDGES:
        raise GuardError(f"{g.n_edges} edges exceed the parity enumeration guard")
    B = _effective_sources(g, A)
    bnd = _boundary_table(g)
    w = _product_table(np.tanh(beta * g.J), np.ones(g.n_edges))
    return math.fsum(w[bnd == _vertex_bits(B)]) / math.fsum(w[bnd == 0])


# --- FK random cluster ----------------------------------------------------


def fk_law(g: FiniteGraph, beta: float) -> np.ndarray:
    """Random-cluster law over open-edge masks: prod p^w (1-p)^(1-w) 2^(# clusters without ghost)."""
    if g.n_edges > MAX_FK_EDGES:
        raise GuardError(f"{g.n_edges} edges exceed the FK enumeration guard {MAX_FK_EDGES}")
    p = fk_probability(beta, g.J)
    w = _product_table(p, 1.0 - p)
    masks = np.arange(len(w), dtype=np.int64)
    kappa = np.empty(len(w))
    step = 1 << 16
    for i in range(0, len(w), step):
        lab = _component_labels(masks[i:i + step], g.u, g.v, g.n_vertices)
        roots = lab == np.arange(g.n_vertices)
        k = roots.sum(axis=1)
        if g.ghost:
            k = k - 1  # the ghost cluster is wired to the boundary and carries no colour
        kappa[i:i + step] = k
    w = w * np.exp2(kappa)
    return w / math.fsum(w)


def fk_connectivity_exact(g: FiniteGraph, beta: float, event, bc=None):
    """Probability of ``event`` (or a list of events) under the FK measure.

    Bond weight p_e = 1 - exp(-2 beta J_e), so Phi(a <-> b) = <sigma_a sigma_b>.
    """
    g = _graph_for_bc(g, bc)
    return _event_probabilities(g, fk_law(g, beta), event)


def fk_edge_conditional_range(g: FiniteGraph, beta: float) -> np.ndarray:
    """Per edge, min and max over the rest of P[edge open | all other edges], shape (E, 2)."""
    law = fk_law(g, beta)
    masks = np.arange(len(law), dtype=np.int64)
    out = np.empty((g.n_edges, 2))
    for e in range(g.n_edges):
        base = masks[((masks >> e) & 1) == 0]
        w0, w1 = law[base], law[base | (1 << e)]
        tot = w0 + w1
        ok = tot > 0
        r = w1[ok] / tot[ok]
        out[e] = r.min(), r.max()
    return out


def lower_bound_truncated_constant(beta: float, J_max: float, J_total: float) -> float:
    """c with <sigma_0; sigma_x> >= c J_x for every x.

    Open {0,x} (probability >= tanh(beta J_x)) and close every other edge at 0
    or x (each with probability >= exp(-2 beta J_e)); tanh(u)/u is decreasing.
    J_total bounds the coupling sum at one vertex, ghost included.
    """
    if beta == 0:
        return 0.0
    return beta * math.tanh(beta * J_max) / (beta * J_max) * math.exp(-4.0 * beta * J_total)


def simon_lieb_residual(g: FiniteGraph, beta: float, S, u, v) -> float:
    """RHS - LHS of Phi(u <-> v) <= sum_{x in S, y not in S} Phi(u <-> x in S) beta J_xy Phi(y <-> v)."""
    S = sorted({g.vertex(a) for a in S})
    u, v = g.vertex(u), g.vertex(v)
    if u not in S:
        raise ValueError("S must contain u")
    if v in S:
        raise ValueError("v must lie outside S")
    outside = [y for y in range(g.n_vertices) if y not in S]
    if not outside:
        raise ValueError("S is the whole graph")
    M = g.coupling_matrix()
    pairs = [(x, y) for x in S for y in outside if M[x, y] > 0]
    xs = sorted({x for x, _ in pairs})
    ys = sorted({y for _, y in pairs})
    events = [Connected(u, v)] + [Connected(u, x, within=S) for x in xs] + [Connected(y, v) for y in ys]
    probs = fk_connectivity_exact(g, beta, events)
    lhs = probs[0]
    in_s = dict(zip(xs, probs[1:1 + len(xs)]))
    to_v = dict(zip(ys, probs[1 + len(xs):]))
    rhs = math.fsum(in_s[x] * beta * M[x, y] * to_v[y] for x, y in pairs)
    return rhs - lhs


# --- random currents ------------------------------------------------------


def _promote_probability(beta, J):
    c = np.cosh(beta * np.asarray(J, dtype=float))
    return (c - 1.0) / c


def _subset_zeta(a: np.ndarray, n_bits: int, inverse=False) -> np.ndarray:
    a = a.copy()
    for e in range(n_bits):
        v = a.reshape(-1, 2, 1 << e)
        if inverse:
            v[:, 1, :] -= v[:, 0, :]
        else:
            v[:, 1, :] += v[:, 0, :]
    return a


def _or_convolve(f: np.ndarray, h: np.ndarray, n_bits: int) -> np.ndarray:
    out = _subset_zeta(_subset_zeta(f, n_bits) * _subset_zeta(h, n_bits), n_bits, inverse=True)
    return np.clip(out, 0.0, None)


def _positive_law_zeta(g: FiniteGraph, beta: float, A) -> np.ndarray:
    b = parity_law(g, beta, A).copy()
    q = _promote_probability(beta, g.J)
    for e in range(g.n_edges):
        v = b.reshape(-1, 2, 1 << e)
        v[:, 1, :] += q[e] * v[:, 0, :]
        v[:, 0, :] *= 1.0 - q[e]
    return b


@numba.njit(cache=True)
def _class_enumeration(eu, ev, w_even, w_odd, target):
    E = len(eu)
    law = np.zeros(1 << E)
    digits = np.zeros(E, np.int64)
    total = 3 ** E
    for _ in range(total):
        w = 1.0
        bnd = 0
        pos = 0
        for e in range(E):
            c = digits[e]
            if c == 1:
                w *= w_even[e]
                pos |= 1 << e
            elif c == 2:
                w *= w_odd[e]
                pos |= 1 << e
                bnd ^= (1 << eu[e]) ^ (1 << ev[e])
        if bnd == target:
            law[pos] += w
        e = 0
        while e < E:
            digits[e] += 1
            if digits[e] < 3:
                break
            digits[e] = 0
            e += 1
    return law


def _positive_law_brute(g: FiniteGraph, beta: float, A) -> np.ndarray:
    B = _effective_sources(g, A)
    bJ = beta * g.J
    law = _class_enumeration(g.u, g.v, np.cosh(bJ) - 1.0, np.sinh(bJ), _vertex_bits(B))
    z = law.sum()
    if z == 0:
        raise ValueError("no current has the requested sources")
    return law / z


def current_positive_law(g: FiniteGraph, beta: float, sources, double=False, method="zeta",
                         max_edges=MAX_CURRENT_EDGES) -> np.ndarray:
    """Law of the trace {e : n_e > 0} as an array over edge masks.

    ``method='zeta'`` marginalises the parity law with a per-edge promotion
    transform; ``method='brute'`` sums over all 3^E edge classes
    {zero, even positive, odd}.  With ``double=True`` the trace is that of the
    sum of a sourceless current and a current with the given sources.
    """
    if g.n_edges > max_edges:
        raise GuardError(f"{g.n_edges} edges exceed the current enumeration guard {max_edges}")
    if method == "zeta":
        law = _positive_law_zeta(g, beta, sources)
        if double:
            law = _or_convolve(_positive_law_zeta(g, beta, []), law, g.n_edges)
    elif method == "brute":
        law = _positive_law_brute(g, beta, sources)
        if double:
            if g.n_edges > MAX_BRUTE_DOUBLE_EDGES:
                raise GuardError("pair enumeration limited to 10 edges")
            law0 = _positive_law_brute(g, beta, [])
            pair = np.bitwise_or.outer(np.arange(len(law)), np.arange(len(law)))
            law = np.bincount(pair.ravel(), weights=np.outer(law0, law).ravel(), minlength=len(law))
    else:
        raise ValueError(f"unknown method {method!r}")
    return law / math.fsum(law)


def current_event_exact(g: FiniteGraph, beta: float, sources, event, double=False, method="zeta",
                        max_edges=MAX_CURRENT_EDGES):
    """Probability of ``event`` on the trace of a current with sources ``sources``."""
    law = current_positive_law(g, beta, sources, double, method, max_edges)
    return _event_probabilities(g, law, event)


@numba.njit(cache=True)
def _current_conditionals(eu, ev, w_even, w_odd, target, edge):
    """Exact P[n_e > 0 | classes elsewhere] range, and max P[n_e = 0 | classes elsewhere]."""
    E = len(eu)
    n_keys = 3 ** (E - 1)
    tot = np.zeros(n_keys)
    pos = np.zeros(n_keys)
    digits = np.zeros(E, np.int64)
    for _ in range(3 ** E):
        w = 1.0
        bnd = 0
        key = 0
        mul = 1
        for e in range(E):
            c = digits[e]
            if c == 1:
                w *= w_even[e]
            elif c == 2:
                w *= w_odd[e]
                bnd ^= (1 << eu[e]) ^ (1 << ev[e])
            if e != edge:
                key += c * mul
                mul *= 3
        if bnd == target:
            tot[key] += w
            if digits[edge] > 0:
                pos[key] += w
        e = 0
        while e < E:
            digits[e] += 1
            if digits[e] < 3:
                break
            digits[e] = 0
            e += 1
    lo = 1.0
    hi_zero = 0.0
    for k in range(n_keys):
        if tot[k] > 0:
            r = pos[k] / tot[k]
            lo = min(lo, r)
            hi_zero = max(hi_zero, 1.0 - r)
    return lo, hi_zero


def current_edge_conditionals(g: FiniteGraph, beta: float, sources) -> np.ndarray:
    """Per edge: (min P[n_e > 0 | rest], max P[n_e = 0 | rest]), shape (E, 2)."""
    if g.n_edges > 12:
        raise GuardError("conditional enumeration limited to 12 edges")
    B = _effective_sources(g, sources)
    bJ = beta * g.J
    out = np.empty((g.n_edges, 2))
    for e in range(g.n_edges):
        out[e] = _current_conditionals(g.u, g.v, np.cosh(bJ) - 1.0, np.sinh(bJ), _vertex_bits(B), e)
    return out
