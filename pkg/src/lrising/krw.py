"""Killed random walk Green functions G(x, y) = sum over paths of prod lambda J.

``green_saw_exact`` sums edge self-avoiding paths (vertices may repeat) by
depth-first search; ``green_walk_neumann`` sums all walks, which dominates the
self-avoiding sum since every weight is nonnegative.  The diagonal includes
the empty path, so the walk sum is the resolvent (I - lambda J)^-1.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numba
import numpy as np

from .lattice import LatticeBox, round_direction
from .model import CouplingModel, coupling, saturation_criterion
from .stats import kendall_trend

MODES = ("saw_exact", "walk_neumann")
SAW_MAX_VERTICES = 20
SAW_MAX_CAP = 12
SAW_MAX_WORK = 50_000_000


@dataclass(frozen=True)
class KrwQuery:
    lam: float
    model: CouplingModel
    box: LatticeBox
    length_cap: int = 8
    mode: str = "walk_neumann"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.model.d != self.box.d:
            raise ValueError("model and box dimensions differ")

    def weights(self) -> np.ndarray:
        return krw_weights(self.model, self.box, self.lam)

    def spectral_bound(self) -> float:
        """lambda * max_x sum_y J_xy on the box; below 1 the Neumann series converges geometrically."""
        return float(self.weights().sum(axis=1).max())


def krw_weights(model: CouplingModel, box: LatticeBox, lam: float) -> np.ndarray:
    pts = box.points
    span = LatticeBox(box.d, 2 * box.N)
    table = coupling(model, span.points)
    idx = span.indices((pts[None, :, :] - pts[:, None, :]).reshape(-1, box.d)).reshape(len(pts), len(pts))
    return lam * table[idx]


@numba.njit(cache=True)
def _saw_sum(W, x, y, L, max_work):
    """Sum of prod W over edge self-avoiding paths x -> y with at most L steps."""
    V = W.shape[0]
    used = np.zeros((V, V), np.bool_)
    path = np.empty(L + 1, np.int64)
    nxt = np.zeros(L + 1, np.int64)
    wt = np.empty(L + 1)
    total = 1.0 if x == y else 0.0
    path[0] = x
    wt[0] = 1.0
    depth = 0
    work = 0
    while depth >= 0:
        v = path[depth]
        k = nxt[depth]
        if depth == L or k == V:
            if depth > 0:
                a = path[depth - 1]
                used[a, v] = False
                used[v, a] = False
            depth -= 1
            continue
        nxt[depth] = k + 1
        if k == v or W[v, k] == 0.0 or used[v, k]:
            continue
        work += 1
        if work > max_work:
            return -1.0
        used[v, k] = True
        used[k, v] = True
        depth += 1
        path[depth] = k
        nxt[depth] = 0
        wt[depth] = wt[depth - 1] * W[v, k]
        if k == y:
            total += wt[depth]
    return total


def saw_sum_matrix(W: np.ndarray, x: int, y: int, L: int, max_work=SAW_MAX_WORK) -> float:
    W = np.ascontiguousarray(W, dtype=float)
    if L < 0:
        raise ValueError("length cap must be nonnegative")
    val = _saw_sum(W, int(x), int(y), int(L), int(max_work))
    if val < 0:
        raise RuntimeError("self-avoiding enumeration exceeded its work guard")
    return val


def walk_sum_matrix(W: np.ndarray, x: int, rel_tol: float = 1e-12, max_iter: int = 100_000, max_len=None):
    """G(x, .) = sum_k (W^k)[x, .] by repeated matvec; returns (vector, error_bound, converged).

    With ``max_len`` only walks of at most that many steps are summed.
    """
    V = W.shape[0]
    v = np.zeros(V)
    v[x] = 1.0
    G = v.copy()
    norm_inf = float(W.sum(axis=1).max()) if V else 0.0
    quiet = 0
    k = 0
    while True:
        if max_len is not None and k >= max_len:
            return G, math.nan, True
        v = W @ v
        k += 1
        G += v
        inc = v.sum()
        if not np.isfinite(inc) or inc > 1e300:
            return np.full(V, math.inf), math.inf, False
        quiet = quiet + 1 if inc <= rel_tol * G.sum() else 0
        if quiet >= 3 or inc == 0.0:
            bound = v.max() * norm_inf / (1.0 - norm_inf) if norm_inf < 1 else math.inf
            return G, float(bound), True
        if k >= max_iter:
            return G, math.inf, False


def green_saw_exact(q: KrwQuery, x, y):
    """Exact self-avoiding sum up to the length cap, and a bound on the omitted longer paths.

    The bound is the all-walk Green function minus walks of length <= cap,
    which dominates self-avoiding paths longer than the cap.
    """
    if q.mode != "saw_exact":
        raise ValueError("query mode is not saw_exact")
    if q.box.volume > SAW_MAX_VERTICES and q.length_cap > SAW_MAX_CAP:
        raise ValueError("self-avoiding enumeration needs <= 20 vertices or length cap <= 12")
    xi, yi = q.box.index(x), q.box.index(y)
    if xi != yi and q.length_cap < 1:
        raise ValueError("length cap too small to include any path")
    W = q.weights()
    val = saw_sum_matrix(W, xi, yi, q.length_cap)
    full, err, ok = walk_sum_matrix(W, xi)
    short, _, _ = walk_sum_matrix(W, xi, max_len=q.length_cap)
    tail = max(float(full[yi] - short[yi]) + err, 0.0) if ok else math.inf
    return val, tail


def green_walk_neumann(q: KrwQuery, x, y=None, rel_tol: float = 1e-12):
    """All-walk Green function G(x, y) (or the whole row if y is None) with its error bound.

    Returns (value, error_bound); value is +inf when the iterates blow up.
    """
    if q.mode != "walk_neumann":
        raise ValueError("query mode is not walk_neumann")
    xi = q.box.index(x)
    G, err, ok = walk_sum_matrix(q.weights(), xi, rel_tol)
    if not ok:
        return (math.inf if y is not None else G), math.inf
    if y is None:
        return G, err
    return float(G[q.box.index(y)]), err


@dataclass(frozen=True)
class RatioProfile:
    rows: tuple  # (n, G, J, ratio, mode, lambda)
    max_ratio: float
    kendall_tau: float
    p_value: float
    bounded: bool
    spectral_bound: float


def decay_ratio_profile(q: KrwQuery, s, n_range, alpha_level: float = 0.05) -> RatioProfile:
    """G(0, round(n s)) / J_{round(n s)} over n; bounded means no increasing Kendall trend at 5%."""
    if not saturation_criterion(q.model, s).holds:
        raise ValueError("saturation criterion fails for this direction: no dual vector with finite tilted coupling sum")
    ns = [int(n) for n in n_range]
    pts = [round_direction(s, n) for n in ns]
    if not all(q.box.contains(p) for p in pts):
        raise ValueError("profile leaves the box")
    origin = np.zeros(q.box.d, np.int64)
    if q.mode == "walk_neumann":
        row, _ = green_walk_neumann(q, origin)
        G = [float(row[q.box.index(p)]) for p in pts]
    else:
        G = [green_saw_exact(q, origin, p)[0] for p in pts]
    J = [coupling(q.model, p) for p in pts]
    ratio = [g / j for g, j in zip(G, J)]
    tau, p = kendall_trend(ratio, alternative="greater")
    rows = tuple((n, g, j, r, q.mode, q.lam) for n, g, j, r in zip(ns, G, J, ratio))
    return RatioProfile(rows, float(max(ratio)), tau, p, bool(p >= alpha_level), q.spectral_bound())


def profile_csv(profile: RatioProfile) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "G", "J", "ratio", "mode", "lambda"])
    for n, g, j, r, mode, lam in profile.rows:
        w.writerow([n, repr(float(g)), repr(float(j)), repr(float(r)), mode, repr(float(lam))])
    return buf.getvalue()
