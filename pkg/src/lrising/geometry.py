"""Norms on R^d, their duals, and dual vectors on the Wulff shape.

Only weighted l^p norms with p in {1, 2, inf} are supported,

    rho(x) = || w * x ||_p ,

so that the dual norm is the closed form rho*(t) = || t / w ||_q with q the
conjugate exponent.  The Wulff shape is the dual unit ball {t : rho*(t) <= 1}.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("L1", "L2", "Linf", "WeightedLp")
DUALITY_TOL = 1e-10


@dataclass(frozen=True)
class NormSpec:
    kind: str = "L1"
    p: float = 1.0
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}")
        implied = {"L1": 1.0, "L2": 2.0, "Linf": math.inf}
        p = implied.get(self.kind, float(self.p))
        if p not in (1.0, 2.0, math.inf):
            raise ValueError(f"p must be 1, 2 or inf, got {self.p}")
        object.__setattr__(self, "p", p)
        w = tuple(float(v) for v in self.weights)
        if any(not v > 0 for v in w):
            raise ValueError("norm weights must be strictly positive")
        object.__setattr__(self, "weights", w)

    @classmethod
    def l1(cls, d=None):
        return cls("L1", 1.0, (1.0,) * d if d else ())

    @classmethod
    def l2(cls, d=None):
        return cls("L2", 2.0, (1.0,) * d if d else ())

    @classmethod
    def linf(cls, d=None):
        return cls("Linf", math.inf, (1.0,) * d if d else ())

    def weight_vector(self, d: int) -> np.ndarray:
        if not self.weights:
            return np.ones(d)
        if len(self.weights) != d:
            raise ValueError(f"norm has {len(self.weights)} weights, vector has dimension {d}")
        return np.asarray(self.weights, dtype=float)

    @property
    def conjugate_p(self) -> float:
        return {1.0: math.inf, 2.0: 2.0, math.inf: 1.0}[self.p]

    def is_symmetric(self) -> bool:
        """True when rho is invariant under coordinate permutations."""
        return len(set(self.weights)) <= 1

    def to_config(self, prefix="norm") -> dict[str, str]:
        out = {f"{prefix}.kind": self.kind, f"{prefix}.p": _fmt_p(self.p)}
        if self.weights:
            out[f"{prefix}.weights"] = ",".join(repr(w) for w in self.weights)
        return out

    @classmethod
    def from_config(cls, items: dict[str, str]) -> "NormSpec":
        kind = items.get("kind", "L1")
        p = items.get("p", "1")
        p = math.inf if p.strip().lower() in ("inf", "infinity") else float(p)
        weights = items.get("weights", "")
        weights = tuple(float(v) for v in weights.split(",") if v.strip())
        return cls(kind, p, weights)


def _fmt_p(p):
    return "inf" if math.isinf(p) else repr(p)


def _lp(v: np.ndarray, p: float, axis=-1) -> np.ndarray:
    a = np.abs(v)
    if p == 1.0:
        return a.sum(axis=axis)
    if p == 2.0:
        return np.sqrt((a * a).sum(axis=axis))
    return a.max(axis=axis)


def norm_eval(norm: NormSpec, x) -> float | np.ndarray:
    """rho(x).  ``x`` may be a single vector or an array of shape (n, d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    w = norm.weight_vector(x.shape[-1])
    out = _lp(x * w, norm.p)
    return float(out) if np.ndim(out) == 0 else out


def dual_norm_eval(norm: NormSpec, t) -> float | np.ndarray:
    """rho*(t) = sup_{x != 0} t.x / rho(x); t is in the Wulff shape iff this is <= 1."""
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        t = t.reshape(1)
    w = norm.weight_vector(t.shape[-1])
    out = _lp(t / w, norm.conjugate_p)
    return float(out) if np.ndim(out) == 0 else out


def in_wulff(norm: NormSpec, t, tol: float = 1e-12) -> bool:
    return dual_norm_eval(norm, t) <= 1.0 + tol


def min_ratio_to_sup(norm: NormSpec, d: int) -> float:
    """Largest c with rho(x) >= c * max_i |x_i| for all x."""
    return float(norm.weight_vector(d).min())


@dataclass(frozen=True)
class DualVectorResult:
    s: tuple[float, ...]
    t: tuple[float, ...]
    unique: bool
    extreme_points: tuple[tuple[float, ...], ...] = field(default=())


def _lp_dual_face(u: np.ndarray, p: float, tol: float):
    """Centroid and extreme points of {g : ||g||_q = 1, g.u = ||u||_p}."""
    d = u.size
    if p == 2.0:
        g = u / np.sqrt(u @ u)
        return g, [g]
    if p == 1.0:
        scale = np.abs(u).max()
        free = np.abs(u) <= tol * scale
        g = np.where(free, 0.0, np.sign(u))
        if not free.any():
            return g, [g]
        idx = np.flatnonzero(free)
        extremes = []
        for signs in itertools.product((-1.0, 1.0), repeat=idx.size):
            e = g.copy()
            e[idx] = signs
            extremes.append(e)
        return g, extremes
    # p = inf: supported on the coordinates achieving max |u_i|
    a = np.abs(u)
    top = a >= a.max() * (1.0 - tol)
    idx = np.flatnonzero(top)
    extremes = []
    for i in idx:
        e = np.zeros(d)
        e[i] = np.sign(u[i])
        extremes.append(e)
    g = np.mean(extremes, axis=0)
    return g, extremes


def dual_vector(norm: NormSpec, s, tol: float = 1e-12) -> DualVectorResult:
    """A vector t on the boundary of the Wulff shape with t.s = rho(s).

    When the Wulff shape has a facet normal to ``s`` the facet centroid is
    returned with ``unique=False``; the facet's extreme points are listed in
    ``extreme_points`` in either case.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    n = float(np.sqrt(s @ s))
    if n == 0.0:
        raise ValueError("direction must be nonzero")
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"direction must be a unit vector, |s| = {n}")
    w = norm.weight_vector(s.size)
    g, extremes = _lp_dual_face(w * s, norm.p, tol)
    t = w * g
    ext = tuple(tuple(float(v) for v in w * e) for e in extremes)
    return DualVectorResult(
        s=tuple(float(v) for v in s),
        t=tuple(float(v) for v in t),
        unique=len(ext) == 1,
        extreme_points=ext,
    )


def unit(v) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return v / np.sqrt(v @ v)
