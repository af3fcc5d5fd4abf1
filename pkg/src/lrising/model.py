"""Long-range couplings J_x = psi(x) exp(-rho(x)) and their tilted sums.

The tilted coupling sum  JJ(t) = sum_x exp(t.x) J_x  is accumulated over
sup-norm shells ||x||_inf = r with a rigorous bound on the remaining tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .geometry import NormSpec, dual_norm_eval, dual_vector, min_ratio_to_sup, norm_eval
from .lattice import LatticeBox

PSI_KINDS = ("Polynomial", "StretchedExp", "One")
DIVERGENCE_VALUE = 1e12
DIVERGENCE_WINDOW = 1000


@dataclass(frozen=True)
class Psi:
    """Subexponential correction psi as a function of rho(x)."""

    kind: str = "Polynomial"
    alpha: float = 3.0
    c: float = 1.0
    eta: float = 0.5

    def __post_init__(self):
        if self.kind not in PSI_KINDS:
            raise ValueError(f"unknown psi kind {self.kind!r}")
        if self.kind == "Polynomial" and not self.alpha > 0:
            raise ValueError("Polynomial psi needs alpha > 0")
        if self.kind == "StretchedExp" and not (self.c > 0 and 0 < self.eta < 1):
            raise ValueError("StretchedExp psi needs c > 0 and eta in (0, 1)")

    def of_rho(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "Polynomial":
            with np.errstate(divide="ignore"):
                return r ** (-self.alpha)
        if self.kind == "StretchedExp":
            return np.exp(-self.c * r ** self.eta)
        return np.ones_like(r)

    def params(self) -> dict[str, float]:
        if self.kind == "Polynomial":
            return {"alpha": self.alpha}
        if self.kind == "StretchedExp":
            return {"c": self.c, "eta": self.eta}
        return {}


@dataclass(frozen=True)
class CouplingModel:
    d: int = 1
    norm: NormSpec = field(default_factory=NormSpec)
    psi: Psi = field(default_factory=Psi)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        self.norm.weight_vector(self.d)  # validates weight count

    def rho(self, x):
        return norm_eval(self.norm, x)

    def to_config(self, prefix="model") -> dict[str, str]:
        out = {f"{prefix}.d": str(self.d), f"{prefix}.psi.kind": self.psi.kind}
        out.update(self.norm.to_config(f"{prefix}.norm"))
        for k, v in self.psi.params().items():
            out[f"{prefix}.psi.{k}"] = repr(v)
        return out


def model_m1() -> CouplingModel:
    """d = 1, rho = |.|, psi(x) = |x|^-3: the reference one-dimensional model."""
    return CouplingModel(1, NormSpec.l1(), Psi("Polynomial", alpha=3.0))


def coupling(model: CouplingModel, x) -> float | np.ndarray:
    """J_x = psi(x) exp(-rho(x)), with J_0 = 0.  Accepts one point or an (n, d) array."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    x = x.reshape(-1, model.d)
    r = np.atleast_1d(norm_eval(model.norm, x))
    out = np.zeros(len(x))
    nz = r > 0
    out[nz] = model.psi.of_rho(r[nz]) * np.exp(-r[nz])
    return float(out[0]) if single else out


def edge_probability(model: CouplingModel, beta: float, x) -> float | np.ndarray:
    """FK bond probability p = 1 - exp(-2 beta J_x)."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return -np.expm1(-2.0 * beta * coupling(model, x))


def fk_probability(beta: float, J):
    return -np.expm1(-2.0 * beta * np.asarray(J, dtype=float))


# --- tilted sums -----------------------------------------------------------


@dataclass(frozen=True)
class TiltedSum:
    t: tuple[float, ...]
    value: float
    tail_bound: float
    truncation_radius: int
    status: str  # converged | unresolved | divergent
    rigorous_tail: bool = True
    reason: str = ""

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value) and math.isfinite(self.tail_bound)


def zero_cone_dimension(norm: NormSpec, t, tol: float = 1e-9) -> float:
    """Effective dimension of the cone where t.x = rho(x).

    Along that cone exp(t.x - rho(x)) does not decay, so sum_x psi(x) exp(t.x - rho(x))
    behaves like a k-dimensional sum of psi.  Zero when rho*(t) < 1.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    d = t.size
    if dual_norm_eval(norm, t) < 1.0 - tol:
        return 0.0
    g = t / norm.weight_vector(d)
    if norm.p == 1.0:
        return float(np.sum(np.abs(g) >= 1.0 - tol))
    if norm.p == math.inf:
        support = np.sum(np.abs(g) > tol)
        return float(1 + d - support)
    return (d + 1) / 2.0


def _tilted_terms(model: CouplingModel, x: np.ndarray, tilt: np.ndarray) -> np.ndarray:
    """exp(t.x) J_x evaluated as psi(x) exp(t.x - rho(x)) to avoid overflow."""
    r = np.atleast_1d(norm_eval(model.norm, x))
    out = np.zeros(len(r))
    nz = r > 0
    out[nz] = model.psi.of_rho(r[nz]) * np.exp(tilt[nz] - r[nz])
    return out


def _shell_sums(model: CouplingModel, t: np.ndarray, R: int) -> np.ndarray:
    """s[r] = sum over ||x||_inf = r of exp(t.x) J_x, for r = 0..R."""
    d = model.d
    out = np.zeros(R + 1)
    r1 = np.arange(-R, R + 1)
    if d == 1:
        vals = _tilted_terms(model, r1.reshape(-1, 1), t[0] * r1)
        np.add.at(out, np.abs(r1), vals)
        return out
    rest = np.stack(np.meshgrid(*([r1] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
    rest_sup = np.abs(rest).max(axis=1)
    rest_tilt = rest @ t[1:]
    x = np.empty((len(rest), d))
    x[:, 1:] = rest
    for a in r1:
        x[:, 0] = a
        r = np.maximum(rest_sup, abs(a))
        vals = _tilted_terms(model, x, t[0] * a + rest_tilt)
        out += np.bincount(r, weights=vals, minlength=R + 1)
    return out


def partial_tilted_sum(model: CouplingModel, t, R: int) -> float:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return math.fsum(_shell_sums(model, t, R))


def shell_tail_bound(model: CouplingModel, R: int, delta: float = 0.0) -> float:
    """Upper bound on sum over ||x||_inf > R of psi(x) exp(-delta ||x||_inf).

    Uses #shell(r) <= 2d 3^(d-1) r^(d-1) and psi(x) <= psi(c r) with
    c = min rho on the unit sup-sphere.  Returns inf when no bound closes.
    """
    d = model.d
    R = max(int(R), 1)
    K = 2 * d * 3 ** (d - 1)
    a = d - 1
    c = min_ratio_to_sup(model.norm, d)
    psi = model.psi
    bounds = [math.inf]

    def geometric(g_next, q):
        return g_next / (1.0 - q) if q < 1.0 else math.inf

    r = R + 1
    if psi.kind == "Polynomial":
        al = psi.alpha
        g = K * c ** (-al) * r ** (a - al) * math.exp(-delta * r)
        if delta > 0:
            q = (1 + 1 / r) ** max(a - al, 0.0) * math.exp(-delta)
            bounds.append(geometric(g, q))
        if al > d:
            bounds.append(K * c ** (-al) * R ** (d - al) / (al - d))
    elif psi.kind == "StretchedExp":
        k = psi.c * c ** psi.eta
        eta = psi.eta
        if delta > 0:
            g = K * r ** a * math.exp(-k * r ** eta - delta * r)
            bounds.append(geometric(g, (1 + 1 / r) ** a * math.exp(-delta)))
        if R ** eta >= a / (k * eta):
            s = (a + 1) / eta
            integral = special.gammaincc(s, k * R ** eta) * special.gamma(s) * k ** (-s) / eta
            bounds.append(K * integral)
    else:
        if delta > 0:
            g = K * r ** a * math.exp(-delta * r)
            bounds.append(geometric(g, (1 + 1 / r) ** a * math.exp(-delta)))
    return min(bounds)


def _extrapolated_tail(shells: np.ndarray) -> float:
    """Power-law extrapolation of the shell sums; not a rigorous bound."""
    R = len(shells) - 1
    r = np.arange(R // 2, R + 1)
    s = shells[r]
    if np.any(s <= 0):
        return math.inf
    slope, icpt = np.polyfit(np.log(r), np.log(s), 1)
    gamma = -slope
    if gamma <= 1.0:
        return math.inf
    return math.exp(icpt) * R ** (1 - gamma) / (gamma - 1)


def tilted_coupling_sum(
    model: CouplingModel,
    t,
    rel_tol: float = 1e-8,
    max_points: float = 2e7,
    start_radius: int = 8,
) -> TiltedSum:
    """JJ(t) = sum_x exp(t.x) J_x with a tail bound, or a divergence marker."""
    if not rel_tol > 0:
        raise ValueError("rel_tol must be positive")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.size != model.d:
        raise ValueError("tilt has wrong dimension")
    tt = tuple(float(v) for v in t)
    dual = dual_norm_eval(model.norm, t)
    if dual > 1.0 + 1e-12:
        return TiltedSum(tt, math.inf, math.inf, 0, "divergent", reason="rho*(t) > 1")
    k = zero_cone_dimension(model.norm, t)
    psi = model.psi
    if k > 0 and psi.kind == "One":
        return TiltedSum(tt, math.inf, math.inf, 0, "divergent",
                         reason="psi = One with non-decaying tilted summand")
    if k > 0 and psi.kind == "Polynomial" and psi.alpha <= k:
        return TiltedSum(tt, math.inf, math.inf, 0, "divergent",
                         reason=f"alpha <= {k:g}, the dimension of the cone t.x = rho(x)")

    delta = max(0.0, 1.0 - dual) * min_ratio_to_sup(model.norm, model.d)
    R = start_radius
    while True:
        shells = _shell_sums(model, t, R)
        value = math.fsum(shells)
        tail = shell_tail_bound(model, R, delta)
        if value > DIVERGENCE_VALUE:
            return TiltedSum(tt, math.inf, math.inf, R, "divergent", reason="partial sum exceeded 1e12")
        if R > DIVERGENCE_WINDOW:
            w = shells[-DIVERGENCE_WINDOW:]
            if np.all(np.diff(w) >= 0):
                return TiltedSum(tt, math.inf, math.inf, R, "divergent",
                                 reason="shell increments not decreasing")
        if tail <= rel_tol * value:
            return TiltedSum(tt, value, tail, R, "converged")
        if (2 * (2 * R) + 1) ** model.d > max_points:
            break
        R *= 2
    if math.isfinite(tail):
        return TiltedSum(tt, value, tail, R, "unresolved", reason="point budget reached")
    est = _extrapolated_tail(shells)
    return TiltedSum(tt, value, est, R, "unresolved", rigorous_tail=False,
                     reason="no rigorous tail bound; power-law extrapolation")


@dataclass(frozen=True)
class SaturationCheck:
    holds: bool
    witness: tuple[float, ...] | None
    tested: tuple[TiltedSum, ...]


def saturation_criterion(model: CouplingModel, s, rel_tol: float = 1e-8) -> SaturationCheck:
    """Whether some dual vector t to s has a finite tilted coupling sum.

    Probes the facet centroid and the facet extreme points.
    """
    dv = dual_vector(model.norm, s)
    candidates = [dv.t] + [e for e in dv.extreme_points if e != dv.t]
    tested = []
    for t in candidates:
        ts = tilted_coupling_sum(model, t, rel_tol=rel_tol)
        tested.append(ts)
        if ts.is_finite and ts.rigorous_tail:
            return SaturationCheck(True, tuple(t), tuple(tested))
    return SaturationCheck(False, None, tuple(tested))


# --- + boundary condition --------------------------------------------------


def ghost_couplings(model: CouplingModel, points, outer_radius: int | None = None):
    """J_{x,ghost} = sum of J_{xy} over y outside ``points`` with ||y||_inf <= outer_radius.

    Returns (couplings, tail_bound) where tail_bound bounds the omitted part
    uniformly in x.  Default outer radius is 8 times the sup-radius of the set.
    """
    pts = np.asarray(points, dtype=np.int64).reshape(-1, model.d)
    inner = int(np.abs(pts).max()) if len(pts) else 0
    if outer_radius is None:
        outer_radius = 8 * max(inner, 1)
    outer = LatticeBox(model.d, outer_radius).points
    inside = {tuple(p) for p in pts}
    keep = np.array([tuple(y) not in inside for y in outer]) if len(pts) < len(outer) else np.ones(len(outer), bool)
    ys = outer[keep]
    out = np.empty(len(pts))
    chunk = max(1, int(4e6 // max(len(ys), 1)))
    for i in range(0, len(pts), chunk):
        xs = pts[i:i + chunk]
        diff = (ys[None, :, :] - xs[:, None, :]).reshape(-1, model.d)
        out[i:i + chunk] = coupling(model, diff).reshape(len(xs), len(ys)).sum(axis=1)
    tail = shell_tail_bound(model, outer_radius - inner, delta=min_ratio_to_sup(model.norm, model.d))
    return out, tail
