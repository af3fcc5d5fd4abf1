"""Post-processing: the phi(S, t) certifier, tilted Laplace partial sums,
decay-rate fits, saturation scans and the d=1 window check.

phi(S, t) = beta sum_{x in S} sum_{y not in S} e^{t.x} Phi_S(0 <-> x) J_{xy} e^{t.(y-x)}
uses the free measure on S for the connection probability.  That is the
sharper (Lieb) form of the finite-volume inequality, and it gives the same
recursion: any free-volume Laplace sum is at most C(S) / (1 - phi) with
C(S) = sum_{z in S} e^{t.z}.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .current_mc import tilted_profile
from .geometry import dual_norm_eval, dual_vector
from .lattice import LatticeBox, round_direction
from .model import CouplingModel, coupling, partial_tilted_sum, saturation_criterion, tilted_coupling_sum
from .oracle import GuardError, MAX_SPIN_SITES, box_graph, spin_correlation_row
from .stats import kendall_trend, weighted_linear_fit

SOURCES = ("oracle", "mc")
Z_CI = 3.0
ABS_TOL_FRACTION = 0.02


class CriterionRefusal(ValueError):
    """The tilted coupling sum is divergent, so the requested operation has no meaning."""


@dataclass(frozen=True)
class McBudget:
    steps: int = 400_000
    seed: int = 0
    flatten_rounds: int = 8
    batches: int = 32


def _tilted_sum_or_refuse(model: CouplingModel, t):
    ts = tilted_coupling_sum(model, t)
    if not ts.is_finite:
        raise CriterionRefusal(f"saturation criterion fails at t={ts.t}: tilted coupling sum divergent ({ts.reason})")
    if not ts.rigorous_tail:
        raise CriterionRefusal(f"tilted coupling sum at t={ts.t} has no rigorous tail bound ({ts.reason})")
    return ts


def _check_tilt(model: CouplingModel, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.size != model.d:
        raise ValueError("tilt has wrong dimension")
    if dual_norm_eval(model.norm, t) > 1 + 1e-9:
        raise ValueError("tilt lies outside the Wulff shape")
    return t


def free_tilted_profile(model: CouplingModel, beta: float, radius: int, t, source="oracle",
                        budget: McBudget | None = None, chain_id: int = 0):
    """(points, e^{t.x} <sigma_0 sigma_x>_{Lambda_radius, free}, stderr)."""
    box = LatticeBox(model.d, radius)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    tilt = np.exp(box.points @ t)
    if beta == 0 or radius == 0:
        val = (np.arange(box.volume) == box.origin).astype(float)
        return box.points, val, np.zeros(box.volume)
    if source == "oracle":
        if box.volume > MAX_SPIN_SITES:
            raise GuardError(f"S has {box.volume} sites; exact enumeration is limited to {MAX_SPIN_SITES}")
        row = spin_correlation_row(box_graph(model, box, "free"), beta, box.origin)
        return box.points, tilt * row, np.zeros(box.volume)
    if source == "mc":
        b = budget or McBudget()
        pr = tilted_profile(model, beta, box, t, b.steps, b.seed, chain_id, b.batches, b.flatten_rounds)
        return box.points, pr.value, pr.stderr
    raise ValueError(f"unknown source {source!r}")


@dataclass(frozen=True)
class PhiValue:
    value: float
    ci: tuple[float, float]
    tail: float  # contribution of the tilted-sum tail bound, already inside ci[1]
    S_radius: int
    source: str


def outer_tilted_sums(model: CouplingModel, points: np.ndarray, t, jj: float) -> np.ndarray:
    """sum_{y not in S} J_{y-x} e^{t.(y-x)} for each x in S = points, as JJ(t) minus the inside part."""
    diff = (points[None, :, :] - points[:, None, :]).reshape(-1, model.d)
    nz = np.any(diff != 0, axis=1)
    inside = np.zeros(len(diff))
    inside[nz] = coupling(model, diff[nz]) * np.exp(diff[nz] @ t)
    return jj - inside.reshape(len(points), len(points)).sum(axis=1)


def phi_value(model: CouplingModel, beta: float, S_radius: int, t, source="oracle",
              budget: McBudget | None = None, chain_id: int = 0) -> PhiValue:
    """phi(Lambda_S_radius, t) with a confidence interval.

    The interval's upper end adds the tail bound of the tilted coupling sum
    (and Z_CI standard errors for the mc source).
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    t = _check_tilt(model, t)
    ts = _tilted_sum_or_refuse(model, t)
    if beta == 0:
        return PhiValue(0.0, (0.0, 0.0), 0.0, S_radius, source)
    pts, prof, se = free_tilted_profile(model, beta, S_radius, t, source, budget, chain_id)
    outer = outer_tilted_sums(model, pts, t, ts.value)
    value = beta * math.fsum(prof * outer)
    tail = beta * math.fsum(prof) * ts.tail_bound
    spread = Z_CI * beta * math.fsum(se * outer)
    return PhiValue(value, (max(value - spread, 0.0), value + spread + tail), tail, S_radius, source)


@dataclass(frozen=True)
class PhiCertificate:
    model: dict
    beta: float
    t: tuple[float, ...]
    S_radius: int
    phi: float
    ci: tuple[float, float]
    C: float
    bound: float | None
    status: str  # certified_decay | inconclusive
    source: str
    empirical: bool = False
    scanned: tuple = field(default=())

    def to_json(self) -> str:
        d = asdict(self)
        d["scanned"] = [list(x) for x in self.scanned]
        return json.dumps(d, sort_keys=True, indent=2)


def certify(model: CouplingModel, beta: float, t, S_max: int, source="oracle",
            budget: McBudget | None = None) -> PhiCertificate:
    """First radius r in 1..S_max with phi(Lambda_r) upper CI < 1, giving the bound C/(1 - phi_hi)."""
    t = _check_tilt(model, t)
    _tilted_sum_or_refuse(model, t)
    scanned = []
    last = None
    for r in range(1, S_max + 1):
        pv = phi_value(model, beta, r, t, source, budget, chain_id=r)
        scanned.append((r, pv.value, pv.ci[1]))
        last = pv
        C = float(math.fsum(np.exp(LatticeBox(model.d, r).points @ t)))
        if pv.ci[1] < 1:
            return PhiCertificate(model.to_config(), beta, tuple(t), r, pv.value, pv.ci, C, C / (1 - pv.ci[1]),
                                  "certified_decay", source, source == "mc", tuple(scanned))
    r = S_max
    C = float(math.fsum(np.exp(LatticeBox(model.d, r).points @ t)))
    return PhiCertificate(model.to_config(), beta, tuple(t), r, last.value if last else math.nan,
                          last.ci if last else (math.nan, math.nan), C, None, "inconclusive", source,
                          source == "mc", tuple(scanned))


# --- Laplace partial sums --------------------------------------------------


@dataclass(frozen=True)
class LaplaceRow:
    n: int
    value: float
    stderr: float


def laplace_partial_sums(model: CouplingModel, beta: float, t, n_list, source="mc",
                         budget: McBudget | None = None) -> list[LaplaceRow]:
    """sum_{x in Lambda_n} e^{t.x} Phi(0 <-> x in Lambda_n) on free boxes, one run per n."""
    t = _check_tilt(model, t)
    rows = []
    for k, n in enumerate(int(v) for v in n_list):
        if beta == 0 or n == 0:
            rows.append(LaplaceRow(n, 1.0, 0.0))
            continue
        if source == "oracle":
            _, prof, _ = free_tilted_profile(model, beta, n, t, "oracle")
            rows.append(LaplaceRow(n, math.fsum(prof), 0.0))
        elif source == "mc":
            b = budget or McBudget()
            pr = tilted_profile(model, beta, LatticeBox(model.d, n), t, b.steps, b.seed, k, b.batches,
                                b.flatten_rounds)
            rows.append(LaplaceRow(n, pr.laplace_sum, pr.laplace_stderr))
        else:
            raise ValueError(f"unknown source {source!r}")
    return rows


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float
    n_range: tuple[int, int]

    def positive(self, k: float = 3.0) -> bool:
        return self.slope > k * self.stderr

    def statistically_zero(self, k: float = 3.0) -> bool:
        return abs(self.slope) <= k * self.stderr


def divergence_slope(rows, n_min: int | None = None, n_max: int | None = None) -> SlopeFit:
    """Weighted fit sum ~ C n + a over the chosen n range."""
    sel = [r for r in rows if (n_min is None or r.n >= n_min) and (n_max is None or r.n <= n_max)]
    if len(sel) < 3:
        raise ValueError("need at least 3 partial sums for a slope")
    x = np.array([r.n for r in sel], float)
    y = np.array([r.value for r in sel])
    sig = np.array([r.stderr for r in sel])
    a, b, _, se_b = weighted_linear_fit(x, y, sig if np.all(sig > 0) else None)
    return SlopeFit(float(b), float(se_b), float(a), (int(x.min()), int(x.max())))


def greedy_scales(model: CouplingModel, t, count: int, budget: float = 1.0, start: int = 1) -> list[int]:
    """Increasing radii n_1 < n_2 < ... whose tilted coupling tails outside Lambda_{n_k}
    are at most budget 2^-k, so the tails sum to at most ``budget``."""
    t = _check_tilt(model, t)
    ts = _tilted_sum_or_refuse(model, t)
    out, n = [], start
    for k in range(1, count + 1):
        while ts.value + ts.tail_bound - partial_tilted_sum(model, t, n) > budget * 2.0 ** -k:
            n += 1
            if n > 10_000:
                raise RuntimeError("tilted tail decays too slowly for the requested budget")
        out.append(n)
        n += 1
    return out


# --- decay rates ------------------------------------------------------------


@dataclass(frozen=True)
class NuEstimate:
    s: tuple[float, ...]
    beta: float
    nu: float
    stderr: float
    window: tuple[int, int]
    saturated: bool
    prefactor_exponent: float
    rho_s: float
    nu_raw: float = math.nan  # unconstrained fit before projection onto nu <= rho(s)


def nu_fit(table, s, rho_s: float, beta: float = math.nan, window=None,
           abs_tol: float | None = None, project: bool = True) -> NuEstimate:
    """Decay rate from rows (n, value, stderr) by weighted least squares of
    -log value = nu n + b log n + a; the log n term absorbs power-law
    prefactors (one-jump or Ornstein-Zernike).  With ``project`` the rate is
    capped at rho_s; ``nu_raw`` keeps the unconstrained value."""
    rows = [tuple(r) for r in table]
    if window is not None:
        rows = [r for r in rows if window[0] <= r[0] <= window[1]]
    if len(rows) < 4:
        raise ValueError("need at least 4 points")
    n = np.array([r[0] for r in rows], float)
    v = np.array([r[1] for r in rows], float)
    se = np.array([r[2] if len(r) > 2 else 0.0 for r in rows], float)
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("values must be positive and finite")
    if np.any(n <= 0):
        raise ValueError("n must be positive")
    X = np.column_stack([n, np.log(n), np.ones_like(n)])
    y = -np.log(v)
    weighted = np.all(se > 0)
    w = 1.0 / (se / v) if weighted else np.ones_like(n)
    coef, *_ = np.linalg.lstsq(X * w[:, None], y * w, rcond=None)
    cov = np.linalg.pinv((X * w[:, None]).T @ (X * w[:, None]))
    if not weighted:
        dof = len(n) - 3
        resid = y - X @ coef
        cov = cov * (resid @ resid / dof if dof > 0 else 0.0)
    raw, err = float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0)))
    # nu <= rho(s) holds for every beta; a larger fitted rate is a short-window artefact
    # (pre-asymptotic corrections confounded with the power-law prefactor), so project
    nu = min(raw, rho_s) if project else raw
    tol = ABS_TOL_FRACTION * rho_s if abs_tol is None else abs_tol
    sat = abs(nu - rho_s) <= 3 * err + tol
    return NuEstimate(tuple(float(c) for c in np.atleast_1d(s)), beta, nu, err, (int(n.min()), int(n.max())),
                      bool(sat), float(coef[1]), float(rho_s), raw)


def two_point_table(model: CouplingModel, beta: float, s, n_values, budget: McBudget | None = None,
                    box_radius: int | None = None, chain_id: int = 0):
    """Rows (n, Phi(0 <-> round(n s)), stderr) from one tilted worm run on a free box."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.asarray(dual_vector(model.norm, s).t)
    ns = [int(k) for k in n_values]
    N = box_radius or 2 * max(ns)
    box = LatticeBox(model.d, N)
    b = budget or McBudget()
    pr = tilted_profile(model, beta, box, t, b.steps, b.seed, chain_id, b.batches, b.flatten_rounds)
    rows = []
    for n in ns:
        x = round_direction(s, n)
        i = box.index(x)
        damp = math.exp(-float(x @ t))
        rows.append((n, float(pr.value[i]) * damp, float(pr.stderr[i]) * damp))
    return rows


@dataclass(frozen=True)
class BetaSatScan:
    beta_hat: float
    bracket: tuple[float, float]
    estimates: tuple[NuEstimate, ...]
    flagged: bool  # bracket not refined to the requested width
    refused: bool = False


def beta_sat_scan(model: CouplingModel, s, beta_grid, n_values=range(4, 25, 2), budget: McBudget | None = None,
                  refine: int = 4, max_runs: int = 64, box_radius: int | None = None,
                  abs_tol: float | None = None) -> BetaSatScan:
    """Largest grid beta with a saturated decay-rate fit, refined by bisection.

    Returns the bracket [last saturated, first unsaturated]; beta_hat is its midpoint.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if not saturation_criterion(model, s).holds:
        return BetaSatScan(0.0, (0.0, 0.0), (), False, True)
    rho_s = float(model.rho(s))
    ests: list[NuEstimate] = []
    runs = 0

    def probe(beta):
        nonlocal runs
        runs += 1
        tab = two_point_table(model, beta, s, n_values, budget, box_radius, chain_id=runs)
        est = nu_fit(tab, s, rho_s, beta, abs_tol=abs_tol)
        ests.append(est)
        return est.saturated

    grid = sorted(float(b) for b in beta_grid)
    flags = [probe(b) for b in grid]
    if not flags[0]:
        return BetaSatScan(grid[0] / 2, (0.0, grid[0]), tuple(ests), True)
    last = max(i for i, f in enumerate(flags) if f) if all(flags) else flags.index(False) - 1
    if last == len(grid) - 1:
        return BetaSatScan(grid[-1], (grid[-1], math.inf), tuple(ests), True)
    lo, hi = grid[last], grid[last + 1]
    flagged = False
    for _ in range(refine):
        if runs >= max_runs:
            flagged = True
            break
        mid = 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
    return BetaSatScan(0.5 * (lo + hi), (lo, hi), tuple(ests), flagged)


# --- d = 1 window -------------------------------------------------------------


@dataclass(frozen=True)
class WindowCheck:
    rows: tuple  # (x, e^{rho(x)} Phi(0 <-> x), stderr)
    c_minus: float
    upper_ok: bool
    lower_ok: bool
    kendall_tau: float
    p_value: float

    @property
    def passed(self) -> bool:
        return self.upper_ok and self.lower_ok and self.p_value >= 0.05


def oz_window_check(model: CouplingModel, beta: float, x_range, source="mc", budget: McBudget | None = None,
                    box_radius: int | None = None) -> WindowCheck:
    """e^{rho(x)} Phi(0 <-> x) over x in x_range (d = 1).

    Passes when every value is at most 1 + 3 sigma, the fitted lower constant
    C_- = min(value - 3 sigma) is positive, and there is no downward Kendall
    trend at 5%.
    """
    if model.d != 1:
        raise ValueError("window check is for d = 1")
    psi = model.psi
    if not ((psi.kind == "Polynomial" and psi.alpha > 2) or psi.kind == "StretchedExp"):
        raise ValueError("window check needs psi Polynomial with alpha > 2 or StretchedExp")
    xs = [int(x) for x in x_range]
    N = box_radius or 2 * max(xs)
    t = np.array([float(model.rho(np.array([1])))])
    if source == "oracle":
        _, prof, se = free_tilted_profile(model, beta, N, t, "oracle")
    elif source == "mc":
        b = budget or McBudget()
        pr = tilted_profile(model, beta, LatticeBox(1, N), t, b.steps, b.seed, 0, b.batches, b.flatten_rounds)
        prof, se = pr.value, pr.stderr
    else:
        raise ValueError(f"unknown source {source!r}")
    box = LatticeBox(1, N)
    rows = tuple((x, float(prof[box.index([x])]), float(se[box.index([x])])) for x in xs)
    vals = np.array([r[1] for r in rows])
    errs = np.array([r[2] for r in rows])
    c_minus = float(np.min(vals - Z_CI * errs))
    tau, p = kendall_trend(vals, alternative="less")
    return WindowCheck(rows, c_minus, bool(np.all(vals <= 1 + Z_CI * errs)), c_minus > 0, tau, p)


# --- local saturation spot check ------------------------------------------------


def nearby_directions(s, count: int = 4, radius: float = 0.05) -> list[np.ndarray]:
    """Unit directions within Euclidean distance ``radius`` of the unit vector s (d = 2)."""
    s = np.asarray(s, dtype=float)
    s = s / np.linalg.norm(s)
    if s.size != 2:
        raise ValueError("nearby directions are generated in d = 2")
    ang = math.atan2(s[1], s[0])
    # chord 2 sin(dphi / 2) <= radius
    dmax = 2 * math.asin(radius / 2)
    steps = np.linspace(-dmax, dmax, count + 1) if count % 2 == 0 else np.linspace(-dmax, dmax, count)
    steps = [d for d in steps if d != 0][:count]
    return [np.array([math.cos(ang + d), math.sin(ang + d)]) for d in steps]


def local_saturation_check(model: CouplingModel, beta: float, s, S_max: int, source="oracle", count: int = 4,
                           radius: float = 0.05, budget: McBudget | None = None):
    """Certify at the dual vector of s and at ``count`` nearby directions.

    Returns (base certificate, list of nearby certificates); meaningful when
    the base is certified.
    """
    base = certify(model, beta, dual_vector(model.norm, s).t, S_max, source, budget)
    near = [certify(model, beta, dual_vector(model.norm, d).t, S_max, source, budget)
            for d in nearby_directions(s, count, radius)]
    return base, near


def lower_bound_constant(phis, sums) -> float:
    """Largest c with c sum_{k<=l} phi_k <= S_l for every l (the fitted constant of the lower direction)."""
    cum = np.cumsum(np.asarray(phis, dtype=float))
    sums = np.asarray(sums, dtype=float)
    ok = cum > 0
    return float(np.min(sums[ok] / cum[ok])) if np.any(ok) else math.inf
