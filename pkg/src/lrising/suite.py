"""Self-checks of the exact oracles and of the samplers against them.

Each check returns a ``CheckReport`` with the worst residual it saw; the
``oracle-verify`` subcommand and the acceptance tests both run them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .current_mc import estimate_disconnection_graph, sample_current_events, tilted_profile_graph
from .fk_mc import sample_graph_events
from .geometry import NormSpec
from .model import CouplingModel, Psi
from .oracle import (GHOST, Connected, EdgeOpen, FiniteGraph, chain_graph, current_event_exact,
                     fk_connectivity_exact, ising_two_point_exact, parity_two_point_exact, simon_lieb_residual,
                     spin_correlation_row, truncated_two_point_exact)
from .rng import make_rng
from .stats import Estimate


@dataclass(frozen=True)
class CheckReport:
    name: str
    cases: int
    max_residual: float
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: {self.cases} cases, max residual {self.max_residual:.3e} (tol {self.tolerance:g})"


def random_graph(rng: np.random.Generator, max_edges: int = 10, max_sites: int = 6, ghost_probability=0.5,
                 J_max: float = 1.5) -> FiniteGraph:
    """Random simple graph with 2..max_sites sites, at most max_edges edges, optional ghost."""
    n = int(rng.integers(2, max_sites + 1))
    ghost = bool(rng.random() < ghost_probability)
    nv = n + int(ghost)
    pairs = list(itertools.combinations(range(nv), 2))
    k = int(rng.integers(1, min(max_edges, len(pairs)) + 1))
    chosen = sorted(rng.choice(len(pairs), size=k, replace=False))
    u = np.array([pairs[i][0] for i in chosen], np.int64)
    v = np.array([pairs[i][1] for i in chosen], np.int64)
    return FiniteGraph(n, u, v, rng.uniform(0.05, J_max, size=k), ghost)


def random_model(rng: np.random.Generator, d: int = 1) -> CouplingModel:
    kind = ("Polynomial", "StretchedExp", "One")[int(rng.integers(3))]
    psi = Psi(kind, alpha=float(rng.uniform(0.5, 6.0)), c=float(rng.uniform(0.2, 2.0)), eta=float(rng.uniform(0.2, 0.9)))
    return CouplingModel(d, NormSpec(), psi)


def check_triple_agreement(graphs: int = 200, max_edges: int = 10, beta_max: float = 2.0, seed: int = 0,
                           tolerance: float = 1e-10) -> CheckReport:
    """Spin, parity and FK enumeration of <sigma_a sigma_b> (and <sigma_a> with a ghost)."""
    rng = make_rng(seed, 11)
    worst = 0.0
    cases = 0
    for _ in range(graphs):
        g = random_graph(rng, max_edges)
        beta = float(rng.uniform(0.0, beta_max))
        a, b = (int(z) for z in rng.choice(g.n_sites, size=2, replace=False))
        queries = [([a, b], Connected(a, b))]
        if g.ghost:
            queries.append(([a], Connected(a, GHOST)))
        for A, ev in queries:
            spin = ising_two_point_exact(g, beta, A)
            parity = parity_two_point_exact(g, beta, A)
            fk = fk_connectivity_exact(g, beta, ev)
            worst = max(worst, abs(spin - parity), abs(spin - fk), abs(parity - fk))
            cases += 1
    return CheckReport("triple agreement (spin, parity, FK)", cases, worst, tolerance, worst <= tolerance)


def check_current_identity(draws: int = 50, max_chain: int = 8, beta_max: float = 2.0, seed: int = 0,
                           tolerance: float = 1e-10) -> CheckReport:
    """Truncated correlation against <sigma_0 sigma_x> P^{empty,{0,x}}[0 not<-> ghost].

    Nearest-neighbour chains with a ghost keep the edge count within the
    current enumeration guard (2 length - 1 <= 15).
    """
    rng = make_rng(seed, 12)
    worst = 0.0
    for _ in range(draws):
        model = random_model(rng)
        length = int(rng.integers(2, max_chain + 1))
        beta = float(rng.uniform(0.0, beta_max))
        g = chain_graph(model, length, bc="plus", nearest_neighbour=True)
        x = int(rng.integers(1, length))
        direct = truncated_two_point_exact(g, beta, x)
        two_point = ising_two_point_exact(g, beta, [0, x])
        disc = current_event_exact(g, beta, [0, x], ~Connected(0, GHOST), double=True)
        worst = max(worst, abs(direct - two_point * disc))
    return CheckReport("random-current identity (truncated = two-point x disconnection)", draws, worst, tolerance,
                       worst <= tolerance)


def check_simon_lieb(cases: int = 500, max_edges: int = 8, beta_max: float = 2.0, seed: int = 0,
                     tolerance: float = 1e-10) -> CheckReport:
    """Simon-Lieb residual over random (graph, S, u, v, beta); the minimum must be >= -tolerance."""
    rng = make_rng(seed, 13)
    worst = math.inf
    done = 0
    while done < cases:
        g = random_graph(rng, max_edges, max_sites=5)
        if g.n_vertices < 2:
            continue
        u, v = (int(z) for z in rng.choice(g.n_vertices, size=2, replace=False))
        others = [z for z in range(g.n_vertices) if z not in (u, v)]
        S = [u] + [z for z in others if rng.random() < 0.5]
        beta = float(rng.uniform(0.0, beta_max))
        worst = min(worst, simon_lieb_residual(g, beta, S, u, v))
        done += 1
    return CheckReport("Simon-Lieb inequality (min residual)", cases, worst, tolerance, worst >= -tolerance)


# --- samplers against the oracles -------------------------------------------


def mc_suite_graphs() -> list[tuple[str, FiniteGraph, float]]:
    """Small test graphs (at most 15 edges) with an inverse temperature each."""
    m1 = CouplingModel(1, NormSpec(), Psi("Polynomial", 3.0))
    k5 = FiniteGraph.from_edges(5, [(a, b, 0.3 + 0.1 * ((a + 2 * b) % 4)) for a, b in itertools.combinations(range(5), 2)])
    cycle = FiniteGraph.from_edges(6, [(a, (a + 1) % 6, 0.7) for a in range(6)] + [(0, 3, 0.2)]
                                   + [(a, GHOST, 0.15) for a in range(6)], ghost=True)
    return [
        ("chain5+ghost", chain_graph(m1, 5, bc="plus", nearest_neighbour=True), 1.2),
        ("chain5 complete", chain_graph(m1, 5), 1.5),
        ("K5", k5, 1.0),
        ("cycle6+ghost", cycle, 0.9),
    ]


def _events(g: FiniteGraph):
    far = g.n_sites - 1
    evs = [("0<->1", Connected(0, 1)), (f"0<->{far}", Connected(0, far)), ("edge0 open", EdgeOpen(0))]
    if g.ghost:
        evs.append(("0<->ghost", Connected(0, GHOST)))
    return evs


def check_mc_against_oracle(seeds=(1, 2, 3), sweeps: int = 20_000, current_samples: int = 20_000,
                            tilted_steps: int = 400_000, batches: int = 32, z_max: float = 3.0,
                            max_failure_rate: float = 0.01) -> CheckReport:
    """FK, current and tilted-worm estimators against exact values; failure rate of |z| > z_max."""
    rows = []
    for name, g, beta in mc_suite_graphs():
        labels, events = zip(*_events(g))
        far = g.n_sites - 1
        fk_exact = fk_connectivity_exact(g, beta, list(events))
        src = [0, far]
        cur_exact = current_event_exact(g, beta, src, list(events))
        dbl_exact = current_event_exact(g, beta, src, list(events), double=True)
        corr = spin_correlation_row(g, beta, 0)
        tilt = np.exp(0.3 * np.arange(g.n_vertices))
        for seed in seeds:
            est = sample_graph_events(g, beta, events, sweeps, sweeps // 10, seed, batch_count=batches)
            rows += [("fk", name, lab, e, ex) for lab, e, ex in zip(labels, est, fk_exact)]
            est = sample_current_events(g, beta, src, events, current_samples, seed, batch_count=batches)
            rows += [("current", name, lab, e, ex) for lab, e, ex in zip(labels, est, cur_exact)]
            est = sample_current_events(g, beta, src, events, current_samples, seed, double=True, batch_count=batches)
            rows += [("double current", name, lab, e, ex) for lab, e, ex in zip(labels, est, dbl_exact)]
            if g.ghost:
                exact = current_event_exact(g, beta, src, ~Connected(0, GHOST))
                e = estimate_disconnection_graph(g, beta, 0, far, False, current_samples, seed, batch_count=batches)
                rows.append(("disconnection", name, "0 not<->ghost", e, exact))
            prof = tilted_profile_graph(g, beta, 0, tilt, tilted_steps, seed, batches=batches)
            for x in range(1, g.n_sites):
                target = tilt[x] * corr[x]
                rows.append(("tilted worm", name, f"e^(t x)<s0 s{x}>", _as_estimate(prof.value[x], prof.stderr[x]),
                             target))
    # events that are sure under the sources (0 <-> far) agree up to rounding
    zs = np.array([0.0 if abs(e.mean - exact) <= 1e-12 else abs(e.z_score(exact)) for _, _, _, e, exact in rows])
    failed = [(r[0], r[1], r[2], r[3].mean, r[3].stderr, r[4]) for r, z in zip(rows, zs) if z > z_max]
    fails = int((zs > z_max).sum())
    rate = fails / len(zs)
    return CheckReport("Monte Carlo vs oracle (rate of |z| > 3)", len(zs), rate, max_failure_rate,
                       rate <= max_failure_rate, {"failures": fails, "max_z": float(zs.max()), "failed": failed})


def _as_estimate(mean, stderr):
    return Estimate(float(mean), float(stderr), 0, math.nan)


def run_oracle_suite(graphs=200, max_edges=10, beta_max=2.0, chain_draws=50, max_chain=8, simon_lieb_cases=500,
                     tolerance=1e-10, seed=0) -> list[CheckReport]:
    return [
        check_triple_agreement(graphs, max_edges, beta_max, seed, tolerance),
        check_current_identity(chain_draws, max_chain, beta_max, seed, tolerance),
        check_simon_lieb(simon_lieb_cases, min(max_edges, 8), beta_max, seed, tolerance),
    ]
