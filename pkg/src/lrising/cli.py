"""Command-line experiment runner.

``lrising run CONFIG [--set key=value ...] [--output DIR]`` parses a strict
config, writes ``manifest.json`` and then the subcommand's results.  Exit
status: 0 success, 2 verdict failure or refusal, 1 error (partial outputs
removed).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import CriterionRefusal, McBudget, beta_sat_scan, certify, oz_window_check
from .config import ConfigError, RunSpec, parse_config
from .current_mc import extract_path, sample_traces, trace_points
from .fk_mc import McConfig, estimate_connectivity, estimate_tilted_partial_sum, estimate_truncated_surrogate, estimates_csv
from .geometry import dual_vector
from .krw import KrwQuery, decay_ratio_profile, profile_csv
from .lattice import LatticeBox, round_direction
from .model import coupling, saturation_criterion
from .oracle import box_graph
from .rng import RNG_NAME, make_rng
from .suite import run_oracle_suite

EXIT_OK, EXIT_ERROR, EXIT_VERDICT = 0, 1, 2


class Verdict(Exception):
    """Completed run whose verdict is negative (exit status 2)."""


class RunOutput:
    """Single writer for one run directory; remembers what it created so an error can undo it."""

    def __init__(self, root):
        self.root = Path(root)
        self.created: list[Path] = []
        self.made_dir = False

    def open(self):
        if not self.root.exists():
            self.root.mkdir(parents=True)
            self.made_dir = True

    def write(self, name: str, text: str) -> Path:
        path = self.root / name
        path.write_text(text)
        self.created.append(path)
        return path

    def cleanup(self):
        for p in self.created:
            p.unlink(missing_ok=True)
        if self.made_dir and self.root.exists() and not any(self.root.iterdir()):
            self.root.rmdir()


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _dat(description: str, rows) -> str:
    """Plot data: whitespace columns x y [yerr] after two comment lines."""
    lines = [f"# {description}", "# x y yerr" if rows and len(rows[0]) > 2 else "# x y"]
    lines += [" ".join(repr(float(v)) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def manifest(spec: RunSpec) -> str:
    return json.dumps({
        "subcommand": spec.subcommand,
        "config": spec.echo,
        "seed": spec.seed,
        "version": __version__,
        "rng": RNG_NAME,
        "written": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }, sort_keys=True, indent=2) + "\n"


def _direction(spec: RunSpec, key="s") -> np.ndarray:
    s = spec.params.get(key) or (1.0,) + (0.0,) * (spec.model.d - 1)
    s = np.asarray(s, dtype=float)
    if s.size != spec.model.d:
        raise ConfigError(f"run.{key} has {s.size} components for d = {spec.model.d}")
    return s / np.linalg.norm(s)


# --- subcommands ----------------------------------------------------------------


def _oracle_verify(spec: RunSpec, out: RunOutput):
    p = spec.params
    reports = run_oracle_suite(p["graphs"], p["max_edges"], p["beta_max"], p["chain_draws"], p["max_chain"],
                               p["simon_lieb_cases"], p["tolerance"], spec.seed)
    out.write("oracle_report.csv", _csv(["check", "cases", "max_residual", "tolerance", "passed"],
                                        [(r.name, r.cases, r.max_residual, r.tolerance, r.passed) for r in reports]))
    out.write("oracle_report.txt", "".join(r.line() + "\n" for r in reports))
    for r in reports:
        print(r.line())
    if not all(r.passed for r in reports):
        raise Verdict("oracle identity check failed")


def _simulate(spec: RunSpec, out: RunOutput):
    p = spec.params
    if p["sweeps"] <= p["burn_in"]:
        raise ConfigError("run.sweeps must exceed run.burn_in")
    cfg = McConfig(spec.model, p["beta"], p["N"], p["bc"], p["sweeps"], p["burn_in"], spec.seed, p["batches"],
                   p["chains"])
    d = spec.model.d
    targets = [int(n) for n in p["targets"]]
    e1 = np.eye(d, dtype=np.int64)[0]
    obs = p["observable"]
    if obs == "connectivity":
        ests = estimate_connectivity(cfg, np.array([n * e1 for n in targets]))
        rows = [("connectivity", n * e1, None, e, spec.seed) for n, e in zip(targets, ests)]
    elif obs == "tilted_partial_sum":
        t = np.asarray(p["t"] or dual_vector(spec.model.norm, e1.astype(float)).t, dtype=float)
        ests = estimate_tilted_partial_sum(cfg, targets, t)
        rows = [("tilted_partial_sum", None, n, e, spec.seed) for n, e in zip(targets, ests)]
    elif obs == "truncated_surrogate":
        ests = estimate_truncated_surrogate(cfg, np.array([n * e1 for n in targets]))
        rows = [("truncated_surrogate", n * e1, None, e, spec.seed) for n, e in zip(targets, ests)]
    else:
        raise ConfigError(f"unknown observable {obs!r}")
    out.write("estimates.csv", estimates_csv(rows, d))
    out.write("estimates.dat", _dat(f"{obs} against n (dimensionless)",
                                    [(n, e.mean, e.stderr) for n, (_, _, _, e, _) in zip(targets, rows)]))


def _refusal(out: RunOutput, exc: Exception):
    out.write("refusal.json", json.dumps({"status": "refused", "reason": str(exc),
                                          "criterion": "finite tilted coupling sum for some dual vector"},
                                         sort_keys=True, indent=2) + "\n")
    raise Verdict(str(exc))


def _certify(spec: RunSpec, out: RunOutput):
    p = spec.params
    model = spec.model
    if p["t"]:
        t = np.asarray(p["t"], dtype=float)
    else:
        t = np.asarray(dual_vector(model.norm, _direction(spec)).t)
    try:
        cert = certify(model, p["beta"], t, p["S_max"], p["source"],
                       McBudget(steps=p["steps"], seed=spec.seed))
    except CriterionRefusal as exc:
        _refusal(out, exc)
    out.write("certificate.json", cert.to_json() + "\n")
    out.write("phi_scan.csv", _csv(["S_radius", "phi", "phi_upper"], cert.scanned))
    out.write("phi_scan.dat", _dat("phi(Lambda_r, t) against r, upper confidence end as yerr column",
                                   [(r, v, hi - v) for r, v, hi in cert.scanned]))
    print(f"{cert.status}: phi = {cert.phi:.6g}, bound = {cert.bound}")


def _scan_beta(spec: RunSpec, out: RunOutput):
    p = spec.params
    s = _direction(spec)
    if not saturation_criterion(spec.model, s).holds:
        _refusal(out, CriterionRefusal("saturation criterion fails for this direction"))
    ns = range(p["n_min"], p["n_max"] + 1, p["n_step"])
    scan = beta_sat_scan(spec.model, s, p["grid"], ns, McBudget(steps=p["steps"], seed=spec.seed), p["refine"])
    rows = [(e.beta, e.nu, e.stderr, e.nu_raw, e.rho_s, e.prefactor_exponent, int(e.saturated)) for e in scan.estimates]
    rows.sort(key=lambda r: r[0])
    out.write("nu_estimates.csv", _csv(["beta", "nu", "nu_stderr", "nu_raw", "rho_s", "prefactor_exponent",
                                        "saturated"], rows))
    out.write("nu.dat", _dat("decay rate nu against beta", [(r[0], r[1], r[2]) for r in rows]))
    out.write("scan.json", json.dumps({"beta_hat": scan.beta_hat, "bracket": list(scan.bracket),
                                       "flagged": scan.flagged, "s": list(map(float, s))},
                                      sort_keys=True, indent=2) + "\n")
    print(f"beta_sat bracket [{scan.bracket[0]:.6g}, {scan.bracket[1]:.6g}], beta_hat = {scan.beta_hat:.6g}")


def _krw(spec: RunSpec, out: RunOutput):
    p = spec.params
    s = _direction(spec)
    q = KrwQuery(p["lambda"], spec.model, LatticeBox(spec.model.d, p["N"]), p["length_cap"], p["mode"])
    try:
        prof = decay_ratio_profile(q, s, range(p["n_min"], p["n_max"] + 1))
    except ValueError as exc:
        if "criterion" in str(exc):
            _refusal(out, exc)
        raise
    out.write("krw_profile.csv", profile_csv(prof))
    out.write("krw_ratio.dat", _dat("G_lambda(0, ns) / J_ns against n", [(r[0], r[3]) for r in prof.rows]))
    print(f"max ratio {prof.max_ratio:.6g}, Kendall tau {prof.kendall_tau:.3f} (p = {prof.p_value:.3g})")
    if not prof.bounded:
        raise Verdict("G/J shows an increasing trend")


def _oz_check(spec: RunSpec, out: RunOutput):
    p = spec.params
    xs = range(p["x_min"], p["x_max"] + 1)
    wc = oz_window_check(spec.model, p["beta"], xs, "mc", McBudget(steps=p["steps"], seed=spec.seed))
    out.write("window.csv", _csv(["x", "exp_rho_Phi", "stderr"], wc.rows))
    out.write("window.dat", _dat("exp(rho(x)) Phi(0 <-> x) against x", list(wc.rows)))
    out.write("window.json", json.dumps({"c_minus": wc.c_minus, "upper_ok": wc.upper_ok, "lower_ok": wc.lower_ok,
                                         "kendall_tau": wc.kendall_tau, "p_value": wc.p_value,
                                         "passed": wc.passed}, sort_keys=True, indent=2) + "\n")
    print(f"C_- = {wc.c_minus:.4g}, upper {wc.upper_ok}, lower {wc.lower_ok}, Kendall p = {wc.p_value:.3g}")
    if not wc.passed:
        raise Verdict("window check failed")


def sandwich_band(ratios, errors, band: float, z: float = 3.0):
    """(lower, upper, passed): the ratio band max(r - z se) <= band * min(r + z se), lower end positive."""
    r, e = np.asarray(ratios, float), np.asarray(errors, float)
    upper = float(np.max(r - z * e))
    lower = float(np.min(r + z * e))
    return lower, upper, bool(lower > 0 and upper <= band * lower)


def _low_temp_sandwich(spec: RunSpec, out: RunOutput):
    p = spec.params
    model = spec.model
    s = _direction(spec) if "s" in p else np.eye(model.d)[0]
    ns = list(range(p["n_min"], p["n_max"] + 1))
    xs = np.array([round_direction(s, n) for n in ns])
    cfg = McConfig(model, p["beta"], p["N"], "plus", p["sweeps"], p["burn_in"], spec.seed, p["batches"])
    ests = estimate_truncated_surrogate(cfg, xs)
    J = coupling(model, xs)
    ratio = np.array([e.mean for e in ests]) / J
    err = np.array([e.stderr for e in ests]) / J
    lower, upper, band_ok = sandwich_band(ratio, err, p["band"])
    out.write("sandwich.csv", _csv(["n", "truncated_surrogate", "stderr", "J", "ratio", "ratio_stderr"],
                                   [(n, e.mean, e.stderr, j, r, se) for n, e, j, r, se in zip(ns, ests, J, ratio, err)]))
    out.write("sandwich_ratio.dat", _dat("truncated surrogate / J against n", list(zip(ns, ratio, err))))
    trace_rows, violations, skipped = _trace_half_length(model, p, ns, s, spec.seed)
    out.write("traces.csv", _csv(["trace", "n", "path_length", "segment_sum", "jumps", "half_length_holds"],
                                 trace_rows))
    verdict = {"band_lower": lower, "band_upper": upper, "band": p["band"], "band_ok": band_ok,
               "traces": len(trace_rows), "disconnected_skipped": skipped, "half_length_violations": violations,
               "passed": band_ok and violations == 0}
    out.write("sandwich.json", json.dumps(verdict, sort_keys=True, indent=2) + "\n")
    print(f"band [{lower:.4g}, {upper:.4g}] ok={band_ok}; half-length violations {violations}/{len(trace_rows)}")
    if not verdict["passed"]:
        raise Verdict("low-temperature sandwich failed")


def _trace_half_length(model, p, ns, s, seed):
    """Extracted paths from current traces with sources {0, x} on the + box of radius trace_N."""
    box = LatticeBox(model.d, p["trace_N"])
    g = box_graph(model, box, "plus")
    targets = [n for n in ns if box.contains(round_direction(s, n))]
    if not targets:
        raise ConfigError("no target fits in the trace box; raise run.trace_N")
    per = [p["traces"] // len(targets) + (k < p["traces"] % len(targets)) for k in range(len(targets))]
    rows, violations, skipped = [], 0, 0
    for k, (n, count) in enumerate(zip(targets, per)):
        x = round_direction(s, n)
        rng = make_rng(seed, 1000 + k)
        for mask in sample_traces(g, p["beta"], [box.origin, box.index(x)], count, rng):
            try:
                path = extract_path(trace_points(g, mask), x)
            except ValueError:
                skipped += 1  # 0 and x joined only through the boundary
                continue
            ok = path.half_length_holds()
            violations += not ok
            rows.append((len(rows), n, path.length, sum(path.segment_lengths), path.jumps, int(ok)))
    return rows, violations, skipped


HANDLERS = {
    "oracle-verify": _oracle_verify,
    "simulate": _simulate,
    "certify": _certify,
    "scan-beta": _scan_beta,
    "krw": _krw,
    "oz-check": _oz_check,
    "low-temp-sandwich": _low_temp_sandwich,
}


def run(spec: RunSpec) -> int:
    out = RunOutput(spec.output)
    try:
        out.open()
        out.write("manifest.json", manifest(spec))
        HANDLERS[spec.subcommand](spec, out)
    except Verdict as exc:
        print(f"verdict: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    except Exception as exc:  # any failure leaves no partial results behind
        out.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lrising", description="Long-range Ising experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    pr = sub.add_parser("run", help="run one configured experiment")
    pr.add_argument("config", help="key = value configuration file")
    pr.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")
    pr.add_argument("--output", help="output directory (overrides the config)")
    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text()
        overrides = _overrides(args.set)
        if args.output:
            overrides["output"] = args.output
        spec = parse_config(text, overrides)
    except (OSError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
