"""Line-oriented run configuration: ``key = value`` with dotted sections.

Blank lines and ``#`` comments are ignored.  Every key must be known to the
chosen subcommand; unknown or repeated keys are fatal so that a typo in beta
or alpha cannot pass silently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .geometry import NormSpec
from .model import CouplingModel, Psi
from .rng import default_seed

SUBCOMMANDS = ("oracle-verify", "simulate", "certify", "scan-beta", "krw", "oz-check", "low-temp-sandwich")


class ConfigError(ValueError):
    pass


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _str(v: str) -> str:
    return v.strip()


def _float(v: str) -> float:
    return float(v)


MODEL_KEYS = {
    "model.d": (int, 1),
    "model.norm.kind": (_str, "L1"),
    "model.norm.p": (_str, None),
    "model.norm.weights": (_str, ""),
    "model.psi.kind": (_str, "Polynomial"),
    "model.psi.alpha": (_float, 3.0),
    "model.psi.c": (_float, 1.0),
    "model.psi.eta": (_float, 0.5),
}

COMMON_KEYS = {
    "subcommand": (_str, None),
    "output": (_str, "lrising-out"),
    "seed": (int, None),
}

# per-subcommand run.* keys with parser and default
RUN_KEYS: dict[str, dict[str, tuple]] = {
    "oracle-verify": {
        "run.graphs": (int, 200),
        "run.max_edges": (int, 10),
        "run.beta_max": (_float, 2.0),
        "run.chain_draws": (int, 50),
        "run.max_chain": (int, 8),
        "run.simon_lieb_cases": (int, 500),
        "run.tolerance": (_float, 1e-10),
    },
    "simulate": {
        "run.beta": (_float, None),
        "run.N": (int, 8),
        "run.bc": (_str, "free"),
        "run.sweeps": (int, 4000),
        "run.burn_in": (int, 400),
        "run.batches": (int, 16),
        "run.chains": (int, 1),
        "run.observable": (_str, "connectivity"),
        "run.targets": (_ints, (1, 2, 3, 4)),
        "run.t": (_floats, ()),
    },
    "certify": {
        "run.beta": (_float, None),
        "run.t": (_floats, ()),
        "run.s": (_floats, ()),
        "run.S_max": (int, 8),
        "run.source": (_str, "oracle"),
        "run.steps": (int, 400_000),
    },
    "scan-beta": {
        "run.s": (_floats, ()),
        "run.grid": (_floats, (0.2, 0.4, 0.6, 0.8, 1.0)),
        "run.n_min": (int, 4),
        "run.n_max": (int, 24),
        "run.n_step": (int, 2),
        "run.steps": (int, 2_000_000),
        "run.refine": (int, 5),
    },
    "krw": {
        "run.lambda": (_float, None),
        "run.N": (int, 32),
        "run.mode": (_str, "walk_neumann"),
        "run.length_cap": (int, 8),
        "run.s": (_floats, ()),
        "run.n_min": (int, 2),
        "run.n_max": (int, 30),
    },
    "oz-check": {
        "run.beta": (_float, None),
        "run.x_min": (int, 2),
        "run.x_max": (int, 24),
        "run.steps": (int, 4_000_000),
    },
    "low-temp-sandwich": {
        "run.beta": (_float, 2.0),
        "run.N": (int, 16),
        "run.n_min": (int, 2),
        "run.n_max": (int, 10),
        "run.sweeps": (int, 4000),
        "run.burn_in": (int, 400),
        "run.batches": (int, 16),
        "run.band": (_float, 10.0),
        "run.traces": (int, 1000),
        "run.trace_N": (int, 8),
    },
}


@dataclass(frozen=True)
class RunSpec:
    subcommand: str
    model: CouplingModel
    params: dict = field(default_factory=dict)
    output: str = "lrising-out"
    seed: int = field(default_factory=default_seed)
    echo: dict = field(default_factory=dict)  # the parsed key/value text, for the manifest


def parse_lines(text: str) -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in items:
            raise ConfigError(f"line {lineno}: repeated key {key!r}")
        items[key] = value
    return items


def build_model(items: dict[str, str]) -> CouplingModel:
    d = int(items.get("model.d", "1"))
    kind = items.get("model.norm.kind", "L1")
    norm_items = {"kind": kind}
    if "model.norm.p" in items:
        norm_items["p"] = items["model.norm.p"]
    else:
        norm_items["p"] = {"L1": "1", "L2": "2", "Linf": "inf"}.get(kind, "1")
    if items.get("model.norm.weights"):
        norm_items["weights"] = items["model.norm.weights"]
    norm = NormSpec.from_config(norm_items)
    psi_kind = items.get("model.psi.kind", "Polynomial")
    psi = Psi(psi_kind, float(items.get("model.psi.alpha", 3.0)), float(items.get("model.psi.c", 1.0)),
              float(items.get("model.psi.eta", 0.5)))
    return CouplingModel(d, norm, psi)


def spec_from_items(items: dict[str, str]) -> RunSpec:
    sub = items.get("subcommand")
    if sub not in SUBCOMMANDS:
        raise ConfigError(f"subcommand must be one of {', '.join(SUBCOMMANDS)}; got {sub!r}")
    allowed = {**COMMON_KEYS, **MODEL_KEYS, **RUN_KEYS[sub]}
    unknown = sorted(set(items) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys for {sub}: {', '.join(unknown)}")
    params = {}
    for key, (parse, default) in RUN_KEYS[sub].items():
        name = key.split(".", 1)[1]
        if key in items:
            try:
                params[name] = parse(items[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        elif default is None:
            raise ConfigError(f"missing required key {key}")
        else:
            params[name] = default
    try:
        model = build_model(items)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None
    for name, v in params.items():
        if isinstance(v, float) and not math.isfinite(v):
            raise ConfigError(f"run.{name} must be finite")
    seed = int(items["seed"]) if "seed" in items else default_seed()
    return RunSpec(sub, model, params, items.get("output", "lrising-out"), seed, dict(items))


def parse_config(text: str, overrides: dict[str, str] | None = None) -> RunSpec:
    items = parse_lines(text)
    if overrides:
        items.update(overrides)
    return spec_from_items(items)
