"""Strict configuration parsing and the run directory contract of the CLI."""

import json

import pytest

from lrising import cli
from lrising.config import ConfigError, parse_config, parse_lines
from lrising.rng import DEFAULT_SEED, SEED_ENV

SMALL_ORACLE = """\
subcommand = oracle-verify
run.graphs = 10
run.chain_draws = 3
run.simon_lieb_cases = 10
"""

SMALL_SIMULATE = """\
subcommand = simulate
seed = 5
model.d = 1
run.beta = 0.4
run.N = 6
run.sweeps = 300
run.burn_in = 30
run.batches = 8
run.targets = 1,2,3
"""

KRW_ONE = """\
subcommand = krw
model.d = 1
model.psi.kind = One
run.lambda = 0.05
run.N = 12
run.n_max = 8
"""


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config(SMALL_ORACLE + "run.bete = 1\n")


def test_key_of_other_subcommand_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config(SMALL_ORACLE + "run.lambda = 0.1\n")


def test_repeated_key_rejected():
    with pytest.raises(ConfigError, match="repeated"):
        parse_lines("a = 1\na = 2\n")


def test_missing_required_key():
    with pytest.raises(ConfigError, match="run.beta"):
        parse_config("subcommand = certify\n")


def test_bad_line_and_subcommand():
    with pytest.raises(ConfigError):
        parse_lines("just text\n")
    with pytest.raises(ConfigError, match="subcommand"):
        parse_config("subcommand = dance\n")


def test_nonfinite_value_rejected():
    with pytest.raises(ConfigError, match="finite"):
        parse_config("subcommand = certify\nrun.beta = nan\n")


def test_comments_and_overrides():
    spec = parse_config("# comment\nsubcommand = krw  # trailing\nrun.lambda = 0.1\n", {"run.lambda": "0.02"})
    assert spec.params["lambda"] == 0.02
    assert spec.params["N"] == 32


def test_seed_from_environment(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert parse_config(SMALL_ORACLE).seed == DEFAULT_SEED
    monkeypatch.setenv(SEED_ENV, "77")
    assert parse_config(SMALL_ORACLE).seed == 77
    assert parse_config(SMALL_ORACLE + "seed = 3\n").seed == 3


def _run(tmp_path, text, name="run", extra=()):
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(text)
    out = tmp_path / name
    code = cli.main(["run", str(cfg), "--output", str(out), *extra])
    return code, out


def test_oracle_verify_exit_ok(tmp_path):
    code, out = _run(tmp_path, SMALL_ORACLE)
    assert code == cli.EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["subcommand"] == "oracle-verify"
    assert {"seed", "version", "rng", "config", "written"} <= set(man)
    lines = (out / "oracle_report.txt").read_text().splitlines()
    assert len(lines) == 3 and all(s.startswith("PASS") for s in lines)


def test_error_removes_outputs(tmp_path):
    code, out = _run(tmp_path, SMALL_SIMULATE, extra=["--set", "run.sweeps=10"])
    assert code == cli.EXIT_ERROR
    assert not out.exists()


def test_error_keeps_preexisting_directory(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    code, _ = _run(tmp_path, SMALL_SIMULATE, extra=["--set", "run.sweeps=10"])
    assert code == cli.EXIT_ERROR
    assert sorted(p.name for p in out.iterdir()) == ["keep.txt"]


def test_config_error_exit(tmp_path):
    code, out = _run(tmp_path, SMALL_ORACLE + "run.nonsense = 1\n")
    assert code == cli.EXIT_ERROR
    assert not out.exists()


def test_refusal_exit_verdict(tmp_path):
    code, out = _run(tmp_path, KRW_ONE)
    assert code == cli.EXIT_VERDICT
    refusal = json.loads((out / "refusal.json").read_text())
    assert refusal["status"] == "refused"
    assert (out / "manifest.json").exists()


def test_manifest_written_first(tmp_path, monkeypatch):
    seen = []

    def spy(spec, out):
        seen.append(sorted(p.name for p in out.root.iterdir()))

    monkeypatch.setitem(cli.HANDLERS, "oracle-verify", spy)
    code, _ = _run(tmp_path, SMALL_ORACLE)
    assert code == cli.EXIT_OK
    assert seen == [["manifest.json"]]


def test_simulate_reproducible_bytes(tmp_path):
    code1, out1 = _run(tmp_path, SMALL_SIMULATE, "first")
    code2, out2 = _run(tmp_path, SMALL_SIMULATE, "second")
    assert code1 == code2 == cli.EXIT_OK
    for name in ("estimates.csv", "estimates.dat"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    code3, out3 = _run(tmp_path, SMALL_SIMULATE, "third", ["--set", "seed=6"])
    assert code3 == cli.EXIT_OK
    assert (out3 / "estimates.csv").read_bytes() != (out1 / "estimates.csv").read_bytes()


def test_dat_header_and_columns(tmp_path):
    code, out = _run(tmp_path, SMALL_SIMULATE)
    assert code == cli.EXIT_OK
    lines = (out / "estimates.dat").read_text().splitlines()
    assert lines[0].startswith("# ")
    assert lines[1] == "# x y yerr"
    body = [ln.split() for ln in lines[2:]]
    assert len(body) == 3 and all(len(r) == 3 for r in body)
    assert [float(r[0]) for r in body] == [1.0, 2.0, 3.0]


def test_sandwich_band():
    lower, upper, ok = cli.sandwich_band([1.0, 2.0], [0.1, 0.1], band=10)
    assert lower == pytest.approx(1.3) and upper == pytest.approx(1.7) and ok
    assert not cli.sandwich_band([1.0, 50.0], [0.0, 0.0], band=10)[2]
    assert not cli.sandwich_band([0.01, 1.0], [0.0, 0.0], band=10)[2]
    assert not cli.sandwich_band([-0.5, 1.0], [0.1, 0.0], band=10)[2]
