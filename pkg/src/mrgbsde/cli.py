"""Command-line experiment runner.

Config files are flat ``key = value`` text; ``#`` starts a comment. Keys::

    vol.sigma_low_sq, vol.sigma_high_sq      required
    vol.degenerate = false                   true allows sigma_low_sq == sigma_high_sq
    grid.T = 1, grid.nt = 200, grid.nx = 400, grid.x_half_width (default 6*sigma_high*sqrt(T))
    terminal.kind = affine, terminal.coeffs = 0, 1
    generator.f.kind = affine, generator.f.coeffs = 0, 0, 0   (same for generator.g)
    generator.kappa                          optional declared z-Lipschitz constant
    loss.L.kind = affine | sin, loss.L.slope = 1, loss.L.gamma = 0, loss.L.threshold = c0, c1
                                             (threshold c0 + c1*t; same keys for loss.R)
    loss.sep                                 required separation inf(R - L) > 0
    solver.policy = constant, solver.tol_iter = 1e-6, solver.tol_flat (default 10(h+dt)(1+TV(A)))
    solver.max_iters = 50, solver.beta = 2, solver.n_offsets = 41, solver.kappa_contraction
    game.t = 0, game.s_count, game.q_count   (default: every grid time in [t, T])
    verify.n_instances = 1000, verify.n_controls = 1000
    output.dir = out, seed = 0

``MRGBSDE_OUTPUT_DIR`` overrides ``output.dir``. Exit codes: 0 success,
2 configuration or precondition error, 3 non-convergence, 4 failed checks,
5 regression diff.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import gametheory as gt
from . import meanreflect as mr
from . import suites
from .csvio import read_table, write_table
from .errors import ConfigurationError, IterationFailure, SolverError
from .gbsde import GenForm, GeneratorSpec
from .gcore import Grid, PayoffSpec, VolBounds
from .skorokhod import BoundaryCurve, BoundaryPair

EXIT_OK, EXIT_CONFIG, EXIT_ITER, EXIT_CHECK, EXIT_REGRESS = 0, 2, 3, 4, 5
SUITES = ("skorokhod", "game", "classical-limit", "gexp", "kprocess")
OUTPUT_ENV = "MRGBSDE_OUTPUT_DIR"

# key -> (type, default); None default means optional, REQUIRED means required
REQUIRED = object()
SCHEMA = {
    "vol.sigma_low_sq": (float, REQUIRED),
    "vol.sigma_high_sq": (float, REQUIRED),
    "vol.degenerate": (bool, False),
    "grid.T": (float, 1.0),
    "grid.nt": (int, 200),
    "grid.nx": (int, 400),
    "grid.x_half_width": (float, None),
    "terminal.kind": (str, "affine"),
    "terminal.coeffs": ("floats", (0.0, 1.0)),
    "generator.f.kind": (str, "affine"),
    "generator.f.coeffs": ("floats", (0.0, 0.0, 0.0)),
    "generator.g.kind": (str, "affine"),
    "generator.g.coeffs": ("floats", (0.0, 0.0, 0.0)),
    "generator.kappa": (float, None),
    "loss.L.kind": (str, "affine"),
    "loss.L.slope": (float, 1.0),
    "loss.L.gamma": (float, 0.0),
    "loss.L.threshold": ("floats", REQUIRED),
    "loss.R.kind": (str, "affine"),
    "loss.R.slope": (float, 1.0),
    "loss.R.gamma": (float, 0.0),
    "loss.R.threshold": ("floats", REQUIRED),
    "loss.sep": (float, REQUIRED),
    "solver.policy": (str, "constant"),
    "solver.tol_iter": (float, 1e-6),
    "solver.tol_flat": (float, None),
    "solver.max_iters": (int, 50),
    "solver.beta": (float, 2.0),
    "solver.n_offsets": (int, mr.N_OFFSETS),
    "solver.kappa_contraction": (float, None),
    "game.t": (float, 0.0),
    "game.s_count": (int, None),
    "game.q_count": (int, None),
    "verify.n_instances": (int, 1000),
    "verify.n_controls": (int, 1000),
    "output.dir": (str, "out"),
    "seed": (int, 0),
}


class ConfigParseError(ConfigurationError):
    """Syntax or schema error in a config file, with the offending line."""


@dataclass
class ExperimentConfig:
    """A validated experiment: resolved values plus the built solver objects."""

    values: dict
    source: str
    vb: VolBounds = field(repr=False, default=None)
    grid: Grid = field(repr=False, default=None)
    terminal: PayoffSpec = field(repr=False, default=None)
    gen: GeneratorSpec = field(repr=False, default=None)
    losses: BoundaryPair = field(repr=False, default=None)

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> str:
        """Resolved configuration (defaults filled in), one ``key = value`` per line."""
        lines = []
        for key in SCHEMA:
            v = self.values.get(key)
            if v is None:
                continue
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.echo().encode()).hexdigest()

    def instance(self, **overrides) -> mr.MRInstance:
        v = self.values
        kw = dict(policy=v["solver.policy"], tol_iter=v["solver.tol_iter"], tol_flat=v["solver.tol_flat"],
                  max_iters=v["solver.max_iters"], beta=v["solver.beta"], n_offsets=v["solver.n_offsets"],
                  kappa_contraction=v["solver.kappa_contraction"])
        kw.update(overrides)
        return mr.MRInstance(self.terminal, self.gen, self.losses, self.grid, self.vb, **kw)

    def output_dir(self) -> Path:
        env = os.environ.get(OUTPUT_ENV)
        return Path(env) if env else Path(self.values["output.dir"])


def _convert(kind, text: str, key: str, lineno: int):
    try:
        if kind == "floats":
            parts = [p.strip() for p in text.split(",") if p.strip()]
            vals = tuple(float(p) for p in parts)
            if not vals or not all(math.isfinite(x) for x in vals):
                raise ValueError
            return vals
        if kind is float:
            val = float(text)
            if not math.isfinite(val):
                raise ValueError
            return val
        if kind is int:
            return int(text)
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        return text
    except ValueError:
        raise ConfigParseError(f"line {lineno}: cannot parse value {text!r} for {key}") from None


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines and apply defaults; raises :class:`ConfigParseError`."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigParseError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigParseError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(SCHEMA[key][0], val, key, lineno)
    for key, (_, default) in SCHEMA.items():
        if key not in values:
            if default is REQUIRED:
                if key == "loss.sep":
                    raise ConfigurationError(
                        "BoundaryPair separation invariant: loss.sep (inf(R - L) > 0) is required")
                raise ConfigParseError(f"missing required key {key!r}")
            values[key] = default
    return values


def _threshold(coeffs, t) -> np.ndarray:
    if len(coeffs) == 1:
        return np.full_like(t, coeffs[0])
    if len(coeffs) == 2:
        return coeffs[0] + coeffs[1] * t
    raise ConfigurationError("loss thresholds take 'c0' or 'c0, c1' (c0 + c1*t)")


def _loss(v: dict, side: str, t) -> BoundaryCurve:
    kind = v[f"loss.{side}.kind"]
    thr = _threshold(v[f"loss.{side}.threshold"], t)
    slope = v[f"loss.{side}.slope"]
    if kind == "affine":
        return BoundaryCurve.affine(thr, slope)
    if kind == "sin":
        return BoundaryCurve.sin_perturbed(thr, v[f"loss.{side}.gamma"], slope)
    raise ConfigurationError(f"unknown loss kind {kind!r} (use affine or sin)")


def build_config(values: dict, source: str = "<string>") -> ExperimentConfig:
    """Build and validate every component; component errors propagate unchanged."""
    v = values
    vb = VolBounds(v["vol.sigma_low_sq"], v["vol.sigma_high_sq"], degenerate=v["vol.degenerate"])
    f = GenForm(v["generator.f.kind"], v["generator.f.coeffs"])
    g = GenForm(v["generator.g.kind"], v["generator.g.coeffs"])
    gen = GeneratorSpec(f, g, kappa=v["generator.kappa"])
    grid = Grid.build(vb, T=v["grid.T"], nt=v["grid.nt"], nx=v["grid.nx"],
                      x_half_width=v["grid.x_half_width"], coupling=gen.coupling)
    terminal = PayoffSpec(v["terminal.kind"], v["terminal.coeffs"])
    losses = BoundaryPair(_loss(v, "L", grid.t), _loss(v, "R", grid.t), sep=v["loss.sep"])
    if v["solver.policy"] not in mr.POLICIES:
        raise ConfigurationError(f"unknown solver.policy {v['solver.policy']!r}")
    return ExperimentConfig(dict(v), source, vb, grid, terminal, gen, losses)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} not found")
    return build_config(parse_config_text(path.read_text()), str(path))


# manifest ---------------------------------------------------------------------------------


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp for reproducible manifests
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(now))


def write_manifest(out: Path, cfg: ExperimentConfig, verb: str, checks: list, files: list) -> Path:
    manifest = {
        "verb": verb,
        "config_hash": cfg.config_hash(),
        "versions": {"mrgbsde": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "timestamp": _timestamp(),
        "grid": {"nt": cfg.grid.nt, "nx": cfg.grid.nx, "substeps": cfg.grid.substeps,
                 "x_half_width": cfg.grid.x_half_width},
        "checks": [{"name": c.name, "passed": bool(c.passed), "value": float(c.value),
                    "bound": float(c.bound), "detail": c.detail} for c in checks],
        "all_passed": all(c.passed for c in checks),
        "files": files,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.txt").write_text(cfg.echo())
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_checks(path: Path, checks: list) -> Path:
    return write_table(path, ["check", "passed", "value", "bound", "detail"],
                       [(c.name, c.passed, c.value, c.bound, c.detail) for c in checks])


def _print_checks(checks: list, stream=None):
    stream = sys.stdout if stream is None else stream
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  value={c.value:.6g} bound={c.bound:.6g}  {c.detail}",
              file=stream)


# verbs ----------------------------------------------------------------------------------


def run_solve(cfg: ExperimentConfig, out: Path | None = None):
    """Solve, write ``result.csv`` (+ ``iterations.csv``) and the manifest; returns (solution, checks)."""
    out = cfg.output_dir() if out is None else out
    inst = cfg.instance()
    sol = mr.solve(inst)
    rep = mr.check_flatness(sol)
    checks = [
        suites.Check("flatness_R", rep.flat_R, rep.sum_R, rep.tol_flat),
        suites.Check("flatness_L", rep.flat_L, rep.sum_L, rep.tol_flat),
        suites.Check("admissibility", rep.admissible, max(rep.violation_L, rep.violation_R), rep.tol_flat),
    ]
    files = [sol.to_csv(out / "result.csv").name]
    if sol.iterations:
        files.append(sol.iterations_to_csv(out / "iterations.csv").name)
    write_manifest(out, cfg, "solve", checks, files)
    return sol, checks


def run_verify(cfg: ExperimentConfig, suite: str, out: Path | None = None):
    out = cfg.output_dir() if out is None else out
    seed = cfg["seed"]
    if suite == "skorokhod":
        checks = suites.skorokhod_flagship() + suites.skorokhod_suite(seed, cfg["verify.n_instances"])
    elif suite == "gexp":
        checks = suites.gexp_suite(cfg.vb, cfg.grid, seed)
    elif suite == "classical-limit":
        checks = suites.classical_suite(cfg.vb.sigma_high_sq, cfg.grid.T, cfg.grid.nt, cfg.grid.nx)
    elif suite == "kprocess":
        checks = suites.kprocess_suite(cfg.terminal, cfg.gen, cfg.grid, cfg.vb, seed, cfg["verify.n_controls"])
    elif suite == "game":
        checks = suites.game_suite(cfg.instance(), cfg["game.t"], cfg["game.s_count"], cfg["game.q_count"])
    else:
        raise ConfigurationError(f"unknown suite {suite!r}; expected one of {SUITES}")
    name = f"verify_{suite}.csv"
    _write_checks(out / name, checks)
    write_manifest(out, cfg, f"verify:{suite}", checks, [name])
    return checks


def run_game(cfg: ExperimentConfig, out: Path | None = None):
    out = cfg.output_dir() if out is None else out
    inst = cfg.instance()
    sol = mr.solve(inst)
    gg = gt.GameGrid.sampled(cfg.grid, cfg["game.t"], cfg["game.s_count"], cfg["game.q_count"])
    gv = gt.optim_bounds(sol, inst, gg)
    checks = [
        suites.Check("chain", gv.chain_ok, gv.E_Y, gv.supinf_upper),
        suites.Check("minimax", gv.minimax_ok, gv.infsup_upper - gv.supinf_upper, 0.0),
        suites.Check("equality_case", gv.equality_ok, abs(gv.supinf_upper - gv.E_Y), 3 * gv.tol),
    ]
    s_star = q_star = None
    try:
        gt.check_linear_form(inst)
        lg = gt.linear_game(inst, gg, sol)
        s_star, q_star = lg.s_star, lg.q_star
        checks += [suites.Check("linear_value", lg.equal_ok, lg.supinf, lg.E_Y),
                   suites.Check("linear_saddle", lg.saddle_ok, lg.saddle_value, lg.supinf),
                   suites.Check("saddle_matches_bruteforce", lg.brute_match, lg.s_star, lg.brute_s)]
    except SolverError:
        pass
    gv.to_csv(out / "game.csv", s_star, q_star)
    write_manifest(out, cfg, "game", checks, ["game.csv"])
    return gv, checks


def _compare_csv(new: Path, old: Path, tol: float = 1e-12) -> list[str]:
    """Per-column differences between two CSV files (floats compared as parsed values)."""
    h1, r1 = read_table(new)
    h2, r2 = read_table(old)
    if h1 != h2:
        return [f"{new.name}: header differs ({h1} vs {h2})"]
    if len(r1) != len(r2):
        return [f"{new.name}: row count differs ({len(r1)} vs {len(r2)})"]
    diffs = {}
    for a, b in zip(r1, r2):
        for col, x, y in zip(h1, a, b):
            if x == y:
                continue
            try:
                fx, fy = float(x), float(y)
                d = abs(fx - fy)
                bad = not d <= tol * max(1.0, abs(fy))
            except ValueError:
                d, bad = math.inf, True
            if bad:
                diffs[col] = max(diffs.get(col, 0.0), d)
    return [f"{new.name}: column {c} differs by up to {d:.3g}" for c, d in diffs.items()]


REGRESS_FILES = ("result.csv", "iterations.csv")


def run_regress(cfg: ExperimentConfig, golden: Path, update: bool = False):
    """Regenerate the solve outputs and compare them with ``golden``.

    Returns ``(diffs, notes)``: value diffs fail the regression, a changed
    config hash is only noted.
    """
    golden = Path(golden)
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        run_solve(cfg, out)
        produced = [f for f in REGRESS_FILES if (out / f).exists()]
        if update:
            golden.mkdir(parents=True, exist_ok=True)
            for f in produced:
                shutil.copyfile(out / f, golden / f)
            shutil.copyfile(out / "manifest.json", golden / "manifest.json")
            return [], ["goldens updated"]
        diffs, notes = [], []
        for f in REGRESS_FILES:
            new, old = out / f, golden / f
            if new.exists() != old.exists():
                diffs.append(f"{f}: present in only one of the runs")
            elif new.exists():
                diffs += _compare_csv(new, old)
        gm = golden / "manifest.json"
        if gm.exists():
            old_hash = json.loads(gm.read_text()).get("config_hash")
            if old_hash != cfg.config_hash():
                notes.append("manifest: config hash differs from the golden run")
    return diffs, notes


# entry point ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mrgbsde", description="Doubly mean-reflected G-BSDE experiments")
    sub = p.add_subparsers(dest="verb", required=True)
    s = sub.add_parser("solve", help="solve the configured instance")
    s.add_argument("config")
    v = sub.add_parser("verify", help="run a property suite")
    v.add_argument("config")
    v.add_argument("--suite", required=True, choices=SUITES)
    g = sub.add_parser("game", help="optimization chain and linear game")
    g.add_argument("config")
    r = sub.add_parser("regress", help="compare regenerated CSVs with goldens")
    r.add_argument("config")
    r.add_argument("--golden", required=True)
    r.add_argument("--update", action="store_true", help="rewrite the golden files")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.verb == "solve":
            sol, checks = run_solve(cfg)
            _print_checks(checks)
            return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK
        if args.verb == "verify":
            checks = run_verify(cfg, args.suite)
            _print_checks(checks)
            return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK
        if args.verb == "game":
            _, checks = run_game(cfg)
            _print_checks(checks)
            return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK
        diffs, notes = run_regress(cfg, Path(args.golden), args.update)
        for n in notes:
            print(f"NOTE  {n}")
        for d in diffs:
            print(f"DIFF  {d}")
        return EXIT_REGRESS if diffs else EXIT_OK
    except IterationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("diagnostics: " + ", ".join(f"{d:.3g}" for d in exc.diagnostics), file=sys.stderr)
        return EXIT_ITER
    except SolverError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
