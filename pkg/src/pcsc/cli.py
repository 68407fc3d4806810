"""Configuration parsing, command dispatch and report emission.

Commands:

    analyze         degree, flags, eccentricity stats, obstruction ladder
    solve           regime-dispatched solver; emits the exponent field
    verify          curvature defect of a provided (u, g) pair
    counterexample  generator output for the negative regime
    mms             manufactured-solution convergence table

Configs are JSON documents; fields are described by Fourier-term lists or
CSV dumps.  Reports are single JSON objects with deterministic layout;
identical configs produce byte-identical reports under --no-meta.  Exit
codes: 0 success, 2 certified non-realizability, 3 solver failure
(outcome unknown), 1 configuration errors.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import grid_fields as gf
from . import hermitian as hm
from . import mms as mms_mod
from . import obstructions as obs
from . import solve_negative as sneg
from . import solve_positive as spos
from . import solve_zero as szero
from .errors import ConfigError, PcscError, UnresolvedMode, WrongRegime
from .grid_fields import OneFormField, ScalarField, TorusGrid
from .hermitian import HermitianBackground

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_REALIZABLE = 2
EXIT_SOLVER_FAILURE = 3

ZERO_DEGREE_TOL = 1e-8


# ----------------------------------------------------------------------
# field specifications
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class FieldTerm:
    amplitude: float
    kvec: tuple[int, ...]
    phase: str  # cos | sin


@dataclass(frozen=True)
class FieldSpec:
    """Deterministic textual description of a field: terms + constant, or a CSV file."""

    constant: float = 0.0
    terms: tuple[FieldTerm, ...] = ()
    file: str | None = None

    def evaluate(self, grid: TorusGrid, base_dir: Path | None = None) -> ScalarField:
        if self.file is not None:
            path = Path(self.file)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return read_field_csv(path, grid)
        coords = grid.meshgrid()
        values = np.full(grid.shape, self.constant)
        for term in self.terms:
            if len(term.kvec) != grid.d:
                raise ConfigError(
                    f"kvec length {len(term.kvec)} does not match grid dimension {grid.d}"
                )
            if any(abs(k) >= grid.N // 2 for k in term.kvec):
                raise UnresolvedMode(
                    f"kvec {term.kvec} is not resolved on an N={grid.N} grid"
                )
            phase = np.zeros(grid.shape)
            for ax, k in enumerate(term.kvec):
                phase = phase + 2.0 * np.pi * k * coords[ax]
            values = values + term.amplitude * (np.cos(phase) if term.phase == "cos" else np.sin(phase))
        return ScalarField(grid, values)


def _parse_field_spec(node, where: str) -> FieldSpec:
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        return FieldSpec(constant=float(node))
    if not isinstance(node, dict):
        raise ConfigError(f"{where}: expected a number or an object")
    if "file" in node:
        if not isinstance(node["file"], str):
            raise ConfigError(f"{where}.file: expected a path string")
        return FieldSpec(file=node["file"])
    constant = node.get("constant", 0.0)
    if not isinstance(constant, (int, float)) or isinstance(constant, bool):
        raise ConfigError(f"{where}.constant: expected a number")
    terms = []
    for i, raw in enumerate(node.get("terms", [])):
        label = f"{where}.terms[{i}]"
        if not isinstance(raw, dict):
            raise ConfigError(f"{label}: expected an object")
        try:
            amplitude = float(raw["amplitude"])
            kvec = tuple(int(k) for k in raw["kvec"])
            phase = raw.get("phase", "cos")
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{label}: needs amplitude and integer kvec") from exc
        if phase not in ("cos", "sin"):
            raise ConfigError(f"{label}.phase: must be 'cos' or 'sin'")
        terms.append(FieldTerm(amplitude, kvec, phase))
    return FieldSpec(constant=float(constant), terms=tuple(terms))


# ----------------------------------------------------------------------
# field emission formats
# ----------------------------------------------------------------------


def emit_field_csv(path: Path, f: ScalarField) -> None:
    """Row-major CSV dump with a shape header line."""
    grid = f.grid
    rows = f.values.reshape(grid.N, -1) if grid.d > 1 else f.values.reshape(1, -1)
    with open(path, "w") as fh:
        fh.write("# d N n axis-order\n")
        fh.write(f"# {grid.d} {grid.N} {grid.n} row-major\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_field_csv(path: Path, grid: TorusGrid) -> ScalarField:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read field file {path}: {exc}") from exc
    data = []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        data.append([float(tok) for tok in line.split(",")])
    values = np.asarray(data)
    if values.size != grid.size:
        raise ConfigError(
            f"field file {path} holds {values.size} values, grid needs {grid.size}"
        )
    return ScalarField(grid, values.reshape(grid.shape))


def emit_heatmap_pgm(path: Path, f: ScalarField) -> None:
    """8-bit P2 heatmap with the affine scale recorded in the header."""
    if f.grid.d != 2:
        raise ValueError("heatmaps are only emitted for d = 2 grids")
    lo, hi = f.min(), f.max()
    span = hi - lo if hi > lo else 1.0
    pixels = np.rint(255.0 * (f.values - lo) / span).astype(int)
    with open(path, "w") as fh:
        fh.write("P2\n")
        fh.write(f"# min={float(lo)!r} max={float(hi)!r}\n")
        fh.write(f"{f.grid.N} {f.grid.N}\n255\n")
        for row in pixels:
            fh.write(" ".join(str(v) for v in row) + "\n")


# ----------------------------------------------------------------------
# config parsing
# ----------------------------------------------------------------------


def parse_config(
    text: str, base_dir: Path | None = None
) -> tuple[TorusGrid, HermitianBackground, ScalarField, dict]:
    """Build (grid, background, target, options) from a JSON config document.

    The options dict carries the solver block plus the optional evaluated
    `psi_prime` and `u` fields used by the counterexample and verify
    commands.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")

    raw_grid = doc.get("grid")
    if not isinstance(raw_grid, dict):
        raise ConfigError("grid: required object with d, N, n")
    try:
        grid = TorusGrid(int(raw_grid["d"]), int(raw_grid["N"]), int(raw_grid["n"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}") from exc

    raw_theta = doc.get("theta0", [0.0] * grid.d)
    if not isinstance(raw_theta, list) or len(raw_theta) != grid.d:
        raise ConfigError(f"theta0: expected a list of {grid.d} field specs")
    theta0 = OneFormField.from_fields(
        [
            _parse_field_spec(raw_theta[ax], f"theta0[{ax}]").evaluate(grid, base_dir)
            for ax in range(grid.d)
        ]
    )
    if "S0" not in doc:
        raise ConfigError("S0: required field spec")
    s0 = _parse_field_spec(doc["S0"], "S0").evaluate(grid, base_dir)
    potential = _parse_field_spec(doc.get("potential", 0.0), "potential").evaluate(grid, base_dir)
    if "g" not in doc:
        raise ConfigError("g: required field spec")
    g = _parse_field_spec(doc["g"], "g").evaluate(grid, base_dir)

    solver = doc.get("solver", {})
    if not isinstance(solver, dict):
        raise ConfigError("solver: expected an object")
    options = {"solver": solver}
    if "psi_prime" in doc:
        options["psi_prime"] = _parse_field_spec(doc["psi_prime"], "psi_prime").evaluate(
            grid, base_dir
        )
    if "u" in doc:
        options["u"] = _parse_field_spec(doc["u"], "u").evaluate(grid, base_dir)

    bg = HermitianBackground(grid, theta0, s0, potential)
    return grid, bg, g, options


def _negative_options(solver: dict) -> sneg.SolveOptions:
    keys = ("t_steps", "newton_max", "newton_tol", "monotone_max", "monotone_tol", "K_safety")
    return sneg.SolveOptions(**{k: solver[k] for k in keys if k in solver})

def _zero_options(solver: dict) -> szero.VariationalOptions:
    keys = ("max_iters", "newton_max", "constraint_tol", "stationarity_tol", "handoff")
    return szero.VariationalOptions(**{k: solver[k] for k in keys if k in solver})

def _positive_options(solver: dict) -> spos.LocalSolveOptions:
    keys = ("newton_max", "tol")
    return spos.LocalSolveOptions(**{k: solver[k] for k in keys if k in solver})


# ----------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------


@dataclass
class SolveReport:
    """Machine-readable outcome of one command invocation."""

    command: str
    regime: str
    gamma: float
    solver: str = ""
    iterations: int = 0
    residual: float | None = None
    obstruction: dict | None = None
    lam: float | None = None
    gamma_shift: float | None = None
    bounds_checked: list = field(default_factory=list)
    field_outputs: list = field(default_factory=list)
    verdict: str = ""
    error: str | None = None
    extra: dict = field(default_factory=dict)
    meta: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "command": self.command,
            "regime": self.regime,
            "gamma": _json_real(self.gamma),
            "solver": self.solver,
            "iterations": self.iterations,
            "residual": _json_real(self.residual),
            "obstruction": _map_reals(self.obstruction),
            "lambda": _json_real(self.lam),
            "gamma_shift": _json_real(self.gamma_shift),
            "bounds_checked": self.bounds_checked,
            "field_outputs": self.field_outputs,
            "verdict": self.verdict,
            "error": self.error,
        }
        out.update(_map_reals(self.extra) or {})
        if self.meta is not None:
            out["meta"] = self.meta
        return out


def _json_real(v):
    """Keep reports strict JSON: infinities become labelled strings."""
    if v is None:
        return None
    v = float(v)
    if np.isfinite(v):
        return v
    return "-inf" if v < 0 else "inf"


def _map_reals(node):
    if node is None:
        return None
    return {
        k: (_json_real(v) if isinstance(v, float) else v)
        for k, v in node.items()
    }


def render_report(report: SolveReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def _classify_regime(gamma: float) -> str:
    if gamma < -ZERO_DEGREE_TOL:
        return "Negative"
    if gamma > ZERO_DEGREE_TOL:
        return "Positive"
    return "Zero"


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------


def _counting_callback(counter: dict):
    def cb(_):
        counter["n"] += 1

    return cb


def _emit_solution(out_dir: Path | None, u: ScalarField, report: SolveReport, stem: str = "u"):
    if out_dir is None:
        return
    csv_path = out_dir / f"{stem}.csv"
    emit_field_csv(csv_path, u)
    report.field_outputs.append(csv_path.name)
    if u.grid.d == 2:
        pgm_path = out_dir / f"{stem}.pgm"
        emit_heatmap_pgm(pgm_path, u)
        report.field_outputs.append(pgm_path.name)


def _cmd_analyze(bg, g, options, report, out_dir) -> int:
    gamma = report.gamma
    report.solver = "analyze"
    report.extra["gauduchon"] = hm.is_gauduchon(bg)
    report.extra["balanced"] = hm.is_balanced(bg)
    f0 = hm.eccentricity(bg)
    report.extra["eccentricity_min"] = f0.min()
    report.extra["eccentricity_max"] = f0.max()
    if report.regime == "Negative":
        bg_const, _ = sneg.yamabe_normalize(bg, _negative_options(options["solver"]))
        ladder = obs.obstruction_ladder(bg_const, g)
        report.obstruction = ladder.to_dict()
        report.verdict = ladder.verdict
        return EXIT_NOT_REALIZABLE if ladder.verdict == "NotRealizable" else EXIT_OK
    if report.regime == "Zero":
        try:
            ok = szero.check_hypotheses(bg, g)
        except WrongRegime as exc:
            report.verdict = "Unknown"
            report.extra["hypotheses"] = None
            report.error = str(exc)
            return EXIT_OK
        report.extra["hypotheses"] = ok
        report.extra["g_mean"] = bg.integrate(g)
        if ok:
            report.verdict = "Unknown"
            return EXIT_OK
        if g.norm_inf() < 1e-14:
            report.verdict = "TriviallyRealizable"  # zero target on a flat background
            return EXIT_OK
        report.verdict = "NotRealizable"
        return EXIT_NOT_REALIZABLE
    # Positive regime: the integral identity forces a positive part.
    report.extra["g_max"] = g.max()
    if g.max() <= 0.0:
        report.verdict = "NotRealizable"
        return EXIT_NOT_REALIZABLE
    report.verdict = "Unknown"
    return EXIT_OK


def _cmd_solve(bg, g, options, report, out_dir) -> int:
    counter = {"n": 0}
    cb = _counting_callback(counter)
    if report.regime == "Negative":
        opts = _negative_options(options["solver"])
        bg_const, u_base = sneg.yamabe_normalize(bg, opts)
        ladder = obs.obstruction_ladder(bg_const, g)
        report.obstruction = ladder.to_dict()
        if ladder.verdict == "NotRealizable":
            report.verdict = "NotRealizable"
            return EXIT_NOT_REALIZABLE
        if g.max() <= 0.0 and g.norm_inf() > 0.0:
            report.solver = "monotone"
            u_plus = sneg.build_supersolution(bg_const, g)
            level = min(sneg.build_subsolution(bg_const, g), u_plus.min())
            u_local = sneg.monotone_solve(
                bg_const, g, ScalarField.constant(bg.grid, level), u_plus, opts, callback=cb
            )
        else:
            report.solver = "continuity"
            u_local = sneg.continuity_solve(bg_const, g, opts, callback=cb)
        u = u_base + u_local
        if g.max() < 0.0:
            sneg.check_sup_bound(bg_const, g, u_local)
            report.bounds_checked.append({"name": "sup_bound", "passed": True})
    elif report.regime == "Zero":
        if not szero.check_hypotheses(bg, g):
            report.verdict = "NotRealizable"
            return EXIT_NOT_REALIZABLE
        report.solver = "variational"
        opts = _zero_options(options["solver"])
        u, state = szero.solve_sign_changing(bg, g, opts, callback=cb)
        report.lam = state.lam
        report.gamma_shift = state.gamma
        report.extra["mean_multiplier"] = state.mean_multiplier
        report.extra["energy"] = state.energy
        counter["n"] = state.iterations
    else:
        if g.max() <= 0.0:
            report.verdict = "NotRealizable"
            return EXIT_NOT_REALIZABLE
        report.solver = "local"
        opts = _positive_options(options["solver"])
        norm, u_base = hm.gauduchon_normalize(bg)
        u_local = spos.local_solve(norm, g, opts, callback=cb)
        u = u_base + u_local
    report.iterations = counter["n"]
    report.residual = hm.prescribed_residual(bg, g, u)
    closure = hm.integral_identity_gap(bg, g, u)
    report.bounds_checked.append({"name": "degree_closure", "passed": bool(closure < 1e-6)})
    report.extra["degree_closure_gap"] = closure
    report.verdict = "Solved"
    _emit_solution(out_dir, u, report)
    tol = options.get("tol") or 1e-6
    return EXIT_OK if report.residual < tol else EXIT_SOLVER_FAILURE


def _cmd_verify(bg, g, options, report, out_dir) -> int:
    if "u" not in options:
        raise ConfigError("verify needs a `u` field spec in the config")
    u = options["u"]
    report.solver = "verify"
    report.residual = hm.prescribed_residual(bg, g, u)
    tol = options.get("tol") or 1e-6
    ok = report.residual < tol
    report.verdict = "Verified" if ok else "Failed"
    return EXIT_OK if ok else EXIT_SOLVER_FAILURE


def _cmd_counterexample(bg, g, options, report, out_dir) -> int:
    opts = _negative_options(options["solver"])
    bg_const, _ = sneg.yamabe_normalize(bg, opts)
    seed = options.get("psi_prime", g)
    gen, certificate = obs.make_counterexample(bg_const, seed)
    ladder = obs.obstruction_ladder(bg_const, gen)
    report.solver = "counterexample"
    report.obstruction = ladder.to_dict()
    report.verdict = ladder.verdict
    report.extra["certificate_min"] = certificate.min()
    if out_dir is not None:
        for name, fld in (("g_counterexample", gen), ("psi_certificate", certificate)):
            path = out_dir / f"{name}.csv"
            emit_field_csv(path, fld)
            report.field_outputs.append(path.name)
    return EXIT_OK


def _cmd_mms(bg, g, options, report, out_dir) -> int:
    rows = mms_mod.convergence_table(report.regime, d=bg.grid.d, n=bg.grid.n)
    passed = mms_mod.table_passes(rows)
    report.solver = "mms"
    report.extra["table"] = [
        {k: _json_real(v) if isinstance(v, float) else v for k, v in row.items()}
        for row in rows
    ]
    report.bounds_checked.append({"name": "spectral_rate", "passed": bool(passed)})
    report.verdict = "Converged" if passed else "Failed"
    return EXIT_OK if passed else EXIT_SOLVER_FAILURE


_COMMANDS = {
    "analyze": _cmd_analyze,
    "solve": _cmd_solve,
    "verify": _cmd_verify,
    "counterexample": _cmd_counterexample,
    "mms": _cmd_mms,
}


def run(
    command: str,
    config_text: str,
    out_dir: str | Path | None = None,
    tol: float | None = None,
    include_meta: bool = True,
    base_dir: Path | None = None,
) -> tuple[SolveReport, int]:
    """Execute one command against a config document.

    Returns the report and the process exit code.  Solver failures are
    caught and serialized; config errors propagate to the caller.
    """
    if command not in _COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    grid, bg, g, options = parse_config(config_text, base_dir)
    options["tol"] = tol
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    gamma = hm.gauduchon_degree(bg)
    report = SolveReport(command=command, regime=_classify_regime(gamma), gamma=gamma)
    if include_meta:
        report.meta = {
            "version": __version__,
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
    try:
        code = _COMMANDS[command](bg, g, options, report, out_path)
    except PcscError as exc:
        report.error = f"{type(exc).__name__}: {exc}"
        report.verdict = "Unknown"
        code = EXIT_SOLVER_FAILURE
    if out_path is not None:
        (out_path / "report.json").write_text(render_report(report))
    return report, code


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="pcsc", description="prescribed-curvature laboratory on periodic grids"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--out", default=".", help="output directory for reports and fields")
        p.add_argument("--tol", type=float, default=None, help="override the acceptance tolerance")
        p.add_argument("--no-meta", action="store_true", help="omit timestamps from the report")
    args = parser.parse_args(argv)

    config_path = Path(args.config)
    try:
        text = config_path.read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report, code = run(
            args.command,
            text,
            out_dir=args.out,
            tol=args.tol,
            include_meta=not args.no_meta,
            base_dir=config_path.parent,
        )
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(render_report(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
