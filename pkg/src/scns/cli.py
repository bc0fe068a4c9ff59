"""Configuration files, initial conditions, subcommands and output writers.

Usage::

    scns run|ensemble|sweep|check --config PATH [--seed N] [--out DIR]

Exit codes: 0 success, 1 diagnostic failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ConfigError, Grid, InitialData, NoiseConfig, SimParams, validate_params

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
IC_KINDS = ("constant", "gaussian-bump", "vacuum-patch", "file")


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "gaussian-bump"
    base: float = 1.0
    amplitude: float = 0.1
    width: float = 0.1
    center: float = 0.5
    radius: float = 0.1
    velocity: float = 0.0
    file: str = ""


@dataclass(frozen=True)
class OutputSpec:
    out_every: float = 1.0 / 64
    out_dir: str = "out"
    snapshots: bool = True


@dataclass(frozen=True)
class RunSpec:
    n_paths: int = 200
    levels: int = 4
    region: str = "0.25,0.75"
    phi: int = 1
    s: float = 0.5
    t: float = 1.0
    k: int = 1
    p_list: str = "1,2"


@dataclass(frozen=True)
class RunConfig:
    params: SimParams = field(default_factory=SimParams)
    initial: InitialSpec = field(default_factory=InitialSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    run: RunSpec = field(default_factory=RunSpec)

    @property
    def p_values(self) -> tuple:
        return tuple(int(v) for v in self.run.p_list.split(",") if v.strip())

    @property
    def region_bounds(self) -> list:
        lo, hi = (float(v) for v in self.run.region.split(","))
        return [(lo, hi)] * self.params.d


# section name -> dataclass holding its keys
_SECTIONS = {
    "params": SimParams,
    "noise": NoiseConfig,
    "initial": InitialSpec,
    "output": OutputSpec,
    "run": RunSpec,
}


def _fields(cls):
    return {f.name: f for f in dataclasses.fields(cls) if f.name != "noise"}


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return _parse_float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None


def _parse_float(raw: str) -> float:
    raw = raw.strip()
    if "/" in raw:
        a, b = raw.split("/", 1)
        return float(a) / float(b)
    return float(raw)


def parse_config(text: str, *, validate: bool = True) -> RunConfig:
    """Parse an INI-style config; unknown sections/keys and duplicates are errors."""
    cp = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("syntax error: " + " ".join(str(exc).split())) from None
    errors = []
    values = {name: {} for name in _SECTIONS}
    for sec in cp.sections():
        if sec not in _SECTIONS:
            errors.append(f"unknown section [{sec}]")
            continue
        flds = _fields(_SECTIONS[sec])
        defaults = _SECTIONS[sec]()
        for key, raw in cp.items(sec):
            if key not in flds:
                errors.append(f"[{sec}] unknown key {key!r}")
                continue
            try:
                values[sec][key] = _convert(sec, key, raw, getattr(defaults, key))
            except ConfigError as exc:
                errors.extend(exc.violations)
    if errors:
        raise ConfigError(errors)
    noise = NoiseConfig(**values["noise"])
    params = SimParams(noise=noise, **values["params"])
    cfg = RunConfig(
        params=params,
        initial=InitialSpec(**values["initial"]),
        output=OutputSpec(**values["output"]),
        run=RunSpec(**values["run"]),
    )
    if validate:
        check_config(cfg)
    return cfg


def check_config(cfg: RunConfig) -> dict:
    errors = []
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = validate_params(cfg.params)
    except ConfigError as exc:
        errors.extend(exc.violations)
        report = {}
    if cfg.initial.kind not in IC_KINDS:
        errors.append(f"[initial] kind: must be one of {', '.join(IC_KINDS)}")
    if cfg.initial.kind == "file" and not cfg.initial.file:
        errors.append("[initial] file: required when kind = file")
    if not cfg.output.out_every > 0:
        errors.append("[output] out_every: must be > 0")
    else:
        p = cfg.params
        step = max(p.dt_det, p.dt_st)
        r = cfg.output.out_every / step
        if abs(r - round(r)) > 1e-9 * max(1.0, r) or round(r) < 1:
            errors.append("[output] out_every: must be a positive multiple of max(dt_det, dt_st)")
    try:
        cfg.p_values
    except ValueError:
        errors.append("[run] p_list: expected comma-separated integers")
    try:
        cfg.region_bounds
    except ValueError:
        errors.append("[run] region: expected 'lo,hi'")
    if errors:
        raise ConfigError(errors)
    return report


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_text(cfg: RunConfig) -> str:
    """Serialize every field; ``parse_config(to_text(c)) == c``."""
    objs = {
        "params": cfg.params,
        "noise": cfg.params.noise,
        "initial": cfg.initial,
        "output": cfg.output,
        "run": cfg.run,
    }
    out = []
    for sec, obj in objs.items():
        out.append(f"[{sec}]")
        for name in _fields(type(obj)):
            out.append(f"{name} = {_fmt(getattr(obj, name))}")
        out.append("")
    return "\n".join(out)


# -- initial conditions -----------------------------------------------------


def make_initial_data(spec: InitialSpec, grid: Grid) -> InitialData:
    """Build ``(rho0, m0)`` on the grid from an initial-condition selector."""
    X = np.stack(grid.coords())
    r2 = np.sum((X - spec.center) ** 2, axis=0)
    if spec.kind == "constant":
        rho = np.full(grid.shape, spec.base)
    elif spec.kind == "gaussian-bump":
        rho = spec.base + spec.amplitude * np.exp(-r2 / (2.0 * spec.width**2))
    elif spec.kind == "vacuum-patch":
        rho = np.where(r2 < spec.radius**2, 0.0, spec.base)
    elif spec.kind == "file":
        with np.load(spec.file) as f:
            rho = np.asarray(f["rho0"], dtype=float)
            m0 = np.asarray(f["m0"], dtype=float) if "m0" in f else np.zeros((grid.d,) + grid.shape)
        if rho.shape != grid.shape or m0.shape != (grid.d,) + grid.shape:
            raise ConfigError(f"[initial] file: arrays do not match grid shape {grid.shape}")
        return InitialData(rho, m0)
    else:
        raise ConfigError(f"[initial] kind: unknown {spec.kind!r}")
    # momentum along the first axis, rho * velocity * prod_i sin(pi x_i), zero on the walls
    prof = spec.velocity * np.prod(np.sin(np.pi * X), axis=0)
    m0 = np.zeros((grid.d,) + grid.shape)
    m0[0] = rho * prof
    for ax in range(grid.d):
        idx = [slice(None)] * (grid.d + 1)
        idx[ax + 1] = [0, grid.n - 1]
        m0[tuple(idx)] = 0.0
    return InitialData(rho, m0)


def initial_data(cfg: RunConfig) -> InitialData:
    return make_initial_data(cfg.initial, Grid(cfg.params.d, cfg.params.grid_n))


# -- writers ----------------------------------------------------------------

UNITS = {
    "time": "time",
    "energy": "energy",
    "kinetic": "energy",
    "potential": "energy",
    "mass": "mass",
    "dissipation": "energy",
    "ito": "energy",
    "qv": "energy",
    "work": "energy",
    "residual": "energy",
    "rho_min": "density",
    "div_int": "1",
    "h1_int": "velocity^2*time",
    "grad_int": "density^2*time",
    "kin2": "2*energy",
    "rho_gamma": "density^gamma",
    "rho_beta": "density^beta",
}


def _num(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _write_csv(path: Path, header: list[str], rows, comment: str):
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue())


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _header(cfg: RunConfig, seed: int) -> str:
    return f"scns seed={seed} grid_n={cfg.params.grid_n} d={cfg.params.d} tau={cfg.params.tau!r}"


def write_trajectory(traj, out: Path, cfg: RunConfig, seed: int):
    from .driver import SCALAR_COLUMNS

    cols = ["time"] + list(SCALAR_COLUMNS)
    header = [f"{c}[{UNITS[c]}]" for c in cols]
    rows = [[t] + [traj.scalars[c][i] for c in SCALAR_COLUMNS] for i, t in enumerate(traj.times)]
    _write_csv(out / "trajectory.csv", header, rows, _header(cfg, seed))
    if cfg.output.snapshots:
        n = np.asarray(traj.rho[0]).size
        rows = [[t] + list(np.ravel(r)) for t, r in zip(traj.times, traj.rho)]
        _write_csv(
            out / "density.csv",
            ["time[time]"] + [f"rho_{i}[density]" for i in range(n)],
            rows,
            _header(cfg, seed) + " (nodes in C order)",
        )
        dim = np.asarray(traj.u[0]).size
        rows = [[t] + list(u) for t, u in zip(traj.times, traj.u)]
        _write_csv(
            out / "velocity_coefficients.csv",
            ["time[time]"] + [f"u_{i}[velocity]" for i in range(dim)],
            rows,
            _header(cfg, seed),
        )


# -- subcommands ------------------------------------------------------------


def cmd_run(cfg: RunConfig, seed: int, out: Path) -> int:
    from .diagnostics import energy_residual, mass_residual
    from .driver import run_path

    traj = run_path(cfg.params, initial_data(cfg), 0, out_every=cfg.output.out_every, full=False)
    write_trajectory(traj, out, cfg, seed)
    _write_json(
        out / "run.json",
        {
            "seed": seed,
            "config": to_text(cfg),
            "mass_residual": mass_residual(traj),
            "max_energy_residual": energy_residual(traj).max_residual,
        },
    )
    return EXIT_OK


def cmd_ensemble(cfg: RunConfig, seed: int, out: Path) -> int:
    from .diagnostics import MOMENT_NAMES, moment_summary
    from .driver import simulate_ensemble

    n = cfg.run.n_paths
    if n < 2:
        raise ConfigError("[run] n_paths: ensemble needs at least 2 paths")
    trajs = simulate_ensemble(cfg.params, initial_data(cfg), n, out_every=cfg.output.out_every)
    stats = moment_summary(trajs, cfg.p_values)
    _write_json(out / "stats.json", {"seed": seed, "config": to_text(cfg), **stats.to_dict()})
    rows = [[i] + [float(stats.samples[m][i]) for m in MOMENT_NAMES] for i in range(n)]
    _write_csv(out / "paths.csv", ["path_index[1]"] + [f"{m}[norm]" for m in MOMENT_NAMES], rows, _header(cfg, seed))
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, seed: int, out: Path) -> int:
    from .driver import refine_tau_sweep

    tab = refine_tau_sweep(cfg.params, initial_data(cfg), cfg.run.levels, 0)
    rows = list(tab.rows())
    header = list(rows[0].keys())
    _write_csv(out / "sweep.csv", header, [[r[h] for h in header] for r in rows], _header(cfg, seed))
    return EXIT_OK


def run_checks(cfg: RunConfig, seed: int) -> list[dict]:
    """Mass, positivity, energy, weak-form, martingale and flux checks."""
    from .diagnostics import energy_residual, flux_diagnostic, martingale_test, mass_residual, weak_form_residual
    from .driver import run_path, simulate_ensemble

    p = cfg.params
    data = initial_data(cfg)
    stride = cfg.output.out_every
    res = []

    def add(name, value, threshold, passed):
        res.append({"criterion": name, "value": value, "threshold": threshold, "pass": bool(passed)})

    traj = run_path(p, data, 0, out_every=stride, full=True)
    add("mass_residual", mass_residual(traj), 1e-10, mass_residual(traj) <= 1e-10)
    floor = float(np.min(traj.rho[0])) * math.exp(-traj.column("div_int")[-1]) * 0.9
    rmin = float(traj.column("rho_min").min())
    add("positivity_floor", rmin, floor, rmin >= floor)
    e1 = energy_residual(traj).max_residual
    fine = run_path(p.with_(dt_det=p.dt_det / 2, dt_st=p.dt_st / 2), data, 0, out_every=stride, full=False)
    e2 = energy_residual(fine).max_residual
    ratio = e1 / e2 if e2 > 0 else math.inf
    add("energy_residual_ratio", ratio, 1.4, ratio >= 1.4 or e1 <= 1e-12)
    g = Grid(p.d, p.grid_n)
    X = np.stack(g.coords())
    phi = np.prod(np.cos(np.pi * X), axis=0)
    grad = np.stack([-np.pi * np.sin(np.pi * X[a]) * np.prod(np.cos(np.pi * np.delete(X, a, 0)), axis=0) for a in range(p.d)])
    lap = -p.d * np.pi**2 * phi
    wf = weak_form_residual(traj, phi, grad, lap)
    add("weak_form_residual", wf, 1e-6, wf <= 1e-6)
    if p.noise.k_max > 0 and cfg.run.n_paths >= 100:
        trajs = simulate_ensemble(p, data, cfg.run.n_paths, out_every=stride, full=True)
        rep = martingale_test(trajs, cfg.run.phi, cfg.run.s, cfg.run.t, cfg.run.k)
        add("martingale_max_abs_z", rep.worst, 4.0, rep.worst <= 4.0)
    else:
        trajs = [traj]
    fx = flux_diagnostic(trajs, cfg.region_bounds)
    add("flux_finite", fx.estimate, None, math.isfinite(fx.estimate) and math.isfinite(fx.stderr))
    return res


def cmd_check(cfg: RunConfig, seed: int, out: Path) -> int:
    res = run_checks(cfg, seed)
    ok = all(r["pass"] for r in res)
    _write_json(out / "check.json", {"seed": seed, "config": to_text(cfg), "pass": ok, "criteria": res})
    for r in res:
        print(f"{'PASS' if r['pass'] else 'FAIL'} {r['criterion']}: {r['value']!r} (threshold {r['threshold']!r})")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"run": cmd_run, "ensemble": cmd_ensemble, "sweep": cmd_sweep, "check": cmd_check}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="scns", description="Splitting simulator for stochastic compressible flow.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--seed", type=int, default=None, help="base seed, overrides [params] seed")
    ap.add_argument("--out", type=Path, default=None, help="output directory (default: [output] out_dir)")
    args = ap.parse_args(argv)
    try:
        cfg = parse_config(args.config.read_text())
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, params=cfg.params.with_(seed=args.seed))
    seed = cfg.params.seed
    out = args.out if args.out is not None else Path(cfg.output.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return COMMANDS[args.command](cfg, seed, out)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
