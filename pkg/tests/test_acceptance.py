"""Acceptance criteria 1-9; each test prints one PASS/FAIL line with its measured value."""

import math
import time

import numpy as np

from conftest import cosine_density, oracle_operators, oracle_tables
from scns.basis import build_basis
from scns.cli import InitialSpec, main, make_initial_data
from scns.deterministic import Context, SimState
from scns.diagnostics import MOMENT_NAMES, energy_residual, martingale_test, mass_residual
from scns.driver import refine_tau_sweep, run_path, simulate_ensemble
from scns.model import ConfigError, Grid, SimParams, validate_params
from scns.noise import BrownianPaths, NoiseOperator, mode_fields, stochastic_halfstep
from scns.operators import apply_N, assemble_mass

# tolerances pinned from the acceptance criteria
MASS_TOL = 1e-10
POSITIVITY_SLACK = 0.9
ENERGY_RATIO = 1.4
ITO_SE = 3.0
MART_Z = 4.0
NEG_CONTROL_Z = 5.0
MOMENT_RATIO = 4.0
MASS_ORACLE_TOL = 1e-8
DRIFT_ORACLE_TOL = 1e-6
N_PATHS = 1000


def report(capsys, number, title, passed, detail, t0):
    with capsys.disabled():
        print(f"\nCRITERION {number} {'PASS' if passed else 'FAIL'} {title}: {detail} [{time.time() - t0:.1f}s]")


def default_setup(**kw):
    p = SimParams().with_(**kw)
    return p, make_initial_data(InitialSpec(), Grid(p.d, p.grid_n))


def test_criterion_1_mass_conservation(capsys):
    t0 = time.time()
    cases = {
        "default": default_setup(),
        "no-noise": default_setup(amp=0.0),
        "constant-coupling": default_setup(coupling="constant", amp=1e-3),
        "momentum-coupling": default_setup(coupling="saturating-momentum", amp=1e-3),
    }
    p2 = SimParams(d=2, grid_n=65, n_modes=4)
    g2 = Grid(2, 65)
    cases["d2-bump"] = (p2, make_initial_data(InitialSpec(velocity=0.2), g2))
    cases["d2-vacuum"] = (p2, make_initial_data(InitialSpec(kind="vacuum-patch"), g2))
    worst = {name: mass_residual(run_path(p, data, 0, out_every=1 / 64, full=False)) for name, (p, data) in cases.items()}
    value = max(worst.values())
    passed = value <= MASS_TOL
    report(capsys, 1, "mass conservation", passed, f"max residual {value:.3e} <= {MASS_TOL:g}", t0)
    assert passed, worst


def test_criterion_2_positivity(capsys):
    t0 = time.time()
    p, data = default_setup()
    tr = run_path(p, data, 0, out_every=1 / 256, full=False)
    rho = np.asarray(tr.rho)
    div_int = tr.column("div_int")
    floor = rho[0].min() * np.exp(-div_int) * POSITIVITY_SLACK
    margin = rho.min(axis=1) - floor
    passed = bool(np.all(margin > 0))
    report(capsys, 2, "positivity floor", passed, f"min rho {rho.min():.6f}, floor at T {floor[-1]:.6f}", t0)
    assert passed


def test_criterion_3_energy_convergence(capsys):
    t0 = time.time()
    p, data = default_setup()
    res = []
    for dt in (1 / 256, 1 / 512, 1 / 1024):
        tr = run_path(p.with_(dt_det=dt, dt_st=dt), data, 0, out_every=1 / 64, full=False)
        res.append(energy_residual(tr).max_residual)
    ratios = [a / b for a, b in zip(res[:-1], res[1:])]
    passed = min(ratios) >= ENERGY_RATIO
    report(capsys, 3, "energy residual convergence", passed,
           f"residuals {[f'{r:.3e}' for r in res]}, ratios {[round(r, 3) for r in ratios]} >= {ENERGY_RATIO}", t0)
    assert passed


def test_criterion_4_ito_isometry(capsys):
    t0 = time.time()
    p = SimParams(delta=0.0).with_(coupling="constant", amp=1e-2)
    ctx = Context(p)
    op = NoiseOperator(ctx.basis, p.noise, p.tau, p.delta)
    rho = np.ones(ctx.grid.shape)
    zero = np.zeros(ctx.basis.dim)
    us = np.empty((N_PATHS, ctx.basis.dim))
    level = int(round(math.log2(p.t_final / p.dt_st)))
    for i in range(N_PATHS):
        paths = BrownianPaths.sample(p.noise.k_max, p.t_final, level, 2024, i)
        us[i] = stochastic_halfstep(SimState(0.0, rho, zero, zero), paths, ctx, op).u
    t = p.tau
    proj = ctx.basis.project_many(mode_fields(ctx.grid, p.noise.k_max))  # (K, dim)
    expected = 2.0 * t * (p.noise.lams() @ proj**2)
    dev = us - us.mean(axis=0)
    var = np.mean(dev**2, axis=0) * N_PATHS / (N_PATHS - 1)
    se = np.std(dev**2, axis=0, ddof=1) / math.sqrt(N_PATHS)
    z = (var - expected) / se
    passed = bool(np.all(np.abs(z) <= ITO_SE))
    report(capsys, 4, "Ito isometry", passed, f"max |var - 2 lam t |P e_k|^2| / SE = {np.abs(z).max():.2f} <= {ITO_SE}", t0)
    assert passed


def test_criterion_5_martingale_suite(capsys):
    t0 = time.time()
    p, data = default_setup()
    trajs = simulate_ensemble(p, data, N_PATHS, out_every=p.t_final / 2)
    rep = martingale_test(trajs, phi=1, s=0.5, t=1.0, k=1)
    neg = martingale_test(trajs, phi=1, s=0.5, t=1.0, k=1, drop_pressure=True)
    ok = rep.worst <= MART_Z
    ctrl = neg.max_abs("quadratic") >= NEG_CONTROL_Z
    passed = ok and ctrl
    report(capsys, 5, "martingale suite", passed,
           f"max |z| {rep.worst:.2f} <= {MART_Z}; negative control |z| {neg.max_abs('quadratic'):.1f} >= {NEG_CONTROL_Z}", t0)
    assert passed, (rep.z, neg.z)


def test_criterion_6_tau_refinement(capsys):
    t0 = time.time()
    p, data = default_setup()
    tab = refine_tau_sweep(p, data, 4, path_seed=0)
    d = tab.rho_diff
    monotone = all(a > b for a, b in zip(d[:-1], d[1:]))
    ratios = {}
    for name in MOMENT_NAMES:
        vals = [m[name] for m in tab.moments]
        hi, lo = max(vals), min(vals)
        ratios[name] = 1.0 if hi == 0.0 else (hi / lo if lo > 0 else math.inf)
    bounded = max(ratios.values()) <= MOMENT_RATIO
    passed = monotone and bounded
    report(capsys, 6, "tau refinement", passed,
           f"density diffs {[f'{v:.3e}' for v in d]}, max moment ratio {max(ratios.values()):.3f} <= {MOMENT_RATIO}", t0)
    assert passed, (d, ratios)


def test_criterion_7_operator_oracle(capsys):
    t0 = time.time()
    rng = np.random.default_rng(7)
    p = SimParams()
    g = Grid(p.d, p.grid_n)
    basis = build_basis(g, p.n_modes)
    tables = oracle_tables(p.d, p.n_modes, 4 * (p.grid_n - 1) + 1)
    worst_m = worst_n = 0.0
    for _ in range(20):
        amps = rng.uniform(-0.15, 0.15, size=(p.d, 3))
        c = rng.normal(scale=0.5, size=basis.dim)
        Mo, No = oracle_operators(tables, amps, c, p)
        rho = cosine_density(g.coords(), amps)
        worst_m = max(worst_m, np.abs(assemble_mass(rho, basis).entries - Mo).max())
        worst_n = max(worst_n, np.abs(apply_N(rho, c, p, basis) - No).max())
    passed = worst_m <= MASS_ORACLE_TOL and worst_n <= DRIFT_ORACLE_TOL
    report(capsys, 7, "operator oracle", passed,
           f"mass {worst_m:.2e} <= {MASS_ORACLE_TOL:g}, drift {worst_n:.2e} <= {DRIFT_ORACLE_TOL:g}", t0)
    assert passed


def test_criterion_8_determinism(tmp_path, monkeypatch, capsys):
    t0 = time.time()
    cfg = tmp_path / "ens.ini"
    cfg.write_text("[params]\nseed = 11\n[run]\nn_paths = 16\n")
    outs = []
    for workers in ("1", "3"):
        monkeypatch.setenv("SCNS_WORKERS", workers)
        out = tmp_path / f"w{workers}"
        assert main(["ensemble", "--config", str(cfg), "--out", str(out)]) == 0
        outs.append(out)
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in ("stats.json", "paths.csv"))
    report(capsys, 8, "determinism across worker counts", same, "stats.json and paths.csv byte-identical" if same else "files differ", t0)
    assert same


def test_criterion_9_hypothesis_gate(capsys):
    t0 = time.time()
    cases = [
        (SimParams(d=2, gamma=1.4, grid_n=65, n_modes=4), "Hyp 1.1"),
        (SimParams(gamma=2.5, beta=5.0), "β constraint"),
        (SimParams().with_(decay_a=1.0), "Hyp 1.4"),
    ]
    hits = []
    for params, needle in cases:
        try:
            validate_params(params)
            hits.append(False)
        except ConfigError as exc:
            hits.append(any(needle in v for v in exc.violations))
    passed = all(hits)
    report(capsys, 9, "hypothesis gate", passed, f"named rejections {hits}", t0)
    assert passed
