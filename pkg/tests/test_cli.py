import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scns.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    InitialSpec,
    RunConfig,
    main,
    make_initial_data,
    parse_config,
    to_text,
)
from scns.model import ConfigError, Grid, SimParams


def test_minimal_config_fills_defaults():
    cfg = parse_config("[params]\nseed = 4\n")
    assert cfg.params == SimParams(seed=4)
    assert cfg.initial.kind == "gaussian-bump"


def test_fractions_accepted():
    cfg = parse_config("[params]\ntau = 1/4\ndt_det = 1/128\n")
    assert cfg.params.tau == 0.25 and cfg.params.dt_det == 1 / 128


def test_duplicate_key_reports_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("[params]\nseed = 1\nseed = 2\n")


def test_unknown_key_and_section():
    with pytest.raises(ConfigError) as ei:
        parse_config("[params]\nsigma = 1\n[extra]\na = 1\n")
    assert any("sigma" in v for v in ei.value.violations)
    assert any("[extra]" in v for v in ei.value.violations)


def test_bad_value_names_key():
    with pytest.raises(ConfigError, match=r"\[noise\] amp"):
        parse_config("[noise]\namp = lots\n")


def test_hypothesis_violation_cited():
    with pytest.raises(ConfigError, match="Hyp 1.1"):
        parse_config("[params]\nd = 2\ngamma = 1.2\ngrid_n = 65\nn_modes = 4\n")


def test_missing_section_header():
    with pytest.raises(ConfigError, match="syntax"):
        parse_config("seed = 1\n")


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from([1 / 8, 1 / 4, 0.5]),
    st.floats(0, 1, allow_nan=False),
    st.floats(1e-3, 0.9),
    st.sampled_from(["constant", "saturating-density", "saturating-momentum"]),
    st.integers(0, 2**40),
    st.booleans(),
    st.floats(-3, 3, allow_nan=False),
)
def test_round_trip(tau, eps, delta, coupling, seed, snaps, vel):
    cfg = RunConfig(
        params=SimParams(tau=tau, eps=eps, delta=delta, seed=seed).with_(coupling=coupling),
        initial=InitialSpec(velocity=vel),
    )
    from dataclasses import replace

    from scns.cli import OutputSpec

    cfg = replace(cfg, output=OutputSpec(snapshots=snaps))
    assert parse_config(to_text(cfg), validate=False) == cfg


@pytest.mark.parametrize("kind", ["constant", "gaussian-bump", "vacuum-patch"])
def test_initial_conditions(kind):
    g = Grid(2, 17)
    data = make_initial_data(InitialSpec(kind=kind, velocity=1.0), g)
    assert data.rho0.shape == g.shape and data.m0.shape == (2,) + g.shape
    assert data.rho0.min() >= 0
    assert np.all(data.m0[:, 0] == 0) and np.all(data.m0[:, :, -1] == 0)


def test_vacuum_patch_has_vacuum():
    data = make_initial_data(InitialSpec(kind="vacuum-patch"), Grid(1, 65))
    assert data.rho0.min() == 0.0


def test_file_initial_condition(tmp_path):
    g = Grid(1, 33)
    np.savez(tmp_path / "ic.npz", rho0=np.full(33, 2.0))
    data = make_initial_data(InitialSpec(kind="file", file=str(tmp_path / "ic.npz")), g)
    assert np.all(data.rho0 == 2.0) and np.all(data.m0 == 0)
    with pytest.raises(ConfigError):
        make_initial_data(InitialSpec(kind="file", file=str(tmp_path / "ic.npz")), Grid(1, 65))


def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_main_config_error_exit(tmp_path, capsys):
    cfg = _write(tmp_path, "[params]\nbeta = 3\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "β constraint" in capsys.readouterr().err


def test_run_outputs_are_byte_stable(tmp_path):
    cfg = _write(tmp_path, "[params]\ngrid_n = 65\n[output]\nout_every = 1/8\n")
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path / d)]) == EXIT_OK
    for f in ("trajectory.csv", "density.csv", "velocity_coefficients.csv", "run.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    lines = (tmp_path / "a" / "trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("# scns seed=3")
    assert lines[1].startswith("time[time],energy[energy]")
    assert json.loads((tmp_path / "a" / "run.json").read_text())["seed"] == 3


def test_run_stationary_energy_constant(tmp_path):
    cfg = _write(
        tmp_path,
        "[params]\ndelta = 0.0\ngrid_n = 65\n[noise]\namp = 0\n[initial]\nkind = constant\n",
    )
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    data = np.loadtxt(tmp_path / "o" / "trajectory.csv", delimiter=",", skiprows=2)
    assert np.ptp(data[:, 1]) <= 1e-10


def test_sweep_and_ensemble_commands(tmp_path):
    cfg = _write(tmp_path, "[params]\ngrid_n = 65\n[run]\nn_paths = 3\nlevels = 2\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s")]) == EXIT_OK
    assert len((tmp_path / "s" / "sweep.csv").read_text().splitlines()) == 4
    assert main(["ensemble", "--config", str(cfg), "--out", str(tmp_path / "e")]) == EXIT_OK
    stats = json.loads((tmp_path / "e" / "stats.json").read_text())
    assert stats["n_paths"] == 3 and "kinetic_sup" in stats["moments"]
