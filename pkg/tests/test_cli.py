import csv

import numpy as np
import pytest

from ccsim.cli import ConfigError, main, parse_config

ZERO_POT = "n 2\nasymptotes 0 0.05\n" + "\n".join(f"{r:.1f} 0 0 0.05" for r in np.arange(0.5, 12.01, 0.5)) + "\n"


def _write(path, text):
    path.write_text(text)
    return str(path)


def _rows(path):
    lines = [line for line in open(path) if not line.startswith("#")]
    return list(csv.reader(lines))


def _headers(path):
    return [line for line in open(path) if line.startswith("#")]


@pytest.fixture
def zero_cfg(tmp_path):
    pot = _write(tmp_path / "zero.dat", ZERO_POT)
    return _write(tmp_path / "zero.cfg", f"potential.file = {pot}\ngeometry.v0 = 0.2\ngeometry.b = 0.5 2.0\n"
                                         "geometry.mu = 2000\ntrajectory.kind = curvilinear\n")


def test_run_zero_coupling(tmp_path, zero_cfg, capsys):
    out = tmp_path / "out"
    assert main(["run", "-c", zero_cfg, "--out", str(out), "--dump-trajectory"]) == 0
    rows = _rows(out / "run_v0.2_b0.5.csv")
    assert rows[0] == ["t", "P1", "P2"]
    P = np.array(rows[1:], dtype=float)
    np.testing.assert_allclose(P[:, 1], 1.0, atol=1e-10)
    np.testing.assert_allclose(P[:, 2], 0.0, atol=1e-10)
    assert (out / "trajectory_v0.2_b2.csv").exists()
    summary = _rows(out / "run_summary.csv")
    assert len(summary) == 3
    assert "run_summary.csv" in capsys.readouterr().out


def test_run_is_reproducible(tmp_path, zero_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = _write(tmp_path / "syn.cfg", "potential.kind = synthetic\npotential.n = 3\ngeometry.v0 = 0.5\n"
                                       "geometry.mu_amu = 3.5\n")
    assert main(["run", "-c", cfg, "--out", str(a), "--seed", "4"]) == 0
    assert main(["run", "-c", cfg, "--out", str(b), "--seed", "4"]) == 0
    assert (a / "run_v0.5_b1.csv").read_bytes() == (b / "run_v0.5_b1.csv").read_bytes()
    assert main(["run", "-c", cfg, "--out", str(b), "--seed", "5"]) == 0
    assert (a / "run_v0.5_b1.csv").read_bytes() != (b / "run_v0.5_b1.csv").read_bytes()


def test_config_hash_header(tmp_path, zero_cfg):
    out = tmp_path / "out"
    assert main(["run", "-c", zero_cfg, "--out", str(out)]) == 0
    for f in out.glob("*.csv"):
        heads = _headers(f)
        assert any(h.startswith("# config_sha256: ") for h in heads), f.name
    digest = [h for h in _headers(out / "run_summary.csv") if "sha256" in h][0]
    # the output directory is not part of the hashed configuration
    assert main(["run", "-c", zero_cfg, "--out", str(tmp_path / "elsewhere")]) == 0
    assert digest in _headers(tmp_path / "elsewhere" / "run_summary.csv")


@pytest.mark.parametrize("text,match", [
    ("potential.file = /nonexistent/pot.dat\ngeometry.v0 = 0.1\n", "not found"),
    ("potential.kind = na_he\ngeometry.velocity = 0.1\n", "unknown key"),
    ("potential.kind = na_he\ngeometry.v0 = 0.1\ngeometry.v0 = 0.2\n", "duplicate"),
    ("potential.kind = na_he\npotential.file = x\ngeometry.v0 = 0.1\n", "exactly one"),
    ("potential.kind = na_he\ngeometry.v0 = 0.1\ncollision.initial_channel = 4\n", "initial_channel"),
    ("potential.kind = na_he\ngeometry.v0 = 0.1\npropagator.method = euler\n", "method"),
])
def test_config_errors_exit_2(tmp_path, capsys, text, match):
    cfg = _write(tmp_path / "bad.cfg", text)
    assert main(["run", "-c", cfg, "--out", str(tmp_path / "o")]) == 2
    assert match in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["run", "-c", str(tmp_path / "nope.cfg")]) == 2


def test_physics_failure_exit_1(tmp_path, capsys):
    # a curvilinear path needs the entrance channel open at R_start
    pot = _write(tmp_path / "wall.dat", "n 1\nasymptotes 0\n" + "\n".join(f"{r} 0" for r in (1, 2, 3, 4)) + "\n")
    cfg = _write(tmp_path / "w.cfg", f"potential.file = {pot}\ngeometry.v0 = 0.1\ngeometry.b = 5.0\n"
                                     "trajectory.kind = curvilinear\ntrajectory.r_start = 4.0\n")
    assert main(["run", "-c", cfg, "--out", str(tmp_path / "o")]) == 1


def test_parse_config_grammar():
    vals = parse_config("# comment\npropagator.precondition = yes  # trailing\ngeometry.v0 = 0.1, 0.2 0.3\n")
    assert vals == {"propagator.precondition": True, "geometry.v0": [0.1, 0.2, 0.3]}
    with pytest.raises(ConfigError):
        parse_config("geometry.v0 0.1\n")
    with pytest.raises(ConfigError):
        parse_config("propagator.dt = fast\n")


def test_scan_truncation_warning(tmp_path, capsys):
    cfg = _write(tmp_path / "s.cfg", "potential.kind = two_state\ngeometry.v0 = 0.3\ngeometry.mu = 1000\n"
                                     "scan.db = 0.5\nscan.b_cap = 1.0\n")
    assert main(["scan", "-c", cfg, "--out", str(tmp_path / "o")]) == 0
    assert "b_cap" in capsys.readouterr().err
    heads = _headers(tmp_path / "o" / "opacity_v0.3.csv")
    assert any("truncated: True" in h for h in heads)
    rows = _rows(tmp_path / "o" / "opacity_v0.3.csv")
    assert rows[0] == ["b", "P1", "P2"] and len(rows) >= 4


def test_xsec_ehrenfest_keeps_elastic(tmp_path):
    cfg = _write(tmp_path / "x.cfg", "potential.kind = two_state\ngeometry.v0 = 0.2 0.4\ngeometry.mu = 10\n"
                                     "collision.initial_channel = 2\nscan.db = 0.25\n")
    assert main(["xsec", "-c", cfg, "--out", str(tmp_path / "plain")]) == 0
    assert main(["xsec", "-c", cfg, "--out", str(tmp_path / "sym"), "--ehrenfest"]) == 0
    plain = _rows(tmp_path / "plain" / "xsec.csv")
    assert plain == _rows(tmp_path / "sym" / "xsec.csv")
    assert not (tmp_path / "plain" / "xsec_ehrenfest.csv").exists()
    sym = _rows(tmp_path / "sym" / "xsec_ehrenfest.csv")
    assert sym[0] == ["final_channel", "E", "E_eV", "sigma"]
    elastic = [r for r in sym[1:] if r[0] == "2"]
    for r, p in zip(elastic, plain[1:]):
        assert r[1] == p[1] and r[3] == p[4]
    table = np.array(plain[1:], dtype=float)
    assert np.all(table[:, 3:] >= 0)


def test_ses_outputs(tmp_path):
    cfg = _write(tmp_path / "ses.cfg", "potential.kind = synthetic\npotential.n = 3\npotential.seed = 2\n"
                                       "geometry.v0 = 0.5\ngeometry.mu_amu = 3.5\ndevice.samples = 4001\n"
                                       "device.g_max = 40\n")
    out = tmp_path / "o"
    assert main(["ses", "-c", cfg, "--out", str(out)]) == 0
    mapping = np.array(_rows(out / "ses_mapping.csv")[1:], dtype=float)
    assert np.all(np.diff(mapping[:, 1]) > 0)
    H = np.array(_rows(out / "ses_hamiltonian.csv")[1:], dtype=float)[:, 1:]
    assert np.abs(H).max() <= 40 + 1e-12
    table = _rows(out / "ses_table.csv")
    assert table[0] == ["Probability", "Classical Simulation", "SES simulation", "Relative Error (%)"]
    assert [r[0] for r in table[1:]] == ["P11", "P12", "P13"]
    assert any(h.startswith("# t_qu_ns:") for h in _headers(out / "ses_table.csv"))


def test_bench_failed_row(tmp_path):
    cfg = _write(tmp_path / "b.cfg", "potential.kind = synthetic\npotential.n = 3\ngeometry.v0 = 0.5\n"
                                     "geometry.mu_amu = 3.5\n"
                                     "bench.configs = diagonalization,dt=0.2; rkf45,dt=0.05,tol=1e-14,dt_min=0.01\n")
    out = tmp_path / "o"
    assert main(["bench", "-c", cfg, "--out", str(out), "--jobs", "4"]) == 0
    rows = _rows(out / "bench.csv")
    assert rows[0][:2] == ["config", "method"]
    assert rows[1][10] == "True"
    assert rows[2][10] == "False" and "dt_min" in rows[2][11]
    heads = _headers(out / "bench.csv")
    assert any(h.startswith("# machine:") for h in heads)
    assert any(h.startswith("# config_sha256:") for h in heads)
