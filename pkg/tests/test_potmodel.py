import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccsim.potmodel import (AveragingScheme, DiabaticModel, ModelError, averaged_potential,
                            averaged_potential_derivative, build_analytic, exponential_coupling,
                            landau_zener, load_model, na_he_analog, potential_derivative,
                            potential_matrix, save_model, synthetic)


def _zero_model(asym=(0.0, 0.1)):
    grid = np.linspace(1.0, 10.0, 10)
    values = np.zeros((grid.size, 2, 2))
    values[:, 1, 1] = asym[1]
    values[:, 0, 0] = asym[0]
    return DiabaticModel(grid, values, asym)


def _write(path, text):
    path.write_text(text)
    return path


def test_zero_coupling_file(tmp_path):
    rows = "\n".join(f"{r} 0 0 0.1" for r in (1.0, 2.0, 3.0, 4.0, 5.0))
    f = _write(tmp_path / "zero.dat", f"n 2\nasymptotes 0 0.1\n{rows}\n")
    m = load_model(f)
    np.testing.assert_array_equal(potential_matrix(m, m.r_max), np.diag([0.0, 0.1]))


def test_non_monotone_grid_rejected(tmp_path):
    f = _write(tmp_path / "bad.dat", "n 1\nasymptotes 0\n3.0 0\n2.0 0\n4.0 0\n5.0 0\n")
    with pytest.raises(ModelError, match="grid not strictly increasing"):
        load_model(f)


def test_row_length_checked(tmp_path):
    f = _write(tmp_path / "bad.dat", "n 2\nasymptotes 0 0\n1 0 0 0\n2 0 0\n3 0 0 0\n4 0 0 0\n")
    with pytest.raises(ModelError, match="row 2"):
        load_model(f)


@pytest.mark.parametrize("head", ["m 2\nasymptotes 0 0\n", "n two\nasymptotes 0 0\n", "n 2\nasymptotes 0\n"])
def test_malformed_header(tmp_path, head):
    f = _write(tmp_path / "bad.dat", head + "1 0 0 0\n2 0 0 0\n3 0 0 0\n4 0 0 0\n")
    with pytest.raises(ModelError, match="malformed header"):
        load_model(f)


def test_asymptote_mismatch(tmp_path):
    rows = "\n".join(f"{r} 0 0 {v}" for r, v in ((1, 0.1), (2, 0.1), (3, 0.1), (4, 0.1 + 2e-6)))
    f = _write(tmp_path / "warn.dat", f"n 2\nasymptotes 0 0.1\n{rows}\n")
    with pytest.warns(RuntimeWarning, match="not asymptotic"):
        load_model(f)
    rows = "\n".join(f"{r} 0 0 {v}" for r, v in ((1, 0.1), (2, 0.1), (3, 0.1), (4, 0.2)))
    f = _write(tmp_path / "reject.dat", f"n 2\nasymptotes 0 0.1\n{rows}\n")
    with pytest.raises(ModelError):
        load_model(f)


def test_round_trip(tmp_path):
    m = synthetic(5, 7)
    save_model(m, tmp_path / "syn.dat")
    m2 = load_model(tmp_path / "syn.dat")
    assert m2.n == 5 and m2.labels == m.labels
    for R in m.grid[::50]:
        np.testing.assert_allclose(potential_matrix(m2, R), potential_matrix(m, R), atol=1e-12, rtol=0)


def test_node_values_exact():
    m = synthetic(3, 1)
    for k in (0, 17, m.grid.size - 1):
        np.testing.assert_array_equal(potential_matrix(m, m.grid[k]), m.values[k])


def test_beyond_grid_is_asymptotic():
    m = synthetic(4, 3)
    np.testing.assert_array_equal(potential_matrix(m, 2 * m.r_max), np.diag(m.asymptotes))


def test_below_grid_clamps_with_warning():
    m = _zero_model()
    with pytest.warns(RuntimeWarning):
        V = potential_matrix(m, 0.5)
    np.testing.assert_array_equal(V, m.values[0])
    with pytest.raises(ValueError):
        potential_matrix(m, 0.0)


def test_landau_zener_midpoints():
    m = landau_zener(0.05, -0.02, 0.01, 10.0)
    mid = 0.5 * (m.grid[:-1] + m.grid[1:])
    V = potential_matrix(m, mid)
    np.testing.assert_allclose(V[:, 0, 0], 0.05 * (mid - 10.0), atol=1e-8, rtol=0)
    np.testing.assert_allclose(V[:, 1, 1], -0.02 * (mid - 10.0), atol=1e-8, rtol=0)
    np.testing.assert_allclose(V[:, 0, 1], 0.01, atol=1e-8, rtol=0)


def test_exponential_coupling_closed_form():
    A = np.array([[0.0, 0.05], [0.0, 0.0]])
    alpha = np.ones((2, 2))
    m = exponential_coupling([0.0, 0.1], A, alpha)
    R = np.linspace(m.r_min, 12.0, 301)
    np.testing.assert_allclose(potential_matrix(m, R)[:, 0, 1], 0.05 * np.exp(-R), atol=1e-7, rtol=0)
    with pytest.raises(ValueError):
        exponential_coupling([0.0, 0.1], A, -alpha)


def test_derivative_matches_finite_difference():
    m = na_he_analog()
    R, h = 3.3, 1e-5
    fd = (potential_matrix(m, R + h) - potential_matrix(m, R - h)) / (2 * h)
    np.testing.assert_allclose(potential_derivative(m, R), fd, atol=1e-7)
    s = AveragingScheme("geometric")
    fd = (averaged_potential(m, R + h, s) - averaged_potential(m, R - h, s)) / (2 * h)
    assert averaged_potential_derivative(m, R, s) == pytest.approx(fd, abs=1e-7)


def test_synthetic_deterministic():
    a, b = synthetic(5, 7), synthetic(5, 7)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.asymptotes, b.asymptotes)
    assert not np.array_equal(a.values, synthetic(5, 8).values)
    with pytest.raises(ValueError):
        synthetic(0, 1)


def test_build_analytic_dispatch():
    assert build_analytic("synthetic", n=3, seed=2).n == 3
    assert build_analytic("na_he").labels == ("3s", "3p", "4s")
    with pytest.raises(ModelError):
        build_analytic("nope")


def _diag_model(diag):
    diag = np.asarray(diag, dtype=float)
    grid = np.linspace(1.0, 5.0, 5)
    values = np.broadcast_to(np.diag(diag), (grid.size, diag.size, diag.size)).copy()
    return DiabaticModel(grid, values, diag)


def test_averaging_examples():
    assert averaged_potential(_diag_model([-0.2] * 3), 2.0) == pytest.approx(-0.2, abs=1e-15)
    assert averaged_potential(_diag_model([-0.1, -0.4]), 2.0, AveragingScheme("geometric")) == pytest.approx(-0.2)
    with pytest.raises(ValueError, match="R=2"):
        averaged_potential(_diag_model([-0.1, 0.4]), 2.0, AveragingScheme("geometric"))
    with pytest.raises(ValueError):
        averaged_potential(_diag_model([-0.1, 0.4]), 2.0, AveragingScheme("channel", 3))


def test_arithmetic_minus_channel(syn5):
    for R in (2.5, 4.0, 7.3):
        d = np.diag(potential_matrix(syn5, R))
        diff = averaged_potential(syn5, R) - averaged_potential(syn5, R, AveragingScheme("channel", 1))
        assert diff == pytest.approx(d.mean() - d[0], abs=1e-14)


def test_reference_shift():
    m = na_he_analog()
    s = AveragingScheme("channel", 2)
    assert averaged_potential(m, 50.0, s, reference=m.asymptotes[1]) == pytest.approx(0.0, abs=1e-14)


def test_scheme_parse():
    assert AveragingScheme.parse("channel:2") == AveragingScheme("channel", 2)
    assert str(AveragingScheme.parse("Geometric")) == "geometric"
    with pytest.raises(ValueError):
        AveragingScheme.parse("harmonic")


def test_start_radius(syn5):
    R = syn5.start_radius()
    assert R >= 30.0
    V = potential_matrix(syn5, R)
    assert np.max(np.abs(V - np.diag(syn5.asymptotes))) < 1e-8


_SYN = synthetic(5, 7)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.3, 45.0))
def test_symmetry_property(R):
    V = potential_matrix(_SYN, R)
    assert np.array_equal(V, V.T)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.3, 45.0))
def test_arithmetic_bracketing(R):
    d = np.diag(potential_matrix(_SYN, R))
    v = averaged_potential(_SYN, R)
    assert d.min() - 1e-15 <= v <= d.max() + 1e-15


@settings(max_examples=40, deadline=None)
@given(st.floats(-3.0, 3.0).filter(lambda x: abs(x) > 1e-3), st.integers(1, 4))
def test_degenerate_schemes_agree(value, n):
    m = _diag_model([value] * n)
    out = [averaged_potential(m, 2.0, AveragingScheme(k, c)) for k, c in
           (("arithmetic", None), ("geometric", None), ("channel", n))]
    assert max(out) - min(out) <= 1e-14
