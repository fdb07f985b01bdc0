"""Diabatic potential matrices: storage, spline evaluation, averaging and model builders.

All energies are in hartree and distances in bohr.
"""

from __future__ import annotations

import bisect
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

logger = logging.getLogger(__name__)

ASYMPTOTE_TOL = 1e-6


class ModelError(ValueError):
    """Raised for malformed potential tables or invalid model parameters."""


@dataclass(frozen=True)
class AveragingScheme:
    """Prescription for the scalar potential that drives a common trajectory.

    ``kind`` is ``"arithmetic"``, ``"geometric"`` or ``"channel"``; for the
    latter ``channel`` is the 1-based channel whose diagonal is used.
    """

    kind: str = "arithmetic"
    channel: int | None = None

    def __post_init__(self):
        if self.kind not in ("arithmetic", "geometric", "channel"):
            raise ValueError(f"unknown averaging scheme {self.kind!r}")
        if self.kind == "channel" and (self.channel is None or self.channel < 1):
            raise ValueError("channel averaging needs a 1-based channel index")

    @classmethod
    def parse(cls, text: str) -> "AveragingScheme":
        """Parse ``arithmetic``, ``geometric`` or ``channel:<i>``."""
        text = text.strip().lower()
        if text.startswith("channel"):
            _, _, idx = text.partition(":")
            return cls("channel", int(idx))
        return cls(text)

    def __str__(self):
        return f"channel:{self.channel}" if self.kind == "channel" else self.kind


@dataclass(frozen=True, eq=False)
class DiabaticModel:
    """An n-channel real symmetric diabatic potential matrix on a radial grid.

    Parameters
    ----------
    grid : array_like, shape (m,)
        Strictly increasing internuclear distances (bohr), m >= 4.
    values : array_like, shape (m, n, n)
        Potential matrix at each grid point (hartree). Only the upper
        triangle is read; the stored matrices are symmetrized from it.
    asymptotes : array_like, shape (n,)
        Asymptotic channel energies E_i (hartree).
    labels : sequence of str, optional
    """

    grid: np.ndarray
    values: np.ndarray
    asymptotes: np.ndarray
    labels: tuple[str, ...] = ()
    _spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        values = np.array(self.values, dtype=float)
        asym = np.atleast_1d(np.array(self.asymptotes, dtype=float))
        n = asym.size
        if n < 1:
            raise ModelError("model needs at least one channel")
        if grid.ndim != 1 or grid.size < 4:
            raise ModelError("grid needs at least 4 points for spline construction")
        if np.any(np.diff(grid) <= 0):
            raise ModelError("grid not strictly increasing")
        if grid[0] <= 0:
            raise ModelError("grid must lie at R > 0")
        if values.shape != (grid.size, n, n):
            raise ModelError(f"values shape {values.shape} != {(grid.size, n, n)}")
        upper = np.triu(values)
        values = upper + np.transpose(np.triu(values, 1), (0, 2, 1))
        labels = tuple(self.labels) if self.labels else tuple(str(i + 1) for i in range(n))
        if len(labels) != n:
            raise ModelError(f"expected {n} labels, got {len(labels)}")
        for arr in (grid, values, asym):
            arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "asymptotes", asym)
        object.__setattr__(self, "labels", labels)
        spline = CubicSpline(grid, values, axis=0, bc_type="natural")
        coef = np.moveaxis(spline.c, 0, 1).copy()
        coef = 0.5 * (coef + np.swapaxes(coef, 2, 3))
        object.__setattr__(self, "_spline", spline)
        object.__setattr__(self, "_coef", coef)
        object.__setattr__(self, "_grid_list", grid.tolist())
        object.__setattr__(self, "_asym_matrix", np.diag(asym))

    @property
    def n(self) -> int:
        return self.asymptotes.size

    @property
    def r_min(self) -> float:
        return float(self.grid[0])

    @property
    def r_max(self) -> float:
        return float(self.grid[-1])

    def __call__(self, R):
        return potential_matrix(self, R)

    def asymptote_deviation(self) -> float:
        """Largest |V - asymptotic value| over all elements at the last grid point."""
        return float(np.max(np.abs(self.values[-1] - np.diag(self.asymptotes))))

    def check_asymptotes(self, tol: float = ASYMPTOTE_TOL) -> float:
        """Warn when the last grid point is not asymptotic; reject beyond ``10 * tol``."""
        dev = self.asymptote_deviation()
        if dev > 10 * tol:
            raise ModelError(
                f"asymptote mismatch {dev:.3g} hartree at R_max={self.r_max} exceeds hard limit {10 * tol:.3g}"
            )
        if dev > tol:
            warnings.warn(
                f"potential not asymptotic at R_max={self.r_max}: deviation {dev:.3g} hartree",
                RuntimeWarning,
                stacklevel=2,
            )
        return dev

    def start_radius(self, r_floor: float = 30.0, tol: float = 1e-8) -> float:
        """Smallest R >= ``r_floor`` where every element is within ``tol`` of its asymptote.

        Falls back to ``max(r_floor, R_max)``; beyond R_max the matrix is
        asymptotic by construction.
        """
        asym = np.diag(self.asymptotes)
        dev = np.max(np.abs(self.values - asym), axis=(1, 2))
        bad = np.nonzero(dev >= tol)[0]
        if bad.size == 0:
            return float(r_floor)
        last_bad = bad[-1]
        if last_bad == self.grid.size - 1:
            return float(max(r_floor, self.r_max))
        return float(max(r_floor, self.grid[last_bad + 1]))


def _matrix_at(model: DiabaticModel, R: float) -> np.ndarray:
    """Scalar fast path of :func:`potential_matrix` for R inside or beyond the grid."""
    grid = model._grid_list
    if R > grid[-1]:
        return model._asym_matrix.copy()
    if R < grid[0]:
        return potential_matrix(model, R)
    i = min(bisect.bisect_right(grid, R) - 1, len(grid) - 2)
    dx = R - grid[i]
    c = model._coef
    return ((c[i, 0] * dx + c[i, 1]) * dx + c[i, 2]) * dx + c[i, 3]


def potential_matrix(model: DiabaticModel, R):
    """Evaluate the symmetric potential matrix at ``R`` (scalar or array).

    Natural cubic spline inside the grid, asymptotic diagonal beyond
    ``R_max`` and the first grid point for ``R < R_min``.
    Returns shape ``(n, n)`` for scalar ``R`` and ``(len(R), n, n)`` otherwise.
    """
    scalar = np.ndim(R) == 0
    R = np.atleast_1d(np.asarray(R, dtype=float))
    if np.any(R <= 0):
        raise ValueError("potential evaluated at R <= 0")
    grid = model.grid
    if np.any(R < grid[0]):
        warnings.warn(
            f"R below grid minimum {grid[0]}; clamping to first grid point",
            RuntimeWarning,
            stacklevel=2,
        )
    coef = model._spline.c
    idx = np.clip(np.searchsorted(grid, R, side="right") - 1, 0, grid.size - 2)
    dx = (np.maximum(R, grid[0]) - grid[idx])[:, None, None]
    out = ((coef[0, idx] * dx + coef[1, idx]) * dx + coef[2, idx]) * dx + coef[3, idx]
    on_node = np.searchsorted(grid, R)
    exact = (on_node < grid.size) & (grid[np.minimum(on_node, grid.size - 1)] == R)
    if np.any(exact):
        out[exact] = model.values[on_node[exact]]
    beyond = R > grid[-1]
    if np.any(beyond):
        out[beyond] = np.diag(model.asymptotes)
    out = 0.5 * (out + np.swapaxes(out, 1, 2))
    return out[0] if scalar else out


def potential_derivative(model: DiabaticModel, R):
    """dV/dR from the spline; zero beyond R_max and below R_min."""
    scalar = np.ndim(R) == 0
    R = np.atleast_1d(np.asarray(R, dtype=float))
    grid = model.grid
    coef = model._spline.c
    idx = np.clip(np.searchsorted(grid, R, side="right") - 1, 0, grid.size - 2)
    dx = (R - grid[idx])[:, None, None]
    out = (3 * coef[0, idx] * dx + 2 * coef[1, idx]) * dx + coef[2, idx]
    out[(R > grid[-1]) | (R < grid[0])] = 0.0
    out = 0.5 * (out + np.swapaxes(out, 1, 2))
    return out[0] if scalar else out


def _average_diagonals(diag: np.ndarray, scheme: AveragingScheme, R: np.ndarray) -> np.ndarray:
    n = diag.shape[-1]
    if scheme.kind == "arithmetic":
        return diag.mean(axis=-1)
    if scheme.kind == "channel":
        if not 1 <= scheme.channel <= n:
            raise ValueError(f"channel {scheme.channel} outside 1..{n}")
        return diag[..., scheme.channel - 1]
    pos = np.any(diag > 0, axis=-1)
    neg = np.any(diag < 0, axis=-1)
    mixed = pos & neg
    if np.any(mixed):
        k = int(np.argmax(mixed))
        chans = [i + 1 for i in range(n)]
        signs = ", ".join(f"{c}:{'+' if v > 0 else '-'}" for c, v in zip(chans, diag[k]))
        raise ValueError(
            f"geometric average undefined at R={R[k]:.6g}: mixed-sign diagonal ({signs})"
        )
    sign = np.where(neg, -1.0, 1.0)
    return sign * np.prod(np.abs(diag), axis=-1) ** (1.0 / n)


def averaged_potential(model: DiabaticModel, R, scheme: AveragingScheme = AveragingScheme(),
                       reference: float = 0.0):
    """Scalar trajectory potential from the diagonal of V(R).

    ``reference`` is subtracted from every diagonal element before averaging
    (the initial channel's asymptote in collision runs).
    """
    scalar = np.ndim(R) == 0
    R = np.atleast_1d(np.asarray(R, dtype=float))
    diag = np.diagonal(potential_matrix(model, R), axis1=1, axis2=2) - reference
    out = _average_diagonals(diag, scheme, R)
    return float(out[0]) if scalar else out


def averaged_potential_derivative(model: DiabaticModel, R, scheme: AveragingScheme = AveragingScheme(),
                                  reference: float = 0.0):
    """dV̄/dR matching :func:`averaged_potential`."""
    scalar = np.ndim(R) == 0
    R = np.atleast_1d(np.asarray(R, dtype=float))
    diag = np.diagonal(potential_matrix(model, R), axis1=1, axis2=2) - reference
    ddiag = np.diagonal(potential_derivative(model, R), axis1=1, axis2=2)
    n = model.n
    if scheme.kind == "arithmetic":
        out = ddiag.mean(axis=-1)
    elif scheme.kind == "channel":
        out = ddiag[..., scheme.channel - 1]
    else:
        gm = _average_diagonals(diag, scheme, R)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = gm * np.sum(ddiag / diag, axis=-1) / n
        out = np.where(np.isfinite(out), out, 0.0)
    return float(out[0]) if scalar else out


# -- file format ---------------------------------------------------------------------

def load_model(path, asym_tol: float = ASYMPTOTE_TOL) -> DiabaticModel:
    """Read a potential table.

    Format (``#`` starts a comment)::

        n <count>
        asymptotes <E_1> ... <E_n>
        labels <l_1> ... <l_n>          (optional)
        <R> <V_11> <V_12> ... <V_1n> <V_22> ... <V_nn>
    """
    lines = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if len(lines) < 2:
        raise ModelError(f"{path}: missing header")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "n":
        raise ModelError(f"{path}: malformed header, expected 'n <count>'")
    try:
        n = int(head[1])
    except ValueError:
        raise ModelError(f"{path}: malformed header, channel count {head[1]!r}") from None
    if n < 1:
        raise ModelError(f"{path}: channel count must be >= 1")
    asym_line = lines[1].split()
    if asym_line[0] != "asymptotes" or len(asym_line) != n + 1:
        raise ModelError(f"{path}: malformed header, expected 'asymptotes' with {n} values")
    asymptotes = [float(x) for x in asym_line[1:]]
    rest = lines[2:]
    labels: tuple[str, ...] = ()
    if rest and rest[0].split()[0] == "labels":
        labels = tuple(rest[0].split()[1:])
        if len(labels) != n:
            raise ModelError(f"{path}: expected {n} labels")
        rest = rest[1:]
    width = n * (n + 1) // 2 + 1
    rows = []
    for k, line in enumerate(rest):
        fields = line.split()
        if len(fields) != width:
            raise ModelError(f"{path}: data row {k + 1} has {len(fields)} fields, expected {width}")
        rows.append([float(x) for x in fields])
    if len(rows) < 4:
        raise ModelError(f"{path}: need at least 4 grid points")
    data = np.array(rows)
    grid = data[:, 0]
    if np.any(np.diff(grid) <= 0):
        raise ModelError(f"{path}: grid not strictly increasing")
    iu = np.triu_indices(n)
    values = np.zeros((grid.size, n, n))
    values[:, iu[0], iu[1]] = data[:, 1:]
    model = DiabaticModel(grid, values, asymptotes, labels)
    model.check_asymptotes(asym_tol)
    return model


def save_model(model: DiabaticModel, path) -> None:
    """Write ``model`` in the table format read by :func:`load_model`."""
    iu = np.triu_indices(model.n)
    out = [
        f"n {model.n}",
        "asymptotes " + " ".join(repr(float(e)) for e in model.asymptotes),
        "labels " + " ".join(model.labels),
    ]
    for R, V in zip(model.grid, model.values):
        out.append(" ".join(repr(float(x)) for x in (R, *V[iu])))
    Path(path).write_text("\n".join(out) + "\n")


# -- analytic systems ----------------------------------------------------------------

def _default_grid(r_min: float, r_max: float, step: float) -> np.ndarray:
    m = int(math.ceil((r_max - r_min) / step)) + 1
    return np.linspace(r_min, r_max, m)


def landau_zener(F1: float, F2: float, V12: float, R_x: float, grid=None) -> DiabaticModel:
    """Two linear diabats ``F_i (R - R_x)`` crossing at ``R_x`` with constant coupling.

    The couplings are switched off beyond the grid, so the last grid point
    is taken as the asymptotic energy of each diabat.
    """
    if grid is None:
        grid = _default_grid(0.05, R_x + 60.0, 0.05)
    grid = np.asarray(grid, dtype=float)
    values = np.zeros((grid.size, 2, 2))
    values[:, 0, 0] = F1 * (grid - R_x)
    values[:, 1, 1] = F2 * (grid - R_x)
    values[:, 0, 1] = V12
    asym = [F1 * (grid[-1] - R_x), F2 * (grid[-1] - R_x)]
    return DiabaticModel(grid, values, asym, ("LZ1", "LZ2"))


def exponential_coupling(E, A, alpha, grid=None, labels=()) -> DiabaticModel:
    """V_ii = E_i + A_ii exp(-alpha_ii R), V_ij = A_ij exp(-alpha_ij R).

    ``A`` and ``alpha`` are symmetric n x n arrays (upper triangle read).
    The default grid reaches the radius where every term is below 1e-10.
    """
    E = np.atleast_1d(np.asarray(E, dtype=float))
    n = E.size
    A = np.asarray(A, dtype=float).reshape(n, n)
    alpha = np.asarray(alpha, dtype=float).reshape(n, n)
    A = np.triu(A) + np.triu(A, 1).T
    alpha = np.triu(alpha) + np.triu(alpha, 1).T
    if np.any(alpha <= 0):
        raise ModelError("decay constants must be positive")
    if grid is None:
        active = np.abs(A) > 0
        reach = np.log(np.abs(A[active]) / 1e-10) / alpha[active] if active.any() else np.array([0.0])
        grid = _default_grid(0.3, max(40.0, float(reach.max()) + 1.0), 0.01)
    grid = np.asarray(grid, dtype=float)
    values = A[None] * np.exp(-alpha[None] * grid[:, None, None])
    values[:, np.arange(n), np.arange(n)] += E
    return DiabaticModel(grid, values, E, tuple(labels))


def synthetic(n: int, seed: int = 0, grid=None) -> DiabaticModel:
    """Deterministic n-channel charge-exchange-like model.

    Repulsive exponential diabats whose walls steepen as the asymptote
    lowers, so the curves cross at a few bohr, coupled by exponentially
    decaying off-diagonal terms.
    """
    if n < 1:
        raise ModelError("synthetic model needs n >= 1")
    rng = np.random.default_rng(seed)
    E = np.concatenate([[0.0], np.sort(rng.uniform(0.03, 0.30, n - 1))])
    wall = np.sort(rng.uniform(4.0, 12.0, n))[::-1]
    A = np.zeros((n, n))
    alpha = np.ones((n, n))
    A[np.arange(n), np.arange(n)] = wall
    alpha[np.arange(n), np.arange(n)] = rng.uniform(1.1, 1.4, n)
    iu = np.triu_indices(n, 1)
    A[iu] = rng.uniform(0.15, 0.45, iu[0].size) * rng.choice([-1.0, 1.0], iu[0].size)
    alpha[iu] = rng.uniform(0.8, 1.1, iu[0].size)
    return exponential_coupling(E, A, alpha, grid=grid, labels=[f"S{i + 1}" for i in range(n)])


def na_he_analog() -> DiabaticModel:
    """Three-channel excitation model on a Na+He-like energy scale (2.1 eV span)."""
    E = [0.0, 0.0772, 0.0930]
    A = [[9.0, 0.35, 0.20],
         [0.0, 5.0, 0.30],
         [0.0, 0.0, 4.0]]
    alpha = [[1.25, 0.95, 1.00],
             [1.0, 1.10, 0.90],
             [1.0, 1.0, 1.05]]
    return exponential_coupling(E, A, alpha, labels=("3s", "3p", "4s"))


def two_state(delta_e: float = 0.05, coupling: float = 0.3, decay: float = 0.9) -> DiabaticModel:
    """Two channels split by ``delta_e`` with a crossing near 3 bohr."""
    E = [0.0, delta_e]
    A = [[6.0, coupling], [0.0, 3.0]]
    alpha = [[1.2, decay], [decay, 1.2]]
    return exponential_coupling(E, A, alpha, labels=("lower", "upper"))


def build_analytic(kind: str, **params) -> DiabaticModel:
    """Construct a shipped analytic system by name.

    ``kind`` is one of ``landau_zener``, ``exponential``, ``synthetic``,
    ``na_he`` or ``two_state``; ``params`` go to the matching builder.
    """
    builders = {
        "landau_zener": landau_zener,
        "exponential": exponential_coupling,
        "synthetic": synthetic,
        "na_he": na_he_analog,
        "two_state": two_state,
    }
    try:
        builder = builders[kind]
    except KeyError:
        raise ModelError(f"unknown analytic model {kind!r}; choose from {sorted(builders)}") from None
    return builder(**params)
