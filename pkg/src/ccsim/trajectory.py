"""Classical internuclear paths R(t): straight line or curvilinear on an averaged potential.

Time is measured from closest approach (t = 0), in atomic units.
"""

from __future__ import annotations

import bisect
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .potmodel import AveragingScheme, DiabaticModel, averaged_potential, averaged_potential_derivative

logger = logging.getLogger(__name__)

AMU = 1822.888486  # electron masses per unified atomic mass unit


class TrajectoryError(ValueError):
    """The requested classical path does not exist."""


@dataclass(frozen=True)
class CollisionGeometry:
    """Initial relative speed ``v0`` (a.u.), impact parameter ``b`` (bohr), reduced mass ``mu`` (a.u.)."""

    v0: float
    b: float
    mu: float = 1.0

    def __post_init__(self):
        if not self.v0 > 0:
            raise ValueError("v0 must be positive")
        if self.b < 0:
            raise ValueError("impact parameter must be non-negative")
        if not self.mu > 0:
            raise ValueError("reduced mass must be positive")

    @property
    def energy(self) -> float:
        """Centre-of-mass kinetic energy mu v0^2 / 2 (hartree)."""
        return 0.5 * self.mu * self.v0 ** 2


@dataclass(frozen=True, eq=False)
class TrajectoryPath:
    """Dense samples of R(t) and dR/dt over [-t_end, t_end].

    Between samples R(t) is a monotone cubic (PCHIP) interpolant of each
    half; beyond ``t_end`` the motion continues at the final radial speed.
    """

    times: np.ndarray
    radii: np.ndarray
    speeds: np.ndarray
    kind: str
    turning_point: float
    geom: CollisionGeometry | None = None

    def __post_init__(self):
        half = self.times >= 0
        t_out = self.times[half]
        interp = PchipInterpolator(t_out, self.radii[half])
        object.__setattr__(self, "_interp", interp)
        object.__setattr__(self, "_dinterp", PchipInterpolator(t_out, self.speeds[half]))
        object.__setattr__(self, "_knots", interp.x.tolist())
        object.__setattr__(self, "_coef", interp.c.T.tolist())

    def radius_at(self, t: float) -> float:
        """Scalar R(t) without array overhead."""
        ta = abs(t)
        if self.kind == "straight" and self.geom is not None:
            return math.hypot(self.geom.b, self.geom.v0 * ta)
        if ta >= self.t_end:
            return float(self.radii[-1] + self.speeds[-1] * (ta - self.t_end))
        x = self._knots
        i = min(bisect.bisect_right(x, ta) - 1, len(x) - 2)
        c0, c1, c2, c3 = self._coef[i]
        dx = ta - x[i]
        return ((c0 * dx + c1) * dx + c2) * dx + c3

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def radius(self, t):
        """R(t), even in t."""
        if self.kind == "straight" and self.geom is not None:
            return straight_line(self.geom, t)[0]
        ta = np.abs(np.asarray(t, dtype=float))
        inside = np.minimum(ta, self.t_end)
        r = self._interp(inside)
        return np.where(ta > self.t_end, self.radii[-1] + self.speeds[-1] * (ta - self.t_end), r)

    def speed(self, t):
        """dR/dt, odd in t."""
        if self.kind == "straight" and self.geom is not None:
            return straight_line(self.geom, t)[1]
        t = np.asarray(t, dtype=float)
        ta = np.abs(t)
        v = np.where(ta > self.t_end, self.speeds[-1], self._dinterp(np.minimum(ta, self.t_end)))
        return np.sign(t) * v


def straight_line(geom: CollisionGeometry, t):
    """R(t) = sqrt(b^2 + v0^2 t^2) and dR/dt = v0^2 t / R."""
    t = np.asarray(t, dtype=float)
    R = np.sqrt(geom.b ** 2 + (geom.v0 * t) ** 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(R > 0, geom.v0 ** 2 * t / np.where(R > 0, R, 1.0), 0.0)
    if R.ndim == 0:
        return float(R), float(v)
    return R, v


def straight_path(geom: CollisionGeometry, r_start: float, samples: int = 2001) -> TrajectoryPath:
    """Sampled straight-line path from R = r_start inwards and back out."""
    if r_start <= geom.b:
        raise TrajectoryError(f"start radius {r_start} inside impact parameter {geom.b}")
    t_end = math.sqrt(r_start ** 2 - geom.b ** 2) / geom.v0
    t = np.linspace(0.0, t_end, samples)
    R, v = straight_line(geom, t)
    return _mirror(t, R, v, "straight", float(geom.b), geom)


def _mirror(t, R, v, kind, r_c, geom=None) -> TrajectoryPath:
    times = np.concatenate([-t[:0:-1], t])
    radii = np.concatenate([R[:0:-1], R])
    speeds = np.concatenate([-v[:0:-1], v])
    return TrajectoryPath(times, radii, speeds, kind, r_c, geom)


def radicand(vbar: Callable, geom: CollisionGeometry, R):
    """1 - b^2/R^2 - V̄(R)/E."""
    R = np.asarray(R, dtype=float)
    return 1.0 - geom.b ** 2 / R ** 2 - vbar(R) / geom.energy


def turning_point(vbar: Callable, geom: CollisionGeometry, r_start: float, r_min: float,
                  scan_step: float = 0.01) -> float:
    """Largest root of the radicand below ``r_start``.

    Scans downward on a uniform grid for the first sign change, then
    refines the bracket with Brent's method to 1e-12 bohr.
    """
    if radicand(vbar, geom, r_start) <= 0:
        raise TrajectoryError(
            f"entrance channel classically forbidden at R_start={r_start} (v0={geom.v0}, b={geom.b})"
        )
    lo = max(r_min, 1e-6)
    m = int(math.ceil((r_start - lo) / scan_step)) + 1
    Rs = np.linspace(r_start, lo, m)
    f = radicand(vbar, geom, Rs)
    neg = np.nonzero(f <= 0)[0]
    if neg.size == 0:
        warnings.warn(
            f"no turning point above R_min={lo} (b={geom.b}); using R_min",
            RuntimeWarning,
            stacklevel=2,
        )
        return float(lo)
    k = neg[0]
    if f[k] == 0:
        return float(Rs[k])
    return float(brentq(lambda r: radicand(vbar, geom, r), Rs[k], Rs[k - 1], xtol=1e-13, rtol=1e-15))


def model_potential(model: DiabaticModel, scheme: AveragingScheme, reference: float = 0.0):
    """Return V̄(R) and dV̄/dR callables for a model, referenced to ``reference``.

    V̄ is shifted to vanish beyond the grid so that ``v0`` is the speed at
    infinity whatever the spread of channel asymptotes.
    """
    v_inf = float(averaged_potential(model, 2.0 * model.r_max, scheme, reference))

    def vbar(R):
        return averaged_potential(model, R, scheme, reference) - v_inf

    def dvbar(R):
        return averaged_potential_derivative(model, R, scheme, reference)

    return vbar, dvbar


def find_turning_point(model: DiabaticModel, scheme: AveragingScheme, geom: CollisionGeometry,
                       reference: float = 0.0, r_start: float | None = None) -> float:
    """Closest-approach radius on the averaged potential of ``model``."""
    if r_start is None:
        r_start = model.start_radius()
    vbar, _ = model_potential(model, scheme, reference)
    return turning_point(vbar, geom, r_start, model.r_min)


def curvilinear_path(vbar: Callable, dvbar: Callable | None, geom: CollisionGeometry, r_start: float,
                     r_min: float, samples: int = 2001, rtol: float = 1e-11) -> TrajectoryPath:
    """Integrate dt = dR / (v0 sqrt(radicand)) outward from the turning point.

    With R = R_c + u^2 the integrand 2u / (v0 sqrt(radicand)) is regular at
    u = 0, where it tends to 2 / (v0 sqrt(radicand'(R_c))).
    """
    r_c = turning_point(vbar, geom, r_start, r_min)
    E, b, v0 = geom.energy, geom.b, geom.v0

    def slope(R):
        if dvbar is not None:
            d = dvbar(R)
        else:
            h = 1e-6 * max(R, 1.0)
            d = (vbar(R + h) - vbar(R - h)) / (2 * h)
        return 2 * b ** 2 / R ** 3 - d / E

    slope_c = float(slope(r_c))
    if slope_c <= 0:
        raise TrajectoryError(f"radicand has no positive slope at turning point R_c={r_c}")
    u_small = 1e-4

    def dtdu(u, _y):
        if u < u_small:
            # radicand ~ slope_c u^2 near the root
            return [2.0 / (v0 * math.sqrt(slope_c))]
        f = float(radicand(vbar, geom, r_c + u * u))
        return [2.0 * u / (v0 * math.sqrt(max(f, 1e-300)))]

    u_end = math.sqrt(r_start - r_c)
    u = np.linspace(0.0, u_end, samples)
    sol = solve_ivp(dtdu, (0.0, u_end), [0.0], method="DOP853", t_eval=u, rtol=rtol, atol=1e-12)
    if not sol.success:
        raise TrajectoryError(f"radial quadrature failed: {sol.message}")
    t = sol.y[0]
    R = r_c + u ** 2
    v = v0 * np.sqrt(np.maximum(radicand(vbar, geom, R), 0.0))
    return _mirror(t, R, v, "curvilinear", r_c, geom)


def integrate_radial(model: DiabaticModel, scheme: AveragingScheme, geom: CollisionGeometry,
                     reference: float = 0.0, r_start: float | None = None,
                     samples: int = 2001) -> TrajectoryPath:
    """Curvilinear path on the averaged potential of ``model``."""
    if r_start is None:
        r_start = model.start_radius()
    vbar, dvbar = model_potential(model, scheme, reference)
    return curvilinear_path(vbar, dvbar, geom, r_start, model.r_min, samples=samples)


def make_path(kind: str, geom: CollisionGeometry, model: DiabaticModel | None = None,
              scheme: AveragingScheme = AveragingScheme(), reference: float = 0.0,
              r_start: float | None = None, samples: int = 2001) -> TrajectoryPath:
    """Dispatch on ``kind`` (``"straight"`` or ``"curvilinear"``)."""
    if r_start is None:
        r_start = model.start_radius() if model is not None else 30.0
    if kind == "straight":
        return straight_path(geom, r_start, samples)
    if kind == "curvilinear":
        if model is None:
            raise ValueError("curvilinear path needs a potential model")
        return integrate_radial(model, scheme, geom, reference, r_start, samples)
    raise ValueError(f"unknown trajectory kind {kind!r}")


def write_path_csv(path: TrajectoryPath, dest, header: str = "") -> None:
    """Dump (t, R, dR/dt) as CSV."""
    with open(dest, "w") as fh:
        if header:
            fh.write(header)
        fh.write(f"# kind: {path.kind}, turning_point: {path.turning_point!r}\n")
        fh.write("t,R,dRdt\n")
        for row in zip(path.times, path.radii, path.speeds):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
