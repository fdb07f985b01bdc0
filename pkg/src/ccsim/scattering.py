"""Collisions along classical paths: probabilities, impact-parameter scans and cross sections."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.integrate import simpson

from .potmodel import AveragingScheme, DiabaticModel, _matrix_at, potential_matrix
from .propagators import PropagatorConfig, propagate
from .trajectory import CollisionGeometry, TrajectoryPath, make_path

logger = logging.getLogger(__name__)

HARTREE_EV = 27.211386245988
BOHR_CM = 0.529177210903e-8

DEFAULT_CONFIG = PropagatorConfig("diagonalization", dt=0.05, tol=1e-7)


class CollisionHamiltonian:
    """V(R(t)) minus a reference energy on the diagonal, as a Hamiltonian sampler."""

    def __init__(self, model: DiabaticModel, path: TrajectoryPath, reference: float = 0.0):
        self.model = model
        self.path = path
        self.reference = reference
        self._shift = reference * np.eye(model.n)

    def __call__(self, t):
        if np.ndim(t) == 0:
            R = self.path.radius_at(float(t))
            return _matrix_at(self.model, R) - self._shift
        R = np.asarray(self.path.radius(np.asarray(t)), dtype=float)
        return potential_matrix(self.model, R) - self._shift


@dataclass(frozen=True, eq=False)
class CollisionResult:
    """Final and time-resolved probabilities out of one initial channel (1-based)."""

    geom: CollisionGeometry
    initial_channel: int
    final_probs: np.ndarray
    times: np.ndarray
    history: np.ndarray
    config: PropagatorConfig
    trajectory: str
    amplitudes: np.ndarray = field(repr=False, default=None)
    converged: bool = True
    steps: int = 0

    @property
    def unitarity_error(self) -> float:
        return float(np.max(np.abs(self.history.sum(axis=1) - 1.0)))


def _stable(times, probs, tol):
    # trailing 10 % of the elapsed time, so adaptive runs are not judged on the interaction region
    times = np.asarray(times)
    keep = times >= times[-1] - 0.1 * (times[-1] - times[0])
    k = max(2, int(keep.sum()))
    t, p = times[-k:], np.asarray(probs)[-k:]
    rate = np.abs(np.diff(p, axis=0)) / np.diff(t)[:, None]
    return float(rate.max()) < tol


def run_collision(model: DiabaticModel, geom: CollisionGeometry, initial_channel: int = 1,
                  trajectory: str = "straight", config: PropagatorConfig = DEFAULT_CONFIG,
                  scheme: AveragingScheme = AveragingScheme(), r_start: float | None = None,
                  stability_tol: float = 1e-10, max_extensions: int = 4,
                  max_history: int = 5000) -> CollisionResult:
    """Propagate a(t) from a(-t_end) = e_initial along the classical path.

    Diagonal energies are referenced to the initial channel's asymptote.
    After reaching ``t_end`` the run is extended in 10 % chunks until every
    |dP/dt| over the trailing 10 % of the elapsed time is below ``stability_tol``.
    """
    n = model.n
    if not 1 <= initial_channel <= n:
        raise ValueError(f"initial channel {initial_channel} outside 1..{n}")
    reference = float(model.asymptotes[initial_channel - 1])
    path = make_path(trajectory, geom, model, scheme, reference, r_start)
    H = CollisionHamiltonian(model, path, reference)
    a0 = np.zeros(n, dtype=complex)
    a0[initial_channel - 1] = 1.0
    t0, t1 = -path.t_end, path.t_end
    run = propagate(H, a0, t0, t1, config, max_history=max_history)
    times, probs = [run.times], [run.probs]
    a, steps = run.amplitudes, run.steps
    converged = _stable(run.times, run.probs, stability_tol)
    extra = 0
    chunk = 0.1 * (t1 - t0)
    while not converged and extra < max_extensions:
        more = propagate(H, a, t1, t1 + chunk, config, max_history=max_history)
        times.append(more.times[1:])
        probs.append(more.probs[1:])
        a, t1 = more.amplitudes, t1 + chunk
        steps += more.steps
        extra += 1
        converged = _stable(np.concatenate(times), np.concatenate(probs), stability_tol)
    if not converged:
        logger.info("probabilities not stable to %g after %d extensions (v0=%g, b=%g)",
                    stability_tol, extra, geom.v0, geom.b)
    times = np.concatenate(times)
    probs = np.concatenate(probs)
    if len(times) > max_history:
        idx = np.unique(np.linspace(0, len(times) - 1, max_history).round().astype(int))
        times, probs = times[idx], probs[idx]
    return CollisionResult(geom, initial_channel, np.abs(a) ** 2, times, probs, config,
                           trajectory, a, converged, steps)


# -- impact-parameter scans ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OpacityTable:
    """P_if(b) at fixed v0 for one initial channel; ``probs`` has shape (len(b), n)."""

    v0: float
    initial_channel: int
    b: np.ndarray
    probs: np.ndarray
    b_max: float
    mu: float = 1.0
    truncated: bool = False

    def column(self, final_channel: int) -> np.ndarray:
        return self.probs[:, final_channel - 1]


def _scan_point(b, model, v0, mu, initial_channel, trajectory, config, scheme):
    geom = CollisionGeometry(v0, b, mu)
    res = run_collision(model, geom, initial_channel, trajectory, config, scheme, max_history=50)
    return res.final_probs


def impact_scan(model: DiabaticModel, v0: float, initial_channel: int = 1, mu: float = 1.0,
                trajectory: str = "straight", config: PropagatorConfig = DEFAULT_CONFIG,
                scheme: AveragingScheme = AveragingScheme(), db: float = 0.1,
                eps_b: float = 1e-4, b_cap: float = 50.0, refine: float = 0.05,
                jobs: int = 1) -> OpacityTable:
    """Opacity function on a uniform b grid with one level of bisection.

    The uniform grid starts at b = 0 and stops once the total inelastic
    probability is below ``eps_b`` at two consecutive points; that point is
    b_max. Intervals whose endpoints differ by more than ``refine`` in any
    channel get a midpoint.
    """
    if not v0 > 0:
        raise ValueError("v0 must be positive")
    worker = partial(_scan_point, model=model, v0=v0, mu=mu, initial_channel=initial_channel,
                     trajectory=trajectory, config=config, scheme=scheme)
    pool = ProcessPoolExecutor(jobs) if jobs > 1 else None
    mapper = pool.map if pool else map
    bs: list[float] = []
    ps: list[np.ndarray] = []
    quiet = 0
    truncated = False
    k = 0
    try:
        while True:
            batch = [round(j * db, 12) for j in range(k, k + max(jobs, 1))]
            batch = [b for b in batch if b <= b_cap + 1e-12]
            if not batch:
                truncated = True
                warnings.warn(f"b_max not found below b_cap={b_cap}; truncating scan", RuntimeWarning,
                              stacklevel=2)
                break
            done = False
            for b, p in zip(batch, mapper(worker, batch)):
                bs.append(b)
                ps.append(p)
                inel = 1.0 - p[initial_channel - 1]
                quiet = quiet + 1 if (b > 0 and inel < eps_b) else 0
                if quiet >= 2:
                    done = True
                    break
            if done:
                break
            k += len(batch)
        mids = [0.5 * (bs[i] + bs[i + 1]) for i in range(len(bs) - 1)
                if np.max(np.abs(ps[i + 1] - ps[i])) > refine]
        extra = list(mapper(worker, mids))
    finally:
        if pool:
            pool.shutdown()
    b_all = np.array(bs + mids)
    p_all = np.array(ps + extra) if extra else np.array(ps)
    order = np.argsort(b_all)
    return OpacityTable(v0, initial_channel, b_all[order], p_all[order], float(bs[-1]), mu, truncated)


def cross_section(table: OpacityTable, final_channel: int | None = None):
    """sigma_if = 2 pi int_0^b_max P_if(b) b db in bohr^2.

    Simpson's rule on the (possibly non-uniform) b grid; returns all
    channels as an array, or one value when ``final_channel`` is given.
    """
    b = np.asarray(table.b, dtype=float)
    if b.size < 3:
        raise ValueError("cross section needs at least 3 opacity rows")
    integrand = 2 * np.pi * np.asarray(table.probs) * b[:, None]
    sigma = simpson(integrand, x=b, axis=0)
    sigma = np.maximum(sigma, 0.0)
    return float(sigma[final_channel - 1]) if final_channel is not None else sigma


# -- cross-section tables and Ehrenfest relabel ----------------------------------------

@dataclass(frozen=True, eq=False)
class CrossSectionTable:
    """sigma_if(v0) for one initial channel.

    ``kinetic`` is the centre-of-mass kinetic energy (hartree) of each row
    and ``sigma`` has shape (rows, n) in bohr^2. ``relabeled`` maps a final
    channel to its (energy, sigma) arrays after the Ehrenfest relabel.
    """

    v0: np.ndarray
    kinetic: np.ndarray
    sigma: np.ndarray
    initial_channel: int
    asymptotes: np.ndarray
    relabeled: dict | None = None

    @property
    def kinetic_ev(self) -> np.ndarray:
        return self.kinetic * HARTREE_EV

    @property
    def sigma_cm2(self) -> np.ndarray:
        return self.sigma * BOHR_CM ** 2


def cross_section_table(tables: list[OpacityTable], asymptotes) -> CrossSectionTable:
    """Collect per-speed opacity tables into a cross-section table."""
    tables = sorted(tables, key=lambda t: t.v0)
    v0 = np.array([t.v0 for t in tables])
    kin = np.array([0.5 * t.mu * t.v0 ** 2 for t in tables])
    sigma = np.array([cross_section(t) for t in tables])
    return CrossSectionTable(v0, kin, sigma, tables[0].initial_channel, np.asarray(asymptotes, dtype=float))


def relabel_energy(kbar, delta_e):
    """E = K̄ + ΔE/2 + ΔE²/(16 K̄)."""
    kbar = np.asarray(kbar, dtype=float)
    if np.any(kbar <= 0):
        raise ValueError("kinetic energy must be positive")
    return kbar + 0.5 * delta_e + delta_e ** 2 / (16.0 * kbar)


def symmetrized_kinetic(energy, delta_e):
    """Inverse of :func:`relabel_energy` on the branch K̄ >= |ΔE|/4."""
    x = np.asarray(energy, dtype=float) - 0.5 * delta_e
    disc = x ** 2 - 0.25 * delta_e ** 2
    if np.any(disc < 0):
        raise ValueError("energy below the symmetrized threshold")
    return 0.5 * (x + np.sqrt(disc))


def ehrenfest_relabel(xsec: CrossSectionTable) -> CrossSectionTable:
    """Relabel each transition's energy axis with its own ΔE = E_f - E_i.

    Rows with K̄ < |ΔE|/4 are dropped for that transition; elastic columns
    keep their axis.
    """
    i = xsec.initial_channel - 1
    relabeled = {}
    for f in range(xsec.sigma.shape[1]):
        de = float(xsec.asymptotes[f] - xsec.asymptotes[i])
        if de == 0:
            relabeled[f + 1] = (xsec.kinetic.copy(), xsec.sigma[:, f].copy())
            continue
        keep = xsec.kinetic >= abs(de) / 4.0
        relabeled[f + 1] = (relabel_energy(xsec.kinetic[keep], de), xsec.sigma[keep, f].copy())
    return CrossSectionTable(xsec.v0, xsec.kinetic, xsec.sigma, xsec.initial_channel,
                             xsec.asymptotes, relabeled)


# -- detailed balance ------------------------------------------------------------------

@dataclass(frozen=True)
class BalanceRow:
    channel_i: int
    channel_f: int
    energy: float
    raw_forward: float
    raw_reverse: float
    sym_forward: float
    sym_reverse: float

    @property
    def raw_asymmetry(self) -> float:
        return abs(self.raw_forward - self.raw_reverse)

    @property
    def sym_asymmetry(self) -> float:
        return abs(self.sym_forward - self.sym_reverse)


def detailed_balance_report(model: DiabaticModel, energies, pairs, b: float, mu: float,
                            trajectory: str = "curvilinear",
                            config: PropagatorConfig = DEFAULT_CONFIG,
                            scheme: AveragingScheme = AveragingScheme()) -> list[BalanceRow]:
    """Compare P_if and P_fi at equal total energy, before and after symmetrization.

    ``energies`` are kinetic energies K_i in channel i (hartree). The raw
    comparison runs i -> f at K_i and f -> i at K_f = K_i - ΔE. The
    symmetrized comparison runs both directions at the common K̄ whose
    relabel gives K_i.
    """
    rows = []

    def prob(start, end, kinetic):
        geom = CollisionGeometry(math.sqrt(2 * kinetic / mu), b, mu)
        res = run_collision(model, geom, start, trajectory, config, scheme, max_history=50)
        return float(res.final_probs[end - 1])

    for i, f in pairs:
        de = float(model.asymptotes[f - 1] - model.asymptotes[i - 1])
        for K in energies:
            k_f = K - de
            if k_f <= 0 or K <= 0:
                continue
            kbar = float(symmetrized_kinetic(K, de))
            rows.append(BalanceRow(i, f, float(K), prob(i, f, K), prob(f, i, k_f),
                                   prob(i, f, kbar), prob(f, i, kbar)))
    return rows
