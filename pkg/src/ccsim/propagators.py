"""Integrators for i da/dt = V(t) a with a real symmetric V(t).

Each stepper is a pure function of the current amplitudes. :func:`propagate`
drives a stepper over a time interval, handles the optional constant-shift
preconditioner and records the probability history.

A Hamiltonian sampler is any callable ``H(t)`` returning an ``(n, n)`` array
for scalar ``t`` and ``(len(t), n, n)`` for an array of times.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import jv

logger = logging.getLogger(__name__)

METHODS = ("crank_nicolson", "chebyshev", "rk4", "rkf45", "diagonalization")
DT_MIN = 1e-8


class PropagationError(RuntimeError):
    """A propagation run could not be completed."""


@dataclass(frozen=True)
class SpectralBounds:
    e_min: float
    e_max: float

    def __post_init__(self):
        if self.e_min > self.e_max:
            raise ValueError("e_min > e_max")

    @property
    def center(self) -> float:
        return 0.5 * (self.e_max + self.e_min)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.e_max - self.e_min)


@dataclass(frozen=True)
class PropagatorConfig:
    """Integrator choice and step control.

    ``dt`` is the fixed step, or the first trial step for adaptive runs.
    ``tol`` is the local error bound; it makes ``diagonalization``
    adaptive (step doubling) and is required by ``rkf45``.
    ``batch`` lets fixed-step exponential and RK4 runs build all step
    matrices at once; results agree with per-step stepping to rounding.
    """

    method: str = "rkf45"
    dt: float = 0.01
    tol: float | None = None
    precondition: bool = False
    eigen_bounds: str = "gershgorin"
    batch: bool = False
    dt_min: float = DT_MIN

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.eigen_bounds not in ("gershgorin", "exact"):
            raise ValueError("eigen_bounds must be 'gershgorin' or 'exact'")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.method == "rkf45" and not (self.tol and self.tol > 0):
            raise ValueError("rkf45 needs a positive local error bound tol")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")

    @property
    def adaptive(self) -> bool:
        return self.method == "rkf45" or (self.method == "diagonalization" and self.tol is not None)

    def tightened(self, factor: float = 100.0) -> "PropagatorConfig":
        """Config whose local error is ``factor`` times smaller.

        Adaptive bounds shrink by ``factor``; fixed steps shrink by
        ``factor ** (1/order)`` with order 2 for the midpoint exponential
        methods and 4 for RK4.
        """
        if self.adaptive:
            return replace(self, tol=self.tol / factor)
        order = 4 if self.method == "rk4" else 2
        return replace(self, dt=self.dt / factor ** (1.0 / order))

    def describe(self) -> str:
        step = f"tol={self.tol:g}" if self.adaptive else f"dt={self.dt:g}"
        pre = f"+precond({self.eigen_bounds})" if self.precondition else ""
        return f"{self.method}{pre} {step}"


# -- elementary operations -----------------------------------------------------------

def rhs(V, a):
    """da/dt = -i V a."""
    V = np.asarray(V)
    a = np.asarray(a)
    if V.shape[-1] != a.shape[0] or V.shape[0] != V.shape[-1]:
        raise ValueError(f"dimension mismatch: V {V.shape}, a {a.shape}")
    return -1j * (V @ a)


def gershgorin_bounds(V) -> SpectralBounds:
    """Spectral enclosure from diagonal +/- off-diagonal absolute row sums."""
    V = np.asarray(V, dtype=float)
    if V.shape[0] > 16:
        d = np.diag(V)
        radius = np.sum(np.abs(V), axis=1) - np.abs(d)
        return SpectralBounds(float(np.min(d - radius)), float(np.max(d + radius)))
    # plain loops beat array overhead for the small matrices met per step
    lo, hi = math.inf, -math.inf
    for i, row in enumerate(V.tolist()):
        d = row[i]
        r = sum(map(abs, row)) - abs(d)
        lo = min(lo, d - r)
        hi = max(hi, d + r)
    return SpectralBounds(lo, hi)


def exact_bounds(V) -> SpectralBounds:
    w = np.linalg.eigvalsh(V)
    return SpectralBounds(float(w[0]), float(w[-1]))


def spectral_bounds(V, kind: str = "gershgorin") -> SpectralBounds:
    return exact_bounds(V) if kind == "exact" else gershgorin_bounds(V)


def precondition(V, bounds: SpectralBounds):
    """Shift ``V`` by the centre of its spectral bounds.

    Returns ``(V - shift I, shift)``. The shift only changes the global
    phase, by ``exp(-i shift dt)`` per step of length ``dt``.
    """
    shift = bounds.center
    V = np.asarray(V, dtype=float)
    return V - shift * np.eye(V.shape[0]), shift


# -- single steps ----------------------------------------------------------------------

def step_crank_nicolson(V_mid, a, dt):
    """Cayley step (I + i V dt/2)^-1 (I - i V dt/2) a."""
    n = a.shape[0]
    half = 0.5j * dt * np.asarray(V_mid)
    return np.linalg.solve(np.eye(n) + half, a - half @ a)


def chebyshev_coefficients(alpha: float, eps: float = 1e-15) -> np.ndarray:
    """(2 - delta_k0) (-i)^k J_k(alpha), truncated at the first |J_k| < eps with k > alpha.

    At most ceil(1.1 alpha) + 20 terms are kept.
    """
    cap = int(math.ceil(1.1 * alpha)) + 20
    k = np.arange(cap + 1)
    J = jv(k, alpha)
    beyond = np.nonzero((k > alpha) & (np.abs(J) < eps))[0]
    N = int(beyond[0]) if beyond.size else cap + 1
    coef = J[:N] * (-1j) ** k[:N]
    coef[1:] *= 2.0
    return coef


def chebyshev_order(alpha: float, eps: float = 1e-15) -> int:
    """Number of expansion terms used for argument ``alpha = half_width * dt``."""
    return chebyshev_coefficients(alpha, eps).size


def step_chebyshev(V, a, dt, bounds: SpectralBounds | None = None, eps: float = 1e-15):
    """exp(-i V dt) a by Bessel-weighted Chebyshev expansion.

    The spectrum is mapped to [-1, 1] using ``bounds`` (Gershgorin if not
    given); the series stops once ``|J_k(half_width * dt)| < eps``.
    """
    V = np.asarray(V, dtype=float)
    if bounds is None:
        bounds = gershgorin_bounds(V)
    c, dH = bounds.center, bounds.half_width
    phase = np.exp(-1j * c * dt)
    if dH <= 0:
        return phase * a
    coef = chebyshev_coefficients(dH * dt, eps)
    Vn = (V - c * np.eye(V.shape[0])) / dH
    t_prev, t_cur = a, Vn @ a
    out = coef[0] * t_prev
    if coef.size > 1:
        out = out + coef[1] * t_cur
    for k in range(2, coef.size):
        t_prev, t_cur = t_cur, 2.0 * (Vn @ t_cur) - t_prev
        out = out + coef[k] * t_cur
    out = phase * out
    norm_in = np.linalg.norm(a)
    if abs(np.linalg.norm(out) - norm_in) > 1e-8 * max(norm_in, 1.0):
        raise PropagationError("Chebyshev series lost unitarity; spectral bounds do not contain the spectrum")
    return out


def step_diagonalization(V_mid, a, dt):
    """U exp(-i D dt) U^T a from the eigendecomposition of ``V_mid``."""
    w, U = np.linalg.eigh(V_mid)
    return U @ (np.exp(-1j * w * dt) * (U.T @ a))


def step_rk4(H: Callable, a, t, dt):
    """Classical fourth-order Runge-Kutta step for da/dt = -i H(t) a."""
    V0 = H(t)
    Vh = H(t + 0.5 * dt)
    V1 = H(t + dt)
    k1 = -1j * (V0 @ a)
    k2 = -1j * (Vh @ (a + 0.5 * dt * k1))
    k3 = -1j * (Vh @ (a + 0.5 * dt * k2))
    k4 = -1j * (V1 @ (a + dt * k3))
    return a + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


# Fehlberg 4(5) tableau
_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)
_ERR = tuple(b5 - b4 for b4, b5 in zip(_B4, _B5))


def _fehlberg_trial(H, a, t, dt):
    k = []
    for c, row in zip(_C, _A):
        y = a
        for coeff, kj in zip(row, k):
            y = y + dt * coeff * kj
        k.append(-1j * (H(t + c * dt) @ y))
    a5 = a + dt * sum(b * kj for b, kj in zip(_B5, k) if b)
    err = np.linalg.norm(dt * sum(e * kj for e, kj in zip(_ERR, k) if e))
    return a5, err


def step_rkf45(H: Callable, a, t, dt_suggest, tol, dt_min: float = DT_MIN, dt_max: float | None = None):
    """One accepted Fehlberg 4(5) step.

    Trial steps are retried with a smaller step until the embedded error
    estimate is at most ``tol * max(1, |a|)``. Returns
    ``(a_new, dt_used, dt_next, rejected)``.
    """
    dt = dt_suggest
    rejected = 0
    scale = tol * max(1.0, float(np.linalg.norm(a)))
    while True:
        if dt < dt_min:
            raise PropagationError(f"step size {dt:.3g} fell below dt_min={dt_min:g} at t={t:.6g}")
        a_new, err = _fehlberg_trial(H, a, t, dt)
        factor = 4.0 if err == 0 else min(4.0, max(0.25, 0.9 * (scale / err) ** 0.2))
        if err <= scale:
            dt_next = dt * factor
            if dt_max is not None:
                dt_next = min(dt_next, dt_max)
            return a_new, dt, dt_next, rejected
        rejected += 1
        dt = dt * factor


def step_diagonalization_adaptive(H: Callable, a, t, dt_suggest, tol, dt_min: float = DT_MIN,
                                  dt_max: float | None = None):
    """Step doubling with midpoint exponentials.

    One step of ``dt`` is compared with two steps of ``dt/2``; ``dt`` is
    halved until they differ by at most ``tol``. The two-half-step result is
    kept. Returns ``(a_new, dt_used, dt_next, rejected)``.
    """
    dt = dt_suggest
    rejected = 0
    while True:
        if dt < dt_min:
            raise PropagationError(f"step size {dt:.3g} fell below dt_min={dt_min:g} at t={t:.6g}")
        full = step_diagonalization(H(t + 0.5 * dt), a, dt)
        half = step_diagonalization(H(t + 0.25 * dt), a, 0.5 * dt)
        half = step_diagonalization(H(t + 0.75 * dt), half, 0.5 * dt)
        err = float(np.linalg.norm(full - half))
        if err <= tol:
            grow = 2.0 if err == 0 else min(2.0, max(1.0, 0.9 * (tol / err) ** (1 / 3)))
            dt_next = dt * grow
            if dt_max is not None:
                dt_next = min(dt_next, dt_max)
            return half, dt, dt_next, rejected
        rejected += 1
        dt *= 0.5


# -- batched step matrices -------------------------------------------------------------

def _step_matrices(method: str, H: Callable, t: np.ndarray, dt: float, bounds_kind: str, shift):
    """Propagator matrices for the fixed steps starting at times ``t``."""
    N = t.size
    Vm = H(t + 0.5 * dt) - shift[:, None, None] * np.eye(H(t[:1]).shape[-1])
    n = Vm.shape[-1]
    eye = np.eye(n)
    if method == "crank_nicolson":
        half = 0.5j * dt * Vm
        return np.linalg.solve(eye + half, eye - half)
    if method == "diagonalization":
        w, U = np.linalg.eigh(Vm)
        return (U * np.exp(-1j * w * dt)[:, None, :]) @ np.swapaxes(U, 1, 2)
    if method == "chebyshev":
        if bounds_kind == "exact":
            w = np.linalg.eigvalsh(Vm)
            lo, hi = w[:, 0], w[:, -1]
        else:
            d = np.diagonal(Vm, axis1=1, axis2=2)
            r = np.sum(np.abs(Vm), axis=2) - np.abs(d)
            lo, hi = np.min(d - r, axis=1), np.max(d + r, axis=1)
        c, dH = 0.5 * (hi + lo), 0.5 * (hi - lo)
        alpha = dH * dt
        K = chebyshev_order(float(alpha.max()))
        coef = jv(np.arange(K)[None, :], alpha[:, None]) * (-1j) ** np.arange(K)
        coef[:, 1:] *= 2.0
        safe = np.where(dH > 0, dH, 1.0)
        Vn = (Vm - c[:, None, None] * eye) / safe[:, None, None]
        Vn[dH <= 0] = 0.0
        coef[dH <= 0] = 0.0
        coef[dH <= 0, 0] = 1.0
        T_prev = np.broadcast_to(eye, Vm.shape).astype(complex)
        T_cur = Vn.astype(complex)
        out = coef[:, 0, None, None] * T_prev + coef[:, 1, None, None] * T_cur
        for k in range(2, K):
            T_prev, T_cur = T_cur, 2.0 * (Vn @ T_cur) - T_prev
            out += coef[:, k, None, None] * T_cur
        return np.exp(-1j * c * dt)[:, None, None] * out
    if method == "rk4":
        V0 = H(t) - shift[:, None, None] * eye
        V1 = H(t + dt) - shift[:, None, None] * eye
        M = np.broadcast_to(eye, Vm.shape).astype(complex)
        k1 = -1j * V0 @ M
        k2 = -1j * Vm @ (M + 0.5 * dt * k1)
        k3 = -1j * Vm @ (M + 0.5 * dt * k2)
        k4 = -1j * V1 @ (M + dt * k3)
        return M + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    raise ValueError(f"method {method!r} has no batched form")


def _chain_product(M: np.ndarray) -> np.ndarray:
    """M[-1] @ ... @ M[0] by pairwise reduction."""
    while M.shape[0] > 1:
        if M.shape[0] % 2:
            M = np.concatenate([M, np.eye(M.shape[-1])[None].astype(M.dtype)])
        M = M[1::2] @ M[0::2]
    return M[0]


# -- driver ----------------------------------------------------------------------------

@dataclass
class Propagation:
    """Outcome of :func:`propagate`."""

    amplitudes: np.ndarray
    times: np.ndarray
    probs: np.ndarray
    steps: int = 0
    rejected: int = 0
    shifts: int = 0
    max_norm_error: float = 0.0
    extra: dict = field(default_factory=dict)


def _decimate(times, probs, limit):
    if len(times) <= limit:
        return np.asarray(times), np.asarray(probs)
    idx = np.unique(np.linspace(0, len(times) - 1, limit).round().astype(int))
    return np.asarray(times)[idx], np.asarray(probs)[idx]


class _Shift:
    """Constant preconditioning shift, refreshed when the bounds drift by > 10 %."""

    def __init__(self, kind: str, enabled: bool):
        self.kind = kind
        self.enabled = enabled
        self.bounds: SpectralBounds | None = None
        self.value = 0.0
        self.refreshes = 0

    def update(self, V) -> float:
        if not self.enabled:
            return 0.0
        b = spectral_bounds(V, self.kind)
        if self.bounds is None:
            drift = math.inf
        else:
            width = max(self.bounds.e_max - self.bounds.e_min, 1e-12)
            drift = max(abs(b.e_min - self.bounds.e_min), abs(b.e_max - self.bounds.e_max)) / width
        if drift > 0.1:
            self.bounds = b
            self.value = b.center
            self.refreshes += 1
        return self.value


def propagate(H: Callable, a0, t0: float, t1: float, config: PropagatorConfig,
              max_history: int = 5000, restore_phase: bool = True) -> Propagation:
    """Integrate i da/dt = H(t) a from ``t0`` to ``t1``.

    Probabilities |a_i|^2 are recorded after every accepted step and
    decimated to at most ``max_history`` samples. Fixed-step runs use
    ``ceil((t1 - t0) / dt)`` equal steps. With ``restore_phase`` the global
    phase removed by preconditioning is put back on the final amplitudes.
    """
    a = np.array(a0, dtype=complex)
    if t1 <= t0:
        raise ValueError("t1 must exceed t0")
    if config.batch and not config.adaptive and config.method != "rkf45":
        return _propagate_batched(H, a, t0, t1, config, max_history, restore_phase)
    n = a.size
    eye = np.eye(n)
    shift = _Shift(config.eigen_bounds, config.precondition)
    phase = 0.0
    times = [t0]
    probs = [np.abs(a) ** 2]
    norm0 = float(np.linalg.norm(a))
    max_err = 0.0
    steps = rejected = 0
    t = t0
    span = t1 - t0

    if config.adaptive:
        dt = min(config.dt, span)
        while t < t1 - 1e-12 * span:
            s = shift.update(H(t))

            def Hs(tt, s=s):
                return H(tt) - s * eye

            dt = min(dt, t1 - t)
            if config.method == "rkf45":
                a, used, dt_next, rej = step_rkf45(Hs, a, t, dt, config.tol, config.dt_min)
            else:
                a, used, dt_next, rej = step_diagonalization_adaptive(Hs, a, t, dt, config.tol, config.dt_min)
            phase += s * used
            t += used
            steps += 1
            rejected += rej
            dt = dt_next
            p = np.abs(a) ** 2
            max_err = max(max_err, abs(math.sqrt(p.sum()) - norm0))
            times.append(t)
            probs.append(p)
    else:
        nsteps = max(1, int(math.ceil(span / config.dt - 1e-9)))
        dt = span / nsteps
        method = config.method
        for k in range(nsteps):
            t = t0 + k * dt
            Vm = H(t + 0.5 * dt)
            s = shift.update(Vm)
            if s:
                Vm = Vm - s * eye
            if method == "crank_nicolson":
                a = step_crank_nicolson(Vm, a, dt)
            elif method == "diagonalization":
                a = step_diagonalization(Vm, a, dt)
            elif method == "chebyshev":
                a = step_chebyshev(Vm, a, dt, spectral_bounds(Vm, config.eigen_bounds))
            else:
                a = step_rk4(lambda tt, s=s: H(tt) - s * eye if s else H(tt), a, t, dt)
            phase += s * dt
            p = np.abs(a) ** 2
            max_err = max(max_err, abs(math.sqrt(p.sum()) - norm0))
            times.append(t0 + (k + 1) * dt)
            probs.append(p)
        steps = nsteps
    if restore_phase and phase:
        a = a * np.exp(-1j * phase)
    times, probs = _decimate(times, probs, max_history)
    return Propagation(a, times, probs, steps, rejected, shift.refreshes, max_err)


def _propagate_batched(H, a, t0, t1, config, max_history, restore_phase):
    span = t1 - t0
    nsteps = max(1, int(math.ceil(span / config.dt - 1e-9)))
    dt = span / nsteps
    starts = t0 + dt * np.arange(nsteps)
    shift = np.zeros(nsteps)
    refreshes = 0
    if config.precondition:
        tracker = _Shift(config.eigen_bounds, True)
        Vm = H(starts + 0.5 * dt)
        for k in range(nsteps):
            shift[k] = tracker.update(Vm[k])
        refreshes = tracker.refreshes
    block = max(1, int(math.ceil(nsteps / max(max_history - 1, 1))))
    norm0 = float(np.linalg.norm(a))
    times = [t0]
    probs = [np.abs(a) ** 2]
    max_err = 0.0
    chunk = max(block, (20000 // block) * block)
    for c0 in range(0, nsteps, chunk):
        c1 = min(nsteps, c0 + chunk)
        M = _step_matrices(config.method, H, starts[c0:c1], dt, config.eigen_bounds, shift[c0:c1])
        for b0 in range(0, c1 - c0, block):
            b1 = min(c1 - c0, b0 + block)
            a = _chain_product(M[b0:b1]) @ a
            p = np.abs(a) ** 2
            max_err = max(max_err, abs(math.sqrt(p.sum()) - norm0))
            times.append(t0 + (c0 + b1) * dt)
            probs.append(p)
    phase = float(np.sum(shift) * dt)
    if restore_phase and phase:
        a = a * np.exp(-1j * phase)
    times, probs = _decimate(times, probs, max_history)
    return Propagation(a, times, probs, nsteps, 0, refreshes, max_err)
