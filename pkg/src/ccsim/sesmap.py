"""Mapping a collision Hamiltonian onto an emulated single-excitation-subspace processor.

The physical Hamiltonian h(t) (hartree) is shifted by its mean diagonal
c(t) and divided by a rescaling factor lambda(t) so every element of the
device Hamiltonian fits within the coupling range g_max. Device time obeys
d t_qc / dt = lambda(t). Device energies are quoted in h*MHz and device
times in ns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.constants import physical_constants
from scipy.ndimage import maximum_filter1d, uniform_filter1d

from .potmodel import AveragingScheme, DiabaticModel
from .propagators import PropagatorConfig, propagate
from .scattering import CollisionHamiltonian, CollisionResult, run_collision
from .trajectory import CollisionGeometry, make_path

HARTREE_MHZ = physical_constants["hartree-hertz relationship"][0] * 1e-6
AU_TIME_NS = physical_constants["atomic unit of time"][0] * 1e9
LAMBDA_MIN = 1e-6


@dataclass(frozen=True)
class DeviceSpec:
    """Ideal SES device: coupling range ``g_max`` (h*MHz) and measurement time ``t_meas`` (ns)."""

    g_max: float = 50.0
    t_meas: float = 100.0
    n_qubits: int | None = None

    def __post_init__(self):
        if not self.g_max > 0:
            raise ValueError("g_max must be positive")
        if not self.t_meas > 0:
            raise ValueError("t_meas must be positive")

    @property
    def g_max_hartree(self) -> float:
        return self.g_max / HARTREE_MHZ


@dataclass(frozen=True, eq=False)
class SesMapping:
    """Samples of c(t), lambda(t) and t_qc(t) on a physical time grid.

    Between samples lambda is linear in t, so t_qc is piecewise quadratic and
    the inverse map is solved exactly on each interval.
    """

    t: np.ndarray
    c: np.ndarray
    lam: np.ndarray
    t_qc: np.ndarray
    device: DeviceSpec
    elements: np.ndarray = field(repr=False)

    @property
    def total_time(self) -> float:
        """Device run length t_qc(t_end) - t_qc(t_start) in ns."""
        return float(self.t_qc[-1] - self.t_qc[0])

    @property
    def run_time(self) -> float:
        """t_qu = t_qc + t_meas (ns)."""
        return self.total_time + self.device.t_meas

    def lam_at(self, t):
        return np.interp(t, self.t, self.lam)

    def simulated_time(self, t):
        """t_qc(t) in ns."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t[0] - 1e-9) or np.any(t > self.t[-1] + 1e-9):
            raise ValueError(f"t outside mapped range [{self.t[0]}, {self.t[-1]}]")
        k = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, self.t.size - 2)
        x = t - self.t[k]
        slope = (self.lam[k + 1] - self.lam[k]) / (self.t[k + 1] - self.t[k])
        out = self.t_qc[k] + (self.lam[k] * x + 0.5 * slope * x * x) * AU_TIME_NS
        return float(out) if out.ndim == 0 else out

    def physical_time(self, tau):
        """Inverse of :meth:`simulated_time` (tau in ns)."""
        tau = np.asarray(tau, dtype=float)
        k = np.clip(np.searchsorted(self.t_qc, tau, side="right") - 1, 0, self.t.size - 2)
        d = (tau - self.t_qc[k]) / AU_TIME_NS
        lam0 = self.lam[k]
        slope = (self.lam[k + 1] - lam0) / (self.t[k + 1] - self.t[k])
        x = 2.0 * d / (lam0 + np.sqrt(np.maximum(lam0 ** 2 + 2.0 * slope * d, 0.0)))
        out = self.t[k] + x
        return float(out) if out.ndim == 0 else out


class DeviceHamiltonian:
    """Device-frame Hamiltonian (rad/ns) as a function of device time (ns)."""

    def __init__(self, h: Callable, mapping: SesMapping):
        self.h = h
        self.mapping = mapping
        self.n = mapping.elements.shape[-1]

    def __call__(self, tau):
        t = self.mapping.physical_time(tau)
        h = np.asarray(self.h(t))
        c = np.trace(h, axis1=-2, axis2=-1) / self.n
        lam = self.mapping.lam_at(t)
        eye = np.eye(self.n)
        if h.ndim == 2:
            return (h - c * eye) / (lam * AU_TIME_NS)
        return (h - c[:, None, None] * eye) / (lam * AU_TIME_NS)[:, None, None]


def rescale_hamiltonian(h: Callable, t, device: DeviceSpec, lam_min: float = LAMBDA_MIN,
                        smooth: int = 0):
    """Build the device Hamiltonian and the rescaling record.

    ``h`` is sampled at the increasing times ``t`` (a.u.), which must
    include 0. lambda = max(lam_min, max_ij |h_ij - c delta_ij| / g_max).
    With ``smooth`` > 1 lambda is replaced by a moving average of its
    running maximum over ``smooth`` samples, which never drops below the
    raw value. Returns ``(DeviceHamiltonian, SesMapping)``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("sample times must be increasing")
    hs = np.asarray(h(t), dtype=float)
    if not np.allclose(hs, np.swapaxes(hs, 1, 2), rtol=0, atol=1e-14):
        raise ValueError("Hamiltonian samples are not symmetric")
    n = hs.shape[-1]
    c = np.trace(hs, axis1=1, axis2=2) / n
    centred = hs - c[:, None, None] * np.eye(n)
    raw = np.maximum(lam_min, np.max(np.abs(centred), axis=(1, 2)) / device.g_max_hartree)
    lam = raw
    if smooth > 1:
        lam = uniform_filter1d(maximum_filter1d(raw, smooth, mode="nearest"), smooth, mode="nearest")
        lam = np.maximum(lam, raw)
    seg = 0.5 * (lam[1:] + lam[:-1]) * np.diff(t)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    zero = cum[0]
    if t[0] <= 0 <= t[-1]:
        k = min(np.searchsorted(t, 0.0, side="right") - 1, t.size - 2)
        x = -t[k]
        slope = (lam[k + 1] - lam[k]) / (t[k + 1] - t[k])
        zero = cum[k] + lam[k] * x + 0.5 * slope * x * x
    t_qc = (cum - zero) * AU_TIME_NS
    elements = centred / lam[:, None, None] * HARTREE_MHZ
    mapping = SesMapping(t, c, lam, t_qc, device, elements)
    return DeviceHamiltonian(h, mapping), mapping


def simulated_time(mapping: SesMapping, t):
    """Device time t_qc(t) in ns."""
    return mapping.simulated_time(t)


@dataclass(frozen=True, eq=False)
class SesResult:
    """Classical and device-frame probabilities for one collision."""

    classical: CollisionResult
    device_probs: np.ndarray
    device_times: np.ndarray
    device_history: np.ndarray
    mapping: SesMapping

    @property
    def relative_error(self) -> np.ndarray:
        ref = self.classical.final_probs
        return np.abs(self.device_probs - ref) / np.where(ref > 0, ref, 1.0)

    @property
    def t_qc(self) -> float:
        return self.mapping.total_time

    @property
    def t_qu(self) -> float:
        return self.mapping.run_time

    def table(self) -> list[tuple[str, float, float, float]]:
        """Rows (label, classical P_if, SES P_if, relative error %)."""
        i = self.classical.initial_channel
        return [(f"P{i}{f + 1}", float(pc), float(pd), 100.0 * float(err))
                for f, (pc, pd, err) in enumerate(zip(self.classical.final_probs, self.device_probs,
                                                      self.relative_error))]


DEVICE_CONFIG = PropagatorConfig("diagonalization", dt=0.05, tol=1e-9)


def run_ses(model: DiabaticModel, geom: CollisionGeometry, initial_channel: int = 1,
            device: DeviceSpec = DeviceSpec(), config: PropagatorConfig | None = None,
            device_config: PropagatorConfig = DEVICE_CONFIG, trajectory: str = "straight",
            scheme: AveragingScheme = AveragingScheme(), samples: int = 20001,
            lam_min: float = LAMBDA_MIN, smooth: int = 0) -> SesResult:
    """Run the collision classically and in the emulated device frame.

    Both runs cover the same trajectory interval; the device run integrates
    the rescaled Hamiltonian over device time with ``device_config``
    (steps in ns).
    """
    if device.n_qubits is not None and device.n_qubits != model.n:
        raise ValueError(f"device has {device.n_qubits} qubits, model has {model.n} channels")
    config = config or PropagatorConfig("diagonalization", dt=0.05, tol=1e-9)
    classical = run_collision(model, geom, initial_channel, trajectory, config, scheme, max_extensions=0)
    reference = float(model.asymptotes[initial_channel - 1])
    path = make_path(trajectory, geom, model, scheme, reference)
    h = CollisionHamiltonian(model, path, reference)
    if samples % 2 == 0:
        samples += 1
    t = np.linspace(-path.t_end, path.t_end, samples)
    H_dev, mapping = rescale_hamiltonian(h, t, device, lam_min, smooth)
    a0 = np.zeros(model.n, dtype=complex)
    a0[initial_channel - 1] = 1.0
    run = propagate(H_dev, a0, float(mapping.t_qc[0]), float(mapping.t_qc[-1]), device_config)
    return SesResult(classical, np.abs(run.amplitudes) ** 2, run.times, run.probs, mapping)


def comparison_lines(result: SesResult) -> list[str]:
    """Comparison table laid out as probability / classical / SES / relative error."""
    out = ["Probability,Classical Simulation,SES simulation,Relative Error (%)"]
    for label, pc, pd, err in result.table():
        out.append(f"{label},{pc:.4e},{pd:.4e},{err:.3f}")
    return out
