"""Timing and accuracy study of the propagators on a fixed collision problem."""

from __future__ import annotations

import csv
import io
import math
import os
import platform
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .potmodel import AveragingScheme, DiabaticModel, synthetic
from .propagators import PropagatorConfig, propagate
from .scattering import CollisionHamiltonian
from .trajectory import AMU, CollisionGeometry, make_path

ERROR_BOUND = 0.02


def standard_configs() -> list[PropagatorConfig]:
    """The ten method/step combinations of the reference timing table."""
    P = PropagatorConfig
    return [
        P("crank_nicolson", dt=0.001),
        P("chebyshev", dt=0.001),
        P("rk4", dt=0.001),
        P("diagonalization", dt=0.2),
        P("crank_nicolson", dt=0.05, precondition=True),
        P("rk4", dt=0.1, precondition=True),
        P("diagonalization", dt=0.2, precondition=True),
        P("rkf45", dt=0.05, tol=1e-4, precondition=True, eigen_bounds="exact"),
        P("diagonalization", dt=0.05, tol=1e-4, precondition=True, eigen_bounds="exact"),
        P("rkf45", dt=0.05, tol=1e-4, precondition=True, eigen_bounds="gershgorin"),
    ]


@dataclass
class BenchCase:
    """A collision problem plus the configurations to time on it.

    ``reference`` defaults to batched Crank-Nicolson with a step ten times
    smaller than the finest fixed candidate step (error 100x smaller for a
    second-order method).
    """

    model: DiabaticModel
    geom: CollisionGeometry
    initial_channel: int = 1
    trajectory: str = "straight"
    configs: list[PropagatorConfig] = field(default_factory=standard_configs)
    reference: PropagatorConfig | None = None
    repetitions: int = 3
    min_total: float = 0.5
    scheme: AveragingScheme = AveragingScheme()

    def __post_init__(self):
        if self.repetitions < 3:
            raise ValueError("repetitions must be at least 3")
        if not 1 <= self.initial_channel <= self.model.n:
            raise ValueError(f"initial channel {self.initial_channel} outside 1..{self.model.n}")
        if self.reference is None:
            fixed = [c.dt for c in self.configs if not c.adaptive]
            dt = min(fixed) / 10 if fixed else 1e-4
            self.reference = PropagatorConfig("crank_nicolson", dt=dt, batch=True)


def standard_case(**kw) -> BenchCase:
    """Synthetic five-channel problem at b = 1, v0 = 0.5 a.u."""
    return BenchCase(synthetic(5, 7), CollisionGeometry(0.5, 1.0, 3.5036 * AMU), **kw)


@dataclass(frozen=True)
class BenchRow:
    label: str
    method: str
    precondition: bool
    eigen_bounds: str
    step_policy: str
    median: float
    spread: float
    max_rel_error: float
    max_norm_error: float
    steps: int
    probs: tuple = ()
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)

    @property
    def passed(self) -> bool:
        return not self.failed and self.max_rel_error <= ERROR_BOUND


@dataclass
class BenchReport:
    rows: list[BenchRow]
    reference_probs: np.ndarray
    reference: PropagatorConfig

    def fastest_passing(self) -> BenchRow | None:
        ok = [r for r in self.rows if r.passed]
        return min(ok, key=lambda r: r.median) if ok else None

    def row(self, label: str) -> BenchRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_csv(self, header_lines: list[str] = ()) -> str:
        buf = io.StringIO()
        for line in list(header_lines) + machine_info():
            buf.write(f"# {line}\n")
        buf.write(f"# reference: {self.reference.describe()}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config", "method", "preconditioned", "eigenvalues", "step_policy", "median_s",
                    "spread_s", "max_rel_error", "max_norm_error", "steps", "pass", "error"])
        for r in self.rows:
            w.writerow([r.label, r.method, r.precondition, r.eigen_bounds, r.step_policy, f"{r.median:.6f}",
                        f"{r.spread:.6f}", repr(r.max_rel_error), repr(r.max_norm_error), r.steps,
                        r.passed, r.error])
        return buf.getvalue()


def machine_info() -> list[str]:
    return [
        f"machine: {platform.machine()} {platform.processor() or 'unknown cpu'}",
        f"platform: {platform.platform()}",
        f"python: {platform.python_version()}, numpy {np.__version__}",
        f"cpus: {os.cpu_count()}",
    ]


def _relative_error(p, ref) -> float:
    p = np.asarray(p)
    return float(np.max(np.abs(p - ref) / np.where(ref > 0, ref, 1.0)))


def run_bench(case: BenchCase, log=None) -> BenchReport:
    """Time every config of ``case`` and compare final probabilities to the reference.

    Each config gets one warm-up run and at least ``case.repetitions``
    timed runs on the same precomputed trajectory; quick configs are
    repeated until about ``case.min_total`` seconds have been timed (at
    most 100 runs). A config that raises becomes a failed row.
    """
    reference = float(case.model.asymptotes[case.initial_channel - 1])
    path = make_path(case.trajectory, case.geom, case.model, case.scheme, reference)
    H = CollisionHamiltonian(case.model, path, reference)
    a0 = np.zeros(case.model.n, dtype=complex)
    a0[case.initial_channel - 1] = 1.0
    t0, t1 = -path.t_end, path.t_end
    ref = propagate(H, a0, t0, t1, case.reference)
    p_ref = np.abs(ref.amplitudes) ** 2
    rows = []
    for cfg in case.configs:
        label = cfg.describe()
        policy = "adaptive" if cfg.adaptive else "fixed"
        try:
            start = time.perf_counter()
            run = propagate(H, a0, t0, t1, cfg)
            warm = time.perf_counter() - start
            reps = max(case.repetitions, min(100, math.ceil(case.min_total / max(warm, 1e-9))))
            times = []
            for _ in range(reps):
                start = time.perf_counter()
                run = propagate(H, a0, t0, t1, cfg)
                times.append(time.perf_counter() - start)
            p = np.abs(run.amplitudes) ** 2
            row = BenchRow(label, cfg.method, cfg.precondition, cfg.eigen_bounds, policy,
                           float(np.median(times)), float(max(times) - min(times)),
                           _relative_error(p, p_ref), run.max_norm_error, run.steps, tuple(p))
        except Exception as exc:  # recorded, not raised
            row = BenchRow(label, cfg.method, cfg.precondition, cfg.eigen_bounds, policy,
                           float("nan"), float("nan"), float("nan"), float("nan"), 0, (),
                           f"{type(exc).__name__}: {exc}")
        if log is not None:
            log(row)
        rows.append(row)
    return BenchReport(rows, p_ref, case.reference)


def halved(config: PropagatorConfig) -> PropagatorConfig:
    """Same fixed-step config at half the step."""
    return replace(config, dt=config.dt / 2)
