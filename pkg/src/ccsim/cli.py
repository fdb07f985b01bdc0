"""Command-line front end: ``ccsim {run,scan,xsec,ses,bench}``.

Run configuration is a flat ``section.key = value`` text file; see the
README for the full key list. Every CSV written starts with ``#`` header
lines holding the sha256 of the canonical configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchCase, run_bench, standard_configs
from .potmodel import AveragingScheme, DiabaticModel, ModelError, build_analytic, load_model
from .propagators import PropagationError, PropagatorConfig
from .scattering import (DEFAULT_CONFIG, cross_section_table, ehrenfest_relabel, impact_scan,
                         run_collision)
from .sesmap import DeviceSpec, run_ses, comparison_lines
from .trajectory import AMU, CollisionGeometry, TrajectoryError, make_path, write_path_csv

logger = logging.getLogger("ccsim")

EXIT_OK, EXIT_PHYSICS, EXIT_CONFIG = 0, 1, 2

# key -> (type, default); None default means "not set"
KEYS = {
    "potential.file": (str, None),
    "potential.kind": (str, None),
    "potential.n": (int, None),
    "potential.seed": (int, None),
    "potential.F1": (float, None),
    "potential.F2": (float, None),
    "potential.V12": (float, None),
    "potential.R_x": (float, None),
    "potential.delta_e": (float, None),
    "potential.coupling": (float, None),
    "potential.decay": (float, None),
    "potential.asym_tol": (float, 1e-6),
    "geometry.v0": ("floats", None),
    "geometry.b": ("floats", [1.0]),
    "geometry.mu": (float, None),
    "geometry.mu_amu": (float, None),
    "collision.initial_channel": (int, 1),
    "trajectory.kind": (str, "straight"),
    "trajectory.averaging": (str, "arithmetic"),
    "trajectory.r_start": (float, None),
    "propagator.method": (str, DEFAULT_CONFIG.method),
    "propagator.dt": (float, DEFAULT_CONFIG.dt),
    "propagator.tol": (float, DEFAULT_CONFIG.tol),
    "propagator.precondition": (bool, DEFAULT_CONFIG.precondition),
    "propagator.eigen_bounds": (str, DEFAULT_CONFIG.eigen_bounds),
    "propagator.batch": (bool, False),
    "scan.db": (float, 0.1),
    "scan.eps_b": (float, 1e-4),
    "scan.b_cap": (float, 50.0),
    "scan.refine": (float, 0.05),
    "device.g_max": (float, 50.0),
    "device.t_meas": (float, 100.0),
    "device.n_qubits": (int, None),
    "device.method": (str, "diagonalization"),
    "device.dt": (float, 0.05),
    "device.tol": (float, 1e-9),
    "device.smooth": (int, 0),
    "device.samples": (int, 20001),
    "bench.configs": (str, "standard"),
    "bench.repetitions": (int, 3),
    "output.dir": (str, "out"),
    "output.ehrenfest": (bool, False),
    "run.seed": (int, 0),
}
ANALYTIC_PARAMS = {
    "synthetic": ("n", "seed"),
    "landau_zener": ("F1", "F2", "V12", "R_x"),
    "two_state": ("delta_e", "coupling", "decay"),
    "na_he": (),
}


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


def _parse_value(key: str, text: str):
    kind = KEYS[key][0]
    text = text.strip()
    try:
        if kind == "floats":
            vals = [float(x) for x in text.replace(",", " ").split()]
            if not vals:
                raise ValueError("empty list")
            return vals
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind in (int, float) and text.lower() in ("none", ""):
            return None
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def parse_config(text: str) -> dict:
    """Parse ``section.key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, val)
    return values


def _format(v) -> str:
    if isinstance(v, list):
        return " ".join(repr(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


@dataclass
class RunConfig:
    values: dict
    jobs: int = 1
    dump_trajectory: bool = False
    model: DiabaticModel | None = field(default=None, repr=False)

    def __getitem__(self, key):
        return self.values.get(key, KEYS[key][1])

    def canonical(self) -> str:
        """Sorted key = value lines for every explicitly set key except the output directory."""
        return "\n".join(f"{k} = {_format(v)}" for k, v in sorted(self.values.items())
                         if k != "output.dir" and v is not None)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def header(self, command: str) -> list[str]:
        lines = [f"ccsim {__version__} {command}", f"config_sha256: {self.digest}"]
        return lines + [f"config: {line}" for line in self.canonical().splitlines()]

    @property
    def mu(self) -> float:
        if self["geometry.mu"] is not None and self["geometry.mu_amu"] is not None:
            raise ConfigError("set only one of geometry.mu and geometry.mu_amu")
        if self["geometry.mu_amu"] is not None:
            return self["geometry.mu_amu"] * AMU
        return self["geometry.mu"] if self["geometry.mu"] is not None else 1.0

    @property
    def v0(self) -> list[float]:
        if self["geometry.v0"] is None:
            raise ConfigError("geometry.v0 is required")
        return self["geometry.v0"]

    @property
    def scheme(self) -> AveragingScheme:
        try:
            return AveragingScheme.parse(self["trajectory.averaging"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def propagator(self) -> PropagatorConfig:
        return _config_or_raise(method=self["propagator.method"], dt=self["propagator.dt"],
                                tol=self["propagator.tol"], precondition=self["propagator.precondition"],
                                eigen_bounds=self["propagator.eigen_bounds"], batch=self["propagator.batch"])

    @property
    def device(self) -> DeviceSpec:
        try:
            return DeviceSpec(self["device.g_max"], self["device.t_meas"], self["device.n_qubits"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def device_propagator(self) -> PropagatorConfig:
        return _config_or_raise(method=self["device.method"], dt=self["device.dt"], tol=self["device.tol"])


def _config_or_raise(**kw) -> PropagatorConfig:
    try:
        return PropagatorConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_config(path: str | None, args) -> RunConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    values = parse_config(text)
    if args.out is not None:
        values["output.dir"] = args.out
    if args.seed is not None:
        values["run.seed"] = args.seed
    if getattr(args, "ehrenfest", False):
        values["output.ehrenfest"] = True
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    cfg = RunConfig(values, jobs=args.jobs, dump_trajectory=args.dump_trajectory)
    cfg.model = _build_model(cfg)
    ch = cfg["collision.initial_channel"]
    if not 1 <= ch <= cfg.model.n:
        raise ConfigError(f"collision.initial_channel={ch} outside 1..{cfg.model.n}")
    scheme = cfg.scheme
    if scheme.kind == "channel" and scheme.channel > cfg.model.n:
        raise ConfigError(f"averaging channel {scheme.channel} outside 1..{cfg.model.n}")
    if cfg["trajectory.kind"] not in ("straight", "curvilinear"):
        raise ConfigError(f"trajectory.kind must be straight or curvilinear, not {cfg['trajectory.kind']!r}")
    cfg.propagator  # validate early
    return cfg


def _build_model(cfg: RunConfig) -> DiabaticModel:
    source, kind = cfg["potential.file"], cfg["potential.kind"]
    if (source is None) == (kind is None):
        raise ConfigError("set exactly one of potential.file and potential.kind")
    if source is not None:
        if not Path(source).is_file():
            raise ConfigError(f"potential file not found: {source}")
        try:
            return load_model(source, cfg["potential.asym_tol"])
        except ModelError as exc:
            raise ConfigError(f"{source}: {exc}") from None
    if kind not in ANALYTIC_PARAMS:
        raise ConfigError(f"unknown potential.kind {kind!r}; choose from {sorted(ANALYTIC_PARAMS)}")
    params = {}
    for name in ANALYTIC_PARAMS[kind]:
        val = cfg[f"potential.{name}"]
        if name == "seed" and val is None:
            val = cfg["run.seed"]
        if val is not None:
            params[name] = val  # unset parameters keep the builder defaults
    stray = [k for k in cfg.values if k.startswith("potential.") and k.split(".", 1)[1]
             not in ANALYTIC_PARAMS[kind] + ("kind", "asym_tol")]
    if stray:
        raise ConfigError(f"keys {stray} do not apply to potential.kind={kind}")
    try:
        return build_analytic(kind, **params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"potential.kind={kind}: {exc}") from None


# -- output helpers --------------------------------------------------------------------

def _tag(x: float) -> str:
    return f"{x:g}".replace("-", "m")


def write_csv(path: Path, header: list[str], columns: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else repr(float(v)) for v in row) + "\n")
    return path


def _channel_cols(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{f}" for f in range(1, n + 1)]


# -- subcommands -----------------------------------------------------------------------

def cmd_run(cfg: RunConfig) -> list[Path]:
    """Propagate single collisions and write probability histories."""
    out = Path(cfg["output.dir"])
    model, ch, n = cfg.model, cfg["collision.initial_channel"], cfg.model.n
    header = cfg.header("run")
    written, summary = [], []
    for v0 in cfg.v0:
        for b in cfg["geometry.b"]:
            geom = CollisionGeometry(v0, b, cfg.mu)
            res = run_collision(model, geom, ch, cfg["trajectory.kind"], cfg.propagator, cfg.scheme,
                                cfg["trajectory.r_start"])
            tag = f"v{_tag(v0)}_b{_tag(b)}"
            written.append(write_csv(out / f"run_{tag}.csv", header + [f"v0: {v0!r}, b: {b!r}, mu: {cfg.mu!r}"],
                                     ["t"] + _channel_cols("P", n),
                                     (np.concatenate([[t], p]) for t, p in zip(res.times, res.history))))
            summary.append([v0, b, *res.final_probs, res.unitarity_error, str(res.converged), str(res.steps)])
            if cfg.dump_trajectory:
                reference = float(model.asymptotes[ch - 1])
                path = make_path(cfg["trajectory.kind"], geom, model, cfg.scheme, reference,
                                 cfg["trajectory.r_start"])
                dest = out / f"trajectory_{tag}.csv"
                write_path_csv(path, dest, "".join(f"# {h}\n" for h in header))
                written.append(dest)
    written.append(write_csv(out / "run_summary.csv", header,
                             ["v0", "b"] + _channel_cols("P", n) + ["unitarity_error", "converged", "steps"],
                             summary))
    return written


def _scans(cfg: RunConfig, header: list[str], out: Path):
    model, ch, n = cfg.model, cfg["collision.initial_channel"], cfg.model.n
    tables, written = [], []
    for v0 in cfg.v0:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            table = impact_scan(model, v0, ch, cfg.mu, cfg["trajectory.kind"], cfg.propagator, cfg.scheme,
                                db=cfg["scan.db"], eps_b=cfg["scan.eps_b"], b_cap=cfg["scan.b_cap"],
                                refine=cfg["scan.refine"], jobs=cfg.jobs)
        for w in caught:
            print(f"warning: v0={v0:g}: {w.message}", file=sys.stderr)
        tables.append(table)
        meta = f"v0: {v0!r}, b_max: {table.b_max!r}, truncated: {table.truncated}"
        written.append(write_csv(out / f"opacity_v{_tag(v0)}.csv", header + [meta],
                                 ["b"] + _channel_cols("P", n),
                                 (np.concatenate([[b], p]) for b, p in zip(table.b, table.probs))))
    return tables, written


def cmd_scan(cfg: RunConfig) -> list[Path]:
    """Scan the impact parameter and write opacity functions."""
    return _scans(cfg, cfg.header("scan"), Path(cfg["output.dir"]))[1]


def cmd_xsec(cfg: RunConfig) -> list[Path]:
    """Integrate opacity functions into cross sections."""
    out = Path(cfg["output.dir"])
    header = cfg.header("xsec")
    tables, written = _scans(cfg, header, out)
    n = cfg.model.n
    xs = cross_section_table(tables, cfg.model.asymptotes)
    rows = [[v, k, ke, *s] for v, k, ke, s in zip(xs.v0, xs.kinetic, xs.kinetic_ev, xs.sigma)]
    written.append(write_csv(out / "xsec.csv", header + ["sigma in bohr^2, kinetic energy in hartree and eV"],
                             ["v0", "K", "K_eV"] + _channel_cols("sigma", n), rows))
    if cfg["output.ehrenfest"]:
        rel = ehrenfest_relabel(xs)
        rows = []
        for f in sorted(rel.relabeled):
            energy, sigma = rel.relabeled[f]
            rows += [[str(f), e, e * (xs.kinetic_ev[0] / xs.kinetic[0]), s] for e, s in zip(energy, sigma)]
        written.append(write_csv(out / "xsec_ehrenfest.csv", header + ["symmetrized energy axis per transition"],
                                 ["final_channel", "E", "E_eV", "sigma"], rows))
    return written


def cmd_ses(cfg: RunConfig) -> list[Path]:
    """Map a collision onto an emulated SES device and compare."""
    out = Path(cfg["output.dir"])
    header = cfg.header("ses")
    model, ch, n = cfg.model, cfg["collision.initial_channel"], cfg.model.n
    if len(cfg.v0) != 1 or len(cfg["geometry.b"]) != 1:
        raise ConfigError("ses takes a single geometry.v0 and geometry.b")
    geom = CollisionGeometry(cfg.v0[0], cfg["geometry.b"][0], cfg.mu)
    res = run_ses(model, geom, ch, cfg.device, cfg.propagator, cfg.device_propagator, cfg["trajectory.kind"],
                  cfg.scheme, samples=cfg["device.samples"], smooth=cfg["device.smooth"])
    m = res.mapping
    iu = np.triu_indices(n)
    written = [
        write_csv(out / "ses_mapping.csv", header, ["t", "t_qc_ns", "c", "lambda"], zip(m.t, m.t_qc, m.c, m.lam)),
        write_csv(out / "ses_hamiltonian.csv", header + ["device Hamiltonian elements in h*MHz"],
                  ["t_qc_ns"] + [f"H{i + 1}{j + 1}" for i, j in zip(*iu)],
                  (np.concatenate([[tq], e[iu]]) for tq, e in zip(m.t_qc, m.elements))),
        write_csv(out / "ses_probs.csv", header, ["t_qc_ns"] + _channel_cols("P", n),
                  (np.concatenate([[t], p]) for t, p in zip(res.device_times, res.device_history))),
    ]
    table = out / "ses_table.csv"
    with open(table, "w") as fh:
        for line in header + [f"t_qc_ns: {res.t_qc!r}", f"t_qu_ns: {res.t_qu!r}"]:
            fh.write(f"# {line}\n")
        fh.write("\n".join(comparison_lines(res)) + "\n")
    written.append(table)
    return written


def _bench_configs(text: str) -> list[PropagatorConfig]:
    configs = []
    for item in (s.strip() for s in text.split(";")):
        if not item:
            continue
        if item == "standard":
            configs += standard_configs()
            continue
        method, *opts = (s.strip() for s in item.split(","))
        kw = {"method": method}
        for opt in opts:
            k, _, v = opt.partition("=")
            if k in ("dt", "tol", "dt_min"):
                kw[k] = float(v)
            elif k == "precondition":
                kw[k] = v.lower() in ("1", "true", "yes", "on")
            elif k == "eigen_bounds":
                kw[k] = v
            else:
                raise ConfigError(f"bench.configs: unknown option {k!r}")
        configs.append(_config_or_raise(**kw))
    if not configs:
        raise ConfigError("bench.configs is empty")
    return configs


def cmd_bench(cfg: RunConfig) -> list[Path]:
    """Time every propagator configuration against a reference."""
    out = Path(cfg["output.dir"])
    if len(cfg.v0) != 1 or len(cfg["geometry.b"]) != 1:
        raise ConfigError("bench takes a single geometry.v0 and geometry.b")
    try:
        case = BenchCase(cfg.model, CollisionGeometry(cfg.v0[0], cfg["geometry.b"][0], cfg.mu),
                         cfg["collision.initial_channel"], cfg["trajectory.kind"],
                         _bench_configs(cfg["bench.configs"]), repetitions=cfg["bench.repetitions"],
                         scheme=cfg.scheme)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = run_bench(case, log=lambda r: logger.info("%s: %.4f s, error %.3g", r.label, r.median,
                                                         r.max_rel_error))
    out.mkdir(parents=True, exist_ok=True)
    dest = out / "bench.csv"
    dest.write_text(report.to_csv(cfg.header("bench")))
    return [dest]


COMMANDS = {"run": cmd_run, "scan": cmd_scan, "xsec": cmd_xsec, "ses": cmd_ses, "bench": cmd_bench}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccsim", description="Semiclassical coupled-channel collision simulator.")
    parser.add_argument("--version", action="version", version=f"ccsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.strip().splitlines()[0])
        p.add_argument("--config", "-c", help="run configuration file")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for impact-parameter scans")
        p.add_argument("--seed", type=int, help="seed for the synthetic model (overrides run.seed)")
        p.add_argument("--ehrenfest", action="store_true", help="also write symmetrized-energy cross sections")
        p.add_argument("--dump-trajectory", action="store_true", help="write R(t) for every run")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "bench":
        args.jobs = 1  # timings need a quiet machine
    try:
        cfg = build_config(args.config, args)
    except ConfigError as exc:
        print(f"ccsim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        written = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"ccsim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrajectoryError, PropagationError, ModelError, ValueError, ArithmeticError) as exc:
        print(f"ccsim: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    for path in written:
        print(os.fspath(path))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
