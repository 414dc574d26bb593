"""Experiment configuration and the convergence-study runner.

A configuration is a flat ``key = value`` text file. Lists are comma
separated, ``#`` starts a comment and unknown keys are rejected. Each
(N, seed) pair is one run; a run that raises is recorded as a ``failure``
row and the study moves on.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import DEFAULT_FIELD, frame_coefficients, manufactured_field
from .geometry import NeighborIndex, analytic_frame, get_manifold, sample_manifold
from .laplacian import KINDS, METHODS, assemble_covariant, assemble_operator, check_stencil_size
from .metrics import fit_slope, forward_error, inverse_error, projection_error, solution_error
from .operators import eigenvalues, stabilize
from .pde import EvolutionProblem, TimeStepper, integrate, manufactured_forcing, solve_screened_poisson
from .tangents import FrameField, estimate_frames

log = logging.getLogger(__name__)

TASKS = ("projection", "forward", "poisson", "eig", "diffusion", "burgers")
FRAME_SOURCES = ("analytic", "estimated")
ERROR_METRICS = ("projection", "forward", "inverse", "solution")
REPORT_COLUMNS = ("manifold", "method", "kind", "l", "K", "N", "seed", "metric", "value", "seconds")


class ConfigError(ValueError):
    pass


def _int_list(s):
    return [int(v) for v in str(s).replace(" ", "").split(",") if v]


def _opt_int(s):
    return None if str(s).lower() in ("", "none") else int(s)


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass
class ExperimentConfig:
    """One convergence study.

    l_manifold defaults to l_field for static tasks and to 6 for the
    time-dependent ones; frame_degree defaults to l_field.
    """

    manifold: str = "torus9"
    N: list = field(default_factory=lambda: [1600, 3200, 6400])
    seeds: list = field(default_factory=lambda: [0])
    K: int = 50
    l_field: int = 3
    l_manifold: int | None = None
    frame_degree: int | None = None
    method: str = "intrinsic"
    kind: str = "bochner"
    frames: str = "estimated"
    task: str = "forward"
    field: str | None = None
    a: float = 1.0
    nu: float = 0.1
    dt: float = 1e-4
    t_end: float = 0.05
    stepper: str = "rk2"
    stabilize: bool = True
    eig_count: int = 8
    eig_mode: str = "auto"
    output: str | None = None
    parallel: int = 0

    _PARSERS = {
        "manifold": str, "N": _int_list, "seeds": _int_list, "K": int, "l_field": int,
        "l_manifold": _opt_int, "frame_degree": _opt_int, "method": str, "kind": str, "frames": str,
        "task": str, "field": lambda s: None if s.lower() in ("", "none") else s, "a": float,
        "nu": float, "dt": float, "t_end": float, "stepper": str, "stabilize": _bool,
        "eig_count": int, "eig_mode": str, "output": lambda s: s or None, "parallel": int,
    }

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            m = get_manifold(self.manifold)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.N = [int(v) for v in np.atleast_1d(self.N)]
        self.seeds = [int(v) for v in np.atleast_1d(self.seeds)]
        if not self.N or any(b <= a for a, b in zip(self.N, self.N[1:])):
            raise ConfigError("N list must be non-empty and strictly increasing")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if min(self.N) <= self.K:
            raise ConfigError(f"every N must exceed K={self.K}")
        for name, allowed in (("method", METHODS), ("kind", KINDS), ("frames", FRAME_SOURCES),
                              ("task", TASKS), ("stepper", ("rk2", "bdf2", "cnab")),
                              ("eig_mode", ("auto", "dense", "extremal"))):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        try:
            check_stencil_size(self.K, self.l_field, m.d)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.l_field < 1:
            raise ConfigError("l_field must be >= 1")
        if self.task in ("forward", "poisson", "diffusion", "burgers"):
            name = self.field_name
            try:
                manufactured_field(name, m) if name else None
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            if name is None:
                raise ConfigError(f"no default manufactured field on {self.manifold!r}; set field")
        if self.dt <= 0 or self.t_end <= 0 or self.nu < 0:
            raise ConfigError("need dt > 0, t_end > 0 and nu >= 0")
        if self.task == "projection" and self.frames != "estimated":
            raise ConfigError("the projection task measures estimated frames")

    @property
    def field_name(self):
        if self.field:
            return self.field
        if self.task == "burgers":
            return "burgers" if self.manifold in ("torus3", "torus9") else None
        return DEFAULT_FIELD.get(self.manifold)

    @property
    def manifold_degree(self):
        if self.l_manifold is not None:
            return self.l_manifold
        return 6 if self.task in ("diffusion", "burgers") else self.l_field

    @property
    def frames_degree(self):
        return self.l_field if self.frame_degree is None else self.frame_degree

    @classmethod
    def from_mapping(cls, values):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        parsed = {}
        for k, v in values.items():
            try:
                parsed[k] = cls._PARSERS[k](v) if isinstance(v, str) else v
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {exc}") from None
        return cls(**parsed)

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        with open(path) as fh:
            text = fh.read()
        try:
            parser.read_string("[study]\n" + text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        return cls.from_mapping(dict(parser["study"]))

    def to_text(self):
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            out.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(out) + "\n"


@dataclass
class ReportRow:
    manifold: str
    method: str
    kind: str
    l: int
    K: int
    N: int
    seed: int
    metric: str
    value: float
    seconds: float


@dataclass
class ErrorReport:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    eigen: dict = field(default_factory=dict)

    def values(self, metric):
        """{N: [per-seed values]} for one metric, failures excluded."""
        out = {}
        for r in self.rows:
            if r.metric == metric and np.isfinite(r.value):
                out.setdefault(r.N, []).append(r.value)
        return dict(sorted(out.items()))

    def metrics(self):
        return sorted({r.metric for r in self.rows if r.metric != "failure"})

    def slope(self, metric):
        """(slope, stderr) over N, or None when fewer than 3 N values have data."""
        vals = self.values(metric)
        if len(vals) < 3 or any(min(v) <= 0 for v in vals.values()):
            return None
        return fit_slope(list(vals), list(vals.values()))

    def summary(self, metric):
        """Rows of (N, mean, std over seeds)."""
        return [(N, float(np.mean(v)), float(np.std(v))) for N, v in self.values(metric).items()]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([r.manifold, r.method, r.kind, r.l, r.K, r.N, r.seed, r.metric,
                            repr(float(r.value)), repr(float(r.seconds))])

    @classmethod
    def from_csv(cls, path):
        rows = []
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if tuple(header) != REPORT_COLUMNS:
                raise ValueError(f"unexpected report header {header}")
            for rec in rd:
                rows.append(ReportRow(rec[0], rec[1], rec[2], int(rec[3]), int(rec[4]), int(rec[5]),
                                      int(rec[6]), rec[7], float(rec[8]), float(rec[9])))
        return cls(rows=rows)

    def write_slopes(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "slope", "stderr", "n_values"])
            for m in self.metrics():
                if m not in ERROR_METRICS:
                    continue
                s = self.slope(m)
                if s is None:
                    w.writerow([m, "unavailable", "", len(self.values(m))])
                else:
                    w.writerow([m, repr(s[0]), repr(s[1]), len(self.values(m))])


def write_eig_csv(path, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "re", "im"])
        for k, v in enumerate(values):
            w.writerow([k, repr(float(v.real)), repr(float(v.imag))])


def build_frames(cloud, source, K, degree, index=None):
    if source == "analytic":
        return FrameField(analytic_frame(cloud.manifold, cloud.param_coords))
    return estimate_frames(cloud, K, degree, index=index)


def run_single(cfg, N, seed):
    """One (N, seed) run: returns (list of (metric, value, seconds), eigenvalues or None)."""
    m = get_manifold(cfg.manifold)
    cloud = sample_manifold(m, N, seed)
    index = NeighborIndex(cloud)
    out = []
    t0 = time.perf_counter()
    frames = build_frames(cloud, cfg.frames, cfg.K, cfg.frames_degree, index)
    t_frames = time.perf_counter() - t0
    if cfg.task == "projection":
        P_true = FrameField(analytic_frame(m, cloud.param_coords)).projections()
        out.append(("projection", projection_error(frames.projections(), P_true), t_frames))
        return out, None

    stencils = index.stencils(cfg.K)
    t0 = time.perf_counter()
    op = assemble_operator(cloud, frames, cfg.method, cfg.kind, cfg.K, cfg.l_field, cfg.manifold_degree,
                           stencils=stencils)
    t_asm = time.perf_counter() - t0

    if cfg.task == "eig":
        t0 = time.perf_counter()
        count = None if cfg.eig_mode == "dense" else cfg.eig_count
        spec = eigenvalues(op, count=count, mode=cfg.eig_mode)
        vals = spec.values
        if cfg.stabilize:
            _, shift = stabilize(op, spectrum=spec)
            vals = vals - shift
            out.append(("shift", shift, 0.0))
        t_eig = time.perf_counter() - t0
        out.append(("max_re", float(np.max(vals.real)), t_eig))
        for k, v in enumerate(vals[:cfg.eig_count]):
            out.append((f"eig{k}_re", float(v.real), t_asm))
            out.append((f"eig{k}_im", float(v.imag), t_asm))
        return out, vals

    truth = manufactured_field(cfg.field_name, m)
    if cfg.task == "forward":
        u = frame_coefficients(frames, truth.ambient(cloud))
        out.append(("forward", forward_error(op, frames, u, truth.laplacian(cloud, cfg.kind)), t_asm))
        return out, None

    if cfg.task == "poisson":
        u = frame_coefficients(frames, truth.ambient(cloud))
        out.append(("forward", forward_error(op, frames, u, truth.laplacian(cloud, cfg.kind)), t_asm))
        f = manufactured_forcing(truth, cloud, frames, cfg.kind, a=cfg.a)
        t0 = time.perf_counter()
        u_hat = solve_screened_poisson(op, f, cfg.a)
        out.append(("inverse", inverse_error(u_hat, frames, truth.ambient(cloud)), time.perf_counter() - t0))
        return out, None

    # time-dependent tasks
    if cfg.stabilize:
        op, shift = stabilize(op)
        out.append(("shift", shift, 0.0))
    cov = None
    if cfg.task == "burgers":
        cov = assemble_covariant(cloud, frames, cfg.method, cfg.K, cfg.l_field, cfg.manifold_degree,
                                 stencils=stencils)
    forcing = manufactured_forcing(truth, cloud, frames, cfg.kind, nu=cfg.nu, covariant=cov is not None)
    u0 = frame_coefficients(frames, truth.ambient(cloud, 0.0)).ravel()
    problem = EvolutionProblem(op, cfg.nu, forcing, u0, covariant_term=cov)
    t0 = time.perf_counter()
    traj = integrate(problem, TimeStepper(cfg.stepper, cfg.dt), cfg.t_end)
    t_run = time.perf_counter() - t0
    err = solution_error(traj.final, frames, truth.ambient(cloud, cfg.t_end))
    out.append(("solution", err, t_run))
    return out, None


def _run_pair(args):
    cfg, N, seed = args
    t0 = time.perf_counter()
    try:
        res, eig = run_single(cfg, N, seed)
        return N, seed, res, eig, None, time.perf_counter() - t0
    except Exception as exc:  # recorded, not raised: one bad run must not end the study
        log.warning("run N=%d seed=%d failed: %s", N, seed, exc)
        return N, seed, None, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0


def run_convergence_study(cfg):
    """Run every (N, seed) pair and return an ErrorReport; writes CSVs when cfg.output is set."""
    pairs = [(cfg, N, s) for N in cfg.N for s in cfg.seeds]
    if cfg.parallel and cfg.parallel > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as ex:
            results = list(ex.map(_run_pair, pairs))
    else:
        results = [_run_pair(p) for p in pairs]
    report = ErrorReport()
    base = dict(manifold=cfg.manifold, method=cfg.method, kind=cfg.kind, l=cfg.l_field, K=cfg.K)
    for N, seed, res, eig, err, secs in results:
        if err is not None:
            report.rows.append(ReportRow(**base, N=N, seed=seed, metric="failure", value=math.nan,
                                         seconds=secs))
            report.failures.append((N, seed, err))
            continue
        for metric, value, s in res:
            report.rows.append(ReportRow(**base, N=N, seed=seed, metric=metric, value=float(value),
                                         seconds=float(s)))
        if eig is not None:
            report.eigen[(N, seed)] = eig
    if cfg.output:
        os.makedirs(cfg.output, exist_ok=True)
        report.to_csv(os.path.join(cfg.output, "report.csv"))
        report.write_slopes(os.path.join(cfg.output, "slopes.csv"))
        with open(os.path.join(cfg.output, "config.txt"), "w") as fh:
            fh.write(cfg.to_text())
        for (N, seed), vals in report.eigen.items():
            name = "eig.csv" if len(report.eigen) == 1 else f"eig_N{N}_seed{seed}.csv"
            write_eig_csv(os.path.join(cfg.output, name), vals)
    return report
