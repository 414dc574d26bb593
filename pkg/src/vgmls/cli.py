"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .fields import frame_coefficients, manufactured_field
from .geometry import GeometryError, NeighborIndex, get_manifold, read_cloud_csv, sample_manifold, \
    write_cloud_csv
from .gmls import RankDeficient
from .laplacian import assemble_covariant, assemble_operator, check_stencil_size
from .operators import SolverError, eigenvalues, read_triplets, stabilize, write_triplets
from .pde import BlowUpError, EvolutionProblem, TimeStepper, integrate, manufactured_forcing, \
    solve_screened_poisson, write_snapshots
from .study import ConfigError, ExperimentConfig, build_frames, run_convergence_study, write_eig_csv
from .tangents import read_frames_csv, write_frames_csv

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("vgmls")


def _load_cloud(args):
    m = get_manifold(args.manifold) if getattr(args, "manifold", None) else None
    d = args.d if getattr(args, "d", None) else (m.d if m else None)
    return read_cloud_csv(args.cloud, d=d, manifold=m)


def _load_frames(args, cloud):
    check_stencil_size(args.K, args.l, cloud.d)
    if args.frame_degree:
        check_stencil_size(args.K, args.frame_degree, cloud.d)
    if args.frames_file:
        return read_frames_csv(args.frames_file, cloud.d)
    if args.frames == "analytic" and (cloud.manifold is None or cloud.param_coords is None):
        raise ConfigError("analytic frames need --manifold and parameter columns in the cloud file")
    return build_frames(cloud, args.frames, args.K, args.frame_degree or args.l)


def _operator(args, cloud, frames):
    return assemble_operator(cloud, frames, args.method, args.kind, args.K, args.l, args.l_manifold)


def cmd_sample(args):
    m = get_manifold(args.manifold)
    cloud = sample_manifold(m, args.N, args.seed)
    write_cloud_csv(args.out, cloud)
    print(f"wrote {cloud.N} points on {m.name} to {args.out}")


def cmd_frames(args):
    cloud = _load_cloud(args)
    frames = _load_frames(args, cloud)
    write_frames_csv(args.out, frames)
    if frames.unreliable is not None and frames.unreliable.any():
        log.warning("%d points have a weak singular-value gap", int(frames.unreliable.sum()))
    print(f"wrote frames for {cloud.N} points to {args.out}")


def cmd_assemble(args):
    cloud = _load_cloud(args)
    op = _operator(args, cloud, _load_frames(args, cloud))
    write_triplets(args.out, op)
    print(f"wrote {op.kind} operator ({op.shape[0]}x{op.shape[1]}) to {args.out}")


def _operator_from_args(args):
    cloud = _load_cloud(args)
    frames = _load_frames(args, cloud)
    if args.operator:
        return cloud, frames, read_triplets(args.operator, cloud.d)
    return cloud, frames, _operator(args, cloud, frames)


def cmd_eig(args):
    _, _, op = _operator_from_args(args)
    spec = eigenvalues(op, count=args.count, mode=args.mode)
    vals = spec.values
    if args.stabilize:
        _, shift = stabilize(op, spectrum=spec)
        vals = vals - shift
    write_eig_csv(args.out, vals)
    print(f"wrote {len(vals)} eigenvalues to {args.out}; max real part {np.max(vals.real):.6g}")


def cmd_poisson(args):
    cloud, frames, op = _operator_from_args(args)
    if args.rhs:
        f = np.loadtxt(args.rhs, delimiter=",", ndmin=2).ravel()
    else:
        truth = manufactured_field(args.field, cloud.manifold)
        f = manufactured_forcing(truth, cloud, frames, op.kind, a=args.a)
    u = solve_screened_poisson(op, f, args.a).reshape(cloud.N, cloud.d)
    np.savetxt(args.out, u, delimiter=",", fmt="%.17g")
    print(f"wrote solution to {args.out}")


def cmd_evolve(args):
    cloud, frames, op = _operator_from_args(args)
    op, shift = stabilize(op)
    if shift:
        log.info("operator shifted by %.3g", -shift)
    truth = manufactured_field(args.field, cloud.manifold)
    cov = None
    if args.burgers:
        cov = assemble_covariant(cloud, frames, args.method, args.K, args.l, args.l_manifold)
    forcing = manufactured_forcing(truth, cloud, frames, op.kind, nu=args.nu, covariant=cov is not None)
    u0 = frame_coefficients(frames, truth.ambient(cloud, 0.0))
    problem = EvolutionProblem(op, args.nu, forcing, u0, covariant_term=cov)
    traj = integrate(problem, TimeStepper(args.stepper, args.dt), args.t_end, snapshot_every=args.snapshot_every)
    write_snapshots(args.out, traj, frames)
    print(f"wrote {len(traj.times)} snapshots to {args.out}")


def cmd_study(args):
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
        if args.output:
            cfg.output = args.output
    else:
        keys = ("manifold", "N", "seeds", "K", "l_field", "l_manifold", "method", "kind", "frames",
                "task", "field", "a", "nu", "dt", "t_end", "stepper", "output", "parallel")
        values = {k: getattr(args, k) for k in keys if getattr(args, k) is not None}
        cfg = ExperimentConfig.from_mapping(values)
    report = run_convergence_study(cfg)
    for metric in report.metrics():
        for N, mean, std in report.summary(metric):
            print(f"{metric:>12s} N={N:<7d} mean={mean:.4e} std={std:.2e}")
        s = report.slope(metric) if metric in ("projection", "forward", "inverse", "solution") else None
        if metric in ("projection", "forward", "inverse", "solution"):
            print(f"{metric:>12s} slope " + ("unavailable" if s is None else f"{s[0]:.3f} +/- {s[1]:.3f}"))
    for N, seed, err in report.failures:
        print(f"run N={N} seed={seed} failed: {err}", file=sys.stderr)
    if cfg.output:
        print(f"report written to {os.path.join(cfg.output, 'report.csv')}")


def _add_operator_args(p, with_cloud=True):
    if with_cloud:
        p.add_argument("--cloud", required=True, help="point cloud CSV from `sample`")
        p.add_argument("--manifold", help="generating manifold (needed for analytic frames and fields)")
        p.add_argument("--d", type=int, help="intrinsic dimension when the cloud has no parameter columns")
    p.add_argument("--frames", choices=("analytic", "estimated"), default="estimated")
    p.add_argument("--frames-file", dest="frames_file", help="frames CSV from `frames`")
    p.add_argument("--frame-degree", dest="frame_degree", type=int)
    p.add_argument("--K", type=int, default=50)
    p.add_argument("--l", type=int, default=3)
    p.add_argument("--l-manifold", dest="l_manifold", type=int)
    p.add_argument("--method", choices=("intrinsic", "extrinsic"), default="intrinsic")
    p.add_argument("--kind", choices=("bochner", "l", "hodge"), default="bochner")


def build_parser():
    ap = argparse.ArgumentParser(prog="vgmls", description="GMLS vector Laplacians on point clouds")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample a point cloud")
    p.add_argument("--manifold", required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("frames", help="tangent frames of a cloud")
    _add_operator_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_frames)

    p = sub.add_parser("assemble", help="assemble a vector Laplacian and write triplets")
    _add_operator_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_assemble)

    for name, func, help_ in (("eig", cmd_eig, "eigenvalues of an operator"),
                              ("poisson", cmd_poisson, "screened Poisson solve"),
                              ("evolve", cmd_evolve, "time integration with a manufactured forcing")):
        p = sub.add_parser(name, help=help_)
        _add_operator_args(p)
        p.add_argument("--operator", help="triplet file from `assemble` instead of assembling")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
        if name == "eig":
            p.add_argument("--count", type=int)
            p.add_argument("--mode", choices=("auto", "dense", "extremal"), default="auto")
            p.add_argument("--no-stabilize", dest="stabilize", action="store_false")
        if name == "poisson":
            p.add_argument("--a", type=float, default=1.0)
            p.add_argument("--rhs", help="CSV of frame coefficients (N rows, d columns)")
            p.add_argument("--field", default=None)
        if name == "evolve":
            p.add_argument("--field", default=None)
            p.add_argument("--nu", type=float, default=0.1)
            p.add_argument("--dt", type=float, default=1e-4)
            p.add_argument("--t-end", dest="t_end", type=float, default=0.05)
            p.add_argument("--stepper", choices=("rk2", "bdf2", "cnab"), default="rk2")
            p.add_argument("--snapshot-every", dest="snapshot_every", type=float)
            p.add_argument("--burgers", action="store_true", help="include the covariant term")

    p = sub.add_parser("study", help="convergence study from a config file or flags")
    p.add_argument("--config")
    p.add_argument("--manifold")
    p.add_argument("--N")
    p.add_argument("--seeds")
    p.add_argument("--K")
    p.add_argument("--l-field", dest="l_field")
    p.add_argument("--l-manifold", dest="l_manifold")
    p.add_argument("--method")
    p.add_argument("--kind")
    p.add_argument("--frames")
    p.add_argument("--task")
    p.add_argument("--field")
    p.add_argument("--a")
    p.add_argument("--nu")
    p.add_argument("--dt")
    p.add_argument("--t-end", dest="t_end")
    p.add_argument("--stepper")
    p.add_argument("--output")
    p.add_argument("--parallel")
    p.set_defaults(func=cmd_study)
    return ap


def _default_field(args):
    from .fields import DEFAULT_FIELD

    if getattr(args, "field", "unset") is None and getattr(args, "func", None) in (cmd_poisson, cmd_evolve):
        if not args.manifold:
            raise ConfigError("a manufactured field needs --manifold")
        args.field = "burgers" if getattr(args, "burgers", False) else DEFAULT_FIELD.get(args.manifold)
        if args.field is None:
            raise ConfigError(f"no default field on {args.manifold!r}; pass --field")


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _default_field(args)
        args.func(args)
    except (SolverError, BlowUpError, RankDeficient, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, GeometryError, ValueError, KeyError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
