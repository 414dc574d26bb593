"""Screened Poisson solves and method-of-lines time integration.

The semi-discrete system is u' = nu L u + f(t) - C(u), where L is an
assembled vector Laplacian and C an optional covariant-derivative term.
RK2 is the explicit midpoint rule. BDF2 and CNAB treat nu L implicitly and
f, C explicitly (second-order extrapolation for BDF2, Adams-Bashforth for
CNAB); both take their first step with RK2.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
import scipy.sparse as sps

from .operators import BlockOperator, SparseSolver, solve_shifted

log = logging.getLogger(__name__)


class BlowUpError(FloatingPointError):
    def __init__(self, step, t):
        self.step, self.t = step, t
        super().__init__(f"non-finite state at step {step} (t={t:.6g})")


def solve_screened_poisson(op, f, a=1.0, tol=1e-8):
    """u with (a I - L) u = f, in the operator's frames."""
    return solve_shifted(a, op, f, tol=tol)


class Stepper(str, Enum):
    RK2 = "rk2"
    BDF2 = "bdf2"
    CNAB = "cnab"


@dataclass
class TimeStepper:
    method: Stepper
    dt: float

    def __post_init__(self):
        self.method = Stepper(self.method)
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass
class EvolutionProblem:
    """u' = nu L u + f(t) - C(u) with u(0) = initial.

    forcing : callable t -> (dN,) array, or a constant array
    covariant_term : callable u -> (dN,) array, or None for the linear problem
    """

    operator: BlockOperator
    nu: float
    forcing: Callable | np.ndarray | None
    initial: np.ndarray
    covariant_term: Callable | None = None

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        self.initial = np.asarray(self.initial, dtype=float).ravel()
        if self.initial.size != self.operator.shape[0]:
            raise ValueError(f"initial state has {self.initial.size} entries, operator needs "
                             f"{self.operator.shape[0]}")

    def f(self, t):
        if self.forcing is None:
            return np.zeros_like(self.initial)
        if callable(self.forcing):
            return np.asarray(self.forcing(t), dtype=float).ravel()
        return np.asarray(self.forcing, dtype=float).ravel()

    def explicit(self, t, u):
        out = self.f(t)
        if self.covariant_term is not None:
            out = out - self.covariant_term(u)
        return out

    def rhs(self, t, u):
        return self.nu * self.operator.apply(u) + self.explicit(t, u)


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def at(self, t):
        i = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.states[i]

    @property
    def final(self):
        return self.states[-1]


class _ImplicitSolve:
    """Repeated solves with (c I - nu L), warm-started from the last solution."""

    def __init__(self, c, nu, op, tol=1e-8):
        n = op.shape[0]
        self.solver = SparseSolver(c * sps.identity(n, format="csr") - nu * op.tocsr(), tol)
        self.last = None

    def __call__(self, b):
        self.last = self.solver(b, x0=self.last)
        return self.last


def _rk2(problem, t, u, dt):
    k1 = problem.rhs(t, u)
    k2 = problem.rhs(t + 0.5 * dt, u + 0.5 * dt * k1)
    return u + dt * k2


def integrate(problem, stepper, t_end, snapshot_every=None, t0=0.0):
    """March from t0 to t_end and return the trajectory.

    ``snapshot_every`` is a time interval (a multiple of dt); by default only
    the initial and final states are kept.
    """
    dt = stepper.dt
    nsteps = int(round((t_end - t0) / dt))
    if nsteps < 1 or not np.isclose(t0 + nsteps * dt, t_end, rtol=0, atol=1e-9 * max(1.0, abs(t_end))):
        raise ValueError(f"dt={dt} does not divide the interval [{t0}, {t_end}]")
    every = None
    if snapshot_every is not None:
        every = int(round(snapshot_every / dt))
        if every < 1 or not np.isclose(every * dt, snapshot_every):
            raise ValueError("dt must divide the snapshot interval")
    u = problem.initial.copy()
    traj = Trajectory([t0], [u.copy()])
    method = stepper.method
    solve = None
    if method is Stepper.BDF2:
        solve = _ImplicitSolve(1.5 / dt, problem.nu, problem.operator)
    elif method is Stepper.CNAB:
        solve = _ImplicitSolve(1.0 / dt, 0.5 * problem.nu, problem.operator)
    u_prev = e_prev = None
    t = t0
    # overflow is caught below as a blow-up, so the warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, nsteps + 1):
            if method is Stepper.RK2 or step == 1:
                if method is not Stepper.RK2:
                    u_prev, e_prev = u, problem.explicit(t, u)
                u_new = _rk2(problem, t, u, dt)
            elif method is Stepper.BDF2:
                e_now = problem.explicit(t, u)
                # explicit terms extrapolated to t + dt; forcing evaluated there exactly
                ext = problem.f(t + dt)
                if problem.covariant_term is not None:
                    ext = ext - (2.0 * problem.covariant_term(u) - problem.covariant_term(u_prev))
                u_new = solve((4.0 * u - u_prev) / (2.0 * dt) + ext)
                u_prev, e_prev = u, e_now
            else:
                e_now = problem.explicit(t, u)
                b = u / dt + 0.5 * problem.nu * problem.operator.apply(u) + 1.5 * e_now - 0.5 * e_prev
                u_new = solve(b)
                u_prev, e_prev = u, e_now
            t = t0 + step * dt
            if not np.all(np.isfinite(u_new)):
                raise BlowUpError(step, t)
            u = u_new
            if (every is not None and step % every == 0) or step == nsteps:
                if traj.times[-1] != t:
                    traj.times.append(t)
                    traj.states.append(u.copy())
    return traj


def manufactured_forcing(truth, cloud, frames, op_kind="bochner", a=None, nu=None, covariant=False):
    """Forcing f = T^T F for a manufactured solution.

    Poisson (``a`` given): F = (a - Delta) U. Evolution (``nu`` given):
    F = U_t - nu Delta U (+ grad_U U when ``covariant``). Returns a callable
    t -> (dN,) for evolution problems and an array for Poisson.
    """
    from .fields import frame_coefficients

    if a is not None:
        F = a * truth.ambient(cloud) - truth.laplacian(cloud, op_kind)
        return frame_coefficients(frames, F).ravel()
    if nu is None:
        raise ValueError("give a (Poisson) or nu (evolution)")

    def f(t):
        F = truth.time_derivative(cloud, t) - nu * truth.laplacian(cloud, op_kind, t)
        if covariant:
            F = F + truth.covariant(cloud, t)
        return frame_coefficients(frames, F).ravel()

    return f


def write_snapshots(directory, trajectory, frames):
    """One CSV per snapshot plus a manifest listing the times."""
    from .fields import push_forward

    os.makedirs(directory, exist_ok=True)
    T = frames.T
    N, n, d = T.shape
    files = []
    for k, (t, u) in enumerate(zip(trajectory.times, trajectory.states)):
        name = f"snapshot_{k:05d}.csv"
        amb = push_forward(frames, u)
        data = np.column_stack([np.arange(N), u.reshape(N, d), amb])
        header = ",".join(["point_index"] + [f"u_{i + 1}" for i in range(d)] +
                          [f"ambient_u_{i + 1}" for i in range(n)])
        np.savetxt(os.path.join(directory, name), data, delimiter=",", header=header, comments="",
                   fmt=["%d"] + ["%.17g"] * (d + n))
        files.append({"file": name, "t": float(t)})
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump({"snapshots": files}, fh, indent=1)
    return files


class ScreenedPoissonSolver:
    """Solve (a I - L) u = f for a fixed assembled operator.

    Parameters
    ----------
    a : float
        Screening constant.
    tol : float
        Relative residual required of every solve.
    """

    def __init__(self, a=1.0, tol=1e-8):
        self.a = a
        self.tol = tol

    def fit(self, operator, y=None):
        self.operator_ = operator
        return self

    def predict(self, f):
        return solve_screened_poisson(self.operator_, f, self.a, self.tol)

    def residual(self, u, f):
        A = self.a * sps.identity(self.operator_.shape[0]) - self.operator_.tocsr()
        return float(np.max(np.abs(A @ u - f)) / max(np.max(np.abs(f)), 1e-300))
