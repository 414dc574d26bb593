"""Error metrics and log-log slope fitting."""

from __future__ import annotations

import numpy as np

from .fields import push_forward


def _max_norm(diff):
    return float(np.max(np.linalg.norm(diff, axis=1)))


def forward_error(op, frames_est, u_coeffs, lap_true_ambient):
    """max_i |T^_i (L u)_i - T Delta u(x_i)|_2 over all points."""
    Lu = op.apply(np.asarray(u_coeffs, dtype=float).ravel())
    return _max_norm(push_forward(frames_est, Lu) - lap_true_ambient)


def inverse_error(u_hat, frames_est, u_true_ambient):
    """max_i |T^_i u^_i - U(x_i)|_2."""
    return _max_norm(push_forward(frames_est, u_hat) - u_true_ambient)


def solution_error(u_hat, frames_est, u_true_ambient):
    """Time-dependent solution error at one snapshot; same norm as the inverse error."""
    return inverse_error(u_hat, frames_est, u_true_ambient)


def projection_error(P_est, P_true):
    """max_i |P^_i - P_i|_F."""
    return float(np.max(np.linalg.norm(np.asarray(P_est) - np.asarray(P_true), axis=(1, 2))))


def fit_slope(Ns, errors):
    """Least-squares slope of mean log-error against log N.

    ``errors`` is either one value per N or a list of per-seed values per N.
    Returns (slope, standard error); the standard error is nan with exactly
    two distinct N values.
    """
    Ns = np.asarray(Ns, dtype=float)
    if len(np.unique(Ns)) < 2:
        raise ValueError("need at least two distinct N values for a slope")
    y = np.array([np.mean(np.log(np.atleast_1d(e))) for e in errors])
    x = np.log(Ns)
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(coef[0])
    dof = len(x) - 2
    if dof <= 0:
        return slope, float("nan")
    resid = y - A @ coef
    s2 = float(resid @ resid) / dof
    se = float(np.sqrt(s2 / np.sum((x - x.mean()) ** 2)))
    return slope, se
