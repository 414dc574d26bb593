"""Vector Laplacians and covariant derivatives through local Monge patches.

At each base point the manifold is written as a graph over its tangent
plane with no constant or linear terms, so the metric is the identity and
the Christoffel symbols vanish at the base. Only the quadratic graph
coefficients then enter the curvature couplings. Field components are
fitted in the same chart, combined into local weights, and finally mapped
from the non-orthogonal patch bases at the neighbors to the global frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gmls import MultiIndexSet, WeightScheme, build_local_fit, local_coordinates, monomial_gradients
from .operators import BlockOperator, chunks

KINDS = ("bochner", "l", "hodge")


class TransformError(np.linalg.LinAlgError):
    pass


@dataclass
class MongePatch:
    """Quadratic-and-higher graph of the manifold over the base tangent plane.

    theta : (..., K, d) local coordinates of the stencil
    frame : (..., n, d) base tangent frame
    idx : multi-indices with 2 <= |alpha| <= l
    coeffs : (..., m', c) graph coefficients, one column per graph component
    directions : (..., n, c) ambient direction of each graph component
        (the normal for a height function, e_s for the ambient graph)
    c : (..., c, d, d) symmetric quadratic coefficient matrices
    """

    theta: np.ndarray
    frame: np.ndarray
    idx: MultiIndexSet
    coeffs: np.ndarray
    directions: np.ndarray
    c: np.ndarray

    @property
    def hessians(self):
        """Second derivatives of every graph component at the base."""
        return 2.0 * self.c


def _quadratic_matrices(idx, coeffs):
    d = idx.d
    C = np.zeros(coeffs.shape[:-2] + (coeffs.shape[-1], d, d))
    for i in range(d):
        for k in range(i, d):
            a = [0] * d
            a[i] += 1
            a[k] += 1
            v = coeffs[..., idx.index(a), :]
            if i == k:
                C[..., i, i] = v
            else:
                C[..., i, k] = C[..., k, i] = 0.5 * v
    return C


def fit_monge_patch(stencil_points, frame, l, normal=None, scheme=WeightScheme.BASE_EMPHASIS):
    """Fit the Monge graph with the constant and linear monomials excluded.

    With ``normal`` given (surfaces in R^3) the scalar height along it is
    fitted; otherwise each ambient coordinate of x - x0 minus its tangential
    part is fitted.
    """
    X = np.asarray(stencil_points, dtype=float)
    frame = np.asarray(frame, dtype=float)
    D = X - X[..., :1, :]
    d = frame.shape[-1]
    theta = D @ frame
    idx = MultiIndexSet(d, l, lo=2)
    F = build_local_fit(theta, idx, scheme)
    if normal is not None:
        normal = np.asarray(normal, dtype=float)
        vals = np.einsum("...kn,...n->...k", D, normal)[..., None]
        dirs = normal[..., :, None]
    else:
        vals = D - theta @ np.swapaxes(frame, -1, -2)
        dirs = np.broadcast_to(np.eye(X.shape[-1]), frame.shape[:-2] + (X.shape[-1],) * 2)
    coeffs = F.phi_dagger @ vals
    return MongePatch(theta=theta, frame=frame, idx=idx, coeffs=coeffs, directions=dirs,
                      c=_quadratic_matrices(idx, coeffs))


def christoffel_derivatives(patch):
    """d_r Gamma^i_{kl} at the base, array indexed [..., r, i, k, l]."""
    Q = patch.hessians
    return np.einsum("...sir,...skl->...rikl", Q, Q)


def metric_at(patch, theta):
    """Induced metric g_ij of the fitted patch at local coordinates theta."""
    B = local_tangent_basis(patch, theta)
    return np.swapaxes(B, -1, -2) @ B


def local_tangent_basis(patch, theta):
    """Ambient vectors d_k of the fitted patch at ``theta``: shape (..., K, n, d).

    ``theta`` has shape (..., K, d) matching the patch batch.
    """
    theta = np.asarray(theta, dtype=float)
    G = monomial_gradients(theta, patch.idx)  # (..., K, m', d)
    slopes = np.einsum("...kmd,...mc->...kcd", G, patch.coeffs)  # (..., K, c, d)
    tilt = np.einsum("...nc,...kcd->...knd", patch.directions, slopes)
    return patch.frame[..., None, :, :] + tilt


def coupling_matrices(patch):
    """Zeroth-order coupling matrices of the three Laplacians at the base."""
    Q = patch.hessians
    QQ = np.einsum("...sik,...skl->...il", Q, Q)
    trQ = np.einsum("...sii->...s", Q)
    QtrQ = np.einsum("...s,...skl->...kl", trQ, Q)
    return {"bochner": QQ, "l": QQ + QtrQ, "hodge": 2.0 * QQ - QtrQ}


def _second_derivative_rows(fit):
    d = fit.idx.d
    rows = np.empty(fit.phi_dagger.shape[:-2] + (d, d, fit.phi_dagger.shape[-1]))
    for i in range(d):
        for k in range(i, d):
            a = [0] * d
            a[i] += 1
            a[k] += 1
            rows[..., i, k, :] = fit.derivative_row(a)
            rows[..., k, i, :] = rows[..., i, k, :]
    return rows


def local_weights(patch, fit, kind="bochner"):
    """Monge-frame weights w~ with shape (..., d, K, d).

    Entry [i, j, c] multiplies component c of the field at neighbor j (in the
    patch basis there) and contributes to output component i at the base.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    d = fit.idx.d
    H = _second_derivative_rows(fit)  # (..., d, d, K)
    lap = np.einsum("...kkj->...j", H)
    value = fit.derivative_row((0,) * d)
    C = coupling_matrices(patch)[kind]
    eye = np.eye(d)
    w = np.einsum("ic,...j->...ijc", eye, lap) + np.einsum("...ic,...j->...ijc", C, value)
    if kind == "l":
        w = w + np.einsum("...kcj->...kjc", H)
    return w


def bochner_local_weights(patch, fit):
    return local_weights(patch, fit, "bochner")


def l_laplacian_local_weights(patch, fit):
    return local_weights(patch, fit, "l")


def hodge_local_weights(patch, fit):
    return local_weights(patch, fit, "hodge")


def covariant_derivative_intrinsic(fit_u, u_values):
    """(grad_u u)^i = sum_k u~^k d_k u~^i at the base in the Monge frame.

    fit_u : LocalFit with uniform weights; u_values : (..., K, d) patch-frame
    components on the stencil.
    """
    coeffs = fit_u.coefficients(u_values)  # (..., m, d)
    idx = fit_u.idx
    u0 = coeffs[..., 0, :]
    grads = np.stack([coeffs[..., idx.index(idx.unit(k)), :] for k in range(idx.d)], axis=-2)
    return np.einsum("...k,...ki->...i", u0, grads)


def basis_change(patch, neighbor_frames, where=None):
    """Matrices (d^T d)^-1 d^T T(x_{0,j}) mapping global to patch components."""
    B = local_tangent_basis(patch, patch.theta)  # (..., K, n, d)
    BtB = np.swapaxes(B, -1, -2) @ B
    det = np.linalg.det(BtB)
    if np.any(det <= 1e-12):
        loc = tuple(np.argwhere(det <= 1e-12)[0])
        raise TransformError(f"patch tangent basis degenerate at neighbor slot {loc[-1]}"
                             + (f" of point {np.asarray(where)[loc[:-1]]}" if where is not None else ""))
    return np.linalg.solve(BtB, np.swapaxes(B, -1, -2) @ neighbor_frames)


def transform_weights_to_global(local, patch, neighbor_frames, where=None):
    """w^j = w~^j (d^T d)^-1 d^T T(x_{0,j}); returns (..., K, d, d) blocks."""
    M = basis_change(patch, neighbor_frames, where)
    return np.einsum("...ijc,...jcb->...jib", local, M)


def _stencil_geometry(cloud, frames, stencils, rows, l_manifold):
    S = cloud.points[stencils[rows]]
    T0 = frames.T[rows]
    normal = None
    if (cloud.d, cloud.n) == (2, 3):
        normal = np.cross(T0[:, :, 0], T0[:, :, 1])
    patch = fit_monge_patch(S, T0, l_manifold, normal=normal)
    return S, T0, patch


def assemble_intrinsic(cloud, frames, kind="bochner", K=50, l=3, l_manifold=None, index=None,
                       stencils=None, chunk=1024):
    """Sparse intrinsic vector Laplacian with K blocks per block row."""
    from .geometry import NeighborIndex

    l_manifold = l if l_manifold is None else l_manifold
    if stencils is None:
        stencils = (index or NeighborIndex(cloud)).stencils(K)
    N, d = cloud.N, cloud.d
    idx = MultiIndexSet(d, l)
    blocks = np.empty((N, K, d, d))
    for rows in chunks(N, chunk):
        S, T0, patch = _stencil_geometry(cloud, frames, stencils, rows, l_manifold)
        F = build_local_fit(patch.theta, idx, WeightScheme.BASE_EMPHASIS, where=rows)
        w = local_weights(patch, F, kind)
        blocks[rows] = transform_weights_to_global(w, patch, frames.T[stencils[rows]], where=rows)
    return BlockOperator(stencils, blocks, kind=kind, method="intrinsic")


def assemble_covariant_intrinsic(cloud, frames, K=50, l=3, l_manifold=None, index=None, stencils=None,
                                 chunk=1024):
    """First-derivative operators for grad_u u with uniform weights.

    Returns a :class:`~vgmls.operators.CovariantOperator` whose k-th block
    operator maps global components to d_k u~ at the base.
    """
    from .geometry import NeighborIndex
    from .operators import CovariantOperator

    l_manifold = l if l_manifold is None else l_manifold
    if stencils is None:
        stencils = (index or NeighborIndex(cloud)).stencils(K)
    N, d = cloud.N, cloud.d
    idx = MultiIndexSet(d, l)
    blocks = np.empty((d, N, K, d, d))
    for rows in chunks(N, chunk):
        S, T0, patch = _stencil_geometry(cloud, frames, stencils, rows, l_manifold)
        F = build_local_fit(patch.theta, idx, WeightScheme.UNIFORM, where=rows)
        M = basis_change(patch, frames.T[stencils[rows]], where=rows)  # (c, K, d, d)
        for k in range(d):
            row = F.derivative_row(idx.unit(k))  # (c, K)
            blocks[k][rows] = row[..., None, None] * M
    ops = [BlockOperator(stencils, blocks[k], kind="gradient", method="intrinsic") for k in range(d)]
    return CovariantOperator(ops, frames, mode="intrinsic")
