"""Tangent-frame estimation from raw point clouds.

A coarse frame comes from the leading singular vectors of each stencil's
difference matrix. It is refined by a polynomial fit: for surfaces in R^3
the height over the coarse plane is fitted and its slope tilts the coarse
tangents; in general every ambient coordinate is fitted over the coarse
local coordinates and the linear coefficients give the tangents directly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .geometry import NeighborIndex, PointCloud, orthonormalize
from .gmls import MultiIndexSet, WeightScheme, build_local_fit

GAP_THRESHOLD = 0.9


@dataclass
class FrameField:
    """One orthonormal (n, d) tangent basis per point; no alignment between points."""

    T: np.ndarray
    normals: np.ndarray | None = None
    unreliable: np.ndarray | None = None

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=float)
        if self.T.ndim != 3:
            raise ValueError("frames must have shape (N, n, d)")

    @property
    def N(self):
        return self.T.shape[0]

    @property
    def n(self):
        return self.T.shape[1]

    @property
    def d(self):
        return self.T.shape[2]

    def projections(self):
        return projection_matrix(self.T)

    def rotated(self, O):
        """Frames T O for per-point orthogonal (N, d, d) matrices O."""
        return FrameField(self.T @ O)

    def __getitem__(self, item):
        return FrameField(self.T[item])


def projection_matrix(frame):
    """P = T T^T for an (n, d) frame or a stack of them."""
    T = frame.T if isinstance(frame, FrameField) else np.asarray(frame, dtype=float)
    return T @ np.swapaxes(T, -1, -2)


def _sign_fix(V):
    # V: (..., n, d); flip each column so its largest-magnitude entry is positive
    k = np.argmax(np.abs(V), axis=-2)
    s = np.sign(np.take_along_axis(V, k[..., None, :], axis=-2))
    s = np.where(s == 0, 1.0, s)
    return V * s


def coarse_frame_svd(stencil_points, d):
    """Leading d left singular vectors of [x_{0,i} - x0].

    Returns (T, unreliable) where T has shape (..., n, d) and ``unreliable``
    flags stencils whose singular-value ratio s_{d+1}/s_d exceeds 0.9.
    """
    X = np.asarray(stencil_points, dtype=float)
    D = X - X[..., :1, :]
    if D.shape[-2] < d + 1:
        raise ValueError(f"need K >= d+1 = {d + 1} points, got {D.shape[-2]}")
    _, s, Vt = np.linalg.svd(D, full_matrices=False)
    T = _sign_fix(np.swapaxes(Vt[..., :d, :], -1, -2))
    if s.shape[-1] > d:
        ratio = s[..., d] / np.where(s[..., d - 1] > 0, s[..., d - 1], np.inf)
        unreliable = (ratio > GAP_THRESHOLD) | (s[..., d - 1] <= 1e-14 * np.maximum(s[..., 0], 1e-300))
    else:
        unreliable = np.zeros(s.shape[:-1], dtype=bool)
    return T, unreliable


def refine_frame_2d(stencil_points, coarse, l):
    """Tilt a coarse surface frame in R^3 by the slope of a fitted height."""
    X = np.asarray(stencil_points, dtype=float)
    D = X - X[..., :1, :]
    t1, t2 = coarse[..., 0], coarse[..., 1]
    nrm = np.cross(t1, t2)
    theta = D @ coarse
    idx = MultiIndexSet(2, l)
    F = build_local_fit(theta, idx, WeightScheme.BASE_EMPHASIS)
    h = np.einsum("...kn,...n->...k", D, nrm)
    b = F.coefficients(h)
    a10 = b[..., idx.index((1, 0))]
    a01 = b[..., idx.index((0, 1))]
    T = np.stack([t1 + a10[..., None] * nrm, t2 + a01[..., None] * nrm], axis=-1)
    T = orthonormalize(T)
    return T, np.cross(T[..., 0], T[..., 1])


def refine_frame_general(stencil_points, coarse, l):
    """Fit every ambient coordinate over the coarse local coordinates."""
    X = np.asarray(stencil_points, dtype=float)
    D = X - X[..., :1, :]
    d = coarse.shape[-1]
    theta = D @ coarse
    idx = MultiIndexSet(d, l)
    F = build_local_fit(theta, idx, WeightScheme.BASE_EMPHASIS)
    b = F.coefficients(D)  # (..., m, n)
    rows = [idx.index(idx.unit(k)) for k in range(d)]
    T = np.swapaxes(b[..., rows, :], -1, -2)
    return orthonormalize(T)


def estimate_frames(cloud, K, l, method="auto", chunk=2048, index=None):
    """Estimated frames for every point of ``cloud``.

    method : "auto" picks the height-function refinement for surfaces in
        R^3 and the coordinate-wise refinement otherwise; "svd" skips
        refinement.
    """
    pts = cloud.points
    d, n = cloud.d, cloud.n
    if method == "auto":
        method = "surface" if (d, n) == (2, 3) else "general"
    if method not in ("surface", "general", "svd"):
        raise ValueError(f"unknown refinement method {method!r}")
    if method == "surface" and (d, n) != (2, 3):
        raise ValueError("height-function refinement needs d=2, n=3")
    index = index or NeighborIndex(cloud)
    N = cloud.N
    T = np.empty((N, n, d))
    normals = np.empty((N, 3)) if method == "surface" else None
    flags = np.empty(N, dtype=bool)
    for start in range(0, N, chunk):
        sl = slice(start, min(N, start + chunk))
        S = pts[index.query(np.arange(sl.start, sl.stop), K)]
        Tc, flags[sl] = coarse_frame_svd(S, d)
        if method == "surface":
            T[sl], normals[sl] = refine_frame_2d(S, Tc, l)
        elif method == "general":
            T[sl] = refine_frame_general(S, Tc, l)
        else:
            T[sl] = Tc
    return FrameField(T, normals=normals, unreliable=flags)


class TangentFrameEstimator(TransformerMixin, BaseEstimator):
    """Estimate unaligned orthonormal tangent frames of a point cloud.

    Parameters
    ----------
    d : int
        Intrinsic dimension.
    K : int
        Stencil size.
    l : int
        Degree of the refinement fit.
    method : {"auto", "surface", "general", "svd"}

    Attributes
    ----------
    frames_ : FrameField
    projections_ : ndarray, shape (N, n, n)
    """

    def __init__(self, d=2, K=50, l=2, method="auto"):
        self.d = d
        self.K = K
        self.l = l
        self.method = method

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        cloud = X if isinstance(X, PointCloud) else PointCloud(X, self.d)
        self.frames_ = estimate_frames(cloud, self.K, self.l, self.method)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X=None):
        """Return the (N, n, d) frame stack of the fitted cloud."""
        check_is_fitted(self, "frames_")
        return self.frames_.T

    @property
    def projections_(self):
        check_is_fitted(self, "frames_")
        return self.frames_.projections()


def write_frames_csv(path, frames):
    N, n, d = frames.T.shape
    header = ["point_index"] + [f"t{i + 1}{j + 1}" for i in range(n) for j in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(N):
            w.writerow([i] + [f"{v:.17g}" for v in frames.T[i].ravel()])


def read_frames_csv(path, d):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    order = np.argsort(data[:, 0], kind="stable")
    vals = data[order, 1:]
    n = vals.shape[1] // d
    return FrameField(vals.reshape(len(vals), n, d))
