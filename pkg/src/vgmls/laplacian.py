"""Method dispatch and the estimator front end for vector Laplacians."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .extrinsic import assemble_covariant_extrinsic, assemble_extrinsic
from .geometry import NeighborIndex, PointCloud
from .gmls import count_monomials
from .intrinsic import assemble_covariant_intrinsic, assemble_intrinsic
from .operators import eigenvalues, solve_shifted, stabilize
from .tangents import FrameField, estimate_frames

METHODS = ("intrinsic", "extrinsic")
KINDS = ("bochner", "l", "hodge")


def check_stencil_size(K, l, d):
    m = count_monomials(d, l)
    if K <= m:
        raise ValueError(f"K={K} must exceed the {m} monomials of degree <= {l} in {d} variables")


def assemble_operator(cloud, frames, method="intrinsic", kind="bochner", K=50, l=3, l_manifold=None,
                      index=None, stencils=None):
    """Assemble the requested vector Laplacian with either method."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    check_stencil_size(K, l, cloud.d)
    if method == "intrinsic":
        return assemble_intrinsic(cloud, frames, kind, K, l, l_manifold=l_manifold, index=index,
                                  stencils=stencils)
    # the extrinsic route never fits the manifold, so l_manifold does not apply
    return assemble_extrinsic(cloud, frames, kind, K, l, index=index, stencils=stencils)


def assemble_covariant(cloud, frames, method="intrinsic", K=50, l=3, l_manifold=None, index=None,
                       stencils=None):
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    check_stencil_size(K, l, cloud.d)
    if method == "intrinsic":
        return assemble_covariant_intrinsic(cloud, frames, K, l, l_manifold=l_manifold, index=index,
                                            stencils=stencils)
    return assemble_covariant_extrinsic(cloud, frames, K, l, index=index, stencils=stencils)


class VectorLaplacianGMLS(TransformerMixin, BaseEstimator):
    """Vector Laplacian of a point cloud as a sparse operator on frame coefficients.

    Parameters
    ----------
    d : int
        Intrinsic dimension.
    K : int
        Stencil size.
    l : int
        Degree for the vector-field fits.
    l_manifold : int or None
        Degree of the local manifold fit (intrinsic method); defaults to ``l``.
    method : {"intrinsic", "extrinsic"}
    kind : {"bochner", "l", "hodge"}
    frame_degree : int
        Degree of the frame refinement when frames are estimated.

    Attributes
    ----------
    frames_ : FrameField
    operator_ : BlockOperator
    """

    def __init__(self, d=2, K=50, l=3, l_manifold=None, method="intrinsic", kind="bochner",
                 frame_degree=2):
        self.d = d
        self.K = K
        self.l = l
        self.l_manifold = l_manifold
        self.method = method
        self.kind = kind
        self.frame_degree = frame_degree

    def fit(self, X, y=None, frames=None):
        """Build the operator. ``frames`` (N, n, d) skips frame estimation."""
        if isinstance(X, PointCloud):
            cloud = X
        else:
            cloud = PointCloud(check_array(X, ensure_min_samples=2), self.d)
        index = NeighborIndex(cloud)
        if frames is None:
            self.frames_ = estimate_frames(cloud, self.K, self.frame_degree, index=index)
        else:
            self.frames_ = frames if isinstance(frames, FrameField) else FrameField(np.asarray(frames))
        self.operator_ = assemble_operator(cloud, self.frames_, self.method, self.kind, self.K, self.l,
                                           self.l_manifold, index=index)
        self.n_features_in_ = cloud.n
        return self

    def transform(self, U):
        """Apply the operator to frame coefficients (N, d) or a flat dN vector; returns (N, d)."""
        check_is_fitted(self, "operator_")
        U = np.asarray(U, dtype=float)
        return self.operator_.apply(U.ravel()).reshape(self.operator_.N, self.operator_.d)

    def solve(self, F, a=1.0, tol=1e-8):
        """Frame coefficients u with (a I - L) u = F."""
        check_is_fitted(self, "operator_")
        u = solve_shifted(a, self.operator_, np.asarray(F, dtype=float).ravel(), tol=tol)
        return u.reshape(self.operator_.N, self.operator_.d)

    def eigenvalues(self, count=None, mode="auto"):
        check_is_fitted(self, "operator_")
        return eigenvalues(self.operator_, count, mode).values

    def stabilize(self):
        """Shift the fitted operator so no eigenvalue has positive real part; returns the shift."""
        check_is_fitted(self, "operator_")
        self.operator_, shift = stabilize(self.operator_)
        return shift
