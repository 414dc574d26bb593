"""Point clouds, the test-manifold zoo and exact nearest-neighbor search.

Every manifold exposes the same small surface:

- ``embed(params)`` maps an (N, d) parameter array to (N, n) points,
- ``jacobian(params)`` returns the (N, n, d) coordinate tangents,
- ``sample_params(N, rng)`` draws parameters,
- ``symbolic()`` returns the same embedding as a sympy matrix, used only by
  the manufactured-solution code and by tests as an independent oracle.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

TWO_PI = 2.0 * np.pi


class GeometryError(ValueError):
    pass


@dataclass
class PointCloud:
    """Sampled points with their intrinsic dimension.

    Parameters
    ----------
    points : ndarray, shape (N, n)
    d : int
        Intrinsic dimension.
    param_coords : ndarray, shape (N, d), optional
        Parameters used at sampling time.
    manifold : Manifold, optional
        Generating manifold, when known.
    """

    points: np.ndarray
    d: int
    param_coords: np.ndarray | None = None
    manifold: "Manifold | None" = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise GeometryError("points must be a non-empty (N, n) array")
        if not (1 <= self.d < self.points.shape[1]):
            raise GeometryError(f"need 1 <= d < n, got d={self.d}, n={self.points.shape[1]}")
        if not np.all(np.isfinite(self.points)):
            raise GeometryError("non-finite coordinates")
        if self.param_coords is not None:
            self.param_coords = np.asarray(self.param_coords, dtype=float)
            if self.param_coords.shape != (self.N, self.d):
                raise GeometryError("param_coords must have shape (N, d)")

    @property
    def N(self):
        return self.points.shape[0]

    @property
    def n(self):
        return self.points.shape[1]


class Manifold:
    """Base class for parametrized test manifolds."""

    name = "manifold"
    d = 2
    n = 3

    def box(self):
        """Parameter box as a list of (low, high) pairs."""
        return [(0.0, TWO_PI)] * self.d

    def sample_params(self, N, rng):
        lo, hi = np.array(self.box()).T
        return lo + (hi - lo) * rng.random((N, self.d))

    def embed(self, params):
        raise NotImplementedError

    def jacobian(self, params):
        raise NotImplementedError

    def symbolic(self):
        """Return (symbols, sympy column matrix of the embedding)."""
        raise NotImplementedError

    def params_of(self, points):
        """Recover parameters from points (only needed for the sphere)."""
        raise NotImplementedError

    def constants(self):
        return {}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.constants().items())
        return f"{type(self).__name__}({args})"

    def __eq__(self, other):
        return type(self) is type(other) and self.constants() == other.constants()

    def __hash__(self):
        return hash((type(self).__name__, tuple(sorted(self.constants().items()))))


class UnitSphere2D(Manifold):
    """Unit sphere, parameters (polar angle, azimuth)."""

    name = "sphere"

    def box(self):
        return [(0.0, np.pi), (0.0, TWO_PI)]

    def sample_params(self, N, rng):
        # uniform in surface measure
        g = rng.standard_normal((N, 3))
        x = g / np.linalg.norm(g, axis=1, keepdims=True)
        return self.params_of(x)

    def params_of(self, points):
        x = np.asarray(points, dtype=float)
        th = np.arccos(np.clip(x[:, 2] / np.linalg.norm(x, axis=1), -1.0, 1.0))
        ph = np.mod(np.arctan2(x[:, 1], x[:, 0]), TWO_PI)
        return np.column_stack([th, ph])

    def embed(self, params):
        th, ph = np.asarray(params, dtype=float).T
        return np.column_stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])

    def jacobian(self, params):
        th, ph = np.asarray(params, dtype=float).T
        J = np.empty((len(th), 3, 2))
        J[:, :, 0] = np.column_stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)])
        J[:, :, 1] = np.column_stack([-np.sin(th) * np.sin(ph), np.sin(th) * np.cos(ph), np.zeros_like(th)])
        return J

    def unit_tangents(self, params):
        # orthonormal polar/azimuthal directions, defined away from the poles
        th, ph = np.asarray(params, dtype=float).T
        T = np.empty((len(th), 3, 2))
        T[:, :, 0] = np.column_stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)])
        T[:, :, 1] = np.column_stack([-np.sin(ph), np.cos(ph), np.zeros_like(th)])
        return T

    def symbolic(self):
        import sympy as sp

        th, ph = sp.symbols("theta phi", real=True)
        X = sp.Matrix([sp.sin(th) * sp.cos(ph), sp.sin(th) * sp.sin(ph), sp.cos(th)])
        return (th, ph), X

    def residual(self, points):
        return np.linalg.norm(points, axis=1) - 1.0


class Torus3D(Manifold):
    """Torus of revolution in R^3, parameters (tube angle, ring angle)."""

    name = "torus3"

    def __init__(self, R=2.0, r=1.0):
        if not (np.isfinite(R) and np.isfinite(r) and 0 < r < R):
            raise GeometryError(f"Torus3D needs 0 < r < R, got R={R}, r={r}")
        self.R = float(R)
        self.r = float(r)

    def constants(self):
        return {"R": self.R, "r": self.r}

    def embed(self, params):
        th, ph = np.asarray(params, dtype=float).T
        rho = self.R + self.r * np.cos(th)
        return np.column_stack([rho * np.cos(ph), rho * np.sin(ph), self.r * np.sin(th)])

    def jacobian(self, params):
        th, ph = np.asarray(params, dtype=float).T
        rho = self.R + self.r * np.cos(th)
        J = np.empty((len(th), 3, 2))
        J[:, :, 0] = np.column_stack([-self.r * np.sin(th) * np.cos(ph), -self.r * np.sin(th) * np.sin(ph),
                                      self.r * np.cos(th)])
        J[:, :, 1] = np.column_stack([-rho * np.sin(ph), rho * np.cos(ph), np.zeros_like(th)])
        return J

    def symbolic(self):
        import sympy as sp

        th, ph = sp.symbols("theta phi", real=True)
        R, r = sp.nsimplify(self.R), sp.nsimplify(self.r)
        rho = R + r * sp.cos(th)
        return (th, ph), sp.Matrix([rho * sp.cos(ph), rho * sp.sin(ph), r * sp.sin(th)])

    def residual(self, points):
        x, y, z = points.T
        return (np.hypot(x, y) - self.R) ** 2 + z**2 - self.r**2


class Torus9D(Manifold):
    """Torus in R^9 built from four stacked rings of increasing frequency."""

    name = "torus9"
    n = 9

    def __init__(self, R=2.0):
        if not (np.isfinite(R) and R > 1):
            raise GeometryError(f"Torus9D needs R > 1, got {R}")
        self.R = float(R)
        self.c = float(np.sqrt(sum(1.0 / i**2 for i in range(1, 5))))

    def constants(self):
        return {"R": self.R}

    def embed(self, params):
        th, ph = np.asarray(params, dtype=float).T
        rho = self.R + np.cos(th)
        cols = []
        for i in range(1, 5):
            cols += [rho * np.cos(i * ph) / i, rho * np.sin(i * ph) / i]
        cols.append(self.c * np.sin(th))
        return np.column_stack(cols)

    def jacobian(self, params):
        th, ph = np.asarray(params, dtype=float).T
        rho = self.R + np.cos(th)
        J = np.zeros((len(th), 9, 2))
        for i in range(1, 5):
            J[:, 2 * i - 2, 0] = -np.sin(th) * np.cos(i * ph) / i
            J[:, 2 * i - 1, 0] = -np.sin(th) * np.sin(i * ph) / i
            J[:, 2 * i - 2, 1] = -rho * np.sin(i * ph)
            J[:, 2 * i - 1, 1] = rho * np.cos(i * ph)
        J[:, 8, 0] = self.c * np.cos(th)
        return J

    def symbolic(self):
        import sympy as sp

        th, ph = sp.symbols("theta phi", real=True)
        R = sp.nsimplify(self.R)
        rho = R + sp.cos(th)
        rows = []
        for i in range(1, 5):
            rows += [rho * sp.cos(i * ph) / i, rho * sp.sin(i * ph) / i]
        rows.append(sp.sqrt(sum(sp.Rational(1, i**2) for i in range(1, 5))) * sp.sin(th))
        return (th, ph), sp.Matrix(rows)


class FlatTorus12D(Manifold):
    """Flat 3-torus in R^12; the induced metric is the identity."""

    name = "flat12"
    d = 3
    n = 12

    def embed(self, params):
        p = np.asarray(params, dtype=float)
        cols = []
        for j in range(3):
            t = p[:, j]
            cols += [np.cos(t), np.sin(t), np.cos(2 * t), np.sin(2 * t)]
        return np.column_stack(cols) / np.sqrt(5.0)

    def jacobian(self, params):
        p = np.asarray(params, dtype=float)
        J = np.zeros((len(p), 12, 3))
        for j in range(3):
            t = p[:, j]
            J[:, 4 * j:4 * j + 4, j] = np.column_stack(
                [-np.sin(t), np.cos(t), -2 * np.sin(2 * t), 2 * np.cos(2 * t)]) / np.sqrt(5.0)
        return J

    def symbolic(self):
        import sympy as sp

        ph = sp.symbols("phi1 phi2 phi3", real=True)
        rows = []
        for t in ph:
            rows += [sp.cos(t), sp.sin(t), sp.cos(2 * t), sp.sin(2 * t)]
        return tuple(ph), sp.Matrix(rows) / sp.sqrt(5)


class RedBloodCell(Manifold):
    """Biconcave red-blood-cell surface, parameters (latitude, longitude)."""

    name = "rbc"

    def __init__(self):
        self.r = 3.91 / 3.39
        self.c0 = 0.81 / 3.39
        self.c2 = 7.83 / 3.39
        self.c4 = -4.39 / 3.39

    def box(self):
        return [(-np.pi / 2, np.pi / 2), (-np.pi, np.pi)]

    def _height(self, th):
        c = np.cos(th)
        return 0.5 * np.sin(th) * (self.c0 + self.c2 * c**2 + self.c4 * c**4)

    def _dheight(self, th):
        c, s = np.cos(th), np.sin(th)
        return 0.5 * c * (self.c0 + self.c2 * c**2 + self.c4 * c**4) + \
            0.5 * s * (-2 * self.c2 * c * s - 4 * self.c4 * c**3 * s)

    def embed(self, params):
        th, ph = np.asarray(params, dtype=float).T
        return np.column_stack([self.r * np.cos(th) * np.cos(ph), self.r * np.cos(th) * np.sin(ph),
                                self._height(th)])

    def jacobian(self, params):
        th, ph = np.asarray(params, dtype=float).T
        J = np.empty((len(th), 3, 2))
        J[:, :, 0] = np.column_stack([-self.r * np.sin(th) * np.cos(ph), -self.r * np.sin(th) * np.sin(ph),
                                      self._dheight(th)])
        J[:, :, 1] = np.column_stack([-self.r * np.cos(th) * np.sin(ph), self.r * np.cos(th) * np.cos(ph),
                                      np.zeros_like(th)])
        return J

    def symbolic(self):
        import sympy as sp

        th, ph = sp.symbols("theta phi", real=True)
        r, c0, c2, c4 = (sp.Rational(v, 339) for v in (391, 81, 783, -439))
        c = sp.cos(th)
        X = sp.Matrix([r * c * sp.cos(ph), r * c * sp.sin(ph),
                       sp.sin(th) * (c0 + c2 * c**2 + c4 * c**4) / 2])
        return (th, ph), X


class BumpySphere(Manifold):
    """Sphere with radius 1 + 0.2 sin^7(3 theta) sin(4 phi)."""

    name = "bumpy"

    def box(self):
        return [(0.0, np.pi), (0.0, TWO_PI)]

    def _radius(self, th, ph):
        return 1.0 + 0.2 * np.sin(3 * th) ** 7 * np.sin(4 * ph)

    def embed(self, params):
        th, ph = np.asarray(params, dtype=float).T
        rr = self._radius(th, ph)
        return rr[:, None] * np.column_stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])

    def jacobian(self, params):
        th, ph = np.asarray(params, dtype=float).T
        rr = self._radius(th, ph)
        r_th = 0.2 * 7 * np.sin(3 * th) ** 6 * 3 * np.cos(3 * th) * np.sin(4 * ph)
        r_ph = 0.2 * np.sin(3 * th) ** 7 * 4 * np.cos(4 * ph)
        s = np.column_stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
        e_th = np.column_stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)])
        e_ph = np.column_stack([-np.sin(th) * np.sin(ph), np.sin(th) * np.cos(ph), np.zeros_like(th)])
        J = np.empty((len(th), 3, 2))
        J[:, :, 0] = r_th[:, None] * s + rr[:, None] * e_th
        J[:, :, 1] = r_ph[:, None] * s + rr[:, None] * e_ph
        return J

    def symbolic(self):
        import sympy as sp

        th, ph = sp.symbols("theta phi", real=True)
        rr = 1 + sp.Rational(1, 5) * sp.sin(3 * th) ** 7 * sp.sin(4 * ph)
        return (th, ph), rr * sp.Matrix([sp.sin(th) * sp.cos(ph), sp.sin(th) * sp.sin(ph), sp.cos(th)])


MANIFOLDS = {
    "sphere": UnitSphere2D,
    "torus3": Torus3D,
    "torus9": Torus9D,
    "flat12": FlatTorus12D,
    "rbc": RedBloodCell,
    "bumpy": BumpySphere,
}


def get_manifold(name, **constants):
    try:
        cls = MANIFOLDS[name]
    except KeyError:
        raise GeometryError(f"unknown manifold {name!r}; choose from {sorted(MANIFOLDS)}") from None
    return cls(**constants)


def sample_manifold(spec, N, seed):
    """Draw N points from ``spec`` with a seeded generator."""
    if int(N) < 1:
        raise GeometryError("N must be >= 1")
    rng = np.random.default_rng(seed)
    params = spec.sample_params(int(N), rng)
    return PointCloud(spec.embed(params), spec.d, param_coords=params, manifold=spec)


def orthonormalize(A):
    """Modified Gram-Schmidt on the columns of a stack of (n, d) matrices."""
    Q = np.array(A, dtype=float, copy=True)
    d = Q.shape[-1]
    for k in range(d):
        for j in range(k):
            Q[..., k] -= np.sum(Q[..., j] * Q[..., k], axis=-1, keepdims=True) * Q[..., j]
        nrm = np.linalg.norm(Q[..., k], axis=-1, keepdims=True)
        Q[..., k] /= nrm
    return Q


def analytic_frame(spec, param):
    """Orthonormal tangent frames from the parametrization.

    ``param`` may be a single d-vector or an (N, d) array; the result has
    shape (n, d) or (N, n, d) accordingly.
    """
    p = np.asarray(param, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if isinstance(spec, UnitSphere2D):
        if np.any(np.sin(p[:, 0]) < 1e-14):
            raise GeometryError("sphere chart is singular at the poles")
        T = spec.unit_tangents(p)
    else:
        J = spec.jacobian(p)
        if np.any(np.linalg.norm(J, axis=1).min(axis=-1) < 1e-14):
            raise GeometryError("parametrization is singular at the requested point")
        T = orthonormalize(J)
    return T[0] if single else T


def projection_from_frames(T):
    return np.einsum("...ik,...jk->...ij", T, T)


class NeighborIndex:
    """Exact Euclidean kNN over a cloud with deterministic tie-breaking.

    Ties in distance are broken by ascending point index, and the query point
    itself is always returned first.
    """

    def __init__(self, cloud):
        self.points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
        self.tree = cKDTree(self.points)
        pairs = self.tree.query_pairs(0.0)
        self.duplicates = sorted(pairs)
        if self.duplicates:
            warnings.warn(f"{len(self.duplicates)} duplicate point pairs; GMLS fits may be rank deficient",
                          stacklevel=2)

    def query(self, base, K):
        """Neighbor indices for the points listed in ``base`` (an index array)."""
        base = np.atleast_1d(np.asarray(base, dtype=np.int64))
        N = len(self.points)
        if not 1 <= K <= N:
            raise GeometryError(f"K must be in [1, {N}], got {K}")
        kq = min(N, K + 4)
        dist, idx = self.tree.query(self.points[base], k=kq)
        dist = np.atleast_2d(dist).reshape(len(base), kq)
        idx = np.atleast_2d(idx).reshape(len(base), kq)
        # force the base to the front, then sort by (distance, index)
        dist = np.where(idx == base[:, None], -1.0, dist)
        order = np.lexsort((idx, dist), axis=-1)
        idx = np.take_along_axis(idx, order, axis=-1)[:, :K]
        return idx

    def stencils(self, K):
        return self.query(np.arange(len(self.points)), K)


def build_neighbor_index(cloud):
    return NeighborIndex(cloud)


def fill_distance_estimate(cloud, n_probe=None, seed=0):
    """Largest distance from a dense probe set on the manifold to the cloud."""
    if cloud.N < 2:
        raise GeometryError("fill distance needs at least two points")
    if cloud.manifold is None:
        raise GeometryError("fill distance needs the generating manifold for probing")
    n_probe = n_probe or max(20 * cloud.N, 4000)
    probes = sample_manifold(cloud.manifold, n_probe, seed=np.random.SeedSequence([seed, 7919])).points
    dist, _ = cKDTree(cloud.points).query(probes, k=1)
    return float(dist.max())


def write_cloud_csv(path, cloud):
    n, d = cloud.n, cloud.d
    header = [f"x{i + 1}" for i in range(n)]
    data = cloud.points
    if cloud.param_coords is not None:
        header += [f"p{i + 1}" for i in range(d)]
        data = np.hstack([data, cloud.param_coords])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([f"{v:.17g}" for v in row])


def read_cloud_csv(path, d=None, manifold=None):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    xs = [i for i, h in enumerate(header) if h.startswith("x")]
    ps = [i for i, h in enumerate(header) if h.startswith("p")]
    if len(xs) + len(ps) != len(header):
        raise GeometryError(f"unexpected cloud header {header}")
    if d is None:
        if not ps:
            raise GeometryError("intrinsic dimension not given and no parameter columns present")
        d = len(ps)
    params = data[:, ps] if ps else None
    return PointCloud(data[:, xs], d, param_coords=params, manifold=manifold)
