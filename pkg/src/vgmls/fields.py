"""Manufactured vector fields with closed-form Laplacians and covariant derivatives.

Two constructions are provided. :class:`ParamField` takes the components of
u in the coordinate basis of a parametrized manifold and derives Christoffel
symbols, curvature and the three Laplacians symbolically. :class:`AmbientField`
takes a tangent field written in ambient coordinates on the unit sphere and
uses the projected-gradient formulas, which stay regular at the poles.

All outputs are ambient n-vectors; callers project onto frames as needed.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import sympy as sp

from .geometry import UnitSphere2D, get_manifold

T_SYM = sp.Symbol("t", real=True)
KINDS = ("bochner", "l", "hodge")


def _lambdify(args, exprs):
    f = sp.lambdify(args, exprs, modules="numpy", cse=True)

    def call(*vals):
        shape = np.broadcast(*vals).shape
        out = f(*vals)
        return np.stack([np.broadcast_to(np.asarray(o, dtype=float), shape) for o in out], axis=-1)

    return call


class ParamField:
    """u = sum_i u^i d/dp_i on a parametrized manifold.

    ``components`` are sympy expressions in the manifold's parameter symbols
    and optionally the time symbol ``T_SYM``.
    """

    def __init__(self, manifold, components):
        self.manifold = manifold
        self.params, X = manifold.symbolic()
        self.components = [sp.sympify(c) for c in components]
        d = len(self.params)
        if len(self.components) != d:
            raise ValueError(f"need {d} components, got {len(self.components)}")
        self.X = X
        self.J = X.jacobian(self.params)
        self.g = (self.J.T * self.J).applyfunc(sp.simplify)
        self.ginv = self.g.inv().applyfunc(sp.simplify)

    @cached_property
    def christoffel(self):
        p, g, gi = self.params, self.g, self.ginv
        d = len(p)
        dg = [[[sp.diff(g[a, b], p[c]) for c in range(d)] for b in range(d)] for a in range(d)]
        return [[[sp.simplify(sum(gi[i, l] * (dg[l][k][j] + dg[l][j][k] - dg[j][k][l]) for l in range(d)) / 2)
                  for k in range(d)] for j in range(d)] for i in range(d)]

    @cached_property
    def ricci(self):
        """Ricci tensor R_{bd} (lower indices)."""
        p, G = self.params, self.christoffel
        d = len(p)

        def riem(a, b, c, e):  # R^a_{b c e}
            val = sp.diff(G[a][e][b], p[c]) - sp.diff(G[a][c][b], p[e])
            val += sum(G[a][c][m] * G[m][e][b] - G[a][e][m] * G[m][c][b] for m in range(d))
            return val

        return sp.Matrix(d, d, lambda b, e: sp.simplify(sum(riem(a, b, a, e) for a in range(d))))

    def _nabla(self):
        p, G, u = self.params, self.christoffel, self.components
        d = len(p)
        A = [[sp.diff(u[i], p[k]) + sum(G[i][k][m] * u[m] for m in range(d)) for k in range(d)]
             for i in range(d)]
        return A

    @cached_property
    def _exprs(self):
        p, G, gi = self.params, self.christoffel, self.ginv
        d = len(p)
        u = self.components
        A = self._nabla()
        lapB = []
        for i in range(d):
            s = 0
            for j in range(d):
                for k in range(d):
                    if gi[j, k] == 0:
                        continue
                    B = sp.diff(A[i][k], p[j]) + sum(G[i][j][m] * A[m][k] - G[m][j][k] * A[i][m]
                                                     for m in range(d))
                    s += gi[j, k] * B
            lapB.append(s)
        Ric = self.ricci
        ricu = [sum(gi[i, j] * Ric[j, k] * u[k] for j in range(d) for k in range(d)) for i in range(d)]
        div = sum(A[k][k] for k in range(d))
        graddiv = [sum(gi[i, j] * sp.diff(div, p[j]) for j in range(d)) for i in range(d)]
        cov = [sum(u[k] * A[i][k] for k in range(d)) for i in range(d)]
        dt = [sp.diff(c, T_SYM) for c in u]
        vec = {
            "field": u,
            "bochner": lapB,
            "hodge": [lapB[i] - ricu[i] for i in range(d)],
            "l": [lapB[i] + graddiv[i] + ricu[i] for i in range(d)],
            "covariant": cov,
            "dt": dt,
        }
        # push coordinate components to the ambient space
        return {k: list(self.J * sp.Matrix(v)) for k, v in vec.items()}

    @cached_property
    def _funcs(self):
        args = list(self.params) + [T_SYM]
        return {k: _lambdify(args, v) for k, v in self._exprs.items()}

    def _eval(self, key, cloud, t):
        P = np.asarray(cloud.param_coords if hasattr(cloud, "param_coords") else cloud, dtype=float)
        if P is None:
            raise ValueError("parameter coordinates are required")
        return self._funcs[key](*P.T, t)

    def ambient(self, cloud, t=0.0):
        return self._eval("field", cloud, t)

    def laplacian(self, cloud, kind="bochner", t=0.0):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        return self._eval(kind, cloud, t)

    def covariant(self, cloud, t=0.0):
        return self._eval("covariant", cloud, t)

    def time_derivative(self, cloud, t=0.0):
        return self._eval("dt", cloud, t)


class AmbientField:
    """Tangent field on the unit sphere written in ambient coordinates x, y, z.

    Surface derivatives use G_l f = sum_j P_lj d_j f with P = I - x x^T / |x|^2,
    so only values on the sphere matter. Ricci curvature of the unit sphere is
    the identity.
    """

    def __init__(self, components, manifold=None):
        self.manifold = manifold or UnitSphere2D()
        self.x = sp.symbols("x y z", real=True)
        self.U = sp.Matrix([sp.sympify(c) for c in components])
        if self.U.shape != (3, 1):
            raise ValueError("need three ambient components")

    def _G(self, f, l):
        x = sp.Matrix(self.x)
        P = sp.eye(3) - x * x.T / (x.T * x)[0]
        return sum(P[l, j] * sp.diff(f, self.x[j]) for j in range(3))

    def _P(self, v):
        x = sp.Matrix(self.x)
        return v - x * (x.T * v)[0] / (x.T * x)[0]

    @cached_property
    def _exprs(self):
        U = self.U
        lap = sp.zeros(3, 1)
        for l in range(3):
            W = self._P(sp.Matrix([self._G(U[i], l) for i in range(3)]))
            lap += sp.Matrix([self._G(W[i], l) for i in range(3)])
        lapB = self._P(lap)
        div = sum(self._G(U[l], l) for l in range(3))
        graddiv = sp.Matrix([self._G(div, l) for l in range(3)])
        cov = self._P(sp.Matrix([sum(U[s] * sp.diff(U[i], self.x[s]) for s in range(3)) for i in range(3)]))
        return {
            "field": list(U),
            "bochner": list(lapB),
            "hodge": list(lapB - U),
            "l": list(lapB + graddiv + U),
            "covariant": list(cov),
            "dt": list(U.diff(T_SYM)),
        }

    @cached_property
    def _funcs(self):
        args = list(self.x) + [T_SYM]
        return {k: _lambdify(args, v) for k, v in self._exprs.items()}

    def _eval(self, key, cloud, t):
        X = np.asarray(getattr(cloud, "points", cloud), dtype=float)
        return self._funcs[key](*X.T, t)

    def ambient(self, cloud, t=0.0):
        return self._eval("field", cloud, t)

    def laplacian(self, cloud, kind="bochner", t=0.0):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        return self._eval(kind, cloud, t)

    def covariant(self, cloud, t=0.0):
        return self._eval("covariant", cloud, t)

    def time_derivative(self, cloud, t=0.0):
        return self._eval("dt", cloud, t)


def _torus_field(m, scale=1):
    (th, ph), _ = m.symbolic()
    return ParamField(m, [scale * sp.sin(th) * sp.sin(ph), scale * sp.sin(th) * sp.cos(ph)])


def _flat_field(m):
    p1, p2, p3 = m.symbolic()[0]
    return ParamField(m, [sp.sin(p1) * sp.sin(p2), sp.sin(p2) * sp.sin(p3), sp.sin(p3) * sp.cos(p1)])


def _sphere_poly(m):
    x, y, z = sp.symbols("x y z", real=True)
    return AmbientField([x - x**3, -x**2 * y, -x**2 * z], m)


def _burgers(m):
    return _torus_field(m, sp.Rational(1, 20) * sp.cos(T_SYM))


def _meridian(m):
    x, y, z = sp.symbols("x y z", real=True)
    s = sp.sqrt(x**2 + y**2)
    # unit field along great circles through the poles
    return AmbientField([x * z / s, y * z / s, -s], m)


FIELDS = {
    "torus": (("torus3", "torus9"), _torus_field),
    "flat": (("flat12",), _flat_field),
    "sphere_poly": (("sphere",), _sphere_poly),
    "burgers": (("torus3", "torus9"), _burgers),
    "meridian": (("sphere",), _meridian),
}

DEFAULT_FIELD = {"torus3": "torus", "torus9": "torus", "flat12": "flat", "sphere": "sphere_poly"}

_CACHE = {}


def manufactured_field(name, manifold):
    """Named manufactured field on ``manifold`` (a Manifold or its name)."""
    m = get_manifold(manifold) if isinstance(manifold, str) else manifold
    try:
        allowed, build = FIELDS[name]
    except KeyError:
        raise ValueError(f"unknown field {name!r}; choose from {sorted(FIELDS)}") from None
    if m.name not in allowed:
        raise ValueError(f"field {name!r} is defined on {allowed}, not {m.name!r}")
    key = (name, m)
    if key not in _CACHE:
        _CACHE[key] = build(m)
    return _CACHE[key]


def _frame_array(frames):
    from .tangents import FrameField

    return frames.T if isinstance(frames, FrameField) else np.asarray(frames, dtype=float)


def frame_coefficients(frames, ambient):
    """Coefficients T^T U of ambient tangent vectors in per-point frames."""
    T = _frame_array(frames)
    return np.einsum("ind,in->id", T, ambient)


def push_forward(frames, coeffs):
    """Ambient vectors T u from frame coefficients (N, d) or a flat dN vector."""
    T = _frame_array(frames)
    u = np.asarray(coeffs, dtype=float).reshape(T.shape[0], T.shape[2])
    return np.einsum("ind,id->in", T, u)
