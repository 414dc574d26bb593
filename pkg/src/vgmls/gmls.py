"""Weighted least-squares polynomial fitting on stencils.

All routines accept a leading batch axis so a whole chunk of stencils is
fitted with one set of stacked linear-algebra calls. Local coordinates are
divided by the stencil radius before the design matrix is formed; the
returned ``phi_dagger`` already undoes that scaling, so coefficients refer
to monomials in the unscaled coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np

COND_FALLBACK = 1e8
COND_FAIL = 1e12


class RankDeficient(np.linalg.LinAlgError):
    """The weighted normal matrix is singular to working precision."""

    def __init__(self, cond, where=None):
        self.cond = cond
        self.where = where
        msg = f"GMLS normal matrix is rank deficient (cond={cond:.3e})"
        if where is not None:
            msg += f" at point {where}"
        super().__init__(msg)


class WeightScheme(str, Enum):
    BASE_EMPHASIS = "base"
    UNIFORM = "uniform"

    def weights(self, K):
        w = np.ones(K)
        if self is WeightScheme.BASE_EMPHASIS:
            w[1:] = 1.0 / K
        return w


@lru_cache(maxsize=None)
def _multi_indices(d, lo, hi):
    out = []
    for deg in range(lo, hi + 1):
        # graded lex: within a degree, larger leading exponents come first
        block = set()
        for combo in combinations_with_replacement(range(d), deg):
            a = [0] * d
            for c in combo:
                a[c] += 1
            block.add(tuple(a))
        out += sorted(block, reverse=True)
    return tuple(out)


class MultiIndexSet:
    """Graded-lex ordered exponents alpha in N^d with lo <= |alpha| <= hi."""

    def __init__(self, d, hi, lo=0):
        if d < 1 or hi < lo or lo < 0:
            raise ValueError(f"invalid multi-index range d={d}, lo={lo}, hi={hi}")
        self.d, self.lo, self.hi = int(d), int(lo), int(hi)
        self.alphas = _multi_indices(self.d, self.lo, self.hi)
        self.array = np.array(self.alphas, dtype=np.int64).reshape(len(self.alphas), self.d)
        self.degrees = self.array.sum(axis=1)
        self._pos = {a: i for i, a in enumerate(self.alphas)}

    @property
    def m(self):
        return len(self.alphas)

    def __len__(self):
        return self.m

    def __iter__(self):
        return iter(self.alphas)

    def index(self, alpha):
        try:
            return self._pos[tuple(int(a) for a in alpha)]
        except KeyError:
            raise KeyError(f"multi-index {tuple(alpha)} not in [{self.lo}, {self.hi}]") from None

    def unit(self, k):
        e = [0] * self.d
        e[k] = 1
        return tuple(e)

    def __repr__(self):
        return f"MultiIndexSet(d={self.d}, lo={self.lo}, hi={self.hi})"


def count_monomials(d, l, lo=0):
    return math.comb(l + d, d) - (math.comb(lo - 1 + d, d) if lo > 0 else 0)


def local_coordinates(stencil_points, base_frame):
    """theta_i = t_i(x0) . (x - x0), row 0 being the base point.

    stencil_points : (..., K, n); base_frame : (..., n, d).
    """
    X = np.asarray(stencil_points, dtype=float)
    D = X - X[..., :1, :]
    return D @ np.asarray(base_frame, dtype=float)


def design_matrix(theta, idx):
    """Monomials prod_i theta_i^alpha_i(j) evaluated at every stencil row."""
    theta = np.asarray(theta, dtype=float)
    pw = _powers(theta, idx.hi)
    out = np.ones(theta.shape[:-1] + (idx.m,))
    for i in range(idx.d):
        out *= pw[..., i, :][..., idx.array[:, i]]
    return out


def _powers(theta, p):
    # (..., K, d, p+1) table of theta^k
    pw = np.empty(theta.shape + (p + 1,))
    pw[..., 0] = 1.0
    for k in range(1, p + 1):
        pw[..., k] = pw[..., k - 1] * theta
    return pw


def monomial_gradients(theta, idx):
    """d/dtheta_i of every monomial: shape (..., K, m, d)."""
    theta = np.asarray(theta, dtype=float)
    pw = _powers(theta, idx.hi)
    A = idx.array
    out = np.empty(theta.shape[:-1] + (idx.m, idx.d))
    for i in range(idx.d):
        g = np.ones(theta.shape[:-1] + (idx.m,))
        for j in range(idx.d):
            if j == i:
                e = np.maximum(A[:, j] - 1, 0)
                g *= pw[..., j, :][..., e] * A[:, j]
            else:
                g *= pw[..., j, :][..., A[:, j]]
        out[..., i] = g
    return out


@dataclass
class LocalFit:
    """Solve operator of one (or a batch of) weighted least-squares fits.

    Attributes
    ----------
    theta : (..., K, d) local coordinates
    phi : (..., K, m) design matrix in unscaled coordinates
    phi_dagger : (..., m, K) maps stencil values to coefficients
    cond : (...,) condition estimate of the scaled normal matrix
    idx : MultiIndexSet
    scheme : WeightScheme
    """

    theta: np.ndarray
    phi: np.ndarray
    phi_dagger: np.ndarray
    cond: np.ndarray
    idx: MultiIndexSet
    scheme: WeightScheme

    def coefficients(self, values):
        """values : (..., K) or (..., K, c) -> (..., m) or (..., m, c)."""
        v = np.asarray(values, dtype=float)
        if v.ndim == self.phi_dagger.ndim - 1:
            return np.einsum("...mk,...k->...m", self.phi_dagger, v)
        return self.phi_dagger @ v

    def derivative_row(self, delta):
        """Row of weights realizing D^delta at the base point."""
        j = self.idx.index(delta)
        return _factorial(delta) * self.phi_dagger[..., j, :]


def _factorial(delta):
    return float(np.prod([math.factorial(int(a)) for a in delta]))


def build_local_fit(theta, idx, scheme=WeightScheme.BASE_EMPHASIS, where=None):
    """Factor the weighted normal equations for a batch of stencils.

    The primary path is a symmetric eigendecomposition of Phi^T Lambda Phi,
    which also provides the condition number; stencils with cond above
    ``COND_FALLBACK`` are re-solved by SVD of Lambda^(1/2) Phi, and any above
    ``COND_FAIL`` (or with K < m) raise :class:`RankDeficient`.
    """
    theta = np.asarray(theta, dtype=float)
    scheme = WeightScheme(scheme)
    K = theta.shape[-2]
    if K < idx.m:
        raise RankDeficient(np.inf, where)
    scale = np.max(np.linalg.norm(theta, axis=-1), axis=-1)
    scale = np.where(scale > 0, scale, 1.0)
    ts = theta / scale[..., None, None]
    phs = design_matrix(ts, idx)
    lam = scheme.weights(K)
    sq = np.sqrt(lam)
    phs_w = np.swapaxes(phs, -1, -2) * lam
    A = phs_w @ phs
    # symmetric column equilibration before factoring
    cs = np.sqrt(np.einsum("...ii->...i", A))
    cs = np.where(cs > 0, cs, 1.0)
    A = A / cs[..., :, None] / cs[..., None, :]
    ev, V = np.linalg.eigh(A)
    ok = ev[..., 0] > 0
    cond = np.where(ok, ev[..., -1] / np.where(ok, ev[..., 0], 1.0), np.inf)
    bad = cond > COND_FAIL
    if np.any(bad):
        loc = tuple(np.argwhere(bad)[0])
        w = where if where is None or np.ndim(where) == 0 else np.asarray(where)[loc]
        raise RankDeficient(float(cond[loc]), w)
    inv = (V / ev[..., None, :]) @ np.swapaxes(V, -1, -2)
    inv = inv / cs[..., :, None] / cs[..., None, :]
    pdag = inv @ phs_w
    weak = cond > COND_FALLBACK
    if np.any(weak):
        pdag[weak] = np.linalg.pinv(phs[weak] * sq[:, None], rcond=1.0 / COND_FAIL) * sq
    pdag = pdag / (scale[..., None, None] ** idx.degrees[:, None])
    phi = design_matrix(theta, idx)
    return LocalFit(theta=theta, phi=phi, phi_dagger=pdag, cond=cond, idx=idx, scheme=scheme)


def fit(design, values):
    """Coefficients b = (Phi^T Lambda Phi)^-1 Phi^T Lambda f."""
    return design.coefficients(values)


def derivative_at_base(coeffs, idx, delta):
    """delta! * b_delta."""
    return _factorial(delta) * np.asarray(coeffs)[..., idx.index(delta)]
