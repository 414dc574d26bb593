"""Block-sparse operators: storage, application, spectra and shifted solves."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_LIMIT = 8000
DIRECT_LIMIT = 20000
POSITIVE_TOL = 1e-12
STABILIZE_DENSE_LIMIT = 2000


class SolverError(RuntimeError):
    """A linear or eigenvalue solve failed its accuracy contract."""

    def __init__(self, msg, residual=None):
        self.residual = residual
        super().__init__(msg if residual is None else f"{msg} (residual {residual:.3e})")


def chunks(N, size):
    for start in range(0, N, size):
        yield np.arange(start, min(N, start + size))


class BlockOperator:
    """Sparse dN x dN matrix made of d x d blocks, K per block row.

    Parameters
    ----------
    cols : (N, K) int array
        Neighbor indices of every block row; column 0 is the row's own point.
    blocks : (N, K, d, d) array
        ``blocks[i, j]`` multiplies the field at ``cols[i, j]``.
    """

    def __init__(self, cols, blocks, kind="bochner", method=""):
        self.cols = np.asarray(cols, dtype=np.int64)
        self.blocks = np.asarray(blocks, dtype=float)
        if self.blocks.ndim != 4 or self.blocks.shape[:2] != self.cols.shape:
            raise ValueError("blocks must have shape (N, K, d, d) matching cols")
        if not np.all(np.isfinite(self.blocks)):
            raise ValueError("operator has non-finite entries")
        self.kind = kind
        self.method = method
        self._csr = None

    @property
    def N(self):
        return self.cols.shape[0]

    @property
    def K(self):
        return self.cols.shape[1]

    @property
    def d(self):
        return self.blocks.shape[-1]

    @property
    def shape(self):
        return (self.N * self.d,) * 2

    def tocsr(self):
        if self._csr is None:
            N, K, d = self.N, self.K, self.d
            r = (np.arange(N)[:, None, None, None] * d + np.arange(d)[None, None, :, None])
            c = self.cols[:, :, None, None] * d + np.arange(d)[None, None, None, :]
            r, c = np.broadcast_arrays(r, c)
            self._csr = sps.csr_matrix((self.blocks.ravel(), (r.ravel(), c.ravel())), shape=self.shape)
            self._csr.sum_duplicates()
            self._csr.sort_indices()
        return self._csr

    def dense(self):
        return self.tocsr().toarray()

    def apply(self, field):
        u = np.asarray(field, dtype=float)
        if u.shape[0] != self.N * self.d and u.shape[:2] != (self.N, self.d):
            raise ValueError(f"field length {u.shape} does not match operator size {self.shape}")
        flat = u.reshape(self.N * self.d, -1)
        out = self.tocsr() @ flat
        return out.reshape(u.shape)

    def __matmul__(self, other):
        return self.apply(other)

    def shifted(self, s):
        """Operator with s added to every diagonal entry."""
        B = self.blocks.copy()
        B[:, 0] += s * np.eye(self.d)
        return BlockOperator(self.cols, B, self.kind, self.method)

    def rotated(self, O):
        """The same operator expressed in frames T O (O: (N, d, d) orthogonal)."""
        B = np.einsum("iab,ijbc,ijcd->ijad", np.swapaxes(O, -1, -2), self.blocks, O[self.cols])
        return BlockOperator(self.cols, B, self.kind, self.method)

    def __repr__(self):
        return f"BlockOperator(N={self.N}, K={self.K}, d={self.d}, kind={self.kind!r}, method={self.method!r})"


def apply(op, field):
    return op.apply(field)


class CovariantOperator:
    """Evaluates grad_u u from a list of linear first-derivative operators.

    In "intrinsic" mode operator k returns d_k u~ at each base point and the
    result is sum_k u^k (op_k u). In "extrinsic" mode operator s returns
    T0^T (dU/dX^s) and the result is sum_s U^s (op_s u) with U = T u.
    """

    def __init__(self, ops, frames, mode):
        self.ops = ops
        self.frames = frames
        self.mode = mode

    def __call__(self, u):
        N, d = self.ops[0].N, self.ops[0].d
        u2 = np.asarray(u, dtype=float).reshape(N, d)
        if self.mode == "intrinsic":
            coef = u2
        else:
            coef = np.einsum("nsd,nd->ns", self.frames.T, u2)
        out = np.zeros((N, d))
        for k, op in enumerate(self.ops):
            out += coef[:, k:k + 1] * op.apply(u2.ravel()).reshape(N, d)
        return out.ravel()


@dataclass
class Spectrum:
    values: np.ndarray
    vectors: np.ndarray | None = None
    method: str = "dense"


def _sorted(vals, vecs=None):
    order = np.lexsort((-vals.imag, -vals.real))
    return vals[order], (None if vecs is None else vecs[:, order])


def eigenvalues(op, count=None, mode="auto", dense_limit=DENSE_LIMIT, sigma=1.0, tol=1e-8,
                return_vectors=False):
    """Eigenvalues sorted by descending real part.

    mode "dense" computes the full spectrum (dN <= dense_limit). Mode
    "extremal" computes ``count`` eigenvalues of largest real part with
    ARPACK in shift-invert mode around the real shift ``sigma``, which should
    lie to the right of the spectrum; extra Ritz values are requested and
    the residuals of the returned pairs are checked. Mode "rightmost" asks
    ARPACK for the largest real parts directly, using only products with the
    operator and no factorization.
    """
    dN = op.shape[0]
    if mode == "auto":
        mode = "dense" if dN <= dense_limit and count is None else "extremal"
    if mode == "dense":
        if dN > dense_limit:
            raise ValueError(f"dense eigensolve limited to dN <= {dense_limit}, got {dN}")
        A = op.dense()
        if return_vectors:
            vals, vecs = np.linalg.eig(A)
        else:
            vals, vecs = np.linalg.eigvals(A), None
        vals, vecs = _sorted(vals, vecs)
        if count is not None:
            vals = vals[:count]
            vecs = None if vecs is None else vecs[:, :count]
        return Spectrum(vals, vecs, "dense")
    if count is None:
        raise ValueError("extremal mode needs a count")
    if mode not in ("extremal", "rightmost"):
        raise ValueError(f"unknown eigenvalue mode {mode!r}")
    A = op.tocsr()
    k = min(dN - 2, count + max(4, count))
    try:
        if mode == "rightmost":
            vals, vecs = spla.eigs(A, k=k, which="LR", ncv=min(dN - 1, max(40, 2 * k + 1)),
                                   tol=tol, maxiter=5000)
        else:
            vals, vecs = spla.eigs(A, k=k, sigma=sigma, which="LM", tol=tol, maxiter=5000)
    except spla.ArpackNoConvergence as exc:
        raise SolverError(f"ARPACK did not converge: {len(exc.eigenvalues)} of {k} values") from exc
    vals, vecs = _sorted(vals, vecs)
    vals, vecs = vals[:count], vecs[:, :count]
    scale = spla.norm(A, 1)
    res = np.linalg.norm(A @ vecs - vecs * vals, axis=0) / np.linalg.norm(vecs, axis=0)
    if np.max(res) > tol * scale:
        raise SolverError("extremal eigenpairs failed the residual check", float(np.max(res) / scale))
    return Spectrum(vals, vecs if return_vectors else None, "iterative")


def stabilize(op, spectrum=None, **eig_kw):
    """Shift the operator left by its largest real eigenvalue if that is positive.

    Without a precomputed ``spectrum`` the rightmost eigenvalues come from a
    dense solve for small operators and from the matvec-only "rightmost"
    solver above STABILIZE_DENSE_LIMIT unknowns, with shift-invert as the
    fallback. Returns (operator, shift); only diagonal blocks change.
    """
    if spectrum is None:
        if eig_kw:
            eig_kw.setdefault("count", 6)
            eig_kw.setdefault("mode", "extremal")
            spectrum = eigenvalues(op, **eig_kw)
        elif op.shape[0] > STABILIZE_DENSE_LIMIT:
            try:
                spectrum = eigenvalues(op, count=6, mode="rightmost")
            except SolverError as exc:
                log.info("rightmost eigensolve failed (%s), using shift-invert", exc)
                spectrum = eigenvalues(op, count=6, mode="extremal")
        else:
            spectrum = eigenvalues(op)
    lam0 = float(np.max(spectrum.values.real))
    if lam0 > POSITIVE_TOL:
        return op.shifted(-lam0), lam0
    return op, 0.0


class SparseSolver:
    """Repeated solves with a fixed sparse matrix, escalating only as needed.

    Unpreconditioned GMRES is tried first; it is enough for screened and
    implicit-step systems, whose identity shift keeps them well conditioned.
    When it misses the tolerance, GMRES with an incomplete-LU preconditioner
    follows, then a sparse LU factorization below ``direct_limit`` unknowns.
    Whichever stage succeeds is reused for later right-hand sides.
    """

    def __init__(self, A, tol=1e-8, direct_limit=DIRECT_LIMIT):
        self.A = sps.csr_matrix(A)
        self.tol = tol
        self.direct_limit = direct_limit
        self.stage = 0
        self._M = None
        self._lu = None

    def residual(self, u, f):
        return np.max(np.abs(self.A @ u - f)) / max(np.max(np.abs(f)), 1e-300)

    def _krylov(self, f, x0, M=None):
        u, info = spla.gmres(self.A, f, x0=x0, M=M, rtol=self.tol * 1e-2, atol=0.0, restart=100,
                             maxiter=50 if M is None else 200)
        return u if np.all(np.isfinite(u)) and self.residual(u, f) <= self.tol else None

    def __call__(self, f, x0=None):
        f = np.asarray(f, dtype=float).ravel()
        if not np.any(f):
            return np.zeros_like(f)
        u = None
        if self.stage == 0:
            u = self._krylov(f, x0)
            if u is None:
                log.info("plain GMRES missed tolerance; adding an incomplete-LU preconditioner")
                self.stage = 1
        if u is None and self.stage == 1:
            try:
                if self._M is None:
                    ilu = spla.spilu(self.A.tocsc(), drop_tol=1e-5, fill_factor=10)
                    self._M = spla.LinearOperator(self.A.shape, ilu.solve)
                u = self._krylov(f, x0, self._M)
            except RuntimeError as exc:
                log.info("incomplete LU failed: %s", exc)
            if u is None:
                self.stage = 2
        if u is None:
            if self.A.shape[0] >= self.direct_limit:
                raise SolverError("iterative solve did not meet tolerance and system too large for LU")
            try:
                if self._lu is None:
                    self._lu = spla.splu(self.A.tocsc())
                u = self._lu.solve(f)
            except RuntimeError as exc:
                raise SolverError(f"sparse LU failed: {exc}") from exc
        r = self.residual(u, f)
        if not np.isfinite(r) or r > self.tol:
            raise SolverError("solve failed the residual contract", r)
        return u


def solve_shifted(a, op, rhs, tol=1e-8, direct_limit=DIRECT_LIMIT):
    """Solve (a I - L) u = f; the relative max-norm residual must not exceed ``tol``."""
    L = op.tocsr() if isinstance(op, BlockOperator) else sps.csr_matrix(op)
    A = a * sps.identity(L.shape[0], format="csr") - L
    return SparseSolver(A, tol, direct_limit)(rhs)


def write_triplets(path, op):
    A = op.tocsr().tocoo()
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        fh.write(f"% dN {op.shape[0]} K {op.K} kind {op.kind}\n")
        for r, c, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{r},{c},{v:.17g}\n")


def read_triplets(path, d):
    with open(path) as fh:
        head = fh.readline().split()
        meta = dict(zip(head[1::2], head[2::2]))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    dN, K = int(meta["dN"]), int(meta["K"])
    N = dN // d
    rows, cols, vals = data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2]
    A = sps.csr_matrix((vals, (rows, cols)), shape=(dN, dN))
    nb = np.empty((N, K), dtype=np.int64)
    blocks = np.zeros((N, K, d, d))
    for i in range(N):
        sub = A[i * d:(i + 1) * d]
        pts = np.unique(sub.indices // d)
        if i in pts:
            pts = np.concatenate([[i], pts[pts != i]])
        if len(pts) != K:
            raise ValueError(f"row block {i} has {len(pts)} neighbors, expected {K}")
        nb[i] = pts
        dense = sub[:, (pts[:, None] * d + np.arange(d)).ravel()].toarray()
        blocks[i] = dense.reshape(d, K, d).transpose(1, 0, 2)
    return BlockOperator(nb, blocks, kind=meta.get("kind", ""))
