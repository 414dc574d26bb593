"""Vector Laplacians and covariant derivatives from projected ambient derivatives.

Every stencil gets n matrices G_s approximating the tangential derivative
e_s . P grad at all K stencil points (and D_s, the same with P replaced by
the identity). The ambient formulas for the three Laplacians are products
of these matrices with the projections; sandwiching them with the per-point
frames reduces them to d x d blocks acting on frame coefficients, so the
assembled weights need no further basis change.

Only the base-point block row of each product is needed, so the weights
are contracted directly from the G matrices without forming any nK x nK
array. :func:`reduced_blocks` builds the full K x K block arrays and is kept
for inspection and testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gmls import MultiIndexSet, WeightScheme, build_local_fit, monomial_gradients
from .operators import BlockOperator, CovariantOperator, chunks

KINDS = ("bochner", "l", "hodge")


@dataclass
class StencilDifferentials:
    """G[s] ~ (e_s . P) grad and D[s] ~ d/dX^s on a stencil, each (..., n, K, K)."""

    G: np.ndarray
    D: np.ndarray | None = None


@dataclass
class ReducedBlocks:
    """R[l], M[l] with shape (..., n, K, K, d, d) and J with shape (..., K, K, d, d)."""

    R: np.ndarray
    M: np.ndarray
    J: np.ndarray


def _ambient_monomial_gradients(theta, idx, base_frame):
    # grad of theta^alpha in R^n is sum_i d_i theta^alpha t_i(x0): (..., K, m, n)
    g = monomial_gradients(theta, idx)
    return np.einsum("...kmi,...si->...kms", g, base_frame)


def build_g_matrices(stencil_frames, fit, with_plain=False):
    """G_s = B_s Phi^dagger with B_s evaluated by the chain rule.

    stencil_frames : (..., K, n, d) frames at the stencil points, base first.
    fit : LocalFit over the base-frame local coordinates (degrees 0..l).
    """
    T = np.asarray(stencil_frames, dtype=float)
    grad = _ambient_monomial_gradients(fit.theta, fit.idx, T[..., 0, :, :])  # (..., K, m, n)
    P = T @ np.swapaxes(T, -1, -2)  # (..., K, n, n)
    B = np.einsum("...ksn,...kmn->...skm", P, grad)
    G = B @ fit.phi_dagger[..., None, :, :]
    D = None
    if with_plain:
        D = np.moveaxis(grad, -1, -3) @ fit.phi_dagger[..., None, :, :]
    return StencilDifferentials(G=G, D=D)


def reduced_blocks(diff, stencil_frames):
    """Full reduced block arrays for one or a batch of stencils."""
    G = diff.G
    T = np.asarray(stencil_frames, dtype=float)
    P = T @ np.swapaxes(T, -1, -2)
    TT = np.einsum("...sna,...tnb->...stab", T, T)  # T_s^T T_t
    R = G[..., :, :, :, None, None] * TT[..., None, :, :, :, :]
    # M^l_st = (T_s^T g_st)(P_s[l, :] T_t)
    Tg = np.einsum("...sna,...nst->...sta", T, G)
    PT = np.einsum("...sln,...tnb->...lstb", P, T)
    M = np.einsum("...sta,...lstb->...lstab", Tg, PT)
    # J_st = sum_j (T_s^T g_sj)(g_jt^T T_t)
    gT = np.einsum("...njt,...tnb->...jtb", G, T)
    J = np.einsum("...sja,...jtb->...stab", Tg, gT)
    return ReducedBlocks(R=R, M=M, J=J)


def weights_from_blocks(blocks, kind="bochner"):
    """Base block row of sum_l R_l (R_l +/- M_l) (+ J for Hodge); (..., K, d, d)."""
    R, M = blocks.R, blocks.M
    R0 = R[..., :, 0, :, :, :]  # (..., n, K, d, d)
    inner = R if kind == "bochner" else (R + M if kind == "l" else R - M)
    W = np.einsum("...lrab,...lrtbc->...tac", R0, inner)
    if kind == "hodge":
        W = W + blocks.J[..., 0, :, :, :]
    return W


def extrinsic_weights(G, stencil_frames, kind="bochner"):
    """Base block row of the reduced Laplacian contracted straight from G.

    G : (..., n, K, K); stencil_frames : (..., K, n, d). Returns (..., K, d, d).
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    T = np.asarray(stencil_frames, dtype=float)
    T0 = T[..., 0, :, :]
    TtT = np.einsum("...na,...rnb->...rab", T0, T)
    Y = TtT @ np.swapaxes(T, -1, -2)  # T0^T P_r: (..., K, d, n)
    G0 = G[..., :, 0, :]  # (..., n, K): g_0r
    H = np.einsum("...lr,...lrt->...rt", G0, G)
    W = np.einsum("...rt,...ran->...tan", H, Y) @ T
    if kind == "bochner":
        return W
    a = np.einsum("...ran,...nrt->...rta", Y, G)  # T0^T P_r g_rt
    v = np.einsum("...rmn,...nr->...rm", T @ np.swapaxes(T, -1, -2), G0)  # P_r g_0r
    c = np.einsum("...tnb,...rn->...rtb", T, v)  # T_t^T P_r g_0r
    Mt = np.einsum("...rta,...rtb->...tab", a, c)
    if kind == "l":
        return W + Mt
    b = np.einsum("...na,...nr->...ra", T0, G0)  # T0^T g_0r
    e = np.einsum("...tnb,...nrt->...rtb", T, G)  # T_t^T g_rt
    J = np.einsum("...ra,...rtb->...tab", b, e)
    return W - Mt + J


def bochner_weights_extrinsic(G, stencil_frames):
    return extrinsic_weights(G, stencil_frames, "bochner")


def l_weights_extrinsic(G, stencil_frames):
    return extrinsic_weights(G, stencil_frames, "l")


def hodge_weights_extrinsic(G, stencil_frames):
    return extrinsic_weights(G, stencil_frames, "hodge")


def covariant_blocks(D, stencil_frames):
    """E_s[j] = D_s[0, j] T0^T T_j, the base-frame components of dU/dX^s."""
    T = np.asarray(stencil_frames, dtype=float)
    TtT = np.einsum("...na,...jnb->...jab", T[..., 0, :, :], T)
    return D[..., :, 0, :, None, None] * TtT[..., None, :, :, :]


def covariant_derivative_extrinsic(diff, stencil_frames, u_stencil):
    """T0^T sum_s U^s(x0) (D_s U)(x0) with U = T u at every stencil point."""
    E = covariant_blocks(diff.D, stencil_frames)  # (..., n, K, d, d)
    u = np.asarray(u_stencil, dtype=float)
    dU = np.einsum("...sjab,...jb->...sa", E, u)
    U0 = np.einsum("...nd,...d->...n", np.asarray(stencil_frames)[..., 0, :, :], u[..., 0, :])
    return np.einsum("...s,...sa->...a", U0, dU)


def _stencil_fit(cloud, frames, stencils, rows, idx, scheme):
    S = cloud.points[stencils[rows]]
    Ts = frames.T[stencils[rows]]
    theta = (S - S[:, :1]) @ Ts[:, 0]
    return Ts, build_local_fit(theta, idx, scheme, where=rows)


def assemble_extrinsic(cloud, frames, kind="bochner", K=50, l=3, index=None, stencils=None, chunk=256):
    """Sparse extrinsic vector Laplacian in the per-point frames."""
    from .geometry import NeighborIndex

    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if stencils is None:
        stencils = (index or NeighborIndex(cloud)).stencils(K)
    N, d = cloud.N, cloud.d
    idx = MultiIndexSet(d, l)
    blocks = np.empty((N, K, d, d))
    for rows in chunks(N, chunk):
        Ts, F = _stencil_fit(cloud, frames, stencils, rows, idx, WeightScheme.BASE_EMPHASIS)
        G = build_g_matrices(Ts, F).G
        blocks[rows] = extrinsic_weights(G, Ts, kind)
    return BlockOperator(stencils, blocks, kind=kind, method="extrinsic")


def assemble_covariant_extrinsic(cloud, frames, K=50, l=3, index=None, stencils=None, chunk=1024):
    """Operators E_s (s = 1..n) for grad_u u = sum_s U^s E_s u, uniform weights."""
    from .geometry import NeighborIndex

    if stencils is None:
        stencils = (index or NeighborIndex(cloud)).stencils(K)
    N, d, n = cloud.N, cloud.d, cloud.n
    idx = MultiIndexSet(d, l)
    blocks = np.empty((n, N, K, d, d))
    for rows in chunks(N, chunk):
        Ts, F = _stencil_fit(cloud, frames, stencils, rows, idx, WeightScheme.UNIFORM)
        # only the base row of D is needed; at theta = 0 only linear monomials survive
        lin = [idx.index(idx.unit(k)) for k in range(d)]
        D0 = np.einsum("csk,ckj->csj", Ts[:, 0], F.phi_dagger[:, lin, :])  # (c, n, K)
        TtT = np.einsum("cna,cjnb->cjab", Ts[:, 0], Ts)
        blocks[:, rows] = np.moveaxis(D0[..., None, None] * TtT[:, None], 1, 0)
    ops = [BlockOperator(stencils, blocks[s], kind="gradient", method="extrinsic") for s in range(n)]
    return CovariantOperator(ops, frames, mode="extrinsic")
