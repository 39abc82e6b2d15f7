"""Gauss-Newton direction of the sparse constrained formulation.

The linearized problem is a tree-structured equality-constrained QP::

    min sum_i 0.5 dx_i' H11_i dx_i + dW_i' H21_i dx_i + 0.5 dW_i' H22_i dW_i
              + g1_i' dx_i + g2_i' dW_i
    s.t. dx_i = A_i dx_par(i) + B_i dW_i

solved exactly by a leaf-to-root elimination of ``(dx_i, dW_i)`` followed by a
root solve and a root-to-leaf recovery. Parts are assumed topologically
ordered (``parent[i] < i``), so eliminating in decreasing index order visits
every child before its parent.

``A_i`` is ``[[Ad_i, C_i], [0, I]]`` with ``C_i`` zero in its rotational rows,
and ``B_i`` is ``[I; 0]``. The default kernels exploit this; passing
``structured=False`` runs generic dense products over the materialized
matrices in the same summation order, which must agree exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import IndefiniteQ22, SingularRoot
from .model import PartStateView
from .residuals import Linearization, Problem, _constraint_blocks, linearize

PIVOT_RTOL = 1e-13


@dataclass
class NodeQuadratics:
    H11: np.ndarray  # (K+1, 6+P, 6+P)
    H21: np.ndarray  # (K+1, 3, 6+P)
    H22: np.ndarray  # (K+1, 3, 3)
    g1: np.ndarray  # (K+1, 6+P)
    g2: np.ndarray  # (K+1, 3)


@dataclass
class GainTerms:
    K: np.ndarray  # (K+1, 3, 6+P), row 0 unused
    k: np.ndarray  # (K+1, 3)
    M: np.ndarray  # (K+1, 6+P, 6+P)
    m: np.ndarray  # (K+1, 6+P)
    dE: np.ndarray  # (K+1,)
    dEbar: np.ndarray  # (K+1,) accumulated children decrease


@dataclass
class SparseDirection:
    dx: np.ndarray  # (K+1, 6+P): [dT_i; dbeta_i]
    dOmega: np.ndarray  # (K+1, 3), row 0 is zero
    dE0: float

    def unconstrained(self) -> np.ndarray:
        """Flatten to the dense ordering ``[dT_0; dOmega_1..K; dbeta]``."""
        return np.concatenate([self.dx[0, :6], self.dOmega[1:].ravel(), self.dx[0, 6:]])


# ---------------------------------------------------------------- small dense helpers


@njit(cache=True)
def _cholesky_into(A, L):
    """Lower Cholesky factor of ``A`` into ``L``; returns (ok, smallest pivot)."""
    n = A.shape[0]
    scale = 0.0
    for i in range(n):
        scale = max(scale, abs(A[i, i]))
    tol = PIVOT_RTOL * max(scale, 1e-300)
    min_pivot = np.inf
    for j in range(n):
        d = A[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        min_pivot = min(min_pivot, d)
        if not d > tol:
            return False, min_pivot
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return True, min_pivot


@njit(cache=True)
def _chol_solve_into(L, b, out):
    n = L.shape[0]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, n):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]


@njit(cache=True)
def _mm(X, Y):
    out = np.empty((X.shape[0], Y.shape[1]))
    for i in range(X.shape[0]):
        for j in range(Y.shape[1]):
            acc = 0.0
            for l in range(X.shape[1]):
                acc += X[i, l] * Y[l, j]
            out[i, j] = acc
    return out


@njit(cache=True)
def _mtm(X, Y):
    out = np.empty((X.shape[1], Y.shape[1]))
    for i in range(X.shape[1]):
        for j in range(Y.shape[1]):
            acc = 0.0
            for l in range(X.shape[0]):
                acc += X[l, i] * Y[l, j]
            out[i, j] = acc
    return out


@njit(cache=True)
def _mv(X, v):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        acc = 0.0
        for l in range(X.shape[1]):
            acc += X[i, l] * v[l]
        out[i] = acc
    return out


@njit(cache=True)
def _mtv(X, v):
    out = np.empty(X.shape[1])
    for i in range(X.shape[1]):
        acc = 0.0
        for l in range(X.shape[0]):
            acc += X[l, i] * v[l]
        out[i] = acc
    return out


@njit(cache=True)
def _times_A(X, Ad, C, out):
    """out = X @ A for A = [[Ad, C], [0, I]] with zero rotational rows in C.

    Every entry is summed over the inner index in ascending order, matching
    the generic dense product term for term.
    """
    m = X.shape[0]
    P = C.shape[1]
    for j in range(m):
        for k in range(6):
            acc = 0.0
            for l in range(6):
                acc += X[j, l] * Ad[l, k]
            out[j, k] = acc
        for k in range(P):
            acc = 0.0
            for l in range(3, 6):
                acc += X[j, l] * C[l, k]
            out[j, 6 + k] = acc + X[j, 6 + k]


@njit(cache=True)
def _At_times(X, Ad, C, out):
    """out = A.T @ X for the same structured A."""
    m = X.shape[1]
    P = C.shape[1]
    for j in range(6):
        for c in range(m):
            acc = 0.0
            for l in range(6):
                acc += Ad[l, j] * X[l, c]
            out[j, c] = acc
    for k in range(P):
        for c in range(m):
            acc = 0.0
            for l in range(3, 6):
                acc += C[l, k] * X[l, c]
            out[6 + k, c] = acc + X[6 + k, c]


@njit(cache=True)
def _At_times_vec(v, Ad, C, out):
    P = C.shape[1]
    for j in range(6):
        acc = 0.0
        for l in range(6):
            acc += Ad[l, j] * v[l]
        out[j] = acc
    for k in range(P):
        acc = 0.0
        for l in range(3, 6):
            acc += C[l, k] * v[l]
        out[6 + k] = acc + v[6 + k]


@njit(cache=True)
def _A_times_vec(v, Ad, C, out):
    P = C.shape[1]
    for j in range(6):
        acc = 0.0
        for l in range(6):
            acc += Ad[j, l] * v[l]
        for k in range(P):
            acc += C[j, k] * v[6 + k]
        out[j] = acc
    for k in range(P):
        out[6 + k] = v[6 + k]


@njit(cache=True)
def _materialize(Ad, C):
    P = C.shape[1]
    A = np.zeros((6 + P, 6 + P))
    A[:6, :6] = Ad
    A[:6, 6:] = C
    for k in range(P):
        A[6 + k, 6 + k] = 1.0
    B = np.zeros((6 + P, 3))
    for a in range(3):
        B[a, a] = 1.0
    return A, B


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _node_quadratics(r, J1, J2, part_start):
    n_parts = part_start.shape[0] - 1
    n1 = J1.shape[1]
    H11 = np.zeros((n_parts, n1, n1))
    H21 = np.zeros((n_parts, 3, n1))
    H22 = np.zeros((n_parts, 3, 3))
    g1 = np.zeros((n_parts, n1))
    g2 = np.zeros((n_parts, 3))
    for i in range(n_parts):
        s = part_start[i]
        e = part_start[i + 1]
        if e == s:
            continue
        A = J1[s:e]
        H = np.dot(A.T, A)
        for a in range(n1):
            for b in range(a, n1):
                H11[i, a, b] = H[a, b]
                H11[i, b, a] = H[a, b]
        g1[i] = np.dot(A.T, r[s:e])
        # joint-rotation columns are nonzero only on a few rows (joint priors)
        for row in range(s, e):
            if J2[row, 0] == 0.0 and J2[row, 1] == 0.0 and J2[row, 2] == 0.0:
                continue
            for a in range(3):
                ja = J2[row, a]
                g2[i, a] += ja * r[row]
                for b in range(3):
                    H22[i, a, b] += ja * J2[row, b]
                for b in range(n1):
                    H21[i, a, b] += ja * J1[row, b]
    return H11, H21, H22, g1, g2


@njit(cache=True)
def _model_residual(r, J1, J2, row_part, dx, dW):
    """Linearized residual ``r + J1 dx_i + J2 dW_i`` at a candidate direction."""
    out = r.copy()
    for row in range(r.shape[0]):
        i = row_part[row]
        acc = 0.0
        for c in range(J1.shape[1]):
            acc += J1[row, c] * dx[i, c]
        for a in range(3):
            acc += J2[row, a] * dW[i, a]
        out[row] += acc
    return out


@njit(cache=True)
def _node_gradients(r, J1, J2, part_start):
    n_parts = part_start.shape[0] - 1
    g1 = np.zeros((n_parts, J1.shape[1]))
    g2 = np.zeros((n_parts, 3))
    for i in range(n_parts):
        s = part_start[i]
        e = part_start[i + 1]
        if e > s:
            g1[i] = np.dot(J1[s:e].T, r[s:e])
            g2[i] = np.dot(J2[s:e].T, r[s:e])
    return g1, g2


@njit(cache=True)
def _backward_sweep(parents, H11, H21, H22, g1, g2, Ad, C, damping, structured):
    n = parents.shape[0]
    n1 = H11.shape[1]
    N11 = H11.copy()
    n_1 = g1.copy()
    for i in range(n):
        for a in range(n1):
            N11[i, a, a] += damping
    Kg = np.zeros((n, 3, n1))
    kg = np.zeros((n, 3))
    M = np.zeros((n, n1, n1))
    m = np.zeros((n, n1))
    dE = np.zeros(n)
    dEbar = np.zeros(n)
    # per-node workspaces, reused down the sweep
    NA = np.empty((n1, n1))
    Q11 = np.empty((n1, n1))
    N21A = np.empty((3, n1))
    Q21 = np.empty((3, n1))
    Q22 = np.empty((3, 3))
    q1 = np.empty(n1)
    q2 = np.empty(3)
    L = np.zeros((3, 3))
    col = np.empty(3)
    kk = np.empty(3)
    for i in range(n - 1, 0, -1):
        N = N11[i]
        N21 = H21[i]
        nv = n_1[i]
        if structured:
            _times_A(N, Ad[i], C[i], NA)
            _At_times(NA, Ad[i], C[i], Q11)
            _times_A(N21, Ad[i], C[i], N21A)
            for a in range(3):
                for c in range(n1):
                    Q21[a, c] = NA[a, c] + N21A[a, c]
                for b in range(3):
                    Q22[a, b] = N[a, b] + N21[a, b] + N21[b, a] + H22[i, a, b]
                q2[a] = nv[a] + g2[i, a]
            _At_times_vec(nv, Ad[i], C[i], q1)
        else:
            A, B = _materialize(Ad[i], C[i])
            NA[:, :] = _mm(N, A)
            Q11[:, :] = _mtm(A, NA)
            Q21[:, :] = _mtm(B, NA) + _mm(N21, A)
            Q22[:, :] = _mtm(B, _mm(N, B)) + _mm(N21, B) + _mtm(B, N21.T.copy()) + H22[i]
            q1[:] = _mtv(A, nv)
            q2[:] = _mtv(B, nv) + g2[i]
        for a in range(3):
            Q22[a, a] += damping
        ok, _ = _cholesky_into(Q22, L)
        if not ok:
            return Kg, kg, M, m, dE, dEbar, N11[0], n_1[0], i
        Ki = Kg[i]
        for c in range(n1):
            _chol_solve_into(L, Q21[:, c], col)
            for a in range(3):
                Ki[a, c] = -col[a]
        _chol_solve_into(L, q2, kk)
        for a in range(3):
            kk[a] = -kk[a]
            kg[i, a] = kk[a]
        # M = Q11 + Q21' K, symmetrized against rounding
        Mi = M[i]
        for a in range(n1):
            for b in range(n1):
                Mi[a, b] = Q11[a, b] + (Q21[0, a] * Ki[0, b] + Q21[1, a] * Ki[1, b] + Q21[2, a] * Ki[2, b])
        for a in range(n1):
            for b in range(a + 1, n1):
                s = 0.5 * (Mi[a, b] + Mi[b, a])
                Mi[a, b] = s
                Mi[b, a] = s
        for a in range(n1):
            m[i, a] = q1[a] + (Q21[0, a] * kk[0] + Q21[1, a] * kk[1] + Q21[2, a] * kk[2])
        dE[i] = dEbar[i] + 0.5 * (q2[0] * kk[0] + q2[1] * kk[1] + q2[2] * kk[2])
        p = parents[i]
        Np = N11[p]
        for a in range(n1):
            for b in range(n1):
                Np[a, b] += Mi[a, b]
            n_1[p, a] += m[i, a]
        dEbar[p] += dE[i]
    return Kg, kg, M, m, dE, dEbar, N11[0], n_1[0], -1


@njit(cache=True)
def _root_solve(M0, m0, dEbar0):
    n = M0.shape[0]
    L = np.zeros((n, n))
    ok, min_pivot = _cholesky_into(M0, L)
    x0 = np.zeros(n)
    if not ok:
        return x0, 0.0, False, min_pivot
    _chol_solve_into(L, m0, x0)
    dE0 = dEbar0
    acc = 0.0
    for a in range(n):
        x0[a] = -x0[a]
        acc += m0[a] * x0[a]
    return x0, dE0 + 0.5 * acc, True, min_pivot


@njit(cache=True)
def _forward_sweep(parents, dx0, Kg, kg, Ad, C, structured):
    n = parents.shape[0]
    n1 = dx0.shape[0]
    dx = np.zeros((n, n1))
    dW = np.zeros((n, 3))
    dx[0] = dx0
    for i in range(1, n):
        xp = dx[parents[i]]
        for a in range(3):
            acc = 0.0
            for c in range(n1):
                acc += Kg[i, a, c] * xp[c]
            dW[i, a] = acc + kg[i, a]
        if structured:
            _A_times_vec(xp, Ad[i], C[i], dx[i])
            for a in range(3):
                dx[i, a] += dW[i, a]
        else:
            A, B = _materialize(Ad[i], C[i])
            dx[i] = _mv(A, xp) + _mv(B, dW[i])
    return dx, dW


@njit(cache=True)
def _reduced_gradient(parents, g1, g2, Ad, C):
    """Gradient of the objective in the unconstrained coordinates ``(T_0, Omega, beta)``."""
    n = parents.shape[0]
    n1 = g1.shape[1]
    P = n1 - 6
    lam = g1.copy()
    pulled = np.empty(n1)
    out = np.empty(6 + 3 * (n - 1) + P)
    for i in range(n - 1, 0, -1):
        for a in range(3):
            out[6 + 3 * (i - 1) + a] = lam[i, a] + g2[i, a]
        _At_times_vec(lam[i], Ad[i], C[i], pulled)
        lam[parents[i]] += pulled
    out[:6] = lam[0, :6]
    out[6 + 3 * (n - 1):] = lam[0, 6:]
    return out


# ---------------------------------------------------------------- public steps


def build_node_quadratics(lin: Linearization) -> NodeQuadratics:
    """Per-part Gauss-Newton Hessian blocks and gradients ``J'J``, ``J'r``."""
    return NodeQuadratics(*_node_quadratics(lin.r, lin.J1, lin.J2, lin.part_start))


def constraint_blocks(view: PartStateView, problem: Problem):
    """Structured ``A_i`` pieces for all parts: ``(Ad, C)`` arrays."""
    return _constraint_blocks(view.joints, view.rel_t, problem.tree.S)


def backward_sweep(quad: NodeQuadratics, blocks, parents, damping=0.0, structured=True):
    """Leaf-to-root elimination. Returns ``(gains, M0, m0, dEbar0)``."""
    Ad, C = blocks
    Kg, kg, M, m, dE, dEbar, M0, m0, bad = _backward_sweep(
        parents, quad.H11, quad.H21, quad.H22, quad.g1, quad.g2, Ad, C, float(damping), structured
    )
    if bad >= 0:
        raise IndefiniteQ22(int(bad))
    return GainTerms(Kg, kg, M, m, dE, dEbar), M0, m0, float(dEbar[0])


def root_solve(M0, m0, dEbar0=0.0):
    """``dx_0 = -M0^-1 m0`` and the predicted decrease ``dE_0``."""
    x0, dE0, ok, min_pivot = _root_solve(np.asarray(M0, float), np.asarray(m0, float), float(dEbar0))
    if not ok:
        raise SingularRoot(f"root system not positive definite (pivot {min_pivot:.3e})")
    return x0, float(dE0)


def forward_sweep(dx0, gains: GainTerms, blocks, parents, structured=True):
    Ad, C = blocks
    return _forward_sweep(parents, np.asarray(dx0, float), gains.K, gains.k, Ad, C, structured)


def _solve(quad: NodeQuadratics, blocks, parents, damping, structured) -> SparseDirection:
    gains, M0, m0, dEbar0 = backward_sweep(quad, blocks, parents, damping, structured)
    dx0, dE0 = root_solve(M0, m0, dEbar0)
    dx, dW = forward_sweep(dx0, gains, blocks, parents, structured)
    return SparseDirection(dx, dW, dE0)


def gauss_newton_direction(
    view: PartStateView, problem: Problem, damping=0.0, structured=True, lin=None, refine=0
) -> SparseDirection:
    """Exact Gauss-Newton direction in time linear in joints and measurements.

    ``refine`` extra passes re-solve for the correction against the linearized
    residual at the current direction (iterative refinement). Each pass costs
    about one more solve and removes the rounding error of the per-node
    normal equations on badly scaled problems.
    """
    if lin is None:
        lin = linearize(view, problem, with_blocks=False)
    parents = problem.tree.parents
    n = parents.shape[0]
    quad = NodeQuadratics(*_node_quadratics(lin.r, lin.J1, lin.J2, lin.part_start))
    blocks = _constraint_blocks(view.joints, view.rel_t, problem.tree.S)
    direction = _solve(quad, blocks, parents, damping, structured)
    for _ in range(refine):
        r_model = _model_residual(lin.r, lin.J1, lin.J2, lin.row_part, direction.dx, direction.dOmega)
        g1, g2 = _node_gradients(r_model, lin.J1, lin.J2, lin.part_start)
        g1 += damping * direction.dx
        g2 += damping * direction.dOmega
        step = _solve(NodeQuadratics(quad.H11, quad.H21, quad.H22, g1, g2), blocks, parents, damping, structured)
        direction = SparseDirection(direction.dx + step.dx, direction.dOmega + step.dOmega, direction.dE0 + step.dE0)
    return direction


def reduced_gradient(view: PartStateView, problem: Problem, lin=None) -> np.ndarray:
    if lin is None:
        lin = linearize(view, problem, with_blocks=False)
    parents = problem.tree.parents
    quad = _node_quadratics(lin.r, lin.J1, lin.J2, lin.part_start)
    Ad, C = _constraint_blocks(view.joints, view.rel_t, problem.tree.S)
    return _reduced_gradient(parents, quad[3], quad[4], Ad, C)
