"""Dense reference solver over the unconstrained variables ``(T_0, Omega, beta)``.

Every part pose is a function of the root pose, all joint rotations on its
path and the shape, so the chain rule gives one dense Jacobian and one dense
normal-equation solve. Cost is cubic in the number of joints; this module is
the straightforward oracle the sparse solver is tested against.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numba import njit
from scipy.linalg.blas import dsyrk

from .errors import DimensionMismatch, SingularSystem
from .model import KinematicTree, PartStateView
from .residuals import Linearization, Problem, _constraint_blocks, linearize

MAX_DAMPING = 1e6


@dataclass
class Sensitivities:
    """``d x_i / d (T_0, Omega, beta)`` for every part, ``x_i = (T_i, beta_i)``.

    ``D`` has shape ``(K+1, 6+P, 6+3K+P)``; columns follow :func:`layout`.
    """

    D: np.ndarray
    K: int
    P: int

    def wrt_root(self, i):
        return self.D[i, :6, :6]

    def wrt_joints(self, i):
        return self.D[i, :6, 6 : 6 + 3 * self.K]

    def wrt_shape(self, i):
        return self.D[i, :6, 6 + 3 * self.K :]


@dataclass
class DenseSystem:
    H: np.ndarray
    g: np.ndarray
    r: np.ndarray | None = None
    J: np.ndarray | None = None

    def model_change(self, dx) -> float:
        """Quadratic model ``0.5 dx'H dx + g'dx``."""
        return float(0.5 * dx @ self.H @ dx + self.g @ dx)


@dataclass
class DenseDirection:
    dx: np.ndarray  # [dT_0 (6); dOmega (3K); dbeta (P)]
    damping: float
    dE0: float  # model change at dx under the damped Hessian
    K: int
    P: int

    @property
    def d_root(self):
        return self.dx[:6]

    @property
    def d_joints(self):
        return self.dx[6 : 6 + 3 * self.K].reshape(self.K, 3)

    @property
    def d_shape(self):
        return self.dx[6 + 3 * self.K :]

    def unconstrained(self) -> np.ndarray:
        return self.dx


def layout(K: int, P: int) -> dict:
    """Column slices of the unconstrained direction."""
    return {"root": slice(0, 6), "joints": slice(6, 6 + 3 * K), "shape": slice(6 + 3 * K, 6 + 3 * K + P)}


def joint_columns(i: int) -> slice:
    return slice(6 + 3 * (i - 1), 6 + 3 * i)


@njit(cache=True)
def _propagate(parents, Ad, C, K, P):
    n = 6 + 3 * K + P
    D = np.zeros((K + 1, 6 + P, n))
    for a in range(6):
        D[0, a, a] = 1.0
    for k in range(P):
        for i in range(K + 1):
            D[i, 6 + k, 6 + 3 * K + k] = 1.0
    for i in range(1, K + 1):
        par = parents[i]
        # top rows: Ad_i D_par[:6] + C_i D_par[6:], and D_par[6:] = [0 | I]
        for a in range(6):
            for c in range(n):
                acc = 0.0
                for l in range(6):
                    acc += Ad[i, a, l] * D[par, l, c]
                D[i, a, c] = acc
            for k in range(P):
                D[i, a, 6 + 3 * K + k] += C[i, a, k]
        for a in range(3):
            D[i, a, 6 + 3 * (i - 1) + a] += 1.0
    return D


@njit(cache=True)
def _assemble(J1, J2, part_start, D):
    n_parts = part_start.shape[0] - 1
    n1 = J1.shape[1]
    n = D.shape[2]
    P = n1 - 6
    K = n_parts - 1
    J = np.zeros((J1.shape[0], n))
    for i in range(n_parts):
        Di = D[i]
        o = 6 + 3 * (i - 1)
        for row in range(part_start[i], part_start[i + 1]):
            Jr = J[row]
            # pose rows of D_i are dense; its shape rows are [0 | I]
            for l in range(6):
                coef = J1[row, l]
                if coef != 0.0:
                    for c in range(n):
                        Jr[c] += coef * Di[l, c]
            for k in range(P):
                Jr[6 + 3 * K + k] += J1[row, 6 + k]
            if i > 0:
                for a in range(3):
                    Jr[o + a] += J2[row, a]
    return J


def propagate_chain_rule(view: PartStateView, tree: KinematicTree, blocks=None) -> Sensitivities:
    """Push the root/shape/joint sensitivities down the tree in index order."""
    if blocks is None:
        blocks = _constraint_blocks(view.joints, view.rel_t, tree.S)
    Ad, C = blocks
    return Sensitivities(_propagate(tree.parents, Ad, C, tree.K, tree.P), tree.K, tree.P)


def assemble_dense(lin: Linearization, sens: Sensitivities, problem: Problem, keep_jacobian=False) -> DenseSystem:
    """Stack ``J1_i D_i + [J2_i in the Omega_i columns]`` and form ``J'J``, ``J'r``."""
    if lin.J1.shape[1] != sens.D.shape[1] or len(lin.r) != problem.n_rows:
        raise DimensionMismatch("linearization and sensitivities disagree")
    J = _assemble(lin.J1, lin.J2, lin.part_start, sens.D)
    # J.T is Fortran-ordered, so syrk reads it without a copy; it fills the upper triangle
    H = dsyrk(1.0, J.T)
    H = np.triu(H) + np.triu(H, 1).T
    g = J.T @ lin.r
    return DenseSystem(H, g, lin.r if keep_jacobian else None, J if keep_jacobian else None)


def solve_dense(system: DenseSystem, damping: float = 0.0, K: int | None = None, P: int = 0, refine=0) -> DenseDirection:
    """``dx = -(H + damping I)^-1 g`` by Cholesky; damping escalates x10 on failure.

    With ``refine > 0`` the solution is corrected against the residual of the
    normal equations, computed through ``J`` when the system kept it.
    """
    H, g = system.H, system.g
    n = len(g)
    if K is None:
        K = (n - 6 - P) // 3
    lam = float(damping)
    floor = 1e-12 * max(1.0, float(np.abs(np.diag(H)).max(initial=0.0)))
    while True:
        try:
            factor = scipy.linalg.cho_factor(H + lam * np.eye(n), lower=True, check_finite=True)
            break
        except np.linalg.LinAlgError:
            if lam >= MAX_DAMPING:
                pivot = float(np.linalg.eigvalsh(H + lam * np.eye(n))[0])
                raise SingularSystem(f"normal equations singular at damping {lam:g}", pivot) from None
            lam = min(MAX_DAMPING, max(10.0 * lam, floor))
    dx = -scipy.linalg.cho_solve(factor, g)
    for _ in range(refine):
        if system.J is not None:
            res = system.J.T @ (system.J @ dx + system.r) + lam * dx
        else:
            res = H @ dx + g + lam * dx
        dx = dx - scipy.linalg.cho_solve(factor, res)
    dE0 = float(g @ dx + 0.5 * dx @ (H @ dx) + 0.5 * lam * dx @ dx)
    return DenseDirection(dx, lam, dE0, K, P)


def dense_direction(view: PartStateView, problem: Problem, damping=0.0, lin=None, refine=0) -> DenseDirection:
    if lin is None:
        lin = linearize(view, problem, with_blocks=False)
    sens = propagate_chain_rule(view, problem.tree)
    system = assemble_dense(lin, sens, problem, keep_jacobian=refine > 0)
    return solve_dense(system, damping, problem.K, problem.P, refine)


def dense_gradient(view: PartStateView, problem: Problem, lin=None) -> np.ndarray:
    if lin is None:
        lin = linearize(view, problem, with_blocks=False)
    sens = propagate_chain_rule(view, problem.tree)
    return assemble_dense(lin, sens, problem).g
