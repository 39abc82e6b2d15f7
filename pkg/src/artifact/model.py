"""Articulated model: kinematic tree, shape-dependent offsets, rigid keypoints."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import (
    BadAttachment,
    CycleDetected,
    DimensionMismatch,
    NonTopologicalOrder,
    RootHasNoRelativePose,
)
from .geometry import Pose, reorthonormalize


@dataclass(frozen=True)
class KeypointAttachment:
    id: int
    body_part: int
    V: np.ndarray  # (3, P)
    v0: np.ndarray  # (3,)


@dataclass(frozen=True)
class JointRegressor:
    """Rest-pose joint positions ``J[i] @ beta + c[i]`` for every part."""

    J: np.ndarray  # (K+1, 3, P)
    c: np.ndarray  # (K+1, 3)


@dataclass
class KinematicTree:
    """Parent array plus shape basis.

    ``parents[0]`` is -1. ``S`` and ``l`` are indexed by part; the root rows are
    unused and kept at zero so per-part arrays line up.
    """

    parents: np.ndarray  # (K+1,) int
    S: np.ndarray  # (K+1, 3, P)
    l: np.ndarray  # (K+1, 3)
    attachments: list[KeypointAttachment] = field(default_factory=list)

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.S = np.asarray(self.S, dtype=float)
        self.l = np.asarray(self.l, dtype=float)
        if self.S.ndim == 2:
            self.S = self.S.reshape(self.S.shape[0], 3, 0)

    @property
    def K(self) -> int:
        return len(self.parents) - 1

    @property
    def P(self) -> int:
        return self.S.shape[2]

    def children(self, i: int) -> list[int]:
        return [j for j in range(1, self.K + 1) if self.parents[j] == i]

    def descendants(self, i: int) -> list[int]:
        out = []
        stack = self.children(i)
        while stack:
            j = stack.pop()
            out.append(j)
            stack.extend(self.children(j))
        return sorted(out)

    def path(self, i: int) -> list[int]:
        """Parts from the root down to ``i`` inclusive."""
        out = [i]
        while out[-1] != 0:
            out.append(int(self.parents[out[-1]]))
        return out[::-1]

    def attachment(self, keypoint_id: int) -> KeypointAttachment:
        for att in self.attachments:
            if att.id == keypoint_id:
                return att
        raise BadAttachment(f"unknown keypoint {keypoint_id}")


@dataclass
class ModelState:
    root: Pose
    joints: np.ndarray  # (K, 3, 3): joint i is joints[i-1]
    shape: np.ndarray  # (P,)

    @classmethod
    def rest(cls, K: int, P: int) -> ModelState:
        return cls(Pose.identity(), np.tile(np.eye(3), (K, 1, 1)), np.zeros(P))

    def joint(self, i: int) -> np.ndarray:
        return self.joints[i - 1]

    def copy(self) -> ModelState:
        return ModelState(Pose(self.root.R.copy(), self.root.t.copy()), self.joints.copy(), self.shape.copy())


@dataclass
class PartStateView:
    """Per-part poses and shape copies of the constrained formulation.

    ``joints[0]`` is the identity placeholder for the root's dummy joint and
    ``rel_t[i]`` caches ``S_i beta + l_i``.
    """

    R: np.ndarray  # (K+1, 3, 3)
    t: np.ndarray  # (K+1, 3)
    betas: np.ndarray  # (K+1, P)
    joints: np.ndarray  # (K+1, 3, 3)
    rel_t: np.ndarray  # (K+1, 3)

    def pose(self, i: int) -> Pose:
        return Pose(self.R[i], self.t[i])


def validate_tree(tree: KinematicTree) -> None:
    """Raise on the first violated tree invariant."""
    parents = tree.parents
    n = len(parents)
    if n < 1 or parents[0] != -1:
        raise DimensionMismatch("parents[0] must be -1 (root)")
    for i in range(1, n):
        if not 0 <= parents[i] < n:
            raise DimensionMismatch(f"parent of {i} out of range: {parents[i]}")
    for i in range(1, n):
        seen = {i}
        j = int(parents[i])
        while j != 0:
            if j in seen:
                raise CycleDetected(f"cycle through part {j}")
            seen.add(j)
            j = int(parents[j])
    for i in range(1, n):
        if parents[i] >= i:
            raise NonTopologicalOrder(f"parent of {i} is {parents[i]}")
    if tree.S.shape[:2] != (n, 3) or tree.l.shape != (n, 3):
        raise DimensionMismatch("shape basis must be (K+1, 3, P) with offsets (K+1, 3)")
    P = tree.P
    for att in tree.attachments:
        if not 0 <= att.body_part < n:
            raise BadAttachment(f"keypoint {att.id} attached to missing part {att.body_part}")
        if np.shape(att.V) != (3, P) or np.shape(att.v0) != (3,):
            raise DimensionMismatch(f"keypoint {att.id} has bad V/v0 shape")


def extract_shape_basis(reg: JointRegressor, parents) -> tuple[np.ndarray, np.ndarray]:
    """Parent-relative offsets: ``S_i = J_i - J_par(i)`` and ``l_i = c_i - c_par(i)``."""
    J = np.asarray(reg.J, dtype=float)
    c = np.asarray(reg.c, dtype=float)
    parents = np.asarray(parents)
    n = len(parents)
    if J.ndim != 3 or J.shape[:2] != (n, 3) or c.shape != (n, 3):
        raise DimensionMismatch(f"regressor shapes {J.shape}, {c.shape} do not match {n} parts")
    S = np.zeros_like(J)
    l = np.zeros_like(c)
    S[1:] = J[1:] - J[parents[1:]]
    l[1:] = c[1:] - c[parents[1:]]
    return S, l


def attachment_from_regressor(keypoint_id, body_part, Jv, cv, reg: JointRegressor) -> KeypointAttachment:
    """Rigid attachment of a rest-pose point ``Jv @ beta + cv`` to ``body_part``."""
    V = np.asarray(Jv, dtype=float) - reg.J[body_part]
    v0 = np.asarray(cv, dtype=float) - reg.c[body_part]
    return KeypointAttachment(keypoint_id, body_part, V, v0)


def relative_pose(omega_i, beta, tree: KinematicTree, i: int) -> Pose:
    if i == 0:
        raise RootHasNoRelativePose("the root has no parent joint")
    return Pose(np.asarray(omega_i, dtype=float), tree.S[i] @ beta + tree.l[i])


@njit(cache=True)
def _forward_kinematics(parents, S, l, R0, t0, joints, beta):
    n = parents.shape[0]
    P = beta.shape[0]
    R = np.empty((n, 3, 3))
    t = np.empty((n, 3))
    rel = np.zeros((n, 3))
    R[0] = R0
    t[0] = t0
    for i in range(1, n):
        p = parents[i]
        for a in range(3):
            acc = l[i, a]
            for k in range(P):
                acc += S[i, a, k] * beta[k]
            rel[i, a] = acc
        for a in range(3):
            for b in range(3):
                acc = 0.0
                for c in range(3):
                    acc += R[p, a, c] * joints[i, c, b]
                R[i, a, b] = acc
            acc = t[p, a]
            for c in range(3):
                acc += R[p, a, c] * rel[i, c]
            t[i, a] = acc
    return R, t, rel


def full_joints(state: ModelState) -> np.ndarray:
    """Joint rotations indexed by part, identity at the root."""
    K = state.joints.shape[0]
    out = np.empty((K + 1, 3, 3))
    out[0] = np.eye(3)
    out[1:] = state.joints
    return out


def forward_kinematics(state: ModelState, tree: KinematicTree) -> PartStateView:
    if state.joints.shape != (tree.K, 3, 3) or state.shape.shape != (tree.P,):
        raise DimensionMismatch("state does not match tree")
    joints = full_joints(state)
    beta = np.ascontiguousarray(state.shape, dtype=float)
    R, t, rel = _forward_kinematics(tree.parents, tree.S, tree.l, state.root.R, state.root.t, joints, beta)
    betas = np.tile(beta, (tree.K + 1, 1))
    return PartStateView(R, t, betas, joints, rel)


def keypoint_position(view: PartStateView, att: KeypointAttachment, beta) -> np.ndarray:
    i = att.body_part
    return view.R[i] @ (att.V @ beta + att.v0) + view.t[i]


def check_view(view: PartStateView, tree: KinematicTree, tol=1e-12) -> None:
    """Assert the constrained-formulation consistency conditions."""
    for i in range(1, tree.K + 1):
        p = tree.parents[i]
        assert np.allclose(view.betas[i], view.betas[p], rtol=0, atol=tol)
        T = view.pose(p) @ relative_pose(view.joints[i], view.betas[p], tree, i)
        assert np.allclose(T.R, view.R[i], rtol=0, atol=tol)
        assert np.allclose(T.t, view.t[i], rtol=0, atol=tol)


def normalize_state(state: ModelState) -> ModelState:
    """Project every rotation back onto SO(3) if it drifted."""
    joints = np.array([reorthonormalize(Rj) for Rj in state.joints]).reshape(state.joints.shape)
    return ModelState(Pose(reorthonormalize(state.root.R), state.root.t), joints, state.shape)
