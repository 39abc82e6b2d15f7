"""Loss terms as per-part residual blocks with analytic Jacobians.

Every residual row belongs to exactly one body part ``i`` and depends only on
``x_i = (T_i, beta_i)`` and the joint rotation ``Omega_i``. ``J1`` is the
derivative with respect to ``[dT_i (6); dbeta_i (P)]`` and ``J2`` with respect
to ``dOmega_i``, both under right-multiplicative perturbations.

Weights are folded in as square-root row scaling, so ``0.5 * ||r||^2`` of the
stacked rows is the weighted objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import (
    AngleNearPi,
    BehindCamera,
    DegenerateBone,
    DimensionMismatch,
    RootHasNoConstraint,
)
from .geometry import (
    NEAR_PI_TRACE,
    Pose,
    _hat,
    _mm3,
    _mv3,
    _se3_jr_inv_into,
    _se3_log,
    _so3_jr_inv_into,
    _so3_log,
    se3_log,
    so3_log,
)
from .model import KeypointAttachment, KinematicTree, PartStateView, relative_pose

KP2D, KP3D, POF = 0, 1, 2
KIND_CODES = {"kp2d": KP2D, "kp3d": KP3D, "pof": POF}
KIND_ROWS = {KP2D: 2, KP3D: 3, POF: 3}

Z_MIN = 1e-6
MIN_BONE = 1e-8

OK, SKIP_BEHIND_CAMERA, SKIP_DEGENERATE_BONE, NEAR_PI = 0, 1, 2, 3


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 1.0
    fy: float = 1.0
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy], dtype=float)


@dataclass(frozen=True)
class Measurement:
    kind: str  # "kp2d" | "kp3d" | "pof"
    keypoint: int
    value: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ValueError(f"unknown measurement kind {self.kind!r}")
        value = np.asarray(self.value, dtype=float)
        if value.shape != ((2,) if self.kind == "kp2d" else (3,)):
            raise DimensionMismatch(f"{self.kind} value has shape {value.shape}")
        if self.kind == "pof" and abs(np.linalg.norm(value) - 1.0) > 1e-9:
            raise ValueError("orientation measurements must be unit vectors")
        if self.weight < 0:
            raise ValueError("negative measurement weight")
        object.__setattr__(self, "value", value)


@dataclass(frozen=True)
class JointPrior:
    mean: np.ndarray  # (3, 3) rotation
    weight: np.ndarray = field(default_factory=lambda: np.eye(3))  # (3, 3) SPD


@dataclass
class ObjectiveConfig:
    """Loss weights and optional priors.

    ``pose_priors`` maps part index to a prior pose, ``joint_priors`` maps joint
    index (1..K) to a :class:`JointPrior`. The 2D keypoint term has unit weight.
    """

    w_3d: float = 1.0
    w_pof: float = 1.0
    w_pose: float = 1e-2
    w_joint: float = 1e-2
    w_shape: float = 1e-2
    pose_priors: dict = field(default_factory=dict)
    joint_priors: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("w_3d", "w_pof", "w_pose", "w_joint", "w_shape"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def kind_weight(self, kind: str) -> float:
        return {"kp2d": 1.0, "kp3d": self.w_3d, "pof": self.w_pof}[kind]


@dataclass
class ResidualBlock:
    part: int
    r: np.ndarray
    J1: np.ndarray
    J2: np.ndarray

    @property
    def rows(self) -> int:
        return self.r.shape[0]


@dataclass
class ConstraintDerivatives:
    """Derivatives of ``x_i = (F_i(T_par, beta_par, Omega_i), beta_par)``.

    ``pose_block`` is dT_i/dT_par (6x6), ``shape_block`` dT_i/dbeta_par (6xP).
    The bottom rows of A are ``[0 | I]`` and of B are zero by construction.
    """

    pose_block: np.ndarray
    shape_block: np.ndarray
    rot_block: np.ndarray  # dT_i/dOmega_i (6x3)

    @property
    def A(self) -> np.ndarray:
        P = self.shape_block.shape[1]
        A = np.zeros((6 + P, 6 + P))
        A[:6, :6] = self.pose_block
        A[:6, 6:] = self.shape_block
        A[6:, 6:] = np.eye(P)
        return A

    @property
    def B(self) -> np.ndarray:
        P = self.shape_block.shape[1]
        B = np.zeros((6 + P, 3))
        B[:6] = self.rot_block
        return B


# ---------------------------------------------------------------- kernels


@njit(cache=True, inline="always")
def _keypoint_rows(kind, R, t, beta, V, v0, val, cam, sw, r, J1, G):
    """Fill ``r``/``J1`` for one keypoint measurement; returns a status code.

    ``G`` is a ``(3, 6+P)`` scratch buffer.
    """
    P = beta.shape[0]
    p0 = v0[0]
    p1 = v0[1]
    p2 = v0[2]
    for k in range(P):
        p0 += V[0, k] * beta[k]
        p1 += V[1, k] * beta[k]
        p2 += V[2, k] * beta[k]
    # G = d(R p + t)/d[w, v, beta] = [-R [p]x, R, R V]
    for a in range(3):
        Ra0 = R[a, 0]
        Ra1 = R[a, 1]
        Ra2 = R[a, 2]
        G[a, 0] = Ra2 * p1 - Ra1 * p2
        G[a, 1] = Ra0 * p2 - Ra2 * p0
        G[a, 2] = Ra1 * p0 - Ra0 * p1
        G[a, 3] = Ra0
        G[a, 4] = Ra1
        G[a, 5] = Ra2
        for k in range(P):
            G[a, 6 + k] = Ra0 * V[0, k] + Ra1 * V[1, k] + Ra2 * V[2, k]
    d0 = R[0, 0] * p0 + R[0, 1] * p1 + R[0, 2] * p2
    d1 = R[1, 0] * p0 + R[1, 1] * p1 + R[1, 2] * p2
    d2 = R[2, 0] * p0 + R[2, 1] * p1 + R[2, 2] * p2
    n1 = 6 + P
    if kind == KP3D:
        r[0] = sw * (d0 + t[0] - val[0])
        r[1] = sw * (d1 + t[1] - val[1])
        r[2] = sw * (d2 + t[2] - val[2])
        for a in range(3):
            for c in range(n1):
                J1[a, c] = sw * G[a, c]
        return OK
    if kind == KP2D:
        x = d0 + t[0]
        y = d1 + t[1]
        z = d2 + t[2]
        if z <= Z_MIN:
            return SKIP_BEHIND_CAMERA
        iz = 1.0 / z
        sx = sw * cam[0] * iz
        sy = sw * cam[1] * iz
        xz = x * iz
        yz = y * iz
        r[0] = sw * (cam[0] * xz + cam[2] - val[0])
        r[1] = sw * (cam[1] * yz + cam[3] - val[1])
        for c in range(n1):
            J1[0, c] = sx * (G[0, c] - xz * G[2, c])
            J1[1, c] = sy * (G[1, c] - yz * G[2, c])
        return OK
    # part orientation field: direction of d = v - t, independent of the translation
    n = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    if n <= MIN_BONE:
        return SKIP_DEGENERATE_BONE
    u0 = d0 / n
    u1 = d1 / n
    u2 = d2 / n
    r[0] = sw * (u0 - val[0])
    r[1] = sw * (u1 - val[1])
    r[2] = sw * (u2 - val[2])
    s = sw / n
    for c in range(n1):
        if 3 <= c < 6:
            continue
        ug = u0 * G[0, c] + u1 * G[1, c] + u2 * G[2, c]
        J1[0, c] = s * (G[0, c] - u0 * ug)
        J1[1, c] = s * (G[1, c] - u1 * ug)
        J1[2, c] = s * (G[2, c] - u2 * ug)
    return OK


@njit(cache=True)
def _pose_prior_rows(R, t, Rh, th, sw, r, J1, work):
    e, c = _se3_log(_mm3(Rh.T, R), _mv3(Rh.T, t - th))
    if c <= -1.0 + NEAR_PI_TRACE:
        return NEAR_PI
    Jinv = work[12:16].reshape(6, 6)
    _se3_jr_inv_into(e, Jinv, work)
    for a in range(6):
        r[a] = sw * e[a]
        for b in range(6):
            J1[a, b] = sw * Jinv[a, b]
    return OK


@njit(cache=True)
def _joint_prior_rows(Om, Oh, Wr, r, J2, work):
    e, c = _so3_log(_mm3(Oh.T, Om))
    if c <= -1.0 + NEAR_PI_TRACE:
        return NEAR_PI
    Ji = work[0]
    _so3_jr_inv_into(e, Ji)
    for a in range(3):
        r[a] = Wr[a, 0] * e[0] + Wr[a, 1] * e[1] + Wr[a, 2] * e[2]
        for b in range(3):
            J2[a, b] = Wr[a, 0] * Ji[0, b] + Wr[a, 1] * Ji[1, b] + Wr[a, 2] * Ji[2, b]
    return OK


@njit(cache=True)
def _linearize(
    R, t, betas, joints,
    kp_kind, kp_part, kp_V, kp_v0, kp_val, kp_sw, kp_row, cam,
    pp_part, pp_R, pp_t, pp_sw, pp_row,
    jp_joint, jp_R, jp_W, jp_row,
    shape_sw, shape_row, n_rows,
):
    P = betas.shape[1]
    r = np.zeros(n_rows)
    J1 = np.zeros((n_rows, 6 + P))
    J2 = np.zeros((n_rows, 3))
    kp_status = np.zeros(kp_kind.shape[0], dtype=np.int64)
    prior_status = OK
    G = np.empty((3, 6 + P))
    work = np.empty((16, 3, 3))
    for m in range(kp_kind.shape[0]):
        i = kp_part[m]
        o = kp_row[m]
        kp_status[m] = _keypoint_rows(
            kp_kind[m], R[i], t[i], betas[i], kp_V[m], kp_v0[m], kp_val[m], cam, kp_sw[m],
            r[o:o + 3], J1[o:o + 3], G,
        )
    for m in range(pp_part.shape[0]):
        i = pp_part[m]
        o = pp_row[m]
        if _pose_prior_rows(R[i], t[i], pp_R[m], pp_t[m], pp_sw[m], r[o:o + 6], J1[o:o + 6], work) != OK:
            prior_status = NEAR_PI
    for m in range(jp_joint.shape[0]):
        i = jp_joint[m]
        o = jp_row[m]
        if _joint_prior_rows(joints[i], jp_R[m], jp_W[m], r[o:o + 3], J2[o:o + 3], work) != OK:
            prior_status = NEAR_PI
    for k in range(P):
        r[shape_row + k] = shape_sw * betas[0, k]
        J1[shape_row + k, 6 + k] = shape_sw
    return r, J1, J2, kp_status, prior_status


@njit(cache=True)
def _constraint_blocks(joints, rel_t, S):
    """Per-part dT_i/dT_par (6x6) and dT_i/dbeta_par (6xP); dT_i/dOmega_i is [I; 0]."""
    n = joints.shape[0]
    P = S.shape[2]
    Ad = np.zeros((n, 6, 6))
    C = np.zeros((n, 6, P))
    for i in range(1, n):
        Ot = joints[i].T
        X = -_mm3(Ot, _hat(rel_t[i]))
        for a in range(3):
            for b in range(3):
                Ad[i, a, b] = Ot[a, b]
                Ad[i, 3 + a, 3 + b] = Ot[a, b]
                Ad[i, 3 + a, b] = X[a, b]
            for k in range(P):
                C[i, 3 + a, k] = Ot[a, 0] * S[i, 0, k] + Ot[a, 1] * S[i, 1, k] + Ot[a, 2] * S[i, 2, k]
    return Ad, C


# ---------------------------------------------------------------- compiled problem


@dataclass
class Problem:
    """Tree, measurements and objective packed into flat arrays for the kernels."""

    tree: KinematicTree
    camera: CameraIntrinsics
    config: ObjectiveConfig
    measurements: list
    kp_kind: np.ndarray
    kp_part: np.ndarray
    kp_V: np.ndarray
    kp_v0: np.ndarray
    kp_val: np.ndarray
    kp_sw: np.ndarray
    kp_row: np.ndarray
    pp_part: np.ndarray
    pp_R: np.ndarray
    pp_t: np.ndarray
    pp_sw: np.ndarray
    pp_row: np.ndarray
    jp_joint: np.ndarray
    jp_R: np.ndarray
    jp_W: np.ndarray
    jp_row: np.ndarray
    shape_sw: float
    shape_row: int
    n_rows: int
    row_part: np.ndarray
    part_start: np.ndarray

    @property
    def K(self) -> int:
        return self.tree.K

    @property
    def P(self) -> int:
        return self.tree.P

    @property
    def N(self) -> int:
        return len(self.measurements)


def _sqrt_spd(W) -> np.ndarray:
    w, U = np.linalg.eigh(0.5 * (W + W.T))
    if w.min() < -1e-12 * max(1.0, abs(w).max()):
        raise ValueError("joint prior weight must be positive semidefinite")
    return (U * np.sqrt(np.clip(w, 0, None))) @ U.T


def compile_problem(tree: KinematicTree, measurements, camera: CameraIntrinsics, config: ObjectiveConfig) -> Problem:
    """Pack everything into flat arrays.

    Rows are grouped by body part (keypoints in measurement order, then the
    pose prior, the joint prior and, for the root, the shape prior), so the
    rows of part ``i`` are ``part_start[i]:part_start[i+1]``.
    """
    K, P = tree.K, tree.P
    atts = {att.id: att for att in tree.attachments}
    m = len(measurements)
    kp_kind = np.zeros(m, dtype=np.int64)
    kp_part = np.zeros(m, dtype=np.int64)
    kp_V = np.zeros((m, 3, P))
    kp_v0 = np.zeros((m, 3))
    kp_val = np.zeros((m, 3))
    kp_sw = np.zeros(m)
    kp_row = np.zeros(m, dtype=np.int64)
    for k, meas in enumerate(measurements):
        att = atts.get(meas.keypoint)
        if att is None:
            raise DimensionMismatch(f"measurement references unknown keypoint {meas.keypoint}")
        kp_kind[k] = KIND_CODES[meas.kind]
        kp_part[k] = att.body_part
        kp_V[k] = att.V
        kp_v0[k] = att.v0
        kp_val[k, : meas.value.size] = meas.value
        kp_sw[k] = math.sqrt(config.kind_weight(meas.kind) * meas.weight)

    pose_items = sorted(config.pose_priors.items())
    for i, _ in pose_items:
        if not 0 <= i <= K:
            raise DimensionMismatch(f"pose prior on missing part {i}")
    pp_part = np.array([i for i, _ in pose_items], dtype=np.int64)
    pp_R = np.array([T.R for _, T in pose_items], dtype=float).reshape(-1, 3, 3)
    pp_t = np.array([T.t for _, T in pose_items], dtype=float).reshape(-1, 3)
    pp_sw = np.full(len(pose_items), math.sqrt(config.w_pose))
    pp_row = np.zeros(len(pose_items), dtype=np.int64)

    joint_items = sorted(config.joint_priors.items())
    for i, _ in joint_items:
        if not 1 <= i <= K:
            raise DimensionMismatch(f"joint prior on missing joint {i}")
    jp_joint = np.array([i for i, _ in joint_items], dtype=np.int64)
    jp_R = np.array([jp.mean for _, jp in joint_items], dtype=float).reshape(-1, 3, 3)
    jp_W = np.array(
        [math.sqrt(config.w_joint) * _sqrt_spd(np.asarray(jp.weight, float)) for _, jp in joint_items]
    ).reshape(-1, 3, 3)
    jp_row = np.zeros(len(joint_items), dtype=np.int64)

    # (part, group, index, rows); group orders keypoints < pose < joint < shape
    items = [(int(kp_part[k]), 0, k, KIND_ROWS[kp_kind[k]]) for k in range(m)]
    items += [(int(i), 1, k, 6) for k, i in enumerate(pp_part)]
    items += [(int(i), 2, k, 3) for k, i in enumerate(jp_joint)]
    items.append((0, 3, 0, P))
    items.sort()
    counts = np.zeros(K + 1, dtype=np.int64)
    row = 0
    shape_row = 0
    targets = (kp_row, pp_row, jp_row)
    for part, group, k, rows in items:
        counts[part] += rows
        if group == 3:
            shape_row = row
        else:
            targets[group][k] = row
        row += rows
    part_start = np.concatenate([[0], np.cumsum(counts)])
    row_part = np.repeat(np.arange(K + 1), counts)
    return Problem(
        tree, camera, config, list(measurements),
        kp_kind, kp_part, kp_V, kp_v0, kp_val, kp_sw, kp_row,
        pp_part, pp_R, pp_t, pp_sw, pp_row,
        jp_joint, jp_R, jp_W, jp_row,
        math.sqrt(config.w_shape), shape_row, row, row_part, part_start,
    )


@dataclass
class Linearization:
    """All residual rows at one linearization point, tagged by body part."""

    r: np.ndarray
    J1: np.ndarray
    J2: np.ndarray
    row_part: np.ndarray
    row_valid: np.ndarray
    skipped: dict
    part_start: np.ndarray

    @property
    def objective(self) -> float:
        return 0.5 * float(self.r @ self.r)

    def block(self, i: int) -> ResidualBlock:
        mask = (self.row_part == i) & self.row_valid
        return ResidualBlock(i, self.r[mask], self.J1[mask], self.J2[mask])


def linearize(view: PartStateView, problem: Problem, with_blocks: bool = True) -> Linearization:
    """Residuals and block Jacobians of every term; skipped measurements contribute zero rows."""
    r, J1, J2, kp_status, prior_status = _linearize(
        view.R, view.t, view.betas, view.joints,
        problem.kp_kind, problem.kp_part, problem.kp_V, problem.kp_v0, problem.kp_val,
        problem.kp_sw, problem.kp_row, problem.camera.array(),
        problem.pp_part, problem.pp_R, problem.pp_t, problem.pp_sw, problem.pp_row,
        problem.jp_joint, problem.jp_R, problem.jp_W, problem.jp_row,
        problem.shape_sw, problem.shape_row, problem.n_rows,
    )
    if prior_status != OK:
        raise AngleNearPi("prior residual evaluated within 1e-9 of the cut locus")
    skipped = {}
    valid = None
    if kp_status.any():
        skipped = {
            "behind_camera": int((kp_status == SKIP_BEHIND_CAMERA).sum()),
            "degenerate_bone": int((kp_status == SKIP_DEGENERATE_BONE).sum()),
        }
    if with_blocks:
        valid = np.ones(problem.n_rows, dtype=bool)
        for m in np.flatnonzero(kp_status):
            o = problem.kp_row[m]
            valid[o:o + KIND_ROWS[problem.kp_kind[m]]] = False
    return Linearization(r, J1, J2, problem.row_part, valid, skipped, problem.part_start)


def assemble_block(view: PartStateView, problem: Problem, i: int) -> ResidualBlock:
    return linearize(view, problem).block(i)


def objective(view: PartStateView, problem: Problem) -> float:
    return linearize(view, problem, with_blocks=False).objective


# ---------------------------------------------------------------- single terms


def _unweighted_keypoint(kind, view, att, value, cam, jacobian):
    i = att.body_part
    P = view.betas.shape[1]
    rows = KIND_ROWS[kind]
    r = np.zeros(3)
    J1 = np.zeros((3, 6 + P))
    val = np.zeros(3)
    val[: len(value)] = value
    status = _keypoint_rows(
        kind, view.R[i], view.t[i], view.betas[i], np.asarray(att.V, float).reshape(3, P),
        np.asarray(att.v0, float), val, cam, 1.0, r, J1, np.empty((3, 6 + P)),
    )
    if status == SKIP_BEHIND_CAMERA:
        raise BehindCamera(f"keypoint {att.id} is behind the camera")
    if status == SKIP_DEGENERATE_BONE:
        raise DegenerateBone(f"keypoint {att.id} coincides with its part origin")
    if jacobian:
        return r[:rows], J1[:rows], np.zeros((rows, 3))
    return r[:rows]


def residual_2d(view: PartStateView, att: KeypointAttachment, meas, cam: CameraIntrinsics, jacobian=False):
    """Reprojection error ``Pi_K(v_j) - v_hat``."""
    value = meas.value if isinstance(meas, Measurement) else np.asarray(meas, float)
    return _unweighted_keypoint(KP2D, view, att, value, cam.array(), jacobian)


def residual_3d(view: PartStateView, att: KeypointAttachment, meas, jacobian=False):
    value = meas.value if isinstance(meas, Measurement) else np.asarray(meas, float)
    return _unweighted_keypoint(KP3D, view, att, value, np.zeros(4), jacobian)


def residual_pof(view: PartStateView, att: KeypointAttachment, meas, jacobian=False):
    """Unit bone direction ``(v_j - t_i)/||v_j - t_i||`` minus the measured direction."""
    value = meas.value if isinstance(meas, Measurement) else np.asarray(meas, float)
    return _unweighted_keypoint(POF, view, att, value, np.zeros(4), jacobian)


def residual_pose_prior(view: PartStateView, prior: Pose, i: int, jacobian=False):
    """Geodesic pose error ``log(T_hat^-1 T_i)``."""
    P = view.betas.shape[1]
    r = np.zeros(6)
    J1 = np.zeros((6, 6 + P))
    if _pose_prior_rows(view.R[i], view.t[i], prior.R, prior.t, 1.0, r, J1, np.empty((16, 3, 3))) != OK:
        raise AngleNearPi("pose prior residual near pi")
    if jacobian:
        return r, J1, np.zeros((6, 3))
    return r


def residual_joint_prior(omega_i, prior_mean, weight_root, jacobian=False):
    """``W^(1/2) log(Omega_hat^T Omega_i)``; the Jacobian is with respect to dOmega_i."""
    r = np.zeros(3)
    J2 = np.zeros((3, 3))
    status = _joint_prior_rows(
        np.asarray(omega_i, float), np.asarray(prior_mean, float), np.asarray(weight_root, float), r, J2,
        np.empty((16, 3, 3)),
    )
    if status != OK:
        raise AngleNearPi("joint prior residual near pi")
    if jacobian:
        return r, J2
    return r


def residual_shape_prior(beta, jacobian=False):
    beta = np.asarray(beta, dtype=float)
    if jacobian:
        P = beta.size
        J1 = np.zeros((P, 6 + P))
        J1[:, 6:] = np.eye(P)
        return beta.copy(), J1
    return beta.copy()


def constraint_map(T_par: Pose, beta_par, omega_i, tree: KinematicTree, i: int) -> Pose:
    """``F_i``: the child pose implied by the parent pose, shape and joint rotation."""
    if i == 0:
        raise RootHasNoConstraint("the root has no kinematic constraint")
    return T_par @ relative_pose(omega_i, beta_par, tree, i)


def constraint_derivatives(view: PartStateView, tree: KinematicTree, i: int) -> ConstraintDerivatives:
    if i == 0:
        raise RootHasNoConstraint("the root has no kinematic constraint")
    p = tree.parents[i]
    Ot = view.joints[i].T
    s = tree.S[i] @ view.betas[p] + tree.l[i]
    pose = np.zeros((6, 6))
    pose[:3, :3] = Ot
    pose[3:, 3:] = Ot
    pose[3:, :3] = -Ot @ _hat(s)
    shape = np.zeros((6, tree.P))
    shape[3:] = Ot @ tree.S[i]
    rot = np.zeros((6, 3))
    rot[:3] = np.eye(3)
    return ConstraintDerivatives(pose, shape, rot)


# ---------------------------------------------------------------- term-by-term oracle


def objective_terms(R, t, joints, beta, problem: Problem) -> dict:
    """Weighted loss terms evaluated straight from their definitions.

    ``R``/``t`` are per-part world poses and ``joints`` per-part joint rotations
    (index 0 ignored). Independent of the kernels; used to cross-check them.
    """
    cfg = problem.config
    cam = problem.camera
    tree = problem.tree
    terms = {"kp2d": 0.0, "kp3d": 0.0, "pof": 0.0, "pose": 0.0, "joint": 0.0, "shape": 0.0}
    for meas in problem.measurements:
        att = tree.attachment(meas.keypoint)
        i = att.body_part
        vbar = att.V @ beta + att.v0
        v = R[i] @ vbar + t[i]
        if meas.kind == "kp2d":
            if v[2] <= Z_MIN:
                continue
            proj = np.array([cam.fx * v[0] / v[2] + cam.cx, cam.fy * v[1] / v[2] + cam.cy])
            e = proj - meas.value
        elif meas.kind == "kp3d":
            e = v - meas.value
        else:
            d = v - t[i]
            if np.linalg.norm(d) <= MIN_BONE:
                continue
            e = d / np.linalg.norm(d) - meas.value
        terms[meas.kind] += 0.5 * cfg.kind_weight(meas.kind) * meas.weight * float(e @ e)
    for i, prior in cfg.pose_priors.items():
        e = se3_log(prior.inverse() @ Pose(R[i], t[i]))
        terms["pose"] += 0.5 * cfg.w_pose * float(e @ e)
    for i, jp in cfg.joint_priors.items():
        e = so3_log(jp.mean.T @ joints[i])
        terms["joint"] += 0.5 * cfg.w_joint * float(e @ np.asarray(jp.weight) @ e)
    terms["shape"] = 0.5 * cfg.w_shape * float(beta @ beta)
    return terms
