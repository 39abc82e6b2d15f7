"""Seeded synthetic models and measurement sets with a known zero-residual optimum."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Pose, so3_exp
from ..model import (
    JointRegressor,
    KinematicTree,
    ModelState,
    attachment_from_regressor,
    extract_shape_basis,
    forward_kinematics,
    keypoint_position,
    validate_tree,
)
from ..residuals import CameraIntrinsics, JointPrior, Measurement, ObjectiveConfig

SMPL_PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21]

# body up to the wrists, then three-joint chains for five fingers per hand
SMPLH_PARENTS = SMPL_PARENTS[:22] + [
    20, 22, 23, 20, 25, 26, 20, 28, 29, 20, 31, 32, 20, 34, 35,
    21, 37, 38, 21, 40, 41, 21, 43, 44, 21, 46, 47, 21, 49, 50,
]

TOPOLOGIES = ("smpl_like_23", "smplh_like_51", "chain", "random_tree")
KINDS = ("kp2d", "kp3d", "pof")
CAMERA = CameraIntrinsics(1000.0, 1000.0, 500.0, 500.0)


@dataclass(frozen=True)
class SyntheticSpec:
    K: int = 23
    P: int = 10
    N: int = 300
    noise_2d: float = 0.0
    noise_3d: float = 0.0
    noise_pof: float = 0.0
    seed: int = 0
    topology: str = "smpl_like_23"
    kinds: tuple = KINDS
    priors: bool = True

    def __post_init__(self):
        if self.K < 1 or self.N < 0 or self.P < 0:
            raise ValueError("need K >= 1, N >= 0, P >= 0")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.topology == "smpl_like_23" and self.K != 23:
            raise ValueError("smpl_like_23 has K = 23")
        if self.topology == "smplh_like_51" and self.K != 51:
            raise ValueError("smplh_like_51 has K = 51")
        if not self.kinds or any(k not in KINDS for k in self.kinds):
            raise ValueError(f"kinds must be drawn from {KINDS}")


@dataclass
class SyntheticProblem:
    truth: ModelState
    measurements: list
    camera: CameraIntrinsics
    config: ObjectiveConfig


def parent_array(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.topology == "smpl_like_23":
        return np.array(SMPL_PARENTS)
    if spec.topology == "smplh_like_51":
        return np.array(SMPLH_PARENTS)
    if spec.topology == "chain":
        return np.arange(-1, spec.K)
    parents = np.empty(spec.K + 1, dtype=np.int64)
    parents[0] = -1
    for i in range(1, spec.K + 1):
        parents[i] = rng.integers(0, i)
    return parents


def _random_direction(rng, n=None):
    v = rng.standard_normal((3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def generate_model(spec: SyntheticSpec) -> tuple[KinematicTree, JointRegressor]:
    """Random bones of length 0.05..0.5 and one keypoint per part (id = part index)."""
    rng = np.random.default_rng([spec.seed, 0])
    parents = parent_array(spec, rng)
    n = spec.K + 1
    P = spec.P
    c = np.zeros((n, 3))
    bones = _random_direction(rng, n) * rng.uniform(0.05, 0.5, size=(n, 1))
    for i in range(1, n):
        c[i] = c[parents[i]] + bones[i]
    J = rng.uniform(-0.05, 0.05, size=(n, 3, P))
    J[0] = 0.0
    reg = JointRegressor(J, c)
    S, l = extract_shape_basis(reg, parents)

    offsets = _random_direction(rng, n) * rng.uniform(0.05, 0.2, size=(n, 1))
    attachments = []
    for i in range(n):
        Jv = J[i] + rng.uniform(-0.05, 0.05, size=(3, P))
        attachments.append(attachment_from_regressor(i, i, Jv, c[i] + offsets[i], reg))
    tree = KinematicTree(parents, S, l, attachments)
    validate_tree(tree)
    return tree, reg


def reach(tree: KinematicTree) -> float:
    """Upper bound on the distance from the root to any keypoint at beta = 0."""
    depth = np.zeros(tree.K + 1)
    for i in range(1, tree.K + 1):
        depth[i] = depth[tree.parents[i]] + np.linalg.norm(tree.l[i])
    extra = max((np.linalg.norm(a.v0) + np.abs(a.V).sum() for a in tree.attachments), default=0.0)
    return float(depth.max() + extra)


def random_rotation(rng, max_angle) -> np.ndarray:
    return so3_exp(_random_direction(rng) * rng.uniform(0.0, max_angle))


def sample_state(tree: KinematicTree, rng, max_angle=1.0) -> ModelState:
    """Joint angles up to ``max_angle`` from identity, root in front of the camera, beta = 0."""
    R0 = random_rotation(rng, max_angle)
    t0 = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 3.0 + 1.5 * reach(tree)])
    joints = np.array([random_rotation(rng, max_angle) for _ in range(tree.K)]).reshape(tree.K, 3, 3)
    return ModelState(Pose(R0, t0), joints, np.zeros(tree.P))


def render(tree: KinematicTree, state: ModelState, kind: str, keypoint: int, camera: CameraIntrinsics) -> np.ndarray:
    view = forward_kinematics(state, tree)
    att = tree.attachment(keypoint)
    v = keypoint_position(view, att, state.shape)
    if kind == "kp3d":
        return v
    if kind == "kp2d":
        return np.array([camera.fx * v[0] / v[2] + camera.cx, camera.fy * v[1] / v[2] + camera.cy])
    d = v - view.t[att.body_part]
    return d / np.linalg.norm(d)


def generate_problem(tree: KinematicTree, spec: SyntheticSpec, camera: CameraIntrinsics = CAMERA) -> SyntheticProblem:
    """Ground truth plus ``spec.N`` measurements, round-robin over parts then kinds."""
    rng = np.random.default_rng([spec.seed, 1])
    truth = sample_state(tree, rng)
    view = forward_kinematics(truth, tree)
    n = tree.K + 1
    ids = sorted({a.body_part: a.id for a in tree.attachments}.items())
    by_part = dict(ids)
    measurements = []
    for m in range(spec.N):
        part = m % n
        kind = spec.kinds[(m // n) % len(spec.kinds)]
        att = tree.attachment(by_part[part])
        v = keypoint_position(view, att, truth.shape)
        if kind == "kp3d":
            value = v + spec.noise_3d * rng.standard_normal(3)
        elif kind == "kp2d":
            value = np.array([camera.fx * v[0] / v[2] + camera.cx, camera.fy * v[1] / v[2] + camera.cy])
            value = value + spec.noise_2d * rng.standard_normal(2)
        else:
            d = v - view.t[part]
            value = d / np.linalg.norm(d)
            if spec.noise_pof > 0:
                value = so3_exp(spec.noise_pof * rng.standard_normal(3)) @ value
                value = value / np.linalg.norm(value)
        measurements.append(Measurement(kind, att.id, value, 1.0))

    config = ObjectiveConfig()
    if spec.priors:
        config.pose_priors = {i: view.pose(i) for i in range(n)}
        config.joint_priors = {i: JointPrior(truth.joints[i - 1].copy(), np.eye(3)) for i in range(1, n)}
    return SyntheticProblem(truth, measurements, camera, config)


def perturb_state(state: ModelState, seed: int, jitter=0.3, shape_jitter=0.1, translation_jitter=0.05) -> ModelState:
    """Initial guess: every rotation moved by up to ``jitter`` radians."""
    rng = np.random.default_rng([seed, 2])
    R0 = state.root.R @ random_rotation(rng, jitter)
    t0 = state.root.t + translation_jitter * rng.uniform(-1, 1, 3)
    joints = np.array([Om @ random_rotation(rng, jitter) for Om in state.joints]).reshape(state.joints.shape)
    shape = state.shape + shape_jitter * rng.uniform(-1, 1, state.shape.shape)
    return ModelState(Pose(R0, t0), joints, shape)
