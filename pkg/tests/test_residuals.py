import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact.errors import AngleNearPi, BehindCamera, DegenerateBone, RootHasNoConstraint
from artifact.geometry import Pose, numeric_jacobian, pose_retract, se3_exp, se3_log, so3_exp
from artifact.model import KeypointAttachment, KinematicTree, ModelState, PartStateView, forward_kinematics
from artifact.residuals import (
    CameraIntrinsics,
    Measurement,
    ObjectiveConfig,
    assemble_block,
    compile_problem,
    constraint_derivatives,
    constraint_map,
    linearize,
    objective,
    objective_terms,
    residual_2d,
    residual_3d,
    residual_joint_prior,
    residual_pof,
    residual_pose_prior,
    residual_shape_prior,
)
from conftest import make_instance

CAM = CameraIntrinsics(800.0, 900.0, 320.0, 240.0)


def single_part_view(R=None, t=None, beta=None, P=0):
    R = np.eye(3) if R is None else R
    t = np.zeros(3) if t is None else t
    beta = np.zeros(P) if beta is None else beta
    return PartStateView(R[None], t[None], beta[None], np.eye(3)[None], np.zeros((1, 3)))


def perturb_part(view, i, d):
    """``T_i <- T_i exp(d[:6])``, ``beta_i <- beta_i + d[6:]``."""
    T = pose_retract(view.pose(i), d[:6])
    R, t, betas = view.R.copy(), view.t.copy(), view.betas.copy()
    R[i], t[i] = T.R, T.t
    betas[i] = betas[i] + d[6:]
    return dataclasses.replace(view, R=R, t=t, betas=betas)


def random_part_view(rng, P=3, depth=3.0):
    R = so3_exp(rng.uniform(-1, 1, 3))
    t = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), depth])
    return single_part_view(R, t, rng.uniform(-1, 1, P), P)


def random_attachment(rng, P=3):
    return KeypointAttachment(0, 0, rng.uniform(-0.1, 0.1, (3, P)), rng.uniform(-0.3, 0.3, 3))


def rel_close(num, ana, tol):
    scale = max(np.abs(num).max(initial=0.0), 1e-8)
    return np.abs(num - ana).max(initial=0.0) / scale <= tol


# ---------------------------------------------------------------- keypoint terms


def test_2d_zero_residual_on_axis():
    att = KeypointAttachment(0, 0, np.zeros((3, 0)), np.array([0.0, 0.0, 1.0]))
    r = residual_2d(single_part_view(), att, np.zeros(2), CameraIntrinsics(1, 1, 0, 0))
    assert np.array_equal(r, [0.0, 0.0])


def test_2d_direct_formula():
    att = KeypointAttachment(0, 0, np.zeros((3, 0)), np.array([1.0, 2.0, 2.0]))
    r = residual_2d(single_part_view(), att, np.zeros(2), CameraIntrinsics(100, 100, 50, 50))
    assert np.allclose(r, [100.0, 150.0], rtol=0, atol=1e-12)


def test_2d_behind_camera():
    att = KeypointAttachment(0, 0, np.zeros((3, 0)), np.array([0.0, 0.0, -1.0]))
    with pytest.raises(BehindCamera):
        residual_2d(single_part_view(), att, np.zeros(2), CAM)


def test_3d_zero_at_keypoint():
    rng = np.random.default_rng(0)
    view, att = random_part_view(rng), random_attachment(rng)
    v = view.R[0] @ (att.V @ view.betas[0] + att.v0) + view.t[0]
    assert np.allclose(residual_3d(view, att, v), 0.0, rtol=0, atol=1e-15)


def test_3d_translation_shift():
    rng = np.random.default_rng(1)
    view, att = random_part_view(rng), random_attachment(rng)
    meas = rng.standard_normal(3)
    dt = np.array([0.5, -0.25, 0.125])
    moved = dataclasses.replace(view, t=view.t + dt)
    assert np.allclose(residual_3d(moved, att, meas) - residual_3d(view, att, meas), dt, rtol=0, atol=1e-15)


def test_pof_aligned():
    att = KeypointAttachment(0, 0, np.zeros((3, 0)), np.array([2.0, 0.0, 0.0]))
    assert np.allclose(residual_pof(single_part_view(), att, [1.0, 0.0, 0.0]), 0.0, rtol=0, atol=0)


def test_pof_perpendicular():
    att = KeypointAttachment(0, 0, np.zeros((3, 0)), np.array([0.0, 3.0, 0.0]))
    assert np.allclose(residual_pof(single_part_view(), att, [1.0, 0.0, 0.0]), [-1.0, 1.0, 0.0], rtol=0, atol=0)


def test_pof_degenerate_bone():
    att = KeypointAttachment(0, 0, np.zeros((3, 0)), np.zeros(3))
    with pytest.raises(DegenerateBone):
        residual_pof(single_part_view(), att, [1.0, 0.0, 0.0])


KEYPOINT_TERMS = {
    "kp2d": lambda view, att, val: residual_2d(view, att, val[:2], CAM, jacobian=True),
    "kp3d": lambda view, att, val: residual_3d(view, att, val, jacobian=True),
    "pof": lambda view, att, val: residual_pof(view, att, val / np.linalg.norm(val), jacobian=True),
}


@pytest.mark.parametrize("kind", sorted(KEYPOINT_TERMS))
@given(seed=st.integers(0, 2**31))
def test_keypoint_jacobians_match_finite_differences(kind, seed):
    rng = np.random.default_rng(seed)
    P = int(rng.integers(0, 4))
    view, att = random_part_view(rng, P), random_attachment(rng, P)
    val = rng.standard_normal(3)
    term = KEYPOINT_TERMS[kind]
    _, J1, J2 = term(view, att, val)
    num = numeric_jacobian(lambda d: term(perturb_part(view, 0, d), att, val)[0], np.zeros(6 + P))
    assert rel_close(num, J1, 1e-5)
    assert not J2.any()


# ---------------------------------------------------------------- priors


def test_pose_prior_zero_at_prior():
    rng = np.random.default_rng(2)
    view = random_part_view(rng)
    assert np.allclose(residual_pose_prior(view, view.pose(0), 0), 0.0, rtol=0, atol=1e-15)


def test_pose_prior_first_order():
    rng = np.random.default_rng(3)
    prior = Pose(so3_exp(rng.standard_normal(3)), rng.standard_normal(3))
    delta = 1e-4 * rng.standard_normal(6) / np.sqrt(6)
    T = prior @ se3_exp(delta)
    view = single_part_view(T.R, T.t)
    assert np.allclose(residual_pose_prior(view, prior, 0), delta, rtol=0, atol=1e-7)


@given(seed=st.integers(0, 2**31))
def test_pose_prior_jacobian(seed):
    rng = np.random.default_rng(seed)
    P = int(rng.integers(0, 4))
    view = random_part_view(rng, P)
    prior = pose_retract(view.pose(0), rng.uniform(-1, 1, 6))
    _, J1, J2 = residual_pose_prior(view, prior, 0, jacobian=True)
    num = numeric_jacobian(lambda d: residual_pose_prior(perturb_part(view, 0, d), prior, 0), np.zeros(6 + P))
    assert rel_close(num, J1, 1e-5)
    assert not J2.any()


def test_joint_prior_zero_at_mean():
    Om = so3_exp([0.3, -0.2, 0.1])
    assert np.allclose(residual_joint_prior(Om, Om, np.eye(3)), 0.0, rtol=0, atol=1e-15)


def test_joint_prior_log_round_trip():
    mean = so3_exp([0.3, -0.2, 0.1])
    r = residual_joint_prior(mean @ so3_exp([0.1, 0, 0]), mean, np.eye(3))
    assert np.allclose(r, [0.1, 0.0, 0.0], rtol=0, atol=1e-6)


@given(seed=st.integers(0, 2**31))
def test_joint_prior_jacobian(seed):
    rng = np.random.default_rng(seed)
    Om = so3_exp(rng.uniform(-1, 1, 3))
    mean = Om @ so3_exp(rng.uniform(-1, 1, 3))
    A = rng.standard_normal((3, 3))
    W = A @ A.T + np.eye(3)
    _, J2 = residual_joint_prior(Om, mean, W, jacobian=True)
    num = numeric_jacobian(lambda d: residual_joint_prior(Om @ so3_exp(d), mean, W), np.zeros(3))
    assert rel_close(num, J2, 1e-5)


def test_joint_prior_near_pi():
    with pytest.raises(AngleNearPi):
        residual_joint_prior(np.diag([1.0, -1.0, -1.0]), np.eye(3), np.eye(3))


def test_shape_prior():
    assert not residual_shape_prior(np.zeros(4)).any()
    e = np.zeros(4)
    e[2] = 1.0
    assert np.array_equal(residual_shape_prior(e), e)
    beta = np.random.default_rng(4).standard_normal(4)
    r, J1 = residual_shape_prior(beta, jacobian=True)
    assert 0.5 * r @ r == 0.5 * beta @ beta
    num = numeric_jacobian(lambda d: residual_shape_prior(beta + d[6:]), np.zeros(10))
    assert np.allclose(num, J1, rtol=0, atol=1e-9)


# ---------------------------------------------------------------- blocks


def test_part_without_terms_is_empty():
    tree, synth, problem, view = make_instance(K=5, P=2, N=2, priors=False)
    block = assemble_block(view, problem, 4)
    assert block.rows == 0
    assert block.J1.shape == (0, 8) and block.J2.shape == (0, 3)


def test_single_3d_keypoint_at_truth():
    tree, synth, _, _ = make_instance(K=3, P=2, N=0, priors=False)
    att = tree.attachment(2)
    truth_view = forward_kinematics(synth.truth, tree)
    v = truth_view.R[2] @ (att.V @ synth.truth.shape + att.v0) + truth_view.t[2]
    problem = compile_problem(tree, [Measurement("kp3d", 2, v)], synth.camera, ObjectiveConfig(w_shape=0.0))
    block = assemble_block(truth_view, problem, 2)
    assert block.rows == 3
    assert np.allclose(block.r, 0.0, rtol=0, atol=1e-14)
    assert np.isfinite(block.J1).all()


def composed_poses(state, tree):
    """Part poses by explicit products along each root path."""
    R = np.empty((tree.K + 1, 3, 3))
    t = np.empty((tree.K + 1, 3))
    for i in range(tree.K + 1):
        M = state.root.matrix()
        for j in tree.path(i)[1:]:
            rel = np.eye(4)
            rel[:3, :3] = state.joint(j)
            rel[:3, 3] = tree.S[j] @ state.shape + tree.l[j]
            M = M @ rel
        R[i], t[i] = M[:3, :3], M[:3, 3]
    return R, t


@pytest.mark.parametrize("seed", range(5))
def test_stacked_objective_equals_term_sum(seed):
    tree, synth, problem, view = make_instance(K=7, P=3, N=60, seed=seed)
    state = ModelState(
        Pose(view.R[0], view.t[0]), view.joints[1:], view.betas[0]
    )
    R, t = composed_poses(state, tree)
    terms = objective_terms(R, t, view.joints, state.shape, problem)
    assert objective(view, problem) == pytest.approx(sum(terms.values()), rel=1e-12, abs=1e-300)


def test_weight_scaling_scales_rows():
    tree, synth, problem, view = make_instance(K=5, P=2, N=40)
    cfg = dataclasses.replace(synth.config, w_3d=9.0)
    scaled = compile_problem(tree, synth.measurements, synth.camera, cfg)
    a = linearize(view, problem, with_blocks=False)
    b = linearize(view, scaled, with_blocks=False)
    rows = [problem.kp_row[m] + k for m, meas in enumerate(problem.measurements) if meas.kind == "kp3d" for k in range(3)]
    assert rows
    assert np.allclose(b.r[rows], 3.0 * a.r[rows], rtol=1e-15, atol=0)
    others = np.setdiff1d(np.arange(problem.n_rows), rows)
    assert np.array_equal(a.r[others], b.r[others])


def test_skipped_measurements_are_counted():
    tree, synth, _, view = make_instance(K=3, P=0, N=0, priors=False)
    att = tree.attachment(1)
    v = view.R[1] @ att.v0 + view.t[1]
    behind = Measurement("kp2d", 1, [0.0, 0.0])
    problem = compile_problem(tree, [behind, Measurement("kp3d", 1, v)], synth.camera, ObjectiveConfig())
    moved = dataclasses.replace(view, t=view.t - np.array([0.0, 0.0, 100.0]))
    lin = linearize(moved, problem)
    assert lin.skipped == {"behind_camera": 1, "degenerate_bone": 0}
    assert not lin.r[problem.kp_row[0] : problem.kp_row[0] + 2].any()
    assert lin.block(1).rows == 3


# ---------------------------------------------------------------- constraint derivatives


def constraint_fd(view, tree, i):
    """Finite differences of ``x_i = (F_i(T_par, beta_par, Omega_i), beta_par)``."""
    p = tree.parents[i]
    P = tree.P
    Ti = view.pose(i)

    def x_of(d):
        T_par = pose_retract(view.pose(p), d[:6])
        beta = view.betas[p] + d[6 : 6 + P]
        Om = view.joints[i] @ so3_exp(d[6 + P :])
        return np.concatenate([se3_log(Ti.inverse() @ constraint_map(T_par, beta, Om, tree, i)), beta - view.betas[i]])

    J = numeric_jacobian(x_of, np.zeros(9 + P))
    return J[:, : 6 + P], J[:, 6 + P :]


def test_constraint_at_identity_relative_pose():
    tree, synth, _, view = make_instance(K=3, P=0, N=0)
    tree.l[2] = 0.0
    joints = view.joints.copy()
    joints[2] = np.eye(3)
    state = ModelState(Pose(view.R[0], view.t[0]), joints[1:], np.zeros(0))
    view = forward_kinematics(state, tree)
    cd = constraint_derivatives(view, tree, 2)
    A_num, B_num = constraint_fd(view, tree, 2)
    assert np.allclose(cd.pose_block, np.eye(6), rtol=0, atol=1e-6)
    assert np.allclose(cd.A, A_num, rtol=0, atol=1e-6)
    assert np.array_equal(cd.B[:3], np.eye(3))


@given(seed=st.integers(0, 2**31))
def test_constraint_structure_is_exact(seed):
    tree, _, _, view = make_instance(K=4, P=int(seed % 4), N=0, seed=seed % 1000)
    for i in range(1, tree.K + 1):
        cd = constraint_derivatives(view, tree, i)
        P = tree.P
        assert np.array_equal(cd.A[6:, :6], np.zeros((P, 6)))
        assert np.array_equal(cd.A[6:, 6:], np.eye(P))
        assert not cd.B[6:].any()
        assert not cd.shape_block[:3].any()


@pytest.mark.parametrize("seed", range(5))
def test_constraint_derivatives_match_finite_differences(seed):
    tree, _, _, view = make_instance(K=6, P=3, N=0, seed=seed, jitter=1.0)
    for i in range(1, tree.K + 1):
        cd = constraint_derivatives(view, tree, i)
        A_num, B_num = constraint_fd(view, tree, i)
        assert rel_close(A_num, cd.A, 1e-5)
        assert rel_close(B_num, cd.B, 1e-5)


def test_root_has_no_constraint():
    tree, _, _, view = make_instance(K=2, P=0, N=0)
    with pytest.raises(RootHasNoConstraint):
        constraint_derivatives(view, tree, 0)


def test_measurement_validation():
    with pytest.raises(ValueError):
        Measurement("pof", 0, [1.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        Measurement("depth", 0, [1.0])
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ObjectiveConfig(w_pose=-1.0)
