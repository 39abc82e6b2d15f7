import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact.errors import AngleNearPi
from artifact.geometry import (
    Pose,
    adjoint,
    hat,
    numeric_jacobian,
    ortho_drift,
    pose_compose,
    pose_retract,
    reorthonormalize,
    se3_exp,
    se3_log,
    se3_right_jacobian_inv,
    so3_exp,
    so3_log,
    so3_right_jacobian_inv,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
vec6 = st.tuples(*[finite] * 6).map(np.array)


def random_pose(rng, angle=1.0):
    w = rng.standard_normal(3)
    return Pose(so3_exp(angle * w / np.linalg.norm(w)), rng.standard_normal(3))


# ---------------------------------------------------------------- so3


def test_exp_of_zero_is_identity():
    assert np.array_equal(so3_exp(np.zeros(3)), np.eye(3))


def test_quarter_turn_maps_x_to_y():
    R = so3_exp([0, 0, math.pi / 2])
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


@pytest.mark.parametrize("key", ["so3_exp_small", "so3_exp_norm03", "so3_exp_large"])
def test_exp_matches_series_oracle(frozen, key):
    case = frozen[key]
    assert np.allclose(so3_exp(case["omega"]), case["R"], rtol=0, atol=1e-15)


def test_log_of_identity():
    assert np.array_equal(so3_log(np.eye(3)), np.zeros(3))


def test_log_round_trips():
    w = np.array([0.1, 0.2, 0.3])
    assert np.allclose(so3_log(so3_exp(w)), w, rtol=0, atol=1e-12)


def test_log_near_pi_recovers_axis():
    theta = math.pi - 1e-3
    assert np.allclose(so3_log(so3_exp([0, 0, theta])), [0, 0, theta], rtol=0, atol=1e-8)


def test_log_at_pi_raises():
    with pytest.raises(AngleNearPi):
        so3_log(np.diag([-1.0, -1.0, 1.0]))


def test_tiny_angles_stay_accurate():
    w = np.array([3e-9, -1e-9, 2e-9])
    R = so3_exp(w)
    assert np.allclose(R, np.eye(3) + hat(w), rtol=0, atol=1e-17)
    assert np.allclose(so3_log(R), w, rtol=1e-9, atol=0)


@given(vec3)
def test_log_exp_round_trip_property(w):
    n = np.linalg.norm(w)
    if n > 3.0:
        w = w * (3.0 / n)
    assert np.abs(so3_log(so3_exp(w)) - w).max() <= 1e-10


@given(vec3)
def test_exp_is_a_rotation(w):
    R = so3_exp(w)
    assert np.linalg.norm(R.T @ R - np.eye(3)) <= 1e-12
    assert abs(np.linalg.det(R) - 1.0) <= 1e-12


@pytest.mark.parametrize("idx", range(4))
def test_so3_right_jacobian_inverse_matches_series(frozen, idx):
    case = frozen["so3_jr_inv"][idx]
    assert np.allclose(so3_right_jacobian_inv(case["omega"]), case["Jinv"], rtol=0, atol=1e-13)


def test_so3_right_jacobian_inverse_is_derivative_of_log():
    rng = np.random.default_rng(1)
    for _ in range(20):
        R = so3_exp(rng.uniform(-1.5, 1.5, 3))
        num = numeric_jacobian(lambda d: so3_log(R @ so3_exp(d)), np.zeros(3))
        assert np.allclose(num, so3_right_jacobian_inv(so3_log(R)), rtol=0, atol=1e-8)


# ---------------------------------------------------------------- se3


def test_se3_exp_matches_matrix_exponential(frozen):
    case = frozen["se3_exp"]
    assert np.allclose(se3_exp(case["xi"]).matrix(), case["T"], rtol=0, atol=1e-14)


def test_pure_translation_twist():
    T = pose_retract(Pose.identity(), [0, 0, 0, 1, 2, 3])
    assert np.array_equal(T.t, [1.0, 2.0, 3.0])
    assert np.array_equal(T.R, np.eye(3))


@pytest.mark.parametrize("idx", range(4))
def test_se3_right_jacobian_inverse_matches_series(frozen, idx):
    case = frozen["se3_jr_inv"][idx]
    assert np.allclose(se3_right_jacobian_inv(case["xi"]), case["Jinv"], rtol=0, atol=1e-12)


@given(vec6)
def test_se3_log_round_trip(xi):
    n = np.linalg.norm(xi[:3])
    if n > 3.0:
        xi = xi.copy()
        xi[:3] *= 3.0 / n
    assert np.allclose(se3_log(se3_exp(xi)), xi, rtol=0, atol=1e-9)


def test_adjoint_moves_twists_across_a_pose():
    rng = np.random.default_rng(2)
    T = random_pose(rng)
    xi = 0.3 * rng.standard_normal(6)
    lhs = T @ se3_exp(xi) @ T.inverse()
    rhs = se3_exp(adjoint(T) @ xi)
    assert np.allclose(lhs.matrix(), rhs.matrix(), rtol=0, atol=1e-12)


# ---------------------------------------------------------------- poses


def test_compose_with_identity():
    T = random_pose(np.random.default_rng(3))
    out = pose_compose(Pose.identity(), T)
    assert np.array_equal(out.R, T.R) and np.array_equal(out.t, T.t)


def test_compose_with_inverse():
    T = random_pose(np.random.default_rng(4))
    out = T @ T.inverse()
    assert np.allclose(out.matrix(), np.eye(4), rtol=0, atol=1e-12)


def test_compose_matches_homogeneous_product():
    rng = np.random.default_rng(5)
    A, B = random_pose(rng), random_pose(rng)
    assert np.allclose((A @ B).matrix(), A.matrix() @ B.matrix(), rtol=0, atol=1e-14)


def test_compose_is_associative():
    rng = np.random.default_rng(6)
    A, B, C = (random_pose(rng) for _ in range(3))
    assert np.allclose(((A @ B) @ C).matrix(), (A @ (B @ C)).matrix(), rtol=0, atol=1e-12)


def test_retract_zero_is_exact():
    T = random_pose(np.random.default_rng(7))
    out = pose_retract(T, np.zeros(6))
    assert out.R is T.R or np.array_equal(out.R, T.R)
    assert np.array_equal(out.t, T.t)


def test_retraction_derivative_is_identity():
    T = random_pose(np.random.default_rng(8))
    J = numeric_jacobian(lambda d: se3_log(T.inverse() @ pose_retract(T, d)), np.zeros(6))
    assert np.allclose(J, np.eye(6), rtol=0, atol=1e-9)


@given(vec6, st.integers(0, 2**31))
def test_retraction_locality_through_a_scalar(delta, seed):
    rng = np.random.default_rng(seed)
    T = random_pose(rng)
    a = rng.standard_normal(3)

    def f(eps):
        return float(a @ pose_retract(T, eps[0] * delta).t)

    num = numeric_jacobian(f, np.zeros(1))[0]
    # d/de t(T exp(e delta)) at 0 is R * translational part
    exact = float(a @ (T.R @ delta[3:]))
    assert abs(num - exact) <= 1e-6 * max(1.0, abs(exact))


def test_orthonormality_survives_long_chains():
    rng = np.random.default_rng(9)
    T = Pose.identity()
    for _ in range(10_000):
        T = pose_retract(T, 0.5 * rng.standard_normal(6))
        T = Pose(reorthonormalize(T.R), T.t)
    assert ortho_drift(T.R) <= 1e-9
    assert abs(np.linalg.det(T.R) - 1.0) <= 1e-12


# ---------------------------------------------------------------- finite differences


def test_numeric_jacobian_of_linear_map():
    Mx = np.arange(12.0).reshape(3, 4)
    # a power-of-two step keeps x +- eps exact
    assert np.allclose(numeric_jacobian(lambda x: Mx @ x, np.ones(4), eps=2.0**-20), Mx, rtol=0, atol=1e-12)


def test_numeric_jacobian_of_squared_norm():
    g = numeric_jacobian(lambda x: np.array([x @ x]), np.array([1.0, 2.0]))
    assert np.allclose(g, [[2.0, 4.0]], rtol=0, atol=1e-8)
