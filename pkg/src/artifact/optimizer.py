"""Damped Gauss-Newton outer loop over ``(T_0, Omega, beta)``."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import IndefiniteQ22, NonFiniteObjective, SingularRoot, SingularSystem
from .geometry import Pose, pose_retract, reorthonormalize, so3_exp
from .model import KinematicTree, ModelState, forward_kinematics
from .residuals import CameraIntrinsics, ObjectiveConfig, Problem, compile_problem, linearize
from .solver_dense import dense_direction, dense_gradient
from .solver_sparse import gauss_newton_direction, reduced_gradient

BACKENDS = ("sparse", "dense")
MIN_DAMPING = 1e-9  # first nonzero value when a rejected step had zero damping
MAX_DAMPING = 1e12

GRADIENT_TOL = "GradientTol"
STEP_TOL = "StepTol"
MAX_ITERS = "MaxIters"
STALLED = "Stalled"


@dataclass(frozen=True)
class SolveConfig:
    backend: str = "sparse"
    max_iters: int = 50
    gradient_tol: float = 1e-8
    step_tol: float = 1e-10
    initial_damping: float = 1e-4
    damping_increase: float = 10.0
    damping_decrease: float = 0.5
    accept_ratio: float = 1e-4
    refine: int = 0  # iterative-refinement passes per direction

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not (self.gradient_tol > 0 and self.step_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.initial_damping < 0:
            raise ValueError("initial_damping must be nonnegative")
        if not (self.damping_increase > 1 and 0 < self.damping_decrease <= 1):
            raise ValueError("damping must grow on rejection and not grow on acceptance")


@dataclass
class SolveReport:
    iterations: int = 0
    final_objective: float = math.nan
    objective_trace: list = field(default_factory=list)  # initial value, then one entry per accepted step
    direction_times: list = field(default_factory=list)  # seconds, one per direction computed
    total_time: float = 0.0
    skipped: dict = field(default_factory=dict)
    termination: str = ""
    accepted: int = 0
    rejected: int = 0
    damping_trace: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_objective": self.final_objective,
            "objective_trace": list(self.objective_trace),
            "direction_times_us": [1e6 * t for t in self.direction_times],
            "total_time_us": 1e6 * self.total_time,
            "skipped": dict(self.skipped),
            "termination": self.termination,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "damping_trace": list(self.damping_trace),
        }


def apply_direction(state: ModelState, direction) -> ModelState:
    """Retract the root pose, right-multiply joint updates, add the shape update.

    Accepts either backend's direction through its ``unconstrained()`` vector.
    """
    d = direction.unconstrained()
    K = state.joints.shape[0]
    P = state.shape.shape[0]
    if d.shape != (6 + 3 * K + P,):
        raise ValueError(f"direction of length {d.shape[0]} does not match state ({K} joints, {P} shape)")
    root = pose_retract(state.root, d[:6])
    root = Pose(reorthonormalize(root.R), root.t)
    dW = d[6 : 6 + 3 * K].reshape(K, 3)
    joints = np.empty_like(state.joints)
    for j in range(K):
        joints[j] = reorthonormalize(state.joints[j] @ so3_exp(dW[j]))
    return ModelState(root, joints, state.shape + d[6 + 3 * K :])


def _objective(lin) -> float:
    value = lin.objective
    if not math.isfinite(value):
        raise NonFiniteObjective(f"objective evaluated to {value}")
    return value


def _direction(view, problem, config: SolveConfig, damping, lin):
    if config.backend == "sparse":
        d = gauss_newton_direction(view, problem, damping, lin=lin, refine=config.refine)
        return d, damping
    d = dense_direction(view, problem, damping, lin=lin, refine=config.refine)
    return d, d.damping  # the dense factorization may have raised it


def _gradient(view, problem, config: SolveConfig, lin):
    if config.backend == "sparse":
        return reduced_gradient(view, problem, lin=lin)
    return dense_gradient(view, problem, lin=lin)


def optimize_problem(problem: Problem, init: ModelState, config: SolveConfig | None = None):
    """Run the damped Gauss-Newton loop on a compiled problem.

    Every computed direction counts as one iteration, whether or not its step
    is accepted. Returns ``(state, report)``.
    """
    config = config or SolveConfig()
    report = SolveReport()
    start = time.perf_counter()
    tree = problem.tree
    state = init
    view = forward_kinematics(state, tree)
    lin = linearize(view, problem, with_blocks=False)
    E = _objective(lin)
    report.objective_trace.append(E)
    damping = float(config.initial_damping)

    while True:
        grad = _gradient(view, problem, config, lin)
        if float(np.abs(grad).max(initial=0.0)) <= config.gradient_tol:
            report.termination = GRADIENT_TOL
            break
        if report.iterations >= config.max_iters:
            report.termination = MAX_ITERS
            break
        report.iterations += 1
        t0 = time.perf_counter()
        try:
            direction, used = _direction(view, problem, config, damping, lin)
        except (IndefiniteQ22, SingularRoot, SingularSystem):
            report.direction_times.append(time.perf_counter() - t0)
            report.rejected += 1
            damping = max(damping * config.damping_increase, MIN_DAMPING)
            if damping > MAX_DAMPING:
                raise
            continue
        report.direction_times.append(time.perf_counter() - t0)
        report.damping_trace.append(used)
        damping = used

        step = direction.unconstrained()
        if float(np.abs(step).max(initial=0.0)) <= config.step_tol:
            report.termination = STEP_TOL
            break

        candidate = apply_direction(state, direction)
        cview = forward_kinematics(candidate, tree)
        clin = linearize(cview, problem, with_blocks=False)
        Ec = _objective(clin)
        decrease = E - Ec
        if decrease > 0 and decrease >= config.accept_ratio * abs(direction.dE0):
            state, view, lin, E = candidate, cview, clin, Ec
            report.objective_trace.append(E)
            report.accepted += 1
            damping *= config.damping_decrease
        else:
            report.rejected += 1
            damping = max(damping * config.damping_increase, MIN_DAMPING)
            if damping > MAX_DAMPING:
                report.termination = STALLED
                break

    report.final_objective = E
    report.skipped = dict(lin.skipped)
    report.total_time = time.perf_counter() - start
    return state, report


def optimize(
    tree: KinematicTree,
    measurements,
    init: ModelState,
    config: SolveConfig | None = None,
    objective: ObjectiveConfig | None = None,
    camera: CameraIntrinsics | None = None,
):
    """Fit ``init`` to ``measurements``; returns ``(state, report)``."""
    problem = compile_problem(tree, measurements, camera or CameraIntrinsics(), objective or ObjectiveConfig())
    return optimize_problem(problem, init, config)
