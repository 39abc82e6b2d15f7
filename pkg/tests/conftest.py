import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from artifact.harness.synth import SyntheticSpec, generate_model, generate_problem, perturb_state
from artifact.model import forward_kinematics
from artifact.residuals import compile_problem

settings.register_profile("default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture(scope="session")
def frozen():
    return FROZEN


def make_instance(K=5, P=3, N=30, seed=0, topology=None, jitter=0.3, **kw):
    """``(tree, synth, problem, view)`` at a perturbed state of a synthetic problem."""
    if topology is None:
        topology = {23: "smpl_like_23", 51: "smplh_like_51"}.get(K, "random_tree")
    spec = SyntheticSpec(K=K, P=P, N=N, seed=seed, topology=topology, **kw)
    tree, _ = generate_model(spec)
    synth = generate_problem(tree, spec)
    problem = compile_problem(tree, synth.measurements, synth.camera, synth.config)
    view = forward_kinematics(perturb_state(synth.truth, seed, jitter=jitter), tree)
    return tree, synth, problem, view


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.abs(a - b).max(initial=0.0) / max(np.abs(b).max(initial=0.0), 1e-300))


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
