"""Command line: ``gen``, ``fit`` and ``bench``.

Exit status is 0 on success, 1 on a usage error (synopsis on stderr) and 2
when the command itself fails.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import ArtifactError
from .geometry import Pose
from .harness.bench import model_ratio, run_experiment, timing
from .harness.io import (
    FormatError,
    load_measurements,
    load_model,
    load_state,
    save_measurements,
    save_model,
    save_report,
    save_state,
)
from .harness.synth import TOPOLOGIES, SyntheticSpec, generate_model, generate_problem, perturb_state
from .model import ModelState, forward_kinematics, keypoint_position
from .optimizer import SolveConfig, optimize_problem
from .residuals import compile_problem

SYNOPSIS = """\
usage: artifact gen --joints K --shape-params P --measurements N [--noise-2d S] [--noise-3d S]
                    [--noise-pof S] [--topology T] [--seed S] [--no-priors]
                    --out-model m.json --out-meas d.json --out-truth t.json
                    [--out-init i.json --init-jitter RAD]
       artifact fit --model m.json --measurements d.json [--solver sparse|dense] [--max-iters I]
                    [--tol EPS] [--damping L] [--init i.json] [--truth t.json]
                    --out result.json [--report report.json]
       artifact bench --experiment 1|2|3 [--repeats R] --out results.csv
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="artifact", add_help=False)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", add_help=False)
    g.add_argument("--joints", type=int, required=True)
    g.add_argument("--shape-params", type=int, required=True)
    g.add_argument("--measurements", type=int, required=True)
    g.add_argument("--noise-2d", type=float, default=0.0)
    g.add_argument("--noise-3d", type=float, default=0.0)
    g.add_argument("--noise-pof", type=float, default=0.0)
    g.add_argument("--topology", choices=TOPOLOGIES)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-priors", action="store_true")
    g.add_argument("--out-model", required=True)
    g.add_argument("--out-meas", required=True)
    g.add_argument("--out-truth", required=True)
    g.add_argument("--out-init")
    g.add_argument("--init-jitter", type=float, default=0.3)

    f = sub.add_parser("fit", add_help=False)
    f.add_argument("--model", required=True)
    f.add_argument("--measurements", required=True)
    f.add_argument("--solver", choices=("sparse", "dense"), default="sparse")
    f.add_argument("--max-iters", type=int, default=50)
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--damping", type=float, default=1e-4)
    f.add_argument("--init")
    f.add_argument("--truth")
    f.add_argument("--out", required=True)
    f.add_argument("--report")

    b = sub.add_parser("bench", add_help=False)
    b.add_argument("--experiment", type=int, choices=(1, 2, 3), required=True)
    b.add_argument("--repeats", type=int, default=10)
    b.add_argument("--out", required=True)
    return p


def _default_topology(K: int) -> str:
    return {23: "smpl_like_23", 51: "smplh_like_51"}.get(K, "random_tree")


def cmd_gen(args) -> int:
    spec = SyntheticSpec(
        K=args.joints, P=args.shape_params, N=args.measurements,
        noise_2d=args.noise_2d, noise_3d=args.noise_3d, noise_pof=args.noise_pof,
        seed=args.seed, topology=args.topology or _default_topology(args.joints), priors=not args.no_priors,
    )
    tree, _ = generate_model(spec)
    synth = generate_problem(tree, spec)
    save_model(args.out_model, tree)
    save_measurements(args.out_meas, synth.measurements, synth.camera, synth.config)
    save_state(args.out_truth, synth.truth)
    if args.out_init:
        save_state(args.out_init, perturb_state(synth.truth, args.seed, jitter=args.init_jitter))
    return 0


def default_init(tree, measurements, config) -> ModelState:
    """Rest pose, with the root taken from its prior or centred on the 3D measurements."""
    if 0 in config.pose_priors:
        root = config.pose_priors[0]
    else:
        pts = [m.value for m in measurements if m.kind == "kp3d"]
        root = Pose(np.eye(3), np.mean(pts, axis=0) if pts else np.array([0.0, 0.0, 5.0]))
    return ModelState(root, np.tile(np.eye(3), (tree.K, 1, 1)), np.zeros(tree.P))


def keypoints(tree, state) -> dict:
    view = forward_kinematics(state, tree)
    return {a.id: keypoint_position(view, a, state.shape) for a in tree.attachments}


def cmd_fit(args) -> int:
    tree = load_model(args.model)
    measurements, camera, config = load_measurements(args.measurements)
    problem = compile_problem(tree, measurements, camera, config)
    init = load_state(args.init, tree.K, tree.P) if args.init else default_init(tree, measurements, config)
    solve = SolveConfig(backend=args.solver, max_iters=args.max_iters, gradient_tol=args.tol, initial_damping=args.damping)
    state, report = optimize_problem(problem, init, solve)
    fitted = keypoints(tree, state)
    save_state(
        args.out, state,
        objective=report.final_objective,
        keypoints=[{"id": int(k), "position": v.tolist()} for k, v in sorted(fitted.items())],
    )
    summary = report.as_dict()
    if args.truth:
        truth = keypoints(tree, load_state(args.truth, tree.K, tree.P))
        err = np.array([np.linalg.norm(fitted[k] - truth[k]) for k in sorted(truth)])
        summary["keypoint_error"] = {"mean": float(err.mean()), "max": float(err.max())} if err.size else {}
    if args.report:
        save_report(args.report, summary)
    print(f"{summary['termination']} after {report.iterations} iterations, objective {report.final_objective:.6g}")
    return 0


def cmd_bench(args) -> int:
    if args.repeats < 1:
        raise UsageError("--repeats must be positive")
    records = run_experiment(args.experiment, repeats=args.repeats, out=args.out)
    P = 0 if args.experiment == 1 else 10
    N = None if args.experiment == 3 else 600
    for backend in ("sparse", "dense"):
        print(f"{backend}: 51/23 joint time ratio at P={P}: {model_ratio(records, backend, P, N):.2f}")
    speedup = timing(records, "dense", 51, P, N) / timing(records, "sparse", 51, P, N)
    print(f"speedup on 51 joints: {speedup:.2f}x")
    return 0


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "bench": cmd_bench}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = _parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"artifact: {exc}\n{SYNOPSIS}", file=sys.stderr, end="")
        return 1
    except (ArtifactError, FormatError, OSError, ValueError) as exc:
        print(f"artifact: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
