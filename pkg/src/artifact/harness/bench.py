"""Direction-time benchmark over the two reference skeletons."""
from __future__ import annotations

import csv
import gc
import statistics
import time
from dataclasses import astuple, dataclass, fields

from threadpoolctl import threadpool_limits

from ..model import forward_kinematics
from ..residuals import compile_problem
from ..solver_dense import dense_direction
from ..solver_sparse import gauss_newton_direction
from .synth import SyntheticSpec, generate_model, generate_problem, perturb_state

MODELS = (("smpl_like_23", 23), ("smplh_like_51", 51))
BACKENDS = ("sparse", "dense")
N_GRID = (120, 240, 360, 480, 600)
WARMUP = 3
HEADER = "experiment,model,K,P,N,backend,mean_us,std_us,repeats"


@dataclass(frozen=True)
class BenchRecord:
    experiment: int
    model: str
    K: int
    P: int
    N: int
    backend: str
    mean_us: float  # median of the repeats; the column name is kept for compatibility
    std_us: float
    repeats: int


def experiment_grid(experiment: int) -> list[tuple[str, int, int, int]]:
    """``(model, K, P, N)`` cells, in output order."""
    if experiment in (1, 2):
        P = 0 if experiment == 1 else 10
        return [(name, K, P, N) for name, K in MODELS for N in N_GRID]
    if experiment == 3:
        # one 2D, one 3D and one orientation measurement per part
        return [(name, K, P, 3 * (K + 1)) for name, K in MODELS for P in range(11)]
    raise ValueError(f"unknown experiment {experiment}; expected 1, 2 or 3")


def time_call(fn, repeats: int, warmup: int = WARMUP) -> tuple[float, float]:
    """Median and standard deviation of ``fn()`` wall time, in microseconds."""
    for _ in range(warmup):
        fn()
    samples = []
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            samples.append(1e6 * (time.perf_counter() - t0))
    finally:
        if enabled:
            gc.enable()
    return statistics.median(samples), statistics.pstdev(samples)


def direction_call(topology: str, K: int, P: int, N: int, backend: str, seed: int = 0):
    """A zero-argument callable computing one direction on a fresh synthetic instance."""
    spec = SyntheticSpec(K=K, P=P, N=N, topology=topology, seed=seed)
    tree, _ = generate_model(spec)
    synth = generate_problem(tree, spec)
    problem = compile_problem(tree, synth.measurements, synth.camera, synth.config)
    view = forward_kinematics(perturb_state(synth.truth, seed), tree)
    solve = gauss_newton_direction if backend == "sparse" else dense_direction
    return lambda: solve(view, problem)


def run_experiment(experiment: int, repeats: int = 10, out=None, seed: int = 0) -> list[BenchRecord]:
    """Time every cell of one experiment on a single BLAS thread; optionally write CSV."""
    if repeats < 1:
        raise ValueError("repeats must be positive")
    records = []
    with threadpool_limits(limits=1):
        for model, K, P, N in experiment_grid(experiment):
            for backend in BACKENDS:
                med, std = time_call(direction_call(model, K, P, N, backend, seed), repeats)
                records.append(BenchRecord(experiment, model, K, P, N, backend, med, std, repeats))
    if out is not None:
        write_csv(out, records)
    return records


def write_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in fields(BenchRecord)])
        for rec in records:
            row = list(astuple(rec))
            row[6] = f"{rec.mean_us:.3f}"
            row[7] = f"{rec.std_us:.3f}"
            w.writerow(row)


def read_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        BenchRecord(int(r["experiment"]), r["model"], int(r["K"]), int(r["P"]), int(r["N"]), r["backend"],
                    float(r["mean_us"]), float(r["std_us"]), int(r["repeats"]))
        for r in rows
    ]


def timing(records, backend: str, K: int, P: int, N: int | None = None) -> float:
    """Recorded time of one cell; ``N=None`` matches any measurement count."""
    for rec in records:
        if (rec.backend, rec.K, rec.P) == (backend, K, P) and N in (None, rec.N):
            return rec.mean_us
    raise KeyError((backend, K, P, N))


def model_ratio(records, backend: str, P: int, N: int | None = None) -> float:
    """Time on the 51-joint skeleton over time on the 23-joint one."""
    return timing(records, backend, 51, P, N) / timing(records, backend, 23, P, N)
