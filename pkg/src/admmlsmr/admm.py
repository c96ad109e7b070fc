"""Gradient-free training of feed-forward ReLU networks.

Each sweep alternates exact per-variable minimisations: weights and
activations are least-squares solves handled by the LSMR solver, the
pre-activations have elementwise closed forms, and a running multiplier
enforces the output constraint.  The two solver-backed procedures of a layer
are independent, so the trainer issues them as one concurrent wave of
column-range chunks.

The network state itself lives in doubles.  Fixed-point arithmetic, when
selected, applies to the least-squares solves: each solve's inputs are
quantized, the solver runs entirely on words, and the solution columns are
dequantized back.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, one_hot
from .fixedpoint import (
    FIXED16,
    FIXED32,
    FixedFormat,
    RoundingMode,
    SaturationStats,
    make_stream,
)
from .lsmr import LsmrJob, lsmr_solve_multi, split_ranges
from .matrix import quantize_matrix

ARITHMETICS = ("real", "fixed16", "fixed32")

# spawn-key tags for the derived random streams
_TAG_INIT = 1
_TAG_QUANTIZE = 2
_TAG_ROUND = 3


class TrainingDivergedError(RuntimeError):
    """Raised when the real-arithmetic state stops being finite."""


@dataclass
class NetworkConfig:
    """Architecture and run parameters for one training session.

    ``layer_dims`` lists the feature count, each hidden width, and the output
    width; ``beta``/``gamma`` may be scalars (broadcast to every layer) or
    per-layer sequences.
    """

    layer_dims: Sequence[int]
    iterations: int = 100
    arithmetic: str = "real"
    rounding: RoundingMode = RoundingMode.NEAREST
    beta: float | Sequence[float] = 1.0
    gamma: float | Sequence[float] = 1.0
    seed: int = 0
    workers: int = 4
    lsmr_iterations: int | None = None
    sqrt_path: str = "float"

    def __post_init__(self) -> None:
        dims = list(self.layer_dims)
        if len(dims) < 3:
            raise ValueError("need at least input, one hidden and output widths")
        if any(d < 1 for d in dims):
            raise ValueError(f"layer widths must be positive, got {dims}")
        if self.arithmetic not in ARITHMETICS:
            raise ValueError(f"arithmetic must be one of {ARITHMETICS}")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        self.layer_dims = dims
        self.betas()
        self.gammas()

    @property
    def layer_count(self) -> int:
        """Number of weight layers."""
        return len(self.layer_dims) - 1

    def betas(self) -> list[float]:
        return self._expand(self.beta, self.layer_count)

    def gammas(self) -> list[float]:
        return self._expand(self.gamma, self.layer_count - 1)

    @staticmethod
    def _expand(value, n: int) -> list[float]:
        if np.isscalar(value):
            out = [float(value)] * n
        else:
            out = [float(v) for v in value]
            if len(out) != n:
                raise ValueError(f"expected {n} penalty values, got {len(out)}")
        if any(v <= 0 for v in out):
            raise ValueError("penalty parameters must be positive")
        return out

    def fixed_format(self) -> FixedFormat | None:
        if self.arithmetic == "fixed16":
            return FIXED16
        if self.arithmetic == "fixed32":
            return FIXED32
        return None


@dataclass
class NetworkState:
    """Weights, pre-activations, activations and the output multiplier."""

    weights: list[np.ndarray]       # W_l, one per weight layer
    z: list[np.ndarray]             # pre-activations, one per weight layer
    x: list[np.ndarray]             # hidden activations (len = layers - 1)
    lam: np.ndarray                 # multiplier, shaped like the output z
    x0: np.ndarray                  # inputs, features x samples
    y: np.ndarray                   # one-hot targets, outputs x samples


@dataclass
class IterationTimings:
    weight: float = 0.0
    activation: float = 0.0
    output: float = 0.0
    lagrangian: float = 0.0

    def total(self) -> float:
        return self.weight + self.activation + self.output + self.lagrangian


@dataclass
class TrainReport:
    """Everything measurable about one training run."""

    config: dict
    timings: list[IterationTimings] = field(default_factory=list)
    saturation_per_iteration: list[int] = field(default_factory=list)
    train_accuracy: float | None = None
    test_accuracy: float | None = None
    wall_seconds: float = 0.0

    @property
    def saturation_total(self) -> int:
        return sum(self.saturation_per_iteration)

    def totals(self) -> dict[str, float]:
        out = {"weight": 0.0, "activation": 0.0, "output": 0.0, "lagrangian": 0.0}
        for t in self.timings:
            out["weight"] += t.weight
            out["activation"] += t.activation
            out["output"] += t.output
            out["lagrangian"] += t.lagrangian
        return out

    def percentages(self) -> dict[str, float]:
        totals = self.totals()
        grand = sum(totals.values())
        if grand == 0.0:
            return {k: 0.0 for k in totals}
        return {k: 100.0 * v / grand for k, v in totals.items()}

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "results": {
                "train_accuracy": self.train_accuracy,
                "test_accuracy": self.test_accuracy,
            },
            "timing": {
                "per_iteration": [vars(t).copy() for t in self.timings],
                "totals": self.totals(),
                "percentages": self.percentages(),
                "wall_seconds": self.wall_seconds,
            },
            "saturation": {
                "total_events": self.saturation_total,
                "per_iteration": list(self.saturation_per_iteration),
            },
        }


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def init_network(
    cfg: NetworkConfig, x0: np.ndarray, y: np.ndarray, rng: np.random.Generator
) -> NetworkState:
    """Uniform weights in [-0.1, 0.1], state populated by a forward pass,
    multiplier zeroed."""
    dims = cfg.layer_dims
    if x0.shape[0] != dims[0]:
        raise ValueError(f"inputs have {x0.shape[0]} features, expected {dims[0]}")
    if y.shape[0] != dims[-1] or y.shape[1] != x0.shape[1]:
        raise ValueError(f"targets shaped {y.shape} do not match {dims[-1]}x{x0.shape[1]}")
    weights = [
        rng.uniform(-0.1, 0.1, size=(dims[l + 1], dims[l]))
        for l in range(cfg.layer_count)
    ]
    z: list[np.ndarray] = []
    x: list[np.ndarray] = []
    cur = x0
    for l, w in enumerate(weights):
        z_l = w @ cur
        z.append(z_l)
        if l < cfg.layer_count - 1:
            cur = relu(z_l)
            x.append(cur)
    lam = np.zeros_like(z[-1])
    return NetworkState(weights, z, x, lam, x0, y)


# -- closed-form updates -------------------------------------------------------

def z_update_hidden(
    a_target: np.ndarray, b_target: np.ndarray, gamma: float, beta: float
) -> np.ndarray:
    """Elementwise exact minimiser of gamma*(a - relu(z))^2 + beta*(z - b)^2.

    Two candidates: the clamped quadratic minimum on z >= 0, and min(0, b)
    on z < 0 where the activation contributes a constant.  Ties go to the
    non-negative candidate.
    """
    if a_target.shape != b_target.shape:
        raise ValueError(f"shape mismatch: {a_target.shape} vs {b_target.shape}")
    z_pos = np.maximum(0.0, (gamma * a_target + beta * b_target) / (gamma + beta))
    obj_pos = gamma * (a_target - z_pos) ** 2 + beta * (z_pos - b_target) ** 2
    z_neg = np.minimum(0.0, b_target)
    obj_neg = gamma * a_target**2 + beta * (z_neg - b_target) ** 2
    return np.where(obj_pos <= obj_neg, z_pos, z_neg)


def z_update_output(
    y: np.ndarray, b_target: np.ndarray, lam: np.ndarray, beta: float
) -> np.ndarray:
    """Closed form for the squared-loss output pre-activation."""
    if not (y.shape == b_target.shape == lam.shape):
        raise ValueError("output update operands must share one shape")
    return (2.0 * y + 2.0 * beta * b_target - lam) / (2.0 + 2.0 * beta)


def lagrangian_update(
    lam: np.ndarray, beta: float, z_out: np.ndarray, b_target: np.ndarray
) -> np.ndarray:
    return lam + beta * (z_out - b_target)


# -- solver-backed updates -------------------------------------------------------

class SolveEngine:
    """Runs batched multi-column least-squares jobs for the trainer.

    Owns the worker pool, the quantize/dequantize hop for fixed arithmetic,
    per-job random streams for stochastic rounding, and per-chunk timing.
    Chunks of one wave run concurrently; results are assembled on the caller
    thread in a fixed order, so any worker count produces identical state.
    """

    def __init__(self, cfg: NetworkConfig) -> None:
        self.cfg = cfg
        self.fmt = cfg.fixed_format()
        self.mode = cfg.rounding
        self.pool = (
            ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
        )
        self._job_counter = 0
        self.saturation = SaturationStats()

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown(wait=True)

    def _next_job_id(self) -> int:
        self._job_counter += 1
        return self._job_counter

    def prepare(self, a: np.ndarray, b: np.ndarray, chunks: int):
        """Build the chunk tasks for one solve of ``a X ~= b`` (all columns).

        Returns (tasks, collect, finish, prep_seconds) where each task
        returns (col_start, columns, seconds, saturation_events) and
        ``finish()`` assembles the full solution after every task result is
        in.  ``prep_seconds`` covers the quantization hop so it lands in the
        owning procedure's time bucket.
        """
        prep_start = time.perf_counter()
        job_id = self._next_job_id()
        iters = self.cfg.lsmr_iterations or min(a.shape)
        n, p = a.shape[1], b.shape[1]
        seed = self.cfg.seed

        if self.fmt is None:
            a_solver: np.ndarray | object = a
            b_solver = b
        else:
            q_rng = None
            if self.mode is RoundingMode.STOCHASTIC:
                q_rng = make_stream(seed, _TAG_QUANTIZE, job_id)
            a_solver = quantize_matrix(a, self.fmt, self.mode, q_rng, self.saturation)
            b_solver = quantize_matrix(b, self.fmt, self.mode, q_rng, self.saturation)

        def stream_factory(col: int) -> np.random.Generator:
            return make_stream(seed, _TAG_ROUND, job_id, col)

        out = np.zeros((n, p))
        done: list[tuple[int, np.ndarray]] = []

        def make_task(start: int, count: int):
            def task() -> tuple[int, np.ndarray, float, int]:
                stats = SaturationStats()
                t0 = time.perf_counter()
                sub = LsmrJob(a_solver, b_solver, start, count, iters)
                res = lsmr_solve_multi(
                    sub,
                    mode=self.mode,
                    workers=1,
                    stream_factory=stream_factory,
                    sqrt_path=self.cfg.sqrt_path,
                    stats=stats,
                )
                if self.fmt is not None:
                    res = res.to_real()
                return start, res, time.perf_counter() - t0, stats.events

            return task

        tasks = [make_task(s, c) for s, c in split_ranges(0, p, chunks)]

        def collect(result: tuple[int, np.ndarray, float, int]) -> float:
            start, cols, seconds, sat = result
            done.append((start, cols))
            self.saturation.count(sat)
            return seconds

        def finish() -> np.ndarray:
            for start, cols in sorted(done, key=lambda item: item[0]):
                out[:, start : start + cols.shape[1]] = cols
            return out

        return tasks, collect, finish, time.perf_counter() - prep_start

    def run_wave(self, prepared: list) -> list[tuple[np.ndarray, float]]:
        """Execute every chunk task of several prepared jobs concurrently."""
        flat: list[tuple[int, object]] = []
        for idx, (tasks, _, _, _) in enumerate(prepared):
            for t in tasks:
                flat.append((idx, t))
        seconds = [prepared[i][3] for i in range(len(prepared))]
        if self.pool is None:
            outcomes = [(idx, t()) for idx, t in flat]
        else:
            futures = [(idx, self.pool.submit(t)) for idx, t in flat]
            outcomes = [(idx, f.result()) for idx, f in futures]
        for idx, result in outcomes:
            seconds[idx] += prepared[idx][1](result)
        return [(prepared[i][2](), seconds[i]) for i in range(len(prepared))]


def weight_update(
    z_l: np.ndarray, x_prev: np.ndarray, engine: SolveEngine, chunks: int
) -> tuple[np.ndarray, float]:
    """Least-squares weights: solve x_prev^T W^T ~= z_l^T column by column."""
    t0 = time.perf_counter()
    a = np.ascontiguousarray(x_prev.T)
    b = np.ascontiguousarray(z_l.T)
    prep = time.perf_counter() - t0
    prepared = engine.prepare(a, b, chunks)
    (solution, seconds), = engine.run_wave([prepared])
    return np.ascontiguousarray(solution.T), prep + seconds


def activation_update(
    w_next: np.ndarray,
    z_next: np.ndarray,
    z_l: np.ndarray,
    beta_next: float,
    gamma_l: float,
    engine: SolveEngine,
    chunks: int,
) -> tuple[np.ndarray, float]:
    """Solve (gamma I + beta W^T W) x = gamma relu(z) + beta W^T z_next."""
    t0 = time.perf_counter()
    part1, part2 = _activation_system(w_next, z_next, z_l, beta_next, gamma_l)
    prep = time.perf_counter() - t0
    prepared = engine.prepare(part1, part2, chunks)
    (solution, seconds), = engine.run_wave([prepared])
    return solution, prep + seconds


def _activation_system(w_next, z_next, z_l, beta_next, gamma_l):
    n = w_next.shape[1]
    part1 = gamma_l * np.eye(n) + beta_next * (w_next.T @ w_next)
    part2 = gamma_l * relu(z_l) + beta_next * (w_next.T @ z_next)
    return part1, part2


# -- inference -------------------------------------------------------------------

def predict(weights: Sequence[np.ndarray], inputs: np.ndarray) -> np.ndarray:
    """Forward pass: ReLU after every layer except the last (linear) one."""
    cur = inputs
    last = len(weights) - 1
    for l, w in enumerate(weights):
        if w.shape[1] != cur.shape[0]:
            raise ValueError(f"layer {l}: weights {w.shape} cannot take {cur.shape}")
        cur = w @ cur
        if l != last:
            cur = relu(cur)
    return cur


def accuracy(outputs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax predictions (ties to the lowest index) that match."""
    if outputs.shape[1] != len(labels):
        raise ValueError(f"{outputs.shape[1]} predictions vs {len(labels)} labels")
    return float(np.mean(np.argmax(outputs, axis=0) == np.asarray(labels)))


# -- the trainer ------------------------------------------------------------------

def train(
    cfg: NetworkConfig,
    train_set: Dataset,
    test_set: Dataset | None = None,
) -> tuple[NetworkState, TrainReport]:
    """Run the full training loop and measure it.

    Every sweep walks the hidden layers, issuing that layer's weight and
    activation solves as one concurrent wave (they have no mutual
    dependency), then applies the elementwise pre-activation update; the
    output layer gets its weight solve, the closed-form output update and the
    multiplier step.  Per-procedure times accumulate into the report.
    """
    x0 = train_set.features
    y = one_hot(train_set.labels, train_set.class_count)
    if cfg.layer_dims[-1] != train_set.class_count:
        raise ValueError(
            f"output width {cfg.layer_dims[-1]} != class count {train_set.class_count}"
        )
    rng = make_stream(cfg.seed, _TAG_INIT)
    state = init_network(cfg, x0, y, rng)
    report = TrainReport(config=_config_echo(cfg))
    betas = cfg.betas()
    gammas = cfg.gammas()
    n_layers = cfg.layer_count
    engine = SolveEngine(cfg)
    proc_chunks = max(1, cfg.workers // 2)
    wall_start = time.perf_counter()

    try:
        for _ in range(cfg.iterations):
            timings = IterationTimings()
            sat_before = engine.saturation.events
            for l in range(n_layers - 1):
                x_prev = state.x0 if l == 0 else state.x[l - 1]

                t0 = time.perf_counter()
                a_w = np.ascontiguousarray(x_prev.T)
                b_w = np.ascontiguousarray(state.z[l].T)
                weight_prep = time.perf_counter() - t0
                t0 = time.perf_counter()
                part1, part2 = _activation_system(
                    state.weights[l + 1], state.z[l + 1], state.z[l],
                    betas[l + 1], gammas[l],
                )
                act_prep = time.perf_counter() - t0

                jobs = [
                    engine.prepare(a_w, b_w, proc_chunks),
                    engine.prepare(part1, part2, proc_chunks),
                ]
                (w_sol, w_secs), (x_sol, a_secs) = engine.run_wave(jobs)
                state.weights[l] = np.ascontiguousarray(w_sol.T)
                state.x[l] = x_sol
                timings.weight += weight_prep + w_secs
                timings.activation += act_prep + a_secs

                t0 = time.perf_counter()
                state.z[l] = z_update_hidden(
                    state.x[l], state.weights[l] @ x_prev, gammas[l], betas[l]
                )
                timings.output += time.perf_counter() - t0

            # output layer: weight solve, closed-form z, multiplier ascent
            x_prev = state.x[-1] if n_layers > 1 else state.x0
            w_sol, secs = weight_update(
                state.z[-1], x_prev, engine, min(cfg.workers, state.z[-1].shape[0])
            )
            state.weights[-1] = w_sol
            timings.weight += secs

            t0 = time.perf_counter()
            b_out = state.weights[-1] @ x_prev
            state.z[-1] = z_update_output(y, b_out, state.lam, betas[-1])
            timings.output += time.perf_counter() - t0

            t0 = time.perf_counter()
            state.lam = lagrangian_update(state.lam, betas[-1], state.z[-1], b_out)
            timings.lagrangian += time.perf_counter() - t0

            report.timings.append(timings)
            report.saturation_per_iteration.append(engine.saturation.events - sat_before)
            if cfg.arithmetic == "real":
                _check_finite(state)
    finally:
        engine.close()

    report.wall_seconds = time.perf_counter() - wall_start
    outputs = predict(state.weights, x0)
    report.train_accuracy = accuracy(outputs, train_set.labels)
    if test_set is not None:
        report.test_accuracy = accuracy(
            predict(state.weights, test_set.features), test_set.labels
        )
    return state, report


def _check_finite(state: NetworkState) -> None:
    for name, arrays in (("weights", state.weights), ("z", state.z), ("x", state.x)):
        for idx, arr in enumerate(arrays):
            if not np.isfinite(arr).all():
                raise TrainingDivergedError(
                    f"non-finite values in {name}[{idx}]; "
                    "try smaller penalties or fewer iterations"
                )
    if not np.isfinite(state.lam).all():
        raise TrainingDivergedError("non-finite values in the multiplier")


def _config_echo(cfg: NetworkConfig) -> dict:
    fmt = cfg.fixed_format()
    return {
        "arch": list(cfg.layer_dims),
        "iterations": cfg.iterations,
        "arithmetic": cfg.arithmetic,
        "rounding": cfg.rounding.value,
        "beta": cfg.betas(),
        "gamma": cfg.gammas(),
        "seed": cfg.seed,
        "workers": cfg.workers,
        "lsmr_iterations": cfg.lsmr_iterations,
        "sqrt_path": cfg.sqrt_path,
        "fixed_format": None
        if fmt is None
        else {"word_length": fmt.word_length, "fraction_length": fmt.fraction_length},
    }
