"""Unified-momentum local updates, gossip averaging, and the epoch loops.

Every worker keeps a model vector x and an auxiliary vector v. The local
update with stochastic gradient g, learning rate eta, scale alpha >= 0 and
momentum beta in [0, 1) is

    u' = x - eta * g
    v' = x - alpha * eta * g
    x' = u' + beta * (v' - v)

alpha = 0 reproduces heavy-ball momentum, alpha = 1 reproduces Nesterov's
momentum, and beta = 0 collapses to plain SGD for any alpha. An epoch is K
such steps on the worker's own shard followed by one gossip round, where
each worker replaces x (and v) by the mixing-weighted average of its
neighbors' vectors; the restart semantics are that the gossiped v seeds
the next epoch's first step.

The gradient-tracking variant additionally keeps a tracker y per worker,
blends it into each local direction as

    m = lambda * g + (1 - lambda) * y,

and refreshes it once per epoch from the pseudo-gradient
d = (x_before_epoch - x_after_gossip) / (K * eta):

    y <- gossip over (y + d - d_prev),

with y bootstrapped from one minibatch gradient before epoch 0 and
d_prev starting at zero.

All reductions (gossip sums, batch means) run in a fixed ascending order,
so results are identical for any parallelism degree.
"""

from __future__ import annotations

import enum
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import DivergenceError
from .rng import BOOTSTRAP_STEP
from .topology import MixingMatrix, TopologySchedule

# Any parameter magnitude beyond this halts the run as diverged.
MAX_PARAM_MAGNITUDE = 1e12

# batch_fn(worker, epoch, step) -> indices into the dataset.
BatchFn = Callable[[int, int, int], np.ndarray]
# trace_hook(worker, epoch, step, x, v, g); g is None on the final snapshot.
TraceHook = Callable[[int, int, int, np.ndarray, np.ndarray, Optional[np.ndarray]], None]


class Algo(enum.Enum):
    VANILLA = "vanilla"
    DSUM = "dsum"
    GTDSUM = "gtdsum"


@dataclass(frozen=True)
class SumHyper:
    """Hyperparameters of the unified momentum family."""

    alpha: float
    beta: float
    eta: float
    lam: float = 0.8
    k_local: int = 10
    algo: Algo = Algo.DSUM

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.k_local < 1:
            raise ValueError(f"k_local must be >= 1, got {self.k_local}")


@dataclass
class WorkerState:
    """One worker's vectors. y/d_prev stay None outside gradient tracking."""

    x: np.ndarray
    v: np.ndarray
    y: Optional[np.ndarray] = None
    d_prev: Optional[np.ndarray] = None
    x_epoch_start: Optional[np.ndarray] = None


@dataclass
class Cohort:
    """All workers plus the schedule and hyperparameters driving them."""

    workers: list[WorkerState]
    schedule: TopologySchedule
    hyper: SumHyper
    gt_ready: bool = field(default=False)

    def __post_init__(self):
        if not self.workers:
            raise ValueError("cohort needs at least one worker")
        if len(self.workers) != self.schedule.n:
            raise ValueError(
                f"{len(self.workers)} workers but schedule matrices are "
                f"{self.schedule.n} x {self.schedule.n}")
        dims = {w.x.shape for w in self.workers}
        if len(dims) != 1:
            raise ValueError("all workers must share the parameter dimension")

    @property
    def n(self) -> int:
        return len(self.workers)


def make_cohort(x0: np.ndarray, n: int, schedule: TopologySchedule,
                hyper: SumHyper) -> Cohort:
    """Cohort with every worker starting at x = v = x0."""
    workers = [WorkerState(x=x0.copy(), v=x0.copy()) for _ in range(n)]
    return Cohort(workers=workers, schedule=schedule, hyper=hyper)


def sum_local_step(state: WorkerState, g: np.ndarray,
                   hyper: SumHyper) -> tuple[np.ndarray, np.ndarray]:
    """Apply one unified momentum step in place; returns the new (x, v)."""
    u_new = state.x - hyper.eta * g
    v_new = state.x - (hyper.alpha * hyper.eta) * g
    x_new = u_new + hyper.beta * (v_new - state.v)
    state.x = x_new
    state.v = v_new
    return x_new, v_new


def gossip_average(vectors: Sequence[np.ndarray],
                   w: MixingMatrix | np.ndarray) -> list[np.ndarray]:
    """One gossip round: out_i = sum_j w[i, j] * in_j.

    Accumulates over j in ascending order regardless of thread count, so
    the result is bit-reproducible.
    """
    mat = w.w if isinstance(w, MixingMatrix) else np.asarray(w, dtype=np.float64)
    n = mat.shape[0]
    if len(vectors) != n:
        raise ValueError(f"got {len(vectors)} vectors for an {n}-worker matrix")
    stacked = np.stack(vectors)
    out = np.zeros_like(stacked)
    for j in range(n):
        out += mat[:, j, None] * stacked[j]
    return [out[i] for i in range(n)]


def _check_step(x: np.ndarray, loss: float, epoch: int, step: int, worker: int) -> None:
    if not np.isfinite(loss):
        raise DivergenceError(
            f"non-finite loss at epoch {epoch}, step {step}, worker {worker}",
            epoch=epoch, step=step, worker=worker)
    if not np.all(np.isfinite(x)) or float(np.max(np.abs(x))) > MAX_PARAM_MAGNITUDE:
        raise DivergenceError(
            f"parameter magnitude exceeded {MAX_PARAM_MAGNITUDE:g} at epoch "
            f"{epoch}, step {step}, worker {worker}",
            epoch=epoch, step=step, worker=worker)


def _map_workers(fn, n: int, executor: Optional[Executor]):
    if executor is None:
        for i in range(n):
            fn(i)
    else:
        # list() re-raises the lowest-index failure first: deterministic.
        list(executor.map(fn, range(n)))


def dsum_epoch(cohort: Cohort, epoch: int, oracle, ds: Dataset,
               batch_fn: BatchFn, executor: Optional[Executor] = None,
               trace_hook: Optional[TraceHook] = None) -> None:
    """One epoch of local momentum steps (or plain SGD) plus gossip.

    Under ``Algo.DSUM`` both x and v are gossiped; under ``Algo.VANILLA``
    the inner step is x <- x - eta * g, only x is gossiped, and v is reset
    to the gossiped x.
    """
    hyper = cohort.hyper
    matrix = cohort.schedule.lookup(epoch)
    vanilla = hyper.algo is Algo.VANILLA

    def local(i: int) -> None:
        state = cohort.workers[i]
        for tau in range(hyper.k_local):
            batch = batch_fn(i, epoch, tau)
            loss, g = oracle.value_and_grad(state.x, batch, ds)
            if trace_hook is not None:
                trace_hook(i, epoch, tau, state.x.copy(), state.v.copy(), g.copy())
            if vanilla:
                state.x = state.x - hyper.eta * g
            else:
                sum_local_step(state, g, hyper)
            _check_step(state.x, loss, epoch, tau, i)
        if trace_hook is not None:
            trace_hook(i, epoch, hyper.k_local, state.x.copy(), state.v.copy(), None)

    _map_workers(local, cohort.n, executor)

    new_x = gossip_average([w.x for w in cohort.workers], matrix)
    if vanilla:
        for i, w in enumerate(cohort.workers):
            w.x = new_x[i]
            w.v = new_x[i].copy()
    else:
        new_v = gossip_average([w.v for w in cohort.workers], matrix)
        for i, w in enumerate(cohort.workers):
            w.x = new_x[i]
            w.v = new_v[i]


def gtdsum_epoch(cohort: Cohort, epoch: int, oracle, ds: Dataset,
                 batch_fn: BatchFn, executor: Optional[Executor] = None,
                 trace_hook: Optional[TraceHook] = None) -> None:
    """One gradient-tracking epoch.

    The tracker y is frozen during the K local steps, each of which feeds
    m = lambda * g + (1 - lambda) * y into the momentum update; after the
    x/v gossip the tracker is refreshed from the epoch displacement.
    """
    hyper = cohort.hyper
    matrix = cohort.schedule.lookup(epoch)

    if not cohort.gt_ready:
        for i, w in enumerate(cohort.workers):
            batch = batch_fn(i, epoch, BOOTSTRAP_STEP)
            _, g = oracle.value_and_grad(w.x, batch, ds)
            w.y = g
            w.d_prev = np.zeros_like(w.x)
        cohort.gt_ready = True

    for w in cohort.workers:
        w.x_epoch_start = w.x.copy()

    def local(i: int) -> None:
        state = cohort.workers[i]
        y = state.y
        for tau in range(hyper.k_local):
            batch = batch_fn(i, epoch, tau)
            loss, g = oracle.value_and_grad(state.x, batch, ds)
            m = hyper.lam * g + (1.0 - hyper.lam) * y
            if trace_hook is not None:
                trace_hook(i, epoch, tau, state.x.copy(), state.v.copy(), m.copy())
            sum_local_step(state, m, hyper)
            _check_step(state.x, loss, epoch, tau, i)
        if trace_hook is not None:
            trace_hook(i, epoch, hyper.k_local, state.x.copy(), state.v.copy(), None)

    _map_workers(local, cohort.n, executor)

    new_x = gossip_average([w.x for w in cohort.workers], matrix)
    new_v = gossip_average([w.v for w in cohort.workers], matrix)
    scale = 1.0 / (hyper.k_local * hyper.eta)
    d = [(w.x_epoch_start - new_x[i]) * scale for i, w in enumerate(cohort.workers)]
    new_y = gossip_average(
        [w.y + d[i] - w.d_prev for i, w in enumerate(cohort.workers)], matrix)
    for i, w in enumerate(cohort.workers):
        w.x = new_x[i]
        w.v = new_v[i]
        w.y = new_y[i]
        w.d_prev = d[i]


_EPOCH_FNS = {Algo.VANILLA: dsum_epoch, Algo.DSUM: dsum_epoch, Algo.GTDSUM: gtdsum_epoch}


def run(cohort: Cohort, epochs: int, oracle, ds: Dataset, batch_fn: BatchFn,
        eval_hook=None, on_record=None, executor: Optional[Executor] = None):
    """Drive the configured epoch function for ``epochs`` rounds.

    ``eval_hook(cohort, epoch)`` builds one diagnostics record per epoch;
    ``on_record`` streams each record as it is produced (letting callers
    flush partial output). On divergence the partial record list is
    attached to the raised error as ``partial_records``.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if cohort.schedule.total_epochs < epochs:
        raise ValueError(
            f"schedule covers [0, {cohort.schedule.total_epochs}) "
            f"but {epochs} epochs requested")
    epoch_fn = _EPOCH_FNS[cohort.hyper.algo]
    records = []
    try:
        for t in range(epochs):
            epoch_fn(cohort, t, oracle, ds, batch_fn, executor=executor)
            if eval_hook is not None:
                rec = eval_hook(cohort, t)
                records.append(rec)
                if on_record is not None:
                    on_record(rec)
    except DivergenceError as err:
        err.partial_records = records
        raise
    return records


def record_batches(batch_fn: BatchFn, log: dict) -> BatchFn:
    """Wrap a batch source, logging every draw under (worker, epoch, step)."""

    def wrapped(worker: int, epoch: int, step: int) -> np.ndarray:
        batch = batch_fn(worker, epoch, step)
        log[(worker, epoch, step)] = np.array(batch, copy=True)
        return batch

    return wrapped


def replay_batches(log: dict) -> BatchFn:
    """Batch source that replays a recorded (worker, epoch, step) log."""

    def fn(worker: int, epoch: int, step: int) -> np.ndarray:
        try:
            return log[(worker, epoch, step)]
        except KeyError:
            raise LookupError(
                f"no recorded batch for worker {worker}, epoch {epoch}, step {step}"
            ) from None

    return fn
