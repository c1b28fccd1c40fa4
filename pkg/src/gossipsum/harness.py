"""Experiment assembly and run driving.

Everything here is deterministic in (config, seed): datasets, partitions,
initial parameters, and batch draws all come from tagged substreams of the
global seed, and the parallelism degree only changes how worker loops are
scheduled, never what they compute.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import rng as rstream
from .config import RunConfig
from .data import Dataset, Shard, dirichlet_partition, load_dataset, sample_minibatch, synthetic_blobs
from .diagnostics import MetricsRecord, collect_metrics, parse_metrics_csv
from .errors import DataFormatError
from .objectives import GradientOracle, LogisticRegression, MlpOneHidden, SyntheticNonConvex
from .optim import BatchFn, Cohort, make_cohort, run
from .topology import (MixingMatrix, TopologySchedule, build_full_mesh,
                       build_metropolis_hastings, build_ring, make_schedule)


@dataclass
class Experiment:
    cfg: RunConfig
    cohort: Cohort
    oracle: GradientOracle
    shards: list[Shard]
    train_ds: Dataset
    test_ds: Optional[Dataset]
    batch_fn: BatchFn


def load_adjacency(path: str) -> np.ndarray:
    """Whitespace-separated 0/1 matrix file -> integer adjacency matrix."""
    try:
        arr = np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"{path}: cannot parse adjacency matrix: {exc}") from exc
    if not np.isin(arr, (0, 1)).all():
        raise DataFormatError(f"{path}: adjacency entries must be 0 or 1")
    return arr.astype(np.int64)


def build_matrix(kind: str, n: int, custom_adjacency: Optional[str]) -> MixingMatrix:
    if kind == "full_mesh":
        return build_full_mesh(n)
    if kind == "ring":
        return build_ring(n)
    if kind == "custom":
        matrix = build_metropolis_hastings(load_adjacency(custom_adjacency))
        if matrix.n != n:
            raise DataFormatError(
                f"{custom_adjacency}: adjacency is {matrix.n} x {matrix.n} "
                f"but the run has {n} workers")
        return matrix
    raise ValueError(f"unknown topology kind {kind!r}")


def build_schedule(cfg: RunConfig) -> TopologySchedule:
    """Topology schedule for the run.

    Precedence: explicit schedule, then a static topology, then the default
    of full mesh for the first half of the epochs and a ring for the second
    (full mesh throughout when the ring is unavailable, i.e. fewer than 3
    workers or fewer than 2 epochs).
    """
    n, t = cfg.workers, cfg.epochs
    cache: dict[str, MixingMatrix] = {}

    def matrix(kind: str) -> MixingMatrix:
        if kind not in cache:
            cache[kind] = build_matrix(kind, n, cfg.custom_adjacency)
        return cache[kind]

    if cfg.schedule is not None:
        return make_schedule([(until, matrix(kind)) for until, kind in cfg.schedule])
    if cfg.topology is not None:
        return make_schedule([(t, matrix(cfg.topology))])
    if n < 3 or t < 2:
        return make_schedule([(t, matrix("full_mesh"))])
    half = t // 2
    return make_schedule([(half, matrix("full_mesh")), (t, matrix("ring"))])


def build_datasets(cfg: RunConfig) -> tuple[Dataset, Optional[Dataset]]:
    if cfg.data_source == "file":
        return load_dataset(cfg.data_path, cfg.data_format), None
    syn = cfg.synthetic_data
    means = rstream.substream(cfg.seed, rstream.TAG_DATASET, 0).normal(
        0.0, 1.0, size=(syn.classes, syn.dim))
    train = synthetic_blobs(syn.classes, syn.dim, syn.samples, syn.blob_stddev,
                            rstream.substream(cfg.seed, rstream.TAG_DATASET, 1),
                            name="synthetic-train", means=means)
    test = None
    if syn.test_samples > 0:
        test = synthetic_blobs(syn.classes, syn.dim, syn.test_samples, syn.blob_stddev,
                               rstream.substream(cfg.seed, rstream.TAG_TESTSET),
                               name="synthetic-test", means=means)
    return train, test


def build_oracle(cfg: RunConfig, ds: Dataset) -> GradientOracle:
    if cfg.model == "synthetic":
        return SyntheticNonConvex(cfg.synthetic_model_dim, cfg.synthetic_model_amplitude)
    if cfg.model == "logreg":
        return LogisticRegression(ds.dim, ds.num_classes)
    if cfg.model == "mlp":
        return MlpOneHidden(ds.dim, cfg.mlp_hidden, ds.num_classes)
    raise ValueError(f"unknown model {cfg.model!r}")


def build_batch_fn(seed: int, shards: list[Shard], batch_size: int) -> BatchFn:
    """Per-(worker, epoch, step) minibatch draws; batch_size 0 = whole shard."""

    def fn(worker: int, epoch: int, step: int) -> np.ndarray:
        shard = shards[worker]
        if batch_size == 0:
            return shard.indices
        gen = rstream.batch_stream(seed, worker, epoch, step)
        return sample_minibatch(shard, batch_size, gen)

    return fn


def build_experiment(cfg: RunConfig) -> Experiment:
    train, test = build_datasets(cfg)
    shards = dirichlet_partition(
        train, cfg.workers, cfg.dirichlet_conc,
        rstream.substream(cfg.seed, rstream.TAG_PARTITION))
    oracle = build_oracle(cfg, train)
    x0 = oracle.init_params(rstream.substream(cfg.seed, rstream.TAG_MODEL_INIT))
    cohort = make_cohort(x0, cfg.workers, build_schedule(cfg), cfg.hyper)
    batch_fn = build_batch_fn(cfg.seed, shards, cfg.batch_size)
    return Experiment(cfg=cfg, cohort=cohort, oracle=oracle, shards=shards,
                      train_ds=train, test_ds=test, batch_fn=batch_fn)


def run_experiment(exp: Experiment,
                   on_record: Optional[Callable[[MetricsRecord], None]] = None
                   ) -> list[MetricsRecord]:
    """Run the configured number of epochs, collecting one record per epoch."""
    cfg = exp.cfg

    def eval_hook(cohort: Cohort, epoch: int) -> MetricsRecord:
        return collect_metrics(cohort, epoch, exp.oracle, exp.shards,
                               exp.train_ds, exp.test_ds,
                               tracker_cadence=cfg.diag_every)

    if cfg.parallelism > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            return run(exp.cohort, cfg.epochs, exp.oracle, exp.train_ds,
                       exp.batch_fn, eval_hook=eval_hook, on_record=on_record,
                       executor=pool)
    return run(exp.cohort, cfg.epochs, exp.oracle, exp.train_ds, exp.batch_fn,
               eval_hook=eval_hook, on_record=on_record)


_COMPARE_OPS = {
    ">=": lambda a, b: a >= b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    "<": lambda a, b: a < b,
    "==": lambda a, b: a == b,
}


@dataclass(frozen=True)
class CompareReport:
    """Final-epoch comparison of two metrics files."""

    final_a: MetricsRecord
    final_b: MetricsRecord
    deltas: dict
    passed: Optional[bool]
    detail: str


def compare_runs(csv_a: str, csv_b: str,
                 assertion: Optional[tuple[str, str]] = None) -> CompareReport:
    """Per-metric final-epoch deltas, optionally checked against an ordering.

    ``assertion`` is (metric, op) with op one of >=, <=, >, <, ==, read as
    ``final_a <op> final_b``.
    """
    recs_a = parse_metrics_csv(csv_a)
    recs_b = parse_metrics_csv(csv_b)
    if not recs_a or not recs_b:
        raise ValueError("both metrics files need at least one data row")
    fa, fb = recs_a[-1], recs_b[-1]
    deltas = {}
    for name in ("train_loss", "test_acc", "grad_norm_avg", "consensus_dist",
                 "tracker_err", "heterogeneity", "rho"):
        va, vb = getattr(fa, name), getattr(fb, name)
        deltas[name] = None if va is None or vb is None else va - vb
    passed = None
    detail = "no assertion"
    if assertion is not None:
        metric, op = assertion
        if op not in _COMPARE_OPS:
            raise ValueError(f"unknown comparison op {op!r}")
        va, vb = getattr(fa, metric), getattr(fb, metric)
        if va is None or vb is None:
            passed = False
            detail = f"{metric} missing in one of the runs"
        else:
            passed = bool(_COMPARE_OPS[op](va, vb))
            detail = f"{metric}: {va:.6g} {op} {vb:.6g} -> {passed}"
    return CompareReport(final_a=fa, final_b=fb, deltas=deltas,
                         passed=passed, detail=detail)
