"""Per-epoch measurements of training progress and heterogeneity.

All quantities are evaluated at barrier points (after gossip), use exact
full-shard gradients where the definition calls for them, and reduce in a
fixed ascending worker order:

* consensus distance   (1/n) sum_i ||x_i - xbar||^2
* gradient norm        ||(1/n) sum_i grad_i(xbar)||
* heterogeneity        (1/n) sum_i ||grad_i(xbar) - grad(xbar)||^2
* tracker error        max_i ||y_i - (1/n) sum_j grad_j(x_i)||   (GT only;
  costs n**2 full gradients, so its cadence is configurable)

The CSV schema is fixed; absent metrics are emitted as empty fields and
floats carry 17 significant digits so rows round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, Shard
from .errors import StateError
from .objectives import GradientOracle, full_gradient
from .optim import Cohort

CSV_HEADER = "epoch,train_loss,test_acc,grad_norm_avg,consensus_dist,tracker_err,heterogeneity,rho"

_FIELDS = ("train_loss", "test_acc", "grad_norm_avg", "consensus_dist",
           "tracker_err", "heterogeneity", "rho")


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    train_loss: float
    test_acc: Optional[float]
    grad_norm_avg: float
    consensus_dist: float
    tracker_err: Optional[float]
    heterogeneity: float
    rho: float


def format_record(rec: MetricsRecord) -> str:
    cells = [str(rec.epoch)]
    for name in _FIELDS:
        value = getattr(rec, name)
        cells.append("" if value is None else f"{value:.17g}")
    return ",".join(cells)


def parse_metrics_csv(path: str) -> list[MetricsRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing or unexpected metrics header")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != len(_FIELDS) + 1:
            raise ValueError(f"{path}:{lineno}: expected {len(_FIELDS) + 1} cells")
        vals = [None if c == "" else float(c) for c in cells[1:]]
        records.append(MetricsRecord(int(cells[0]), *vals))
    return records


def mean_vector(vectors: Sequence[np.ndarray]) -> np.ndarray:
    out = np.zeros_like(vectors[0])
    for v in vectors:
        out += v
    return out / len(vectors)


def consensus_distance(xs: Sequence[np.ndarray]) -> float:
    """(1/n) sum_i ||x_i - xbar||^2 over the worker models."""
    xbar = mean_vector(xs)
    total = 0.0
    for x in xs:
        d = x - xbar
        total += float(np.dot(d, d))
    return total / len(xs)


def global_full_gradient(oracle: GradientOracle, params: np.ndarray,
                         shards: Sequence[Shard], ds: Dataset) -> np.ndarray:
    """Equal-weight mean of the per-worker full-shard gradients at ``params``."""
    acc = np.zeros_like(params)
    for shard in shards:
        acc += full_gradient(oracle, params, shard, ds)
    return acc / len(shards)


def heterogeneity(oracle: GradientOracle, params: np.ndarray,
                  shards: Sequence[Shard], ds: Dataset) -> float:
    """Point estimate of the local-vs-global gradient spread at ``params``."""
    grads = [full_gradient(oracle, params, s, ds) for s in shards]
    gbar = mean_vector(grads)
    total = 0.0
    for g in grads:
        d = g - gbar
        total += float(np.dot(d, d))
    return total / len(grads)


def tracker_error(workers, oracle: GradientOracle, shards: Sequence[Shard],
                  ds: Dataset) -> float:
    """max_i ||y_i - (1/n) sum_j grad_j(x_i)||, the tracking defect."""
    if any(w.y is None for w in workers):
        raise StateError("tracker error is only defined for gradient-tracking runs")
    worst = 0.0
    for w in workers:
        target = global_full_gradient(oracle, w.x, shards, ds)
        worst = max(worst, float(np.linalg.norm(w.y - target)))
    return worst


def evaluate_test(oracle: GradientOracle, params: np.ndarray,
                  test_ds: Dataset) -> tuple[float, float]:
    """Loss and argmax accuracy of ``params`` on a held-out set."""
    if test_ds is None or test_ds.n_samples == 0:
        raise ValueError("test set must be nonempty")
    loss, _ = oracle.value_and_grad(params, np.arange(test_ds.n_samples), test_ds)
    predicted = oracle.predict(params, test_ds.features)
    accuracy = float(np.mean(predicted == test_ds.labels))
    return loss, accuracy


def estimate_sigma_sq(oracle: GradientOracle, params: np.ndarray,
                      shards: Sequence[Shard], ds: Dataset, batch_size: int,
                      rng: np.random.Generator, n_resamples: int = 32) -> float:
    """Resampled minibatch-gradient variance around the full gradients.

    Off the default metrics path; mean over workers of the mean squared
    deviation of ``n_resamples`` minibatch gradients from the shard
    gradient, all at the same ``params``.
    """
    from .data import sample_minibatch

    total = 0.0
    for shard in shards:
        exact = full_gradient(oracle, params, shard, ds)
        dev = 0.0
        for _ in range(n_resamples):
            batch = sample_minibatch(shard, batch_size, rng)
            _, g = oracle.value_and_grad(params, batch, ds)
            diff = g - exact
            dev += float(np.dot(diff, diff))
        total += dev / n_resamples
    return total / len(shards)


def collect_metrics(cohort: Cohort, epoch: int, oracle: GradientOracle,
                    shards: Sequence[Shard], ds: Dataset,
                    test_ds: Optional[Dataset] = None,
                    tracker_cadence: int = 1) -> MetricsRecord:
    """Assemble the standard per-epoch record at the current barrier."""
    xs = [w.x for w in cohort.workers]
    xbar = mean_vector(xs)

    loss_total = 0.0
    for w, shard in zip(cohort.workers, shards):
        loss, _ = oracle.value_and_grad(w.x, shard.indices, ds)
        loss_total += loss
    train_loss = loss_total / cohort.n

    test_acc = None
    if test_ds is not None and oracle.has_classifier:
        _, test_acc = evaluate_test(oracle, xbar, test_ds)

    grad_norm = float(np.linalg.norm(global_full_gradient(oracle, xbar, shards, ds)))

    tracker = None
    if cohort.hyper.algo.value == "gtdsum" and epoch % tracker_cadence == 0:
        tracker = tracker_error(cohort.workers, oracle, shards, ds)

    return MetricsRecord(
        epoch=epoch,
        train_loss=train_loss,
        test_acc=test_acc,
        grad_norm_avg=grad_norm,
        consensus_dist=consensus_distance(xs),
        tracker_err=tracker,
        heterogeneity=heterogeneity(oracle, xbar, shards, ds),
        rho=cohort.schedule.lookup(epoch).rho,
    )
