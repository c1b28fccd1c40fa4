"""Consensus matrices and epoch-indexed topology schedules.

A consensus (mixing) matrix is a symmetric, doubly stochastic matrix with
entries in [0, 1]; workers i and j exchange parameters exactly when
``w[i, j] > 0``. One gossip round multiplies the stacked worker vectors by
the matrix, which preserves their mean and contracts their disagreement by
at least the spectral gap

    rho = 1 - max(|lambda_2|, |lambda_n|)**2

with eigenvalues sorted descending. rho = 1 for the complete (full-mesh)
topology and shrinks toward 0 as the graph gets more poorly connected;
connected constructions here always yield rho > 0.

Matrices built from a graph use the Metropolis-Hastings rule

    w_ij = min(1 / (deg(i) + 1), 1 / (deg(j) + 1))   for edges i != j,
    w_ii = 1 - sum_{j != i} w_ij,

which is doubly stochastic for any undirected graph. Each unordered pair is
computed once so symmetry holds bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import TopologyError

# Doubly-stochastic / symmetry tolerance for validation, in doubles.
VALIDATION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Validated gossip weight matrix with its cached spectral gap."""

    n: int
    w: np.ndarray
    rho: float

    def __post_init__(self):
        self.w.setflags(write=False)

    def __repr__(self):
        return f"MixingMatrix(n={self.n}, rho={self.rho:.6g})"


@dataclass(frozen=True)
class MatrixValidation:
    """Per-invariant check results; violations are max magnitudes."""

    entry_violation: float
    symmetry_violation: float
    row_sum_violation: float
    col_sum_violation: float
    tol: float = VALIDATION_TOL

    @property
    def entries_ok(self) -> bool:
        return self.entry_violation <= self.tol

    @property
    def symmetric_ok(self) -> bool:
        return self.symmetry_violation <= self.tol

    @property
    def row_sums_ok(self) -> bool:
        return self.row_sum_violation <= self.tol

    @property
    def col_sums_ok(self) -> bool:
        return self.col_sum_violation <= self.tol

    @property
    def passed(self) -> bool:
        return (self.entries_ok and self.symmetric_ok
                and self.row_sums_ok and self.col_sums_ok)


def validate(w: np.ndarray) -> MatrixValidation:
    """Check the consensus-matrix invariants, reporting max violations."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {w.shape}")
    below = float(np.max(np.maximum(-w, 0.0)))
    above = float(np.max(np.maximum(w - 1.0, 0.0)))
    return MatrixValidation(
        entry_violation=max(below, above),
        symmetry_violation=float(np.max(np.abs(w - w.T))),
        row_sum_violation=float(np.max(np.abs(w.sum(axis=1) - 1.0))),
        col_sum_violation=float(np.max(np.abs(w.sum(axis=0) - 1.0))),
    )


def spectral_gap(w: np.ndarray) -> float:
    """Spectral gap 1 - max(|lambda_2|, |lambda_n|)**2 of a symmetric matrix.

    Uses the symmetric eigensolver; eigenvalues are sorted descending before
    picking the second-largest and the smallest. A disconnected matrix (the
    identity, say) returns 0.0; callers that require connectivity must check.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {w.shape}")
    if float(np.max(np.abs(w - w.T))) > VALIDATION_TOL:
        raise ValueError("spectral_gap requires a symmetric matrix")
    n = w.shape[0]
    if n == 1:
        return 1.0
    evals = np.linalg.eigvalsh(w)          # ascending
    desc = evals[::-1]
    lam = max(abs(float(desc[1])), abs(float(desc[-1])))
    return min(max(1.0 - lam * lam, 0.0), 1.0)


def _finalize(w: np.ndarray) -> MixingMatrix:
    report = validate(w)
    if not report.passed:
        raise TopologyError(f"constructed matrix fails validation: {report}")
    return MixingMatrix(n=w.shape[0], w=w, rho=spectral_gap(w))


def build_full_mesh(n: int) -> MixingMatrix:
    """Uniform-averaging matrix: every entry 1/n, spectral gap exactly 1."""
    if n < 1:
        raise ValueError(f"worker count must be >= 1, got {n}")
    return _finalize(np.full((n, n), 1.0 / n, dtype=np.float64))


def build_metropolis_hastings(adjacency: np.ndarray) -> MixingMatrix:
    """Metropolis-Hastings weights on an undirected connected graph.

    ``adjacency`` is a 0/1 (or boolean) symmetric matrix with a zero
    diagonal. Raises TopologyError when the graph is disconnected and
    ValueError when the adjacency itself is malformed.
    """
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {adj.shape}")
    if not np.isin(adj, (0, 1)).all():
        raise ValueError("adjacency entries must be 0 or 1")
    adj = adj.astype(bool)
    if adj.diagonal().any():
        raise ValueError("adjacency must not contain self-loops")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    n = adj.shape[0]
    if not _connected(adj):
        raise TopologyError("communication graph is disconnected")

    deg = adj.sum(axis=1)
    w = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            if adj[i, j]:
                weight = min(1.0 / (deg[i] + 1.0), 1.0 / (deg[j] + 1.0))
                w[i, j] = weight
                w[j, i] = weight
    for i in range(n):
        w[i, i] = 1.0 - float(np.sum(w[i]))
    return _finalize(w)


def build_ring(n: int) -> MixingMatrix:
    """Metropolis-Hastings matrix on the n-cycle (n >= 3)."""
    if n < 3:
        raise ValueError(f"ring topology needs n >= 3, got {n}")
    adj = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        adj[i, (i + 1) % n] = 1
        adj[(i + 1) % n, i] = 1
    return build_metropolis_hastings(adj)


def random_connected_adjacency(n: int, rng: np.random.Generator,
                               extra_edge_prob: float = 0.2) -> np.ndarray:
    """Random connected graph: a random spanning tree plus extra edges."""
    if n < 2:
        raise ValueError(f"need n >= 2 nodes, got {n}")
    adj = np.zeros((n, n), dtype=np.int64)
    order = rng.permutation(n)
    for k in range(1, n):
        a = order[k]
        b = order[rng.integers(0, k)]
        adj[a, b] = adj[b, a] = 1
    for i in range(n):
        for j in range(i + 1, n):
            if not adj[i, j] and rng.random() < extra_edge_prob:
                adj[i, j] = adj[j, i] = 1
    return adj


def _connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


@dataclass(frozen=True)
class ScheduleEntry:
    start: int
    stop: int          # half-open: epochs start <= e < stop
    matrix: MixingMatrix


@dataclass(frozen=True)
class TopologySchedule:
    """Ordered epoch ranges, each with the matrix in force."""

    entries: tuple[ScheduleEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("schedule must have at least one entry")
        cursor = 0
        n = self.entries[0].matrix.n
        for e in self.entries:
            if e.start != cursor or e.stop <= e.start:
                raise ValueError(
                    f"schedule ranges must be contiguous half-open intervals "
                    f"from 0; got [{e.start}, {e.stop}) after {cursor}")
            if e.matrix.n != n:
                raise ValueError("all scheduled matrices must share n")
            cursor = e.stop

    @property
    def n(self) -> int:
        return self.entries[0].matrix.n

    @property
    def total_epochs(self) -> int:
        return self.entries[-1].stop

    def lookup(self, epoch: int) -> MixingMatrix:
        if not 0 <= epoch < self.total_epochs:
            raise ValueError(
                f"epoch {epoch} outside schedule coverage [0, {self.total_epochs})")
        for e in self.entries:
            if epoch < e.stop:
                return e.matrix
        raise AssertionError("unreachable: schedule is contiguous")


def make_schedule(pairs: Sequence[tuple[int, MixingMatrix]]) -> TopologySchedule:
    """Build a schedule from (until_epoch, matrix) pairs in order."""
    entries = []
    start = 0
    for until, matrix in pairs:
        entries.append(ScheduleEntry(start=start, stop=until, matrix=matrix))
        start = until
    return TopologySchedule(entries=tuple(entries))


def schedule_lookup(sched: TopologySchedule, epoch: int) -> MixingMatrix:
    """Matrix in force at ``epoch``; errors outside the covered range."""
    return sched.lookup(epoch)
