import numpy as np
import pytest

from gossipsum import rng as rstream
from gossipsum.data import Dataset, Shard, dirichlet_partition, synthetic_blobs
from gossipsum.optim import Algo, Cohort, SumHyper, make_cohort
from gossipsum.topology import MixingMatrix, TopologySchedule, make_schedule


def blobs(seed=7, classes=4, dim=8, samples=400, stddev=1.0):
    return synthetic_blobs(classes, dim, samples, stddev,
                           rstream.substream(seed, rstream.TAG_DATASET))


def partition(ds, n=4, conc=0.5, seed=7):
    return dirichlet_partition(ds, n, conc, rstream.substream(seed, rstream.TAG_PARTITION))


def static_schedule(matrix, epochs):
    return make_schedule([(epochs, matrix)])


def identity_matrix(n):
    """Identity as a mixing matrix: valid per the invariants, but no mixing."""
    return MixingMatrix(n=n, w=np.eye(n), rho=0.0)


def batch_fn_for(seed, shards, batch_size):
    from gossipsum.harness import build_batch_fn
    return build_batch_fn(seed, shards, batch_size)


@pytest.fixture
def small_dataset():
    return blobs()
