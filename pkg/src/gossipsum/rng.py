"""Deterministic random-stream derivation.

Every random draw in a run comes from a generator addressed by the global
seed plus a small integer path (purpose tag, worker, epoch, step). Equal
addresses reproduce equal draw sequences on every platform, so runs are
byte-reproducible, workers never share a stream, and the draws made for
epoch ``e`` do not depend on the total number of epochs.
"""

import numpy as np

# Purpose tags; values are part of the reproducibility contract.
TAG_DATASET = 0
TAG_TESTSET = 1
TAG_PARTITION = 2
TAG_MODEL_INIT = 3
TAG_BATCH = 4
TAG_BOOTSTRAP = 5
TAG_SIGMA_EST = 6

# Pseudo step index for the tracker bootstrap draw made before epoch 0.
BOOTSTRAP_STEP = -1


def substream(seed: int, *path: int) -> np.random.Generator:
    """Derive an independent PCG64 generator from ``seed`` and a path."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = tuple(int(p) & 0xFFFFFFFF for p in path)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def batch_stream(seed: int, worker: int, epoch: int, step: int) -> np.random.Generator:
    """Stream for one minibatch draw; ``step == BOOTSTRAP_STEP`` gets its own tag."""
    if step == BOOTSTRAP_STEP:
        return substream(seed, TAG_BOOTSTRAP, worker, epoch, 0)
    return substream(seed, TAG_BATCH, worker, epoch, step)
