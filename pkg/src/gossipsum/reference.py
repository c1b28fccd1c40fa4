"""Deliberately simple reference implementations used as test oracles.

Nothing in this module is on the training path. Each stepper is a few
lines of straight-line vector arithmetic transcribing the classical
two-variable forms:

    heavy ball:      u' = beta * u + g          x' = x - eta * u'
    Nesterov:        u' = beta * u + g          x' = x - eta * (beta * u' + g)
    gradient track:  x' = gossip(x - eta * y)   y' = gossip(y + g(x') - g_old)

together with their one-line equivalents and the auxiliary-sequence
recursions used to audit momentum trajectories:

    z = x + beta / (1 - beta) * (x - v)     z' = z - eta / (1 - beta) * g
    c = x - v                               c' = beta * c + (alpha - alpha*beta - 1) * eta * g

The equivalence mapping between the unified update's (x, v) pair and the
classical (x, u) pair is u = (v - x) / eta for heavy ball and
u = (v - x) / (beta * eta) for Nesterov; both start at u = 0 when v = x,
and gossiping (x, u) corresponds linearly to gossiping (x, v).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .optim import gossip_average
from .topology import MixingMatrix, TopologySchedule


@dataclass
class MomentumState:
    x: np.ndarray
    u: np.ndarray


def hb_step(state: MomentumState, g: np.ndarray, beta: float, eta: float) -> MomentumState:
    """Heavy-ball step, momentum-buffer form."""
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    state.u = beta * state.u + g
    state.x = state.x - eta * state.u
    return state


def hb_step_one_line(x: np.ndarray, x_prev: np.ndarray, g: np.ndarray,
                     beta: float, eta: float) -> np.ndarray:
    """Heavy-ball step in displacement form (valid from the second step)."""
    return x - eta * g + beta * (x - x_prev)


def nesterov_step(state: MomentumState, g: np.ndarray, beta: float, eta: float) -> MomentumState:
    """Nesterov step: the descent direction looks ahead along the new buffer."""
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    state.u = beta * state.u + g
    state.x = state.x - eta * (beta * state.u + g)
    return state


def nesterov_step_one_line(x: np.ndarray, x_prev: np.ndarray, g: np.ndarray,
                           g_prev: np.ndarray, beta: float, eta: float) -> np.ndarray:
    """Nesterov step in displacement form (valid from the second step)."""
    return x - eta * g + beta * (x - eta * g - x_prev + eta * g_prev)


@dataclass
class GtState:
    x: np.ndarray
    y: np.ndarray
    g_old: np.ndarray


def vanilla_gt_step(states: list[GtState], w: MixingMatrix,
                    grad_fn: Callable[[int, np.ndarray], np.ndarray],
                    eta: float) -> list[GtState]:
    """One gradient-tracking round; ``grad_fn(i, x_new)`` supplies the fresh gradient."""
    xs = gossip_average([s.x - eta * s.y for s in states], w)
    g_new = [grad_fn(i, xs[i]) for i in range(len(states))]
    ys = gossip_average([s.y + g_new[i] - s.g_old for i, s in enumerate(states)], w)
    for i, s in enumerate(states):
        s.x = xs[i]
        s.y = ys[i]
        s.g_old = g_new[i]
    return states


class Lemma1Violations(NamedTuple):
    z: float
    c: float


def lemma1_track(traj: Sequence[tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]],
                 alpha: float, beta: float, eta: float) -> Lemma1Violations:
    """Max violation of the two auxiliary-sequence recursions along one epoch.

    ``traj`` is the within-epoch sequence of (x, v, g) snapshots taken
    before each local step, with a final (x, v, None) entry after the last
    step; no gossip may occur inside it.
    """
    if beta >= 1.0:
        raise ValueError("beta must be < 1 (the z recursion divides by 1 - beta)")
    if len(traj) < 2:
        raise ValueError("need at least one transition to check")
    ratio = beta / (1.0 - beta)
    viol_z = 0.0
    viol_c = 0.0
    for (x0, v0, g0), (x1, v1, _) in zip(traj[:-1], traj[1:]):
        if g0 is None:
            raise ValueError("every transition needs its gradient")
        z0 = x0 + ratio * (x0 - v0)
        z1 = x1 + ratio * (x1 - v1)
        c0 = x0 - v0
        c1 = x1 - v1
        viol_z = max(viol_z, float(np.max(np.abs(z1 - z0 + eta / (1.0 - beta) * g0))))
        viol_c = max(viol_c, float(np.max(np.abs(
            c1 - beta * c0 - (alpha - alpha * beta - 1.0) * eta * g0))))
    return Lemma1Violations(z=viol_z, c=viol_c)


# ---------------------------------------------------------------------------
# Trajectory runners for the equivalence tests. These mirror the epoch
# structure of the production loops (K local steps, then gossip) but step
# with the classical forms above; batch gradients are supplied by the
# caller, normally from a recorded replay log.
# ---------------------------------------------------------------------------

GradAt = Callable[[int, int, int, np.ndarray], np.ndarray]  # (worker, epoch, step, x) -> g


def run_decentralized_momentum(kind: str, x0: np.ndarray, n: int,
                               schedule: TopologySchedule, epochs: int,
                               k_local: int, beta: float, eta: float,
                               grad_fn: GradAt) -> list[list[np.ndarray]]:
    """Local heavy-ball or Nesterov steps with (x, u) gossiped per epoch.

    Returns the post-gossip x of every worker after each epoch.
    """
    step = {"hb": hb_step, "nesterov": nesterov_step}[kind]
    states = [MomentumState(x=x0.copy(), u=np.zeros_like(x0)) for _ in range(n)]
    traj = []
    for t in range(epochs):
        for i, s in enumerate(states):
            for tau in range(k_local):
                step(s, grad_fn(i, t, tau, s.x), beta, eta)
        matrix = schedule.lookup(t)
        xs = gossip_average([s.x for s in states], matrix)
        us = gossip_average([s.u for s in states], matrix)
        for i, s in enumerate(states):
            s.x = xs[i]
            s.u = us[i]
        traj.append([x.copy() for x in xs])
    return traj


def run_local_sgd_momentum(x0: np.ndarray, n: int, schedule: TopologySchedule,
                           epochs: int, k_local: int, beta: float, eta: float,
                           grad_fn: GradAt,
                           guard: float = 1e12) -> list[list[np.ndarray]]:
    """Local SGD with heavy-ball momentum: models gossiped, buffers kept local.

    This is the classical periodic-averaging baseline; unlike the unified
    update it never synchronizes momentum state, which is what lets local
    drift accumulate on skewed shards. Returns post-gossip x per epoch, or
    raises FloatingPointError past the magnitude guard.
    """
    states = [MomentumState(x=x0.copy(), u=np.zeros_like(x0)) for _ in range(n)]
    traj = []
    for t in range(epochs):
        for i, s in enumerate(states):
            for tau in range(k_local):
                hb_step(s, grad_fn(i, t, tau, s.x), beta, eta)
                if not np.all(np.isfinite(s.x)) or float(np.max(np.abs(s.x))) > guard:
                    raise FloatingPointError(f"baseline diverged at epoch {t}")
        xs = gossip_average([s.x for s in states], schedule.lookup(t))
        for i, s in enumerate(states):
            s.x = xs[i]
        traj.append([x.copy() for x in xs])
    return traj


def run_minibatch_sgd(x0: np.ndarray, n: int, epochs: int, eta: float,
                      grad_fn: GradAt) -> list[np.ndarray]:
    """Centralized SGD on the worker-averaged gradient, one step per epoch."""
    x = x0.copy()
    traj = []
    for t in range(epochs):
        mean_g = np.zeros_like(x)
        for i in range(n):
            mean_g += grad_fn(i, t, 0, x)
        x = x - eta * (mean_g / n)
        traj.append(x.copy())
    return traj


def run_vanilla_gt(x0: np.ndarray, n: int, w: MixingMatrix, epochs: int,
                   eta: float, grad_fn: GradAt) -> list[list[np.ndarray]]:
    """Gradient-tracking trajectory with y seeded from the epoch-0 gradients.

    The tracker refresh after the last model update is skipped because it
    would consume a batch beyond the compared horizon.
    """
    states = [GtState(x=x0.copy(), y=grad_fn(i, 0, 0, x0), g_old=None) for i in range(n)]
    for s in states:
        s.g_old = s.y.copy()
    traj = []
    for t in range(epochs):
        if t + 1 < epochs:
            vanilla_gt_step(states, w, lambda i, x_new: grad_fn(i, t + 1, 0, x_new), eta)
            traj.append([s.x.copy() for s in states])
        else:
            xs = gossip_average([s.x - eta * s.y for s in states], w)
            traj.append([x.copy() for x in xs])
    return traj
