"""Doob h-transform of the reference process: pinned kernels, rates, sampling.

Conditioning the reference chain on X_tau = z keeps it Markov.  Its kernel
between grid times s <= t is

    P(x, y; z) = P_{s:t}(x, y) * P_{t:tau}(y, z) / P_{s:tau}(x, z),

and its generator reweights the reference rates by the same bridge ratio.
All formulas below are exact on the grid; path sampling makes one categorical
draw per interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateBridgeError, InvalidParameterError, TimeOrderError
from .process import NoiseSchedule, Prior, RateMatrix, ReferenceProcess
from .validation import check_state_index


@dataclass(frozen=True)
class PinnedKernel:
    """Transition matrix of the chain conditioned on ending at state z."""

    s: float
    t: float
    z: int
    entries: np.ndarray

    def __post_init__(self):
        if self.t < self.s:
            raise TimeOrderError(f"pinned kernel requires s <= t, got s={self.s}, t={self.t}")
        entries = np.asarray(self.entries, dtype=float).copy()
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)


@dataclass(frozen=True)
class JumpPath:
    """A piecewise-constant path recorded at grid resolution.

    ``times[i]`` is the instant of the i-th jump and ``states`` has one more
    entry than ``times``: the state before the first jump, then after each.
    """

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=int)
        if states.shape[0] != times.shape[0] + 1:
            raise InvalidParameterError("states must have exactly one more entry than times")
        if times.shape[0] and np.any(np.diff(times) <= 0):
            raise InvalidParameterError("jump times must be strictly increasing")
        if np.any(states[1:] == states[:-1]):
            raise InvalidParameterError("consecutive states must differ")
        times.flags.writeable = False
        states.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def start(self) -> int:
        return int(self.states[0])

    @property
    def end(self) -> int:
        return int(self.states[-1])

    def to_csv(self, path, labels=None, tau: float = 1.0) -> None:
        def name(s):
            return labels[s] if labels is not None else str(s)

        lines = ["t,state_label", f"{0.0:.17g},{name(self.states[0])}"]
        for t, s in zip(self.times, self.states[1:]):
            lines.append(f"{t:.17g},{name(s)}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def pinned_kernel_matrix(process: ReferenceProcess, i: int, j: int, z: int) -> np.ndarray:
    """Array form of the pinned kernel between grid indices i <= j."""
    n = process.n_steps
    p_end = process.kernel(i, n)[:, z]
    if np.any(p_end <= 0.0):
        raise DegenerateBridgeError(f"endpoint {z} unreachable from some state at index {i}")
    return process.kernel(i, j) * process.kernel(j, n)[:, z][None, :] / p_end[:, None]


def pinned_kernels_all(process: ReferenceProcess, i: int, j: int) -> np.ndarray:
    """Pinned kernels for every endpoint, shaped (z, x, y)."""
    n = process.n_steps
    p_start = process.kernel(i, n)
    if np.any(p_start <= 0.0):
        raise DegenerateBridgeError(f"some endpoint is unreachable from index {i}")
    p_mid = process.kernel(i, j)
    p_rest = process.kernel(j, n)
    return p_mid[None, :, :] * p_rest.T[:, None, :] / p_start.T[:, :, None]


def backward_pinned_kernels_all(process: ReferenceProcess, i: int, j: int) -> np.ndarray:
    """Bayes reversal of the chain conditioned on X_0, shaped (x0, y, x).

    Entry (x0, y, x) is P(X_{t_i} = x | X_{t_j} = y, X_0 = x0) for i <= j.
    """
    p_to_j = process.kernel(0, j)
    if np.any(p_to_j <= 0.0):
        raise DegenerateBridgeError(f"some state at index {j} is unreachable from time 0")
    p_to_i = process.kernel(0, i)
    p_step = process.kernel(i, j)
    return p_to_i[:, None, :] * p_step.T[None, :, :] / p_to_j[:, :, None]


def pinned_kernel(schedule: NoiseSchedule, prior: Prior, s: float, t: float, z: int) -> PinnedKernel:
    process = ReferenceProcess(schedule, prior)
    z = check_state_index(z, prior.d, "z")
    i, j = schedule.index_of(s), schedule.index_of(t)
    if j < i:
        raise TimeOrderError(f"pinned_kernel requires s <= t, got s={s}, t={t}")
    return PinnedKernel(s=s, t=t, z=z, entries=pinned_kernel_matrix(process, i, j, z))


def pinned_rate(schedule: NoiseSchedule, prior: Prior, s: float, z: int) -> RateMatrix:
    """Generator of the pinned chain: off-diagonal A(x,y) * P(y,z)/P(x,z)."""
    process = ReferenceProcess(schedule, prior)
    z = check_state_index(z, prior.d, "z")
    k = schedule.index_of(s)
    return RateMatrix(t=s, entries=pinned_rate_matrix(process, k, z))


def pinned_rate_matrix(process: ReferenceProcess, k: int, z: int) -> np.ndarray:
    n = process.n_steps
    p_end = process.kernel(k, n)[:, z]
    if np.any(p_end <= 0.0):
        raise DegenerateBridgeError(f"endpoint {z} unreachable from some state at index {k}")
    a = process.rate(k)
    out = a * (p_end[None, :] / p_end[:, None])
    np.fill_diagonal(out, 0.0)
    np.fill_diagonal(out, -out.sum(axis=1))
    return out


def sample_bridge_states(
    process: ReferenceProcess, x0: int, z: int, n_paths: int, rng: np.random.Generator
) -> np.ndarray:
    """States of n_paths endpoint-conditioned paths at every grid time."""
    n = process.n_steps
    out = np.empty((n_paths, n + 1), dtype=np.int64)
    out[:, 0] = x0
    state = np.full(n_paths, x0, dtype=np.int64)
    for k in range(n):
        kernel = pinned_kernel_matrix(process, k, k + 1, z)
        cum = np.cumsum(kernel, axis=1)
        u = rng.random(n_paths)
        state = np.minimum((u[:, None] > cum[state, :]).sum(axis=1), process.d - 1)
        out[:, k + 1] = state
    out[:, n] = z
    return out


def sample_bridge_path(
    schedule: NoiseSchedule, prior: Prior, x0: int, z: int, rng: np.random.Generator
) -> JumpPath:
    """One path of the reference bridge from x0 to z, jumps at grid resolution."""
    process = ReferenceProcess(schedule, prior)
    x0 = check_state_index(x0, prior.d, "x0")
    z = check_state_index(z, prior.d, "z")
    states = sample_bridge_states(process, x0, z, 1, rng)[0]
    times = schedule.times
    jump_at = np.nonzero(states[1:] != states[:-1])[0]
    return JumpPath(times=times[jump_at + 1], states=np.concatenate([[x0], states[jump_at + 1]]))
