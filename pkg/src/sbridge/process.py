"""Finite state spaces, noise schedules, and the reference jump process.

The reference process is a continuous-time Markov chain on a finite label set
whose transition kernel between grid times s <= t has the closed form

    P(x, y) = r * 1[x == y] + (1 - r) * m(y),      r = alpha_bar(t) / alpha_bar(s),

where m is a strictly positive prior that is also the stationary law of the
chain.  Its generator is A_t(x, y) = d/dt(ln alpha_bar)(t) * (1[x == y] - m(y)).
Because the kernel family composes exactly (Chapman-Kolmogorov holds in closed
form), every downstream projection and divergence can be evaluated without
integration error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidParameterError, TimeOrderError
from .validation import as_float_array, check_probability_vector

GRID_TIME_ATOL = 1e-9


@dataclass(frozen=True)
class StateSpace:
    """An ordered finite set of category labels."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 2:
            raise InvalidParameterError("state space needs at least 2 labels")
        if len(set(self.labels)) != len(self.labels):
            raise InvalidParameterError("state labels must be distinct")
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @property
    def d(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidParameterError(f"unknown label {label!r}") from None


@dataclass(frozen=True)
class Prior:
    """Strictly positive probability vector; the stationary target of the rates."""

    m: np.ndarray

    def __post_init__(self):
        m = check_probability_vector(self.m, "prior", strictly_positive=True)
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @property
    def d(self) -> int:
        return self.m.shape[0]

    @staticmethod
    def uniform(d: int) -> "Prior":
        return Prior(np.full(d, 1.0 / d))


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal retention alpha_bar on a uniform time grid.

    ``alpha[k]`` is the retention applied across the k-th interval
    ``[t_{k-1}, t_k]`` (``alpha[0] = 1`` by convention) and
    ``alpha_bar[k] = prod_{i<=k} alpha[i]`` with ``alpha_bar[0] = 1``.
    """

    tau: float
    alpha: np.ndarray
    alpha_bar: np.ndarray
    alpha_min: float | None = None

    def __post_init__(self):
        alpha = as_float_array(self.alpha, "alpha", ndim=1).copy()
        abar = as_float_array(self.alpha_bar, "alpha_bar", ndim=1).copy()
        if self.tau <= 0:
            raise InvalidParameterError("tau must be positive")
        if alpha.shape != abar.shape or alpha.shape[0] < 3:
            raise InvalidParameterError("alpha and alpha_bar must share a length of at least 3")
        if abs(abar[0] - 1.0) > 1e-15 or abs(alpha[0] - 1.0) > 1e-15:
            raise InvalidParameterError("alpha_bar(0) and alpha(0) must equal 1")
        if np.any(abar <= 0) or np.any(abar > 1 + 1e-15):
            raise InvalidParameterError("alpha_bar must lie in (0, 1]")
        if np.any(np.diff(abar) > 1e-15):
            raise InvalidParameterError("alpha_bar must be non-increasing")
        alpha.flags.writeable = False
        abar.flags.writeable = False
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", abar)

    @property
    def n_steps(self) -> int:
        return self.alpha_bar.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.tau / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.tau, self.n_steps + 1)

    def index_of(self, t: float) -> int:
        """Map a grid time to its index; rejects off-grid times."""
        k = t / self.dt
        ki = int(round(k))
        if not 0 <= ki <= self.n_steps or abs(k - ki) > GRID_TIME_ATOL / self.dt:
            raise InvalidParameterError(f"time {t!r} is not on the grid (dt={self.dt!r})")
        return ki

    def log_alpha_bar_slope(self, k: int) -> float:
        """d/dt ln(alpha_bar) at grid index k by central finite differences.

        One-sided differences are used at the two boundary indices.
        """
        la = np.log(self.alpha_bar)
        if k == 0:
            return float((la[1] - la[0]) / self.dt)
        if k == self.n_steps:
            return float((la[-1] - la[-2]) / self.dt)
        return float((la[k + 1] - la[k - 1]) / (2.0 * self.dt))

    def subsample(self, factor: int) -> "NoiseSchedule":
        """Coarsen the grid by an integer factor, keeping alpha_bar values.

        The returned schedule describes the same retention curve sampled every
        ``factor``-th point, so kernels between shared grid times are
        identical while the step size grows.  Used for grid-refinement checks.
        """
        if factor < 1 or self.n_steps % factor != 0:
            raise InvalidParameterError(f"factor {factor} must divide n_steps={self.n_steps}")
        abar = self.alpha_bar[::factor].copy()
        alpha = np.concatenate([[1.0], abar[1:] / abar[:-1]])
        return NoiseSchedule(tau=self.tau, alpha=alpha, alpha_bar=abar, alpha_min=self.alpha_min)

    def to_csv(self, path) -> None:
        lines = ["step,t,alpha,alpha_bar"]
        for k, t in enumerate(self.times):
            lines.append(f"{k},{t:.17g},{self.alpha[k]:.17g},{self.alpha_bar[k]:.17g}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @staticmethod
    def from_alpha_bar(alpha_bar, tau: float = 1.0) -> "NoiseSchedule":
        abar = as_float_array(alpha_bar, "alpha_bar", ndim=1)
        alpha = np.concatenate([[1.0], abar[1:] / abar[:-1]])
        return NoiseSchedule(tau=tau, alpha=alpha, alpha_bar=abar)


def build_schedule(
    n_steps: int, alpha_min: float, tau: float = 1.0, s_offset: float = 0.008
) -> NoiseSchedule:
    """Symmetric cosine retention schedule with floor ``alpha_min``.

    The per-step retention dips from ~1 at the endpoints to ``alpha_min`` at
    the midpoint:

        alpha(t) = cos^2((v + s)/(1 + s) * pi/2) * (1 - alpha_min) + alpha_min,

    with v = 2*min(t, tau - t)/tau sweeping [0, 1] over each half, so that
    alpha(t) = alpha(tau - t) exactly.  With 100 steps this lands
    alpha_bar(tau) near 0.95 for alpha_min = 0.999 and near 0.90 for
    alpha_min = 0.99795.
    """
    if n_steps < 2:
        raise InvalidParameterError("n_steps must be at least 2")
    if not 0.0 < alpha_min < 1.0:
        raise InvalidParameterError("alpha_min must lie in (0, 1)")
    if s_offset < 0:
        raise InvalidParameterError("s_offset must be non-negative")
    t = np.linspace(0.0, tau, n_steps + 1)
    v = 2.0 * np.minimum(t, tau - t) / tau
    arg = (v + s_offset) / (1.0 + s_offset) * (math.pi / 2.0)
    alpha = np.cos(arg) ** 2 * (1.0 - alpha_min) + alpha_min
    alpha[0] = 1.0
    abar = np.cumprod(alpha)
    return NoiseSchedule(tau=tau, alpha=alpha, alpha_bar=abar, alpha_min=alpha_min)


def geometric_schedule(n_steps: int, alpha_bar_tau: float, tau: float = 1.0) -> NoiseSchedule:
    """Constant-rate schedule with alpha_bar(t) = alpha_bar_tau ** (t / tau)."""
    if n_steps < 2:
        raise InvalidParameterError("n_steps must be at least 2")
    if not 0.0 < alpha_bar_tau < 1.0:
        raise InvalidParameterError("alpha_bar_tau must lie in (0, 1)")
    k = np.arange(n_steps + 1)
    abar = alpha_bar_tau ** (k / n_steps)
    abar[0] = 1.0
    return NoiseSchedule.from_alpha_bar(abar, tau=tau)


@dataclass(frozen=True)
class TransitionKernel:
    """Row-stochastic transition matrix of the chain between times s and t."""

    s: float
    t: float
    entries: np.ndarray

    def __post_init__(self):
        if self.t < self.s:
            raise TimeOrderError(f"kernel requires s <= t, got s={self.s}, t={self.t}")
        entries = as_float_array(self.entries, "kernel entries", ndim=2).copy()
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)


@dataclass(frozen=True)
class RateMatrix:
    """Generator at time t: zero row sums, non-negative off-diagonals."""

    t: float
    entries: np.ndarray

    def __post_init__(self):
        entries = as_float_array(self.entries, "rate entries", ndim=2).copy()
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)


def _kernel_matrix(schedule: NoiseSchedule, m: np.ndarray, i: int, j: int) -> np.ndarray:
    r = schedule.alpha_bar[j] / schedule.alpha_bar[i]
    d = m.shape[0]
    out = np.tile((1.0 - r) * m, (d, 1))
    out[np.diag_indices(d)] += r
    return out


def _rate_matrix(schedule: NoiseSchedule, m: np.ndarray, k: int) -> np.ndarray:
    g = schedule.log_alpha_bar_slope(k)
    d = m.shape[0]
    out = np.tile(-g * m, (d, 1))
    out[np.diag_indices(d)] += g
    return out


def reference_kernel(schedule: NoiseSchedule, prior: Prior, s: float, t: float) -> TransitionKernel:
    """Closed-form kernel P(x, y) = r * delta + (1 - r) * m between grid times."""
    if t < s:
        raise TimeOrderError(f"reference_kernel requires s <= t, got s={s}, t={t}")
    i, j = schedule.index_of(s), schedule.index_of(t)
    return TransitionKernel(s=s, t=t, entries=_kernel_matrix(schedule, prior.m, i, j))


def reference_rate(schedule: NoiseSchedule, prior: Prior, t: float) -> RateMatrix:
    """Generator at a grid time, with d/dt ln(alpha_bar) from finite differences."""
    k = schedule.index_of(t)
    return RateMatrix(t=t, entries=_rate_matrix(schedule, prior.m, k))


class ReferenceProcess:
    """A reference chain on the grid: per-index kernels, rates, and a prior.

    This is the handle passed to projections, solvers, and losses.  The base
    class implements the single-component closed form; ``ProductProcess``
    composes several components into a factorized chain on the product space.
    """

    def __init__(self, schedule: NoiseSchedule, prior: Prior):
        self.schedule = schedule
        self.prior = prior
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    @property
    def d(self) -> int:
        return self.prior.d

    @property
    def n_steps(self) -> int:
        return self.schedule.n_steps

    def kernel(self, i: int, j: int) -> np.ndarray:
        """Transition matrix between grid indices i <= j (cached, read-only)."""
        if j < i:
            raise TimeOrderError(f"kernel requires i <= j, got {i} > {j}")
        key = (i, j)
        if key not in self._cache:
            k = self._compute_kernel(i, j)
            k.flags.writeable = False
            self._cache[key] = k
        return self._cache[key]

    def _compute_kernel(self, i: int, j: int) -> np.ndarray:
        return _kernel_matrix(self.schedule, self.prior.m, i, j)

    def rate(self, k: int) -> np.ndarray:
        return _rate_matrix(self.schedule, self.prior.m, k)

    def stationary(self) -> np.ndarray:
        return self.prior.m

    def endpoint_kernel(self) -> np.ndarray:
        return self.kernel(0, self.n_steps)

    def endpoint_coupling(self) -> np.ndarray:
        """Joint law of (X_0, X_tau) with a uniform time-zero convention."""
        return self.endpoint_kernel() / self.d


class ProductProcess(ReferenceProcess):
    """Factorized reference chain: independent components, one shared grid.

    The kernel on the product space is the Kronecker product of component
    kernels, with the flat index running in component-major mixed radix
    (first component most significant).
    """

    def __init__(self, components: list[ReferenceProcess]):
        if not components:
            raise InvalidParameterError("ProductProcess needs at least one component")
        sched = components[0].schedule
        for c in components[1:]:
            if c.schedule.n_steps != sched.n_steps or c.schedule.tau != sched.tau:
                raise InvalidParameterError("all components must share one grid")
        m = components[0].stationary()
        for c in components[1:]:
            m = np.kron(m, c.stationary())
        super().__init__(sched, Prior(m))
        self.components = list(components)

    def _compute_kernel(self, i: int, j: int) -> np.ndarray:
        out = self.components[0].kernel(i, j)
        for c in self.components[1:]:
            out = np.kron(out, c.kernel(i, j))
        return np.ascontiguousarray(out)

    def rate(self, k: int) -> np.ndarray:
        # Generator of a product of independent chains: sum of component rates
        # acting on their own factor (Kronecker sum).
        mats = [c.rate(k) for c in self.components]
        eyes = [np.eye(c.d) for c in self.components]
        total = np.zeros((self.d, self.d))
        for idx in range(len(mats)):
            term = mats[idx] if idx == 0 else eyes[0]
            for pos in range(1, len(mats)):
                term = np.kron(term, mats[idx] if pos == idx else eyes[pos])
            total += term
        return total
