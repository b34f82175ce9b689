"""Tabular stand-in for the learned rate approximation.

A predictor holds one logit row per (grid time, current state); its softmax
is a distribution z over the far endpoint (the terminal state for the
forward direction, the initial state for the backward one).  The induced
rates reweight the reference rates by bridge ratios,

    A'(x, y) = A(x, y) * (P z)(y) / (P z)(x),    y != x,

so a one-hot z reproduces the pinned rates exactly, and mixtures of pinned
rates are reachable by reweighting z with the bridge denominator.  Training
minimizes the discretized projection loss: per-step KL between pinned target
kernels and the predictor kernel (I + A' dt, clipped at zero and
row-renormalized), averaged under the current mixture's joints and scaled by
1/dt.  Expectations are exact sums by default; a sampled-batch mode exists
behind the ``batch`` flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .bridge import backward_pinned_kernels_all, pinned_kernels_all
from .exceptions import InfiniteDivergenceError, InvalidParameterError, PositivityError
from .measures import (
    BackwardMarkovChainMeasure,
    Coupling,
    MarkovChainMeasure,
    ReciprocalMeasure,
    markov_projection,
)
from .process import NoiseSchedule, Prior, ReferenceProcess
from .validation import check_probability_vector

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class TabularPredictor:
    """Logit table (n_steps, d, d); softmax over the last axis gives z."""

    logits: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float).copy()
        if logits.ndim != 3 or logits.shape[1] != logits.shape[2]:
            raise InvalidParameterError("logits must have shape (n_steps, d, d)")
        logits.flags.writeable = False
        object.__setattr__(self, "logits", logits)

    @property
    def n_steps(self) -> int:
        return self.logits.shape[0]

    @property
    def d(self) -> int:
        return self.logits.shape[1]

    def weights(self, k: int) -> np.ndarray:
        """softmax(logits[k]) rows: z-distribution per current state."""
        return _softmax(self.logits[k])

    @staticmethod
    def zeros(n_steps: int, d: int) -> "TabularPredictor":
        return TabularPredictor(np.zeros((n_steps, d, d)))

    def to_json(self) -> dict:
        return {"n_steps": self.n_steps, "d": self.d, "logits": self.logits.tolist()}

    @staticmethod
    def from_json(doc: dict) -> "TabularPredictor":
        return TabularPredictor(np.asarray(doc["logits"], dtype=float))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1.0
    n_epochs: int = 2000
    batch: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidParameterError("learning_rate must be positive")
        if self.n_epochs < 1:
            raise InvalidParameterError("n_epochs must be at least 1")
        if self.batch is not None and self.batch < 1:
            raise InvalidParameterError("batch must be at least 1 when set")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _direction_pieces(process: ReferenceProcess, k: int, direction: str):
    """Per-slice (M, B) with rates B(r, c) and bridge weights M(r, z).

    Rows r index the state the predictor conditions on; the induced rate is
    B(r, c) * V(r, c) / V(r, r) with V = Z M^T.
    """
    n = process.n_steps
    a = process.rate(k)
    if direction == "forward":
        return process.kernel(k, n), a
    if direction == "backward":
        return process.kernel(0, k).T, a.T
    raise InvalidParameterError(f"direction must be 'forward' or 'backward', got {direction!r}")


def predictor_rate(
    pred: TabularPredictor, schedule: NoiseSchedule, prior: Prior, t: float, x: int
) -> np.ndarray:
    """Rate row at (t, x) induced by the predictor's z-distribution."""
    process = ReferenceProcess(schedule, prior)
    k = schedule.index_of(t)
    if k >= pred.n_steps:
        raise InvalidParameterError("t must be the start of a grid interval")
    return predictor_rate_matrix(pred.weights(k), process, k, "forward")[x]


def predictor_rate_matrix(
    z: np.ndarray, process: ReferenceProcess, k: int, direction: str
) -> np.ndarray:
    m, b = _direction_pieces(process, k, direction)
    v = z @ m.T
    diag = np.diag(v)
    if np.any(diag <= 0):
        raise PositivityError("bridge-weighted z vanished at the conditioning state")
    rate = b * (v / diag[:, None])
    np.fill_diagonal(rate, 0.0)
    np.fill_diagonal(rate, -rate.sum(axis=1))
    return rate


def predictor_step_kernel(
    z: np.ndarray, process: ReferenceProcess, k: int, direction: str
) -> np.ndarray:
    """First-order kernel I + A' dt, clipped at zero and row-renormalized."""
    rate = predictor_rate_matrix(z, process, k, direction)
    kern = np.eye(process.d) + rate * process.schedule.dt
    kern = np.clip(kern, 0.0, None)
    return kern / kern.sum(axis=1, keepdims=True)


def predictor_chain(
    pred: TabularPredictor, process: ReferenceProcess, init, direction: str = "forward"
) -> MarkovChainMeasure | BackwardMarkovChainMeasure:
    """Markov measure induced by the predictor, anchored at ``init``."""
    init = check_probability_vector(init, "init", d=process.d)
    kernels = tuple(
        predictor_step_kernel(pred.weights(k), process, k, direction) for k in range(process.n_steps)
    )
    if direction == "forward":
        return MarkovChainMeasure(init=init, kernels=kernels)
    return BackwardMarkovChainMeasure(terminal=init, kernels=kernels)


def _slice_targets(rec: ReciprocalMeasure, k: int, direction: str) -> tuple[np.ndarray, float]:
    """Unnormalized target kernel T(r, c) and the constant entropy part."""
    process = rec.process
    if direction == "forward":
        joint = rec.joint_with_terminal(k)  # (x, z)
        pins = pinned_kernels_all(process, k, k + 1)  # (z, x, y)
        t = np.einsum("xz,zxy->xy", joint, pins)
        with np.errstate(divide="ignore", invalid="ignore"):
            logpin = np.where(pins > 0, np.log(np.maximum(pins, _LOG_FLOOR)), 0.0)
        const = float(np.einsum("xz,zxy,zxy->", joint, pins, logpin))
    else:
        joint = rec.joint_with_initial(k + 1)  # (x0, y)
        bpins = backward_pinned_kernels_all(process, k, k + 1)  # (x0, y, x)
        t = np.einsum("ay,ayx->yx", joint, bpins)
        with np.errstate(divide="ignore", invalid="ignore"):
            logpin = np.where(bpins > 0, np.log(np.maximum(bpins, _LOG_FLOOR)), 0.0)
        const = float(np.einsum("ay,ayx,ayx->", joint, bpins, logpin))
    return t, const


class _LossContext:
    """Precomputed per-slice targets for one coupling and direction."""

    def __init__(self, coupling: Coupling, process: ReferenceProcess, direction: str):
        if direction not in ("forward", "backward"):
            raise InvalidParameterError(f"direction must be 'forward' or 'backward', got {direction!r}")
        self.process = process
        self.direction = direction
        rec = ReciprocalMeasure(coupling=coupling, process=process)
        self.targets = []
        self.const = 0.0
        inv_dt = 1.0 / process.schedule.dt
        for k in range(process.n_steps):
            t, const = _slice_targets(rec, k, direction)
            self.targets.append(t)
            self.const += inv_dt * const
        self.pieces = [_direction_pieces(process, k, direction) for k in range(process.n_steps)]

    def loss(self, pred: TabularPredictor) -> float:
        inv_dt = 1.0 / self.process.schedule.dt
        total = self.const
        for k in range(self.process.n_steps):
            kern = predictor_step_kernel(pred.weights(k), self.process, k, self.direction)
            t = self.targets[k]
            if np.any((t > 0) & (kern <= 0)):
                raise InfiniteDivergenceError("predictor kernel vanished where the target has mass")
            logk = np.where(t > 0, np.log(np.maximum(kern, _LOG_FLOOR)), 0.0)
            total -= inv_dt * float(np.sum(t * logk))
        return total

    def loss_and_grad(self, pred: TabularPredictor) -> tuple[float, np.ndarray]:
        inv_dt = 1.0 / self.process.schedule.dt
        dt = self.process.schedule.dt
        d = self.process.d
        total = self.const
        grad = np.zeros_like(pred.logits)
        eye = np.eye(d, dtype=bool)
        for k in range(self.process.n_steps):
            m, b = self.pieces[k]
            z = pred.weights(k)
            v = z @ m.T
            diag = np.diag(v).copy()
            if np.any(diag <= 0):
                raise PositivityError("bridge-weighted z vanished at the conditioning state")
            rate = b * (v / diag[:, None])
            rate[eye] = 0.0
            rate[eye] = -rate.sum(axis=1)
            kern_raw = np.eye(d) + rate * dt
            kern_pos = np.clip(kern_raw, 0.0, None)
            s = kern_pos.sum(axis=1, keepdims=True)
            kern = kern_pos / s

            t = self.targets[k]
            if np.any((t > 0) & (kern <= 0)):
                raise InfiniteDivergenceError("predictor kernel vanished where the target has mass")
            logk = np.where(t > 0, np.log(np.maximum(kern, _LOG_FLOOR)), 0.0)
            total -= inv_dt * float(np.sum(t * logk))

            # d(loss)/d(kern_pos entries), through the row renormalization
            t_tot = t.sum(axis=1, keepdims=True)
            with np.errstate(divide="ignore", invalid="ignore"):
                d_khat = -inv_dt * (
                    np.where(t > 0, t / np.maximum(kern_pos, _LOG_FLOOR), 0.0) - t_tot / s
                )
            d_khat = np.where(kern_raw > 0, d_khat, 0.0)
            # kern_raw(y) = delta_xy + dt * rate(y): off-diagonal rate u gets
            # dt * (d_khat(u) - d_khat(diag)) through the zero-row-sum diagonal
            d_rate = dt * (d_khat - np.diag(d_khat)[:, None])
            d_rate[eye] = 0.0
            # rate(r, c) = b(r, c) v(r, c) / v(r, r)
            d_v = d_rate * b / diag[:, None]
            d_v[eye] = -(d_rate * rate).sum(axis=1) / diag
            d_z = d_v @ m
            grad[k] = z * (d_z - (z * d_z).sum(axis=1, keepdims=True))
        return total, grad


def forward_loss(
    pred: TabularPredictor, coupling: Coupling, schedule: NoiseSchedule, prior: Prior
) -> float:
    """Discretized projection loss against the forward pinned kernels."""
    ctx = _LossContext(coupling, ReferenceProcess(schedule, prior), "forward")
    return ctx.loss(pred)


def backward_loss(
    pred: TabularPredictor, coupling: Coupling, schedule: NoiseSchedule, prior: Prior
) -> float:
    """Mirror of forward_loss with Bayes-reversed kernels conditioned on X_0."""
    ctx = _LossContext(coupling, ReferenceProcess(schedule, prior), "backward")
    return ctx.loss(pred)


def loss_floor(coupling: Coupling, process: ReferenceProcess, direction: str = "forward") -> float:
    """Irreducible part of the loss: per-slice KL of pinned targets to their mixture."""
    ctx = _LossContext(coupling, process, direction)
    inv_dt = 1.0 / process.schedule.dt
    total = ctx.const
    for t in ctx.targets:
        t_tot = t.sum(axis=1, keepdims=True)
        mix = np.where(t_tot > 0, t / np.where(t_tot > 0, t_tot, 1.0), 0.0)
        logm = np.where(t > 0, np.log(np.maximum(mix, _LOG_FLOOR)), 0.0)
        total -= inv_dt * float(np.sum(t * logm))
    return total


def exact_posterior_predictor(
    coupling: Coupling, process: ReferenceProcess, direction: str = "forward"
) -> TabularPredictor:
    """Predictor whose induced rates equal the mixture's projection rates.

    The z-distribution is the endpoint posterior reweighted by the bridge
    denominator, z(e) proportional to posterior(e | state) / P(state, e);
    with that choice the ratio-of-sums parameterization reproduces the
    posterior mixture of pinned rates exactly.
    """
    rec = ReciprocalMeasure(coupling=coupling, process=process)
    n, d = process.n_steps, process.d
    logits = np.empty((n, d, d))
    for k in range(n):
        if direction == "forward":
            joint = rec.joint_with_terminal(k)
            bridge = process.kernel(k, n)
        else:
            joint = rec.joint_with_initial(k + 1).T  # (y, x0)
            bridge = process.kernel(0, k + 1).T
        w = joint / np.where(joint.sum(axis=1, keepdims=True) > 0, joint.sum(axis=1, keepdims=True), 1.0)
        z = w / bridge
        norm = z.sum(axis=1, keepdims=True)
        z = np.where(norm > 0, z / np.where(norm > 0, norm, 1.0), 1.0 / d)
        logits[k] = np.log(np.maximum(z, _LOG_FLOOR))
    return TabularPredictor(logits)


@dataclass
class TrainResult:
    predictor: TabularPredictor
    loss_curve: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    diverged: bool = False


def train(
    pred: TabularPredictor,
    coupling: Coupling,
    schedule: NoiseSchedule,
    prior: Prior,
    cfg: TrainConfig,
    direction: str = "forward",
) -> TrainResult:
    """Plain gradient descent on the logits; loss curve recorded per step.

    With ``cfg.batch`` set, each step estimates the slice joints from that
    many sampled endpoint pairs instead of using the exact sums.
    """
    process = ReferenceProcess(schedule, prior)
    ctx = _LossContext(coupling, process, direction)
    rng = np.random.default_rng(cfg.seed)
    logits = pred.logits.copy()
    result = TrainResult(predictor=pred)
    increases = 0
    prev_loss = np.inf
    for step in range(cfg.n_epochs):
        step_ctx = ctx if cfg.batch is None else _sampled_context(coupling, process, direction, cfg.batch, rng)
        loss, grad = step_ctx.loss_and_grad(TabularPredictor(logits))
        result.loss_curve.append(loss)
        result.grad_norms.append(float(np.sqrt((grad**2).sum())))
        if loss > prev_loss + 1e-15:
            increases += 1
            if increases >= 10:
                result.diverged = True
                break
        else:
            increases = 0
        prev_loss = loss
        logits = logits - cfg.learning_rate * grad
    result.predictor = TabularPredictor(logits)
    return result


def _sampled_context(
    coupling: Coupling, process: ReferenceProcess, direction: str, batch: int, rng: np.random.Generator
) -> "_LossContext":
    """Loss context whose joints are empirical over sampled endpoint pairs."""
    d = process.d
    pi = coupling.entries
    flat = rng.choice(d * d, size=batch, p=pi.reshape(-1))
    counts = np.bincount(flat, minlength=d * d).reshape(d, d) / batch
    empirical = Coupling(counts)
    return _LossContext(empirical, process, direction)


class TabularBridgeLearner(BaseEstimator):
    """Trains a tabular predictor on the discretized projection loss."""

    def __init__(
        self,
        process: ReferenceProcess,
        direction: str = "forward",
        learning_rate: float = 1.0,
        n_epochs: int = 2000,
        batch: int | None = None,
        seed: int = 0,
    ):
        self.process = process
        self.direction = direction
        self.learning_rate = learning_rate
        self.n_epochs = n_epochs
        self.batch = batch
        self.seed = seed

    def fit(self, coupling: Coupling, init_predictor: TabularPredictor | None = None):
        pred = init_predictor or TabularPredictor.zeros(self.process.n_steps, self.process.d)
        cfg = TrainConfig(self.learning_rate, self.n_epochs, self.batch, self.seed)
        result = train(
            pred,
            coupling,
            self.process.schedule,
            self.process.prior,
            cfg,
            direction=self.direction,
        )
        self.predictor_ = result.predictor
        self.loss_curve_ = result.loss_curve
        self.grad_norms_ = result.grad_norms
        self.diverged_ = result.diverged
        return self


@dataclass
class ApproxImfRecord:
    iteration: int
    direction: str
    tv_change: float
    final_loss: float
    tv_terminal_error: float


def approximate_imf(
    gamma,
    xi,
    schedule: NoiseSchedule,
    prior: Prior,
    cfg: TrainConfig,
    n_outer: int = 6,
    alternate: bool = True,
) -> tuple[Coupling, list[ApproxImfRecord]]:
    """Fitting loop with the trained predictor in place of the exact projection.

    Odd outer iterations train a forward predictor and roll it out from
    gamma; even ones train a backward predictor and roll it out from xi, so
    each side's marginal is restored exactly on its own turn.
    """
    process = ReferenceProcess(schedule, prior)
    gamma = check_probability_vector(gamma, "gamma", d=process.d)
    xi = check_probability_vector(xi, "xi", d=process.d)
    coupling = Coupling.independent(gamma, xi)
    trace: list[ApproxImfRecord] = []
    for outer in range(1, n_outer + 1):
        backward = alternate and outer % 2 == 0
        direction = "backward" if backward else "forward"
        result = train(
            TabularPredictor.zeros(process.n_steps, process.d),
            coupling,
            schedule,
            prior,
            cfg,
            direction=direction,
        )
        if result.diverged:
            raise InvalidParameterError(
                f"training diverged at outer iteration {outer}; lower the learning rate"
            )
        anchor = xi if backward else gamma
        chain = predictor_chain(result.predictor, process, anchor, direction=direction)
        new_coupling = chain.endpoint_coupling()
        tv = 0.5 * float(np.abs(new_coupling.entries - coupling.entries).sum())
        tv_term = 0.5 * float(np.abs(new_coupling.entries.sum(axis=0) - xi).sum())
        trace.append(
            ApproxImfRecord(
                iteration=outer,
                direction=direction,
                tv_change=tv,
                final_loss=result.loss_curve[-1],
                tv_terminal_error=tv_term,
            )
        )
        coupling = new_coupling
    return coupling, trace
