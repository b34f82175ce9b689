"""Path measures on the grid and the two projections between them.

A reciprocal measure is a mixture of reference bridges indexed by an endpoint
coupling.  A Markov measure is an initial law plus one kernel per grid
interval.  The Markov projection of a reciprocal measure mixes pinned kernels
by the posterior over the terminal state; it preserves every time marginal
exactly on the grid.  The reciprocal projection keeps only the endpoint
coupling of a Markov measure and re-attaches reference bridges.

KL divergences decompose into finite sums over grid slices, so projection
identities (marginal preservation, the Pythagorean identity, projection
optimality) can be checked to floating-point accuracy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .bridge import backward_pinned_kernels_all, pinned_kernels_all
from .exceptions import InfiniteDivergenceError, InvalidParameterError, SupportViolationError
from .process import ReferenceProcess
from .validation import check_joint_matrix, check_probability_vector, check_row_stochastic


@dataclass(frozen=True)
class Coupling:
    """Joint distribution over (X_0, X_tau)."""

    entries: np.ndarray

    def __post_init__(self):
        entries = check_joint_matrix(self.entries, "coupling").copy()
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        return self.entries.sum(axis=1), self.entries.sum(axis=0)

    @staticmethod
    def independent(gamma, xi) -> "Coupling":
        gamma = check_probability_vector(gamma, "gamma")
        xi = check_probability_vector(xi, "xi")
        return Coupling(np.outer(gamma, xi))

    def to_csv(self, path, labels=None) -> None:
        d0, d1 = self.entries.shape
        labels = list(labels) if labels is not None else [f"s{i}" for i in range(d1)]
        lines = [",".join(labels)]
        for row in self.entries:
            lines.append(",".join(f"{v:.17g}" for v in row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @staticmethod
    def from_csv(path) -> "Coupling":
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if len(lines) < 2:
            raise InvalidParameterError(f"coupling file {path} is empty")
        rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
        return Coupling(np.array(rows))


@dataclass(frozen=True)
class MarkovChainMeasure:
    """Initial law plus one row-stochastic kernel per grid interval."""

    init: np.ndarray
    kernels: tuple[np.ndarray, ...]

    def __post_init__(self):
        init = check_probability_vector(self.init, "init").copy()
        init.flags.writeable = False
        kernels = []
        for k, kern in enumerate(self.kernels):
            kern = check_row_stochastic(kern, f"kernel[{k}]").copy()
            kern.flags.writeable = False
            kernels.append(kern)
        if not kernels:
            raise InvalidParameterError("a Markov measure needs at least one kernel")
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "kernels", tuple(kernels))

    @property
    def d(self) -> int:
        return self.init.shape[0]

    @property
    def n_steps(self) -> int:
        return len(self.kernels)

    def marginals(self) -> np.ndarray:
        """Time marginals at every grid index, shaped (n_steps + 1, d)."""
        out = np.empty((self.n_steps + 1, self.d))
        out[0] = self.init
        for k, kern in enumerate(self.kernels):
            out[k + 1] = out[k] @ kern
        return out

    def endpoint_coupling(self) -> Coupling:
        prod = np.eye(self.d)
        for kern in self.kernels:
            prod = prod @ kern
        return Coupling(self.init[:, None] * prod)

    def export(self, directory, labels=None) -> None:
        """One CSV per step kernel plus an index manifest."""
        import os

        os.makedirs(directory, exist_ok=True)
        labels = list(labels) if labels is not None else [f"s{i}" for i in range(self.d)]
        init_path = os.path.join(directory, "init.csv")
        with open(init_path, "w") as fh:
            fh.write(",".join(labels) + "\n")
            fh.write(",".join(f"{v:.17g}" for v in self.init) + "\n")
        files = []
        for k, kern in enumerate(self.kernels):
            name = f"kernel_{k:04d}.csv"
            files.append(name)
            with open(os.path.join(directory, name), "w") as fh:
                fh.write(",".join(labels) + "\n")
                for row in kern:
                    fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        manifest = {"n_steps": self.n_steps, "d": self.d, "init": "init.csv", "kernels": files}
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class BackwardMarkovChainMeasure:
    """Terminal law plus reversed kernels; kernels[k] maps index k+1 to k."""

    terminal: np.ndarray
    kernels: tuple[np.ndarray, ...]

    def __post_init__(self):
        terminal = check_probability_vector(self.terminal, "terminal").copy()
        terminal.flags.writeable = False
        kernels = []
        for k, kern in enumerate(self.kernels):
            kern = check_row_stochastic(kern, f"reversed kernel[{k}]").copy()
            kern.flags.writeable = False
            kernels.append(kern)
        object.__setattr__(self, "terminal", terminal)
        object.__setattr__(self, "kernels", tuple(kernels))

    @property
    def d(self) -> int:
        return self.terminal.shape[0]

    @property
    def n_steps(self) -> int:
        return len(self.kernels)

    def marginals(self) -> np.ndarray:
        out = np.empty((self.n_steps + 1, self.d))
        out[self.n_steps] = self.terminal
        for k in range(self.n_steps - 1, -1, -1):
            out[k] = out[k + 1] @ self.kernels[k]
        return out

    def endpoint_coupling(self) -> Coupling:
        prod = np.eye(self.d)
        for k in range(self.n_steps - 1, -1, -1):
            prod = prod @ self.kernels[k]
        joint_rev = self.terminal[:, None] * prod
        return Coupling(joint_rev.T)

    def to_forward(self) -> MarkovChainMeasure:
        """The same path law represented forward, via Bayes at each step."""
        marg = self.marginals()
        fwd = []
        for k in range(self.n_steps):
            mu, nu = marg[k], marg[k + 1]
            kern = nu[None, :] * self.kernels[k].T
            mass = kern.sum(axis=1, keepdims=True)
            uniform = np.full((self.d, self.d), 1.0 / self.d)
            kern = np.where(mass > 0, kern / np.where(mass > 0, mass, 1.0), uniform)
            fwd.append(kern)
        return MarkovChainMeasure(init=marg[0], kernels=tuple(fwd))


@dataclass(frozen=True)
class ReciprocalMeasure:
    """Mixture of reference bridges weighted by an endpoint coupling."""

    coupling: Coupling
    process: ReferenceProcess

    def __post_init__(self):
        pi = self.coupling.entries
        if pi.shape != (self.process.d, self.process.d):
            raise InvalidParameterError(
                f"coupling shape {pi.shape} does not match state count {self.process.d}"
            )
        endpoint = self.process.endpoint_kernel()
        if np.any((pi > 0) & (endpoint <= 0)):
            raise SupportViolationError("coupling puts mass on endpoint pairs with zero bridge mass")

    @property
    def d(self) -> int:
        return self.process.d

    @property
    def n_steps(self) -> int:
        return self.process.n_steps

    def _ratio(self) -> np.ndarray:
        """pi / P_{0:tau}, with 0/0 := 0 on the complement of the support."""
        pi = self.coupling.entries
        endpoint = self.process.endpoint_kernel()
        out = np.zeros_like(pi)
        np.divide(pi, endpoint, out=out, where=pi > 0)
        return out

    def joint_with_terminal(self, k: int) -> np.ndarray:
        """Joint law of (X_{t_k}, X_tau), shaped (x, z)."""
        n = self.n_steps
        r = self._ratio()
        return (self.process.kernel(0, k).T @ r) * self.process.kernel(k, n)

    def joint_with_initial(self, k: int) -> np.ndarray:
        """Joint law of (X_0, X_{t_k}), shaped (x0, x)."""
        n = self.n_steps
        r = self._ratio()
        return self.process.kernel(0, k) * (r @ self.process.kernel(k, n).T)

    def time_marginal(self, k: int) -> np.ndarray:
        return self.joint_with_terminal(k).sum(axis=1)

    def conditional_chain(self, x0: int) -> MarkovChainMeasure:
        """The law of the mixture conditioned on X_0 = x0 (always Markov)."""
        pi = self.coupling.entries
        gamma = pi.sum(axis=1)
        if gamma[x0] <= 0:
            raise InvalidParameterError(f"X_0 = {x0} has zero mass under the coupling")
        n, d = self.n_steps, self.d
        r = self._ratio()[x0]
        kernels = []
        for k in range(n):
            w = r * self.process.kernel(k, n)  # (x, z) ~ posterior over z given x, x0
            mass = w.sum(axis=1, keepdims=True)
            w = np.where(mass > 0, w / np.where(mass > 0, mass, 1.0), 0.0)
            pins = pinned_kernels_all(self.process, k, k + 1)
            kern = np.einsum("xz,zxy->xy", w, pins)
            dead = mass[:, 0] <= 0
            if np.any(dead):
                kern[dead] = self.process.kernel(k, k + 1)[dead]
            kernels.append(kern)
        init = np.zeros(d)
        init[x0] = 1.0
        return MarkovChainMeasure(init=init, kernels=tuple(kernels))


def reciprocal_joint(rec: ReciprocalMeasure, t: float) -> np.ndarray:
    """Joint law of (X_t, X_tau) under the bridge mixture, at a grid time."""
    return rec.joint_with_terminal(rec.process.schedule.index_of(t))


def markov_projection(rec: ReciprocalMeasure) -> MarkovChainMeasure:
    """Markov measure closest in reverse KL: posterior-mixed pinned kernels.

    Step kernel at index k:  K(x, y) = sum_z P(X_tau = z | X_{t_k} = x) * pinned(x, y; z).
    Time marginals of the output match the mixture's marginals exactly.
    """
    n, d = rec.n_steps, rec.d
    process = rec.process
    kernels = []
    for k in range(n):
        joint = rec.joint_with_terminal(k)
        mass = joint.sum(axis=1, keepdims=True)
        w = np.where(mass > 0, joint / np.where(mass > 0, mass, 1.0), 0.0)
        u = np.zeros_like(w)
        np.divide(w, process.kernel(k, n), out=u, where=w > 0)
        kern = process.kernel(k, k + 1) * (u @ process.kernel(k + 1, n).T)
        dead = mass[:, 0] <= 0
        if np.any(dead):
            kern[dead] = process.kernel(k, k + 1)[dead]
        kernels.append(kern)
    gamma = rec.coupling.entries.sum(axis=1)
    return MarkovChainMeasure(init=gamma, kernels=tuple(kernels))


def markov_projection_reverse(rec: ReciprocalMeasure) -> BackwardMarkovChainMeasure:
    """The same projection built backward from the terminal law.

    Reversed step kernel at index k (mapping index k+1 to k):

        K(y, x) = sum_x0 P(X_0 = x0 | X_{t_{k+1}} = y) * reversed_pinned(y, x; x0),

    where the reversed pinned kernel is the Bayes reversal of the reference
    chain conditioned on X_0 = x0.  In exact arithmetic the induced path law
    coincides with the forward projection.
    """
    n, d = rec.n_steps, rec.d
    process = rec.process
    kernels = []
    for k in range(n):
        joint = rec.joint_with_initial(k + 1)  # (x0, y)
        mass = joint.sum(axis=0, keepdims=True)
        w = np.where(mass > 0, joint / np.where(mass > 0, mass, 1.0), 0.0)
        u = np.zeros_like(w)
        np.divide(w, process.kernel(0, k + 1), out=u, where=w > 0)
        kern = process.kernel(k, k + 1).T * (u.T @ process.kernel(0, k))
        dead = mass[0] <= 0
        if np.any(dead):
            fallback = process.kernel(k, k + 1).T[dead]
            kern[dead] = fallback / fallback.sum(axis=1, keepdims=True)
        kernels.append(kern)
    xi = rec.coupling.entries.sum(axis=0)
    return BackwardMarkovChainMeasure(terminal=xi, kernels=tuple(kernels))


def reciprocal_projection(
    m: MarkovChainMeasure | BackwardMarkovChainMeasure, process: ReferenceProcess
) -> ReciprocalMeasure:
    """Keep the endpoint coupling of a Markov measure, re-attach bridges."""
    return ReciprocalMeasure(coupling=m.endpoint_coupling(), process=process)


def _kl_rows(p: np.ndarray, q: np.ndarray, weights: np.ndarray) -> float:
    """sum_x weights[x] * KL(p[x] || q[x]) with the 0 log 0 = 0 convention."""
    mask = p > 0
    if np.any(mask & (q <= 0) & (weights[:, None] > 0)):
        raise InfiniteDivergenceError("first kernel has mass where second has none")
    ratio = np.ones_like(p)
    np.divide(p, q, out=ratio, where=mask & (weights[:, None] > 0))
    terms = np.where(mask, p * np.log(ratio), 0.0)
    return float(weights @ terms.sum(axis=1))


def kl_couplings(a: Coupling, b: Coupling) -> float:
    """KL divergence between endpoint couplings, 0 log 0 = 0."""
    pa, pb = a.entries, b.entries
    mask = pa > 0
    if np.any(mask & (pb <= 0)):
        raise InfiniteDivergenceError("coupling a has mass where coupling b has none")
    ratio = np.ones_like(pa)
    np.divide(pa, pb, out=ratio, where=mask)
    return float(np.sum(np.where(mask, pa * np.log(ratio), 0.0)))


def kl_markov_paths(a: MarkovChainMeasure, b: MarkovChainMeasure) -> float:
    """Grid path KL: initial-law KL plus marginal-weighted per-step kernel KL."""
    if a.n_steps != b.n_steps or a.d != b.d:
        raise InvalidParameterError("measures must share grid and state count")
    pa, pb = a.init, b.init
    mask = pa > 0
    if np.any(mask & (pb <= 0)):
        raise InfiniteDivergenceError("initial law of a has mass where b has none")
    ratio = np.ones_like(pa)
    np.divide(pa, pb, out=ratio, where=mask)
    total = float(np.sum(np.where(mask, pa * np.log(ratio), 0.0)))
    mu = a.init
    for k in range(a.n_steps):
        total += _kl_rows(a.kernels[k], b.kernels[k], mu)
        mu = mu @ a.kernels[k]
    return total


def kl_reciprocal_to_markov(rec: ReciprocalMeasure, m: MarkovChainMeasure) -> float:
    """Path KL of a bridge mixture to a Markov measure.

    Disintegrates over X_0: conditioned on its start, the mixture is Markov,
    so the divergence is an initial-law term plus a weighted sum of
    conditional-chain divergences.
    """
    if m.n_steps != rec.n_steps or m.d != rec.d:
        raise InvalidParameterError("measures must share grid and state count")
    gamma = rec.coupling.entries.sum(axis=1)
    mask = gamma > 0
    if np.any(mask & (m.init <= 0)):
        raise InfiniteDivergenceError("initial law of the mixture has mass where m has none")
    ratio = np.ones_like(gamma)
    np.divide(gamma, m.init, out=ratio, where=mask)
    total = float(np.sum(np.where(mask, gamma * np.log(ratio), 0.0)))
    for x0 in np.nonzero(mask)[0]:
        chain = rec.conditional_chain(int(x0))
        mu = chain.init
        for k in range(rec.n_steps):
            total += gamma[x0] * _kl_rows(chain.kernels[k], m.kernels[k], mu)
            mu = mu @ chain.kernels[k]
    return total
