"""Categorical graphs with dummy padding and the factorized reference process.

A graph is a length-n node label vector plus a symmetric n x n edge label
matrix.  Label index 0 is reserved: the first node label is the dummy used
for padding, the first edge label means "no edge", and the diagonal is fixed
to no-edge.  The reference process modifies every node and every unordered
edge slot independently, so the transition probability between two graphs is
a product of per-slot closed-form kernels, and tiny graph spaces can be
enumerated into a flat state space on which the exact solvers run unchanged.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import CapExceededError, InvalidParameterError, SizeMismatchError
from .process import NoiseSchedule, Prior, ProductProcess, ReferenceProcess
from .validation import check_probability_vector

DUMMY = 0
NO_EDGE = 0


@dataclass(frozen=True)
class GraphVocab:
    """Node and edge label sets with their priors.

    ``node_labels[0]`` is the dummy/padding label and ``edge_labels[0]`` is
    the no-edge label.
    """

    node_labels: tuple[str, ...]
    edge_labels: tuple[str, ...]
    node_prior: np.ndarray
    edge_prior: np.ndarray

    def __post_init__(self):
        nl = tuple(str(x) for x in self.node_labels)
        el = tuple(str(x) for x in self.edge_labels)
        if len(nl) < 2 or len(el) < 2:
            raise InvalidParameterError("vocab needs at least 2 node labels and 2 edge labels")
        if len(set(nl)) != len(nl) or len(set(el)) != len(el):
            raise InvalidParameterError("vocab labels must be distinct")
        mv = check_probability_vector(self.node_prior, "node_prior", d=len(nl), strictly_positive=True).copy()
        me = check_probability_vector(self.edge_prior, "edge_prior", d=len(el), strictly_positive=True).copy()
        mv.flags.writeable = False
        me.flags.writeable = False
        object.__setattr__(self, "node_labels", nl)
        object.__setattr__(self, "edge_labels", el)
        object.__setattr__(self, "node_prior", mv)
        object.__setattr__(self, "edge_prior", me)

    @property
    def d_v(self) -> int:
        return len(self.node_labels)

    @property
    def d_e(self) -> int:
        return len(self.edge_labels)

    @staticmethod
    def uniform(node_labels, edge_labels) -> "GraphVocab":
        nl, el = tuple(node_labels), tuple(edge_labels)
        return GraphVocab(nl, el, np.full(len(nl), 1.0 / len(nl)), np.full(len(el), 1.0 / len(el)))

    def to_json(self) -> dict:
        return {
            "node_labels": list(self.node_labels),
            "edge_labels": list(self.edge_labels),
            "node_prior": [float(x) for x in self.node_prior],
            "edge_prior": [float(x) for x in self.edge_prior],
        }

    @staticmethod
    def from_json(doc: dict) -> "GraphVocab":
        return GraphVocab(
            tuple(doc["node_labels"]),
            tuple(doc["edge_labels"]),
            np.asarray(doc["node_prior"], dtype=float),
            np.asarray(doc["edge_prior"], dtype=float),
        )


@dataclass(frozen=True)
class LabeledGraph:
    """Node label vector plus symmetric edge label matrix with no-edge diagonal."""

    nodes: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=int).copy()
        edges = np.asarray(self.edges, dtype=int).copy()
        n = nodes.shape[0]
        if edges.shape != (n, n):
            raise InvalidParameterError(f"edges must be {n}x{n}, got {edges.shape}")
        if np.any(edges != edges.T):
            raise InvalidParameterError("edge matrix must be symmetric")
        if np.any(np.diag(edges) != NO_EDGE):
            raise InvalidParameterError("edge diagonal must be no-edge")
        nodes.flags.writeable = False
        edges.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    def is_clean(self) -> bool:
        """True when every dummy node has only no-edge incident labels.

        Data graphs keep this invariant; intermediate states of the noising
        process need not.
        """
        return not np.any(self.edges[self.nodes == DUMMY] != NO_EDGE)

    def check_clean(self) -> "LabeledGraph":
        if not self.is_clean():
            raise InvalidParameterError("dummy nodes may only have no-edge incident labels")
        return self

    def pad(self, n_target: int) -> "LabeledGraph":
        if n_target < self.n:
            raise InvalidParameterError(f"cannot pad {self.n} nodes down to {n_target}")
        if n_target == self.n:
            return self
        nodes = np.full(n_target, DUMMY, dtype=int)
        nodes[: self.n] = self.nodes
        edges = np.full((n_target, n_target), NO_EDGE, dtype=int)
        edges[: self.n, : self.n] = self.edges
        return LabeledGraph(nodes, edges)

    def permute(self, sigma) -> "LabeledGraph":
        """Relabel slots: slot i of the result carries old slot sigma[i]."""
        sigma = np.asarray(sigma, dtype=int)
        return LabeledGraph(self.nodes[sigma], self.edges[np.ix_(sigma, sigma)])

    def to_json(self, vocab: GraphVocab) -> dict:
        edges = []
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if self.edges[i, j] != NO_EDGE:
                    edges.append([i, j, vocab.edge_labels[self.edges[i, j]]])
        return {"n": self.n, "nodes": [vocab.node_labels[v] for v in self.nodes], "edges": edges}

    @staticmethod
    def from_json(doc: dict, vocab: GraphVocab) -> "LabeledGraph":
        n = int(doc["n"])
        raw_nodes = doc["nodes"]
        if len(raw_nodes) != n:
            raise InvalidParameterError(f"graph lists {len(raw_nodes)} nodes but n={n}")
        node_index = {lab: k for k, lab in enumerate(vocab.node_labels)}
        edge_index = {lab: k for k, lab in enumerate(vocab.edge_labels)}
        try:
            nodes = np.array([node_index[v] for v in raw_nodes], dtype=int)
        except KeyError as exc:
            raise InvalidParameterError(f"unknown node label {exc.args[0]!r}") from None
        edges = np.full((n, n), NO_EDGE, dtype=int)
        for entry in doc.get("edges", []):
            i, j, lab = int(entry[0]), int(entry[1]), entry[2]
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise InvalidParameterError(f"edge ({i}, {j}) out of range for n={n}")
            if lab not in edge_index:
                raise InvalidParameterError(f"unknown edge label {lab!r}")
            edges[i, j] = edges[j, i] = edge_index[lab]
        return LabeledGraph(nodes, edges).check_clean()


def load_graph(path, vocab: GraphVocab) -> LabeledGraph:
    with open(path) as fh:
        return LabeledGraph.from_json(json.load(fh), vocab)


def _component_kernels(vocab: GraphVocab, schedule: NoiseSchedule, edge_schedule, i: int, j: int):
    esched = schedule if edge_schedule is None else edge_schedule
    pv = ReferenceProcess(schedule, Prior(vocab.node_prior)).kernel(i, j)
    pe = ReferenceProcess(esched, Prior(vocab.edge_prior)).kernel(i, j)
    return pv, pe


def graph_kernel(
    vocab: GraphVocab,
    schedule: NoiseSchedule,
    g1: LabeledGraph,
    g2: LabeledGraph,
    s: float,
    t: float,
    edge_schedule: NoiseSchedule | None = None,
) -> float:
    """Transition probability between two graphs with aligned slots.

    Product of one node kernel per slot and one edge kernel per unordered
    pair (each pair counted once).
    """
    if g1.n != g2.n:
        raise SizeMismatchError(f"graphs must share slot count, got {g1.n} and {g2.n}")
    i, j = schedule.index_of(s), schedule.index_of(t)
    pv, pe = _component_kernels(vocab, schedule, edge_schedule, i, j)
    iu = np.triu_indices(g1.n, 1)
    node_part = pv[g1.nodes, g2.nodes]
    edge_part = pe[g1.edges[iu], g2.edges[iu]]
    return float(np.prod(node_part) * np.prod(edge_part))


@dataclass(frozen=True)
class Assignment:
    """A node correspondence: slot i of the source maps to slot mapping[i]."""

    mapping: np.ndarray

    def __post_init__(self):
        mapping = np.asarray(self.mapping, dtype=int).copy()
        if len(np.unique(mapping)) != mapping.shape[0]:
            raise InvalidParameterError("assignment must be injective")
        mapping.flags.writeable = False
        object.__setattr__(self, "mapping", mapping)

    @property
    def n(self) -> int:
        return self.mapping.shape[0]


def pair_nll(
    vocab: GraphVocab,
    schedule: NoiseSchedule,
    g1: LabeledGraph,
    g2: LabeledGraph,
    assignment: Assignment,
    edge_schedule: NoiseSchedule | None = None,
) -> float:
    """Negative log transition probability under a node correspondence.

    Graphs are padded to a common slot count first; the assignment must then
    be a bijection on the padded slots.  Equals
    -log graph_kernel(g1, g2 permuted by the assignment) over [0, tau].
    """
    n = max(g1.n, g2.n)
    g1, g2 = g1.pad(n), g2.pad(n)
    sigma = assignment.mapping
    if sigma.shape[0] != n or np.any(sigma < 0) or np.any(sigma >= n):
        raise InvalidParameterError(f"assignment must be a bijection on {n} padded slots")
    i, j = 0, schedule.n_steps
    pv, pe = _component_kernels(vocab, schedule, edge_schedule, i, j)
    iu = np.triu_indices(n, 1)
    node_terms = -np.log(pv[g1.nodes, g2.nodes[sigma]])
    edge_terms = -np.log(pe[g1.edges[iu], g2.edges[np.ix_(sigma, sigma)][iu]])
    return float(node_terms.sum() + edge_terms.sum())


@dataclass(frozen=True)
class FlatGraphSpace:
    """Exhaustive enumeration of all graphs with n slots as one state space.

    The flat index runs in mixed radix over components ordered as
    (node_0, ..., node_{n-1}, edge_{01}, edge_{02}, ..., edge_{n-2,n-1}),
    first component most significant, matching the Kronecker ordering of the
    factorized reference process.
    """

    vocab: GraphVocab
    n: int
    codes: np.ndarray  # (size, n_components) label codes per flat state

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def n_node_components(self) -> int:
        return self.n

    @property
    def n_edge_components(self) -> int:
        return self.n * (self.n - 1) // 2

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(itertools.combinations(range(self.n), 2))

    def graph_at(self, index: int) -> LabeledGraph:
        code = self.codes[index]
        nodes = code[: self.n].copy()
        edges = np.full((self.n, self.n), NO_EDGE, dtype=int)
        for (i, j), lab in zip(self.pairs, code[self.n :]):
            edges[i, j] = edges[j, i] = lab
        return LabeledGraph(nodes, edges)

    def index_of(self, g: LabeledGraph) -> int:
        if g.n != self.n:
            raise SizeMismatchError(f"graph has {g.n} slots, space expects {self.n}")
        radix_v, radix_e = self.vocab.d_v, self.vocab.d_e
        idx = 0
        for v in g.nodes:
            idx = idx * radix_v + int(v)
        for i, j in self.pairs:
            idx = idx * radix_e + int(g.edges[i, j])
        return idx

    def labels(self) -> list[str]:
        out = []
        for code in self.codes:
            nodes = "".join(self.vocab.node_labels[v] for v in code[: self.n])
            edges = "".join(self.vocab.edge_labels[e] for e in code[self.n :])
            out.append(f"{nodes}|{edges}" if edges else nodes)
        return out

    def reference_process(
        self, schedule: NoiseSchedule, edge_schedule: NoiseSchedule | None = None
    ) -> ProductProcess:
        esched = schedule if edge_schedule is None else edge_schedule
        comps = [ReferenceProcess(schedule, Prior(self.vocab.node_prior)) for _ in range(self.n)]
        comps += [ReferenceProcess(esched, Prior(self.vocab.edge_prior)) for _ in self.pairs]
        return ProductProcess(comps)

    def mismatch_matrix(self) -> np.ndarray:
        """Pairwise count of differing slots (nodes plus edges) between states."""
        codes = self.codes
        return (codes[:, None, :] != codes[None, :, :]).sum(axis=2).astype(float)


def enumerate_graph_space(vocab: GraphVocab, n: int, cap: int = 10_000) -> FlatGraphSpace:
    """All labeled graphs on n slots; errors out above the size cap."""
    if n < 1:
        raise InvalidParameterError("n must be at least 1")
    n_edges = n * (n - 1) // 2
    size = vocab.d_v**n * vocab.d_e**n_edges
    if size > cap:
        raise CapExceededError(f"graph space has {size} states, cap is {cap}")
    ranges = [range(vocab.d_v)] * n + [range(vocab.d_e)] * n_edges
    codes = np.array(list(itertools.product(*ranges)), dtype=int)
    return FlatGraphSpace(vocab=vocab, n=n, codes=codes)
