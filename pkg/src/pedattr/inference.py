"""k-NN graphs, binary MRF energies and their exact minimisation by min-cut.

Energy of a labelling ``l`` (each undirected edge counted once)::

    E(l) = sum_u unary[u, l_u] + sum_{(u,v)} w_uv [l_u != l_v]

with ``unary[u] = (-log P(l=0|u), -log P(l=1|u))``.
"""
from __future__ import annotations

from collections import deque
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .similarity import forest_affinity_matrix, gaussian_affinity_matrix

CLAMP_COST = 1e9
FIXED_POINT = 1e-6
REGIMES = ("iksvm", "mrfg1", "mrfg2", "mrfr1", "mrfr2")


def canonical_regime(name: str) -> str:
    key = name.lower()
    if key not in REGIMES:
        raise ValueError(f"unknown regime {name!r}; expected one of {REGIMES}")
    return key


# -- graph ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KnnGraph:
    nodes: tuple[str, ...]
    edges: np.ndarray  # (m, 2) node indices, row i < col
    weights: np.ndarray  # (m,)
    k: int

    @property
    def n(self) -> int:
        return len(self.nodes)

    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def edge_dict(self) -> dict[tuple[str, str], float]:
        """Both orientations of every edge, keyed by node id."""
        out = {}
        for (a, b), w in zip(self.edges, self.weights):
            out[(self.nodes[a], self.nodes[b])] = float(w)
            out[(self.nodes[b], self.nodes[a])] = float(w)
        return out


def _affinity_matrix(ids, affinity) -> np.ndarray:
    if callable(affinity):
        n = len(ids)
        A = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                A[i, j] = A[j, i] = affinity(ids[i], ids[j])
        return A
    A = np.asarray(affinity, dtype=float)
    if A.shape != (len(ids), len(ids)):
        raise ValueError(f"affinity matrix {A.shape} does not match {len(ids)} nodes")
    return A


def build_knn_graph(ids: Sequence[str], affinity: Callable | np.ndarray, k: int = 5) -> KnnGraph:
    """Union-symmetrised k-nearest-neighbour graph; ties go to the smaller id."""
    ids = tuple(ids)
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(ids)
    if n < 2:
        raise ValueError("a graph needs at least 2 nodes")
    if len(set(ids)) != n:
        raise ValueError("node ids must be unique")
    A = _affinity_matrix(ids, affinity)
    if np.any(A < 0) or np.any(A > 1) or not np.all(np.isfinite(A)):
        raise ValueError("affinities must lie in [0, 1]")
    k_eff = min(k, n - 1)
    rank = np.empty(n, dtype=np.int64)
    rank[np.argsort(np.asarray(ids, dtype=object), kind="stable")] = np.arange(n)
    neg = -A.copy()
    np.fill_diagonal(neg, np.inf)
    order = np.lexsort((np.broadcast_to(rank, (n, n)), neg), axis=-1)
    nbrs = order[:, :k_eff]
    rows = np.repeat(np.arange(n), k_eff)
    cols = nbrs.ravel()
    lo = np.minimum(rows, cols)
    hi = np.maximum(rows, cols)
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
    weights = (A[pairs[:, 0], pairs[:, 1]] + A[pairs[:, 1], pairs[:, 0]]) / 2
    return KnnGraph(ids, pairs, weights, k)


def write_graph(path, graph: KnnGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# k={graph.k} nodes={graph.n} edges={len(graph.weights)}\n")
        for (a, b), w in zip(graph.edges, graph.weights):
            fh.write(f"{graph.nodes[a]}\t{graph.nodes[b]}\t{float(w)!r}\n")


# -- energy --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MrfProblem:
    nodes: tuple[str, ...]
    unary: np.ndarray  # (n, 2): cost of label 0, cost of label 1
    edges: np.ndarray  # (m, 2)
    weights: np.ndarray  # (m,) disagreement cost, already scaled by lam
    clamp: np.ndarray = None  # (n,) -1 free, else fixed label
    lam: float = 1.0

    def __post_init__(self):
        unary = np.asarray(self.unary, dtype=float).reshape(-1, 2)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        n = unary.shape[0]
        if len(self.nodes) != n:
            raise ValueError("node count does not match unary table")
        if not np.all(np.isfinite(unary)) or np.any(unary < 0):
            raise ValueError("unary costs must be finite and >= 0")
        if edges.shape[0] != weights.shape[0]:
            raise ValueError("edge and weight counts differ")
        if edges.size and (edges.min() < 0 or edges.max() >= n or np.any(edges[:, 0] == edges[:, 1])):
            raise ValueError("edges must join two distinct existing nodes")
        if not np.all(np.isfinite(weights)):
            raise ValueError("edge weights must be finite")
        clamp = np.full(n, -1, dtype=np.int8) if self.clamp is None else np.asarray(self.clamp, np.int8)
        object.__setattr__(self, "unary", unary)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "clamp", clamp)

    @property
    def n(self) -> int:
        return self.unary.shape[0]

    def energy(self, labels) -> float:
        labels = np.asarray(labels, dtype=np.int64)
        e = float(self.unary[np.arange(self.n), labels].sum())
        if self.edges.size:
            differ = labels[self.edges[:, 0]] != labels[self.edges[:, 1]]
            e += float(self.weights[differ].sum())
        return e


@dataclass(frozen=True, eq=False)
class LabelAssignment:
    nodes: tuple[str, ...]
    labels: np.ndarray
    energy: float
    cut_value: float | None = None  # min-cut capacity + constant, solver units
    n_graph_nodes: int | None = None

    def as_dict(self) -> dict[str, int]:
        return {s: int(l) for s, l in zip(self.nodes, self.labels)}

    def restrict(self, ids: Sequence[str]) -> "LabelAssignment":
        pos = {s: i for i, s in enumerate(self.nodes)}
        idx = [pos[s] for s in ids]
        return LabelAssignment(tuple(ids), self.labels[idx].copy(), self.energy, self.cut_value,
                               self.n_graph_nodes if self.n_graph_nodes is not None else len(self.nodes))


def unary_costs(p1) -> np.ndarray:
    p1 = np.asarray(p1, dtype=float)
    return np.stack([-np.log1p(-p1), -np.log(p1)], axis=-1)


def assemble_problem(graph: KnnGraph, probs: Mapping[str, float],
                     clamp: Mapping[str, int] | None = None, lam: float = 1.0) -> MrfProblem:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    clamp = clamp or {}
    n = graph.n
    unary = np.zeros((n, 2))
    fixed = np.full(n, -1, dtype=np.int8)
    for i, sid in enumerate(graph.nodes):
        if sid in clamp:
            lab = int(clamp[sid])
            if lab not in (0, 1):
                raise ValueError(f"clamp label for {sid!r} must be 0 or 1")
            fixed[i] = lab
            unary[i, 1 - lab] = CLAMP_COST
            continue
        if sid not in probs:
            raise KeyError(f"no probability for node {sid!r}")
        p = float(probs[sid])
        if not 0.0 < p < 1.0:
            raise ValueError(f"probability for {sid!r} must lie in (0, 1), got {p}")
        unary[i] = unary_costs(p)
    return MrfProblem(graph.nodes, unary, graph.edges.copy(), lam * graph.weights, fixed, lam)


# -- exact solvers -------------------------------------------------------------

class _FlowNetwork:
    """Integer-capacity residual network solved by Dinic's blocking-flow augmenting paths."""

    def __init__(self, n: int):
        self.n = n
        self.head = [[] for _ in range(n)]
        self.to = []
        self.cap = []

    def add_arc(self, u: int, v: int, cap: int, rev_cap: int = 0) -> None:
        self.head[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(cap)
        self.head[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(rev_cap)

    def _levels(self, s: int, t: int):
        level = [-1] * self.n
        level[s] = 0
        q = deque([s])
        to, cap, head = self.to, self.cap, self.head
        while q:
            u = q.popleft()
            for a in head[u]:
                if cap[a] > 0 and level[to[a]] < 0:
                    level[to[a]] = level[u] + 1
                    q.append(to[a])
        return level if level[t] >= 0 else None

    def max_flow(self, s: int, t: int) -> int:
        to, cap, head = self.to, self.cap, self.head
        total = 0
        while True:
            level = self._levels(s, t)
            if level is None:
                return total
            it = [0] * self.n
            while True:
                path = []
                u = s
                while u != t:
                    arcs = head[u]
                    while it[u] < len(arcs):
                        a = arcs[it[u]]
                        if cap[a] > 0 and level[to[a]] == level[u] + 1:
                            break
                        it[u] += 1
                    if it[u] < len(arcs):
                        path.append(arcs[it[u]])
                        u = to[arcs[it[u]]]
                        continue
                    if u == s:
                        break
                    level[u] = -1  # dead end for this phase
                    a = path.pop()
                    u = to[a ^ 1]
                    it[u] += 1
                if u != t:
                    break
                f = min(cap[a] for a in path)
                for a in path:
                    cap[a] -= f
                    cap[a ^ 1] += f
                total += f

    def source_side(self, s: int) -> np.ndarray:
        seen = np.zeros(self.n, dtype=bool)
        seen[s] = True
        q = deque([s])
        while q:
            u = q.popleft()
            for a in self.head[u]:
                v = self.to[a]
                if self.cap[a] > 0 and not seen[v]:
                    seen[v] = True
                    q.append(v)
        return seen


def _to_units(x: float, resolution: float) -> int:
    """Fixed-point capacity; a nonzero cost never rounds to zero."""
    units = int(round(x / resolution))
    if units == 0 and x > 0:
        units = 1
    return units


def solve_maxflow(problem: MrfProblem, resolution: float = FIXED_POINT) -> LabelAssignment:
    """Global minimiser via s-t min-cut.

    Source side is label 1, sink side label 0: a node pays its label-0 cost
    through the cut arc s->u and its label-1 cost through u->t.  Nodes not
    reachable from the source in the final residual graph take label 0.
    """
    if np.any(problem.weights < 0):
        raise ValueError("non-submodular: negative edge weight")
    n = problem.n
    s, t = n, n + 1
    net = _FlowNetwork(n + 2)
    c0, c1 = problem.unary[:, 0], problem.unary[:, 1]
    offset = float(np.minimum(c0, c1).sum())
    for u in range(n):
        d = c0[u] - c1[u]
        if d > 0:
            net.add_arc(s, u, _to_units(d, resolution))
        elif d < 0:
            net.add_arc(u, t, _to_units(-d, resolution))
    for (a, b), w in zip(problem.edges, problem.weights):
        units = _to_units(w, resolution)
        if units:
            net.add_arc(int(a), int(b), units, units)
    flow = net.max_flow(s, t)
    labels = net.source_side(s)[:n].astype(np.int64)
    return LabelAssignment(problem.nodes, labels, problem.energy(labels),
                           offset + flow * resolution, n)


def brute_force_solve(problem: MrfProblem, max_nodes: int = 24) -> LabelAssignment:
    """Exhaustive minimum; ties go to the lexicographically smallest labelling."""
    n = problem.n
    if n > max_nodes:
        raise ValueError(f"brute force limited to {max_nodes} nodes, got {n}")
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    best_code, best_e = 0, np.inf
    chunk = 1 << min(n, 16)
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        bits = (codes[:, None] >> shifts[None, :]) & 1
        e = np.where(bits == 1, problem.unary[:, 1], problem.unary[:, 0]).sum(axis=1)
        if problem.edges.size:
            differ = bits[:, problem.edges[:, 0]] != bits[:, problem.edges[:, 1]]
            e = e + differ @ problem.weights
        i = int(np.argmin(e))
        if e[i] < best_e:
            best_e, best_code = e[i], int(codes[i])
    labels = (best_code >> shifts) & 1 if n else np.zeros(0, dtype=np.int64)
    return LabelAssignment(problem.nodes, labels.astype(np.int64), problem.energy(labels), None, n)


# -- regimes -------------------------------------------------------------------

@dataclass(frozen=True)
class InferenceConfig:
    k: int = 5
    lam: float = 1.0
    sigma: float | None = None


@dataclass(frozen=True, eq=False)
class TransductiveData:
    """Descriptors plus the split roles a regime needs.

    ``train_labels[attr][id]`` holds 1/0 (or -1 for unknown) for train ids.
    """

    ids: tuple[str, ...]
    X: np.ndarray
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    train_labels: Mapping[str, Mapping[str, int]]
    _row: dict = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_row", {s: i for i, s in enumerate(self.ids)})

    def rows(self, ids) -> np.ndarray:
        return self.X[[self._row[s] for s in ids]]


@dataclass(frozen=True, eq=False)
class RegimeModels:
    """``unary[attr]`` is either a fitted UnaryModel or a map id -> P(l=1)."""

    unary: Mapping[str, object]
    forest: object = None
    leaves: np.ndarray | None = None  # forest leaves for ``TransductiveData.ids`` rows


def _probabilities(model, ids, data: TransductiveData) -> dict[str, float]:
    if isinstance(model, Mapping):
        return {s: float(model[s]) for s in ids}
    p = model.proba_from_scores(model.decision(data.rows(ids)))
    return dict(zip(ids, p.tolist()))


def regime_graph(regime: str, data: TransductiveData, models: RegimeModels,
                 cfg: InferenceConfig, node_ids: Sequence[str]) -> KnnGraph:
    if regime.startswith("mrfg"):
        if cfg.sigma is None:
            raise ValueError(f"{regime}: sigma is required for the Gaussian affinity")
        A = gaussian_affinity_matrix(data.rows(node_ids), cfg.sigma)
    else:
        if models.leaves is not None:
            L = models.leaves[[data._row[s] for s in node_ids]]
        elif models.forest is not None:
            L = models.forest.leaves(data.rows(node_ids))
        else:
            raise ValueError(f"{regime}: a trained forest is required")
        A = forest_affinity_matrix(L)
    return build_knn_graph(node_ids, A, cfg.k)


def run_regime(regime: str, data: TransductiveData, models: RegimeModels,
               cfg: InferenceConfig = InferenceConfig(), attributes: Sequence[str] | None = None,
               graph: KnnGraph | None = None) -> dict[str, LabelAssignment]:
    """Label the test nodes of every attribute under one regime.

    Scheme 1 (``*1``) graphs hold test nodes only; scheme 2 (``*2``) graphs add
    the training nodes, clamped to their known labels.
    """
    regime = canonical_regime(regime)
    attributes = list(attributes if attributes is not None else data.train_labels)
    missing = [a for a in attributes if a not in models.unary]
    if missing:
        raise KeyError(f"no unary model for attributes: {', '.join(missing)}")
    test_ids = tuple(data.test_ids)
    if regime == "iksvm":
        out = {}
        for attr in attributes:
            probs = _probabilities(models.unary[attr], test_ids, data)
            p = np.asarray([probs[s] for s in test_ids])
            labels = (p > 0.5).astype(np.int64)
            energy = float(unary_costs(p)[np.arange(len(p)), labels].sum())
            out[attr] = LabelAssignment(test_ids, labels, energy, None, len(test_ids))
        return out

    scheme2 = regime.endswith("2")
    node_ids = tuple(data.train_ids) + test_ids if scheme2 else test_ids
    if graph is None:
        graph = regime_graph(regime, data, models, cfg, node_ids)
    out = {}
    for attr in attributes:
        clamp = {}
        free = list(test_ids)
        if scheme2:
            known = data.train_labels.get(attr, {})
            for s in data.train_ids:
                lab = known.get(s, -1)
                if lab in (0, 1):
                    clamp[s] = lab
                else:
                    free.append(s)
        probs = _probabilities(models.unary[attr], free, data)
        problem = assemble_problem(graph, probs, clamp, cfg.lam)
        out[attr] = solve_maxflow(problem).restrict(test_ids)
    return out
