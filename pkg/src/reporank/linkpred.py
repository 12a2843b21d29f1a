"""Re-ranking as link prediction between a query node and graph nodes.

The query is attached to the graph as an extra node (id ``len(graph)``) with
whatever edges are already known from its own file. A stack of mean-aggregation
message-passing layers produces final node states ``Z``; candidate ``i`` is
scored with a single vector ``w`` over ``concat(Z[i], Z[query])`` and trained
with binary cross-entropy. Gradients are derived by hand and checked against
finite differences in the test suite.
"""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .embedding import EmbeddingTable, unit
from .graph import Direction, NodeKind, RelationKind, Rsg

WEIGHTS_VERSION = 1
DEFAULT_LAYERS = 3
DEFAULT_LR = 0.01
DEFAULT_EPOCHS = 10
LOSS_EPS = 1e-7


class LinkPredictionError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message: str, sample_index: int):
        super().__init__(message)
        self.sample_index = sample_index


@dataclass
class QueryNode:
    text: str
    embedding: np.ndarray
    known_edges: list[tuple[RelationKind, int]] = field(default_factory=list)
    file_path: Optional[str] = None


class AugmentedGraph:
    """Read-only view of ``graph`` plus one query node; the base graph is never touched."""

    def __init__(self, graph: Rsg, query: QueryNode):
        n = len(graph)
        for rel, target in query.known_edges:
            if not 0 <= target < n:
                raise LinkPredictionError(f"known edge ({rel.value}, {target}) points outside the graph")
        self.base = graph
        self.query = query
        self.query_id = n
        self._query_edges = sorted({(rel.ordinal, t, rel) for rel, t in query.known_edges})
        self._incoming: dict[int, list[RelationKind]] = {}
        for _, t, rel in self._query_edges:
            self._incoming.setdefault(t, []).append(rel)

    def __len__(self) -> int:
        return len(self.base) + 1

    def neighbors(self, node_id: int) -> list[tuple[int, RelationKind, Direction]]:
        if node_id == self.query_id:
            return [(t, rel, Direction.FORWARD) for _, t, rel in self._query_edges]
        out = self.base.neighbors(node_id)
        extra = [(self.query_id, rel, Direction.REVERSE) for rel in self._incoming.get(node_id, [])]
        return sorted(out + extra, key=lambda t: (t[1].ordinal, t[0], t[2] is Direction.REVERSE))

    def mean_adjacency(self) -> sp.csr_matrix:
        """Row-normalized undirected adjacency over all relations; isolated rows are zero."""
        n = len(self)
        rows, cols = [], []
        for e in self.base.edges:
            if e.src != e.dst:
                rows += [e.src, e.dst]
                cols += [e.dst, e.src]
        for _, t, _ in self._query_edges:
            rows += [self.query_id, t]
            cols += [t, self.query_id]
        adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
        adj.data[:] = 1.0  # collapse parallel edges of different relations
        deg = np.asarray(adj.sum(axis=1)).ravel()
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return sp.diags(inv) @ adj


def attach_query(graph: Rsg, query: QueryNode) -> AugmentedGraph:
    return AugmentedGraph(graph, query)


def initial_features(g1: AugmentedGraph, table: EmbeddingTable) -> np.ndarray:
    if len(table) != len(g1.base):
        raise LinkPredictionError("embedding table does not cover the graph")
    z_q = np.asarray(g1.query.embedding, dtype=np.float64)
    if z_q.shape != (table.dimension,):
        raise LinkPredictionError(f"query embedding has shape {z_q.shape}, expected ({table.dimension},)")
    return np.vstack([table.matrix, z_q[None, :]])


# -- model ----------------------------------------------------------------------


def _relu(x):
    return np.maximum(x, 0.0)


@dataclass
class GnnModel:
    dims: list[int]
    w_self: list[np.ndarray]
    w_nbr: list[np.ndarray]
    w_score: np.ndarray
    seed: int = 0
    activation: str = "relu"
    metadata: dict = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.w_self)

    @classmethod
    def init(cls, input_dim: int, n_layers: int = DEFAULT_LAYERS, hidden: Optional[Sequence[int]] = None,
             seed: int = 0) -> "GnnModel":
        """Glorot-uniform initialization; ``hidden`` defaults to ``input_dim`` for every layer."""
        if n_layers < 1:
            raise LinkPredictionError("need at least one layer")
        hidden = list(hidden) if hidden is not None else [input_dim] * n_layers
        if len(hidden) != n_layers:
            raise LinkPredictionError(f"{n_layers} layers but {len(hidden)} hidden sizes")
        dims = [input_dim] + hidden
        rng = np.random.default_rng(seed)

        def glorot(fan_in, fan_out):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=(fan_in, fan_out))

        w_self, w_nbr = [], []
        for a, b in zip(dims[:-1], dims[1:]):
            w_self.append(glorot(a, b))
            w_nbr.append(glorot(a, b))
        w_score = glorot(2 * dims[-1], 1).ravel()
        return cls(dims, w_self, w_nbr, w_score, seed)

    def parameters(self) -> list[np.ndarray]:
        return [*self.w_self, *self.w_nbr, self.w_score]

    def copy(self) -> "GnnModel":
        return copy.deepcopy(self)

    # -- persistence

    def dumps(self) -> str:
        def fmt(row):
            return " ".join(f"{v:.9g}" for v in row)

        lines = [
            f"# reporank-gnn version={WEIGHTS_VERSION}",
            f"layers={self.n_layers}",
            "dims=" + " ".join(str(d) for d in self.dims),
            f"activation={self.activation}",
        ]
        for name, mats in (("w_self", self.w_self), ("w_nbr", self.w_nbr)):
            for i, m in enumerate(mats):
                lines.append(f"{name} {i} {m.shape[0]} {m.shape[1]}")
                lines.extend(fmt(r) for r in m)
        lines.append(f"w_score {self.w_score.shape[0]}")
        lines.append(fmt(self.w_score))
        lines.append(f"seed={self.seed}")
        lines.append("metadata=" + json.dumps(self.metadata, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "GnnModel":
        lines = text.splitlines()
        m = re.match(r"# reporank-gnn version=(\d+)", lines[0])
        if m is None or int(m.group(1)) != WEIGHTS_VERSION:
            raise LinkPredictionError("not a version-1 model weights file")
        it = iter(lines[1:])
        n_layers = int(next(it).split("=")[1])
        dims = [int(x) for x in next(it).split("=")[1].split()]
        activation = next(it).split("=")[1]
        mats = {"w_self": [], "w_nbr": []}
        for name in ("w_self", "w_nbr"):
            for _ in range(n_layers):
                _, _, r, c = next(it).split()
                rows = [np.array([float(v) for v in next(it).split()]) for _ in range(int(r))]
                mat = np.vstack(rows)
                if mat.shape != (int(r), int(c)):
                    raise LinkPredictionError(f"{name} matrix has shape {mat.shape}, header says {(r, c)}")
                mats[name].append(mat)
        size = int(next(it).split()[1])
        w_score = np.array([float(v) for v in next(it).split()])
        if w_score.shape != (size,):
            raise LinkPredictionError("scoring vector length mismatch")
        seed = int(next(it).split("=")[1])
        metadata = json.loads(next(it).split("=", 1)[1])
        model = cls(dims, mats["w_self"], mats["w_nbr"], w_score, seed, activation, metadata)
        if not all(np.all(np.isfinite(p)) for p in model.parameters()):
            raise LinkPredictionError("model weights contain non-finite values")
        return model

    @classmethod
    def load(cls, path) -> "GnnModel":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _layer_pass(model: GnnModel, adj, z0: np.ndarray):
    """Returns per-layer inputs, their neighbor means and pre-activations."""
    if z0.shape[1] != model.dims[0]:
        raise LinkPredictionError(f"features have dimension {z0.shape[1]}, model expects {model.dims[0]}")
    inputs, means, pre = [], [], []
    z = z0
    last = model.n_layers - 1
    for layer, (ws, wn) in enumerate(zip(model.w_self, model.w_nbr)):
        agg = adj @ z
        p = z @ ws + agg @ wn
        inputs.append(z)
        means.append(agg)
        pre.append(p)
        z = p if layer == last else _relu(p)
    return z, (inputs, means, pre)


def forward(model: GnnModel, g1: AugmentedGraph, initial) -> np.ndarray:
    """Final node states for every node of ``g1``, query last.

    ``initial`` is either an :class:`EmbeddingTable` (the query row is taken
    from ``g1.query.embedding``) or a full ``(len(g1), d)`` feature array.
    """
    z0 = initial_features(g1, initial) if isinstance(initial, EmbeddingTable) else np.asarray(initial, dtype=np.float64)
    if z0.shape[0] != len(g1):
        raise LinkPredictionError(f"features cover {z0.shape[0]} nodes, graph has {len(g1)}")
    z, _ = _layer_pass(model, g1.mean_adjacency(), z0)
    return z


@dataclass(frozen=True)
class ScoredContext:
    node_id: int
    score: float
    probability: float


@dataclass
class RankedContexts:
    entries: list[ScoredContext]
    universe: str = "A_exp"

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def node_ids(self) -> list[int]:
        return [e.node_id for e in self.entries]

    def rank_of(self, node_id: int) -> Optional[int]:
        """1-based rank, or None when the node was not ranked."""
        for i, e in enumerate(self.entries, 1):
            if e.node_id == node_id:
                return i
        return None


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def _rank(ids: Sequence[int], scores: np.ndarray, universe: str) -> RankedContexts:
    ids = np.asarray(ids)
    order = np.lexsort((ids, -scores))
    probs = _sigmoid(scores)
    return RankedContexts([ScoredContext(int(ids[i]), float(scores[i]), float(probs[i])) for i in order], universe)


def score(model: GnnModel, z_final: np.ndarray, candidates: Sequence[int], query_id: int,
          universe: str = "A_exp") -> RankedContexts:
    """``s_i = w . concat(Z[i], Z[query])``, sorted descending with ties by node id."""
    candidates = list(dict.fromkeys(int(c) for c in candidates))
    if not candidates:
        raise LinkPredictionError("empty candidate set")
    h = model.dims[-1]
    s = z_final[candidates] @ model.w_score[:h] + z_final[query_id] @ model.w_score[h:]
    return _rank(candidates, s, universe)


def loss(probs, labels, n1: Optional[int] = None) -> float:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps]."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or (n1 is not None and p.shape[0] != n1):
        raise LinkPredictionError(f"length mismatch: {p.shape} predictions, {y.shape} labels, N1={n1}")
    if not np.all((y == 0) | (y == 1)):
        raise LinkPredictionError("labels must be 0 or 1")
    p = np.clip(p, LOSS_EPS, 1.0 - LOSS_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def select_top(ranked: RankedContexts, n2: int) -> list[ScoredContext]:
    if not 1 <= n2 <= len(ranked):
        raise LinkPredictionError(f"N2 must lie in [1, {len(ranked)}], got {n2}")
    return ranked.entries[:n2]


def cosine_rerank(query_vec: np.ndarray, candidates: Sequence[int], table: EmbeddingTable) -> RankedContexts:
    candidates = list(dict.fromkeys(int(c) for c in candidates))
    if not candidates:
        raise LinkPredictionError("empty candidate set")
    sims = table.matrix[candidates] @ unit(query_vec)
    return _rank(candidates, sims, "A_exp:cosine")


# -- training ---------------------------------------------------------------------


@dataclass
class TrainingSample:
    graph: Rsg
    table: EmbeddingTable
    query: QueryNode
    gold: int
    candidates: list[int]


def loss_and_grads(model: GnnModel, adj, z0: np.ndarray, candidates: Sequence[int], query_id: int,
                   labels: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Loss of one query graph and its gradient for every entry of :meth:`GnnModel.parameters`."""
    z, (inputs, means, pre) = _layer_pass(model, adj, z0)
    h = model.dims[-1]
    cand = np.asarray(candidates)
    s = z[cand] @ model.w_score[:h] + z[query_id] @ model.w_score[h:]
    p = _sigmoid(s)
    value = loss(p, labels)
    n1 = len(cand)
    clipped = (p < LOSS_EPS) | (p > 1.0 - LOSS_EPS)
    g = np.where(clipped, 0.0, (p - labels) / n1)

    d_score = np.concatenate([g @ z[cand], g.sum() * z[query_id]])
    dz = np.zeros_like(z)
    np.add.at(dz, cand, np.outer(g, model.w_score[:h]))
    dz[query_id] += g.sum() * model.w_score[h:]

    d_self = [None] * model.n_layers
    d_nbr = [None] * model.n_layers
    adj_t = adj.T.tocsr()
    for layer in range(model.n_layers - 1, -1, -1):
        dp = dz if layer == model.n_layers - 1 else dz * (pre[layer] > 0)
        d_self[layer] = inputs[layer].T @ dp
        d_nbr[layer] = means[layer].T @ dp
        if layer:
            dz = dp @ model.w_self[layer].T + adj_t @ (dp @ model.w_nbr[layer].T)
    return value, [*d_self, *d_nbr, d_score]


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = DEFAULT_LR, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _prepare(sample: TrainingSample):
    g1 = attach_query(sample.graph, sample.query)
    z0 = initial_features(g1, sample.table)
    cands = list(dict.fromkeys(sample.candidates))
    if sample.gold not in cands:
        cands.append(sample.gold)
    labels = np.array([1.0 if c == sample.gold else 0.0 for c in cands])
    return g1.mean_adjacency(), z0, cands, g1.query_id, labels


def train(model: GnnModel, dataset: Sequence[TrainingSample], epochs: int = DEFAULT_EPOCHS,
          lr: float = DEFAULT_LR, seed: int = 0) -> tuple[GnnModel, list[float]]:
    """Adam, one query graph per step, sample order shuffled per epoch from ``seed``.

    Returns a trained copy of ``model`` and the per-epoch mean loss.
    """
    if not dataset:
        raise LinkPredictionError("empty training set")
    model = model.copy()
    prepared = [_prepare(s) for s in dataset]
    for i, s in enumerate(dataset):
        s.graph.node(s.gold)
    opt = Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    trace = []
    for _ in range(epochs):
        total = 0.0
        for idx in rng.permutation(len(prepared)):
            adj, z0, cands, qid, labels = prepared[idx]
            value, grads = loss_and_grads(model, adj, z0, cands, qid, labels)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss on sample {idx}", int(idx))
            opt.step(grads)
            total += value
        trace.append(total / len(prepared))
    model.metadata = {**model.metadata, "epochs": epochs, "lr": lr, "train_seed": seed,
                      "samples": len(dataset)}
    return model, trace


# -- candidate universe / query attachment -----------------------------------------


def imported_universe(graph: Rsg, file_path: Optional[str]) -> set[int]:
    """Nodes imported into ``file_path`` plus what those imports expose (script members, class methods)."""
    if file_path is None or file_path not in graph.file_index:
        return set()
    script = graph.file_index[file_path]
    out: set[int] = set()
    for target, _, _ in graph.neighbors(script, {RelationKind.IMPORTS}, Direction.FORWARD):
        out.add(target)
        kind = graph.nodes[target].kind
        if kind is NodeKind.SCRIPT:
            out.update(t for t, _, _ in graph.neighbors(target, {RelationKind.ENCLOSES}, Direction.FORWARD))
        elif kind is NodeKind.CLASS:
            out.update(t for t, _, _ in graph.neighbors(target, {RelationKind.OWNS}, Direction.FORWARD))
    return out


_CALL_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*\(")


def infer_known_edges(graph: Rsg, query_text: str, file_path: Optional[str]) -> list[tuple[RelationKind, int]]:
    """Invokes edges for calls in the snippet whose callee name matches exactly one visible entity."""
    if file_path is None or file_path not in graph.file_index:
        return []
    visible = imported_universe(graph, file_path)
    script = graph.file_index[file_path]
    visible.update(t for t, _, _ in graph.neighbors(script, {RelationKind.ENCLOSES}, Direction.FORWARD))
    by_name: dict[str, list[int]] = {}
    for nid in sorted(visible):
        node = graph.nodes[nid]
        if node.kind in (NodeKind.FUNCTION, NodeKind.METHOD, NodeKind.CLASS):
            by_name.setdefault(node.name, []).append(nid)
    edges = []
    for name in dict.fromkeys(_CALL_RE.findall(query_text)):
        hits = by_name.get(name, [])
        if len(hits) == 1:
            edges.append((RelationKind.INVOKES, hits[0]))
    return edges
