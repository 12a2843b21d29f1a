"""Anchor selection and bounded BFS expansion over the semantic graph.

Exhaustive expansion walks every relation in both directions. Pattern
expansion walks only along path types mined from training queries; a path
type is the origin node kind followed by (relation, direction, node kind)
steps, e.g. ``Class <-Encloses- Script -Imports-> Function``.
"""

from __future__ import annotations

import re
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .embedding import EmbeddingTable, knn_search
from .graph import EDGE_CONSTRAINTS, Direction, NodeKind, RelationKind, Rsg

PATTERNS_VERSION = 1

DEFAULT_K = 3
DEFAULT_DEPTH = 4
DEFAULT_MAX_NODES = 1000
DEFAULT_COVERAGE_QUANTILE = 0.9


class ExpansionError(ValueError):
    pass


@dataclass(frozen=True)
class Step:
    relation: RelationKind
    direction: Direction
    kind: NodeKind

    def render(self) -> str:
        if self.direction is Direction.FORWARD:
            return f"-{self.relation.value}-> {self.kind.value}"
        return f"<-{self.relation.value}- {self.kind.value}"


@dataclass(frozen=True)
class PathType:
    origin: NodeKind
    steps: tuple[Step, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def extend(self, step: Step) -> "PathType":
        return PathType(self.origin, self.steps + (step,))

    def prefixes(self) -> list["PathType"]:
        return [PathType(self.origin, self.steps[:i]) for i in range(1, len(self.steps) + 1)]

    def render(self) -> str:
        return " ".join([self.origin.value] + [s.render() for s in self.steps])

    __str__ = render

    @classmethod
    def parse(cls, text: str) -> "PathType":
        tokens = text.split()
        if not tokens:
            raise ExpansionError("empty path type")
        origin = NodeKind(tokens[0])
        steps = []
        if len(tokens) % 2 != 1:
            raise ExpansionError(f"malformed path type {text!r}")
        for arrow, kind in zip(tokens[1::2], tokens[2::2]):
            m = re.fullmatch(r"-(\w+)->|<-(\w+)-", arrow)
            if m is None:
                raise ExpansionError(f"malformed step {arrow!r} in {text!r}")
            if m.group(1):
                steps.append(Step(RelationKind(m.group(1)), Direction.FORWARD, NodeKind(kind)))
            else:
                steps.append(Step(RelationKind(m.group(2)), Direction.REVERSE, NodeKind(kind)))
        return cls(origin, tuple(steps))


@dataclass
class PathTypeSet:
    frequencies: dict[PathType, int]
    coverage_quantile: float = DEFAULT_COVERAGE_QUANTILE
    max_depth: Optional[int] = None

    def __contains__(self, path: PathType) -> bool:
        return path in self.frequencies

    def __len__(self) -> int:
        return len(self.frequencies)

    def __iter__(self):
        return iter(self.ordered())

    def ordered(self) -> list[PathType]:
        return sorted(self.frequencies, key=lambda p: (-self.frequencies[p], len(p), p.render()))

    def is_prefix_closed(self) -> bool:
        return all(pre in self.frequencies for p in self.frequencies for pre in p.prefixes())

    def dumps(self) -> str:
        lines = [f"# reporank-pathtypes version={PATTERNS_VERSION}",
                 f"coverage_quantile={self.coverage_quantile!r}",
                 f"max_depth={self.max_depth if self.max_depth is not None else ''}"]
        lines += [f"{self.frequencies[p]}\t{p.render()}" for p in self.ordered()]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "PathTypeSet":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("# reporank-pathtypes"):
            raise ExpansionError("missing path-type header")
        version = int(lines[0].split("version=")[1])
        if version != PATTERNS_VERSION:
            raise ExpansionError(f"unsupported path-type file version {version}")
        q, depth, freqs = DEFAULT_COVERAGE_QUANTILE, None, {}
        for line in lines[1:]:
            if line.startswith("coverage_quantile="):
                q = float(line.split("=", 1)[1])
            elif line.startswith("max_depth="):
                raw = line.split("=", 1)[1]
                depth = int(raw) if raw else None
            else:
                count, path = line.split("\t", 1)
                freqs[PathType.parse(path)] = int(count)
        return cls(freqs, q, depth)

    @classmethod
    def load(cls, path) -> "PathTypeSet":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def all_paths(cls, max_depth: int) -> "PathTypeSet":
        """Every path type up to ``max_depth`` steps that the edge kind rules allow."""
        freqs = {}
        frontier = [PathType(k, ()) for k in NodeKind]
        for _ in range(max_depth):
            frontier = [p.extend(s) for p in frontier for s in _legal_steps(p.steps[-1].kind if p.steps else p.origin)]
            freqs.update({p: 1 for p in frontier})
        return cls(freqs, 1.0, max_depth)


def _legal_steps(kind: NodeKind) -> list[Step]:
    out = []
    for rel, (src_kinds, dst_kinds, _) in EDGE_CONSTRAINTS.items():
        if kind in src_kinds:
            out += [Step(rel, Direction.FORWARD, k) for k in NodeKind if k in dst_kinds]
        if kind in dst_kinds:
            out += [Step(rel, Direction.REVERSE, k) for k in NodeKind if k in src_kinds]
    return out


@dataclass
class ExpansionConfig:
    K: int = DEFAULT_K
    D: int = DEFAULT_DEPTH
    M: int = DEFAULT_MAX_NODES
    strategy: str = "pattern"  # exhausted | pattern | knn
    pattern_set: Optional[PathTypeSet] = None
    budget_scope: str = "per-anchor"  # per-anchor | global

    def __post_init__(self):
        if self.K < 1 or self.D < 0 or self.M < 1:
            raise ExpansionError(f"need K >= 1, D >= 0, M >= 1 (got K={self.K}, D={self.D}, M={self.M})")
        if self.strategy not in ("exhausted", "pattern", "knn"):
            raise ExpansionError(f"unknown strategy {self.strategy!r}")
        if self.budget_scope not in ("per-anchor", "global"):
            raise ExpansionError(f"unknown budget scope {self.budget_scope!r}")


@dataclass(frozen=True)
class PathRecord:
    anchor: int
    path: PathType  # empty steps for anchors themselves
    parent: Optional[int]


@dataclass
class ExpandedSubgraph:
    anchors: list[tuple[int, float]]
    nodes: list[int]  # A_exp in discovery order
    records: dict[int, PathRecord]
    reached_per_anchor: dict[int, int] = field(default_factory=dict)
    induced_edges: list[tuple[int, int, RelationKind]] = field(default_factory=list)

    @property
    def node_set(self) -> set[int]:
        return set(self.nodes)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.records


def select_anchors(graph: Rsg, table: EmbeddingTable, query_vec: np.ndarray, k: int) -> list[tuple[int, float]]:
    if len(table) != len(graph):
        raise ExpansionError(f"embedding table has {len(table)} rows for a graph of {len(graph)} nodes")
    return knn_search(table, query_vec, k)


def _bfs(graph: Rsg, anchor: int, depth: int, budget: int, allowed: Optional[PathTypeSet]):
    """One anchor's BFS; yields (node, PathRecord) in visit order, anchor first."""
    origin = PathType(graph.nodes[anchor].kind, ())
    yield anchor, PathRecord(anchor, origin, None)
    if budget <= 1:
        return
    reached = 1
    visited = {anchor}
    queue = deque([(anchor, origin)])
    while queue:
        node, path = queue.popleft()
        if len(path) >= depth:
            continue
        for other, rel, direction in graph.neighbors(node):
            if other in visited:
                continue
            step_path = path.extend(Step(rel, direction, graph.nodes[other].kind))
            if allowed is not None and step_path not in allowed:
                continue
            visited.add(other)
            reached += 1
            yield other, PathRecord(anchor, step_path, node)
            if reached >= budget:
                return
            queue.append((other, step_path))


def _expand(graph: Rsg, anchors, depth, budget, allowed, budget_scope="per-anchor") -> ExpandedSubgraph:
    if allowed is not None and len(allowed) == 0:
        raise ExpansionError("pattern set is empty")
    anchor_list = [(a, s) for a, s in anchors] if anchors and isinstance(anchors[0], tuple) else [(a, 1.0) for a in anchors]
    for a, _ in anchor_list:
        graph.node(a)
    order: list[int] = []
    records: dict[int, PathRecord] = {}
    per_anchor: dict[int, int] = {}
    remaining = budget
    for anchor, _ in anchor_list:
        if budget_scope == "global" and remaining <= 0:
            break
        cap = remaining if budget_scope == "global" else budget
        count = 0
        for node, rec in _bfs(graph, anchor, depth, cap, allowed):
            count += 1
            old = records.get(node)
            # keep the shallowest record; earlier anchors win ties
            if old is None:
                records[node] = rec
                order.append(node)
            elif len(rec.path) < len(old.path):
                records[node] = rec
        per_anchor[anchor] = count
        remaining -= count
    members = set(order)
    induced = [(e.src, e.dst, e.relation) for e in graph.edges if e.src in members and e.dst in members]
    return ExpandedSubgraph(anchor_list, order, records, per_anchor, induced)


def exhausted_expand(graph: Rsg, anchors, D: int, M: int, budget_scope: str = "per-anchor") -> ExpandedSubgraph:
    """BFS over all relations in both directions, depth <= D, at most M nodes per anchor."""
    return _expand(graph, anchors, D, M, None, budget_scope)


def pattern_expand(graph: Rsg, anchors, D: int, M: int, P: PathTypeSet,
                   budget_scope: str = "per-anchor") -> ExpandedSubgraph:
    """Like :func:`exhausted_expand` but a node is taken only if its path type is in ``P``."""
    if not P.is_prefix_closed():
        raise ExpansionError("pattern set must be closed under prefixes")
    return _expand(graph, anchors, D, M, P, budget_scope)


def expand(graph: Rsg, anchors, config: ExpansionConfig) -> ExpandedSubgraph:
    if config.strategy == "knn":
        return _expand(graph, anchors, 0, 1, None)
    if config.strategy == "exhausted":
        return exhausted_expand(graph, anchors, config.D, config.M, config.budget_scope)
    if config.pattern_set is None:
        raise ExpansionError("pattern strategy requires a pattern set")
    return pattern_expand(graph, anchors, config.D, config.M, config.pattern_set, config.budget_scope)


@dataclass
class MiningSample:
    graph: Rsg
    table: EmbeddingTable
    query_vec: np.ndarray
    gold: int


def mine_path_patterns(samples: Sequence[MiningSample], D: int = DEFAULT_DEPTH, M: int = DEFAULT_MAX_NODES,
                       K: int = DEFAULT_K, q: float = DEFAULT_COVERAGE_QUANTILE) -> PathTypeSet:
    """Most frequent anchor-to-gold path types, closed under prefixes."""
    if not 0.0 <= q <= 1.0:
        raise ExpansionError(f"coverage quantile must lie in [0, 1], got {q}")
    counts: Counter = Counter()
    for s in samples:
        s.graph.node(s.gold)
        anchors = select_anchors(s.graph, s.table, s.query_vec, min(K, len(s.graph)))
        sub = exhausted_expand(s.graph, anchors, D, M)
        rec = sub.records.get(s.gold)
        if rec is not None and len(rec.path) > 0:
            counts[rec.path] += 1
    if not counts:
        raise ExpansionError("no gold node was reached by a non-trivial path; increase D or M")
    total = sum(counts.values())
    ranked = sorted(counts, key=lambda p: (-counts[p], len(p), p.render()))
    kept, cum = [], 0
    for p in ranked:
        kept.append(p)
        cum += counts[p]
        if cum >= q * total:
            break
    freqs: dict[PathType, int] = {}
    for p in kept:
        for pre in p.prefixes():
            freqs[pre] = freqs.get(pre, 0) + counts[p]
    return PathTypeSet(freqs, q, D)


def measure_hits_coverage(runs: Sequence[tuple[ExpandedSubgraph, int]], graph_sizes: Sequence[int]) -> tuple[float, float]:
    """Fraction of runs whose gold is in the subgraph, and mean |A_exp| / |V|."""
    if not runs:
        raise ExpansionError("need at least one run")
    if len(graph_sizes) != len(runs):
        raise ExpansionError("one graph size per run is required")
    hits = sum(1 for sub, gold in runs if gold in sub)
    coverage = [len(sub.nodes) / size for (sub, _), size in zip(runs, graph_sizes)]
    return hits / len(runs), float(np.mean(coverage))
