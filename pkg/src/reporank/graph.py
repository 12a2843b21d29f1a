"""Repo-level semantic graph: typed code entities and their relations.

Nodes are functions, methods, classes and per-file script residues. Edges
belong to five relation families and are stored forward-only; the inverse
labels (ImportedBy, Caller, OwnedBy, EnclosedBy, InheritedBy) exist only as a
traversal view through ``Direction.REVERSE``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

FORMAT_VERSION = 1


class NodeKind(enum.Enum):
    FUNCTION = "Function"
    METHOD = "Method"
    CLASS = "Class"
    SCRIPT = "Script"


class RelationKind(enum.Enum):
    IMPORTS = "Imports"
    INVOKES = "Invokes"
    OWNS = "Owns"
    ENCLOSES = "Encloses"
    INHERITS = "Inherits"

    @property
    def ordinal(self) -> int:
        return _RELATION_ORDER[self]

    @property
    def inverse_label(self) -> str:
        return _INVERSE_LABELS[self]


_RELATION_ORDER = {rel: i for i, rel in enumerate(RelationKind)}
_INVERSE_LABELS = {
    RelationKind.IMPORTS: "ImportedBy",
    RelationKind.INVOKES: "Caller",
    RelationKind.OWNS: "OwnedBy",
    RelationKind.ENCLOSES: "EnclosedBy",
    RelationKind.INHERITS: "InheritedBy",
}


class Direction(enum.Enum):
    FORWARD = "Forward"
    REVERSE = "Reverse"
    BOTH = "Both"


_CALLABLE = frozenset({NodeKind.FUNCTION, NodeKind.METHOD})

# relation -> (allowed src kinds, allowed dst kinds, human-readable rule)
EDGE_CONSTRAINTS = {
    RelationKind.IMPORTS: (
        frozenset({NodeKind.SCRIPT}),
        frozenset({NodeKind.SCRIPT, NodeKind.FUNCTION, NodeKind.CLASS}),
        "Imports: src must be Script, dst must be Script, Function or Class",
    ),
    RelationKind.INVOKES: (
        _CALLABLE,
        _CALLABLE,
        "Invokes: src and dst must be Function or Method",
    ),
    RelationKind.OWNS: (
        frozenset({NodeKind.CLASS}),
        frozenset({NodeKind.METHOD}),
        "Owns: src must be Class, dst must be Method",
    ),
    RelationKind.ENCLOSES: (
        frozenset({NodeKind.SCRIPT}),
        frozenset({NodeKind.FUNCTION, NodeKind.METHOD, NodeKind.CLASS}),
        "Encloses: src must be Script, dst must be Function, Method or Class",
    ),
    RelationKind.INHERITS: (
        frozenset({NodeKind.CLASS}),
        frozenset({NodeKind.CLASS}),
        "Inherits: src and dst must be Class",
    ),
}


class GraphError(ValueError):
    """Raised when a mutation would break a graph invariant."""


class EdgeConstraintError(GraphError):
    def __init__(self, edge: "RsgEdge", constraint: str):
        super().__init__(f"{constraint} (edge {edge.src} -{edge.relation.value}-> {edge.dst})")
        self.edge = edge
        self.constraint = constraint


class FrozenGraphError(GraphError):
    pass


@dataclass
class RsgNode:
    kind: NodeKind
    name: str
    qualified_name: str
    file_path: str
    span: tuple[int, int]
    source_text: str
    signature: str = ""
    id: int = -1

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "name": self.name,
            "qualified_name": self.qualified_name,
            "file_path": self.file_path,
            "span": [self.span[0], self.span[1]],
            "source_text": self.source_text,
            "signature": self.signature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RsgNode":
        return cls(
            kind=NodeKind(d["kind"]),
            name=d["name"],
            qualified_name=d["qualified_name"],
            file_path=d["file_path"],
            span=(int(d["span"][0]), int(d["span"][1])),
            source_text=d["source_text"],
            signature=d.get("signature", ""),
            id=int(d["id"]),
        )


@dataclass(frozen=True)
class RsgEdge:
    src: int
    dst: int
    relation: RelationKind

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.src, self.dst, self.relation.ordinal)


@dataclass(frozen=True)
class Violation:
    invariant: str
    message: str
    nodes: tuple[int, ...] = ()
    edges: tuple[tuple[int, int, str], ...] = ()


class Rsg:
    """Mutable during construction, read-only once :meth:`freeze` is called."""

    def __init__(self, meta: Optional[dict] = None):
        self.nodes: list[RsgNode] = []
        self.edges: list[RsgEdge] = []
        self.meta: dict = dict(meta or {})
        self.file_index: dict[str, int] = {}
        self._edge_keys: set[tuple[int, int, int]] = set()
        # node -> relation -> sorted neighbor ids
        self._fwd: list[dict[RelationKind, list[int]]] = []
        self._rev: list[dict[RelationKind, list[int]]] = []
        self._frozen = False

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return f"Rsg(nodes={len(self.nodes)}, edges={len(self.edges)})"

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "Rsg":
        self._frozen = True
        return self

    def _check_mutable(self):
        if self._frozen:
            raise FrozenGraphError("graph is frozen")

    # -- construction -------------------------------------------------------

    def add_node(self, node: RsgNode) -> int:
        self._check_mutable()
        if node.span[0] > node.span[1]:
            raise GraphError(f"span start {node.span[0]} after end {node.span[1]} for {node.qualified_name}")
        if node.kind is NodeKind.SCRIPT and node.file_path in self.file_index:
            raise GraphError(f"duplicate Script node for {node.file_path!r}")
        return self._append_node(node)

    def _append_node(self, node: RsgNode) -> int:
        node.id = len(self.nodes)
        self.nodes.append(node)
        self._fwd.append({})
        self._rev.append({})
        if node.kind is NodeKind.SCRIPT and node.file_path not in self.file_index:
            self.file_index[node.file_path] = node.id
        return node.id

    def add_edge(self, edge: RsgEdge) -> bool:
        """Add ``edge``; returns False when the triple was already present."""
        self._check_mutable()
        n = len(self.nodes)
        for end in (edge.src, edge.dst):
            if not 0 <= end < n:
                raise GraphError(f"unknown node id {end}")
        src_kinds, dst_kinds, rule = EDGE_CONSTRAINTS[edge.relation]
        src, dst = self.nodes[edge.src], self.nodes[edge.dst]
        if src.kind not in src_kinds or dst.kind not in dst_kinds:
            raise EdgeConstraintError(edge, rule)
        if edge.relation is RelationKind.ENCLOSES and src.file_path != dst.file_path:
            raise EdgeConstraintError(edge, "Encloses: dst must live in the src script's file")
        if edge.relation is RelationKind.INHERITS and edge.src == edge.dst:
            raise EdgeConstraintError(edge, "Inherits: a class cannot inherit from itself")
        return self._append_edge(edge)

    def _append_edge(self, edge: RsgEdge) -> bool:
        if edge.key in self._edge_keys:
            return False
        self._edge_keys.add(edge.key)
        self.edges.append(edge)
        _insert_sorted(self._fwd[edge.src].setdefault(edge.relation, []), edge.dst)
        _insert_sorted(self._rev[edge.dst].setdefault(edge.relation, []), edge.src)
        return True

    def has_edge(self, src: int, dst: int, relation: RelationKind) -> bool:
        return (src, dst, relation.ordinal) in self._edge_keys

    # -- queries ------------------------------------------------------------

    def node(self, node_id: int) -> RsgNode:
        if not 0 <= node_id < len(self.nodes):
            raise KeyError(f"unknown node id {node_id}")
        return self.nodes[node_id]

    def neighbors(
        self,
        node_id: int,
        relation_filter: Optional[Iterable[RelationKind]] = None,
        direction: Direction = Direction.BOTH,
    ) -> list[tuple[int, RelationKind, Direction]]:
        """Neighbors sorted by (relation ordinal, node id, forward-before-reverse)."""
        if not 0 <= node_id < len(self.nodes):
            raise KeyError(f"unknown node id {node_id}")
        wanted = set(relation_filter) if relation_filter is not None else None
        out = []
        tables = []
        if direction in (Direction.FORWARD, Direction.BOTH):
            tables.append((self._fwd[node_id], Direction.FORWARD, 0))
        if direction in (Direction.REVERSE, Direction.BOTH):
            tables.append((self._rev[node_id], Direction.REVERSE, 1))
        for table, tag, order in tables:
            for rel, ids in table.items():
                if wanted is not None and rel not in wanted:
                    continue
                out.extend((rel.ordinal, other, order, rel, tag) for other in ids)
        out.sort(key=lambda t: t[:3])
        return [(other, rel, tag) for _, other, _, rel, tag in out]

    def undirected_neighbor_ids(self, node_id: int) -> list[int]:
        seen = set()
        for table in (self._fwd[node_id], self._rev[node_id]):
            for ids in table.values():
                seen.update(ids)
        seen.discard(node_id)
        return sorted(seen)

    def edges_of(self, relation: RelationKind) -> list[RsgEdge]:
        return [e for e in self.edges if e.relation is relation]

    def script_of(self, node_id: int) -> int:
        return self.file_index[self.nodes[node_id].file_path]

    def find(self, qualified_name: str) -> RsgNode:
        for node in self.nodes:
            if node.qualified_name == qualified_name:
                return node
        raise KeyError(qualified_name)

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "nodes": [n.to_dict() for n in self.nodes],
            "edges": [
                {"src": e.src, "dst": e.dst, "relation": e.relation.value}
                for e in sorted(self.edges, key=lambda e: (e.src, e.relation.ordinal, e.dst))
            ],
            "meta": self.meta,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, ensure_ascii=False) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "Rsg":
        """Load without enforcing invariants, so corrupted files reach :func:`validate`."""
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise GraphError(f"unsupported graph format version {version!r}")
        graph = cls(meta=data.get("meta", {}))
        for i, raw in enumerate(data["nodes"]):
            node = RsgNode.from_dict(raw)
            if node.id != i:
                raise GraphError(f"node record {i} carries id {node.id}; ids must be array indexes")
            graph._append_node(node)
        n = len(graph.nodes)
        for raw in data["edges"]:
            edge = RsgEdge(int(raw["src"]), int(raw["dst"]), RelationKind(raw["relation"]))
            if not (0 <= edge.src < n and 0 <= edge.dst < n):
                raise GraphError(f"edge references unknown node: {raw}")
            if not graph._append_edge(edge):
                # keep the duplicate row visible to validate()
                graph.edges.append(edge)
        return graph

    @classmethod
    def loads(cls, text: str) -> "Rsg":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "Rsg":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _insert_sorted(ids: list[int], value: int) -> None:
    lo, hi = 0, len(ids)
    while lo < hi:
        mid = (lo + hi) // 2
        if ids[mid] < value:
            lo = mid + 1
        else:
            hi = mid
    ids.insert(lo, value)


def _edge_tuple(e: RsgEdge) -> tuple[int, int, str]:
    return (e.src, e.dst, e.relation.value)


def validate(graph: Rsg) -> list[Violation]:
    """Check every node, edge and graph-level invariant; an empty list means well-formed."""
    out: list[Violation] = []
    nodes = graph.nodes
    n = len(nodes)

    seen_qnames: dict[str, int] = {}
    scripts_per_file: dict[str, list[int]] = {}
    for i, node in enumerate(nodes):
        if node.id != i:
            out.append(Violation("dense-ids", f"node at index {i} has id {node.id}", (i,)))
        if node.span[0] > node.span[1]:
            out.append(Violation("span-order", f"node {i} span {node.span} is inverted", (i,)))
        if node.qualified_name in seen_qnames:
            out.append(Violation(
                "unique-qualified-name",
                f"qualified name {node.qualified_name!r} used by nodes {seen_qnames[node.qualified_name]} and {i}",
                (seen_qnames[node.qualified_name], i),
            ))
        else:
            seen_qnames[node.qualified_name] = i
        if node.kind is NodeKind.SCRIPT:
            scripts_per_file.setdefault(node.file_path, []).append(i)
    for path, ids in scripts_per_file.items():
        if len(ids) > 1:
            out.append(Violation("one-script-per-file", f"file {path!r} has {len(ids)} Script nodes", tuple(ids)))
    for i, node in enumerate(nodes):
        if node.kind is not NodeKind.SCRIPT and node.file_path not in scripts_per_file:
            out.append(Violation("one-script-per-file", f"file {node.file_path!r} of node {i} has no Script node", (i,)))

    keys_seen: set[tuple[int, int, int]] = set()
    encloses_in = [0] * n
    owns_in = [0] * n
    for e in graph.edges:
        if not (0 <= e.src < n and 0 <= e.dst < n):
            out.append(Violation("edge-endpoints", "edge references unknown node", edges=(_edge_tuple(e),)))
            continue
        if e.key in keys_seen:
            out.append(Violation("no-duplicate-edges", "duplicate edge triple", (e.src, e.dst), (_edge_tuple(e),)))
        keys_seen.add(e.key)
        src_kinds, dst_kinds, rule = EDGE_CONSTRAINTS[e.relation]
        if nodes[e.src].kind not in src_kinds or nodes[e.dst].kind not in dst_kinds:
            out.append(Violation(f"edge-kind:{e.relation.value}", rule, (e.src, e.dst), (_edge_tuple(e),)))
        if e.relation is RelationKind.ENCLOSES:
            encloses_in[e.dst] += 1
            if nodes[e.src].file_path != nodes[e.dst].file_path:
                out.append(Violation(
                    "encloses-same-file", f"Script {e.src} encloses node {e.dst} from another file",
                    (e.src, e.dst), (_edge_tuple(e),),
                ))
        elif e.relation is RelationKind.OWNS:
            owns_in[e.dst] += 1
        elif e.relation is RelationKind.INHERITS and e.src == e.dst:
            out.append(Violation("inherits-irreflexive", f"class {e.src} inherits from itself", (e.src,), (_edge_tuple(e),)))

    for i, node in enumerate(nodes):
        if node.kind is not NodeKind.SCRIPT and encloses_in[i] != 1:
            out.append(Violation(
                "single-encloses-parent",
                f"{node.kind.value} {node.qualified_name!r} (id {i}) has {encloses_in[i]} inbound Encloses edges",
                (i,),
            ))
        if node.kind is NodeKind.METHOD and owns_in[i] != 1:
            out.append(Violation(
                "single-owns-parent",
                f"Method {node.qualified_name!r} (id {i}) has {owns_in[i]} inbound Owns edges",
                (i,),
            ))

    out.extend(_inherits_cycles(graph))

    # adjacency must mirror the edge list
    expected_fwd: dict[tuple[int, RelationKind], list[int]] = {}
    expected_rev: dict[tuple[int, RelationKind], list[int]] = {}
    for e in graph.edges:
        if 0 <= e.src < n and 0 <= e.dst < n:
            expected_fwd.setdefault((e.src, e.relation), []).append(e.dst)
            expected_rev.setdefault((e.dst, e.relation), []).append(e.src)
    for table, expected, label in ((graph._fwd, expected_fwd, "forward"), (graph._rev, expected_rev, "reverse")):
        actual = {(i, rel): ids for i in range(min(n, len(table))) for rel, ids in table[i].items() if ids}
        for key in set(actual) | set(expected):
            if sorted(set(expected.get(key, []))) != actual.get(key, []):
                out.append(Violation("adjacency-consistency", f"{label} adjacency of node {key[0]} under {key[1].value} disagrees with edges", (key[0],)))
    return out


def _inherits_cycles(graph: Rsg) -> list[Violation]:
    """Iterative three-colour DFS over Inherits edges; one violation per back edge."""
    n = len(graph.nodes)
    children: dict[int, list[int]] = {}
    for e in graph.edges:
        if e.relation is RelationKind.INHERITS and e.src != e.dst and 0 <= e.src < n and 0 <= e.dst < n:
            children.setdefault(e.src, []).append(e.dst)
    for v in children.values():
        v.sort()
    WHITE, GREY, BLACK = 0, 1, 2
    colour = [WHITE] * n
    out = []
    for root in sorted(children):
        if colour[root] != WHITE:
            continue
        stack = [(root, iter(children.get(root, [])))]
        path = [root]
        colour[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[node] = BLACK
                stack.pop()
                path.pop()
                continue
            if colour[nxt] == GREY:
                cycle = tuple(path[path.index(nxt):]) + (nxt,)
                out.append(Violation(
                    "inherits-acyclic",
                    "Inherits cycle " + " -> ".join(str(c) for c in cycle),
                    cycle[:-1],
                ))
            elif colour[nxt] == WHITE:
                colour[nxt] = GREY
                stack.append((nxt, iter(children.get(nxt, []))))
                path.append(nxt)
    return out


def inherits_reachable(graph: Rsg, src: int, dst: int) -> bool:
    """True when ``dst`` is ``src`` or an Inherits ancestor of it."""
    stack, seen = [src], set()
    while stack:
        cur = stack.pop()
        if cur == dst:
            return True
        if cur in seen:
            continue
        seen.add(cur)
        stack.extend(graph._fwd[cur].get(RelationKind.INHERITS, []))
    return False
