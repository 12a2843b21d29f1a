"""
Build a repository graph and expand around a query
===================================================

Parse the small ``shop`` package from the test fixtures into a semantic graph,
embed every entity with the hashing encoder, then compare the two expansion
strategies from the same anchors.
"""

# %%
# Parse the fixture package. Each function, method, class and module becomes a
# node; imports, calls, ownership, nesting and inheritance become edges.
from collections import Counter
from pathlib import Path

from reporank.embedding import BaselineEncoder, EmbeddingTable, encode
from reporank.expansion import PathType, PathTypeSet, exhausted_expand, pattern_expand, select_anchors
from reporank.parsing import build_rsg

ROOT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "fixture_repo"
graph = build_rsg(ROOT)
print(len(graph), "nodes")
print(Counter(e.relation.value for e in graph.edges))

# %%
# Embed every node and pick the three nearest entities to an unfinished snippet.
enc = BaselineEncoder(64)
table = EmbeddingTable.from_graph(graph, enc)
query = "def summary():\n    total = checkout()\n    return normalize(total)"
anchors = select_anchors(graph, table, encode(enc, query), 3)
for node_id, sim in anchors:
    print(f"{sim:.3f}", graph.nodes[node_id].qualified_name)

# %%
# Exhaustive search takes every relation up to depth 2.
ids = [a for a, _ in anchors]
full = exhausted_expand(graph, ids, 2, 1000)
print(len(full.nodes), "nodes reached without a filter")

# %%
# A path-type filter climbs from a function to its module, then follows that
# module's imports of functions. The set must contain every prefix.
patterns = PathTypeSet({PathType.parse("Function <-Encloses- Script"): 1,
                        PathType.parse("Function <-Encloses- Script -Imports-> Function"): 1})
narrow = pattern_expand(graph, ids, 2, 1000, patterns)
for node_id in narrow.nodes:
    print(narrow.records[node_id].path.render(), "->", graph.nodes[node_id].qualified_name)
