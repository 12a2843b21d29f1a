from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reporank.embedding import EmbeddingTable
from reporank.expansion import (
    ExpandedSubgraph, ExpansionConfig, ExpansionError, MiningSample, PathRecord, PathType, PathTypeSet, expand,
    exhausted_expand, measure_hits_coverage, mine_path_patterns, pattern_expand, select_anchors,
)
from reporank.graph import NodeKind, RelationKind, Rsg, RsgEdge, RsgNode
from reporank.parsing import build_rsg
from tests.oracles import bfs_depths, random_graph

FIXTURE = Path(__file__).parent / "fixtures" / "fixture_repo"
BIG = 10**9


def functions(n):
    g = Rsg()
    for i in range(n):
        g.add_node(RsgNode(NodeKind.FUNCTION, f"f{i}", f"m.f{i}", "m.py", (i + 1, i + 1), f"def f{i}(): pass"))
    return g


def test_chain_depth_two():
    g = functions(4)
    for a, b in [(0, 1), (1, 2), (2, 3)]:
        g.add_edge(RsgEdge(a, b, RelationKind.INVOKES))
    assert exhausted_expand(g, [0], 2, 10).node_set == {0, 1, 2}


def test_zero_depth_is_anchors():
    g = random_graph(np.random.default_rng(1))
    sub = exhausted_expand(g, [0, 3], 0, 100)
    assert sub.nodes == [0, 3]


def test_star_budget_counts_anchor():
    g = functions(11)
    for leaf in range(1, 11):
        g.add_edge(RsgEdge(0, leaf, RelationKind.INVOKES))
    sub = exhausted_expand(g, [0], 1, 5)
    assert sub.nodes == [0, 1, 2, 3, 4]
    assert sub.reached_per_anchor == {0: 5}


def test_global_budget_scope():
    g = functions(6)
    for a, b in [(0, 1), (1, 2), (3, 4), (4, 5)]:
        g.add_edge(RsgEdge(a, b, RelationKind.INVOKES))
    assert exhausted_expand(g, [0, 3], 2, 4).node_set == {0, 1, 2, 3, 4, 5}
    assert exhausted_expand(g, [0, 3], 2, 4, budget_scope="global").node_set == {0, 1, 2, 3}


def test_select_anchors_examples():
    g = functions(5)
    rng = np.random.default_rng(0)
    table = EmbeddingTable(rng.normal(size=(5, 8)), "t")
    assert [a for a, _ in select_anchors(g, table, table[4], 1)] == [4]
    small = functions(3)
    t3 = EmbeddingTable(np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]]), "t")
    assert [a for a, _ in select_anchors(small, t3, np.array([1.0, 0.0]), 3)] == [0, 1, 2]
    with pytest.raises(ValueError):
        select_anchors(small, t3, np.array([1.0, 0.0]), 4)


def test_pattern_follows_only_import_branch():
    g = build_rsg(FIXTURE)
    script = g.find("shop.models.product").id
    P = PathTypeSet({PathType.parse("Script -Imports-> Function"): 1})
    sub = pattern_expand(g, [script], 4, 1000, P)
    assert sub.node_set == {script, g.find("shop.util.slugify").id}
    # the class import and inheritance branch are not explored
    assert g.find("shop.models.base.Entity").id not in sub


def test_pattern_no_conforming_step():
    g = build_rsg(FIXTURE)
    fn = g.find("shop.util.normalize").id
    P = PathTypeSet({PathType.parse("Class -Inherits-> Class"): 1})
    assert pattern_expand(g, [fn], 4, 1000, P).nodes == [fn]


def test_pattern_errors():
    g = functions(2)
    with pytest.raises(ExpansionError):
        pattern_expand(g, [0], 2, 10, PathTypeSet({}))
    open_set = PathTypeSet({PathType.parse("Function -Invokes-> Function -Invokes-> Function"): 1})
    with pytest.raises(ExpansionError):
        pattern_expand(g, [0], 2, 10, open_set)
    with pytest.raises(ExpansionError):
        ExpansionConfig(K=0)


def test_path_type_text_round_trip():
    text = "Class <-Encloses- Script -Imports-> Function"
    p = PathType.parse(text)
    assert p.render() == text and len(p) == 2
    s = PathTypeSet({p: 3, p.prefixes()[0]: 3}, 0.9, 4)
    back = PathTypeSet.loads(s.dumps())
    assert back.frequencies == s.frequencies and back.max_depth == 4 and back.is_prefix_closed()


def _fixture_samples(graph, golds_by_script):
    """Table whose query vector is exactly the script's embedding, so the script is the only anchor."""
    n = len(graph)
    table = EmbeddingTable(np.eye(n), "onehot")
    return [MiningSample(graph, table, table[graph.find(s).id], graph.find(gold).id)
            for s, gold in golds_by_script]


def test_mining_planted_import_path():
    g = build_rsg(FIXTURE)
    samples = _fixture_samples(g, [("shop", "shop.util.slugify"), ("shop.models.product", "shop.util.slugify"),
                                   ("shop.reports.daily", "shop.util.normalize"),
                                   ("shop.reports.daily", "shop.checkout.checkout")])
    P = mine_path_patterns(samples, D=4, M=1000, K=1, q=0.9)
    assert P.frequencies == {PathType.parse("Script -Imports-> Function"): 4}


def test_mining_quantile_boundaries():
    g = build_rsg(FIXTURE)
    samples = _fixture_samples(g, [("shop", "shop.util.slugify"), ("shop.util", "shop.util.slugify"),
                                   ("shop.models.product", "shop.models.base.Entity.label")])
    full = mine_path_patterns(samples, K=1, q=1.0)
    observed = {exhausted_expand(s.graph, select_anchors(s.graph, s.table, s.query_vec, 1), 4, 1000).records[s.gold].path
                for s in samples}
    assert observed <= set(full.frequencies)
    assert full.is_prefix_closed()
    minimal = mine_path_patterns(samples, K=1, q=0.0)
    longest = max(minimal.frequencies, key=len)
    assert set(minimal.frequencies) == set(longest.prefixes())


def test_mining_no_gold_reached():
    g = build_rsg(FIXTURE)
    samples = _fixture_samples(g, [("shop.util", "shop.reports.weekly.run_week")])
    with pytest.raises(ExpansionError):
        mine_path_patterns(samples, D=1, K=1)


def test_hits_coverage_examples():
    sub = ExpandedSubgraph([(0, 1.0)], list(range(40)), {i: PathRecord(0, PathType(NodeKind.FUNCTION, ()), None) for i in range(40)})
    assert measure_hits_coverage([(sub, 0)], [100]) == (1.0, pytest.approx(0.40))
    assert measure_hits_coverage([(sub, 50)], [100])[0] == 0.0
    with pytest.raises(ExpansionError):
        measure_hits_coverage([], [])


def test_knn_strategy_is_anchors_only():
    g = random_graph(np.random.default_rng(5))
    sub = expand(g, [(1, 0.9), (2, 0.8)], ExpansionConfig(strategy="knn"))
    assert sub.nodes == [1, 2]


def _random_anchors(rng, n):
    k = int(rng.integers(1, min(4, n) + 1))
    return [int(a) for a in rng.choice(n, k, replace=False)]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4), st.integers(1, 30))
def test_bounds_and_determinism(seed, D, M):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    anchors = _random_anchors(rng, len(g))
    sub = exhausted_expand(g, anchors, D, M)
    assert set(anchors) <= sub.node_set
    assert all(len(r.path) <= D for r in sub.records.values())
    assert all(c <= M for c in sub.reached_per_anchor.values())
    again = exhausted_expand(g, anchors, D, M)
    assert again.nodes == sub.nodes and again.records == sub.records


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 3))
def test_exhausted_matches_bfs_oracle_and_monotone(seed, D):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    anchors = _random_anchors(rng, len(g))
    expected = set()
    for a in anchors:
        expected |= {v for v, d in bfs_depths(g, a).items() if d <= D}
    sub = exhausted_expand(g, anchors, D, BIG)
    assert sub.node_set == expected
    for v, rec in sub.records.items():
        assert len(rec.path) == min(bfs_depths(g, a).get(v, BIG) for a in anchors)
    assert sub.node_set <= exhausted_expand(g, anchors, D + 1, BIG).node_set


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_pattern_subset_and_vacuous_filter(seed, D):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    anchors = _random_anchors(rng, len(g))
    exh = exhausted_expand(g, anchors, D, BIG)
    vac = pattern_expand(g, anchors, D, BIG, PathTypeSet.all_paths(D))
    assert vac.nodes == exh.nodes and vac.records == exh.records
    seen = sorted({r.path for r in exh.records.values() if len(r.path)}, key=PathType.render)
    keep = [p for p in seen if rng.random() < 0.5] or seen[:1]
    if keep:
        P = PathTypeSet({pre: 1 for p in keep for pre in p.prefixes()})
        assert pattern_expand(g, anchors, D, BIG, P).node_set <= exh.node_set
