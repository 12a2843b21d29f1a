"""Acceptance criteria 1-9, each checked at its stated tolerance and runtime limit."""

import inspect
import random

import numpy as np
import pytest

from reporank import cli, expansion, linkpred, pipeline
from reporank.embedding import BaselineEncoder, EmbeddingTable, encode, knn_search
from reporank.expansion import ExpansionConfig, MiningSample, PathTypeSet, exhausted_expand, pattern_expand
from reporank.graph import validate
from reporank.linkpred import GnnModel, QueryNode, TrainingSample
from reporank.parsing import build_rsg
from reporank.pipeline import EvalRecord, RetrievalRequest
from reporank.synthetic import linked_gold_corpus, planted_path_corpus
from tests.acceptance_log import criterion
from tests.e2e import full_pipeline
from tests.oracles import brute_knn, dense_forward, fd_gradient_errors, random_graph
from tests.test_parsing import FIXTURE, FIXTURE_EDGES, FIXTURE_NODES, inventory

BIG = 10**9


def test_criterion_1_graph_construction_fidelity():
    with criterion(1, "fixture repo builds to the hand-traced inventory", 2.0) as info:
        graph = build_rsg(FIXTURE)
        nodes, edges = inventory(graph)
        assert nodes == FIXTURE_NODES
        assert edges == FIXTURE_EDGES and len(graph.edges) == len(FIXTURE_EDGES)
        assert validate(graph) == []
        assert build_rsg(FIXTURE).dumps() == graph.dumps()
        relations = {e.relation.value for e in graph.edges}
        assert relations == {"Imports", "Invokes", "Owns", "Encloses", "Inherits"}
        info["detail"] = f"{len(nodes)} nodes, {len(edges)} edges, 0 violations"


def test_criterion_2_knn_oracle_equivalence():
    with criterion(2, "exact kNN equals brute-force cosine ranking", 10.0) as info:
        compared = 0
        for trial in range(100):
            rng = np.random.default_rng(trial)
            n, d = int(rng.integers(10, 501)), int(rng.integers(2, 65))
            raw = rng.normal(size=(n, d))
            dup = rng.choice(n, size=n // 10, replace=False)
            raw[dup] = raw[0]  # exact ties exercise the id rule
            table = EmbeddingTable(raw, "trial")
            query = raw[0] if trial % 5 == 0 else rng.normal(size=d)
            for k in (1, 3, 5, 10):
                got = [i for i, _ in knn_search(table, query, k)]
                assert got == brute_knn(raw, query, k), f"trial {trial} K={k}"
                compared += 1
        info["detail"] = f"{compared} rankings identical"


def test_criterion_3_expansion_bounds_and_equivalences():
    with criterion(3, "depth/budget bounds, subset, vacuous filter, D-monotonicity", 30.0) as info:
        vacuous = {D: PathTypeSet.all_paths(D) for D in range(1, 4)}
        for seed in range(50):
            rng = np.random.default_rng(1000 + seed)
            g = random_graph(rng, n_files=int(rng.integers(2, 6)))
            anchors = [int(a) for a in rng.choice(len(g), int(rng.integers(1, 4)), replace=False)]
            D, M = int(rng.integers(1, 4)), int(rng.integers(1, 12))
            sub = exhausted_expand(g, anchors, D, M)
            assert set(anchors) <= sub.node_set
            assert all(len(r.path) <= D for r in sub.records.values())
            assert all(count <= M for count in sub.reached_per_anchor.values())
            full = exhausted_expand(g, anchors, D, BIG)
            vac = pattern_expand(g, anchors, D, BIG, vacuous[D])
            assert vac.nodes == full.nodes and vac.records == full.records
            seen = sorted({r.path for r in full.records.values() if len(r.path)}, key=lambda p: p.render())
            if seen:
                keep = [p for p in seen if rng.random() < 0.5] or seen[:1]
                P = PathTypeSet({pre: 1 for p in keep for pre in p.prefixes()})
                pat = pattern_expand(g, anchors, D, BIG, P)
                assert pat.node_set <= full.node_set
                assert all(count <= M for count in pattern_expand(g, anchors, D, M, P).reached_per_anchor.values())
            assert full.node_set <= exhausted_expand(g, anchors, D + 1, BIG).node_set
        info["detail"] = "50 random graphs"


def _planted_inputs(corpus, queries, enc, tables):
    out = []
    for q in queries:
        g = corpus.repos[q.repo].build()
        if q.repo not in tables:
            tables[q.repo] = EmbeddingTable.from_graph(g, enc)
        out.append((g, tables[q.repo], encode(enc, q.text), corpus.gold_id(q)))
    return out


def test_criterion_4_pattern_vs_exhausted_tradeoff():
    with criterion(4, "pattern search keeps hits within 5 pts at >=20% lower coverage", 60.0) as info:
        corpus = planted_path_corpus(n_repos=40, queries_per_repo=10, seed=0)
        train_q, test_q = corpus.split(20)
        assert len(test_q) == 200
        enc, tables = BaselineEncoder(64), {}
        samples = [MiningSample(*x) for x in _planted_inputs(corpus, train_q, enc, tables)]
        P = expansion.mine_path_patterns(samples, D=4, M=1000, K=3, q=0.9)
        results = {}
        for strategy in ("exhausted", "pattern"):
            cfg = ExpansionConfig(K=3, D=4, M=1000, strategy=strategy, pattern_set=P)
            runs, sizes = [], []
            for g, table, vec, gold in _planted_inputs(corpus, test_q, enc, tables):
                runs.append((expansion.expand(g, expansion.select_anchors(g, table, vec, 3), cfg), gold))
                sizes.append(len(g))
            results[strategy] = expansion.measure_hits_coverage(runs, sizes)
        (eh, ec), (ph, pc) = results["exhausted"], results["pattern"]
        info["detail"] = f"exhausted hits {eh:.3f} cov {ec:.3f}; pattern hits {ph:.3f} cov {pc:.3f}; |P|={len(P)}"
        assert ph >= eh - 0.05
        assert pc <= 0.8 * ec


def test_criterion_5_gnn_numerical_correctness():
    with criterion(5, "forward matches dense oracle (1e-9); gradients match FD (1e-4)", 30.0) as info:
        worst_fwd = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            g = random_graph(rng, n_files=2, max_entities=4)
            while len(g) > 19:
                g = random_graph(rng, n_files=2, max_entities=3)
            n, d = len(g), int(rng.integers(2, 9))
            known = [(linkpred.RelationKind.INVOKES, int(t)) for t in rng.choice(n, min(2, n), replace=False)]
            z0 = rng.normal(size=(n + 1, d))
            layers = int(rng.integers(1, 4))
            model = GnnModel.init(d, layers, hidden=[int(h) for h in rng.integers(2, 9, size=layers)], seed=seed)
            g1 = linkpred.attach_query(g, QueryNode("q", z0[-1], known))
            pairs = [(e.src, e.dst) for e in g.edges] + [(n, t) for _, t in known]
            expected = dense_forward(pairs, n + 1, z0, model.w_self, model.w_nbr)
            worst_fwd = max(worst_fwd, float(np.max(np.abs(linkpred.forward(model, g1, z0) - expected))))
        assert worst_fwd <= 1e-9
        worst_grad, checked = 0.0, 0
        for draw in range(20):
            rng = np.random.default_rng(500 + draw)
            g = random_graph(rng, n_files=1, max_entities=3)
            n, d = len(g), 4
            z0 = rng.normal(size=(n + 1, d))
            g1 = linkpred.attach_query(g, QueryNode("q", z0[-1], [(linkpred.RelationKind.INVOKES, n - 1)]))
            adj = g1.mean_adjacency()
            model = GnnModel.init(d, 3, hidden=[3, 3, 2], seed=draw)
            for p in model.parameters():
                p += rng.normal(scale=0.3, size=p.shape)
            cands = list(range(n))
            labels = np.zeros(n)
            labels[int(rng.integers(n))] = 1.0
            _, grads = linkpred.loss_and_grads(model, adj, z0, cands, n, labels)
            errs = fd_gradient_errors(lambda: linkpred.loss_and_grads(model, adj, z0, cands, n, labels)[0],
                                      model.parameters(), grads)
            worst_grad = max(worst_grad, max(errs))
            checked += len(errs)
        assert worst_grad <= 1e-4
        info["detail"] = f"forward max abs err {worst_fwd:.1e}; {checked} partials over 20 draws, max rel err {worst_grad:.1e}"


def test_criterion_6_link_predictor_beats_cosine():
    with criterion(6, "trained predictor acc@1 >= 0.90, cosine <= 0.60 on 100 held-out queries", 120.0) as info:
        corpus = linked_gold_corpus(n_repos=60, seed=0)
        train_q, test_q = corpus.split(40)
        assert len(test_q) == 100
        enc, tables = BaselineEncoder(64), {}

        def table_for(q):
            g = corpus.repos[q.repo].build()
            if q.repo not in tables:
                tables[q.repo] = EmbeddingTable.from_graph(g, enc)
            return g, tables[q.repo]

        def request(q):
            return RetrievalRequest(q.text, q.file_path, ExpansionConfig(K=3, D=4, M=1000, strategy="exhausted"))

        dataset = []
        for q in train_q:
            g, table = table_for(q)
            trace = pipeline.retrieve_trace(g, table, None, request(q))
            dataset.append(TrainingSample(g, table, trace.query, corpus.gold_id(q), trace.candidates))
        model, losses = linkpred.train(GnnModel.init(64, 3, seed=0), dataset, epochs=10, lr=0.01, seed=0)
        model.metadata["provenance"] = enc.identifier
        gnn_hits = cos_hits = 0
        for q in test_q:
            g, table = table_for(q)
            gold = corpus.gold_id(q)
            gnn_hits += pipeline.retrieve(g, table, model, request(q)).node_ids[0] == gold
            cos_hits += pipeline.retrieve(g, table, None, request(q)).node_ids[0] == gold
        gnn_acc, cos_acc = gnn_hits / len(test_q), cos_hits / len(test_q)
        info["detail"] = f"predictor acc@1 {gnn_acc:.2f}, cosine acc@1 {cos_acc:.2f}, final train loss {losses[-1]:.2e}"
        assert gnn_acc >= 0.90
        assert cos_acc <= 0.60


def test_criterion_7_end_to_end_determinism(tmp_path):
    with criterion(7, "two full CLI pipeline runs give byte-identical metric tables", 180.0) as info:
        first = full_pipeline(tmp_path / "run1", seed=0)
        second = full_pipeline(tmp_path / "run2", seed=0)
        assert first == second
        info["detail"] = ", ".join(f"{name} {len(data)}B" for name, data in sorted(first.items()))


# (prediction, gold, expected match)
EM_TABLE = [
    ("x = 1", "x = 1", True),
    ("  x = 1", "x = 1", True),
    ("x = 1   ", "x = 1", True),
    ("x  =  1", "x = 1", True),
    ("x\t=\t1", "x = 1", True),
    ("x=1", "x = 1", False),
    ("", "x = 1", False),
    ("return f( a )", "return f(a)", False),
    ("\treturn   foo(bar)\n", "return foo(bar)", True),
    ("X = 1", "x = 1", False),
]


def test_criterion_8_metric_correctness():
    with criterion(8, "acc@k monotone in k; EM table scores as specified", 1.0) as info:
        for pred, gold, match in EM_TABLE:
            expected = 100.0 if match else 0.0
            assert pipeline.metric_exact_match([EvalRecord("r", gold_next_line=gold, prediction=pred)]) == expected
        table = [EvalRecord(str(i), gold_next_line=g, prediction=p) for i, (p, g, _) in enumerate(EM_TABLE)]
        assert pipeline.metric_exact_match(table) == 60.0
        rng = random.Random(0)
        for _ in range(200):
            recs = []
            for i in range(rng.randint(1, 30)):
                ranked = rng.sample(range(50), rng.randint(0, 20))
                recs.append(EvalRecord(str(i), gold_node_id=rng.randrange(50), ranked=ranked))
            values = [pipeline.metric_acc_at_k(recs, k) for k in range(1, 25)]
            assert all(a <= b for a, b in zip(values, values[1:]))
        info["detail"] = "10 EM pairs, 200 random record sets"


def test_criterion_9_hyperparameter_defaults():
    with criterion(9, "defaults D=4, M=1000, K=3, L=3, Adam lr=0.01, 10 epochs", 1.0):
        d = pipeline.defaults()
        assert (d["D"], d["M"], d["K"]) == (4, 1000, 3)
        assert (d["layers"], d["lr"], d["epochs"], d["optimizer"]) == (3, 0.01, 10, "adam")
        cfg = ExpansionConfig()
        assert (cfg.D, cfg.M, cfg.K) == (4, 1000, 3)
        assert GnnModel.init(8, seed=0).n_layers == 3
        params = inspect.signature(linkpred.train).parameters
        assert params["lr"].default == 0.01 and params["epochs"].default == 10
        parser = cli.build_parser()
        train_args = parser.parse_args(["train", "t.jsonl", "-o", "m.gnn"])
        assert (train_args.layers, train_args.lr, train_args.epochs) == (3, 0.01, 10)
        assert (train_args.D, train_args.M, train_args.K) == (4, 1000, 3)
        retrieve_args = parser.parse_args(["retrieve", "q.txt"])
        assert (retrieve_args.D, retrieve_args.M, retrieve_args.K) == (4, 1000, 3)
