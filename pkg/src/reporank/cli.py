"""Batch command-line interface.

Record files are JSON lines with keys ``graph`` (path, relative to the record
file), ``query``, ``query_file`` and one or more of ``gold_node_id``,
``gold_snippet``, ``gold_next_line``. Optional: ``id``, ``embeddings``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from . import expansion, linkpred, pipeline
from .embedding import BaselineEncoder, EmbeddingTable, encode, import_external
from .expansion import ExpansionConfig, MiningSample, PathTypeSet
from .graph import Rsg
from .linkpred import GnnModel, QueryNode, TrainingSample
from .parsing import BuildOptions, build_rsg, write_diagnostics

log = logging.getLogger("reporank")


# -- record handling -------------------------------------------------------------------


class Workspace:
    """Caches graphs and embedding tables referenced by record files."""

    def __init__(self, graph_path=None, emb_path=None):
        self.graphs: dict[Path, Rsg] = {}
        self.tables: dict[Path, EmbeddingTable] = {}
        self.default_graph = Path(graph_path).resolve() if graph_path else None
        self.default_table = load_table(emb_path) if emb_path else None

    def graph(self, path: Path) -> Rsg:
        path = path.resolve()
        if path not in self.graphs:
            self.graphs[path] = Rsg.load(path)
        return self.graphs[path]

    def table(self, graph_path: Path, record: dict, base: Path) -> EmbeddingTable:
        graph_path = graph_path.resolve()
        if record.get("embeddings"):
            emb = (base / record["embeddings"]).resolve()
            if emb not in self.tables:
                self.tables[emb] = import_external(emb, len(self.graph(graph_path)))
            return self.tables[emb]
        if self.default_table is not None and graph_path == self.default_graph:
            return self.default_table
        if graph_path not in self.tables:
            provenance = self.default_table.provenance if self.default_table else BaselineEncoder().identifier
            enc = pipeline.encoder_for(provenance)
            self.tables[graph_path] = EmbeddingTable.from_graph(self.graph(graph_path), enc)
        return self.tables[graph_path]


def read_records(path) -> list[dict]:
    path = Path(path)
    out = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        rec = json.loads(line)
        if "query" not in rec:
            raise pipeline.PipelineError(f"{path}:{i + 1}: record has no query")
        rec.setdefault("id", str(len(out)))
        out.append(rec)
    return out


def record_graph_path(rec: dict, base: Path, ws: Workspace) -> Path:
    if rec.get("graph"):
        return base / rec["graph"]
    if ws.default_graph is None:
        raise pipeline.PipelineError(f"record {rec['id']} names no graph and --graph was not given")
    return ws.default_graph


def record_gold(rec: dict, graph: Rsg) -> Optional[int]:
    if rec.get("gold_node_id") is not None:
        return int(rec["gold_node_id"])
    if rec.get("gold_snippet"):
        return pipeline.align_gold(graph, rec["gold_snippet"])
    return None


def load_table(path) -> EmbeddingTable:
    return import_external(path)


def load_patterns(path) -> Optional[PathTypeSet]:
    return PathTypeSet.load(path) if path else None


def expansion_config(args, patterns: Optional[PathTypeSet]) -> ExpansionConfig:
    return ExpansionConfig(K=args.K, D=args.D, M=args.M, strategy=args.strategy, pattern_set=patterns,
                           budget_scope=args.budget_scope)


# -- commands ----------------------------------------------------------------------------


def cmd_index(args) -> int:
    opts = BuildOptions(include=tuple(args.include or ("*.py",)), exclude=tuple(args.exclude or ()))
    graph = build_rsg(args.repo, opts)
    graph.save(args.output)
    diag_path = Path(str(args.output) + ".diagnostics.jsonl")
    write_diagnostics(graph.diagnostics, diag_path)
    pipeline.record_artifact(args.output, "graph", nodes=len(graph.nodes), edges=len(graph.edges))
    log.info("indexed %d nodes, %d edges, %d diagnostics", len(graph.nodes), len(graph.edges), len(graph.diagnostics))
    return 0


def cmd_embed(args) -> int:
    graph = Rsg.load(args.graph)
    if args.encoder == "baseline":
        table = EmbeddingTable.from_graph(graph, BaselineEncoder(args.dim))
    elif args.encoder.startswith("file:"):
        table = import_external(args.encoder[5:], len(graph.nodes))
    else:
        raise pipeline.PipelineError(f"unknown encoder {args.encoder!r}; use baseline or file:<path>")
    table.save(args.output)
    pipeline.record_artifact(args.output, "embeddings", depends_on=[args.graph], provenance=table.provenance)
    return 0


def _query_vec(rec: dict, table: EmbeddingTable):
    return encode(pipeline.encoder_for(table.provenance), rec["query"])


def cmd_mine_patterns(args) -> int:
    base = Path(args.records).parent
    ws = Workspace(args.graph, args.emb)
    samples = []
    for rec in read_records(args.records):
        gpath = record_graph_path(rec, base, ws)
        graph = ws.graph(gpath)
        gold = record_gold(rec, graph)
        if gold is None:
            log.warning("record %s has no alignable gold; skipped", rec["id"])
            continue
        table = ws.table(gpath, rec, base)
        samples.append(MiningSample(graph, table, _query_vec(rec, table), gold))
    patterns = expansion.mine_path_patterns(samples, D=args.D, M=args.M, K=args.K, q=args.q)
    patterns.save(args.output)
    pipeline.record_artifact(args.output, "patterns", depends_on=[args.records], samples=len(samples))
    return 0


def _candidates(graph, table, rec, z_q, cfg: ExpansionConfig, universe: str) -> list[int]:
    anchors = expansion.select_anchors(graph, table, z_q, min(cfg.K, len(graph)))
    sub = expansion.expand(graph, anchors, cfg)
    cands, _ = pipeline.candidate_set(graph, sub, rec.get("query_file"), universe)
    return cands


def cmd_train(args) -> int:
    base = Path(args.records).parent
    ws = Workspace(args.graph, args.emb)
    patterns = load_patterns(args.patterns)
    cfg = expansion_config(args, patterns)
    dataset = []
    for rec in read_records(args.records):
        gpath = record_graph_path(rec, base, ws)
        graph = ws.graph(gpath)
        gold = record_gold(rec, graph)
        if gold is None:
            log.warning("record %s has no alignable gold; skipped", rec["id"])
            continue
        table = ws.table(gpath, rec, base)
        z_q = _query_vec(rec, table)
        qnode = QueryNode(rec["query"], z_q, linkpred.infer_known_edges(graph, rec["query"], rec.get("query_file")),
                          rec.get("query_file"))
        dataset.append(TrainingSample(graph, table, qnode, gold, _candidates(graph, table, rec, z_q, cfg, args.universe)))
    if not dataset:
        raise pipeline.PipelineError("no usable training records")
    provenance = dataset[0].table.provenance
    if any(s.table.provenance != provenance for s in dataset):
        raise pipeline.ProvenanceError("training records mix embedding provenances")
    hidden = [args.hidden] * args.layers if args.hidden else None
    model = GnnModel.init(dataset[0].table.dimension, args.layers, hidden, seed=args.seed)
    model, trace = linkpred.train(model, dataset, epochs=args.epochs, lr=args.lr, seed=args.seed)
    model.metadata["provenance"] = provenance
    model.save(args.output)
    pipeline.record_artifact(args.output, "model", depends_on=[p for p in (args.emb, args.records) if p],
                             provenance=provenance, loss_trace=[round(v, 9) for v in trace])
    for epoch, value in enumerate(trace, 1):
        log.info("epoch %d loss %.6g", epoch, value)
    return 0


def _request(args, rec: dict, patterns) -> pipeline.RetrievalRequest:
    return pipeline.RetrievalRequest(
        query=rec["query"], query_file=rec.get("query_file"), config=expansion_config(args, patterns),
        n2=args.n2, token_budget=args.budget, ordering=args.order.upper(), universe=args.universe)


def _write(text: str, output) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_retrieve(args) -> int:
    pipeline.check_manifest(args.graph, args.emb, args.model, args.patterns)
    graph = Rsg.load(args.graph)
    table = import_external(args.emb, len(graph.nodes))
    model = GnnModel.load(args.model) if args.model else None
    patterns = load_patterns(args.patterns)
    query = Path(args.query).read_text(encoding="utf-8")
    rec = {"query": query, "query_file": args.query_path}
    ranked = pipeline.retrieve(graph, table, model, _request(args, rec, patterns))
    nodes = [graph.nodes[e.node_id] for e in ranked]
    prompt = pipeline.assemble_prompt(query, nodes, args.order.upper(), args.budget)
    out = {
        "ranked": [{"node_id": e.node_id, "qualified_name": graph.nodes[e.node_id].qualified_name,
                    "file_path": graph.nodes[e.node_id].file_path, "score": round(e.score, 9)} for e in ranked],
        "universe": ranked.universe,
        "token_estimate": prompt.token_estimate,
        "prompt": prompt.text,
    }
    _write(json.dumps(out, indent=1, sort_keys=True) + "\n", args.output)
    return 0


def make_client(args):
    if args.client == "http":
        return pipeline.HttpCompletionClient()
    mapping = json.loads(Path(args.stub).read_text(encoding="utf-8")) if args.stub else {}
    return pipeline.StubClient(mapping)


def cmd_eval(args) -> int:
    pipeline.check_manifest(args.graph, args.emb, args.model, args.patterns)
    base = Path(args.records).parent
    ws = Workspace(args.graph, args.emb)
    model = GnnModel.load(args.model) if args.model else None
    patterns = load_patterns(args.patterns)
    records = read_records(args.records)
    # load shared artifacts up front so worker threads only read
    resolved = []
    for rec in records:
        gpath = record_graph_path(rec, base, ws)
        graph = ws.graph(gpath)
        resolved.append((rec, graph, ws.table(gpath, rec, base)))

    def run_one(item):
        rec, graph, table = item
        ranked = pipeline.retrieve(graph, table, model, _request(args, rec, patterns))
        return rec, graph, ranked

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        results = list(pool.map(run_one, resolved))

    evals = [pipeline.EvalRecord(rec["id"], record_gold(rec, graph), rec.get("gold_next_line"), ranked.node_ids)
             for rec, graph, ranked in results]
    table_out: dict = {"task": args.task, "n": len(evals)}
    if args.task == "retrieval":
        for k in (1, 3, 5):
            table_out[f"acc@{k}"] = round(pipeline.metric_acc_at_k(evals, k), 6)
    else:
        client = make_client(args)
        prompts = [pipeline.assemble_prompt(rec["query"], [graph.nodes[i] for i in ranked.node_ids],
                                            args.order.upper(), args.budget)
                   for rec, graph, ranked in results]
        preds = pipeline.complete_many(prompts, client, [e.request_id for e in evals], args.max_in_flight)
        for e, p in zip(evals, preds):
            e.prediction = p
        table_out["em"] = round(pipeline.metric_exact_match(evals), 6)
    if args.predictions:
        with open(args.predictions, "w", encoding="utf-8") as fh:
            for e in evals:
                fh.write(json.dumps({"id": e.request_id, "gold_node_id": e.gold_node_id, "ranked": e.ranked,
                                     "prediction": e.prediction}, sort_keys=True) + "\n")
    _write(json.dumps(table_out, indent=1, sort_keys=True) + "\n", args.output)
    return 0


def cmd_sensitivity(args) -> int:
    grid_path = Path(args.grid)
    grid = json.loads(grid_path.read_text(encoding="utf-8"))
    base = grid_path.parent
    records_path = base / grid["records"]
    patterns = load_patterns(base / grid["patterns"]) if grid.get("patterns") else None
    ws = Workspace(None, base / grid["embeddings"] if grid.get("embeddings") else None)
    queries = []
    for rec in read_records(records_path):
        gpath = record_graph_path(rec, records_path.parent, ws)
        graph = ws.graph(gpath)
        gold = record_gold(rec, graph)
        if gold is None:
            continue
        table = ws.table(gpath, rec, records_path.parent)
        queries.append(pipeline.SensitivityQuery(graph, table, _query_vec(rec, table), gold))
    points = [pipeline.GridPoint(**p) for p in grid["points"]]
    rows = pipeline.run_sensitivity(queries, points, patterns)
    _write(pipeline.format_table(rows), args.output)
    return 0


# -- parser ----------------------------------------------------------------------------------


def _add_expansion_flags(p, strategy="pattern"):
    p.add_argument("-K", type=int, default=expansion.DEFAULT_K, help="number of kNN anchors")
    p.add_argument("-D", type=int, default=expansion.DEFAULT_DEPTH, help="maximum BFS depth")
    p.add_argument("-M", type=int, default=expansion.DEFAULT_MAX_NODES, help="node budget per anchor")
    p.add_argument("--strategy", choices=["pattern", "exhausted", "knn"], default=strategy)
    p.add_argument("--patterns", help="mined path-type file (pattern strategy)")
    p.add_argument("--budget-scope", choices=["per-anchor", "global"], default="per-anchor")
    p.add_argument("--universe", choices=["imported", "all"], default="imported",
                   help="restrict candidates to nodes imported by the query file")


def _add_retrieval_flags(p):
    p.add_argument("--graph")
    p.add_argument("--emb")
    p.add_argument("--model")
    p.add_argument("--order", choices=["l2h", "h2l", "L2H", "H2L"], default="l2h")
    p.add_argument("--budget", type=int, help="prompt token budget")
    p.add_argument("--n2", type=int, help="fixed number of contexts to keep")
    p.add_argument("-o", "--output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reporank", description="Graph-based repository context retrieval.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build a semantic graph from a source tree")
    p.add_argument("repo")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--include", action="append")
    p.add_argument("--exclude", action="append")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("embed", help="compute or import node embeddings")
    p.add_argument("graph")
    p.add_argument("--encoder", default="baseline", help="baseline or file:<path>")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("mine-patterns", help="mine frequent anchor-to-gold path types")
    p.add_argument("records")
    p.add_argument("-K", type=int, default=expansion.DEFAULT_K)
    p.add_argument("-D", type=int, default=expansion.DEFAULT_DEPTH)
    p.add_argument("-M", type=int, default=expansion.DEFAULT_MAX_NODES)
    p.add_argument("-q", type=float, default=expansion.DEFAULT_COVERAGE_QUANTILE)
    p.add_argument("--graph")
    p.add_argument("--emb")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_mine_patterns)

    p = sub.add_parser("train", help="train the link predictor")
    p.add_argument("records")
    p.add_argument("--graph")
    p.add_argument("--emb")
    _add_expansion_flags(p, strategy="exhausted")
    p.add_argument("--layers", type=int, default=linkpred.DEFAULT_LAYERS)
    p.add_argument("--hidden", type=int, help="hidden width (default: embedding dimension)")
    p.add_argument("--lr", type=float, default=linkpred.DEFAULT_LR)
    p.add_argument("--epochs", type=int, default=linkpred.DEFAULT_EPOCHS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("retrieve", help="rank contexts for one query and assemble a prompt")
    p.add_argument("query", help="file holding the query snippet")
    p.add_argument("--query-path", help="repository path of the file the query belongs to")
    _add_expansion_flags(p)
    _add_retrieval_flags(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="retrieval or completion metrics over a record file")
    p.add_argument("records")
    p.add_argument("--task", choices=["retrieval", "completion"], required=True)
    _add_expansion_flags(p)
    _add_retrieval_flags(p)
    p.add_argument("--client", choices=["stub", "http"], default="stub")
    p.add_argument("--stub", help="JSON object mapping query text to canned completions")
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--predictions", help="write per-record outputs as JSON lines")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sensitivity", help="hits/coverage over an expansion grid")
    p.add_argument("--grid", required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sensitivity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "strategy", None) == "pattern" and not getattr(args, "patterns", None):
        print("reporank: error: --strategy pattern needs --patterns", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"reporank: error: {exc}", file=sys.stderr)
        return 1
