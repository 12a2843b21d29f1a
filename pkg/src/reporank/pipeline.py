"""End-to-end retrieval, prompt assembly, completion and evaluation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

import numpy as np

from . import expansion, linkpred
from .embedding import BaselineEncoder, EmbeddingTable, Encoder, encode, tokenize
from .expansion import ExpandedSubgraph, ExpansionConfig, expand, measure_hits_coverage, select_anchors
from .graph import Rsg, RsgNode
from .linkpred import GnnModel, QueryNode, RankedContexts

log = logging.getLogger(__name__)

IN_FILE_MAX_LINES = 30
JACCARD_THRESHOLD = 0.5


def defaults() -> dict:
    """Hyperparameter defaults used when nothing is overridden."""
    return {
        "D": expansion.DEFAULT_DEPTH,
        "M": expansion.DEFAULT_MAX_NODES,
        "K": expansion.DEFAULT_K,
        "strategy": "pattern",
        "coverage_quantile": expansion.DEFAULT_COVERAGE_QUANTILE,
        "layers": linkpred.DEFAULT_LAYERS,
        "lr": linkpred.DEFAULT_LR,
        "epochs": linkpred.DEFAULT_EPOCHS,
        "optimizer": "adam",
    }


class PipelineError(RuntimeError):
    pass


class ProvenanceError(PipelineError):
    pass


class CompletionError(PipelineError):
    def __init__(self, request_id: str, message: str):
        super().__init__(f"[{request_id}] {message}")
        self.request_id = request_id


def encoder_for(provenance: str) -> Encoder:
    """Rebuild the query encoder from a table's provenance string."""
    if provenance.startswith("baseline-hash-v1:d="):
        return BaselineEncoder(int(provenance.split("d=")[1].split(":")[0]))
    raise ProvenanceError(f"no query encoder available for provenance {provenance!r}; pass query vectors explicitly")


# -- retrieval -------------------------------------------------------------------------


@dataclass
class RetrievalRequest:
    query: str
    query_file: Optional[str] = None
    config: ExpansionConfig = field(default_factory=lambda: ExpansionConfig(strategy="exhausted"))
    n2: Optional[int] = None  # fixed number of contexts; None means budget-driven
    token_budget: Optional[int] = None
    ordering: str = "L2H"
    universe: str = "imported"  # imported | all
    query_vec: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.ordering not in ("L2H", "H2L"):
            raise PipelineError(f"ordering must be L2H or H2L, got {self.ordering!r}")
        if self.token_budget is not None and self.token_budget <= 0:
            raise PipelineError("token budget must be positive")
        if self.universe not in ("imported", "all"):
            raise PipelineError(f"unknown candidate universe {self.universe!r}")


@dataclass
class RetrievalTrace:
    ranked: RankedContexts  # full ranking before the N2 cut
    subgraph: ExpandedSubgraph
    candidates: list[int]
    query: QueryNode


def check_provenance(table: EmbeddingTable, model: Optional[GnnModel]) -> None:
    if model is None:
        return
    trained_on = model.metadata.get("provenance")
    if trained_on is not None and trained_on != table.provenance:
        raise ProvenanceError(f"model was trained on {trained_on!r} embeddings, table is {table.provenance!r}")
    if model.dims[0] != table.dimension:
        raise ProvenanceError(f"model input dimension {model.dims[0]} != table dimension {table.dimension}")


def candidate_set(graph: Rsg, sub: ExpandedSubgraph, query_file: Optional[str], universe: str) -> tuple[list[int], str]:
    members = sub.node_set
    if universe == "imported":
        narrowed = linkpred.imported_universe(graph, query_file) & members
        if narrowed:
            return sorted(narrowed), "A_exp&imported"
        log.info("no imported nodes inside the expanded subgraph; falling back to all of A_exp")
    return sorted(members), "A_exp"


def retrieve_trace(graph: Rsg, table: EmbeddingTable, model: Optional[GnnModel], request: RetrievalRequest) -> RetrievalTrace:
    check_provenance(table, model)
    if request.query_vec is not None:
        z_q = np.asarray(request.query_vec, dtype=np.float64)
    else:
        z_q = encode(encoder_for(table.provenance), request.query)
    cfg = request.config
    anchors = select_anchors(graph, table, z_q, min(cfg.K, len(graph)))
    sub = expand(graph, anchors, cfg)
    candidates, universe = candidate_set(graph, sub, request.query_file, request.universe)
    qnode = QueryNode(request.query, z_q, linkpred.infer_known_edges(graph, request.query, request.query_file),
                      request.query_file)
    if model is None:
        ranked = linkpred.cosine_rerank(z_q, candidates, table)
    else:
        g1 = linkpred.attach_query(graph, qnode)
        z = linkpred.forward(model, g1, table)
        ranked = linkpred.score(model, z, candidates, g1.query_id, universe)
    return RetrievalTrace(ranked, sub, candidates, qnode)


def retrieve(graph: Rsg, table: EmbeddingTable, model: Optional[GnnModel], request: RetrievalRequest) -> RankedContexts:
    """encode -> anchors -> expand -> rank (link predictor, or cosine without a model) -> top N2."""
    trace = retrieve_trace(graph, table, model, request)
    if request.n2 is None:
        return trace.ranked
    n2 = min(request.n2, len(trace.ranked))
    return RankedContexts(linkpred.select_top(trace.ranked, n2), trace.ranked.universe)


# -- prompt assembly ----------------------------------------------------------------------


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class ContextBlock:
    node_id: int
    file_path: str
    text: str
    rank: int

    @property
    def tokens(self) -> int:
        return estimate_tokens(self.text)


@dataclass
class AssembledPrompt:
    blocks: list[ContextBlock]
    query: str
    ordering: str = "L2H"

    @property
    def token_estimate(self) -> int:
        return sum(b.tokens for b in self.blocks) + estimate_tokens(self.query)

    @property
    def text(self) -> str:
        return "".join(b.text for b in self.blocks) + self.query


def render_block(node: RsgNode) -> str:
    return f"# {node.file_path}\n{node.source_text}\n\n"


def assemble_prompt(query: str, contexts: Sequence[RsgNode], ordering: str = "L2H",
                    token_budget: Optional[int] = None) -> AssembledPrompt:
    """Greedy inclusion in rank order, then H2L (best first) or L2H (best next to the query)."""
    if ordering not in ("L2H", "H2L"):
        raise PipelineError(f"ordering must be L2H or H2L, got {ordering!r}")
    used = estimate_tokens(query)
    if token_budget is not None and used > token_budget:
        raise PipelineError(f"token budget {token_budget} is smaller than the query alone ({used})")
    included = []
    for rank, node in enumerate(contexts, 1):
        block = ContextBlock(node.id, node.file_path, render_block(node), rank)
        if token_budget is not None and used + block.tokens > token_budget:
            break
        used += block.tokens
        included.append(block)
    if ordering == "L2H":
        included.reverse()
    return AssembledPrompt(included, query, ordering)


# -- completion ---------------------------------------------------------------------------


class CompletionClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class StubClient:
    """Offline client: answers from a query -> completion mapping, else a fixed fallback."""

    def __init__(self, mapping: Optional[dict[str, str]] = None,
                 fallback: Union[str, Callable[[str], str]] = "pass"):
        self.mapping = dict(mapping or {})
        self.fallback = fallback

    def complete(self, prompt: str) -> str:
        for key in sorted(self.mapping, key=len, reverse=True):
            if prompt.endswith(key):
                return self.mapping[key]
        return self.fallback(prompt) if callable(self.fallback) else self.fallback


class HttpCompletionClient:
    """POSTs ``{"prompt": ..., "max_tokens": ...}`` as JSON; endpoint and key come from the environment."""

    URL_ENV = "REPORANK_COMPLETION_URL"
    KEY_ENV = "REPORANK_COMPLETION_KEY"

    def __init__(self, max_tokens: int = 64, timeout: float = 60.0):
        self.url = os.environ.get(self.URL_ENV)
        self.key = os.environ.get(self.KEY_ENV)
        if not self.url:
            raise PipelineError(f"set {self.URL_ENV} to use the HTTP completion client")
        self.max_tokens = max_tokens
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        body = json.dumps({"prompt": prompt, "max_tokens": self.max_tokens}).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, method="POST", headers={"Content-Type": "application/json"})
        if self.key:
            req.add_header("Authorization", f"Bearer {self.key}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            raise RuntimeError(f"completion service returned HTTP {exc.code}") from exc
        except (urllib.error.URLError, OSError) as exc:
            raise RuntimeError(f"transport failure: {exc}") from exc
        if isinstance(payload, dict):
            if "completion" in payload:
                return payload["completion"]
            choices = payload.get("choices")
            if choices:
                return choices[0].get("text") or choices[0].get("message", {}).get("content", "")
        raise RuntimeError("unrecognized completion response")


def complete(prompt: AssembledPrompt, client: CompletionClient, request_id: str = "-") -> str:
    """First line of the raw completion with trailing whitespace removed."""
    try:
        raw = client.complete(prompt.text)
    except CompletionError:
        raise
    except Exception as exc:
        raise CompletionError(request_id, str(exc)) from exc
    if raw is None or not raw.strip():
        raise CompletionError(request_id, "empty completion")
    return raw.splitlines()[0].rstrip()


def complete_many(prompts: Sequence[AssembledPrompt], client: CompletionClient, request_ids: Sequence[str],
                  max_in_flight: int = 4) -> list[str]:
    """Bounded-concurrency completion; results are returned in input order."""
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        futures = [pool.submit(complete, p, client, rid) for p, rid in zip(prompts, request_ids)]
        return [f.result() for f in futures]


# -- metrics --------------------------------------------------------------------------------


@dataclass
class EvalRecord:
    request_id: str
    gold_node_id: Optional[int] = None
    gold_next_line: Optional[str] = None
    ranked: list[int] = field(default_factory=list)
    prediction: Optional[str] = None


def metric_acc_at_k(records: Sequence[EvalRecord], k: int) -> float:
    if k < 1:
        raise PipelineError(f"k must be >= 1, got {k}")
    scored = [r for r in records if r.gold_node_id is not None]
    if not scored:
        raise PipelineError("no records carry a gold node id")
    hits = sum(1 for r in scored if r.gold_node_id in r.ranked[:k])
    return 100.0 * hits / len(scored)


def normalize_line(text: str) -> str:
    return " ".join(text.split())


def metric_exact_match(records: Sequence[EvalRecord]) -> float:
    scored = [r for r in records if r.gold_next_line is not None]
    if not scored:
        raise PipelineError("no records carry a gold next line")
    hits = sum(1 for r in scored if normalize_line(r.prediction or "") == normalize_line(r.gold_next_line))
    return 100.0 * hits / len(scored)


# -- gold alignment / baselines -----------------------------------------------------------------


def jaccard(a: str, b: str) -> float:
    sa, sb = set(tokenize(a)), set(tokenize(b))
    if not sa and not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


def align_gold(graph: Rsg, snippet: str, threshold: float = JACCARD_THRESHOLD) -> Optional[int]:
    """Node whose source text has the highest token-set Jaccard with ``snippet`` (ties: lowest id)."""
    best, best_id = -1.0, None
    for node in graph.nodes:
        s = jaccard(snippet, node.source_text)
        if s > best:
            best, best_id = s, node.id
    return best_id if best >= threshold else None


def gold_only_prompt(query: str, gold: Optional[RsgNode]) -> AssembledPrompt:
    if gold is None:
        raise PipelineError("Gold-Only baseline needs a gold context")
    return AssembledPrompt([ContextBlock(gold.id, gold.file_path, render_block(gold), 1)], query, "H2L")


def in_file_only_prompt(source_text: str, line_no: int, max_lines: int = IN_FILE_MAX_LINES) -> AssembledPrompt:
    """At most ``max_lines`` lines immediately above 1-based ``line_no``; no cross-file content."""
    lines = source_text.splitlines()
    start = max(1, line_no - max_lines)
    window = lines[start - 1: line_no - 1]
    return AssembledPrompt([], "\n".join(window) + ("\n" if window else ""), "H2L")


@dataclass
class BaselineRecord:
    query: str
    gold: Optional[RsgNode] = None
    source_text: Optional[str] = None
    line_no: Optional[int] = None


def baselines(records: Sequence[BaselineRecord], mode: str) -> list[AssembledPrompt]:
    if mode == "GoldOnly":
        return [gold_only_prompt(r.query, r.gold) for r in records]
    if mode == "InFileOnly":
        out = []
        for r in records:
            if r.source_text is None or r.line_no is None:
                raise PipelineError("In-File-Only baseline needs the source file and prediction line")
            out.append(in_file_only_prompt(r.source_text, r.line_no))
        return out
    raise PipelineError(f"unknown baseline mode {mode!r}")


# -- sensitivity ----------------------------------------------------------------------------------


@dataclass
class SensitivityQuery:
    graph: Rsg
    table: EmbeddingTable
    query_vec: np.ndarray
    gold: int


@dataclass
class GridPoint:
    strategy: str
    D: int = expansion.DEFAULT_DEPTH
    M: int = expansion.DEFAULT_MAX_NODES
    K: Optional[int] = expansion.DEFAULT_K
    K_fraction: Optional[float] = None  # K = round(K_fraction * |V|), used by the kNN baseline


def run_sensitivity(queries: Sequence[SensitivityQuery], grid: Sequence[GridPoint],
                    patterns: Optional[expansion.PathTypeSet] = None) -> list[dict]:
    if not grid:
        raise PipelineError("sensitivity grid is empty")
    rows = []
    for point in grid:
        runs, sizes = [], []
        for q in queries:
            n = len(q.graph)
            k = max(1, min(n, round(point.K_fraction * n))) if point.K_fraction is not None else min(point.K, n)
            cfg = ExpansionConfig(K=k, D=point.D, M=point.M, strategy=point.strategy, pattern_set=patterns)
            anchors = select_anchors(q.graph, q.table, q.query_vec, k)
            runs.append((expand(q.graph, anchors, cfg), q.gold))
            sizes.append(n)
        hits, coverage = measure_hits_coverage(runs, sizes)
        k_label = f"{point.K_fraction}*|G|" if point.K_fraction is not None else str(point.K)
        rows.append({"strategy": point.strategy, "D": point.D, "M": point.M, "K": k_label,
                     "hits": round(hits, 6), "coverage": round(coverage, 6)})
    return rows


def format_table(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    out = ["\t".join(cols)]
    for r in rows:
        out.append("\t".join(f"{r[c]:.6f}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    return "\n".join(out) + "\n"


# -- manifest ---------------------------------------------------------------------------------------


MANIFEST_NAME = "manifest.json"


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def record_artifact(path, kind: str, depends_on: Sequence = (), **extra) -> dict:
    """Register ``path`` (and the hashes of its inputs) in the manifest next to it."""
    path = Path(path)
    manifest_path = path.parent / MANIFEST_NAME
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {"version": 1, "artifacts": {}}
    entry = {"kind": kind, "sha256": file_sha256(path),
             "depends_on": {Path(d).name: file_sha256(d) for d in depends_on}}
    entry.update(extra)
    manifest["artifacts"][path.name] = entry
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return entry


def check_manifest(*paths) -> None:
    """Refuse artifacts whose recorded inputs no longer match the files given alongside them."""
    given = {Path(p).name: Path(p) for p in paths if p is not None}
    for p in given.values():
        manifest_path = p.parent / MANIFEST_NAME
        if not manifest_path.exists():
            continue
        entry = json.loads(manifest_path.read_text())["artifacts"].get(p.name)
        if entry is None:
            continue
        if entry["sha256"] != file_sha256(p):
            raise ProvenanceError(f"{p} changed since it was recorded in {manifest_path}")
        for dep_name, dep_sha in entry.get("depends_on", {}).items():
            dep = given.get(dep_name)
            if dep is not None and file_sha256(dep) != dep_sha:
                raise ProvenanceError(f"{p.name} was built from a different {dep_name}")
