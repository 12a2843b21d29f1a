"""Node/query vectors and exact cosine kNN.

Every stored vector is unit-normalized, so cosine similarity is a plain dot
product. Tables carry the identifier of the encoder that produced them and
mixing provenances is treated as an error by the pipeline.
"""

from __future__ import annotations

import hashlib
import math
import re
from pathlib import Path
from typing import Iterable, Optional, Protocol

import numpy as np

WIRE_VERSION = 1
_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|[0-9]+")
_HEADER_RE = re.compile(r"^# reporank-embeddings version=(?P<version>\d+) d=(?P<d>\d+) provenance=(?P<provenance>.*)$")


class EmbeddingError(ValueError):
    pass


class Encoder(Protocol):
    identifier: str
    dimension: int

    def encode(self, text: str) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    return [t.lower() for t in _TOKEN_RE.findall(text)]


def _bucket_and_sign(token: str, d: int) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    h = int.from_bytes(digest, "little")
    return (h >> 1) % d, (1.0 if h & 1 else -1.0)


def unit(vec: np.ndarray) -> np.ndarray:
    """L2-normalize; the zero vector maps to basis vector 0."""
    vec = np.asarray(vec, dtype=np.float64)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        out = np.zeros_like(vec)
        out[0] = 1.0
        return out
    return vec / norm


def baseline_embed(text: str, d: int = 64) -> np.ndarray:
    """Signed feature hashing of lowercase identifier/word tokens, L2-normalized."""
    if d < 16 or d & (d - 1):
        raise EmbeddingError(f"dimension must be a power of two >= 16, got {d}")
    vec = np.zeros(d)
    for tok in tokenize(text):
        bucket, sign = _bucket_and_sign(tok, d)
        vec[bucket] += sign
    return unit(vec)


class BaselineEncoder:
    """Deterministic, weight-free stand-in for a neural code encoder."""

    def __init__(self, dimension: int = 64):
        baseline_embed("", dimension)  # validates the dimension
        self.dimension = dimension
        self.identifier = f"baseline-hash-v1:d={dimension}:full-source"

    def encode(self, text: str) -> np.ndarray:
        return baseline_embed(text, self.dimension)


def encode(encoder: Encoder, text: str) -> np.ndarray:
    if not text:
        raise EmbeddingError("cannot encode empty text")
    vec = np.asarray(encoder.encode(text), dtype=np.float64)
    if vec.shape != (encoder.dimension,) or not np.all(np.isfinite(vec)):
        raise EmbeddingError(f"encoder {encoder.identifier!r} produced an invalid vector")
    return unit(vec)


class EmbeddingTable:
    """Row ``i`` of :attr:`matrix` is the unit vector of node ``i``."""

    def __init__(self, matrix: np.ndarray, provenance: str, normalize: bool = True):
        matrix = np.array(matrix, dtype=np.float64, copy=True)
        if matrix.ndim != 2 or matrix.shape[0] == 0:
            raise EmbeddingError("embedding matrix must be a non-empty 2-D array")
        if not np.all(np.isfinite(matrix)):
            bad = int(np.argwhere(~np.isfinite(matrix))[0][0])
            raise EmbeddingError(f"non-finite value in record for node {bad}")
        if normalize:
            matrix = np.stack([unit(row) for row in matrix])
        matrix.setflags(write=False)
        self.matrix = matrix
        self.provenance = provenance

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def __getitem__(self, node_id: int) -> np.ndarray:
        return self.matrix[node_id]

    @classmethod
    def from_graph(cls, graph, encoder: Encoder) -> "EmbeddingTable":
        rows = [encode(encoder, node.source_text or node.name or " ") for node in graph.nodes]
        return cls(np.stack(rows), encoder.identifier, normalize=False)

    def dumps(self) -> str:
        lines = [f"# reporank-embeddings version={WIRE_VERSION} d={self.dimension} provenance={self.provenance}"]
        for i, row in enumerate(self.matrix):
            lines.append(f"{i} " + " ".join(f"{v:.9g}" for v in row))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def import_external(table_file, expected_nodes: Optional[int] = None) -> EmbeddingTable:
    """Load the line-oriented embeddings format, checking coverage and finiteness."""
    text = Path(table_file).read_text(encoding="utf-8")
    return parse_table(text, expected_nodes)


def parse_table(text: str, expected_nodes: Optional[int] = None) -> EmbeddingTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# reporank-embeddings"):
        raise EmbeddingError("missing embeddings header line")
    m = _HEADER_RE.match(lines[0])
    if m is None:
        raise EmbeddingError(f"malformed embeddings header: {lines[0]!r}")
    if int(m["version"]) != WIRE_VERSION:
        raise EmbeddingError(f"unsupported embeddings version {m['version']}")
    d = int(m["d"])
    provenance = m["provenance"]
    rows: dict[int, np.ndarray] = {}
    for idx, line in enumerate(lines[1:]):
        parts = line.split()
        node_id = int(parts[0])
        values = np.array([float(v) for v in parts[1:]])
        if values.shape[0] != d:
            raise EmbeddingError(f"record {idx} (node {node_id}) has {values.shape[0]} values, expected {d}")
        if not np.all(np.isfinite(values)):
            raise EmbeddingError(f"record {idx} (node {node_id}) contains a non-finite value")
        if node_id in rows:
            raise EmbeddingError(f"record {idx} repeats node {node_id}")
        rows[node_id] = values
    n = expected_nodes if expected_nodes is not None else (max(rows) + 1 if rows else 0)
    for i in range(n):
        if i not in rows:
            raise EmbeddingError(f"missing embedding for node {i}")
    extra = sorted(k for k in rows if not 0 <= k < n)
    if extra:
        raise EmbeddingError(f"embedding for unknown node {extra[0]}")
    matrix = np.stack([rows[i] for i in range(n)])
    norms = np.linalg.norm(matrix, axis=1)
    renorm = bool(np.any(np.abs(norms - 1.0) > 1e-6))
    return EmbeddingTable(matrix, provenance, normalize=renorm)


def knn_search(table: EmbeddingTable, query: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Exact top-k by cosine similarity; ties go to the smaller node id."""
    n = len(table)
    if k < 1 or k > n:
        raise EmbeddingError(f"k must be in [1, {n}], got {k}")
    q = unit(np.asarray(query, dtype=np.float64))
    if q.shape != (table.dimension,):
        raise EmbeddingError(f"query dimension {q.shape} does not match table dimension {table.dimension}")
    # row-wise sum rather than BLAS gemv: equal rows must give bit-equal scores
    sims = (table.matrix * q).sum(axis=1)
    order = np.lexsort((np.arange(n), -sims))[:k]
    return [(int(i), float(sims[i])) for i in order]


def cosine(a: Iterable[float], b: Iterable[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = math.sqrt(float(a @ a)), math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)
