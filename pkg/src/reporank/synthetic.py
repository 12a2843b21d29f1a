"""Seeded generators for synthetic Python repositories with planted structure.

Both generators emit real source text which is then indexed by the normal
parser, so every experiment exercises the full graph-construction path.

``planted_path_corpus``
    Queries whose gold context sits at a known path type from the node the
    query text resembles (imported-but-unused helper, directly invoked
    helper, inherited method, or a rare sibling-module function).

``linked_gold_corpus``
    Queries that already call the gold function once but whose wording
    overlaps with a different imported function, so lexical similarity
    points at a distractor while the graph points at the gold.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .graph import Rsg
from .parsing import build_rsg_from_sources

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


class WordPool:
    """Unique pronounceable pseudo-words, never repeated within one pool."""

    def __init__(self, rng: random.Random, reserved=()):
        self.rng = rng
        self.used = set(reserved)

    def word(self, syllables: int = 3) -> str:
        while True:
            w = "".join(self.rng.choice(_CONSONANTS) + self.rng.choice(_VOWELS) for _ in range(syllables))
            if w not in self.used:
                self.used.add(w)
                return w

    def words(self, n: int, syllables: int = 3) -> list[str]:
        return [self.word(syllables) for _ in range(n)]


@dataclass
class SyntheticQuery:
    repo: int
    text: str
    file_path: str
    gold_qname: str
    anchor_qname: Optional[str] = None
    planted: str = ""
    distractor_qname: Optional[str] = None
    gold_next_line: str = ""


@dataclass
class SyntheticRepo:
    sources: dict[str, str]
    graph: Optional[Rsg] = None

    def build(self) -> Rsg:
        if self.graph is None:
            self.graph = build_rsg_from_sources(self.sources)
        return self.graph


@dataclass
class SyntheticCorpus:
    repos: list[SyntheticRepo]
    queries: list[SyntheticQuery] = field(default_factory=list)

    def gold_id(self, q: SyntheticQuery) -> int:
        return self.repos[q.repo].build().find(q.gold_qname).id

    def split(self, n_train_repos: int):
        train = [q for q in self.queries if q.repo < n_train_repos]
        test = [q for q in self.queries if q.repo >= n_train_repos]
        return train, test


def _fn(name: str, params: str, body_words: list[str], calls: list[str] = (), indent: str = "") -> str:
    lines = [f"{indent}def {name}({params}):"]
    for c in calls:
        lines.append(f"{indent}    {c}")
    lines.append(f"{indent}    " + " = ".join(body_words[:2]) + " = " + repr(" ".join(body_words)))
    lines.append(f"{indent}    return {body_words[0]}")
    return "\n".join(lines)


# -- planted-path corpus ------------------------------------------------------------

_PLANTED_WEIGHTS = (("imported", 0.50), ("invoked", 0.30), ("inherited", 0.18), ("sibling", 0.02))


def planted_path_corpus(n_repos: int = 40, queries_per_repo: int = 10, seed: int = 0,
                        weights=_PLANTED_WEIGHTS) -> SyntheticCorpus:
    rng = random.Random(seed)
    pool = WordPool(rng)
    corpus = SyntheticCorpus([])
    kinds = [k for k, _ in weights]
    probs = [w for _, w in weights]
    for r in range(n_repos):
        sources: dict[str, str] = {"pkg/__init__.py": ""}
        n_util = 3
        util_fns: list[list[str]] = []
        for u in range(n_util):
            names = [f"{pool.word(2)}_{pool.word(2)}" for _ in range(5)]
            util_fns.append(names)
            body = [f'"""Helpers {u}."""', "import math", ""]
            for name in names:
                body += [_fn(name, "x", pool.words(3)), ""]
            sources[f"pkg/util_{u}.py"] = "\n".join(body)

        # base model hierarchy: Base <- Mid <- Leaf, methods call each other
        base_methods = {c: [pool.word(2) for _ in range(3)] for c in ("Base", "Mid", "Leaf")}
        lines = ['"""Model hierarchy."""', "from pkg.util_0 import " + util_fns[0][0], ""]
        parent = {"Base": None, "Mid": "Base", "Leaf": "Mid"}
        for cls in ("Base", "Mid", "Leaf"):
            lines.append(f"class {cls}{'(' + parent[cls] + ')' if parent[cls] else ''}:")
            ms = base_methods[cls]
            for i, m in enumerate(ms):
                calls = [f"self.{ms[i + 1]}()"] if i + 1 < len(ms) else [f"{util_fns[0][0]}(1)"]
                lines += [_fn(m, "self", pool.words(3), calls, indent="    "), ""]
        sources["pkg/models.py"] = "\n".join(lines)

        services = []
        for s in range(queries_per_repo):
            kind = rng.choices(kinds, probs)[0]
            u = rng.randrange(n_util)
            imported = rng.sample(util_fns[u], 3)
            invoked, idle = imported[0], imported[1]
            method_words = pool.words(5)
            mname = pool.word(2)
            cls_name = f"Service{s}"
            base = rng.choice(["Base", "Mid", "Leaf"])
            lines = [f'"""Service {s}."""',
                     f"from pkg.util_{u} import {', '.join(imported)}",
                     f"from pkg.models import {base}", "",
                     f"class {cls_name}({base}):"]
            lines += [_fn(mname, "self, data", method_words, [f"{invoked}(data)"], indent="    "), ""]
            other = pool.word(2)
            lines += [_fn(other, "self", pool.words(3), [f"self.{mname}(None)"], indent="    "), ""]
            sources[f"pkg/service_{s}.py"] = "\n".join(lines)
            anchor = f"pkg.service_{s}.{cls_name}.{mname}"
            if kind == "imported":
                gold = f"pkg.util_{u}.{idle}"
            elif kind == "invoked":
                gold = f"pkg.util_{u}.{invoked}"
            elif kind == "inherited":
                gold = f"pkg.models.{base}.{rng.choice(base_methods[base])}"
            else:
                sibling = [n for n in util_fns[u] if n not in imported]
                gold = f"pkg.util_{u}.{rng.choice(sibling)}"
            text = "    " + " ".join(method_words[:4]) + "\n    " + method_words[4] + " ="
            services.append(SyntheticQuery(r, text, f"pkg/service_{s}.py", gold, anchor, kind))
        corpus.repos.append(SyntheticRepo(sources))
        corpus.queries.extend(services)
    return corpus


# -- linked-gold corpus ---------------------------------------------------------------

_QUERY_FILLER = ("value", "result", "status")


def linked_gold_corpus(n_repos: int = 60, files_per_repo: int = 5, n_distractors: int = 4,
                       seed: int = 0) -> SyntheticCorpus:
    rng = random.Random(seed)
    pool = WordPool(rng, reserved=_QUERY_FILLER)
    corpus = SyntheticCorpus([])
    for r in range(n_repos):
        sources: dict[str, str] = {"lib/__init__.py": "", "app/__init__.py": ""}
        helpers: list[tuple[str, str, list[str]]] = []  # (module, name, vocabulary)
        for j in range(4):
            body = [f'"""Library module {j}."""', ""]
            for _ in range(6):
                name = f"{pool.word(2)}_{pool.word(2)}"
                vocab = pool.words(6)
                helpers.append((f"lib.helpers_{j}", name, vocab))
                body += [_fn(name, "x", vocab), ""]
            sources[f"lib/helpers_{j}.py"] = "\n".join(body)
        for k in range(files_per_repo):
            picked = rng.sample(helpers, n_distractors + 1)
            gold, distractor = picked[0], picked[1]
            imports: dict[str, list[str]] = {}
            for mod, name, _ in picked:
                imports.setdefault(mod, []).append(name)
            lines = [f'"""Application module {k}."""']
            lines += [f"from {mod} import {', '.join(names)}" for mod, names in sorted(imports.items())]
            lines.append("")
            # existing code in the file touches every import once, so none of them is special
            for mod, name, _ in picked[1:]:
                lines += [_fn(f"use_{name}", "x", pool.words(2), [f"{name}(x)"]), ""]
            sources[f"app/main_{k}.py"] = "\n".join(lines)
            overlap = distractor[2][:5]
            arg = pool.word(2)
            text = (f"def {pool.word(2)}({arg}):\n"
                    f"    {_QUERY_FILLER[0]} = {gold[1]}({arg})\n"
                    f"    {' '.join(overlap)}\n"
                    f"    {_QUERY_FILLER[1]} = {_QUERY_FILLER[2]}")
            corpus.queries.append(SyntheticQuery(
                r, text, f"app/main_{k}.py", f"{gold[0]}.{gold[1]}",
                planted="linked", distractor_qname=f"{distractor[0]}.{distractor[1]}",
                gold_next_line=f"return {gold[1]}({_QUERY_FILLER[0]})",
            ))
        corpus.repos.append(SyntheticRepo(sources))
    return corpus


# -- on-disk layout for the command-line pipeline --------------------------------------


def write_repos(corpus: SyntheticCorpus, root) -> list[Path]:
    """Write repo ``r`` under ``root/r<r>/src``; returns the source directories."""
    root = Path(root)
    dirs = []
    for r, repo in enumerate(corpus.repos):
        base = root / f"r{r}" / "src"
        for rel, text in repo.sources.items():
            path = base / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text + ("\n" if text and not text.endswith("\n") else ""), encoding="utf-8")
        dirs.append(base)
    return dirs


def write_records(corpus: SyntheticCorpus, queries: list[SyntheticQuery], path,
                  graph_name: str = "graph.rsg", emb_name: Optional[str] = "emb.tbl") -> None:
    """One JSON line per query, pointing at ``r<repo>/<graph_name>`` relative to the record file."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, q in enumerate(queries):
            rec = {"id": f"q{i}", "graph": f"r{q.repo}/{graph_name}", "query": q.text, "query_file": q.file_path,
                   "gold_node_id": corpus.gold_id(q)}
            if emb_name:
                rec["embeddings"] = f"r{q.repo}/{emb_name}"
            if q.gold_next_line:
                rec["gold_next_line"] = q.gold_next_line
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
