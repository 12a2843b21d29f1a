"""Drives the command-line pipeline over a synthetic corpus written to disk."""

from __future__ import annotations

import json
from pathlib import Path

from reporank.cli import main
from reporank.synthetic import linked_gold_corpus, write_records, write_repos


def run(argv) -> None:
    code = main([str(a) for a in argv])
    assert code == 0, f"reporank {' '.join(map(str, argv))} exited with {code}"


def full_pipeline(work: Path, n_repos: int = 12, n_train: int = 8, seed: int = 0) -> dict[str, bytes]:
    """index -> embed -> mine-patterns -> train -> retrieve -> eval; returns the output files' bytes."""
    corpus = linked_gold_corpus(n_repos=n_repos, seed=seed)
    for r, src in enumerate(write_repos(corpus, work)):
        run(["index", src, "-o", work / f"r{r}" / "graph.rsg"])
        run(["embed", work / f"r{r}" / "graph.rsg", "--encoder", "baseline", "--dim", 64, "-o", work / f"r{r}" / "emb.tbl"])
    train_q, test_q = corpus.split(n_train)
    write_records(corpus, train_q, work / "train.jsonl")
    write_records(corpus, test_q, work / "test.jsonl")
    # canned completions: the right line for every other query, the fallback otherwise
    stub = {q.text: q.gold_next_line + "\n# trailing" for i, q in enumerate(test_q) if i % 2 == 0}
    (work / "stub.json").write_text(json.dumps(stub, sort_keys=True))

    run(["mine-patterns", work / "train.jsonl", "-o", work / "patterns.pts"])
    run(["train", work / "train.jsonl", "--strategy", "exhausted", "--seed", seed, "-o", work / "model.gnn"])
    first = test_q[0]
    (work / "query.txt").write_text(first.text)
    run(["retrieve", work / "query.txt", "--query-path", first.file_path, "--graph", work / f"r{first.repo}" / "graph.rsg",
         "--emb", work / f"r{first.repo}" / "emb.tbl", "--model", work / "model.gnn", "--strategy", "exhausted",
         "--n2", 3, "--order", "l2h", "-o", work / "retrieve.json"])
    common = ["--model", work / "model.gnn", "--strategy", "exhausted"]
    run(["eval", work / "test.jsonl", "--task", "retrieval", *common, "-o", work / "retrieval.json"])
    run(["eval", work / "test.jsonl", "--task", "completion", *common, "--n2", 1, "--stub", work / "stub.json",
         "-o", work / "completion.json"])
    return {name: (work / name).read_bytes() for name in ("retrieval.json", "completion.json", "retrieve.json")}
