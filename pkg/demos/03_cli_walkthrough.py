"""
Command line walkthrough
========================

Drive the ``reporank`` command over synthetic repositories written to a
temporary directory: index, embed, mine, train, retrieve and evaluate.
"""

# %%
# Write the repositories and the train/test record files.
import json
import subprocess
import sys
import tempfile
from pathlib import Path

from reporank.synthetic import linked_gold_corpus, write_records, write_repos

work = Path(tempfile.mkdtemp())
corpus = linked_gold_corpus(n_repos=6, seed=0)
train_q, test_q = corpus.split(4)
write_repos(corpus, work)
write_records(corpus, train_q, work / "train.jsonl")
write_records(corpus, test_q, work / "test.jsonl")


def reporank(*args):
    cmd = [sys.executable, "-m", "reporank", *map(str, args)]
    out = subprocess.run(cmd, cwd=work, check=True, capture_output=True, text=True)
    return out.stdout


# %%
# Index and embed each repository. Every artifact is recorded in manifest.json
# next to it, so later steps refuse inputs that changed underneath them.
for r in range(len(corpus.repos)):
    reporank("index", f"r{r}/src", "-o", f"r{r}/graph.rsg")
    reporank("embed", f"r{r}/graph.rsg", "--dim", 64, "-o", f"r{r}/emb.tbl")
print((work / "r0" / "manifest.json").read_text())

# %%
# Mine patterns and train the predictor from the training records.
reporank("mine-patterns", "train.jsonl", "-o", "patterns.pts")
reporank("train", "train.jsonl", "--epochs", 10, "-o", "model.gnn")

# %%
# Rank contexts for one held-out query and show the assembled prompt.
first = json.loads((work / "test.jsonl").read_text().splitlines()[0])
(work / "query.txt").write_text(first["query"])
out = json.loads(reporank("retrieve", "query.txt", "--query-path", first["query_file"],
                          "--graph", first["graph"], "--emb", first["embeddings"], "--model", "model.gnn",
                          "--patterns", "patterns.pts", "--n2", 2))
print(out["ranked"], out["token_estimate"])
print(out["prompt"])

# %%
# Score retrieval over every held-out record.
reporank("eval", "test.jsonl", "--task", "retrieval", "--model", "model.gnn",
         "--strategy", "exhausted", "-o", "retrieval.json")
print((work / "retrieval.json").read_text())
