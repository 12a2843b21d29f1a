import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reporank.embedding import (
    BaselineEncoder, EmbeddingError, EmbeddingTable, _bucket_and_sign, baseline_embed, cosine, encode,
    import_external, knn_search, parse_table, tokenize,
)
from tests.oracles import brute_knn


def test_encode_deterministic_and_unit():
    enc = BaselineEncoder(64)
    a, b = encode(enc, "def f(x): return x"), encode(enc, "def f(x): return x")
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-9


def test_encode_empty_text_errors():
    with pytest.raises(EmbeddingError):
        encode(BaselineEncoder(), "")


def test_disjoint_tokens_cosine_zero():
    d = 64
    # chosen so no bucket is shared between the two token sets
    left, right = ["alpha", "beta"], ["gamma", "delta"]
    lb = {_bucket_and_sign(t, d)[0] for t in left}
    rb = {_bucket_and_sign(t, d)[0] for t in right}
    assert lb.isdisjoint(rb)
    assert cosine(baseline_embed(" ".join(left), d), baseline_embed(" ".join(right), d)) == 0.0


def test_bag_of_tokens_order_invariance():
    assert np.array_equal(baseline_embed("a b"), baseline_embed("b a"))


def test_repeated_token_weighs_double():
    d = 64
    ba, sa = _bucket_and_sign("foo", d)
    bb, sb = _bucket_and_sign("bar", d)
    assert ba != bb
    v = baseline_embed("foo foo bar", d)
    expected = np.zeros(d)
    expected[ba] = 2 * sa
    expected[bb] = sb
    assert np.allclose(v, expected / math.sqrt(5), atol=1e-15)


def test_zero_token_text_maps_to_basis_vector():
    v = baseline_embed("+-*/", 16)
    assert v[0] == 1.0 and np.count_nonzero(v) == 1


def test_dimension_must_be_power_of_two():
    for d in (8, 48, 100):
        with pytest.raises(EmbeddingError):
            baseline_embed("x", d)


def test_tokenize_lowercases_identifiers():
    assert tokenize("def FooBar(x1): return 42") == ["def", "foobar", "x1", "return", "42"]


def test_knn_examples():
    table = EmbeddingTable(np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]), "t")
    got = knn_search(table, np.array([1.0, 0.0]), 2)
    assert [i for i, _ in got] == [0, 2]
    assert got[0][1] == pytest.approx(1.0) and got[1][1] == pytest.approx(0.6)
    assert knn_search(table, table[1], 1)[0] == (1, pytest.approx(1.0))


def test_knn_tie_goes_to_lower_id():
    table = EmbeddingTable(np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]), "t")
    assert knn_search(table, np.array([1.0, 0.0]), 1)[0][0] == 1


def test_knn_bad_k():
    table = EmbeddingTable(np.eye(3), "t")
    for k in (0, 4):
        with pytest.raises(EmbeddingError):
            knn_search(table, np.ones(3), k)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.sampled_from([2, 4, 8, 16]))
def test_knn_matches_brute_force_and_prefix(seed, n, d):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n, d))
    m[rng.random(n) < 0.2] = m[0]  # force ties
    table = EmbeddingTable(m, "t")
    q = rng.normal(size=d)
    prev = []
    for k in range(1, n + 1):
        ids = [i for i, _ in knn_search(table, q, k)]
        assert ids[: len(prev)] == prev
        prev = ids
    assert prev == brute_knn(table.matrix, q, n)


def test_table_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    t = EmbeddingTable(rng.normal(size=(5, 16)), "baseline-hash-v1:d=16:full-source")
    path = tmp_path / "emb.tbl"
    t.save(path)
    back = import_external(path, 5)
    assert back.provenance == t.provenance
    assert np.allclose(back.matrix, t.matrix, atol=1e-9)
    assert back.dumps() == t.dumps()


def test_import_provenance_from_header():
    d = 256
    rows = "\n".join(f"{i} " + " ".join("1" if j == i else "0" for j in range(d)) for i in range(3))
    t = parse_table(f"# reporank-embeddings version=1 d={d} provenance=my encoder v2\n{rows}\n", 3)
    assert t.dimension == 256 and t.provenance == "my encoder v2"


def test_import_missing_node_named():
    lines = ["# reporank-embeddings version=1 d=2 provenance=x"] + [f"{i} 1 0" for i in range(9) if i != 7]
    with pytest.raises(EmbeddingError, match="node 7"):
        parse_table("\n".join(lines), 9)


def test_import_nan_names_record():
    text = "# reporank-embeddings version=1 d=2 provenance=x\n0 1 0\n1 nan 0\n"
    with pytest.raises(EmbeddingError, match="record 1"):
        parse_table(text, 2)


def test_import_dimension_mismatch():
    with pytest.raises(EmbeddingError, match="expected 3"):
        parse_table("# reporank-embeddings version=1 d=3 provenance=x\n0 1 0\n", 1)


def test_import_renormalizes():
    t = parse_table("# reporank-embeddings version=1 d=2 provenance=x\n0 3 4\n1 0 1\n", 2)
    assert np.allclose(t[0], [0.6, 0.8])


def test_table_is_read_only():
    t = EmbeddingTable(np.eye(2), "x")
    with pytest.raises(ValueError):
        t.matrix[0, 0] = 5.0
