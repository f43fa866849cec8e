import math
import random
import re
from collections import Counter

import numpy as np
import pytest

from echotrail.memory import MemoryDB, record_document
from echotrail.retrieval import (RetrievalConfig, Retriever, SparseIndex, StaleIndexError, dense_score,
                                 minmax, sparse_score)
from echotrail.text import embed

from conftest import make_record

VOCAB = ("timer alarm note wifi contact message dark theme volume brightness save send "
         "alice bob carol search pin sort block mute reply start stop clock").split()


def textbook_bm25(docs, query, k1=1.2, b=0.75):
    """Plain BM25 over whitespace-free lowercase alphanumeric tokens, one score per doc."""
    toks = [re.findall(r"[a-z0-9]+", d.lower()) for d in docs]
    n = len(toks)
    avgdl = sum(len(t) for t in toks) / n
    q = re.findall(r"[a-z0-9]+", query.lower())
    out = []
    for t in toks:
        tf = Counter(t)
        s = 0.0
        for term in q:
            if tf[term] == 0:
                continue
            df = sum(1 for d in toks if term in d)
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            s += idf * tf[term] * (k1 + 1) / (tf[term] + k1 * (1 - b + b * len(t) / avgdl))
        out.append(s)
    return out


def random_intent(rng, lo=1, hi=6):
    return " ".join(rng.choice(VOCAB) for _ in range(rng.randint(lo, hi)))


def build_db(intents):
    db = MemoryDB()
    for i, text in enumerate(intents):
        db.insert(make_record(f"0-{i}", text, widget=f"w{i}"))
    return db


def test_ln2_two_document_case():
    # equal-length documents, "alpha" once in one of them: idf = ln 2 and the tf factor is 1
    db = MemoryDB()
    db.insert(make_record("0-0", "alpha", step_intent="explore"))
    db.insert(make_record("0-1", "beta", step_intent="explore", widget="v"))
    recs = db.records
    idx = SparseIndex(recs)
    assert idx.idf("alpha") == pytest.approx(math.log(2), abs=1e-12)
    assert sparse_score(["alpha"], recs[0], idx) == pytest.approx(0.6931471805599453, abs=1e-9)
    assert sparse_score(["alpha"], recs[1], idx) == 0.0
    # a term present in both documents
    assert idx.idf("explore") == pytest.approx(math.log(1.2), abs=1e-12)


def test_bm25_matches_textbook_on_random_corpora():
    rng = random.Random(5)
    for _ in range(100):
        db = build_db([random_intent(rng) for _ in range(rng.randint(2, 12))])
        recs = db.records
        idx = SparseIndex(recs)
        query = random_intent(rng, 1, 4)
        ref = textbook_bm25([record_document(r.abstracted) for r in recs], query)
        got = [sparse_score(re.findall(r"[a-z0-9]+", query), r, idx) for r in recs]
        assert np.allclose(got, ref, rtol=0, atol=1e-9)


def test_sparse_score_rejects_stale_index():
    db = build_db(["alpha", "beta"])
    idx = SparseIndex(db.records[:1])
    with pytest.raises(StaleIndexError):
        sparse_score(["beta"], db.records[1], idx)


def test_minmax():
    assert list(minmax(np.array([2.0, 4.0, 3.0]))) == [0.0, 1.0, 0.5]
    assert list(minmax(np.array([1.0, 1.0]))) == [0.5, 0.5]


def brute_force_rank(db, text, alpha):
    recs = db.records
    idx = SparseIndex(recs)
    q = embed(text)
    dense = [(1.0 + dense_score(q, r)) / 2.0 for r in recs]
    sparse = minmax(np.array([sparse_score(re.findall(r"[a-z0-9]+", text.lower()), r, idx)
                              for r in recs]))
    scored = [(alpha * d + (1 - alpha) * s, i) for i, (d, s) in enumerate(zip(dense, sparse))]
    scored.sort(key=lambda x: (-x[0], x[1]))
    return [recs[i].id for _, i in scored]


def test_rank_matches_brute_force_small():
    rng = random.Random(1)
    db = build_db([random_intent(rng) for _ in range(60)])
    for alpha in (0.0, 0.3, 0.5, 1.0):
        r = Retriever(db, RetrievalConfig(alpha=alpha))
        for _ in range(10):
            text = random_intent(rng)
            assert [rec.id for rec, _ in r.rank(text)] == brute_force_rank(db, text, alpha)


def test_k_zero_and_empty_db():
    db = build_db(["alpha"])
    assert Retriever(db, RetrievalConfig(K=0)).topk("alpha") == []
    assert Retriever(MemoryDB()).topk("alpha") == []


def test_index_rebuilds_after_insert():
    db = build_db(["alpha"])
    r = Retriever(db, RetrievalConfig(K=5))
    assert len(r.topk("alpha")) == 1
    db.insert(make_record("9-9", "beta", widget="zz"))
    assert len(r.topk("alpha")) == 2


def test_random_mode_is_seeded():
    rng = random.Random(0)
    db = build_db([random_intent(rng) for _ in range(30)])
    r = Retriever(db, RetrievalConfig(K=3, mode="random"))
    a = r.topk("timer", rng=random.Random(4))
    assert a == r.topk("timer", rng=random.Random(4))
    assert len(a) == 3


def test_dense_and_sparse_modes():
    db = build_db(["set timer", "timer timer timer alarm note"])
    dense = Retriever(db, RetrievalConfig(mode="dense")).rank("set timer")
    sparse = Retriever(db, RetrievalConfig(mode="sparse")).rank("set timer")
    assert dense[0][0].id == "0-0"
    assert {s for _, s in sparse} <= {0.0, 1.0}


def test_config_validation():
    with pytest.raises(ValueError):
        RetrievalConfig(alpha=1.5)
    with pytest.raises(ValueError):
        RetrievalConfig(K=-1)
    with pytest.raises(ValueError):
        RetrievalConfig(mode="fuzzy")
