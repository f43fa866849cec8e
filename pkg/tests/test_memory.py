import numpy as np
import pytest

from echotrail.core import Action, RawStep, Trajectory
from echotrail.memory import (CorruptMemoryFile, GateViolation, MemoryDB, MemoryRecord, ProcessingDB,
                              record_document)
from echotrail.text import HashingEmbedder, embed, tokenize

from conftest import make_abstracted, make_record


def test_tokenize():
    assert tokenize("Set a 5-minute Timer!") == ["set", "a", "5", "minute", "timer"]
    assert tokenize("") == []


def test_embedding_norm_and_stability():
    v = embed("switch Wi-Fi off")
    assert np.isclose(np.linalg.norm(v), 1.0)
    assert np.array_equal(v, HashingEmbedder()("switch Wi-Fi off"))
    assert not np.any(embed(""))


def test_record_document_has_intents_and_descriptions():
    a = make_abstracted("0-0", "save a note", description="App notes screen x: widgets [button:Save]")
    doc = record_document(a)
    assert "save a note" in doc and "button:Save" in doc


def test_insert_and_gate():
    db = MemoryDB()
    assert db.insert(make_record("0-0", "save a note")) == "inserted"
    with pytest.raises(GateViolation):
        db.insert(make_record("0-1", "save a note", score=3))
    assert len(db) == 1


def test_ungated_db_accepts_low_scores():
    db = MemoryDB(enforce_gate=False)
    assert db.insert(make_record("0-1", "x", score=1)) == "inserted"


def test_dedup_needs_same_actions_and_close_intent():
    db = MemoryDB()
    db.insert(make_record("0-0", "turn off wifi"))
    assert db.insert(make_record("0-1", "turn off wifi")) == "deduplicated"
    assert db.insert(make_record("0-2", "turn off wifi", widget="other")) == "inserted"
    assert db.insert(make_record("0-3", "play some music")) == "inserted"
    assert len(db) == 3


def test_version_bumps_on_insert_only():
    db = MemoryDB()
    db.insert(make_record("0-0", "a"))
    v = db.version
    db.insert(make_record("0-1", "a"))
    assert db.version == v


@pytest.mark.parametrize("n", [0, 1, 100])
def test_persist_load_identity(tmp_path, n):
    db = MemoryDB()
    for i in range(n):
        db.insert(make_record(f"0-{i}", f"goal number {i} item {i * 7 % 13}", widget=f"w{i}"))
    path = db.persist(tmp_path / "m.etmem")
    loaded = MemoryDB.load(path)
    assert loaded == db and len(loaded) == n
    assert loaded.persist(tmp_path / "again.etmem").read_bytes() == path.read_bytes()


def test_load_names_corrupt_line(tmp_path):
    db = MemoryDB()
    db.insert(make_record("0-0", "a"))
    db.insert(make_record("0-1", "b", widget="v"))
    path = db.persist(tmp_path / "m.etmem")
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace('"intent_embedding":[', '"intent_embedding":[0.5,', 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptMemoryFile) as err:
        MemoryDB.load(path)
    assert err.value.line_no == 3


def test_load_rejects_bad_header(tmp_path):
    path = tmp_path / "m.etmem"
    path.write_text('{"format":"other"}\n')
    with pytest.raises(CorruptMemoryFile):
        MemoryDB.load(path)


def test_load_rejects_low_score_in_gated_file(tmp_path):
    db = MemoryDB(enforce_gate=False)
    db.insert(make_record("0-0", "a", score=2))
    path = db.persist(tmp_path / "m.etmem")
    path.write_text(path.read_text().replace('"gated":false', '"gated":true'))
    with pytest.raises(CorruptMemoryFile):
        MemoryDB.load(path)


def test_processing_db_capacity_and_order(env):
    obs = env.reset("open_clock")
    d = ProcessingDB(capacity=2)
    for i in range(3):
        tau = Trajectory(f"0-{i}", (RawStep(obs, Action.back()),))
        d.update(tau, [False])
    assert [e.trajectory_id for e in d.entries()] == ["0-1", "0-2"]
    d.clear()
    assert len(d) == 0


def test_processing_db_never_persisted(tmp_path, small_run):
    text = small_run.d_mem.persist(tmp_path / "m.etmem").read_text()
    assert '"outcomes"' not in text


def test_record_json_round_trip():
    rec = make_record("4-2", "Send \"hi\" to Bob")
    import json
    assert MemoryRecord.from_dict(json.loads(rec.to_json())) == rec


def test_malformed_line_seven(tmp_path):
    db = MemoryDB()
    for i in range(8):
        db.insert(make_record(f"0-{i}", f"intent {i}", widget=f"w{i}"))
    path = db.persist(tmp_path / "m.etmem")
    lines = path.read_text().splitlines()
    lines[6] = lines[6][:40]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptMemoryFile, match="line 7"):
        MemoryDB.load(path)


def test_same_prefix_updated_twice_keeps_latest(env):
    obs = env.reset("open_clock")
    d = ProcessingDB()
    tau = Trajectory("0-0", (RawStep(obs, Action.back()),))
    d.update(tau, [False])
    d.update(tau, [True])
    assert len(d) == 1 and d.get("0-0").outcomes == (True,)
