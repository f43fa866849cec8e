import json

import pytest

from echotrail.cli import main
from echotrail.experiments import ExperimentSpec, stage_sizes
from echotrail.memory import MemoryDB


def test_stage_sizes():
    assert stage_sizes(7) == [2, 2, 2, 1]
    assert stage_sizes(200) == [50] * 4
    assert stage_sizes(2) == [1, 1, 0, 0]


def test_spec_parsing(tmp_path):
    spec = ExperimentSpec.from_dict({"seeds": [1, 2], "variants": ["full", "baseline"]})
    assert spec.seeds == (1, 2)
    assert ExperimentSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({"variants": ["nope"]})
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({"bogus": 1})


def test_pipeline(tmp_path, capsys):
    db = tmp_path / "m.etmem"
    assert main(["explore", "--episodes", "40", "--seed", "2", "--guidance", "on", "--db", str(db)]) == 0
    assert len(MemoryDB.load(db)) > 0
    res = tmp_path / "r.jsonl"
    assert main(["run", "--db", str(db), "--k", "2", "--alpha", "0.5", "--seed", "2", "--out", str(res)]) == 0
    assert len(res.read_text().splitlines()) == 31
    rep = tmp_path / "report.json"
    assert main(["eval", "--results", str(res), "--out", str(rep)]) == 0
    report = json.loads(rep.read_text())
    assert {"sr", "sub_sr", "rrr", "ror", "difficulty", "per_task"} <= set(report)
    csv = tmp_path / "stages.csv"
    assert main(["stage-quality", "--log", f"{db}.episodes.jsonl", "--out", str(csv)]) == 0
    assert csv.read_text().startswith("app,stage,episodes,high_quality,rate\n")
    emb = tmp_path / "e.csv"
    assert main(["export-embeddings", "--db", str(db), "--out", str(emb)]) == 0
    rows = emb.read_text().splitlines()
    assert len(rows) == len(MemoryDB.load(db)) + 1
    assert len(rows[0].split(",")) == 3 + 256


def test_ablate_and_sweep(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"seeds": [0], "episodes": 30, "out_dir": str(tmp_path / "out")}))
    assert main(["ablate", "--spec", str(spec)]) == 0
    data = json.loads((tmp_path / "out" / "ablation.json").read_text())
    assert set(data["variants"]) == {"full", "no_critic_filter", "no_hybrid", "no_guidance", "baseline"}
    assert main(["sweep-k", "--ks", "0,2", "--spec", str(spec)]) == 0
    lines = (tmp_path / "out" / "sweep_k.csv").read_text().splitlines()
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "2"]


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", "--db", str(tmp_path / "missing"), "--out", str(tmp_path / "x")]) != 0
    assert "error:" in capsys.readouterr().err
    bad = tmp_path / "bad.etmem"
    bad.write_text("not json\n")
    assert main(["export-embeddings", "--db", str(bad)]) != 0
    assert main(["run", "--k", "-1", "--out", str(tmp_path / "x")]) != 0
    with pytest.raises(SystemExit):
        main(["explore", "--guidance", "maybe", "--db", "x"])
