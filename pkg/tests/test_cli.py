import json
import os
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from rslab import corpus
from rslab.cli import main

SCHEMAS = Path(corpus.__file__).resolve().parent.parent / "schemas"


def schema(kind):
    return json.loads((SCHEMAS / f"{kind}.schema.json").read_text())


def validate(path):
    obj = json.loads(Path(path).read_text())
    jsonschema.validate(obj, schema(obj["kind"]))
    return obj


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def write(tmp_path):
    def _write(name, content):
        p = tmp_path / name
        p.write_text(content if isinstance(content, str) else json.dumps(content))
        return p
    return _write


def test_analyze_xor_and_boia2(tmp_path, capsys):
    code, out, _ = run(["analyze", corpus.path("xor"), "--family", "sharedslot"], capsys)
    assert code == 0
    rep = json.loads(out)
    jsonschema.validate(rep, schema("diagnostics"))
    assert rep["rs_count"] == 1 and "manifest" not in rep
    report = tmp_path / "boia2.json"
    assert run(["analyze", corpus.path("boia2"), "--report", report], capsys)[0] == 0
    rep = validate(report)
    assert rep["rs_count"] == 26 and "knowledge_complexity" in rep
    assert rep["manifest"] == "boia2.manifest.json"
    man = validate(tmp_path / "boia2.manifest.json")
    assert man["outputs"] == ["boia2.json"] and man["command"] == "analyze"


def test_analyze_sat_and_brute_agree(capsys):
    counts = []
    for flag in ("--sat", "--brute"):
        code, out, _ = run(["analyze", corpus.path("boia2"), flag, "--injective"], capsys)
        assert code == 0
        counts.append(json.loads(out)["rs_count"])
    assert counts == [5, 5]


def test_parse_error_location(write, capsys):
    bad = write("bad.task", "task bad;\nconcept A : 2;\nknowledge { A <-> }\n")
    code, _, err = run(["analyze", bad], capsys)
    assert code == 2
    assert "bad.task:3:" in err


def test_exit_codes(write, tmp_path, capsys):
    nondet = write("nd.task", "task nd;\nconcept A : 2;\nlabel Y : 2;\nknowledge { A | !A }\n")
    assert run(["analyze", nondet], capsys)[0] == 3
    assert run(["analyze", corpus.path("mnist_toy"), "--brute", "--budget", "10"], capsys)[0] == 4
    assert run(["analyze", tmp_path / "missing.task"], capsys)[0] == 2
    with pytest.raises(SystemExit) as exc:
        main(["analyze", str(corpus.path("xor")), "--family", "nope"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["analyze", str(corpus.path("xor")), "--threads", "0"])
    assert exc.value.code == 2


def test_enumerate(capsys):
    code, out, _ = run(["enumerate", corpus.path("mnist_toy"), "--family", "sharedslot", "--cap", "100"], capsys)
    rep = json.loads(out)
    jsonschema.validate(rep, schema("enumeration"))
    # shortcut 2->4, 3->1, 4->3, 5->6 as a support pair list
    target = sorted([[[2, 3], [4, 1]], [[4, 5], [3, 6]]])
    assert any(sorted(r) == target for r in rep["remaps"])
    assert rep["count"] == 59
    code, out, _ = run(["enumerate", corpus.path("mnist_toy"), "--family", "sharedslot", "--cap", "0"], capsys)
    rep = json.loads(out)
    assert rep["count"] == 59 and rep["remaps"] == []
    code, out, _ = run(["enumerate", corpus.path("sum2bit"), "--family", "sharedslot"], capsys)
    rep = json.loads(out)
    assert rep["count"] == 0 and rep["remaps"] == []


def test_pin_file(write, capsys):
    pins = write("pins.json", {"pins": [[0, 0], [0, 1], [1, 0], [1, 1]]})
    code, out, _ = run(["analyze", corpus.path("xor"), "--pin", pins], capsys)
    assert code == 0 and json.loads(out)["rs_count"] == 0
    listed = write("list.json", [[0, 0]])
    code, out, _ = run(["enumerate", corpus.path("xor"), "--pin", listed, "--family", "perslot"], capsys)
    assert code == 0


def test_mitigate_support_extension(write, tmp_path, capsys):
    strat = write("s.json", [{"kind": "support", "vectors": [[8, 8]]}])
    report = tmp_path / "what.json"
    args = ["mitigate", corpus.path("mnist_toy_variant"), strat, "--family", "sharedslot", "--report", report]
    assert run(args, capsys)[0] == 0
    rep = validate(report)
    assert rep["baseline"]["count"] == 1 and rep["strategies"][0]["count"] == 0
    csv = (tmp_path / "what.csv").read_text().splitlines()
    assert csv[0] == "strategy,lever,before,after" and csv[-1].endswith(",1,0")
    assert validate(tmp_path / "what.manifest.json")["outputs"] == ["what.json", "what.csv"]


def test_mitigate_injective_and_empty(write, capsys):
    strat = write("inj.json", {"strategies": [{"kind": "injective"}]})
    code, out, _ = run(["mitigate", corpus.path("boia2"), strat], capsys)
    rep = json.loads(out)
    assert code == 0 and (rep["baseline"]["count"], rep["strategies"][0]["count"]) == (26, 5)
    empty = write("empty.json", [])
    code, out, _ = run(["mitigate", corpus.path("boia2"), empty], capsys)
    rep = json.loads(out)
    jsonschema.validate(rep, schema("what_if"))
    assert rep["strategies"] == [] and rep["combinations"] == [] and rep["baseline"]["count"] == 26
    code, out, _ = run(["mitigate", corpus.path("boia2"), strat, "--format", "csv"], capsys)
    assert out.splitlines() == ["strategy,lever,before,after", "baseline,-,26,26", "injective,optimality,26,5"]


def test_reports_byte_identical_and_threads(tmp_path, capsys):
    texts = []
    for i, threads in enumerate((1, 1, 4)):
        report = tmp_path / f"r{i}.json"
        run(["analyze", corpus.path("boia2"), "--brute", "--threads", threads, "--report", report], capsys)
        texts.append(report.read_bytes().replace(f"r{i}.".encode(), b"r."))
    assert texts[0] == texts[1] == texts[2]


def test_cache_round_trip(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("RSLAB_CACHE", str(tmp_path / "cache"))
    first = run(["analyze", corpus.path("boia2")], capsys)[1]
    files = os.listdir(tmp_path / "cache")
    assert len(files) == 1 and files[0].startswith("table-")
    second = run(["analyze", corpus.path("boia2")], capsys)[1]
    assert first == second and os.listdir(tmp_path / "cache") == files


def test_train_xor(write, tmp_path, capsys):
    conf = write("conf.json", {"data": {"samples_per_support_vector": 10}, "train": {"epochs": 500, "lr": 0.5}})
    out = tmp_path / "run"
    assert run(["train", corpus.path("xor"), conf, "--out", out, "--seed", 3], capsys)[0] == 0
    metrics = validate(out / "metrics.json")
    assert metrics["label_accuracy"] >= 0.99
    validate(out / "trajectory.json")
    validate(out / "alpha.json")
    man = validate(out / "manifest.json")
    assert set(man["outputs"]) >= {"metrics.json", "trajectory.json", "alpha.json", "dataset.csv"}
    first = (out / "metrics.json").read_bytes()
    run(["train", corpus.path("xor"), conf, "--out", out, "--seed", 3], capsys)
    assert (out / "metrics.json").read_bytes() == first


def test_train_ensemble(write, tmp_path, capsys):
    conf = write("conf.json", {"extractor": {"groups": [[0], [1, 2]]}, "train": {"epochs": 100, "entropy": 0.1},
                               "ensemble": {"size": 3, "accuracy_floor": 0.0}})
    out = tmp_path / "ens"
    assert run(["train", corpus.path("bdd_like"), conf, "--out", out], capsys)[0] == 0
    ens = validate(out / "ensemble.json")
    assert set(ens["slot_entropy"]) == {"green", "red", "ped"}
    assert all(v >= 0 for v in ens["slot_entropy"].values())


def test_train_errors(write, tmp_path, capsys):
    ltn = write("ltn.json", {"train": {"objective": "ltn", "epochs": 1}})
    assert run(["train", corpus.path("mnist_toy"), ltn, "--out", tmp_path / "a"], capsys)[0] == 6
    boom = write("boom.json", {"train": {"lr": 1e9, "epochs": 50}})
    code, _, err = run(["train", corpus.path("xor"), boom, "--out", tmp_path / "b"], capsys)
    assert code == 5 and "diverg" in err.lower()
    diag = json.loads((tmp_path / "b" / "divergence.json").read_text())
    assert diag["kind"] == "divergence" and diag["objective"] == "pnsp" and diag["loss"] == ["inf"]


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "rslab.cli", "analyze", str(corpus.path("xor")),
                          "--family", "sharedslot"], capture_output=True, text=True, check=False)
    assert res.returncode == 0 and json.loads(res.stdout)["rs_count"] == 1
