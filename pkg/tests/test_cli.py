import json
import subprocess
import sys

import pytest

from cohomlab.cli import load_scenario, main, preset_names, run, validate_scenario
from cohomlab.errors import SchemaError

CHEAP = ["doubling_coboundary", "doubling_cos_noncoboundary", "empty", "random_two_fiber"]


def test_presets_listed(capsys):
    assert main(["list-presets"]) == 0
    out = capsys.readouterr().out.split()
    assert out == preset_names()
    assert set(CHEAP) <= set(out)


@pytest.mark.parametrize("name", preset_names())
def test_presets_validate(name):
    validate_scenario(load_scenario(name))


def test_empty_pipeline(tmp_path):
    report, code = run("empty", str(tmp_path))
    assert code == 0
    assert report["steps"] == []
    assert (tmp_path / "empty.report.json").exists()


@pytest.mark.parametrize("name", ["doubling_coboundary", "doubling_cos_noncoboundary"])
def test_byte_identical_reports(tmp_path, name):
    a, b = tmp_path / "a", tmp_path / "b"
    run(name, str(a), seed=3)
    run(name, str(b), seed=3)
    ra = (a / f"{name}.report.json").read_bytes()
    assert ra == (b / f"{name}.report.json").read_bytes()
    for csv in sorted(a.glob("*.csv")):
        assert csv.read_bytes() == (b / csv.name).read_bytes()
    assert "elapsed" not in ra.decode() and "time" not in json.loads(ra)["provenance"]


def test_seed_in_provenance(tmp_path):
    rep, _ = run("doubling_coboundary", str(tmp_path), seed=11, threads=2)
    assert rep["provenance"]["seed"] == 11 and rep["provenance"]["threads"] == 2


def _scenario(tmp_path, **overrides):
    sc = load_scenario("doubling_coboundary")
    sc.update(overrides)
    p = tmp_path / "sc.json"
    p.write_text(json.dumps(sc))
    return p


def test_exit_code_two_on_unexpected_verdict(tmp_path):
    sc = load_scenario("doubling_cos_noncoboundary")
    sc["expect"] = "Coboundary"
    sc["pipeline"] = sc["pipeline"][:1]
    p = tmp_path / "x.json"
    p.write_text(json.dumps(sc))
    assert main(["run", str(p), "--out", str(tmp_path)]) == 2


def test_exit_code_zero_on_expected_verdict(tmp_path, capsys):
    assert main(["run", "doubling_coboundary", "--out", str(tmp_path)]) == 0
    assert "solve: Coboundary" in capsys.readouterr().out


@pytest.mark.parametrize("bad,field", [
    ({"window": 0}, "window"),
    ({"pipeline": [{"command": "integrate"}]}, "pipeline/0/command"),
    ({"maps": {"backend": "chebyshev", "family": {}}}, "maps/backend"),
    ({"colour": "red"}, "<root>"),
])
def test_schema_errors_name_the_field(tmp_path, bad, field, capsys):
    p = _scenario(tmp_path, **bad)
    with pytest.raises(SchemaError, match=f"field {field}"):
        load_scenario(str(p))
    assert main(["validate", str(p)]) == 1
    assert "SchemaError" in capsys.readouterr().err


def test_missing_sections(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"name": "s", "pipeline": [{"command": "gibbs"}]}))
    with pytest.raises(SchemaError, match="field sft"):
        load_scenario(str(p))
    p.write_text("{not json")
    with pytest.raises(SchemaError, match="malformed JSON"):
        load_scenario(str(p))
    with pytest.raises(SchemaError):
        load_scenario("no_such_preset")


def test_out_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("COHOMLAB_OUT", str(tmp_path / "env"))
    run("empty")
    assert (tmp_path / "env" / "empty.report.json").exists()


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cohomlab", "validate", "empty"],
                         capture_output=True, text=True, check=True)
    assert "empty: ok" in out.stdout
