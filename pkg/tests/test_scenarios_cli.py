import json

import pytest

from ecdlab.cli import (EXIT_ACCURACY, EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION,
                        main)
from ecdlab.scenarios import (SCENARIO_KINDS, ScenarioValidationError,
                              load_scenario, validate_config, validate_file)


def audit_config(tolerance=1e-9, x0=(0.0, 0.0, 0.0, 0.0)):
    return {
        "schema_version": "1",
        "kind": "conservation-audit",
        "parameters": {
            "worldlines": [{"u": [1.0, 0.2, 0.0, 0.0], "x0": list(x0),
                            "s_span": [-4, 4], "n": 201, "q": 1.0}],
            "grid": {"origin": [-0.4, -1, -1, -1],
                     "spacings": [0.2, 0.25, 0.25, 0.25],
                     "extents": [5, 9, 9, 9]},
            "tolerance": tolerance,
        },
    }


def lw_config():
    return {
        "schema_version": "1",
        "kind": "lw-field-map",
        "parameters": {
            "worldline": {"u": [1, 0, 0, 0], "s_span": [-50, 50], "n": 1001,
                          "q": 1.0},
            "grid": {"origin": [0, -0.5, -0.5, -0.5],
                     "spacings": [0.5, 0.5, 0.5, 0.5],
                     "extents": [1, 3, 3, 3]},
        },
    }


def guiding_config(tolerance=1e-4):
    return {
        "schema_version": "1",
        "kind": "guiding-run",
        "parameters": {
            "packet": {"M_diag": [1, 1, 1, 1], "x0": [0, 0, 0, 0],
                       "u": [1, 0.2, 0, 0]},
            "s_span": [0.0, 0.5],
            "steps": 10,
            "tolerance": tolerance,
        },
    }


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


# ---------------------------------------------------------------------------
# validation diagnostics


def test_unknown_kind_lists_allowed_kinds():
    doc = audit_config()
    doc["kind"] = "nope"
    diags = validate_config(doc)
    assert len(diags) == 1
    for kind in SCENARIO_KINDS:
        assert kind in diags[0]


def test_bad_parameter_reports_path():
    doc = {"schema_version": "1", "kind": "free-ecd",
           "parameters": {"epsilons": [-0.1], "tolerance_factor": 1.0}}
    diags = validate_config(doc)
    assert any(d.startswith("parameters.epsilons.0") for d in diags)


def test_unknown_key_is_rejected():
    doc = audit_config()
    doc["parameters"]["typo"] = 1
    diags = validate_config(doc)
    assert any("typo" in d for d in diags)


def test_parse_failure_reports_line_and_column(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{\n  "kind": oops\n}\n')
    diags = validate_file(str(p))
    assert len(diags) == 1
    assert "line 2" in diags[0] and "column" in diags[0]


def test_missing_file_is_a_diagnostic(tmp_path):
    diags = validate_file(str(tmp_path / "absent.json"))
    assert diags and "absent.json" in diags[0]


def test_load_scenario_applies_overrides(tmp_path):
    path = write(tmp_path, audit_config())
    sc = load_scenario(path, overrides=[("parameters.tolerance", "0.5")])
    assert sc.parameters["tolerance"] == 0.5
    with pytest.raises(ScenarioValidationError):
        load_scenario(path, overrides=[("parameters.nonexistent", "1")])


# ---------------------------------------------------------------------------
# CLI exit codes


def test_cli_validate_ok_and_fail(tmp_path, capsys):
    good = write(tmp_path, audit_config(), "good.json")
    assert main(["validate", good]) == EXIT_OK
    assert "valid" in capsys.readouterr().out
    bad_doc = audit_config()
    bad_doc["kind"] = "nope"
    bad = write(tmp_path, bad_doc, "bad.json")
    assert main(["validate", bad]) == EXIT_VALIDATION
    assert "conservation-audit" in capsys.readouterr().err


def test_cli_run_success_writes_outputs(tmp_path, capsys):
    cfg = write(tmp_path, audit_config())
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out), "--workers", "1"]) == EXIT_OK
    assert (out / "charges.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["kind"] == "conservation-audit"
    assert manifest["outputs"] == ["charges.csv"]
    assert "charge_spread_max" in manifest["residuals"]
    summary = json.loads(capsys.readouterr().out)
    assert summary["kind"] == "conservation-audit"


def test_cli_run_invalid_config(tmp_path, capsys):
    doc = audit_config()
    del doc["parameters"]["tolerance"]
    cfg = write(tmp_path, doc)
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
    assert "tolerance" in capsys.readouterr().err


def test_cli_run_numeric_failure(tmp_path, capsys):
    # worldline sits outside the grid: the deposit is a hard numeric precondition
    cfg = write(tmp_path, audit_config(x0=(0.0, 5.0, 0.0, 0.0)))
    assert main(["run", cfg, "--out", str(tmp_path / "o"),
                 "--workers", "1"]) == EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


def test_cli_run_accuracy_failure_via_override(tmp_path, capsys):
    cfg = write(tmp_path, guiding_config())
    out = tmp_path / "o"
    assert main(["run", cfg, "--out", str(out), "--workers", "1",
                 "--override", "parameters.tolerance=1e-15"]) == EXIT_ACCURACY
    assert "accuracy failure" in capsys.readouterr().err
    # the same scenario passes at its declared tolerance
    assert main(["run", cfg, "--out", str(out), "--workers", "1"]) == EXIT_OK


def test_cli_out_dir_env(tmp_path, capsys, monkeypatch):
    cfg = write(tmp_path, guiding_config())
    envdir = tmp_path / "envout"
    monkeypatch.setenv("ECDLAB_OUT_DIR", str(envdir))
    assert main(["run", cfg, "--workers", "1"]) == EXIT_OK
    capsys.readouterr()
    assert (envdir / "guiding.csv").exists()


def test_cli_rejects_malformed_override(tmp_path, capsys):
    cfg = write(tmp_path, audit_config())
    with pytest.raises(SystemExit):
        main(["run", cfg, "--override", "novalue"])
    capsys.readouterr()


# ---------------------------------------------------------------------------
# determinism


def test_rerun_is_byte_identical(tmp_path, capsys):
    cfg = write(tmp_path, audit_config())
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["run", cfg, "--out", str(out1), "--workers", "1"]) == EXIT_OK
    assert main(["run", cfg, "--out", str(out2), "--workers", "1"]) == EXIT_OK
    capsys.readouterr()
    assert (out1 / "charges.csv").read_bytes() == (out2 / "charges.csv").read_bytes()


def test_worker_count_does_not_change_data(tmp_path, capsys):
    cfg = write(tmp_path, lw_config())
    out1, out2 = tmp_path / "w1", tmp_path / "w2"
    assert main(["run", cfg, "--out", str(out1), "--workers", "1"]) == EXIT_OK
    assert main(["run", cfg, "--out", str(out2), "--workers", "2"]) == EXIT_OK
    capsys.readouterr()
    assert (out1 / "fields.csv").read_bytes() == (out2 / "fields.csv").read_bytes()


def test_csv_has_no_timestamps(tmp_path, capsys):
    cfg = write(tmp_path, audit_config())
    out = tmp_path / "ts"
    assert main(["run", cfg, "--out", str(out), "--workers", "1"]) == EXIT_OK
    capsys.readouterr()
    text = (out / "charges.csv").read_text()
    assert "20" not in text.split("\n")[0]  # header carries no dates
    manifest = json.loads((out / "manifest.json").read_text())
    assert "timestamp" in manifest          # wall-clock data lives here only
