import csv
import io
import json
import os

import pytest
from hypothesis import given, settings, strategies as st

from callias_lab.cli import (CSV_COLUMNS, EXIT_ASSERTION, EXIT_OK, EXIT_USAGE, emit_report, main, parse_config,
                             UsageError, report_rows, serialize_config, sweep_configs)
from callias_lab.experiments import ConfigError, ExperimentConfig, IndexReport, run_experiment

HEADER = ("experiment,kappa,window_radius,index_signature,index_kernel,spectral_flow,nc_winding,pairing,"
          "chern_diff,boundary,g_est,kappa0,gap,agreement,runtime_ms")


def test_parse_defaults():
    cfg = parse_config('{"experiment": "robbin_salamon", "crossings": 3}')
    assert cfg == ExperimentConfig("robbin_salamon", crossings=3)
    assert cfg.switch == "erf_based" and cfg.seed == 0 and cfg.kappa is None


@pytest.mark.parametrize("text, fragment", [
    ('{"experiment": "nope"}', "unknown experiment"),
    ('{"crossings": 1}', "$.experiment"),
    ('{"experiment": "robbin_salamon", "colour": 1}', "$.colour: unknown key"),
    ('{"experiment": "robbin_salamon", "lattice": {"extnt": 3}}', "$.lattice.extnt"),
    ('{"experiment": "robbin_salamon", "crossings": "3"}', "$.crossings: expected integer"),
    ('{"experiment": "robbin_salamon", "crossings": true}', "$.crossings"),
    ('{"experiment": "robbin_salamon", "kappa": -1}', "$.kappa: must be positive"),
    ('{"experiment": "robbin_salamon", "crossings": 7}', "crossings"),
    ('{"experiment": "robbin_salamon", "switch": "tanh"}', "$.switch"),
    ('{"experiment": "harmonic_unbounded", "kappa_values": [1, "a"]}', "$.kappa_values[1]"),
    ('{"experiment": "nc_torus_interface", "flux": [1]}', "$.flux"),
    ('[1, 2]', "JSON object"),
])
def test_parse_errors_carry_key_path(text, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert fragment in str(exc.value)


def test_malformed_json_reports_position():
    with pytest.raises(ConfigError) as exc:
        parse_config('{\n  "experiment": "robbin_salamon",\n  "crossings": ,\n}')
    assert "line 3, column 16" in str(exc.value)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["robbin_salamon", "harmonic_unbounded", "even_vortex", "nc_torus_interface"]),
       st.one_of(st.none(), st.floats(1e-3, 10)), st.sampled_from(["erf_based", "poly_smoothstep", "sine_ramp"]),
       st.floats(0, 2), st.integers(-3, 3), st.integers(0, 2**31), st.integers(0, 12),
       st.one_of(st.none(), st.lists(st.floats(1e-2, 5), min_size=1, max_size=4)))
def test_config_round_trip(name, kappa, switch, mu, k, seed, sweep, kvals):
    cfg = ExperimentConfig(name, kappa=kappa, switch=switch, mu=mu, crossings=k, winding=k, seed=seed,
                           sweep_points=sweep, kappa_values=kvals, lattice={"extent": 41})
    assert parse_config(serialize_config(cfg)) == cfg


def test_csv_header_and_number_format():
    rep = IndexReport("robbin_salamon", kappa=0.1234567890123456, index_signature=2, agreement=True,
                      runtime_ms=12.0)
    text = report_rows([rep])
    lines = text.splitlines()
    assert lines[0] == HEADER and tuple(lines[0].split(",")) == CSV_COLUMNS
    row = next(csv.DictReader(io.StringIO(text)))
    assert row["kappa"] == "0.123456789012" and row["index_signature"] == "2"
    assert row["agreement"] == "true" and row["pairing"] == "" and row["runtime_ms"] == "12"


def test_emit_report_writes_json_and_csv(tmp_path):
    reps = [IndexReport("x", kappa=0.1 * i, pairing=i, agreement=True) for i in range(8)]
    jpath, cpath = emit_report(reps, tmp_path / "out")
    rows = cpath.read_text().splitlines()
    assert rows[0] == HEADER and len(rows) == 9
    assert [r["pairing"] for r in json.loads(jpath.read_text())] == list(range(8))
    jone, _ = emit_report(reps[3], tmp_path / "one")
    assert json.loads(jone.read_text())["pairing"] == 3


def test_emit_report_unwritable_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError) as exc:
        emit_report(IndexReport("x"), blocker / "sub")
    assert str(blocker) in str(exc.value)


def write_config(tmp_path, data):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(data))
    return str(p)


def test_main_list(capsys):
    assert main(["list"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "robbin_salamon" in out and "window_radius" in out


def test_main_run_success(tmp_path, capsys):
    cfg = write_config(tmp_path, {"experiment": "harmonic_unbounded"})
    assert main(["run", "harmonic_unbounded", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[0] == HEADER
    assert json.loads((tmp_path / "o" / "results.json").read_text())["agreement"] is True


def test_main_assertion_failure_exit_code(tmp_path, capsys):
    # a window smaller than the zero mode leaves the kernel count ambiguous
    cfg = write_config(tmp_path, {"experiment": "harmonic_unbounded", "window_radius": 0.2})
    code = main(["run", "harmonic_unbounded", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == EXIT_ASSERTION
    assert "agreement failed" in capsys.readouterr().err


def test_main_usage_errors(tmp_path, capsys):
    cfg = write_config(tmp_path, {"experiment": "robbin_salamon", "bogus": 1})
    assert main(["run", "robbin_salamon", "--config", cfg, "--out", str(tmp_path)]) == EXIT_USAGE
    assert "$.bogus" in capsys.readouterr().err
    assert main(["run", "robbin_salamon", "--config", str(tmp_path / "missing.json"), "--out", "x"]) == EXIT_USAGE
    good = write_config(tmp_path, {"experiment": "harmonic_unbounded"})
    assert main(["run", "robbin_salamon", "--config", good, "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["run", "harmonic_unbounded", "--config", good, "--out", str(tmp_path),
                 "--set", "noequals"]) == EXIT_USAGE


def test_main_run_unwritable_out(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    good = write_config(tmp_path, {"experiment": "harmonic_unbounded"})
    assert main(["run", "harmonic_unbounded", "--config", good, "--out", str(blocker / "d")]) == EXIT_USAGE


def test_set_override(tmp_path, capsys):
    good = write_config(tmp_path, {"experiment": "harmonic_unbounded"})
    assert main(["run", "harmonic_unbounded", "--config", good, "--out", str(tmp_path / "o"),
                 "--set", "kappa_values=[0.5]"]) == EXIT_OK
    assert json.loads((tmp_path / "o" / "results.json").read_text())["kappa"] == 0.5


def test_sweep_configs_kappa_and_values():
    base = ExperimentConfig("harmonic_unbounded")
    cfgs = sweep_configs(base, "kappa_values", 3, values=[[0.5], [1.0], [2.0]])
    assert [c.kappa_values for c in cfgs] == [[0.5], [1.0], [2.0]]
    k0 = run_experiment("harmonic_unbounded").kappa0
    ks = [c.kappa for c in sweep_configs(base, "kappa", 8)]
    assert len(ks) == 8 and abs(ks[0] - 0.05 * k0) < 1e-12 and abs(ks[-1] - 0.95 * k0) < 1e-12
    with pytest.raises(UsageError):
        sweep_configs(base, "lattice", 2, values=[{}, {}])
    with pytest.raises(UsageError):
        sweep_configs(base, "kappa", 0)


def test_sweep_eight_rows(tmp_path, capsys):
    cfg = write_config(tmp_path, {"experiment": "harmonic_unbounded"})
    vals = ",".join(f"[{v}]" for v in (0.3, 0.5, 0.7, 1, 1.5, 2, 3, 4))
    out = tmp_path / "s"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--param", "kappa_values", "--values", vals]) == EXIT_OK
    rows = (out / "results.csv").read_text().splitlines()
    assert rows[0] == HEADER and len(rows) == 9
    assert all(r.split(",")[4] == "1" for r in rows[1:])


def test_threads_env_validation(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, {"experiment": "harmonic_unbounded"})
    monkeypatch.setenv("CALLIAS_LAB_THREADS", "many")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s"), "--param", "kappa_values",
                 "--values", "[1]"]) == EXIT_USAGE


def test_properties_command(tmp_path, capsys):
    assert main(["properties", "--seed", "42", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 10
    assert json.loads((tmp_path / "properties.json").read_text())["all_passed"]
    assert os.path.exists(tmp_path / "properties.json")
