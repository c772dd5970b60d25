import csv
import io
import json
import subprocess
import sys

import pytest

from hdqkd.cli import EXIT_CODES, main, parse_duration, parse_range
from hdqkd.config import preset


def run(capsys, *argv):
    """Exit code, parsed JSON stdout and parsed JSON stderr."""
    code, out, err = run_raw(capsys, *argv)
    return code, (json.loads(out) if out.strip() else None), err


def run_raw(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, (json.loads(err) if err.strip() else None)


def run_table(capsys, *argv):
    code, out, err = run_raw(capsys, *argv)
    return code, list(csv.DictReader(io.StringIO(out))), err


@pytest.mark.parametrize("text,value", [("50ns", 5e-8), ("137.4us", 137.4e-6), ("1ms", 1e-3),
                                        ("2", 2.0), ("-0.83ms", -0.83e-3), ("1e-3s", 1e-3)])
def test_parse_duration(text, value):
    assert parse_duration(text) == pytest.approx(value, rel=1e-15)


def test_parse_duration_rejects_units():
    import argparse

    with pytest.raises(argparse.ArgumentTypeError):
        parse_duration("5 parsecs")


def test_parse_range():
    assert list(parse_range("0:2:0.5")) == [0.0, 0.5, 1.0, 1.5, 2.0]
    assert list(parse_range("3,1")) == [3.0, 1.0]


def test_keyrate_fig4(capsys):
    code, out, _ = run(capsys, "keyrate", "--d", "4", "--loss-db", "25", "--preset", "fig4")
    assert code == 0
    assert 67 <= out["skr_kbps"] <= 123
    assert out["config"]["c_overlap"] == 1.75
    assert out["config_hash"] == preset("fig4").config_hash()


def test_keyrate_overrides_and_dimension_change(capsys):
    _, out, _ = run(capsys, "keyrate", "--d", "2", "--mu1", "0.5", "--loss-db", "10")
    assert out["config"]["d"] == 2 and out["config"]["mu1"] == 0.5
    assert out["config"]["c_overlap"] is None  # preset overlap belongs to d=4


def test_keyrate_json_file(tmp_path, capsys):
    path = tmp_path / "k.json"
    code, out, _ = run(capsys, "keyrate", "--json", str(path))
    assert code == 0 and json.loads(path.read_text()) == out


def test_config_file_and_env_dir(tmp_path, capsys, monkeypatch):
    (tmp_path / "c.ini").write_text(preset("table2-2d").to_ini())
    monkeypatch.setenv("HDQKD_CONFIG_DIR", str(tmp_path))
    _, out, _ = run(capsys, "keyrate", "--config", "c.ini")
    assert out["config_hash"] == preset("table2-2d").config_hash()


@pytest.mark.parametrize("argv,name", [
    (("keyrate", "--mu2", "0.5"), "ValidationError"),
    (("keyrate", "--config", "/nonexistent.ini"), "ValidationError"),
    (("optimize", "--loss-db", "90", "--points", "4"), "NoPositiveKey"),
    (("crossover", "--ta", "0ns"), "NoCrossover"),
    (("sync", "--channel", "off", "--duration", "10ms"), "AcquisitionFailed"),
    (("lock", "--gain", "0"), "LockLost"),
])
def test_exit_codes(capsys, argv, name):
    code, _, err = run_raw(capsys, *argv)
    assert code == EXIT_CODES[name] == err["exit_code"]
    assert err["error"] == name


def test_exit_codes_distinct():
    assert len(set(EXIT_CODES.values())) == len(EXIT_CODES)
    assert 0 not in EXIT_CODES.values() and 1 not in EXIT_CODES.values()


def test_no_crossover_reports_leader(capsys):
    _, rows, err = run_table(capsys, "crossover", "--ta", "0ns")
    assert err["leader"] == 2
    assert rows == [{"t_DT_ns": "0", "crossover_db": "", "leader_if_none": "2"}]


def test_crossover_values(capsys):
    code, rows, _ = run_table(capsys, "crossover", "--ta", "10ns,25ns,50ns,100ns")
    assert code == 0  # partial failures are reported per row
    assert rows[0]["crossover_db"] == "" and rows[0]["leader_if_none"] == "2"
    xs = [float(r["crossover_db"]) for r in rows[1:]]
    assert xs == sorted(xs)


def test_sweep_and_optimize(capsys):
    code, rows, _ = run_table(capsys, "sweep", "--dims", "4,2", "--loss", "0:10:5")
    assert code == 0
    assert list(rows[0]) == ["loss_db", "skr_d2", "skr_d4"]
    assert [float(r["loss_db"]) for r in rows] == [0.0, 5.0, 10.0]
    code, out, _ = run(capsys, "optimize", "--loss-db", "25", "--points", "6")
    assert code == 0


def test_simulate_deterministic(tmp_path, capsys):
    paths = []
    for k in range(2):
        p = tmp_path / f"t{k}.bin"
        assert run(capsys, "simulate", "--format", "bin", "--duration", "2ms", "--seed", "5",
                   "--out", str(p))[0] == 0
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    other = tmp_path / "t_other.bin"
    run(capsys, "simulate", "--format", "bin", "--duration", "2ms", "--seed", "6", "--out", str(other))
    assert other.read_bytes() != paths[0].read_bytes()


def test_gen_samples_and_bin(tmp_path, capsys):
    s = tmp_path / "s.csv"
    assert run_raw(capsys, "gen-samples", "--count", "300", "--out", str(s), "--seed", "3")[0] == 0
    first = s.read_bytes()
    run_raw(capsys, "gen-samples", "--count", "300", "--out", str(s), "--seed", "3")
    assert s.read_bytes() == first
    code, rows, _ = run_table(capsys, "bin", "--input", str(s), "--block-target", "1e6")
    assert code == 0
    done = [r for r in rows if r["skr"]]
    assert done and all(abs(float(r["rel_diff"])) < 0.2 for r in done)


def test_sync_recovers_injected_offset(tmp_path, capsys):
    tel = tmp_path / "tel.csv"
    code, out, _ = run(capsys, "sync", "--inject-offset", "137.4us", "--duration", "0.5s",
                       "--telemetry", str(tel))
    assert code == 0
    res = out
    assert res["within_half_period"] and abs(res["offset_error_s"]) < 1e-11
    assert tel.read_text().splitlines()[0].startswith("t_s,")


def test_sync_negative_offset(capsys):
    code, out, _ = run(capsys, "sync", "--inject-offset=-0.83ms", "--duration", "0.3s", "--d", "2")
    assert code == 0 and out["within_half_period"]


def test_sync_from_file(tmp_path, capsys):
    f = tmp_path / "t.csv"
    common = ("--duration", "0.3s", "--inject-offset", "20us", "--seed", "4")
    run(capsys, "simulate", *common, "--blind", "--out", str(f))
    code, out, _ = run(capsys, "sync", *common, "--input", str(f))
    assert code == 0 and out["within_half_period"]


def test_lock(capsys):
    code, out, _ = run(capsys, "lock", "--steps", "10000")
    assert code == 0
    assert out["steady_state_qber"] <= 2 * out["e0"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hdqkd", "keyrate", "--preset", "table2-2d"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "keyrate"
