import json
import signal
import socket
import subprocess
import sys
import time

from limbnet.cli import main
from limbnet.emu import MsgType, WireFrame


def test_tables_text(capsys):
    assert main(["tables"]) == 0
    out = capsys.readouterr().out
    assert "5G (100 MHz) opt." in out and "Infeasible" in out


def test_tables_json(capsys):
    assert main(["tables", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [r["access_latency_ms"] for r in doc["table2"]] == [172, 95, 77, 60, 45, 41]


def test_catalog_json(capsys):
    assert main(["catalog", "--json"]) == 0
    ids = [s["id"] for s in json.loads(capsys.readouterr().out)]
    assert "rgbd_camera" in ids and len(ids) == 7


def test_simulate_default(capsys):
    assert main(["simulate", "--duration", "1"]) == 0
    out = capsys.readouterr().out
    assert "generated 30" in out and "Feasible" in out


def test_simulate_json_is_a_report(capsys):
    assert main(["simulate", "--json", "--duration", "1"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) == {"tool", "tool_version", "trace_version", "scenario", "metrics",
                           "verdicts", "tables"}
    assert report["verdicts"]["rgbd_camera"]["verdict"] == "Feasible"


def test_strict_budget_exit_code(capsys):
    assert main(["simulate", "--link", "4g10", "--duration", "1"]) == 0
    assert main(["simulate", "--link", "4g10", "--duration", "1", "--strict-budget"]) == 3


def test_invalid_inputs_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert main(["simulate", str(bad)]) == 2
    assert "error: <json>" in capsys.readouterr().err
    assert main(["simulate", "--set", "qos.bogus=1"]) == 2
    assert "qos" in capsys.readouterr().err
    assert main(["simulate", "--link", "6g"]) == 2
    assert main(["simulate", str(tmp_path / "missing.json")]) == 2
    assert main(["no-such-command"]) == 2


def test_out_dir_and_rerun(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--out", str(out), "--duration", "1", "--set", "rtt_model.mode=\"lognormal\"",
                 "--set", "rtt_model.sigma=0.3", "--seed", "5"]) == 0
    report = json.loads((out / "report.json").read_text())
    lines = (out / "trace.jsonl").read_text().splitlines()
    csv_rows = (out / "latencies.csv").read_text().splitlines()
    assert len(lines) == 30
    assert csv_rows[0].startswith("stream_id,seq,")
    assert len(csv_rows) == 1 + report["metrics"]["frames"]["delivered"]

    scenario = tmp_path / "again.json"
    scenario.write_text(json.dumps(report["scenario"]))
    out2 = tmp_path / "run2"
    assert main(["simulate", str(scenario), "--out", str(out2)]) == 0
    again = json.loads((out2 / "report.json").read_text())
    assert again["metrics"] == report["metrics"]
    assert (out2 / "trace.jsonl").read_text() == (out / "trace.jsonl").read_text()


def test_trace_and_csv_flags(tmp_path, capsys):
    assert main(["simulate", "--duration", "0.5", "--trace", str(tmp_path / "t.jsonl"),
                 "--csv", str(tmp_path / "l.csv")]) == 0
    assert (tmp_path / "t.jsonl").read_text().count("\n") == 15
    assert (tmp_path / "l.csv").exists()


def test_simulate_all(tmp_path):
    cfgs = tmp_path / "cfgs"
    cfgs.mkdir()
    (cfgs / "a.json").write_text(json.dumps({"streams": ["rgbd_camera", "command"], "link": "5g100opt",
                                             "duration_s": 0.5}))
    (cfgs / "b.json").write_text(json.dumps({"streams": ["rgbd_camera", "command"], "link": "4g10",
                                             "duration_s": 0.5}))
    out = tmp_path / "out"
    assert main(["simulate", "--all", str(cfgs), "--out", str(out), "--workers", "2",
                 "--strict-budget"]) == 3
    merged = json.loads((out / "reports.json").read_text())
    assert set(merged) == {"a", "b"}
    assert merged["a"]["verdicts"]["rgbd_camera"]["verdict"] == "Feasible"
    (cfgs / "c.json").write_text("[]")
    assert main(["simulate", "--all", str(cfgs), "--out", str(out)]) == 2


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_device_without_edge_exits_4(capsys):
    assert main(["emulate", "device", "--port", str(_free_port()), "--duration", "1"]) == 4
    assert "error" in capsys.readouterr().err


def test_edge_subprocess_serves_and_stops_on_sigint(tmp_path):
    port = _free_port()
    proc = subprocess.Popen([sys.executable, "-m", "limbnet", "emulate", "edge", "--port", str(port)],
                            stderr=subprocess.PIPE)
    try:
        deadline = time.monotonic() + 10
        while True:
            try:
                conn = socket.create_connection(("127.0.0.1", port), timeout=1)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.05)
        with conn:
            conn.sendall(WireFrame(MsgType.PROBE, 0, 11, 5).encode())
            reply = WireFrame.decode(conn.recv(24))
        assert reply.msg_type is MsgType.PROBE and reply.seq == 11

        out = tmp_path / "dev"
        assert main(["emulate", "device", "--port", str(port), "--duration", "1",
                     "--out", str(out)]) == 0
        doc = json.loads((out / "emulation.json").read_text())
        assert doc["report"]["frames_generated"] == 30
        assert doc["comparison"]["agree"] is True
    finally:
        proc.send_signal(signal.SIGINT)
        code = proc.wait(timeout=10)
    assert code == 0, proc.stderr.read().decode()
