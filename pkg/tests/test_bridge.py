import io
import json
import os
import pathlib
import re
import socket
import subprocess
import sys
import threading
import time

import pytest

from xsbridge.bridge import EXIT_CONFIG, EXIT_NETWORK, EXIT_OK, EXIT_SINK, run_bridge
from xsbridge.cli import main
from xsbridge.config import CONFIG_ENV, ConfigError, load_config, parse_config
from xsbridge.harness import (
    ALL_KINDS,
    STANDARD_KINDS,
    LogRecord,
    frame_to_datagrams,
    parse_script,
    read_log,
    stream_synthetic,
    synth_frame,
    write_log,
)
from xsbridge.mapper import JOINT_STATE_NAMES, map_frame
from xsbridge.protocol import PayloadKind, serialize_datagram
from xsbridge.sinks import frame_record
from xsbridge.stream import Endpoint, ReconnectPolicy
from xsbridge.urdf import validate_urdf

SCRIPT = parse_script("jRightElbow:z:0.8:0.5")


# -- config --------------------------------------------------------------------


def test_config_defaults():
    cfg = parse_config()
    assert cfg.listen == Endpoint("udp", "0.0.0.0", 9763)
    assert cfg.sinks == ("jsonl",)
    assert cfg.jsonl_path == "-"
    assert cfg.character_id is None
    assert cfg.expected_kinds is None
    assert cfg.reconnect == ReconnectPolicy()


def test_config_file_and_flag_precedence():
    text = """
    # bridge settings
    listen.port = 9000
    listen.transport = tcp
    queue_depth = 10
    sinks.log.path = /tmp/x.xbr
    expected_kinds = PoseQuaternion, JointAngles
    """
    cfg = parse_config(text)
    assert cfg.listen == Endpoint("tcp", "0.0.0.0", 9000)
    assert cfg.queue_depth == 10
    assert cfg.sinks == ("jsonl", "log")
    assert cfg.expected_kinds == {PayloadKind.PoseQuaternion, PayloadKind.JointAngles}
    cfg = parse_config(text, {"listen": "udp://127.0.0.1:9100", "queue_depth": None, "sinks.jsonl.path": "none"})
    assert cfg.listen == Endpoint("udp", "127.0.0.1", 9100)
    assert cfg.queue_depth == 10
    assert cfg.sinks == ("log",)


@pytest.mark.parametrize("overrides,key", [
    ({"queue_depth": "-1"}, "queue_depth"),
    ({"queue_depth": "many"}, "queue_depth"),
    ({"sinks.jsonl.path": "none"}, "sinks"),
    ({"listen": "udp://h:0"}, "listen"),
    ({"character_id": "300"}, "character_id"),
    ({"axis_remap": "y,x,z"}, "axis_remap"),
    ({"urdf.height": "9"}, "urdf.height"),
    ({"expected_kinds": "Bogus"}, "expected_kinds"),
    ({"run.idle_timeout_s": "0"}, "run.idle_timeout_s"),
    ({"nonsense": "1"}, "nonsense"),
])
def test_config_errors_name_the_key(overrides, key):
    with pytest.raises(ConfigError) as exc:
        parse_config("", overrides)
    assert exc.value.key == key


def test_config_rejects_shared_paths(tmp_path):
    p = str(tmp_path / "out")
    with pytest.raises(ConfigError) as exc:
        parse_config("", {"sinks.jsonl.path": p, "sinks.log.path": p})
    assert exc.value.key == "sinks.log.path"


def test_config_bad_line():
    with pytest.raises(ConfigError):
        parse_config("listen udp://x:1")


def test_config_from_environment(tmp_path):
    path = tmp_path / "bridge.conf"
    path.write_text("queue_depth = 7\n")
    assert load_config(None, environ={CONFIG_ENV: str(path)}).queue_depth == 7
    assert load_config(None, {"queue_depth": "9"}, environ={CONFIG_ENV: str(path)}).queue_depth == 9
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.conf"), environ={})


# -- in-process bridge -----------------------------------------------------------


class BridgeThread:
    def __init__(self, cfg):
        self.stop, self.ready = threading.Event(), threading.Event()
        self.status = None
        self.thread = threading.Thread(target=self._run, args=(cfg,))
        self.thread.start()
        assert self.ready.wait(5), "bridge did not bind"

    def _run(self, cfg):
        self.status = run_bridge(cfg, stop=self.stop, ready=self.ready, stdout=io.StringIO())

    def finish(self, settle=0.3):
        time.sleep(settle)
        self.stop.set()
        self.thread.join(10)
        return self.status


def _jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh]


def test_bridge_streams_records(tmp_path, udp_port):
    out = tmp_path / "frames.jsonl"
    urdf = tmp_path / "human.urdf"
    cfg = parse_config("", {"listen": f"udp://127.0.0.1:{udp_port}", "sinks.jsonl.path": str(out),
                            "urdf.path": str(urdf)})
    b = BridgeThread(cfg)
    stream_synthetic(Endpoint("udp", "127.0.0.1", udp_port), 60, SCRIPT, 2.0)
    assert b.finish() == EXIT_OK
    recs = _jsonl(out)
    assert len(recs) == 120
    assert [r["sample"] for r in recs] == list(range(120))
    for r in recs:
        assert len(r["link_states"]) == 23 == len(r["transforms"])
        assert tuple(r["joint_state"]["name"]) == JOINT_STATE_NAMES
        assert r["zero_filled"] == []
    assert validate_urdf(urdf.read_text()).as_dict()["revolute_joints"] == 66


def test_bridge_character_filter(tmp_path, udp_port):
    out = tmp_path / "frames.jsonl"
    cfg = parse_config("", {"listen": f"udp://127.0.0.1:{udp_port}", "sinks.jsonl.path": str(out),
                            "character_id": "1"})
    b = BridgeThread(cfg)
    stream_synthetic(Endpoint("udp", "127.0.0.1", udp_port), 60, SCRIPT, 0.5)
    assert b.finish() == EXIT_OK
    assert _jsonl(out) == []


def test_log_and_relay_sinks_are_byte_exact(tmp_path, udp_port):
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as relay:
        relay.bind(("127.0.0.1", 0))
        relay.settimeout(2)
        cfg = parse_config("", {"listen": f"udp://127.0.0.1:{udp_port}", "sinks.jsonl.path": "none",
                                "sinks.log.path": str(tmp_path / "in.xbr"),
                                "sinks.udp.endpoint": f"udp://127.0.0.1:{relay.getsockname()[1]}"})
        b = BridgeThread(cfg)
        sent = [serialize_datagram(d) for k in range(10) for d in frame_to_datagrams(synth_frame(SCRIPT, k / 60, k))]
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as tx:
            for raw in sent:
                tx.sendto(raw, ("127.0.0.1", udp_port))
                time.sleep(0.001)
        relayed = [relay.recv(65536) for _ in sent]
        assert b.finish() == EXIT_OK
    assert relayed == sent
    assert [r.data for r in read_log(tmp_path / "in.xbr")] == sent


def test_bind_failure_is_network_error():
    # TEST-NET-1 is never a local address
    cfg = parse_config("", {"listen": "udp://192.0.2.1:9763"})
    assert run_bridge(cfg, stdout=io.StringIO()) == EXIT_NETWORK


def test_unwritable_sink_is_sink_error(tmp_path):
    cfg = parse_config("", {"sinks.jsonl.path": str(tmp_path / "no" / "such" / "dir.jsonl")})
    assert run_bridge(cfg, stdout=io.StringIO()) == EXIT_SINK


def test_duration_stops_bridge(udp_port):
    cfg = parse_config("", {"listen": f"udp://127.0.0.1:{udp_port}", "run.duration_s": "0.3"})
    t0 = time.monotonic()
    assert run_bridge(cfg, stdout=io.StringIO()) == EXIT_OK
    assert time.monotonic() - t0 < 3


# -- command line ----------------------------------------------------------------


def _cli(*args, **kw):
    return subprocess.run([sys.executable, "-m", "xsbridge", *args], capture_output=True, text=True,
                          timeout=60, **kw)


class CliBridge:
    """``xsbridge bridge run`` in a subprocess, waited on until bound."""

    def __init__(self, *args):
        self.proc = subprocess.Popen([sys.executable, "-m", "xsbridge", "-v", "bridge", "run", *args],
                                     stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        self.err = []
        bound = threading.Event()

        def drain():
            for line in self.proc.stderr:
                self.err.append(line)
                if "bound " in line or "connected " in line:
                    bound.set()
            bound.set()

        self._drain = threading.Thread(target=drain, daemon=True)
        self._drain.start()
        assert bound.wait(15), "bridge did not start"

    def wait(self):
        # stderr belongs to the drain thread
        out = self.proc.stdout.read()
        self.proc.wait(60)
        self._drain.join(5)
        return self.proc.returncode, out, "".join(self.err)


def test_cli_config_error_exit_code():
    r = _cli("bridge", "run", "--queue-depth", "-1")
    assert r.returncode == EXIT_CONFIG
    assert "queue_depth" in r.stderr


def test_cli_sink_failure_exit_code(udp_port):
    if not os.path.exists("/dev/full"):
        pytest.skip("/dev/full not available")
    b = CliBridge("--listen", f"udp://127.0.0.1:{udp_port}", "--jsonl", "/dev/full", "--idle-timeout", "1")
    stream_synthetic(Endpoint("udp", "127.0.0.1", udp_port), 60, SCRIPT, 0.5)
    code, _, err = b.wait()
    assert code == EXIT_SINK
    assert "/dev/full" in err


def test_cli_jsonl_to_stdout(udp_port):
    b = CliBridge("--listen", f"udp://127.0.0.1:{udp_port}", "--idle-timeout", "1")
    stream_synthetic(Endpoint("udp", "127.0.0.1", udp_port), 60, SCRIPT, 0.5)
    code, out, err = b.wait()
    assert code == EXIT_OK
    lines = out.splitlines()
    assert len(lines) == 30
    assert json.loads(lines[0])["sample"] == 0
    assert "stream summary" in err


def test_cli_urdf_stdout():
    r = _cli("bridge", "urdf", "--height", "1.8")
    assert r.returncode == 0
    assert validate_urdf(r.stdout).as_dict() == {"links": 23, "virtual_links": 44, "revolute_joints": 66,
                                                 "is_tree": True}
    assert json.loads(r.stderr.strip().splitlines()[-1])["links"] == 23


def test_cli_urdf_bad_height():
    assert _cli("bridge", "urdf", "--height", "7").returncode == EXIT_CONFIG


def test_protocol_dump_hex(capsys):
    d = frame_to_datagrams(synth_frame(SCRIPT, 0.0, 5, kinds=[PayloadKind.CenterOfMass]))[0]
    assert main(["protocol", "dump", serialize_datagram(d).hex()]) == EXIT_OK
    out = capsys.readouterr().out
    assert "CenterOfMass sample=5 index=0 last items=1" in out


def test_protocol_dump_log_and_malformed(tmp_path, capsys):
    raws = [serialize_datagram(d) for d in frame_to_datagrams(synth_frame(SCRIPT, 0.0, 1, STANDARD_KINDS))]
    (tmp_path / "cat.bin").write_bytes(b"".join(raws))
    assert main(["protocol", "dump", str(tmp_path / "cat.bin")]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("# datagram") == len(raws)
    assert main(["protocol", "dump", "4d58545030"]) == EXIT_CONFIG
    assert "malformed" in capsys.readouterr().out


def test_harness_stream_rejects_bad_rate(udp_port):
    r = _cli("harness", "stream", "--to", f"udp://127.0.0.1:{udp_port}", "--rate", "500")
    assert r.returncode == EXIT_CONFIG


def test_harness_record_and_replay_cli(tmp_path, udp_port):
    log_in = tmp_path / "in.xbr"
    raws = [serialize_datagram(d) for k in range(5) for d in frame_to_datagrams(synth_frame(SCRIPT, k / 60, k))]
    write_log(log_in, [LogRecord(1000 * (k + 1), r) for k, r in enumerate(raws)])
    rec = subprocess.Popen([sys.executable, "-m", "xsbridge", "-v", "harness", "record", "--listen",
                            f"udp://127.0.0.1:{udp_port}", "--out", str(tmp_path / "out.xbr"),
                            "--max-records", str(len(raws)), "--duration", "20"],
                           stderr=subprocess.PIPE, text=True)
    for line in rec.stderr:
        if "recording" in line:
            break
    r = _cli("harness", "replay", str(log_in), "--to", f"udp://127.0.0.1:{udp_port}")
    assert r.returncode == 0
    rec.communicate(timeout=30)
    assert rec.returncode == 0
    assert [x.data for x in read_log(tmp_path / "out.xbr")] == raws


def test_jsonl_record_keys_match_schema_document():
    doc = (pathlib.Path(__file__).parent.parent / "docs" / "jsonl_schema.md").read_text()
    top = doc.split("## Top level", 1)[1].split("##", 1)[0]
    documented = re.findall(r"^\| `(\w+)` \|", top, re.M)
    f = synth_frame(SCRIPT, 0.1, 3, ALL_KINDS)
    rec = frame_record(f, map_frame(f))
    assert list(rec) == documented
    json.dumps(rec, allow_nan=False)


def test_cli_usage_error_is_config_exit_code():
    assert _cli("bridge", "run", "--no-such-flag").returncode == EXIT_CONFIG
    assert _cli("harness", "stream", "--rate", "fast").returncode == EXIT_CONFIG
    assert _cli().returncode == EXIT_CONFIG
