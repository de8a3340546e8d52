"""``xsbridge`` command line.

    xsbridge bridge run      receive a stream and fan frames out to sinks
    xsbridge bridge urdf     write the human model URDF
    xsbridge harness stream  emit synthetic motion
    xsbridge harness record  log received datagrams
    xsbridge harness replay  re-send a log
    xsbridge protocol dump   decode datagrams from a file, a log, or hex

Data goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional, Sequence

from .bridge import EXIT_CONFIG, EXIT_NETWORK, EXIT_OK, EXIT_SINK, run_bridge, urdf_text
from .config import CONFIG_ENV, STDOUT, ConfigError, load_config
from .harness import (
    LOG_MAGIC,
    STANDARD_KINDS,
    HarnessError,
    SendFailed,
    parse_script,
    read_log,
    record,
    replay,
    stream_synthetic,
)
from .kinematics import OutOfRange, default_scale
from .protocol import HEADER_SIZE, ProtocolError, PayloadKind, format_datagram, parse_datagram, parse_header
from .stream import Endpoint
from .urdf import validate_urdf

log = logging.getLogger("xsbridge")


def _setup_logging(verbose: int) -> None:
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def _endpoint(text: str) -> Endpoint:
    try:
        return Endpoint.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _kinds(text: str) -> tuple:
    try:
        return tuple(PayloadKind[n.strip()] for n in text.split(","))
    except KeyError as exc:
        raise argparse.ArgumentTypeError(f"unknown payload kind {exc.args[0]!r}") from None


# -- bridge ------------------------------------------------------------------


def cmd_bridge_run(args) -> int:
    overrides = {
        "listen": args.listen,
        "character_id": args.character_id,
        "sinks.jsonl.path": args.jsonl,
        "sinks.log.path": args.log,
        "sinks.udp.endpoint": args.republish,
        "urdf.path": args.urdf,
        "urdf.height": args.height,
        "axis_remap": args.axis_remap,
        "queue_depth": args.queue_depth,
        "expected_kinds": args.kinds,
        "reconnect.attempts": args.reconnect_attempts,
        "run.duration_s": args.duration,
        "run.idle_timeout_s": args.idle_timeout,
    }
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    return run_bridge(cfg)


def cmd_bridge_urdf(args) -> int:
    try:
        text = urdf_text(args.height, args.name, physics=args.physics, visuals=not args.no_visuals)
    except OutOfRange as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    summary = validate_urdf(text)
    if args.out == STDOUT:
        sys.stdout.write(text)
    else:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            log.error("cannot write %s: %s", args.out, exc)
            return EXIT_SINK
    print(json.dumps(summary.as_dict()), file=sys.stderr)
    return EXIT_OK


# -- harness -----------------------------------------------------------------


def cmd_harness_stream(args) -> int:
    try:
        script = parse_script(args.script, default_scale(args.height), args.character_id)
        report = stream_synthetic(args.to, args.rate, script, args.duration,
                                  start_sample=args.start_sample, kinds=args.kinds,
                                  max_payload_bytes=args.max_payload)
    except SendFailed as exc:
        log.error("%s", exc)
        return EXIT_NETWORK
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    print(json.dumps(report.__dict__), file=sys.stderr)
    return EXIT_OK


def cmd_harness_record(args) -> int:
    try:
        report = record(args.listen, args.out, max_records=args.max_records,
                        duration_s=args.duration, idle_timeout_s=args.idle_timeout)
    except HarnessError as exc:
        log.error("%s", exc)
        return EXIT_NETWORK
    except KeyboardInterrupt:
        return EXIT_OK
    print(json.dumps(report.__dict__), file=sys.stderr)
    return EXIT_OK


def cmd_harness_replay(args) -> int:
    try:
        report = replay(args.log, args.to, args.rate_scale)
    except SendFailed as exc:
        log.error("%s", exc)
        return EXIT_NETWORK
    except (HarnessError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    print(json.dumps(report.__dict__), file=sys.stderr)
    return EXIT_OK


# -- protocol dump -----------------------------------------------------------


def _split_concatenated(buf: bytes) -> list[bytes]:
    """Cut back-to-back datagrams using each header's payload size."""
    out = []
    offset = 0
    while offset < len(buf):
        try:
            size = HEADER_SIZE + parse_header(buf[offset:offset + HEADER_SIZE]).payload_size_bytes
        except ProtocolError:
            out.append(buf[offset:])
            break
        out.append(buf[offset:offset + size])
        offset += size
    return out


def _dump_inputs(source: str) -> list[tuple[str, bytes]]:
    if os.path.isfile(source):
        with open(source, "rb") as fh:
            head = fh.read(len(LOG_MAGIC))
        if head == LOG_MAGIC:
            return [(f"record {i} t={r.recv_timestamp_us}us", r.data) for i, r in enumerate(read_log(source))]
        with open(source, "rb") as fh:
            return [(f"datagram {i}", raw) for i, raw in enumerate(_split_concatenated(fh.read()))]
    try:
        buf = bytes.fromhex("".join(source.split()))
    except ValueError:
        raise ValueError(f"{source!r} is neither a file nor hex") from None
    return [(f"datagram {i}", raw) for i, raw in enumerate(_split_concatenated(buf))]


def cmd_protocol_dump(args) -> int:
    try:
        inputs = _dump_inputs(args.source)
    except (ValueError, HarnessError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    bad = 0
    for label, raw in inputs:
        try:
            text = format_datagram(parse_datagram(raw))
        except ProtocolError as exc:
            bad += 1
            text = f"malformed ({type(exc).__name__}: {exc}) {raw[:48].hex()}"
        print(f"# {label}, {len(raw)} bytes\n{text}")
    return EXIT_OK if not bad else EXIT_CONFIG


# -- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; 2 is reserved for network failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xsbridge", description="Motion-capture stream bridge and test harness.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    groups = p.add_subparsers(dest="group", required=True)

    bridge = groups.add_parser("bridge", help="run the bridge or emit its model").add_subparsers(
        dest="command", required=True)
    run = bridge.add_parser("run", help="receive, map and fan out frames")
    run.add_argument("--config", help=f"config file (default: ${CONFIG_ENV})")
    run.add_argument("--listen", help="udp://host:port or tcp://host:port")
    run.add_argument("--character-id", help="only frames for this character (or 'any')")
    run.add_argument("--jsonl", help="JSONL output path, '-' for stdout, 'none' to disable")
    run.add_argument("--log", help="datagram log output path")
    run.add_argument("--republish", help="relay raw datagrams to this UDP endpoint")
    run.add_argument("--urdf", help="also write the model URDF here")
    run.add_argument("--height", help="subject height for the URDF, metres")
    run.add_argument("--axis-remap", help="signed axis permutation, e.g. '-y,x,z'")
    run.add_argument("--queue-depth", help="frames buffered between ingest and sinks")
    run.add_argument("--kinds", help="fixed payload kinds per frame, comma separated (default: learned)")
    run.add_argument("--reconnect-attempts", help="TCP reconnect attempts")
    run.add_argument("--duration", help="stop after this many seconds")
    run.add_argument("--idle-timeout", help="stop after this long without datagrams")
    run.set_defaults(func=cmd_bridge_run)

    urdf = bridge.add_parser("urdf", help="write the human model URDF")
    urdf.add_argument("--out", default=STDOUT, help="output path, '-' for stdout")
    urdf.add_argument("--height", type=float, default=1.70, help="subject height, metres")
    urdf.add_argument("--name", default="human", help="robot name")
    urdf.add_argument("--physics", action="store_true", help="give virtual links a tiny mass")
    urdf.add_argument("--no-visuals", action="store_true")
    urdf.set_defaults(func=cmd_bridge_urdf)

    harness = groups.add_parser("harness", help="synthetic streams and logs").add_subparsers(
        dest="command", required=True)
    stream = harness.add_parser("stream", help="emit synthetic motion")
    stream.add_argument("--to", type=_endpoint, default=Endpoint.parse("udp://127.0.0.1:9763"))
    stream.add_argument("--rate", type=float, default=60.0, help="frames per second, 1..240")
    stream.add_argument("--duration", type=float, default=2.0, help="seconds")
    stream.add_argument("--script", default="static",
                        help="'static' or joint:axis:amplitude_rad:freq_hz[+...]")
    stream.add_argument("--height", type=float, default=1.70)
    stream.add_argument("--character-id", type=int, default=0)
    stream.add_argument("--start-sample", type=int, default=0)
    stream.add_argument("--kinds", type=_kinds, default=STANDARD_KINDS, help="payload kinds, comma separated")
    stream.add_argument("--max-payload", type=int, default=1400, help="max payload bytes per datagram")
    stream.set_defaults(func=cmd_harness_stream)

    rec = harness.add_parser("record", help="log received datagrams")
    rec.add_argument("--listen", type=_endpoint, default=Endpoint.parse("udp://127.0.0.1:9763"))
    rec.add_argument("--out", required=True)
    rec.add_argument("--max-records", type=int)
    rec.add_argument("--duration", type=float)
    rec.add_argument("--idle-timeout", type=float)
    rec.set_defaults(func=cmd_harness_record)

    rep = harness.add_parser("replay", help="re-send a datagram log")
    rep.add_argument("log")
    rep.add_argument("--to", type=_endpoint, default=Endpoint.parse("udp://127.0.0.1:9763"))
    rep.add_argument("--rate-scale", type=float, default=1.0)
    rep.set_defaults(func=cmd_harness_replay)

    proto = groups.add_parser("protocol", help="wire-format tools").add_subparsers(dest="command", required=True)
    dump = proto.add_parser("dump", help="decode datagrams")
    dump.add_argument("source", help="raw datagram file, datagram log, or hex string")
    dump.set_defaults(func=cmd_protocol_dump)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except BrokenPipeError:
        # downstream reader went away (e.g. piped into head)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
