"""The bridge process: receive, assemble, map, fan out to sinks."""

from __future__ import annotations

import json
import logging
import signal
import sys
import threading
from dataclasses import asdict
from typing import IO, Optional

from .config import BridgeConfig
from .kinematics import default_scale, skeleton_topology
from .mapper import AxisRemap, IncompleteFrame, map_frame
from .sinks import JsonlSink, LogSink, SinkError, UdpRelaySink
from .stream import AssemblerState, MotionFrame, Receiver, StreamError
from .urdf import generate_urdf, render_xml

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NETWORK = 2
EXIT_SINK = 3


def urdf_text(height_m: float = 1.70, robot_name: str = "human", *, physics: bool = False,
              visuals: bool = True) -> str:
    return render_xml(generate_urdf(skeleton_topology(), default_scale(height_m), robot_name,
                                    physics=physics, visuals=visuals))


def write_urdf(path: str, height_m: float = 1.70, **kwargs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(urdf_text(height_m, **kwargs))


class _Fanout:
    """Frame handler run by the receiver's consumer thread."""

    def __init__(self, frame_sinks, remap: AxisRemap):
        self.frame_sinks = frame_sinks
        self.remap = remap
        self.frames = 0
        self.incomplete = 0

    def __call__(self, f: MotionFrame) -> None:
        try:
            msgs = map_frame(f, self.remap)
        except IncompleteFrame as exc:
            if not self.incomplete:
                log.warning("skipping frame %d: %s", f.sample_counter, exc)
            self.incomplete += 1
            return
        for sink in self.frame_sinks:
            sink.write(f, msgs)
        self.frames += 1


def _install_signals(stop: threading.Event):
    if threading.current_thread() is not threading.main_thread():
        return None
    previous = {}
    for sig in (signal.SIGINT, signal.SIGTERM):
        previous[sig] = signal.signal(sig, lambda *_: stop.set())
    return previous


def run_bridge(cfg: BridgeConfig, *, stop: Optional[threading.Event] = None,
               ready: Optional[threading.Event] = None, stdout: Optional[IO[str]] = None) -> int:
    """Run until stopped, the configured duration elapses, or the stream idles out.

    Returns an exit status: 0 clean, 2 network failure, 3 sink failure.
    """
    stop = stop or threading.Event()
    frame_sinks, datagram_sinks = [], []
    try:
        if cfg.urdf_path is not None:
            try:
                write_urdf(cfg.urdf_path, cfg.urdf_height_m)
            except OSError as exc:
                raise SinkError(f"urdf {cfg.urdf_path}: {exc}") from exc
        if cfg.jsonl_path is not None:
            frame_sinks.append(JsonlSink(cfg.jsonl_path, stdout or sys.stdout))
        if cfg.log_path is not None:
            datagram_sinks.append(LogSink(cfg.log_path))
        if cfg.republish is not None:
            datagram_sinks.append(UdpRelaySink(cfg.republish))
    except SinkError as exc:
        log.error("%s", exc)
        _close(frame_sinks + datagram_sinks)
        return EXIT_SINK

    def on_datagram(raw: bytes, stamp: int) -> None:
        for sink in datagram_sinks:
            sink.datagram(raw, stamp)

    fanout = _Fanout(frame_sinks, AxisRemap(cfg.axis_remap))
    receiver = Receiver(
        cfg.listen,
        fanout,
        assembler=AssemblerState(expected_kinds=cfg.expected_kinds, character_id=cfg.character_id),
        on_datagram=on_datagram if datagram_sinks else None,
        queue_depth=cfg.queue_depth,
        reconnect=cfg.reconnect,
        idle_timeout_s=cfg.idle_timeout_s,
        bound=ready,
    )
    timer = None
    if cfg.duration_s is not None:
        timer = threading.Timer(cfg.duration_s, stop.set)
        timer.daemon = True
    previous = _install_signals(stop)
    status = EXIT_OK
    stats = None
    try:
        log.info("listening on %s; sinks: %s", cfg.listen, ", ".join(cfg.sinks))
        if timer is not None:
            timer.start()
        stats = receiver.run(stop)
    except SinkError as exc:
        log.error("%s", exc)
        status = EXIT_SINK
    except StreamError as exc:
        log.error("%s", exc)
        status = EXIT_NETWORK
    finally:
        if timer is not None:
            timer.cancel()
        if previous:
            for sig, handler in previous.items():
                signal.signal(sig, handler)
        if not _close(frame_sinks + datagram_sinks) and status == EXIT_OK:
            status = EXIT_SINK
    if stats is not None:
        summary = asdict(stats)
        summary.update(frames_written=fanout.frames, incomplete_frames=fanout.incomplete)
        log.info("stream summary %s", json.dumps(summary, sort_keys=True))
    return status


def _close(sinks) -> bool:
    ok = True
    for sink in sinks:
        try:
            sink.close()
        except SinkError as exc:
            log.error("%s", exc)
            ok = False
    return ok
