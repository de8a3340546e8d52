"""Bridge configuration: flat ``key = value`` lines with dotted section names.

Example::

    # listen for the suit on UDP
    listen = udp://0.0.0.0:9763
    character_id = 0
    sinks.jsonl.path = frames.jsonl
    sinks.log.path = session.xbrlog
    sinks.udp.endpoint = udp://10.0.0.5:9764
    queue_depth = 256

Flags override file values key by key. ``sinks.jsonl.path = -`` means
stdout and ``none`` disables a sink.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Mapping, Optional

from .kinematics import OutOfRange, default_scale
from .mapper import AxisRemap
from .protocol import PayloadKind
from .stream import DEFAULT_PORT, DEFAULT_QUEUE_DEPTH, Endpoint, ReconnectPolicy

CONFIG_ENV = "XSBRIDGE_CONFIG"
STDOUT = "-"
_OFF = ("", "none", "off")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass(frozen=True)
class BridgeConfig:
    listen: Endpoint = Endpoint("udp", "0.0.0.0", DEFAULT_PORT)
    character_id: Optional[int] = None
    jsonl_path: Optional[str] = STDOUT
    log_path: Optional[str] = None
    republish: Optional[Endpoint] = None
    urdf_path: Optional[str] = None
    urdf_height_m: float = 1.70
    axis_remap: str = "x,y,z"
    queue_depth: int = DEFAULT_QUEUE_DEPTH
    reconnect: ReconnectPolicy = ReconnectPolicy()
    expected_kinds: Optional[frozenset] = None
    duration_s: Optional[float] = None
    idle_timeout_s: Optional[float] = None

    @property
    def sinks(self) -> tuple[str, ...]:
        names = []
        if self.jsonl_path is not None:
            names.append("jsonl")
        if self.log_path is not None:
            names.append("log")
        if self.republish is not None:
            names.append("udp")
        return tuple(names)


def _int(key, v, lo=None, hi=None):
    try:
        n = int(v, 0)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {v!r}") from None
    if (lo is not None and n < lo) or (hi is not None and n > hi):
        raise ConfigError(key, f"{n} outside {lo}..{hi if hi is not None else ''}")
    return n


def _float(key, v, positive=False):
    try:
        x = float(v)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {v!r}") from None
    if x != x or x in (float("inf"), float("-inf")) or x < 0 or (positive and x == 0):
        raise ConfigError(key, f"{v!r} must be a finite {'positive' if positive else 'non-negative'} number")
    return x


def _endpoint(key, v):
    try:
        return Endpoint.parse(v)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def _optional_path(v):
    return None if v.strip().lower() in _OFF else v


def _kinds(key, v):
    if v.strip().lower() in _OFF + ("auto",):
        return None
    out = set()
    for name in v.split(","):
        try:
            out.add(PayloadKind[name.strip()])
        except KeyError:
            raise ConfigError(key, f"unknown payload kind {name.strip()!r}") from None
    return frozenset(out)


def _remap(key, v):
    try:
        return AxisRemap(v).spec
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def _height(key, v):
    h = _float(key, v, positive=True)
    try:
        default_scale(h)
    except OutOfRange as exc:
        raise ConfigError(key, str(exc)) from None
    return h


# key -> (BridgeConfig field, converter)
_KEYS = {
    "listen": ("listen", _endpoint),
    "character_id": ("character_id", lambda k, v: None if v.lower() in _OFF + ("any",) else _int(k, v, 0, 255)),
    "sinks.jsonl.path": ("jsonl_path", lambda k, v: _optional_path(v)),
    "sinks.log.path": ("log_path", lambda k, v: _optional_path(v)),
    "sinks.udp.endpoint": ("republish", lambda k, v: None if v.lower() in _OFF else _endpoint(k, v)),
    "urdf.path": ("urdf_path", lambda k, v: _optional_path(v)),
    "urdf.height": ("urdf_height_m", _height),
    "axis_remap": ("axis_remap", _remap),
    "queue_depth": ("queue_depth", lambda k, v: _int(k, v, 1)),
    "expected_kinds": ("expected_kinds", _kinds),
    "run.duration_s": ("duration_s", lambda k, v: _float(k, v)),
    "run.idle_timeout_s": ("idle_timeout_s", lambda k, v: _float(k, v, positive=True)),
}
# listen.* and reconnect.* are assembled from parts
_PARTS = {"listen.transport", "listen.host", "listen.port", "reconnect.attempts", "reconnect.delay_s"}


def parse_lines(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        if key not in _KEYS and key not in _PARTS:
            raise ConfigError(key, "unknown key")
        values[key] = value.strip()
    return values


def parse_config(text: str = "", overrides: Optional[Mapping[str, Optional[str]]] = None) -> BridgeConfig:
    """Build a config from file text, then apply flag overrides (None = unset)."""
    values = parse_lines(text)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _KEYS and key not in _PARTS:
            raise ConfigError(key, "unknown key")
        if key == "listen":
            # a full URL replaces any per-part file entries
            for part in ("listen.transport", "listen.host", "listen.port"):
                values.pop(part, None)
        values[key] = str(value)

    fields = {}
    for key, (name, convert) in _KEYS.items():
        if key in values:
            fields[name] = convert(key, values[key])

    listen = fields.get("listen", BridgeConfig.listen)
    if any(p in values for p in ("listen.transport", "listen.host", "listen.port")):
        transport = values.get("listen.transport", listen.transport.value).lower()
        if transport not in ("udp", "tcp"):
            raise ConfigError("listen.transport", f"expected udp or tcp, got {transport!r}")
        port = _int("listen.port", values["listen.port"], 1, 65535) if "listen.port" in values else listen.port
        fields["listen"] = Endpoint(transport, values.get("listen.host", listen.host), port)

    reconnect = BridgeConfig.reconnect
    if "reconnect.attempts" in values or "reconnect.delay_s" in values:
        reconnect = ReconnectPolicy(
            _int("reconnect.attempts", values["reconnect.attempts"], 0) if "reconnect.attempts" in values
            else reconnect.attempts,
            _float("reconnect.delay_s", values["reconnect.delay_s"]) if "reconnect.delay_s" in values
            else reconnect.delay_s,
        )
        fields["reconnect"] = reconnect

    cfg = BridgeConfig(**fields)
    if not cfg.sinks:
        raise ConfigError("sinks", "at least one sink must be configured")
    paths = [(k, p) for k, p in (("sinks.jsonl.path", cfg.jsonl_path), ("sinks.log.path", cfg.log_path),
                                 ("urdf.path", cfg.urdf_path)) if p is not None and p != STDOUT]
    seen = {}
    for key, p in paths:
        real = os.path.realpath(p)
        if real in seen:
            raise ConfigError(key, f"path {p!r} is also used by {seen[real]}")
        seen[real] = key
    return cfg


def load_config(path: Optional[str], overrides: Optional[Mapping[str, Optional[str]]] = None,
                environ: Mapping[str, str] = os.environ) -> BridgeConfig:
    """Read ``path`` (or ``$XSBRIDGE_CONFIG``) if given, then parse."""
    path = path or environ.get(CONFIG_ENV)
    text = ""
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from None
    return parse_config(text, overrides)
