"""Scenario files: a small sectioned ``key = value`` format.

Grammar (one construct per line, ``#`` starts a comment outside strings)::

    [section]            named table; each name may appear once
    [[ap]] / [[obstacle]]  one entry of a repeated table
    key = value          value is a JSON literal: number, "string",
                         true/false, or a [list]; a list may span lines
                         until its brackets balance

Every key is checked against the section schema, so a misspelled key is an
error rather than a silently ignored default. Diagnostics carry the line.
"""
from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field
from importlib import resources

from .abps import AbpsParams
from .broadcast import BackoffParams
from .lisp import LispParams
from .mipv6 import Mipv6Params
from .radio import LinkParams
from .world import AccessPoint, Obstacle, Point, WaypointPath, World

PROTOCOLS = ("abps", "mipv6", "lisp")


@dataclass(frozen=True)
class Diagnostic:
    line: int
    key: str
    message: str

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line else "file"
        return f"{where}: {self.key}: {self.message}"


class ScenarioError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(map(str, diagnostics)))


@dataclass
class ScenarioInfo:
    name: str = "scenario"
    protocols: tuple[str, ...] = PROTOCOLS


@dataclass
class RunParams:
    duration: float = field(default=1000.0, metadata={"min": 0, "exclusive": True})
    seeds: tuple[int, ...] = tuple(range(1, 11))
    dt: float = field(default=0.1, metadata={"min": 0, "exclusive": True})
    resolution: float = field(default=0.001, metadata={"min": 0, "exclusive": True})


@dataclass
class TrafficParams:
    interval: float = field(default=0.020, metadata={"min": 0, "exclusive": True})
    payload_len: int = field(default=160, metadata={"min": 0})
    start: float = field(default=10.0, metadata={"min": 0})


@dataclass
class AdhocConfig:
    radio_range: float = field(default=100.0, metadata={"min": 0, "exclusive": True})
    t_max: float = field(default=0.100, metadata={"min": 0, "exclusive": True})
    nodes: tuple[Point, ...] = ()
    gateway: str | None = None  # access point id the relay path leads to

    def backoff(self) -> BackoffParams:
        return BackoffParams(self.t_max, self.radio_range)


@dataclass
class ScenarioConfig:
    scenario: ScenarioInfo
    run: RunParams
    traffic: TrafficParams
    link: LinkParams
    abps: AbpsParams
    mipv6: Mipv6Params
    lisp: LispParams
    path: WaypointPath
    aps: tuple[AccessPoint, ...]
    obstacles: tuple[Obstacle, ...]
    adhoc: AdhocConfig | None = None

    def world(self) -> World:
        return World(self.aps, self.obstacles, self.path)

    def protocol_params(self, protocol: str):
        return getattr(self, protocol)


# sections backed by a flat dataclass
_TABLES = {
    "scenario": ScenarioInfo,
    "run": RunParams,
    "traffic": TrafficParams,
    "link": LinkParams,
    "abps": AbpsParams,
    "mipv6": Mipv6Params,
    "lisp": LispParams,
    "adhoc": AdhocConfig,
}
_PATH_KEYS = ("waypoints", "speed", "segment_speeds")
_AP_KEYS = ("id", "position", "range", "wlan", "wired_latency")
_OBSTACLE_KEYS = ("vertices",)
_ARRAYS = {"ap": _AP_KEYS, "obstacle": _OBSTACLE_KEYS}
_REQUIRED = ("run", "path")


# -- lexing -------------------------------------------------------------------------
@dataclass
class _Table:
    name: str
    line: int
    values: dict[str, tuple[object, int]] = field(default_factory=dict)


def _strip_comment(line: str) -> str:
    in_str = esc = False
    for i, ch in enumerate(line):
        if esc:
            esc = False
        elif ch == "\\" and in_str:
            esc = True
        elif ch == '"':
            in_str = not in_str
        elif ch == "#" and not in_str:
            return line[:i]
    return line


def _balance(text: str) -> int:
    depth, in_str, esc = 0, False, False
    for ch in text:
        if esc:
            esc = False
        elif ch == "\\" and in_str:
            esc = True
        elif ch == '"':
            in_str = not in_str
        elif not in_str and ch == "[":
            depth += 1
        elif not in_str and ch == "]":
            depth -= 1
    return depth


def _lex(text: str, diags: list[Diagnostic]) -> tuple[dict[str, _Table], dict[str, list[_Table]]]:
    tables: dict[str, _Table] = {}
    arrays: dict[str, list[_Table]] = {k: [] for k in _ARRAYS}
    current: _Table | None = None
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = _strip_comment(lines[i]).strip()
        i += 1
        if not line:
            continue
        if line.startswith("[[") and line.endswith("]]"):
            name = line[2:-2].strip()
            if name not in _ARRAYS:
                diags.append(Diagnostic(lineno, name, "unknown repeated table"))
                current = _Table(name, lineno)  # swallow its keys
                continue
            current = _Table(name, lineno)
            arrays[name].append(current)
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _TABLES and name != "path":
                diags.append(Diagnostic(lineno, name, "unknown section"))
                current = _Table(name, lineno)
                continue
            if name in tables:
                diags.append(Diagnostic(lineno, name, "duplicate section"))
            current = tables[name] = _Table(name, lineno)
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or not key:
            diags.append(Diagnostic(lineno, line, "expected 'key = value'"))
            continue
        raw = raw.strip()
        while _balance(raw) > 0 and i < len(lines):
            raw += " " + _strip_comment(lines[i]).strip()
            i += 1
        if current is None:
            diags.append(Diagnostic(lineno, key, "key outside of any section"))
            continue
        try:
            value = json.loads(raw)
        except json.JSONDecodeError as exc:
            diags.append(Diagnostic(lineno, key, f"bad value {raw!r}: {exc.msg}"))
            continue
        if key in current.values:
            diags.append(Diagnostic(lineno, key, "duplicate key"))
        current.values[key] = (value, lineno)
    return tables, arrays


# -- value checking --------------------------------------------------------------------
class _Bad(Exception):
    pass


def _number(v, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _Bad(f"expected a number, got {json.dumps(v)}")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise _Bad(f"expected an integer, got {v}")
        return int(v)
    if not math.isfinite(v):
        raise _Bad("must be finite")
    return float(v)


def _point(v) -> Point:
    if not isinstance(v, list) or len(v) != 2:
        raise _Bad("expected [x, y]")
    return Point(_number(v[0]), _number(v[1]))


def _points(v, minimum: int) -> tuple[Point, ...]:
    if not isinstance(v, list) or len(v) < minimum:
        raise _Bad(f"expected a list of at least {minimum} [x, y] points")
    return tuple(_point(p) for p in v)


def _check_bounds(value, meta) -> None:
    lo, hi, excl = meta.get("min"), meta.get("max"), meta.get("exclusive", False)
    if lo is not None and (value < lo or (excl and value == lo)):
        raise _Bad(f"must be {'>' if excl else '>='} {lo}, got {value}")
    if hi is not None and value > hi:
        raise _Bad(f"must be <= {hi}, got {value}")


def _convert(cls, name: str, hint, v):
    if name == "seeds":
        if isinstance(v, int) and not isinstance(v, bool):
            if v < 1:
                raise _Bad("seed count must be >= 1")
            return tuple(range(1, v + 1))
        if not isinstance(v, list) or not v:
            raise _Bad("expected a seed count or a non-empty list of seeds")
        seeds = tuple(_number(s, int) for s in v)
        if len(set(seeds)) != len(seeds):
            raise _Bad("seeds must be distinct")
        return seeds
    if name == "protocols":
        if not isinstance(v, list) or not all(p in PROTOCOLS for p in v):
            raise _Bad(f"expected a list drawn from {list(PROTOCOLS)}")
        return tuple(v)
    if name == "nodes":
        return _points(v, 0)
    if hint is bool:
        if not isinstance(v, bool):
            raise _Bad("expected true or false")
        return v
    if hint is int:
        return _number(v, int)
    if hint is float:
        return _number(v)
    if hint in (str, str | None):
        if not isinstance(v, str):
            raise _Bad("expected a string")
        return v
    raise AssertionError(f"no converter for {cls.__name__}.{name}")


def _build_table(cls, table: _Table | None, diags: list[Diagnostic]):
    if table is None:
        return cls()
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, (v, lineno) in table.values.items():
        f = fields.get(key)
        if f is None:
            diags.append(Diagnostic(lineno, key, f"unknown key in [{table.name}]"))
            continue
        try:
            value = _convert(cls, key, hints[key], v)
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                _check_bounds(value, f.metadata)
        except _Bad as exc:
            diags.append(Diagnostic(lineno, key, str(exc)))
            continue
        kwargs[key] = value
    try:
        obj = cls(**kwargs)
        if hasattr(obj, "validate"):
            obj.validate()
    except ValueError as exc:
        diags.append(Diagnostic(table.line, table.name, str(exc)))
        return None
    return obj


def _unknown_keys(table: _Table, allowed, diags) -> None:
    for key, (_, lineno) in table.values.items():
        if key not in allowed:
            diags.append(Diagnostic(lineno, key, f"unknown key in [{table.name}]"))


def _get(table: _Table, key: str, conv, diags, required: bool = True, default=None):
    if key not in table.values:
        if required:
            diags.append(Diagnostic(table.line, key, f"missing in [{table.name}]"))
            raise _Bad
        return default
    v, lineno = table.values[key]
    try:
        return conv(v)
    except _Bad as exc:
        diags.append(Diagnostic(lineno, key, str(exc)))
        raise _Bad from None


def _positive(v) -> float:
    x = _number(v)
    if not x > 0:
        raise _Bad(f"must be > 0, got {x}")
    return x


def _nonneg(v) -> float:
    x = _number(v)
    if x < 0:
        raise _Bad(f"must be >= 0, got {x}")
    return x


def _string(v) -> str:
    if not isinstance(v, str) or not v:
        raise _Bad("expected a non-empty string")
    return v


def _speeds(v):
    if not isinstance(v, list):
        raise _Bad("expected a list of speeds (null keeps the path speed)")
    return tuple(None if s is None else _positive(s) for s in v)


def _build_path(table: _Table | None, diags) -> WaypointPath | None:
    if table is None:
        return None
    _unknown_keys(table, _PATH_KEYS, diags)
    try:
        pts = _get(table, "waypoints", lambda v: _points(v, 2), diags)
        speed = _get(table, "speed", _positive, diags)
        seg = _get(table, "segment_speeds", _speeds, diags, required=False)
    except _Bad:
        return None
    try:
        return WaypointPath(pts, speed, seg)
    except ValueError as exc:
        line = table.values.get("segment_speeds", (None, table.line))[1]
        diags.append(Diagnostic(line, "segment_speeds", str(exc)))
        return None


def _build_ap(table: _Table, diags) -> AccessPoint | None:
    _unknown_keys(table, _AP_KEYS, diags)
    try:
        ap_id = _get(table, "id", _string, diags)
        pos = _get(table, "position", _point, diags)
        rng = _get(table, "range", _positive, diags)
        wlan = _get(table, "wlan", _string, diags)
        wired = _get(table, "wired_latency", _nonneg, diags, required=False)
    except _Bad:
        return None
    return AccessPoint(ap_id, pos, rng, wlan, wired)


def _build_obstacle(table: _Table, diags) -> Obstacle | None:
    _unknown_keys(table, _OBSTACLE_KEYS, diags)
    try:
        verts = _get(table, "vertices", lambda v: _points(v, 3), diags)
    except _Bad:
        return None
    try:
        return Obstacle(verts)
    except ValueError as exc:
        diags.append(Diagnostic(table.values["vertices"][1], "vertices", str(exc)))
        return None


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse and fully validate a scenario; raises `ScenarioError` listing every problem."""
    diags: list[Diagnostic] = []
    tables, arrays = _lex(text, diags)
    for name in _REQUIRED:
        if name not in tables:
            diags.append(Diagnostic(0, name, "missing section"))
    if not arrays["ap"]:
        diags.append(Diagnostic(0, "ap", "at least one [[ap]] is required"))

    built = {name: _build_table(cls, tables.get(name), diags)
             for name, cls in _TABLES.items() if name != "adhoc"}
    adhoc = _build_table(AdhocConfig, tables["adhoc"], diags) if "adhoc" in tables else None
    path = _build_path(tables.get("path"), diags)
    aps = [_build_ap(t, diags) for t in arrays["ap"]]
    obstacles = [_build_obstacle(t, diags) for t in arrays["obstacle"]]

    seen_ids: dict[str, int] = {}
    seen_wlans: dict[str, int] = {}
    for t, ap in zip(arrays["ap"], aps):
        if ap is None:
            continue
        if ap.id in seen_ids:
            diags.append(Diagnostic(t.values["id"][1], "id", f"duplicate access point {ap.id!r}"))
        if ap.wlan in seen_wlans:
            diags.append(Diagnostic(t.values["wlan"][1], "wlan", f"WLAN {ap.wlan!r} already used"))
        seen_ids[ap.id] = seen_wlans[ap.wlan] = t.line
    if adhoc is not None and adhoc.gateway is not None and adhoc.gateway not in seen_ids:
        line = tables["adhoc"].values["gateway"][1]
        diags.append(Diagnostic(line, "gateway", f"no access point with id {adhoc.gateway!r}"))
    if diags:
        raise ScenarioError(sorted(diags, key=lambda d: d.line))
    return ScenarioConfig(built["scenario"], built["run"], built["traffic"], built["link"],
                          built["abps"], built["mipv6"], built["lisp"], path, tuple(aps),
                          tuple(obstacles), adhoc)


def load_scenario(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def bundled_text(name: str = "smart_shire.toml") -> str:
    return resources.files("abpsim.scenarios").joinpath(name).read_text(encoding="utf-8")


def load_bundled(name: str = "smart_shire.toml") -> ScenarioConfig:
    return parse_scenario(bundled_text(name))


# -- printing ----------------------------------------------------------------------------
def _lit(v) -> str:
    if isinstance(v, tuple):
        v = [list(x) if isinstance(x, tuple) else x for x in v]
    return json.dumps(v)


def print_scenario(cfg: ScenarioConfig) -> str:
    """Serialize ``cfg`` so that ``parse_scenario`` returns an equal config."""
    out: list[str] = []
    for name in _TABLES:
        obj = getattr(cfg, name)
        if obj is None:
            continue
        out.append(f"[{name}]")
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if v is not None:
                out.append(f"{f.name} = {_lit(v)}")
        out.append("")
    p = cfg.path
    out += ["[path]", f"speed = {_lit(p.speed)}", f"waypoints = {_lit(p.waypoints)}"]
    if any(s != p.speed for s in p.segment_speeds):
        out.append(f"segment_speeds = {_lit(p.segment_speeds)}")
    out.append("")
    for ap in cfg.aps:
        out += ["[[ap]]", f"id = {_lit(ap.id)}", f"position = {_lit(ap.position)}",
                f"range = {_lit(ap.range)}", f"wlan = {_lit(ap.wlan)}"]
        if ap.wired_latency is not None:
            out.append(f"wired_latency = {_lit(ap.wired_latency)}")
        out.append("")
    for ob in cfg.obstacles:
        out += ["[[obstacle]]", f"vertices = {_lit(ob.vertices)}", ""]
    return "\n".join(out)
