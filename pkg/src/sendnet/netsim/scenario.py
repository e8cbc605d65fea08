"""Scenario files.

Format (``#`` starts a comment, blank lines ignored)::

    [scenario]
    name = delegation_500
    seed = 7
    rate = 1             # messages sent per group per interval
    intervals = 1
    edges = 8            # edge nodes in the overlay
    k = 3                # edge nodes assigned to each client node
    message_size = 256
    crypto = auto        # auto | pairwise | group
    threshold = 50       # auto mode switches to group keys above this size
    settlement = on      # run per-segment relay settlement
    coefficient = 1.000  # relay cost coefficient
    reconnect = 100      # tick at which offline clients come back

    [group g1]
    members = 500
    delegation d1 = 450  # members attached to delegation node d1
    delegation d2 = 40
    other = 10           # members on their own local client node
    offline = 2          # of the "other" members, offline until reconnect

    [model]              # optional edge/broadcast time model
    messages = 1000
    nodes = 500
    k = 3
    t_m = 0.01
    horizon = 10
    latency = 0:0.1, 10:0.3       # piecewise-linear t:value breakpoints
    loss = 0:0.01
    retransmit = 0:1

Every problem is reported as ``ScenarioError`` carrying line and column.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .model import Breakpoints, RelayComplexityModel

_SECTION = re.compile(r"^\[\s*(scenario|model|group\s+(\S+))\s*\]$")
_KEY = re.compile(r"^([A-Za-z_][\w]*)(?:\s+([A-Za-z_][\w.-]*))?$")


class ScenarioError(ValueError):
    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
        self.message = message


@dataclass
class Group:
    name: str
    members: int
    delegation: dict[str, int] = field(default_factory=dict)
    other: int = 0
    offline: int = 0

    @property
    def delegation_nodes(self) -> int:
        return len(self.delegation)


@dataclass
class SimScenario:
    name: str = "scenario"
    seed: int = 0
    rate: int = 1
    intervals: int = 1
    edges: int = 8
    k: int = 3
    message_size: int = 256
    crypto: str = "auto"
    threshold: int = 50
    settlement: bool = True
    coefficient: int = 1000
    reconnect: int = 100
    groups: list[Group] = field(default_factory=list)
    model: RelayComplexityModel | None = None

    @property
    def messages_per_group(self) -> int:
        """T in the transmission formulas: messages per group over the whole run."""
        return self.rate * self.intervals


_INT_KEYS = {"seed": 0, "rate": 1, "intervals": 1, "edges": 1, "k": 1, "message_size": 1, "threshold": 1,
             "reconnect": 0}


def _int(value: str, line: int, col: int, minimum: int = 0) -> int:
    try:
        v = int(value.replace("_", ""))
    except ValueError:
        raise ScenarioError(line, col, f"expected an integer, got {value!r}") from None
    if v < minimum:
        raise ScenarioError(line, col, f"value must be >= {minimum}")
    return v


def _number(value: str, line: int, col: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ScenarioError(line, col, f"expected a number, got {value!r}") from None


def _coefficient(value: str, line: int, col: int) -> int:
    if not re.fullmatch(r"\d+(\.\d{1,3})?", value):
        raise ScenarioError(line, col, "coefficient needs at most three decimals")
    return int(Fraction(value) * 1000)


def _breakpoints(value: str, line: int, col: int) -> Breakpoints:
    points = []
    for part in value.split(","):
        t, sep, v = part.partition(":")
        if not sep:
            raise ScenarioError(line, col, f"breakpoint {part.strip()!r} is not t:value")
        points.append((_number(t.strip(), line, col), _number(v.strip(), line, col)))
    try:
        return Breakpoints(tuple(points))
    except ValueError as exc:
        raise ScenarioError(line, col, str(exc)) from None


def parse_scenario(source: str) -> SimScenario:
    sc = SimScenario()
    section: str | None = None
    group: Group | None = None
    group_line = 0
    model: dict[str, tuple[str, int, int]] = {}
    model_line = 0
    seen_groups: set[str] = set()

    def finish_group():
        if group is None:
            return
        if group.members < 0:
            raise ScenarioError(group_line, 1, f"group {group.name} has no members count")
        total = sum(group.delegation.values()) + group.other
        if total != group.members:
            raise ScenarioError(group_line, 1, f"group {group.name}: delegation + other = {total}, "
                                               f"members = {group.members}")
        if group.offline > group.other:
            raise ScenarioError(group_line, 1, f"group {group.name}: offline exceeds other")
        if group.members < 2:
            raise ScenarioError(group_line, 1, f"group {group.name} needs at least two members")
        sc.groups.append(group)

    for lineno, raw in enumerate(source.splitlines(), 1):
        body = raw.split("#", 1)[0].rstrip()
        if not body.strip():
            continue
        indent = len(body) - len(body.lstrip())
        stripped = body.strip()
        if stripped.startswith("["):
            m = _SECTION.match(stripped)
            if not m:
                raise ScenarioError(lineno, indent + 1, f"unknown section {stripped}")
            finish_group()
            group = None
            if m.group(2):
                name = m.group(2)
                if name in seen_groups:
                    raise ScenarioError(lineno, indent + 1, f"duplicate group {name}")
                seen_groups.add(name)
                group = Group(name, -1)  # -1 until a members line is seen
                group_line = lineno
                section = "group"
            else:
                section = m.group(1)
                if section == "model":
                    model_line = lineno
            continue
        key_part, eq, value = body.partition("=")
        if not eq:
            raise ScenarioError(lineno, indent + 1, "expected key = value")
        vcol = len(key_part) + 2 + (len(value) - len(value.lstrip()))
        value = value.strip()
        km = _KEY.match(key_part.strip())
        if section is None:
            raise ScenarioError(lineno, indent + 1, "key outside of a section")
        if not km:
            raise ScenarioError(lineno, indent + 1, f"bad key {key_part.strip()!r}")
        key, sub = km.group(1), km.group(2)
        if not value:
            raise ScenarioError(lineno, vcol, f"missing value for {key}")
        if section == "scenario":
            if sub:
                raise ScenarioError(lineno, indent + 1, f"unexpected qualifier on {key}")
            if key in _INT_KEYS:
                setattr(sc, key, _int(value, lineno, vcol, _INT_KEYS[key]))
            elif key == "name":
                sc.name = value
            elif key == "crypto":
                if value not in ("auto", "pairwise", "group"):
                    raise ScenarioError(lineno, vcol, "crypto must be auto, pairwise or group")
                sc.crypto = value
            elif key == "settlement":
                if value not in ("on", "off"):
                    raise ScenarioError(lineno, vcol, "settlement must be on or off")
                sc.settlement = value == "on"
            elif key == "coefficient":
                sc.coefficient = _coefficient(value, lineno, vcol)
            else:
                raise ScenarioError(lineno, indent + 1, f"unknown key {key}")
        elif section == "group":
            assert group is not None
            if key == "delegation":
                if not sub:
                    raise ScenarioError(lineno, indent + 1, "delegation needs a node name")
                if sub in group.delegation:
                    raise ScenarioError(lineno, indent + 1, f"duplicate delegation node {sub}")
                group.delegation[sub] = _int(value, lineno, vcol)
            elif sub:
                raise ScenarioError(lineno, indent + 1, f"unexpected qualifier on {key}")
            elif key in ("members", "other", "offline"):
                setattr(group, key, _int(value, lineno, vcol))
            else:
                raise ScenarioError(lineno, indent + 1, f"unknown key {key}")
        else:
            if sub:
                raise ScenarioError(lineno, indent + 1, f"unexpected qualifier on {key}")
            model[key] = (value, lineno, vcol)
    finish_group()

    if not sc.groups:
        raise ScenarioError(max(1, len(source.splitlines())), 1, "scenario defines no groups")
    if sc.k > sc.edges:
        raise ScenarioError(1, 1, f"k={sc.k} exceeds edges={sc.edges}")
    if model:
        sc.model = _build_model(model, model_line)
    return sc


def _build_model(fields: dict[str, tuple[str, int, int]], line: int) -> RelayComplexityModel:
    required = ("messages", "nodes", "k", "t_m", "horizon")
    for r in required:
        if r not in fields:
            raise ScenarioError(line, 1, f"model is missing {r}")
    known = set(required) | {"latency", "loss", "retransmit"}
    for key, (_, ln, col) in fields.items():
        if key not in known:
            raise ScenarioError(ln, 1, f"unknown model key {key}")

    def bp(name):
        if name not in fields:
            return Breakpoints(((0.0, 0.0),))
        return _breakpoints(*fields[name])

    try:
        return RelayComplexityModel(
            messages=_number(*fields["messages"]),
            nodes=_int(*fields["nodes"], minimum=1),
            k=_int(*fields["k"], minimum=1),
            t_m=_number(*fields["t_m"]),
            horizon=_number(*fields["horizon"]),
            latency=bp("latency"),
            loss=bp("loss"),
            retransmit=bp("retransmit"),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(line, 1, str(exc)) from None


def load_scenario(path: str | Path) -> SimScenario:
    return parse_scenario(Path(path).read_text())


def bundled_scenario(name: str) -> Path:
    return Path(__file__).resolve().parent.parent / "scenarios" / name
