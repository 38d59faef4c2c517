"""Network model: EPANET INP subset parsing/writing, validation and parameter overlay.

Units are SI throughout: flows in L/s, heads and elevations in m, lengths in m,
diameters in mm and Darcy-Weisbach roughness in mm.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

if TYPE_CHECKING:
    from .rules import ParameterSpace

HEADLOSS_FORMULAS = ("darcy-weisbach", "hazen-williams")

SUPPORTED_SECTIONS = (
    "TITLE", "JUNCTIONS", "RESERVOIRS", "PIPES", "VALVES", "STATUS", "DEMANDS",
    "PATTERNS", "EMITTERS", "OPTIONS", "TIMES", "COORDINATES", "TAGS", "END",
)
# Known EPANET sections outside the supported subset; reported, never silently dropped.
SKIPPED_SECTIONS = (
    "TANKS", "PUMPS", "CONTROLS", "RULES", "QUALITY", "SOURCES", "REACTIONS",
    "MIXING", "ENERGY", "CURVES", "REPORT", "LABELS", "BACKDROP", "VERTICES",
)

# parameter name -> (element kind, attribute on that element's dataclass)
PARAMETER_TARGETS = {
    "roughness": ("pipe", "roughness"),
    "minor_loss": ("pipe", "minor_loss_k"),
    "diameter": ("pipe", "diameter"),
    "base_demand": ("junction", "base_demand"),
    "leak_coeff": ("junction", "emitter_coeff"),
    "valve_loss": ("valve", "loss_coeff_k"),
}


class InpError(ValueError):
    """Malformed or inconsistent INP document."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class InpSyntaxError(InpError):
    pass


class UnknownSectionError(InpSyntaxError):
    pass


class DuplicateIdError(InpError):
    pass


class DanglingReferenceError(InpError):
    def __init__(self, node_id: str, message: str, line: int | None = None):
        self.node_id = node_id
        super().__init__(message, line)


class ParameterError(ValueError):
    """A parameter vector does not fit its space or the model."""


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # ERROR | WARNING | INFO
    element_id: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity} {self.element_id} {self.message}"


@dataclass(frozen=True)
class Junction:
    id: str
    elevation: float
    base_demand: float = 0.0
    pattern_id: str | None = None
    emitter_coeff: float = 0.0
    zone: str | None = None
    age_years: float | None = None


@dataclass(frozen=True)
class Reservoir:
    id: str
    head: float
    head_pattern: str | None = None


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float
    diameter: float
    roughness: float
    minor_loss_k: float = 0.0
    status: str = "open"
    material: str | None = None
    age_years: float | None = None


@dataclass(frozen=True)
class Valve:
    id: str
    from_node: str
    to_node: str
    diameter: float
    kind: str = "TCV"
    loss_coeff_k: float = 0.0
    status: str = "open"
    setting: float = 0.0  # kept for non-TCV round trips; hydraulics ignore it


@dataclass(frozen=True)
class HydraulicOptions:
    headloss: str = "darcy-weisbach"
    duration: float = 0.0
    hydraulic_step: float = 3600.0
    pattern_step: float = 3600.0
    emitter_exponent: float = 0.5


@dataclass(frozen=True)
class NetworkModel:
    junctions: tuple[Junction, ...] = ()
    reservoirs: tuple[Reservoir, ...] = ()
    pipes: tuple[Pipe, ...] = ()
    valves: tuple[Valve, ...] = ()
    patterns: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    options: HydraulicOptions = field(default_factory=HydraulicOptions)
    title: str = ""
    coordinates: Mapping[str, tuple[float, float]] = field(default_factory=dict, compare=False)
    notes: tuple[Diagnostic, ...] = field(default=(), compare=False)

    @cached_property
    def junction_index(self) -> dict[str, Junction]:
        return {j.id: j for j in self.junctions}

    @cached_property
    def reservoir_index(self) -> dict[str, Reservoir]:
        return {r.id: r for r in self.reservoirs}

    @cached_property
    def pipe_index(self) -> dict[str, Pipe]:
        return {p.id: p for p in self.pipes}

    @cached_property
    def valve_index(self) -> dict[str, Valve]:
        return {v.id: v for v in self.valves}

    @property
    def node_ids(self) -> list[str]:
        return [j.id for j in self.junctions] + [r.id for r in self.reservoirs]

    @property
    def links(self) -> tuple[Pipe | Valve, ...]:
        return self.pipes + self.valves

    def element(self, kind: str, element_id: str):
        index = {
            "junction": self.junction_index,
            "reservoir": self.reservoir_index,
            "pipe": self.pipe_index,
            "valve": self.valve_index,
        }[kind]
        return index[element_id]

    def degrees(self) -> dict[str, int]:
        """Incident link count per node (all links, whatever their status)."""
        deg = {n: 0 for n in self.node_ids}
        for link in self.links:
            deg[link.from_node] = deg.get(link.from_node, 0) + 1
            deg[link.to_node] = deg.get(link.to_node, 0) + 1
        return deg


# ---------------------------------------------------------------------------
# parsing


def _parse_float(token: str, lineno: int, column: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise InpSyntaxError(f"expected a number, got {token!r}", lineno, column) from None
    if not math.isfinite(value):
        raise InpSyntaxError(f"non-finite number {token!r}", lineno, column)
    return value


_TIME_UNITS = {"SEC": 1, "SECONDS": 1, "MIN": 60, "MINUTES": 60, "HOURS": 3600, "HOUR": 3600,
               "HRS": 3600, "DAYS": 86400, "DAY": 86400}


def parse_time(tokens: Sequence[str], lineno: int = 0) -> float:
    """EPANET clock value: ``H:MM[:SS]`` or a number with an optional unit (default hours)."""
    if not tokens:
        raise InpSyntaxError("missing time value", lineno)
    value = tokens[0]
    if ":" in value:
        parts = value.split(":")
        if len(parts) not in (2, 3):
            raise InpSyntaxError(f"bad time {value!r}", lineno)
        nums = [_parse_float(p, lineno, 0) for p in parts]
        seconds = nums[0] * 3600 + nums[1] * 60 + (nums[2] if len(parts) == 3 else 0.0)
        return seconds
    number = _parse_float(value, lineno, 0)
    unit = tokens[1].upper() if len(tokens) > 1 else "HOURS"
    if unit not in _TIME_UNITS:
        raise InpSyntaxError(f"unknown time unit {tokens[1]!r}", lineno)
    return number * _TIME_UNITS[unit]


def format_time(seconds: float) -> str:
    total = int(round(seconds))
    if total != seconds:
        return f"{seconds!r} SEC"
    return f"{total // 3600}:{(total % 3600) // 60:02d}:{total % 60:02d}"


_SECTION_RE = re.compile(r"^\[([A-Za-z_]+)\]\s*$")
_STATUS = {"OPEN": "open", "CLOSED": "closed"}


def parse_inp(text: str) -> NetworkModel:
    """Parse an INP document restricted to the supported section subset.

    Known-but-unsupported sections are skipped and listed in ``model.notes``.
    Raises :class:`InpError` subclasses on syntax errors, duplicate ids,
    dangling references and unknown section tokens.
    """
    section: str | None = None
    title_lines: list[str] = []
    junctions: dict[str, dict] = {}
    reservoirs: dict[str, dict] = {}
    pipes: dict[str, dict] = {}
    valves: dict[str, dict] = {}
    patterns: dict[str, list[float]] = {}
    pattern_lines: dict[str, int] = {}
    demand_rows: dict[str, list[tuple[float, str | None, int]]] = defaultdict(list)
    emitters: list[tuple[str, float, int]] = []
    statuses: list[tuple[str, str, int]] = []
    tags: list[tuple[str, str, dict[str, str], int]] = []
    coordinates: dict[str, tuple[float, float]] = {}
    options: dict[str, object] = {}
    notes: list[Diagnostic] = []
    skipped: set[str] = set()
    lines_of: dict[tuple[str, str], int] = {}

    def new_id(kind: str, table: dict, ident: str, lineno: int) -> None:
        node_kinds = ("junction", "reservoir")
        clash = ident in table
        if kind in node_kinds:
            clash = clash or ident in junctions or ident in reservoirs
        else:
            clash = clash or ident in pipes or ident in valves
        if clash:
            raise DuplicateIdError(f"duplicate {kind} id {ident!r}", lineno)
        lines_of[(kind, ident)] = lineno

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            m = _SECTION_RE.match(line)
            if not m:
                raise InpSyntaxError(f"malformed section header {line!r}", lineno, 1)
            name = m.group(1).upper()
            if name in SUPPORTED_SECTIONS:
                section = name
            elif name in SKIPPED_SECTIONS:
                section = "__skip__"
                if name not in skipped:
                    skipped.add(name)
                    notes.append(Diagnostic("WARNING", name, f"unsupported section [{name}] skipped"))
            else:
                raise UnknownSectionError(f"unknown section [{name}]", lineno, 1)
            if section == "END":
                break
            continue
        if section is None:
            raise InpSyntaxError("data outside of any section", lineno, 1)
        if section == "__skip__":
            continue
        if section == "TITLE":
            title_lines.append(raw.strip())
            continue

        tokens = line.split()
        cols = _columns(raw, tokens)

        def need(n: int) -> None:
            if len(tokens) < n:
                raise InpSyntaxError(
                    f"[{section}] row needs at least {n} fields, got {len(tokens)}", lineno,
                    cols[-1] if cols else 1)

        def num(i: int) -> float:
            return _parse_float(tokens[i], lineno, cols[i])

        if section == "JUNCTIONS":
            need(2)
            new_id("junction", junctions, tokens[0], lineno)
            junctions[tokens[0]] = dict(
                id=tokens[0], elevation=num(1),
                base_demand=num(2) if len(tokens) > 2 else 0.0,
                pattern_id=tokens[3] if len(tokens) > 3 else None,
            )
        elif section == "RESERVOIRS":
            need(2)
            new_id("reservoir", reservoirs, tokens[0], lineno)
            reservoirs[tokens[0]] = dict(
                id=tokens[0], head=num(1), head_pattern=tokens[2] if len(tokens) > 2 else None)
        elif section == "PIPES":
            need(6)
            new_id("pipe", pipes, tokens[0], lineno)
            status = "open"
            if len(tokens) > 7:
                token = tokens[7].upper()
                if token not in _STATUS:
                    raise InpSyntaxError(f"unsupported pipe status {tokens[7]!r}", lineno, cols[7])
                status = _STATUS[token]
            pipes[tokens[0]] = dict(
                id=tokens[0], from_node=tokens[1], to_node=tokens[2], length=num(3),
                diameter=num(4), roughness=num(5),
                minor_loss_k=num(6) if len(tokens) > 6 else 0.0, status=status,
            )
        elif section == "VALVES":
            need(6)
            new_id("valve", valves, tokens[0], lineno)
            kind = tokens[4].upper()
            setting = num(5)
            minor = num(6) if len(tokens) > 6 else 0.0
            valves[tokens[0]] = dict(
                id=tokens[0], from_node=tokens[1], to_node=tokens[2], diameter=num(3),
                kind=kind,
                loss_coeff_k=setting if kind == "TCV" else minor,
                setting=0.0 if kind == "TCV" else setting,
            )
        elif section == "STATUS":
            need(2)
            token = tokens[1].upper()
            if token not in _STATUS:
                raise InpSyntaxError(f"unsupported status {tokens[1]!r}", lineno, cols[1])
            statuses.append((tokens[0], _STATUS[token], lineno))
        elif section == "DEMANDS":
            need(2)
            demand_rows[tokens[0]].append((num(1), tokens[2] if len(tokens) > 2 else None, lineno))
        elif section == "PATTERNS":
            need(1)
            pid = tokens[0]
            pattern_lines.setdefault(pid, lineno)
            patterns.setdefault(pid, []).extend(num(i) for i in range(1, len(tokens)))
        elif section == "EMITTERS":
            need(2)
            emitters.append((tokens[0], num(1), lineno))
        elif section == "OPTIONS":
            _parse_option(tokens, cols, lineno, options, notes)
        elif section == "TIMES":
            _parse_times(tokens, lineno, options, notes)
        elif section == "COORDINATES":
            need(3)
            coordinates[tokens[0]] = (num(1), num(2))
        elif section == "TAGS":
            need(3)
            kind = tokens[0].upper()
            if kind not in ("NODE", "LINK"):
                raise InpSyntaxError(f"tag kind must be NODE or LINK, got {tokens[0]!r}", lineno, cols[0])
            pairs: dict[str, str] = {}
            for tok, col in zip(tokens[2:], cols[2:]):
                if "=" not in tok:
                    raise InpSyntaxError(f"tag must be key=value, got {tok!r}", lineno, col)
                key, value = tok.split("=", 1)
                pairs[key.lower()] = value
            tags.append((kind, tokens[1], pairs, lineno))

    # demands override junction rows
    for jid, rows in demand_rows.items():
        if jid not in junctions:
            raise DanglingReferenceError(jid, f"[DEMANDS] references unknown junction {jid!r}", rows[0][2])
        pats = {p for _, p, _ in rows}
        if len(pats) > 1:
            raise InpSyntaxError(
                f"junction {jid!r} has demand categories with different patterns (unsupported)", rows[1][2])
        junctions[jid]["base_demand"] = sum(d for d, _, _ in rows)
        junctions[jid]["pattern_id"] = rows[0][1]

    for jid, coeff, lineno in emitters:
        if jid not in junctions:
            raise DanglingReferenceError(jid, f"[EMITTERS] references unknown junction {jid!r}", lineno)
        junctions[jid]["emitter_coeff"] = coeff

    for lid, status, lineno in statuses:
        target = pipes.get(lid) or valves.get(lid)
        if target is None:
            raise DanglingReferenceError(lid, f"[STATUS] references unknown link {lid!r}", lineno)
        target["status"] = status

    for kind, ident, pairs, lineno in tags:
        if kind == "NODE":
            if ident in junctions:
                allowed, target = {"zone": str, "age_years": float, "age": float}, junctions[ident]
            elif ident in reservoirs:
                allowed, target = {}, reservoirs[ident]
            else:
                raise DanglingReferenceError(ident, f"[TAGS] references unknown node {ident!r}", lineno)
        else:
            if ident in pipes:
                allowed, target = {"material": str, "age_years": float, "age": float}, pipes[ident]
            elif ident in valves:
                allowed, target = {}, valves[ident]
            else:
                raise DanglingReferenceError(ident, f"[TAGS] references unknown link {ident!r}", lineno)
        for key, value in pairs.items():
            if key not in allowed:
                raise InpSyntaxError(f"tag key {key!r} not applicable to {ident!r}", lineno)
            attr = "age_years" if key == "age" else key
            target[attr] = _parse_float(value, lineno, 0) if allowed[key] is float else value

    for link_table, kind in ((pipes, "pipe"), (valves, "valve")):
        for lid, row in link_table.items():
            for end in ("from_node", "to_node"):
                nid = row[end]
                if nid not in junctions and nid not in reservoirs:
                    raise DanglingReferenceError(
                        nid, f"{kind} {lid!r} references unknown node {nid!r}", lines_of[(kind, lid)])

    for jid, row in junctions.items():
        pid = row.get("pattern_id")
        if pid is not None and pid not in patterns:
            raise DanglingReferenceError(pid, f"junction {jid!r} references unknown pattern {pid!r}",
                                         lines_of[("junction", jid)])
    for rid, row in reservoirs.items():
        pid = row.get("head_pattern")
        if pid is not None and pid not in patterns:
            raise DanglingReferenceError(pid, f"reservoir {rid!r} references unknown pattern {pid!r}",
                                         lines_of[("reservoir", rid)])

    for jid, coordinate in coordinates.items():
        if jid not in junctions and jid not in reservoirs:
            notes.append(Diagnostic("WARNING", jid, "coordinates for unknown node ignored"))
    coordinates = {k: v for k, v in coordinates.items() if k in junctions or k in reservoirs}

    return NetworkModel(
        junctions=tuple(Junction(**row) for row in junctions.values()),
        reservoirs=tuple(Reservoir(**row) for row in reservoirs.values()),
        pipes=tuple(Pipe(**row) for row in pipes.values()),
        valves=tuple(Valve(**row) for row in valves.values()),
        patterns={k: tuple(v) for k, v in patterns.items()},
        options=HydraulicOptions(**options),
        title="\n".join(title_lines),
        coordinates=coordinates,
        notes=tuple(notes),
    )


def _columns(raw: str, tokens: list[str]) -> list[int]:
    cols, pos = [], 0
    for tok in tokens:
        pos = raw.index(tok, pos)
        cols.append(pos + 1)
        pos += len(tok)
    return cols


def _parse_option(tokens, cols, lineno, options, notes) -> None:
    key = tokens[0].upper()
    if key == "UNITS":
        if len(tokens) < 2 or tokens[1].upper() != "LPS":
            got = tokens[1] if len(tokens) > 1 else ""
            raise InpSyntaxError(f"flow units must be LPS, got {got!r}", lineno, cols[1] if len(cols) > 1 else 1)
    elif key == "HEADLOSS":
        formula = tokens[1].upper() if len(tokens) > 1 else ""
        mapping = {"D-W": "darcy-weisbach", "H-W": "hazen-williams"}
        if formula not in mapping:
            raise InpSyntaxError(f"unsupported headloss formula {formula!r}", lineno,
                                 cols[1] if len(cols) > 1 else 1)
        options["headloss"] = mapping[formula]
    elif key == "EMITTER" and len(tokens) >= 3 and tokens[1].upper() == "EXPONENT":
        options["emitter_exponent"] = _parse_float(tokens[2], lineno, cols[2])
    else:
        notes.append(Diagnostic("INFO", "OPTIONS", f"option {' '.join(tokens)!r} ignored"))


def _parse_times(tokens, lineno, options, notes) -> None:
    upper = [t.upper() for t in tokens]
    if upper[0] == "DURATION":
        options["duration"] = parse_time(tokens[1:], lineno)
    elif upper[:2] == ["HYDRAULIC", "TIMESTEP"]:
        options["hydraulic_step"] = parse_time(tokens[2:], lineno)
    elif upper[:2] == ["PATTERN", "TIMESTEP"]:
        options["pattern_step"] = parse_time(tokens[2:], lineno)
    else:
        notes.append(Diagnostic("INFO", "TIMES", f"time option {' '.join(tokens)!r} ignored"))


# ---------------------------------------------------------------------------
# writing


def _fmt(x: float) -> str:
    return repr(float(x))


def write_inp(model: NetworkModel) -> str:
    """Render ``model`` as an INP document that re-parses to an equal model."""
    out: list[str] = ["[TITLE]"]
    if model.title:
        out.extend(model.title.splitlines())
    out += ["", "[JUNCTIONS]", ";ID\tElev\tDemand\tPattern"]
    for j in model.junctions:
        row = [j.id, _fmt(j.elevation), _fmt(j.base_demand)]
        if j.pattern_id is not None:
            row.append(j.pattern_id)
        out.append("\t".join(row))
    out += ["", "[RESERVOIRS]", ";ID\tHead\tPattern"]
    for r in model.reservoirs:
        row = [r.id, _fmt(r.head)] + ([r.head_pattern] if r.head_pattern is not None else [])
        out.append("\t".join(row))
    out += ["", "[PIPES]", ";ID\tNode1\tNode2\tLength\tDiameter\tRoughness\tMinorLoss\tStatus"]
    for p in model.pipes:
        out.append("\t".join([p.id, p.from_node, p.to_node, _fmt(p.length), _fmt(p.diameter),
                              _fmt(p.roughness), _fmt(p.minor_loss_k), p.status.capitalize()]))
    out += ["", "[VALVES]", ";ID\tNode1\tNode2\tDiameter\tType\tSetting\tMinorLoss"]
    for v in model.valves:
        if v.kind == "TCV":
            setting, minor = v.loss_coeff_k, 0.0
        else:
            setting, minor = v.setting, v.loss_coeff_k
        out.append("\t".join([v.id, v.from_node, v.to_node, _fmt(v.diameter), v.kind,
                              _fmt(setting), _fmt(minor)]))
    closed_valves = [v for v in model.valves if v.status == "closed"]
    out += ["", "[STATUS]"]
    for v in closed_valves:
        out.append(f"{v.id}\tClosed")
    out += ["", "[EMITTERS]"]
    for j in model.junctions:
        if j.emitter_coeff:
            out.append(f"{j.id}\t{_fmt(j.emitter_coeff)}")
    out += ["", "[PATTERNS]"]
    for pid, mults in model.patterns.items():
        if not mults:
            out.append(pid)
        for start in range(0, len(mults), 6):
            out.append("\t".join([pid] + [_fmt(m) for m in mults[start:start + 6]]))
    out += ["", "[TAGS]"]
    for j in model.junctions:
        pairs = []
        if j.zone is not None:
            pairs.append(f"zone={j.zone}")
        if j.age_years is not None:
            pairs.append(f"age_years={_fmt(j.age_years)}")
        if pairs:
            out.append("\t".join(["NODE", j.id] + pairs))
    for p in model.pipes:
        pairs = []
        if p.material is not None:
            pairs.append(f"material={p.material}")
        if p.age_years is not None:
            pairs.append(f"age_years={_fmt(p.age_years)}")
        if pairs:
            out.append("\t".join(["LINK", p.id] + pairs))
    o = model.options
    headloss = {"darcy-weisbach": "D-W", "hazen-williams": "H-W"}[o.headloss]
    out += ["", "[OPTIONS]", "Units\tLPS", f"Headloss\t{headloss}",
            f"Emitter Exponent\t{_fmt(o.emitter_exponent)}"]
    out += ["", "[TIMES]", f"Duration\t{format_time(o.duration)}",
            f"Hydraulic Timestep\t{format_time(o.hydraulic_step)}",
            f"Pattern Timestep\t{format_time(o.pattern_step)}"]
    out += ["", "[COORDINATES]"]
    for nid, (x, y) in model.coordinates.items():
        out.append(f"{nid}\t{_fmt(x)}\t{_fmt(y)}")
    out += ["", "[END]", ""]
    return "\n".join(out)


def _close(a, b, digits: int) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        if a is None or b is None:
            return a is b
        if a == b:
            return True
        scale = max(abs(a), abs(b))
        return abs(a - b) <= scale * 10.0 ** (1 - digits)
    return a == b


def _record_equal(a, b, digits: int) -> bool:
    for name in a.__dataclass_fields__:
        if not _close(getattr(a, name), getattr(b, name), digits):
            return False
    return True


def models_equivalent(a: NetworkModel, b: NetworkModel, digits: int = 12) -> bool:
    """Semantic equality: same elements in the same order, numbers to ``digits`` significant digits."""
    for kind in ("junctions", "reservoirs", "pipes", "valves"):
        xs, ys = getattr(a, kind), getattr(b, kind)
        if len(xs) != len(ys) or not all(_record_equal(x, y, digits) for x, y in zip(xs, ys)):
            return False
    if set(a.patterns) != set(b.patterns):
        return False
    for pid, mults in a.patterns.items():
        other = b.patterns[pid]
        if len(mults) != len(other) or not all(_close(float(x), float(y), digits) for x, y in zip(mults, other)):
            return False
    return _record_equal(a.options, b.options, digits)


# ---------------------------------------------------------------------------
# validation


def validate(model: NetworkModel) -> list[Diagnostic]:
    """All type and connectivity invariant violations; empty when the model is sound."""
    diags: list[Diagnostic] = []

    def err(eid: str, msg: str) -> None:
        diags.append(Diagnostic("ERROR", eid, msg))

    seen: set[str] = set()
    for node in list(model.junctions) + list(model.reservoirs):
        if node.id in seen:
            err(node.id, "duplicate node id")
        seen.add(node.id)
    link_seen: set[str] = set()
    for link in model.links:
        if link.id in link_seen:
            err(link.id, "duplicate link id")
        link_seen.add(link.id)
    if not model.reservoirs:
        err("-", "network has no reservoir")

    for pid, mults in model.patterns.items():
        if any(m < 0 or not math.isfinite(m) for m in mults):
            err(pid, "pattern has negative or non-finite multipliers")
        if not mults:
            err(pid, "pattern is empty")

    for j in model.junctions:
        if not math.isfinite(j.elevation):
            err(j.id, "elevation is not finite")
        if not j.base_demand >= 0:
            err(j.id, f"negative base demand {j.base_demand}")
        if not j.emitter_coeff >= 0:
            err(j.id, f"negative emitter coefficient {j.emitter_coeff}")
        if j.pattern_id is not None and j.pattern_id not in model.patterns:
            err(j.id, f"unknown pattern {j.pattern_id!r}")
    for r in model.reservoirs:
        if not math.isfinite(r.head):
            err(r.id, "reservoir head is not finite")
        if r.head_pattern is not None and r.head_pattern not in model.patterns:
            err(r.id, f"unknown pattern {r.head_pattern!r}")

    nodes = seen
    for p in model.pipes:
        if not p.length > 0:
            err(p.id, f"nonpositive length {p.length}")
        if not p.diameter > 0:
            err(p.id, f"nonpositive diameter {p.diameter}")
        if not p.roughness > 0:
            err(p.id, f"nonpositive roughness {p.roughness}")
        if not p.minor_loss_k >= 0:
            err(p.id, f"negative minor loss coefficient {p.minor_loss_k}")
    for v in model.valves:
        if not v.diameter > 0:
            err(v.id, f"nonpositive diameter {v.diameter}")
        if not v.loss_coeff_k >= 0:
            err(v.id, f"negative loss coefficient {v.loss_coeff_k}")
    for link in model.links:
        if link.status not in ("open", "closed"):
            err(link.id, f"unknown status {link.status!r}")
        for end in (link.from_node, link.to_node):
            if end not in nodes:
                err(link.id, f"endpoint {end!r} does not exist")
        if link.from_node == link.to_node:
            err(link.id, "link connects a node to itself")
    if model.options.headloss not in HEADLOSS_FORMULAS:
        err("OPTIONS", f"unknown headloss formula {model.options.headloss!r}")
    o = model.options
    if not (o.hydraulic_step > 0 and o.pattern_step > 0 and o.duration >= 0):
        err("TIMES", "time steps must be positive and duration nonnegative")
    if not o.emitter_exponent > 0:
        err("OPTIONS", "emitter exponent must be positive")

    if not any(d.severity == "ERROR" for d in diags):
        for jid in isolated_junctions(model):
            err(jid, "junction has no open path to a reservoir")
    return diags


def isolated_junctions(model: NetworkModel, open_only: bool = True) -> list[str]:
    """Junctions with no path to any reservoir through (open) links."""
    ids = model.node_ids
    index = {n: i for i, n in enumerate(ids)}
    rows, cols = [], []
    for link in model.links:
        if open_only and link.status != "open":
            continue
        rows.append(index[link.from_node])
        cols.append(index[link.to_node])
    n = len(ids)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    fed = {labels[index[r.id]] for r in model.reservoirs}
    return [j.id for j in model.junctions if labels[index[j.id]] not in fed]


# ---------------------------------------------------------------------------
# parameter overlay


def apply_parameters(model: NetworkModel, space: "ParameterSpace", vec: Iterable[float]) -> NetworkModel:
    """Return a copy of ``model`` with every spec's target attribute set from ``vec``."""
    values = [float(v) for v in vec]
    specs = space.specs
    if len(values) != len(specs):
        raise ParameterError(f"vector has {len(values)} values for {len(specs)} parameters")
    changes: dict[tuple[str, str], dict[str, float]] = defaultdict(dict)
    for spec, value in zip(specs, values):
        if not spec.lo <= value <= spec.hi:
            raise ParameterError(
                f"{spec.name}: value {value!r} outside bounds [{spec.lo!r}, {spec.hi!r}]")
        kind, attr = PARAMETER_TARGETS[spec.parameter]
        if kind != spec.element_kind:
            raise ParameterError(f"{spec.name}: parameter not applicable to {spec.element_kind}")
        try:
            model.element(kind, spec.element_id)
        except KeyError:
            raise ParameterError(f"{spec.name}: element {spec.element_id!r} not in model") from None
        changes[(kind, spec.element_id)][attr] = value
    if not changes:
        return model

    def patched(items, kind):
        return tuple(replace(e, **changes[(kind, e.id)]) if (kind, e.id) in changes else e for e in items)

    return replace(
        model,
        junctions=patched(model.junctions, "junction"),
        pipes=patched(model.pipes, "pipe"),
        valves=patched(model.valves, "valve"),
    )
