"""Expert rule files compiled into per-element calibration bounds.

A rule file is a sequence of blocks::

    # old cast iron mains are rough
    rule ci_old
    match pipe where material == "CI" and age_years > 40
    param roughness
    bounds 0.5 3.0
    prior triangular 1.0
    group pressure
    end

Every (element, parameter) pair matched by at least one rule becomes a
:class:`ParameterSpec` whose bounds are the intersection of all matching
rules. Group and prior come from the most specific rule.
"""

from __future__ import annotations

import hashlib
import operator
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .network import NetworkModel, validate

PARAMETERS = ("roughness", "minor_loss", "base_demand", "leak_coeff", "valve_loss", "diameter")
PARAMETER_KIND = {
    "roughness": "pipe",
    "minor_loss": "pipe",
    "diameter": "pipe",
    "base_demand": "junction",
    "leak_coeff": "junction",
    "valve_loss": "valve",
}
DEFAULT_GROUP = {
    "base_demand": "flow",
    "leak_coeff": "flow",
    "roughness": "pressure",
    "minor_loss": "pressure",
    "valve_loss": "pressure",
    "diameter": "pressure",
}
# reserved in the grammar, rejected by the compiler: diameters are treated as known
RESERVED_PARAMETERS = ("diameter",)

ATTRIBUTES = {"material": str, "zone": str, "kind": str, "age_years": float, "diameter": float}
TARGET_KINDS = ("pipe", "junction", "valve")
GROUPS = ("flow", "pressure")
_OPS = {"==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
        ">": operator.gt, ">=": operator.ge}


class RuleError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class RuleConflictError(RuleError):
    def __init__(self, element: str, parameter: str, rule_ids: Sequence[str]):
        self.element = element
        self.parameter = parameter
        self.rule_ids = list(rule_ids)
        super().__init__(
            f"empty bounds for {parameter} of {element}: rules {', '.join(self.rule_ids)} conflict")


@dataclass(frozen=True)
class Condition:
    attribute: str
    op: str
    value: str | float

    def holds(self, element) -> bool:
        actual = getattr(element, self.attribute, None)
        if actual is None:
            return False
        return _OPS[self.op](actual, self.value)

    def __str__(self) -> str:
        value = f'"{self.value}"' if isinstance(self.value, str) else repr(self.value)
        return f"{self.attribute} {self.op} {value}"


@dataclass(frozen=True)
class Prior:
    kind: str = "uniform"
    mode: float | None = None

    def __str__(self) -> str:
        return "uniform" if self.kind == "uniform" else f"triangular {self.mode!r}"


@dataclass(frozen=True)
class Rule:
    id: str
    target_kind: str
    conditions: tuple[Condition, ...]
    parameter: str
    lo: float
    hi: float
    prior: Prior | None = None
    group: str | None = None
    line: int = 0

    @property
    def specificity(self) -> int:
        return len(self.conditions)

    def matches(self, element) -> bool:
        return all(c.holds(element) for c in self.conditions)


@dataclass(frozen=True)
class ParameterSpec:
    element_kind: str
    element_id: str
    parameter: str
    lo: float
    hi: float
    prior: Prior = field(default_factory=Prior)
    group: str = "pressure"
    source_rule_ids: tuple[str, ...] = ()

    @property
    def name(self) -> str:
        return f"{self.element_kind}:{self.element_id}:{self.parameter}"

    @property
    def center(self) -> float:
        """Prior midpoint (uniform) or mode (triangular)."""
        if self.prior.kind == "triangular":
            return float(self.prior.mode)
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class ParameterSpace:
    specs: tuple[ParameterSpec, ...] = ()

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    @cached_property
    def lows(self) -> np.ndarray:
        return np.array([s.lo for s in self.specs], dtype=float)

    @cached_property
    def highs(self) -> np.ndarray:
        return np.array([s.hi for s in self.specs], dtype=float)

    @cached_property
    def centers(self) -> np.ndarray:
        return np.array([s.center for s in self.specs], dtype=float)

    def group_indices(self, group: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.specs) if s.group == group], dtype=np.int64)

    def parameter_kinds(self, group: str) -> list[str]:
        present = {s.parameter for s in self.specs if s.group == group}
        return [p for p in PARAMETERS if p in present]

    def bounds(self) -> list[tuple[float, float]]:
        return [(s.lo, s.hi) for s in self.specs]


# ---------------------------------------------------------------------------
# parsing


_COND_RE = re.compile(r'^\s*([A-Za-z_]+)\s*(==|!=|<=|>=|<|>)\s*(".*?"|\S+)\s*$')


def _number(token: str, line: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise RuleError(f"{what} must be a number, got {token!r}", line) from None


def _parse_condition(text: str, line: int) -> Condition:
    m = _COND_RE.match(text)
    if not m:
        raise RuleError(f"cannot parse condition {text.strip()!r}", line)
    attr, op, raw = m.groups()
    if attr not in ATTRIBUTES:
        raise RuleError(f"unknown attribute {attr!r}", line)
    if ATTRIBUTES[attr] is str:
        if not (raw.startswith('"') and raw.endswith('"') and len(raw) >= 2):
            raise RuleError(f"attribute {attr!r} compares against a quoted string", line)
        if op not in ("==", "!="):
            raise RuleError(f"operator {op!r} not defined for text attribute {attr!r}", line)
        value: str | float = raw[1:-1]
    else:
        if raw.startswith('"'):
            raise RuleError(f"attribute {attr!r} compares against a number", line)
        value = _number(raw, line, attr)
    return Condition(attr, op, value)


def parse_rules(text: str) -> list[Rule]:
    """Parse a rule file; rules come back in file order."""
    rules: list[Rule] = []
    current: dict | None = None
    seen_ids: set[str] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        keyword, _, rest = line.partition(" ")
        rest = rest.strip()
        if keyword == "rule":
            if current is not None:
                raise RuleError(f"rule {current['id']!r} not closed with 'end'", lineno)
            if not rest or " " in rest:
                raise RuleError("expected 'rule <id>'", lineno)
            if rest in seen_ids:
                raise RuleError(f"duplicate rule id {rest!r}", lineno)
            seen_ids.add(rest)
            current = {"id": rest, "line": lineno}
            continue
        if current is None:
            raise RuleError(f"{keyword!r} outside of a rule block", lineno)
        if keyword in current and keyword != "end":
            raise RuleError(f"duplicate {keyword!r} line in rule {current['id']!r}", lineno)
        if keyword == "match":
            kind, _, cond_text = rest.partition(" ")
            if kind not in TARGET_KINDS:
                raise RuleError(f"unknown target kind {kind!r}", lineno)
            conditions: list[Condition] = []
            cond_text = cond_text.strip()
            if cond_text:
                head, _, body = cond_text.partition(" ")
                if head != "where" or not body.strip():
                    raise RuleError("expected 'where <condition>' after target kind", lineno)
                for part in re.split(r"\s+and\s+", body):
                    conditions.append(_parse_condition(part, lineno))
            current["match"] = (kind, tuple(conditions))
        elif keyword == "param":
            if rest not in PARAMETERS:
                raise RuleError(f"unknown parameter {rest!r}", lineno)
            current["param"] = rest
        elif keyword == "bounds":
            parts = rest.split()
            if len(parts) != 2:
                raise RuleError("expected 'bounds <lo> <hi>'", lineno)
            lo, hi = (_number(p, lineno, "bound") for p in parts)
            if lo > hi:
                raise RuleError(f"lower bound {lo!r} exceeds upper bound {hi!r}", lineno)
            current["bounds"] = (lo, hi)
        elif keyword == "prior":
            parts = rest.split()
            if parts == ["uniform"]:
                current["prior"] = Prior()
            elif len(parts) == 2 and parts[0] == "triangular":
                current["prior"] = Prior("triangular", _number(parts[1], lineno, "mode"))
            else:
                raise RuleError("expected 'prior uniform' or 'prior triangular <mode>'", lineno)
        elif keyword == "group":
            if rest not in GROUPS:
                raise RuleError(f"unknown group {rest!r}", lineno)
            current["group"] = rest
        elif keyword == "end":
            if rest:
                raise RuleError("unexpected text after 'end'", lineno)
            rules.append(_finish(current, lineno))
            current = None
        else:
            raise RuleError(f"unknown keyword {keyword!r}", lineno)
    if current is not None:
        raise RuleError(f"rule {current['id']!r} not closed with 'end'", current["line"])
    return rules


def _strip_comment(raw: str) -> str:
    out, quoted = [], False
    for ch in raw:
        if ch == '"':
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out)


def _finish(block: dict, lineno: int) -> Rule:
    for key in ("match", "param", "bounds"):
        if key not in block:
            raise RuleError(f"rule {block['id']!r} lacks a {key!r} line", lineno)
    kind, conditions = block["match"]
    param = block["param"]
    if PARAMETER_KIND[param] != kind:
        raise RuleError(f"parameter {param!r} does not apply to {kind} elements", lineno)
    lo, hi = block["bounds"]
    prior = block.get("prior")
    if prior is not None and prior.kind == "triangular" and not lo <= prior.mode <= hi:
        raise RuleError(f"triangular mode {prior.mode!r} outside bounds [{lo!r}, {hi!r}]", lineno)
    return Rule(id=block["id"], target_kind=kind, conditions=conditions, parameter=param,
                lo=lo, hi=hi, prior=prior, group=block.get("group"), line=block["line"])


def format_rules(rules: Sequence[Rule]) -> str:
    """Canonical text for ``rules``; parses back to equal rules (up to line numbers)."""
    out = []
    for r in rules:
        out.append(f"rule {r.id}")
        match = f"match {r.target_kind}"
        if r.conditions:
            match += " where " + " and ".join(str(c) for c in r.conditions)
        out.append(match)
        out.append(f"param {r.parameter}")
        out.append(f"bounds {r.lo!r} {r.hi!r}")
        if r.prior is not None:
            out.append(f"prior {r.prior}")
        if r.group is not None:
            out.append(f"group {r.group}")
        out.append("end")
        out.append("")
    return "\n".join(out)


def rules_fingerprint(rules: Sequence[Rule]) -> str:
    return hashlib.sha256(format_rules(rules).encode()).hexdigest()


# ---------------------------------------------------------------------------
# compilation


def compile_rules(rules: Sequence[Rule], model: NetworkModel) -> ParameterSpace:
    """Per-element calibration specs; unmatched elements stay at model values."""
    errors = [d for d in validate(model) if d.severity == "ERROR"]
    if errors:
        raise RuleError(f"model is invalid: {errors[0]}")
    for r in rules:
        if r.parameter in RESERVED_PARAMETERS:
            raise RuleError(f"rule {r.id!r}: parameter {r.parameter!r} is not calibratable", r.line)

    tables = {"pipe": model.pipes, "junction": model.junctions, "valve": model.valves}
    matched: dict[tuple[str, str, str], list[tuple[int, Rule]]] = {}
    for pos, rule in enumerate(rules):
        for element in tables[rule.target_kind]:
            if rule.matches(element):
                matched.setdefault((rule.target_kind, element.id, rule.parameter), []).append((pos, rule))

    specs = []
    for (kind, eid, param) in sorted(matched):
        hits = matched[(kind, eid, param)]
        lo = max(r.lo for _, r in hits)
        hi = min(r.hi for _, r in hits)
        if lo > hi:
            lo_rule = max(hits, key=lambda h: (h[1].lo, h[0]))[1]
            hi_rule = min(hits, key=lambda h: (h[1].hi, -h[0]))[1]
            ids = sorted({lo_rule.id, hi_rule.id}, key=lambda i: [r.id for _, r in hits].index(i))
            raise RuleConflictError(f"{kind} {eid}", param, ids)
        # most specific wins; later file position breaks ties
        _, top = max(hits, key=lambda h: (h[1].specificity, h[0]))
        prior = top.prior or Prior()
        if prior.kind == "triangular" and not lo <= prior.mode <= hi:
            raise RuleError(f"{kind} {eid}: triangular mode {prior.mode!r} of rule {top.id!r} "
                            f"outside combined bounds [{lo!r}, {hi!r}]", top.line)
        specs.append(ParameterSpec(
            element_kind=kind, element_id=eid, parameter=param, lo=lo, hi=hi, prior=prior,
            group=top.group or DEFAULT_GROUP[param],
            source_rule_ids=tuple(r.id for _, r in hits),
        ))
    return ParameterSpace(tuple(specs))


def group_parameters(space: ParameterSpace) -> tuple[list[ParameterSpec], list[ParameterSpec]]:
    flow = [s for s in space.specs if s.group == "flow"]
    pressure = [s for s in space.specs if s.group == "pressure"]
    return flow, pressure


def sample_prior(spec: ParameterSpec, rng: np.random.Generator) -> float:
    lo, hi = spec.lo, spec.hi
    if spec.prior.kind == "triangular":
        mode = spec.prior.mode
        if mode is None or not lo <= mode <= hi:
            raise ValueError(f"{spec.name}: triangular mode {mode!r} outside [{lo!r}, {hi!r}]")
        if lo == hi:
            return lo
        value = rng.triangular(lo, mode, hi)
    else:
        if lo == hi:
            return lo
        value = rng.uniform(lo, hi)
    return float(min(max(value, lo), hi))
