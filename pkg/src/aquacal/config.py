"""Run configuration: ``key = value`` files with one section per dataclass."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields

from .calibration import LoopConfig, Objective
from .neat import NeatConfig

# never recorded in archives: changing them must not change results
RUNTIME_ONLY = {("loop", "threads")}


@dataclass
class ObjectiveConfig:
    kind: str = "rmse"
    normalization: str = "raw"

    def objective(self) -> Objective:
        return Objective(self.kind, self.normalization)


@dataclass
class CompareConfig:
    methods: str = "mc,lhs,sa,pso,sceua,ga,es-neat"
    budget: int = 1000
    seeds: int = 1
    acceptance: float = 3.0
    neat_population: int = 50


@dataclass
class RunConfig:
    neat: NeatConfig = field(default_factory=NeatConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)

    SECTIONS = ("neat", "loop", "objective", "compare")

    def items(self, include_runtime: bool = True):
        for section in self.SECTIONS:
            for key, value in asdict(getattr(self, section)).items():
                if include_runtime or (section, key) not in RUNTIME_ONLY:
                    yield section, key, value

    def dumps(self, include_runtime: bool = True) -> str:
        out = []
        for section in self.SECTIONS:
            out.append(f"[{section}]")
            out += [f"{k} = {_fmt(v)}" for s, k, v in self.items(include_runtime) if s == section]
            out.append("")
        return "\n".join(out)

    def flat(self, include_runtime: bool = False) -> dict[str, str]:
        return {f"{s}.{k}": _fmt(v) for s, k, v in self.items(include_runtime)}

    def set(self, dotted: str, text: str) -> None:
        section, _, key = dotted.partition(".")
        if section not in self.SECTIONS:
            raise ValueError(f"unknown config section {section!r}")
        obj = getattr(self, section)
        ftypes = {f.name: f for f in fields(obj)}
        if key not in ftypes:
            raise ValueError(f"unknown config key {dotted!r}")
        value = _parse(text, getattr(obj, key), ftypes[key].type, dotted)
        kwargs = asdict(obj)
        kwargs[key] = value
        setattr(self, section, type(obj)(**kwargs))  # re-runs validation

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                           inline_comment_prefixes=("#",), interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ValueError(f"config: {exc}") from None
        cfg = cls()
        for section in parser.sections():
            for key, value in parser.items(section):
                cfg.set(f"{section}.{key}", value)
        return cfg


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, current, annotation, name):
    text = text.strip()
    ann = str(annotation)
    if text.lower() == "none":
        if "None" in ann:
            return None
        raise ValueError(f"{name} cannot be none")
    try:
        if "int" in ann and "float" not in ann and "str" not in ann:
            return int(text)
        if "float" in ann:
            return float(text)
    except ValueError:
        raise ValueError(f"{name}: cannot parse {text!r}") from None
    return text
