"""Single-file text archives of calibration runs, and transfer seeding from them.

Layout::

    AQUACAL-ARCHIVE v1
    [meta]            key=value
    [schema]          <kind> <feature> <hex lo> <hex hi>
    [groups]          group <name> inputs=<kinds> outputs=<parameter kinds> source=<genome|prior>
    [genome flow]     inputs/outputs/fitness, node and conn lines
    [genome pressure]
    [history]         <phase> <generation> <best> <mean>
    [config]          key = value
    [end]             sha256=<digest of every preceding byte>

Weights and fitness values are hexadecimal floats, so loading is lossless.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

from .calibration import CalibrationContext, CalibrationRun, FeatureSchema, group_layout
from .neat import ConnectionGene, Genome, NodeGene, check_genome
from .network import NetworkModel, write_inp
from .rules import ParameterSpace

FORMAT_VERSION = "1"
HEADER = "AQUACAL-ARCHIVE v"


class ArchiveError(ValueError):
    pass


class CorruptArchiveError(ArchiveError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"corrupt archive at byte {offset}: {message}")
        self.offset = offset


class ArchiveVersionError(ArchiveError):
    def __init__(self, found: str, expected: str = FORMAT_VERSION):
        super().__init__(f"archive format version {found!r} is not supported (current version {expected!r}); "
                         f"re-run the calibration to produce a v{expected} archive")
        self.found = found
        self.expected = expected


@dataclass
class GroupInfo:
    inputs: tuple[str, ...]  # element kinds whose feature blocks form the genome input
    outputs: tuple[str, ...]  # parameter kinds, one output node each
    source: str = "genome"  # genome: the decoded genome is in the final vector; prior: group left at prior centres


@dataclass
class RunArchive:
    meta: dict[str, str]
    schema: FeatureSchema
    groups: dict[str, GroupInfo]
    genomes: dict[str, Genome]
    history: list[tuple[str, int, float, float]]
    config: dict[str, str]
    format_version: str = FORMAT_VERSION

    @property
    def best_objective(self) -> float:
        return float(self.meta["calibration_objective"])


def model_fingerprint(model: NetworkModel) -> str:
    return hashlib.sha256(write_inp(model).encode()).hexdigest()


def build(run: CalibrationRun, ctx: CalibrationContext, model: NetworkModel, rules_fp: str,
          config: dict[str, str], created_at: str) -> RunArchive:
    groups = {}
    genomes = {}
    for group, layout in ctx.layouts.items():
        genome = run.flow_genome if group == "flow" else run.pressure_genome
        if genome is None:
            continue
        source = "genome" if group in run.contributing else "prior"
        groups[group] = GroupInfo(layout.kinds, layout.outputs, source)
        genomes[group] = genome
    meta = {
        "created_at": created_at,
        "model_fingerprint": model_fingerprint(model),
        "rules_fingerprint": rules_fp,
        "schema_hash": ctx.schema.digest(),
        "phase_objective": str(run.phase_objective),
        "combined_objective": "rmse/per-sensor-std",
        "calibration_objective": repr(float(run.calibration_objective)),
        "baseline_objective": repr(float(run.baseline_objective)),
        "validation_objective": "none" if run.validation_objective is None else repr(float(run.validation_objective)),
        "simulations": str(run.simulations),
        "generations": str(run.generations),
        "outer_iterations": str(run.outer_iterations),
        "parameters": str(len(ctx.problem.space)),
    }
    return RunArchive(meta, ctx.schema, groups, genomes, list(run.history), dict(config))


def _fmt_genome(g: Genome) -> list[str]:
    fit = "none" if g.fitness is None else float(g.fitness).hex()
    lines = [f"inputs {g.n_inputs}", f"outputs {g.n_outputs}", f"fitness {fit}"]
    for nid in sorted(g.nodes):
        n = g.nodes[nid]
        lines.append(f"node {n.id} {n.role} {n.activation}")
    for innov in sorted(g.connections):
        c = g.connections[innov]
        lines.append(f"conn {c.innovation} {c.src} {c.dst} {float(c.weight).hex()} {int(c.enabled)}")
    return lines


def dumps(archive: RunArchive) -> str:
    out = [HEADER + archive.format_version, "[meta]"]
    out += [f"{k}={v}" for k, v in archive.meta.items()]
    out.append("[schema]")
    out += archive.schema.text().splitlines()
    out.append("[groups]")
    for name, info in archive.groups.items():
        out.append(f"group {name} inputs={','.join(info.inputs)} outputs={','.join(info.outputs)} "
                   f"source={info.source}")
    for name, genome in archive.genomes.items():
        out.append(f"[genome {name}]")
        out += _fmt_genome(genome)
    out.append("[history]")
    out += [f"{phase} {gen} {best!r} {mean!r}" for phase, gen, best, mean in archive.history]
    out.append("[config]")
    out += [f"{k} = {v}" for k, v in archive.config.items()]
    body = "\n".join(out) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    return body + f"[end]\nsha256={digest}\n"


def loads(text: str) -> RunArchive:
    """Parse and validate an archive; errors carry the byte offset where reading failed."""
    data = text.encode()
    lines = text.splitlines(keepends=True)
    offsets = []
    pos = 0
    for line in lines:
        offsets.append(pos)
        pos += len(line.encode())
    if not lines:
        raise CorruptArchiveError("empty document", 0)
    head = lines[0].rstrip("\n")
    if not head.startswith(HEADER):
        raise CorruptArchiveError("missing AQUACAL-ARCHIVE header", 0)
    version = head[len(HEADER):].strip()
    if version != FORMAT_VERSION:
        raise ArchiveVersionError(version)

    end_at = None
    for i, line in enumerate(lines):
        if line.rstrip("\n") == "[end]":
            end_at = i
            break
    if end_at is None or end_at + 1 >= len(lines):
        raise CorruptArchiveError("document truncated before the [end] trailer", len(data))
    trailer = lines[end_at + 1].rstrip("\n")
    if not trailer.startswith("sha256=") or not lines[end_at + 1].endswith("\n"):
        raise CorruptArchiveError("malformed [end] trailer", offsets[end_at + 1])
    body = data[: offsets[end_at]]
    if hashlib.sha256(body).hexdigest() != trailer[len("sha256="):]:
        raise CorruptArchiveError("checksum mismatch", offsets[end_at])
    if end_at + 2 != len(lines):
        raise CorruptArchiveError("content after the [end] trailer", offsets[end_at + 2])

    sections: list[tuple[str, list[tuple[int, str]]]] = []
    for i in range(1, end_at):
        line = lines[i].rstrip("\n")
        if line.startswith("[") and line.endswith("]"):
            sections.append((line[1:-1], []))
        elif not sections:
            raise CorruptArchiveError("content before the first section", offsets[i])
        else:
            sections[-1][1].append((offsets[i], line))

    meta: dict[str, str] = {}
    schema_lines: list[str] = []
    groups: dict[str, GroupInfo] = {}
    genomes: dict[str, Genome] = {}
    history = []
    config: dict[str, str] = {}
    for name, rows in sections:
        try:
            if name == "meta":
                for off, line in rows:
                    key, _, value = line.partition("=")
                    meta[key] = value
            elif name == "schema":
                schema_lines = [line for _, line in rows]
            elif name == "groups":
                for off, line in rows:
                    parts = line.split()
                    fields = dict(p.split("=", 1) for p in parts[2:])
                    groups[parts[1]] = GroupInfo(tuple(filter(None, fields["inputs"].split(","))),
                                                 tuple(filter(None, fields["outputs"].split(","))),
                                                 fields.get("source", "genome"))
            elif name.startswith("genome "):
                genomes[name.split(" ", 1)[1]] = _parse_genome(rows)
            elif name == "history":
                for off, line in rows:
                    phase, gen, best, mean = line.split()
                    history.append((phase, int(gen), float(best), float(mean)))
            elif name == "config":
                for off, line in rows:
                    key, _, value = line.partition("=")
                    config[key.strip()] = value.strip()
            else:
                raise CorruptArchiveError(f"unknown section [{name}]", rows[0][0] if rows else 0)
        except CorruptArchiveError:
            raise
        except (ValueError, KeyError, IndexError) as exc:
            at = rows[0][0] if rows else 0
            raise CorruptArchiveError(f"bad [{name}] section: {exc}", at) from None

    schema = FeatureSchema.from_text("\n".join(schema_lines))
    if meta.get("schema_hash") != schema.digest():
        raise CorruptArchiveError("schema hash does not match the inline schema", 0)
    for gname, genome in genomes.items():
        problems = check_genome(genome)
        if problems:
            raise ArchiveError(f"genome {gname}: {problems[0]}")
        info = groups.get(gname)
        if info is None:
            raise ArchiveError(f"genome {gname} has no [groups] entry")
        n_in = sum(len(schema.block(k).names) for k in info.inputs)
        if (genome.n_inputs, genome.n_outputs) != (n_in, len(info.outputs)):
            raise ArchiveError(f"genome {gname}: {genome.n_inputs}/{genome.n_outputs} inputs/outputs, "
                               f"schema implies {n_in}/{len(info.outputs)}")
    return RunArchive(meta, schema, groups, genomes, history, config, version)


def _parse_genome(rows) -> Genome:
    n_in = n_out = None
    fitness = None
    nodes = {}
    conns = {}
    for off, line in rows:
        parts = line.split()
        try:
            if parts[0] == "inputs":
                n_in = int(parts[1])
            elif parts[0] == "outputs":
                n_out = int(parts[1])
            elif parts[0] == "fitness":
                fitness = None if parts[1] == "none" else float.fromhex(parts[1])
            elif parts[0] == "node":
                nid = int(parts[1])
                nodes[nid] = NodeGene(nid, parts[2], parts[3])
            elif parts[0] == "conn":
                innov = int(parts[1])
                if innov in conns:
                    raise ArchiveError(f"duplicate innovation {innov}")
                conns[innov] = ConnectionGene(innov, int(parts[2]), int(parts[3]), float.fromhex(parts[4]),
                                              parts[5] == "1")
            else:
                raise ValueError(f"unexpected line {line!r}")
        except (ValueError, IndexError) as exc:
            raise CorruptArchiveError(str(exc), off) from None
    if n_in is None or n_out is None:
        raise CorruptArchiveError("genome without inputs/outputs lines", rows[0][0] if rows else 0)
    return Genome(n_in, n_out, nodes, conns, fitness)


@dataclass
class SeedDecision:
    genomes: dict[str, Genome] = field(default_factory=dict)
    initial: tuple[str, ...] = ()  # groups whose decode starts the frozen vector
    refusals: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return not self.refusals and bool(self.genomes)


def seed_calibration(archive: RunArchive, model: NetworkModel, space: ParameterSpace,
                     schema: FeatureSchema | None = None) -> SeedDecision:
    """Archived genomes if the new problem has the same input/output layout, else reasons why not."""
    from .calibration import build_features

    if schema is None:
        schema, _ = build_features(model)
    decision = SeedDecision()
    if archive.schema.layout() != schema.layout():
        old = dict(archive.schema.layout())
        new = dict(schema.layout())
        for kind in sorted(set(old) | set(new)):
            if old.get(kind) != new.get(kind):
                decision.refusals.append(
                    f"feature schema for {kind} differs: archived {list(old.get(kind, ()))} "
                    f"vs new {list(new.get(kind, ()))}")
    for group in ("flow", "pressure"):
        idx = space.group_indices(group)
        specs = [space.specs[i] for i in idx]
        info = archive.groups.get(group)
        if not specs and info is None:
            continue
        if not specs:
            decision.warnings.append(f"archived {group} genome unused: new space has no {group} parameters")
            continue
        if info is None or group not in archive.genomes:
            decision.warnings.append(f"archive has no {group} genome; that group cold-starts")
            continue
        layout = group_layout(schema, specs, group)
        if layout.outputs != info.outputs:
            decision.refusals.append(
                f"{group} group output mismatch: archived {len(info.outputs)} output(s) {list(info.outputs)}, "
                f"new problem needs {layout.n_outputs} {list(layout.outputs)}")
            continue
        if layout.kinds != info.inputs:
            decision.refusals.append(
                f"{group} group input mismatch: archived element kinds {list(info.inputs)}, "
                f"new problem needs {list(layout.kinds)}")
            continue
        genome = archive.genomes[group]
        if (genome.n_inputs, genome.n_outputs) != (layout.n_inputs, layout.n_outputs):
            decision.refusals.append(f"{group} genome has {genome.n_inputs}/{genome.n_outputs} inputs/outputs, "
                                     f"new problem needs {layout.n_inputs}/{layout.n_outputs}")
            continue
        decision.genomes[group] = genome.copy(keep_fitness=False)
    if decision.refusals:
        decision.genomes = {}
        return decision
    decision.initial = tuple(g for g in decision.genomes if archive.groups[g].source == "genome")
    if archive.meta.get("model_fingerprint") != model_fingerprint(model):
        decision.warnings.append("model fingerprint differs from the archived run (network revised); "
                                 "seeding anyway")
    return decision


def history_csv(archive_or_run, phase: str) -> str:
    rows = ["generation,best,mean"]
    for p, gen, best, mean in archive_or_run.history:
        if p == phase:
            rows.append(f"{gen},{best!r},{mean!r}")
    return "\n".join(rows) + "\n"


def summary(archive: RunArchive) -> str:
    lines = [f"format_version {archive.format_version}"]
    lines += [f"{k} {v}" for k, v in archive.meta.items()]
    for name, info in archive.groups.items():
        g = archive.genomes.get(name)
        extra = ""
        if g is not None:
            enabled = sum(c.enabled for c in g.connections.values())
            extra = (f" hidden={len(g.hidden_ids)} connections={len(g.connections)} enabled={enabled}"
                     f" fitness={g.fitness if g.fitness is not None else 'none'}")
        lines.append(f"group {name} inputs={','.join(info.inputs)} outputs={','.join(info.outputs)} "
                     f"source={info.source}{extra}")
    lines.append(f"history_rows {len(archive.history)}")
    best = [h[2] for h in archive.history if math.isfinite(h[2])]
    if best:
        lines.append(f"history_best {min(best)!r}")
    return "\n".join(lines)
