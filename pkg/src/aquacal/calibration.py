"""Sequential flow-then-pressure calibration with one NEAT genome per parameter group."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .hydraulics import HydraulicNetwork, SensorSet, eps_times, extract_observations
from .neat import Genome, NeatConfig, evaluate, initial_population, reproduce
from .network import NetworkModel, PARAMETER_TARGETS
from .rules import PARAMETERS, ParameterSpace, ParameterSpec

log = logging.getLogger(__name__)

PENALTY = 1e6
STD_FLOOR = 1e-6
KINDS = ("pipe", "junction", "valve")
QUANTITY = {"flow": "flow_lps", "pressure": "pressure_m"}
SENSOR_OF_QUANTITY = {"flow_lps": "flow", "pressure_m": "pressure"}


class CalibrationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class FeatureBlock:
    kind: str
    names: tuple[str, ...]
    lows: tuple[float, ...]
    highs: tuple[float, ...]


@dataclass(frozen=True)
class FeatureSchema:
    blocks: tuple[FeatureBlock, ...]

    def block(self, kind: str) -> FeatureBlock:
        for b in self.blocks:
            if b.kind == kind:
                return b
        raise KeyError(kind)

    def layout(self) -> tuple[tuple[str, tuple[str, ...]], ...]:
        return tuple((b.kind, b.names) for b in self.blocks)

    def text(self) -> str:
        lines = []
        for b in self.blocks:
            for name, lo, hi in zip(b.names, b.lows, b.highs):
                lines.append(f"{b.kind} {name} {float(lo).hex()} {float(hi).hex()}")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "FeatureSchema":
        rows: dict[str, list] = {}
        order = []
        for line in text.splitlines():
            if not line.strip():
                continue
            kind, name, lo, hi = line.split()
            if kind not in rows:
                rows[kind] = []
                order.append(kind)
            rows[kind].append((name, float.fromhex(lo), float.fromhex(hi)))
        return cls(tuple(FeatureBlock(k, tuple(r[0] for r in rows[k]), tuple(r[1] for r in rows[k]),
                                      tuple(r[2] for r in rows[k])) for k in order))

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()


def _minmax(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return np.full(values.shape, 0.5), 0.0, 0.0
    lo, hi = float(finite.min()), float(finite.max())
    if hi == lo:
        out = np.full(values.shape, 0.5)
    else:
        out = (values - lo) / (hi - lo)
    return np.where(np.isfinite(values), out, 0.0), lo, hi


def build_features(model: NetworkModel) -> tuple[FeatureSchema, dict[tuple[str, str], np.ndarray]]:
    """Normalised feature vectors for every pipe, junction and valve.

    Every numeric feature is min-max scaled over the elements of its kind
    (constant features map to 0.5); categorical labels become one-hot
    columns over the sorted labels present in the model.
    """
    degree = model.degrees()
    node_elev = {j.id: j.elevation for j in model.junctions} | {r.id: r.head for r in model.reservoirs}
    raw: dict[str, tuple[list[str], list[str], np.ndarray, list]] = {}

    def add(kind, elements, numeric: dict[str, list[float]], labels: list[str | None], label_name):
        if not elements:
            return
        ids = [e.id for e in elements]
        names = list(numeric)
        cols = np.array([numeric[n] for n in names], dtype=float).T.reshape(len(ids), len(names))
        raw[kind] = (ids, names, cols, labels, label_name)

    pipes = model.pipes
    add("pipe", pipes, {
        "length_norm": [p.length for p in pipes],
        "diameter_norm": [p.diameter for p in pipes],
        "degree_from_norm": [degree[p.from_node] for p in pipes],
        "degree_to_norm": [degree[p.to_node] for p in pipes],
        "mid_elevation_norm": [0.5 * (node_elev[p.from_node] + node_elev[p.to_node]) for p in pipes],
        "age_norm": [p.age_years if p.age_years is not None else math.nan for p in pipes],
    }, [p.material for p in pipes], "material")
    junctions = model.junctions
    add("junction", junctions, {
        "elevation_norm": [j.elevation for j in junctions],
        "degree_norm": [degree[j.id] for j in junctions],
        "base_demand_norm": [j.base_demand for j in junctions],
    }, [j.zone for j in junctions], "zone")
    valves = model.valves
    add("valve", valves, {
        "diameter_norm": [v.diameter for v in valves],
        "degree_from_norm": [degree[v.from_node] for v in valves],
        "degree_to_norm": [degree[v.to_node] for v in valves],
    }, [v.kind for v in valves], "kind")

    blocks = []
    vectors: dict[tuple[str, str], np.ndarray] = {}
    for kind in KINDS:
        if kind not in raw:
            continue
        ids, names, cols, labels, label_name = raw[kind]
        scaled = np.empty_like(cols)
        lows, highs = [1.0], [1.0]
        for c in range(cols.shape[1]):
            scaled[:, c], lo, hi = _minmax(cols[:, c])
            lows.append(lo)
            highs.append(hi)
        cats = sorted({l for l in labels if l is not None})
        onehot = np.array([[1.0 if l == c else 0.0 for c in cats] for l in labels]).reshape(len(ids), len(cats))
        full = np.hstack([np.ones((len(ids), 1)), scaled, onehot])
        all_names = ["const_1"] + names + [f"{label_name}={c}" for c in cats]
        lows += [0.0] * len(cats)
        highs += [1.0] * len(cats)
        blocks.append(FeatureBlock(kind, tuple(all_names), tuple(lows), tuple(highs)))
        for eid, row in zip(ids, full):
            vectors[(kind, eid)] = row
    return FeatureSchema(tuple(blocks)), vectors


# ---------------------------------------------------------------------------
# group encoding


@dataclass(frozen=True)
class GroupLayout:
    """Input/output layout of the genome serving one parameter group."""
    group: str
    kinds: tuple[str, ...]  # element-kind blocks concatenated as inputs
    outputs: tuple[str, ...]  # parameter kinds, one output each
    n_inputs: int

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)


def group_layout(schema: FeatureSchema, specs: Sequence[ParameterSpec], group: str) -> GroupLayout:
    kinds = tuple(k for k in KINDS if any(s.element_kind == k for s in specs))
    outputs = tuple(p for p in PARAMETERS if any(s.parameter == p for s in specs))
    n_in = sum(len(schema.block(k).names) for k in kinds)
    return GroupLayout(group, kinds, outputs, n_in)


class GroupDecoder:
    """Precomputed input matrix for one group: one row per spec."""

    def __init__(self, layout: GroupLayout, schema: FeatureSchema, specs: Sequence[ParameterSpec],
                 features: Mapping[tuple[str, str], np.ndarray]):
        self.layout = layout
        self.specs = list(specs)
        offsets = {}
        pos = 0
        for k in layout.kinds:
            offsets[k] = pos
            pos += len(schema.block(k).names)
        # one activation per element: specs sharing an element share a row
        rows: dict[tuple[str, str], int] = {}
        matrix = []
        self.row_of = np.empty(len(self.specs), dtype=np.int64)
        for i, s in enumerate(self.specs):
            key = (s.element_kind, s.element_id)
            if key not in rows:
                vec = np.zeros(layout.n_inputs)
                f = features[key]
                vec[offsets[s.element_kind]: offsets[s.element_kind] + len(f)] = f
                rows[key] = len(matrix)
                matrix.append(vec)
            self.row_of[i] = rows[key]
        self.inputs = np.array(matrix).reshape(len(matrix), layout.n_inputs)
        self.slot = np.array([layout.outputs.index(s.parameter) for s in self.specs], dtype=np.int64)
        self.lo = np.array([s.lo for s in self.specs], dtype=float)
        self.hi = np.array([s.hi for s in self.specs], dtype=float)

    def decode(self, genome: Genome) -> np.ndarray:
        if (genome.n_inputs, genome.n_outputs) != (self.layout.n_inputs, self.layout.n_outputs):
            raise CalibrationError(
                f"genome has {genome.n_inputs} inputs/{genome.n_outputs} outputs, "
                f"{self.layout.group} group needs {self.layout.n_inputs}/{self.layout.n_outputs}")
        if not self.specs:
            return np.zeros(0)
        out = genome.activate_batch(self.inputs)
        y = np.clip(out[self.row_of, self.slot], -1.0, 1.0)
        return np.clip(self.lo + (y + 1.0) / 2.0 * (self.hi - self.lo), self.lo, self.hi)


def decode(genome: Genome, group_specs: Sequence[ParameterSpec], features, schema: FeatureSchema) -> np.ndarray:
    group = group_specs[0].group if group_specs else "flow"
    layout = group_layout(schema, group_specs, group)
    return GroupDecoder(layout, schema, group_specs, features).decode(genome)


# ---------------------------------------------------------------------------
# measurements


@dataclass
class MeasurementSet:
    series: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]]  # (kind, id) -> (times, values)

    def __post_init__(self):
        for key, (t, v) in self.series.items():
            if len(t) != len(v):
                raise CalibrationError(f"sensor {key}: times and values differ in length")
            if len(t) > 1 and np.any(np.diff(t) <= 0):
                raise CalibrationError(f"sensor {key}: times not strictly increasing")

    def subset(self, keys: Iterable[tuple[str, str]]) -> "MeasurementSet":
        keys = list(keys)
        missing = [k for k in keys if k not in self.series]
        if missing:
            raise CalibrationError(f"no measurements for sensor(s) {missing}")
        return MeasurementSet({k: self.series[k] for k in keys})


MEASUREMENT_HEADER = "time_s,element_kind,element_id,quantity,value"


def read_measurements(text: str) -> MeasurementSet:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or ",".join(h.strip() for h in header) != MEASUREMENT_HEADER:
        raise CalibrationError(f"measurement header must be {MEASUREMENT_HEADER!r}")
    rows: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 5:
            raise CalibrationError(f"line {lineno}: expected 5 columns, got {len(row)}")
        t, ekind, eid, qty, value = (c.strip() for c in row)
        if qty not in SENSOR_OF_QUANTITY:
            raise CalibrationError(f"line {lineno}: unknown quantity {qty!r}")
        kind = SENSOR_OF_QUANTITY[qty]
        expected = ("pipe", "valve") if kind == "flow" else ("junction",)
        if ekind not in expected:
            raise CalibrationError(f"line {lineno}: {qty} measured on a {ekind}")
        try:
            rows.setdefault((kind, eid), []).append((float(t), float(value)))
        except ValueError:
            raise CalibrationError(f"line {lineno}: non-numeric time or value") from None
    series = {}
    for key, pts in rows.items():
        pts.sort(key=lambda p: p[0])
        series[key] = (np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
    return MeasurementSet(series)


def write_measurements(ms: MeasurementSet, model: NetworkModel) -> str:
    buf = io.StringIO()
    buf.write(MEASUREMENT_HEADER + "\n")
    for (kind, sid) in sorted(ms.series):
        times, values = ms.series[(kind, sid)]
        ekind = "junction" if kind == "pressure" else ("valve" if sid in model.valve_index else "pipe")
        for t, v in zip(times, values):
            buf.write(f"{float(t)!r},{ekind},{sid},{QUANTITY[kind]},{float(v)!r}\n")
    return buf.getvalue()


def read_sensors(text: str) -> SensorSet:
    lists = {("sensor", "flow"): [], ("sensor", "pressure"): [], ("holdout", "flow"): [],
             ("holdout", "pressure"): []}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3 or (parts[0], parts[1]) not in lists:
            raise CalibrationError(f"line {lineno}: expected 'sensor|holdout flow|pressure <id>'")
        lists[(parts[0], parts[1])].append(parts[2])
    return SensorSet(tuple(lists[("sensor", "flow")]), tuple(lists[("sensor", "pressure")]),
                     tuple(lists[("holdout", "flow")]), tuple(lists[("holdout", "pressure")]))


def write_sensors(sensors: SensorSet) -> str:
    lines = [f"sensor flow {s}" for s in sensors.flow_sensors]
    lines += [f"sensor pressure {s}" for s in sensors.pressure_sensors]
    lines += [f"holdout flow {s}" for s in sensors.holdout_flow]
    lines += [f"holdout pressure {s}" for s in sensors.holdout_pressure]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# objectives


@dataclass(frozen=True)
class Objective:
    kind: str = "rmse"
    normalization: str = "per-sensor-std"

    def __post_init__(self):
        if self.kind not in ("rmse", "nse", "mae"):
            raise ValueError(f"unknown objective {self.kind!r}")
        if self.normalization not in ("raw", "per-sensor-std"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    def __str__(self):
        return f"{self.kind}/{self.normalization}"


COMBINED = Objective("rmse", "per-sensor-std")
PHASE_DEFAULT = Objective("rmse", "raw")  # each phase sees a single sensor kind


def objective(sim: Mapping, obs: Mapping, obj: Objective = Objective()) -> float:
    """Goodness of fit of simulated against observed series (lower is better).

    ``sim`` and ``obs`` map sensor keys to equally long arrays that are
    already aligned in time.
    """
    if not obs:
        raise CalibrationError("no observed series")
    sq = ab = 0.0
    count = 0
    nses = []
    for key in obs:
        o = np.asarray(obs[key], dtype=float)
        if key not in sim:
            raise CalibrationError(f"no simulated series for sensor {key}")
        s = np.asarray(sim[key], dtype=float)
        if o.size == 0:
            raise CalibrationError(f"empty series for sensor {key}")
        if s.shape != o.shape:
            raise CalibrationError(f"sensor {key}: {s.size} simulated vs {o.size} observed points")
        r = s - o
        if obj.normalization == "per-sensor-std":
            r = r / max(float(np.std(o)), STD_FLOOR)
        if obj.kind == "nse":
            dev = float(np.sum((o - o.mean()) ** 2))
            ss = float(np.sum((s - o) ** 2))
            nses.append(1.0 - ss / dev if dev > 0 else (1.0 if ss == 0 else -math.inf))
        sq += float(np.sum(r * r))
        ab += float(np.sum(np.abs(r)))
        count += r.size
    if obj.kind == "rmse":
        return math.sqrt(sq / count)
    if obj.kind == "mae":
        return ab / count
    return -float(np.mean(nses))


def align(sim_times: Sequence[float], obs_times: np.ndarray) -> np.ndarray:
    """Indices of ``obs_times`` within ``sim_times``; raises on any time not simulated."""
    sim_times = np.asarray(sim_times, dtype=float)
    idx = np.searchsorted(sim_times, obs_times)
    ok = (idx < sim_times.size)
    ok[ok] &= np.abs(sim_times[idx[ok]] - obs_times[ok]) <= 1e-6
    if not ok.all():
        bad = float(np.asarray(obs_times)[~ok][0])
        raise CalibrationError(f"measurement at t={bad!r} s has no simulated time step")
    return idx


# ---------------------------------------------------------------------------
# problem


class Problem:
    """Everything needed to score a parameter vector, compiled once.

    Parameter vectors are applied to array copies of the network rather than
    rebuilding models; every solve warm-starts from the same base flows, so a
    score depends only on its vector.
    """

    def __init__(self, model: NetworkModel, space: ParameterSpace, measurements: MeasurementSet,
                 sensors: SensorSet, objective: Objective = Objective(), times: Sequence[float] | None = None,
                 extra_keys: Sequence[tuple[str, str]] = ()):
        if len(space) == 0:
            raise CalibrationError("parameter space is empty")
        sensors.check(model)
        self.model = model
        self.space = space
        self.sensors = sensors
        self.objective = objective
        self.network = HydraulicNetwork(model)
        self.times = list(times) if times is not None else eps_times(
            model.options.duration, model.options.hydraulic_step)
        self.measurements = measurements
        keys = list(dict.fromkeys(sensors.calibration() + sensors.holdout() + list(extra_keys)))
        self.obs = {}
        self.index = {}
        for key in keys:
            if key not in measurements.series:
                raise CalibrationError(f"no measurements for sensor {key[0]} {key[1]}")
            t, v = measurements.series[key]
            self.index[key] = align(self.times, t)
            self.obs[key] = v
        self.n_sims = 0

        # parameter -> array slot
        link_pos = self.network.link_index
        junction_pos = {j: i for i, j in enumerate(self.network.junction_ids)}
        self._targets: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for attr in ("roughness", "minor_k", "base_demand", "emitter_coeff"):
            self._targets[attr] = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        slots: dict[str, tuple[list[int], list[int]]] = {a: ([], []) for a in self._targets}
        array_of = {"roughness": "roughness", "minor_loss": "minor_k", "valve_loss": "minor_k",
                    "base_demand": "base_demand", "leak_coeff": "emitter_coeff"}
        for i, s in enumerate(space.specs):
            kind, _ = PARAMETER_TARGETS[s.parameter]
            if kind != s.element_kind:
                raise CalibrationError(f"{s.name}: parameter not applicable to {s.element_kind}")
            pos = junction_pos if kind == "junction" else link_pos
            if s.element_id not in pos:
                raise CalibrationError(f"{s.name}: element not in model")
            attr = array_of[s.parameter]
            slots[attr][0].append(i)
            slots[attr][1].append(pos[s.element_id])
        self._targets = {a: (np.array(v[0], dtype=np.int64), np.array(v[1], dtype=np.int64))
                         for a, v in slots.items() if v[0]}
        base = self.network.simulate(self.times)
        self._q_init = base.flows.copy()
        self.base_result = base

    def network_for(self, vec: np.ndarray) -> HydraulicNetwork:
        kwargs = {}
        for attr, (spec_idx, arr_idx) in self._targets.items():
            arr = getattr(self.network, attr).copy()
            arr[arr_idx] = vec[spec_idx]
            kwargs[attr] = arr
        return self.network.with_values(**kwargs)

    def simulate(self, vec: np.ndarray):
        self.n_sims += 1
        net = self.network_for(np.asarray(vec, dtype=float))
        try:
            return net.simulate(self.times, q_init=self._q_init)
        except np.linalg.LinAlgError:
            return None

    def series(self, result, keys) -> dict:
        sim = extract_observations(result, keys)
        return {k: sim[k][self.index[k]] for k in keys}

    def score(self, vec, keys_by_objective: Sequence[tuple[Sequence, Objective]]) -> list[float]:
        """Objective values for several (sensor keys, objective) pairs from one simulation."""
        result = self.simulate(vec)
        if result is None:
            return [2 * PENALTY] * len(keys_by_objective)
        if not result.all_converged or not np.all(np.isfinite(result.heads)):
            bad = ~result.converged
            resid = np.maximum(result.mass_residual, result.energy_residual)[bad if bad.any() else slice(None)]
            resid = float(np.mean(resid)) if resid.size else 0.0
            return [PENALTY + (resid if math.isfinite(resid) else PENALTY)] * len(keys_by_objective)
        out = []
        for keys, obj in keys_by_objective:
            keys = list(keys)
            out.append(objective(self.series(result, keys), {k: self.obs[k] for k in keys}, obj))
        return out

    def evaluate(self, vec, keys=None, obj: Objective | None = None) -> float:
        keys = self.sensors.calibration() if keys is None else keys
        return self.score(vec, [(keys, obj or self.objective)])[0]

    def combined(self, vec) -> float:
        return self.evaluate(vec, self.sensors.calibration(), COMBINED)

    def base_vector(self) -> np.ndarray:
        """Model values of the calibrated attributes (may lie outside the rule bounds)."""
        vec = np.empty(len(self.space))
        for attr, (spec_idx, arr_idx) in self._targets.items():
            vec[spec_idx] = getattr(self.network, attr)[arr_idx]
        return vec


# ---------------------------------------------------------------------------
# loop


@dataclass
class LoopConfig:
    max_outer: int = 5
    min_improvement: float = 0.01
    max_simulations: int | None = None
    threads: int = 1
    target: float | None = None  # combined objective that ends the loop; none means the NEAT fitness threshold


@dataclass
class CalibrationRun:
    flow_genome: Genome | None
    pressure_genome: Genome | None
    history: list[tuple[str, int, float, float]]  # phase, cumulative generation, best, mean
    combined_history: list[tuple[int, str, int, float]]  # outer, phase, cumulative generation, incumbent
    final_vector: np.ndarray
    calibration_objective: float  # combined objective at the calibration sensors
    baseline_objective: float  # combined objective of the unmodified model
    validation_objective: float | None
    simulations: int
    wall_time: float
    outer_iterations: int
    generations: int
    phase_objective: Objective = PHASE_DEFAULT
    seeded: tuple[str, ...] = ()
    contributing: tuple[str, ...] = ()  # groups whose genome decode is in final_vector

    @property
    def reduction(self) -> float:
        if self.baseline_objective == 0:
            return 1.0 if self.calibration_objective == 0 else 0.0
        return 1.0 - self.calibration_objective / self.baseline_objective


@dataclass
class CalibrationContext:
    problem: Problem
    schema: FeatureSchema
    features: dict
    layouts: dict[str, GroupLayout]
    decoders: dict[str, GroupDecoder]
    indices: dict[str, np.ndarray]


def prepare(model: NetworkModel, space: ParameterSpace, measurements: MeasurementSet, sensors: SensorSet,
            obj: Objective = PHASE_DEFAULT) -> CalibrationContext:
    problem = Problem(model, space, measurements, sensors, obj)
    schema, features = build_features(model)
    layouts, decoders, indices = {}, {}, {}
    for group in ("flow", "pressure"):
        idx = space.group_indices(group)
        specs = [space.specs[i] for i in idx]
        indices[group] = idx
        if specs:
            layouts[group] = group_layout(schema, specs, group)
            decoders[group] = GroupDecoder(layouts[group], schema, specs, features)
    return CalibrationContext(problem, schema, features, layouts, decoders, indices)


def _map_fn(threads: int):
    if threads <= 1:
        return map, None
    from concurrent.futures import ThreadPoolExecutor
    pool = ThreadPoolExecutor(max_workers=threads)
    return pool.map, pool


def calibrate(model: NetworkModel, space: ParameterSpace, measurements: MeasurementSet, sensors: SensorSet,
              neat_config: NeatConfig = NeatConfig(), loop: LoopConfig = LoopConfig(),
              obj: Objective = PHASE_DEFAULT, seeds: Mapping[str, Genome] | None = None,
              context: CalibrationContext | None = None,
              on_generation: Callable | None = None,
              seed_initial: Iterable[str] | None = None) -> CalibrationRun:
    """Alternate flow and pressure phases until the combined objective stalls.

    Each phase evolves one genome whose decode sets that group's parameters,
    with the other group frozen at the incumbent's values.
    """
    start = time.perf_counter()
    ctx = context or prepare(model, space, measurements, sensors, obj)
    problem = ctx.problem
    problem.n_sims = 0
    if not sensors.calibration():
        raise CalibrationError("no calibration sensors")
    seeds = dict(seeds or {})

    groups = [g for g in ("flow", "pressure") if g in ctx.decoders]
    phases = [g for g in groups if sensors.calibration(g)]
    for g in groups:
        if g not in phases:
            log.warning("no %s sensors; %s parameters stay frozen", g, g)
    if not phases:
        phases = groups

    vec = space.centers.copy()
    contributing = set()
    initial = set(seeds) if seed_initial is None else set(seed_initial) & set(seeds)
    for group, genome in seeds.items():
        if group in ctx.decoders and group in initial:
            vec[ctx.indices[group]] = ctx.decoders[group].decode(genome)
            contributing.add(group)

    all_keys = sensors.calibration()
    combined_pair = (all_keys, COMBINED)
    baseline = problem.score(problem.base_vector(), [combined_pair])[0]
    history: list[tuple[str, int, float, float]] = []
    combined_history: list[tuple[int, str, int, float]] = []
    incumbent = problem.score(vec, [combined_pair])[0]
    # a model that already fits needs no evolution
    base_vec = np.clip(problem.base_vector(), space.lows, space.highs)
    base_fit = problem.score(base_vec, [combined_pair])[0]
    already = base_fit <= neat_config.fitness_threshold and (
        base_fit < incumbent or (base_fit == incumbent and not contributing))
    if already:
        incumbent, vec = base_fit, base_vec
        contributing.clear()
    best_genomes: dict[str, Genome | None] = {g: (seeds.get(g)) for g in ("flow", "pressure")}
    map_fn, pool = _map_fn(loop.threads)
    generation = 0
    outer_done = 0
    threshold = neat_config.fitness_threshold
    rng_seed = neat_config.seed

    def budget_left() -> int | None:
        if loop.max_simulations is None:
            return None
        return loop.max_simulations - problem.n_sims

    try:
        for outer in range(0 if already else loop.max_outer):
            pass_start = incumbent
            for group in phases:
                if budget_left() is not None and budget_left() < 1:
                    break
                keys = sensors.calibration(group) if len(phases) > 1 or sensors.calibration(group) else all_keys
                pairs = [(keys, obj), combined_pair]
                idx = ctx.indices[group]
                decoder = ctx.decoders[group]
                layout = ctx.layouts[group]
                frozen = vec.copy()
                results: dict[int, tuple[np.ndarray, float]] = {}

                def fitness_of(genome, frozen=frozen, idx=idx, decoder=decoder, pairs=pairs):
                    cand = frozen.copy()
                    cand[idx] = decoder.decode(genome)
                    phase_value, combined_value = problem.score(cand, pairs)
                    results[id(genome)] = (cand, combined_value)
                    return phase_value

                cfg = neat_config
                phase_seed = (rng_seed * 1_000_003 + outer * 2 + (group == "pressure")) % (2**63)
                pop = initial_population(layout.n_inputs, layout.n_outputs, cfg,
                                         seed_genome=best_genomes[group],
                                         rng=np.random.default_rng(phase_seed))
                phase_best = math.inf
                for gen in range(cfg.max_generations + 1):
                    if gen > 0:
                        left = budget_left()
                        if phase_best <= threshold or (left is not None and left < cfg.population_size):
                            break
                        reproduce(pop)
                    todo = [g for g in pop.genomes if g.fitness is None]
                    left = budget_left()
                    if left is not None and len(todo) > left:
                        break
                    evaluate(pop, fitness_of, map_fn)
                    # incumbent update, in genome order so threads cannot change the outcome
                    for g in todo:
                        cand, comb = results.pop(id(g))
                        if comb < incumbent:
                            incumbent = comb
                            vec = cand
                            best_genomes[group] = g.copy()
                            contributing.add(group)
                    results.clear()
                    fit = np.array([g.fitness for g in pop.genomes])
                    finite = fit[np.isfinite(fit)]
                    phase_best = pop.best_fitness
                    history.append((group, generation, phase_best,
                                    float(finite.mean()) if finite.size else math.inf))
                    combined_history.append((outer, group, generation, incumbent))
                    if on_generation is not None:
                        on_generation(group, generation, pop, incumbent)
                    generation += 1
                if best_genomes[group] is None:
                    best_genomes[group] = pop.best_ever.copy() if pop.best_ever is not None else None
            outer_done = outer + 1
            if incumbent <= (threshold if loop.target is None else loop.target):
                break
            if pass_start == 0 or (pass_start - incumbent) / pass_start < loop.min_improvement:
                break
            if budget_left() is not None and budget_left() < 1:
                break
    finally:
        if pool is not None:
            pool.shutdown()

    holdout = sensors.holdout()
    validation = None
    if holdout:
        validation = problem.score(vec, [(holdout, COMBINED)])[0]
    return CalibrationRun(
        flow_genome=best_genomes["flow"] if "flow" in ctx.decoders else None,
        pressure_genome=best_genomes["pressure"] if "pressure" in ctx.decoders else None,
        history=history, combined_history=combined_history, final_vector=vec,
        calibration_objective=incumbent, baseline_objective=baseline, validation_objective=validation,
        simulations=problem.n_sims, wall_time=time.perf_counter() - start, outer_iterations=outer_done,
        generations=generation, phase_objective=obj, seeded=tuple(sorted(seeds)),
        contributing=tuple(g for g in ("flow", "pressure") if g in contributing),
    )


def validate_run(run: CalibrationRun, model: NetworkModel, space: ParameterSpace, measurements: MeasurementSet,
                 sensors: SensorSet, obj: Objective = COMBINED,
                 holdout: Sequence[tuple[str, str]] | None = None) -> float:
    """Objective of the run's final vector over the holdout sensors only.

    ``holdout`` overrides the sensor set's holdout keys, e.g. to score the
    calibration sensors themselves.
    """
    keys = list(sensors.holdout() if holdout is None else holdout)
    if not keys:
        raise CalibrationError("no holdout sensors")
    problem = Problem(model, space, measurements, sensors, obj, extra_keys=keys)
    return problem.evaluate(run.final_vector, keys, obj)
