"""Synthetic calibration problems with known truth.

The ``fossolo-like`` profile mimics the published counts of the Fossolo
benchmark (36 demand junctions, 58 PE pipes, one reservoir at 121 m); its
geometry is a jittered grid, not the real layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .calibration import MeasurementSet
from .hydraulics import HydraulicNetwork, SensorSet, eps_times, extract_observations
from .network import HydraulicOptions, Junction, NetworkModel, Pipe, Reservoir, validate
from .rules import Rule, Condition, compile_rules, format_rules, Prior

RESERVOIR_HEAD = 121.0
PE_ROUGHNESS = 0.0015  # mm
PRESSURE_FLOOR = 40.0
CATALOGUE_MM = (63.0, 75.0, 90.0, 110.0, 125.0, 160.0, 200.0, 250.0, 315.0, 400.0, 500.0)
DIURNAL = (0.55, 0.45, 0.4, 0.4, 0.45, 0.6, 0.9, 1.25, 1.4, 1.3, 1.2, 1.15,
           1.2, 1.15, 1.05, 1.0, 1.05, 1.2, 1.4, 1.45, 1.3, 1.05, 0.8, 0.65)
ZONE_DEMAND = {"A": 1.0, "B": 0.7, "C": 0.85}  # relative per-junction base demand
AGES = (5.0, 15.0, 30.0, 45.0)


class SynthError(ValueError):
    pass


@dataclass
class Perturbation:
    demand_growth: tuple[float, float] = (0.25, 0.4)  # network-wide factor 1 +- U[a, b], random sign
    zone_spread: float = 0.1  # zone factor ~ U[1 - s, 1 + s]
    demand_jitter: float = 0.03  # per-junction factor ~ U[1 - j, 1 + j]
    roughness_age_scale: float = 15.0  # truth eps = base * (1 + age / scale)
    roughness_jitter: float = 0.1
    demand_bound: float = 0.6  # rule bounds base * [1 - b, 1 + b]
    roughness_bounds: tuple[float, float] = (0.0005, 0.01)

    @classmethod
    def none(cls) -> "Perturbation":
        return cls(demand_growth=(0.0, 0.0), zone_spread=0.0, demand_jitter=0.0, roughness_age_scale=math.inf,
                   roughness_jitter=0.0)


@dataclass
class SyntheticProblem:
    model: NetworkModel  # the uncalibrated model
    truth: NetworkModel
    rules_text: str
    sensors: SensorSet
    measurements: MeasurementSet
    notes: list[str]

    @property
    def rules(self) -> list[Rule]:
        from .rules import parse_rules
        return parse_rules(self.rules_text)


def _grid(nx: int, ny: int, rng, spacing=100.0):
    xy = {}
    for i in range(nx):
        for j in range(ny):
            xy[(i, j)] = (i * spacing + rng.uniform(-0.2, 0.2) * spacing,
                          j * spacing + rng.uniform(-0.2, 0.2) * spacing)
    edges = []
    for i in range(nx):
        for j in range(ny):
            if i + 1 < nx:
                edges.append(((i, j), (i + 1, j)))
            if j + 1 < ny:
                edges.append(((i, j), (i, j + 1)))
    return xy, edges


def _connected(n_nodes, edges, index) -> bool:
    if not edges:
        return n_nodes <= 1
    rows = [index[a] for a, _ in edges]
    cols = [index[b] for _, b in edges]
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_nodes, n_nodes))
    return connected_components(g, directed=False)[0] == 1


def _size_pipes(n_nodes, edges, index, source, demand, velocity=0.8):
    """Catalogue diameters from peak flows on a breadth-first spanning tree."""
    rows = [index[a] for a, _ in edges] + [index[b] for _, b in edges]
    cols = [index[b] for _, b in edges] + [index[a] for a, _ in edges]
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_nodes, n_nodes)).tocsr()
    order, pred = breadth_first_order(g, source, directed=False)
    carried = np.array(demand, dtype=float)
    for n in order[::-1]:
        if pred[n] >= 0:
            carried[pred[n]] += carried[n]
    sizes = {}
    for a, b in edges:
        ia, ib = index[a], index[b]
        if pred[ib] == ia:
            q = carried[ib]
        elif pred[ia] == ib:
            q = carried[ia]
        else:
            q = 0.5 * min(carried[ia], carried[ib])
        need = math.sqrt(4.0 * max(q, 0.05) / 1000.0 / (math.pi * velocity)) * 1000.0
        sizes[(a, b)] = next((d for d in CATALOGUE_MM if d >= need), CATALOGUE_MM[-1])
    return sizes


def _min_peak_pressure(model: NetworkModel) -> float:
    net = HydraulicNetwork(model)
    pattern = model.patterns.get("diurnal", (1.0,))
    peak = int(np.argmax(pattern)) * model.options.pattern_step
    result = net.simulate([peak])
    if not result.all_converged:
        return -math.inf
    return float(result.pressures.min()) if len(model.junctions) else math.inf


def _scale_demands(model: NetworkModel, floor: float) -> tuple[NetworkModel, float]:
    """Largest demand scale keeping the minimum peak-hour pressure at or above ``floor``."""
    def scaled(s):
        return replace(model, junctions=tuple(replace(j, base_demand=j.base_demand * s) for j in model.junctions))

    if _min_peak_pressure(scaled(1e-9)) < floor:
        raise SynthError(f"pressure floor {floor} m infeasible even without demand")
    lo, hi = 0.0, 1.0
    while _min_peak_pressure(scaled(hi)) >= floor:
        lo, hi = hi, hi * 2.0
        if hi > 1e6:
            raise SynthError("demand scaling diverged")
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if _min_peak_pressure(scaled(mid)) >= floor:
            lo = mid
        else:
            hi = mid
    return scaled(lo), lo


def build_network(n_junctions: int, seed: int, remove: int | None = None, title: str = "") -> NetworkModel:
    """Looped grid network with one reservoir feeding a corner junction."""
    rng = np.random.default_rng(seed)
    nx = int(math.ceil(math.sqrt(n_junctions)))
    ny = int(math.ceil(n_junctions / nx))
    xy, edges = _grid(nx, ny, rng)
    cells = sorted(xy)[:n_junctions]
    keep = set(cells)
    xy = {c: xy[c] for c in cells}
    edges = [e for e in edges if e[0] in keep and e[1] in keep]
    index = {c: i for i, c in enumerate(cells)}
    n_remove = remove if remove is not None else max(0, len(edges) // 10)
    for _ in range(n_remove):
        for _attempt in range(100):
            k = int(rng.integers(len(edges)))
            trial = edges[:k] + edges[k + 1:]
            if _connected(len(cells), trial, index):
                edges = trial
                break
        else:
            raise SynthError("could not remove an edge without disconnecting the grid")

    names = {c: f"J{index[c] + 1}" for c in cells}
    span_x = max(x for x, _ in xy.values()) or 1.0
    span_y = max(y for _, y in xy.values()) or 1.0
    zones = ("A", "B", "C")
    junctions = []
    demand = []
    for c in cells:
        x, y = xy[c]
        elevation = 68.0 + 8.0 * (0.5 * x / span_x + 0.5 * y / span_y) + rng.uniform(-1.5, 1.5)
        zone = zones[min(2, int(3 * c[0] / nx))]
        age = AGES[min(3, int(4 * (c[0] + c[1]) / (nx + ny - 1)))]
        junctions.append(Junction(names[c], round(elevation, 3), ZONE_DEMAND[zone], "diurnal", 0.0, zone, age))
        demand.append(ZONE_DEMAND[zone] * max(DIURNAL))
    source = cells[0]
    sizes = _size_pipes(len(cells), edges, index, index[source], demand)
    pipes = []
    for k, (a, b) in enumerate(edges):
        length = math.dist(xy[a], xy[b])
        age = AGES[int(rng.integers(len(AGES)))] if rng.random() < 0.3 else \
            AGES[min(3, int(4 * (a[0] + a[1] + 1) / (nx + ny)))]
        pipes.append(Pipe(f"P{k + 1}", names[a], names[b], round(length, 3), sizes[(a, b)], PE_ROUGHNESS,
                          0.0, "open", "PE", age))
    total = sum(demand)
    main = next((d for d in CATALOGUE_MM if d >= math.sqrt(4 * total / 1000 / (math.pi * 0.8)) * 1000),
                CATALOGUE_MM[-1])
    pipes.append(Pipe(f"P{len(edges) + 1}", "R1", names[source], 200.0, main, PE_ROUGHNESS, 0.0, "open", "PE", 5.0))
    coords = {names[c]: xy[c] for c in cells} | {"R1": (xy[source][0] - 150.0, xy[source][1] - 150.0)}
    model = NetworkModel(
        junctions=tuple(junctions), reservoirs=(Reservoir("R1", RESERVOIR_HEAD),), pipes=tuple(pipes),
        patterns={"diurnal": DIURNAL},
        options=HydraulicOptions("darcy-weisbach", 24 * 3600.0, 3600.0, 3600.0, 0.5),
        title=title or f"synthetic grid network, {n_junctions} junctions, seed {seed}", coordinates=coords,
    )
    model, _ = _scale_demands(model, PRESSURE_FLOOR)
    junctions = tuple(replace(j, base_demand=round(j.base_demand, 9)) for j in model.junctions)
    model = replace(model, junctions=junctions)
    bad = [d for d in validate(model) if d.severity == "ERROR"]
    if bad:
        raise SynthError(f"generated network invalid: {bad[0]}")
    return model


def fossolo_like(seed: int) -> NetworkModel:
    # 6x6 grid: 60 edges - 3 removed + 1 reservoir main = 58 pipes
    return build_network(36, seed, remove=3, title=f"fossolo-like synthetic benchmark, seed {seed}")


def expert_rules(model: NetworkModel, pert: Perturbation) -> str:
    """Zone demand rules and PE roughness rules covering every junction and pipe."""
    rules = []
    lo, hi = pert.roughness_bounds
    rules.append(Rule("pe_roughness", "pipe", (Condition("material", "==", "PE"),), "roughness", lo, hi,
                      Prior("triangular", PE_ROUGHNESS) if lo <= PE_ROUGHNESS <= hi else None, "pressure"))
    zones = sorted({j.zone for j in model.junctions if j.zone is not None})
    for z in zones:
        base = sorted({j.base_demand for j in model.junctions if j.zone == z})
        rules.append(Rule(f"demand_{z}", "junction", (Condition("zone", "==", z),), "base_demand",
                          min(base) * (1 - pert.demand_bound), max(base) * (1 + pert.demand_bound), None, "flow"))
    return format_rules(rules)


def perturb(model: NetworkModel, rules_text: str, pert: Perturbation, rng) -> NetworkModel:
    """Truth model: demand growth with zone and junction scatter, age-driven roughness.

    Values are clipped into the rule bounds.
    """
    from .rules import parse_rules
    space = compile_rules(parse_rules(rules_text), model)
    bounds = {(s.element_kind, s.element_id, s.parameter): (s.lo, s.hi) for s in space.specs}
    zones = sorted({j.zone for j in model.junctions if j.zone is not None})
    growth = 1.0 + rng.choice((-1.0, 1.0)) * rng.uniform(*pert.demand_growth)
    factor = {z: growth * (1.0 + rng.uniform(-pert.zone_spread, pert.zone_spread)) for z in zones}

    def clip(key, v):
        lo, hi = bounds.get(key, (-math.inf, math.inf))
        return min(max(v, lo), hi)

    junctions = []
    for j in model.junctions:
        f = factor.get(j.zone, 1.0) * (1.0 + rng.uniform(-pert.demand_jitter, pert.demand_jitter))
        junctions.append(replace(j, base_demand=clip(("junction", j.id, "base_demand"), j.base_demand * f)))
    pipes = []
    for p in model.pipes:
        age = p.age_years or 0.0
        f = (1.0 + age / pert.roughness_age_scale) * (1.0 + rng.uniform(-pert.roughness_jitter, pert.roughness_jitter))
        pipes.append(replace(p, roughness=clip(("pipe", p.id, "roughness"), p.roughness * f)))
    return replace(model, junctions=tuple(junctions), pipes=tuple(pipes))


def _zone_sensitivity(model: NetworkModel, times) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Relative change of each link's mean flow per unit relative change of each zone's demand."""
    net = HydraulicNetwork(model)
    base = net.simulate(times)
    q0 = base.flows.mean(axis=0)
    zones = sorted({j.zone for j in model.junctions if j.zone is not None})
    cols = []
    for z in zones:
        mask = np.array([j.zone == z for j in model.junctions])
        demand = net.base_demand * np.where(mask, 1.01, 1.0)
        q = net.with_values(base_demand=demand).simulate(times, q_init=base.flows).flows.mean(axis=0)
        cols.append((q - q0) / 0.01)
    sens = np.array(cols).T if cols else np.zeros((len(q0), 0))
    scale = np.maximum(np.abs(q0), 1e-9)[:, None]
    return base.link_ids, sens / scale, np.abs(base.flows).mean(axis=0)


def choose_sensors(model: NetworkModel, rng, n_flow=3, n_pressure=3, holdout_flow=1, holdout_pressure=1) -> SensorSet:
    """Source main plus well-loaded pipes for flow; high junctions for pressure.

    Near-stagnant pipes make poor flow sensors: their per-sensor scale is tiny,
    so only the busier half of the pipes is eligible. Flow sensors after the
    main are picked greedily so that their zone-demand sensitivities span as
    much volume as possible; otherwise zone demands are not identifiable.
    """
    main = [p.id for p in model.pipes if p.from_node in model.reservoir_index or p.to_node in model.reservoir_index]
    times = eps_times(model.options.duration, model.options.hydraulic_step)
    link_ids, sens, load_arr = _zone_sensitivity(model, times)
    load = dict(zip(link_ids, load_arr))
    row = {lid: sens[i] for i, lid in enumerate(link_ids)}
    ranked_pipes = sorted((p.id for p in model.pipes if p.id not in main), key=lambda i: (-load[i], i))
    pool = sorted(ranked_pipes[: max(n_flow + holdout_flow, len(ranked_pipes) // 2)])
    pool = [pool[i] for i in rng.permutation(len(pool))]
    chosen = main[:1]
    while len(chosen) < n_flow and pool:
        def volume(cand):
            m = np.array([row[c] for c in chosen + [cand]])
            return float(np.linalg.det(m @ m.T)) if m.shape[1] else 0.0
        best = max(pool, key=volume)  # first of equals in the shuffled pool
        chosen.append(best)
        pool.remove(best)
    holdout_pool = [p for p in pool if p in ranked_pipes[: max(holdout_flow, len(ranked_pipes) // 4)]] or pool
    flow = chosen + holdout_pool[:holdout_flow]
    ranked = sorted(model.junctions, key=lambda j: -j.elevation)
    top = ranked[: max(2 * (n_pressure + holdout_pressure), 1)]
    idx = list(rng.choice(len(top), size=min(len(top), n_pressure + holdout_pressure), replace=False))
    pressure = [top[i].id for i in sorted(idx)]
    return SensorSet(tuple(flow[:n_flow]), tuple(pressure[:n_pressure]),
                     tuple(flow[n_flow:]), tuple(pressure[n_pressure:]))


def measure(truth: NetworkModel, sensors: SensorSet, noise: float, rng) -> MeasurementSet:
    times = eps_times(truth.options.duration, truth.options.hydraulic_step)
    result = HydraulicNetwork(truth).simulate(times)
    if not result.all_converged:
        raise SynthError("truth model failed to converge")
    series = extract_observations(result, sensors)
    out = {}
    for key in sorted(series):
        values = series[key]
        if noise > 0:
            values = values + rng.normal(0.0, noise, size=values.shape)
        out[key] = (np.array(times, dtype=float), values)
    return MeasurementSet(out)


def make_problem(profile: str = "fossolo-like", seed: int = 1, noise: float = 0.0,
                 pert: Perturbation | None = None, n_junctions: int | None = None,
                 base: NetworkModel | None = None) -> SyntheticProblem:
    """Model, truth, rules, sensors and measurements for one synthetic campaign."""
    pert = pert or Perturbation()
    if base is not None:
        model = base
    elif profile == "fossolo-like":
        model = fossolo_like(seed)
    elif profile == "scaled":
        if not n_junctions:
            raise SynthError("scaled profile needs a junction count")
        model = build_network(n_junctions, seed)
    else:
        raise SynthError(f"unknown profile {profile!r}")
    rng = np.random.default_rng([seed, 7])
    rules_text = expert_rules(model, pert)
    truth = perturb(model, rules_text, pert, rng)
    sensors = choose_sensors(model, rng)
    measurements = measure(truth, sensors, noise, rng)
    notes = [f"profile={profile}", f"seed={seed}", f"noise={noise!r}",
             f"junctions={len(model.junctions)}", f"pipes={len(model.pipes)}",
             "geometry=jittered grid with random edges removed; pipe sizes from peak flow on a BFS tree"]
    return SyntheticProblem(model, truth, rules_text, sensors, measurements, notes)


def variant(model: NetworkModel, seed: int, fraction: float = 0.1) -> NetworkModel:
    """Revision of ``model``: lengths, elevations and base demands each scaled by U[1-f, 1+f]."""
    rng = np.random.default_rng([seed, 11])
    junctions = tuple(replace(j, elevation=j.elevation * (1 + rng.uniform(-fraction, fraction) * 0.1),
                              base_demand=j.base_demand * (1 + rng.uniform(-fraction, fraction)))
                      for j in model.junctions)
    pipes = tuple(replace(p, length=p.length * (1 + rng.uniform(-fraction, fraction))) for p in model.pipes)
    return replace(model, junctions=junctions, pipes=pipes, title=model.title + " (revised)")
