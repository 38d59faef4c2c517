"""Baselines and ES-NEAT on one shared fitness and evaluation budget."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .calibration import COMBINED, LoopConfig, MeasurementSet, calibrate, prepare
from .hydraulics import SensorSet
from .neat import NeatConfig
from .network import NetworkModel
from .optimizers import ALIASES, METHODS, OptimizerSpec, optimize
from .rules import ParameterSpace

NEAT_METHOD = "es-neat"
BASELINE_ROW = "pre-calibration"


@dataclass
class MethodResult:
    method: str
    final_best: float
    evaluations: int
    curve: np.ndarray  # best-so-far after each evaluation

    def accepted(self, threshold: float) -> bool:
        return self.final_best < threshold


def canonical_methods(methods) -> list[str]:
    out = []
    for m in methods:
        m = m.strip().lower()
        if not m:
            continue
        m = ALIASES.get(m, m)
        if m in ("neat", "esneat", "es_neat"):
            m = NEAT_METHOD
        if m != NEAT_METHOD and m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
        if m not in out:
            out.append(m)
    if not out:
        raise ValueError("method list is empty")
    return out


def neat_budget_config(config: NeatConfig, budget: int, population: int, seed: int) -> NeatConfig:
    """NEAT settings that spend ``budget`` evaluations over one flow and one pressure phase."""
    population = max(2, min(population, budget // 2))
    gens = max(0, budget // (2 * population) - 1)
    return replace(config, population_size=population, max_generations=gens, seed=seed,
                   elitism=min(config.elitism, population))


def compare(model: NetworkModel, space: ParameterSpace, measurements: MeasurementSet, sensors: SensorSet,
            methods, budget: int = 1000, seed: int = 0, neat_config: NeatConfig | None = None,
            neat_population: int = 50, map_fn=map) -> list[MethodResult]:
    """One seed of every method plus the unmodified-model row, sorted ascending by final best."""
    methods = canonical_methods(methods)
    ctx = prepare(model, space, measurements, sensors, COMBINED)
    problem = ctx.problem
    keys = sensors.calibration()

    def fitness(x):
        return problem.score(np.asarray(x, dtype=float), [(keys, COMBINED)])[0]

    base = fitness(problem.base_vector())
    rows = [MethodResult(BASELINE_ROW, base, 0, np.zeros(0))]
    bounds = space.bounds()
    for method in methods:
        if method == NEAT_METHOD:
            cfg = neat_budget_config(neat_config or NeatConfig(), budget, neat_population, seed)
            curve: list[float] = []

            def track(group, generation, pop, incumbent, curve=curve):
                done = problem.n_sims
                curve.extend([incumbent] * (done - len(curve)))

            run = calibrate(model, space, measurements, sensors, cfg,
                            LoopConfig(max_outer=1, max_simulations=budget), obj=COMBINED, context=ctx,
                            on_generation=track)
            curve_arr = np.minimum.accumulate(np.array(curve, dtype=float)) if curve else np.zeros(0)
            rows.append(MethodResult(method, run.calibration_objective, run.simulations, curve_arr))
        else:
            trace = optimize(OptimizerSpec(method, budget=budget, seed=seed), bounds, fitness, map_fn)
            rows.append(MethodResult(method, trace.best_value, len(trace), trace.best_so_far))
    rows.sort(key=lambda r: (r.final_best if math.isfinite(r.final_best) else math.inf, r.method))
    return rows


def table_csv(rows, threshold: float) -> str:
    out = ["method,final_best,evaluations,accepted"]
    out += [f"{r.method},{r.final_best!r},{r.evaluations},{str(r.accepted(threshold)).lower()}" for r in rows]
    return "\n".join(out) + "\n"


def curve_csv(result: MethodResult) -> str:
    out = ["evaluation,best_so_far"]
    out += [f"{i + 1},{v!r}" for i, v in enumerate(result.curve.tolist())]
    return "\n".join(out) + "\n"


def aggregate(per_seed: list[list[MethodResult]]) -> list[MethodResult]:
    """Median final best and mean evaluations per method across seeds."""
    by_method: dict[str, list[MethodResult]] = {}
    for rows in per_seed:
        for r in rows:
            by_method.setdefault(r.method, []).append(r)
    out = []
    for method, rs in by_method.items():
        out.append(MethodResult(method, float(np.median([r.final_best for r in rs])),
                                int(round(np.mean([r.evaluations for r in rs]))), np.zeros(0)))
    out.sort(key=lambda r: (r.final_best, r.method))
    return out
