"""Bound-constrained black-box optimizers behind one ask/tell contract.

Each method is written as a generator that yields candidate batches and
receives their objective values; :class:`Optimizer` turns that into
``ask``/``tell`` and enforces the evaluation budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

METHODS = ("monte_carlo", "latin_hypercube", "simulated_annealing", "pso", "sceua", "ga")
ALIASES = {"mc": "monte_carlo", "lhs": "latin_hypercube", "sa": "simulated_annealing"}

DEFAULTS = {
    "monte_carlo": {"batch": 100},
    "latin_hypercube": {"batch": 100},
    "simulated_annealing": {"initial_temperature": None, "cooling_rate": 0.99, "step": 0.2, "min_step": 1e-3},
    "pso": {"swarm_size": 20, "inertia": 0.7298, "cognitive": 1.49618, "social": 1.49618, "v_max": 0.5},
    "sceua": {"complexes": 2, "complex_size": None, "evolution_steps": None},
    "ga": {"population": 20, "crossover_rate": 0.9, "mutation_rate": None, "mutation_sigma": 0.1,
           "tournament": 3, "blend_alpha": 0.5},
}


class OptimizerError(RuntimeError):
    pass


class OptimizationAborted(OptimizerError):
    def __init__(self, trace: "EvaluationTrace", cause: BaseException):
        super().__init__(f"objective failed after {len(trace)} evaluations: {cause!r}")
        self.trace = trace
        self.cause = cause


@dataclass
class OptimizerSpec:
    method: str
    params: dict = field(default_factory=dict)
    budget: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.method = ALIASES.get(self.method, self.method)
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        unknown = set(self.params) - set(DEFAULTS[self.method])
        if unknown:
            raise ValueError(f"{self.method}: unknown parameter(s) {sorted(unknown)}")

    def resolved(self) -> dict:
        return {**DEFAULTS[self.method], **self.params}


@dataclass
class EvaluationTrace:
    candidates: list[np.ndarray] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.values)

    def record(self, x, y):
        self.candidates.append(np.array(x, dtype=float))
        self.values.append(float(y))

    @property
    def best_so_far(self) -> np.ndarray:
        v = np.array(self.values, dtype=float)
        v = np.where(np.isnan(v), np.inf, v)
        return np.minimum.accumulate(v) if v.size else v

    @property
    def best_value(self) -> float:
        return float(self.best_so_far[-1]) if self.values else math.inf

    @property
    def best_x(self) -> np.ndarray | None:
        if not self.values:
            return None
        v = np.where(np.isnan(self.values), np.inf, self.values)
        return self.candidates[int(np.argmin(v))]

    def rows(self):
        """(evaluation index, candidate, value), 1-based."""
        return [(i + 1, x, y) for i, (x, y) in enumerate(zip(self.candidates, self.values))]


class Optimizer:
    def __init__(self, spec: OptimizerSpec, bounds: Sequence[tuple[float, float]]):
        b = np.asarray(bounds, dtype=float).reshape(-1, 2)
        if b.shape[0] == 0:
            raise ValueError("bounds must be nonempty")
        if np.any(b[:, 0] > b[:, 1]) or not np.all(np.isfinite(b)):
            raise ValueError("bounds need finite lo <= hi")
        self.spec = spec
        self.lo, self.hi = b[:, 0], b[:, 1]
        self.width = self.hi - self.lo
        self.dim = b.shape[0]
        self.rng = np.random.default_rng(spec.seed)
        self.params = spec.resolved()
        self.used = 0
        self._gen = getattr(self, "_" + spec.method)()
        self._pending = None
        self._started = False

    @property
    def remaining(self) -> int:
        return self.spec.budget - self.used

    def ask(self) -> np.ndarray:
        if self._pending is not None:
            raise OptimizerError("tell() the previous batch first")
        if self.remaining <= 0:
            return np.zeros((0, self.dim))
        try:
            batch = next(self._gen) if not self._started else self._gen.send(self._last)
        except StopIteration:
            return np.zeros((0, self.dim))
        self._started = True
        batch = np.clip(np.atleast_2d(np.asarray(batch, dtype=float)), self.lo, self.hi)
        self._full = batch.shape[0]
        self._pending = batch[: self.remaining]
        return self._pending

    def tell(self, values) -> None:
        if self._pending is None:
            raise OptimizerError("nothing asked")
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size != self._pending.shape[0]:
            raise OptimizerError("value count differs from the asked batch")
        self.used += values.size
        values = np.where(np.isnan(values), np.inf, values)
        # a truncated final batch is padded so generator arithmetic stays valid
        if values.size < self._full:
            values = np.concatenate([values, np.full(self._full - values.size, np.inf)])
        self._last = values
        self._pending = None

    # -- helpers -----------------------------------------------------------

    def _uniform(self, n):
        return self.lo + self.rng.random((n, self.dim)) * self.width

    def _reflect(self, x, v=None):
        """Mirror coordinates back into the box (velocity sign flipped where mirrored)."""
        x = np.array(x, dtype=float)
        for _ in range(4):
            low = x < self.lo
            high = x > self.hi
            if not (low.any() or high.any()):
                break
            x = np.where(low, 2 * self.lo - x, x)
            x = np.where(high, 2 * self.hi - x, x)
            if v is not None:
                v = np.where(low | high, -v, v)
        x = np.clip(x, self.lo, self.hi)
        return (x, v) if v is not None else x

    # -- methods -----------------------------------------------------------

    def _monte_carlo(self):
        batch = int(self.params["batch"])
        while True:
            yield self._uniform(min(batch, max(self.remaining, 1)))

    def _latin_hypercube(self):
        n = self.spec.budget
        design = np.empty((n, self.dim))
        for j in range(self.dim):
            strata = self.rng.permutation(n)
            design[:, j] = self.lo[j] + (strata + self.rng.random(n)) / n * self.width[j]
        batch = int(self.params["batch"])
        for start in range(0, n, batch):
            yield design[start:start + batch]

    def _simulated_annealing(self):
        p = self.params
        x = self._uniform(1)[0]
        fx = (yield x[None, :])[0]
        t0 = p["initial_temperature"]
        if t0 is None:
            t0 = max(abs(fx), 1e-12) * 0.1
        t = t0
        alpha = p["cooling_rate"]
        best = fx
        while True:
            scale = max(p["step"] * math.sqrt(t / t0), p["min_step"])
            cand = self._reflect(x + self.rng.normal(0.0, 1.0, self.dim) * scale * self.width)
            fc = (yield cand[None, :])[0]
            if fc <= fx or (t > 0 and self.rng.random() < math.exp(-(fc - fx) / t)):
                x, fx = cand, fc
            best = min(best, fc)
            t *= alpha

    def _pso(self):
        p = self.params
        n = int(p["swarm_size"])
        x = self._uniform(n)
        vmax = p["v_max"] * self.width
        v = (self.rng.random((n, self.dim)) * 2 - 1) * vmax * 0.5
        f = yield x
        pbest, pval = x.copy(), f.copy()
        g = int(np.argmin(pval))
        while True:
            r1 = self.rng.random((n, self.dim))
            r2 = self.rng.random((n, self.dim))
            v = p["inertia"] * v + p["cognitive"] * r1 * (pbest - x) + p["social"] * r2 * (pbest[g] - x)
            v = np.clip(v, -vmax, vmax)
            x, v = self._reflect(x + v, v)
            f = yield x
            better = f < pval
            pbest[better] = x[better]
            pval[better] = f[better]
            g = int(np.argmin(pval))

    def _sceua(self):
        p = self.params
        d = self.dim
        n_cx = int(p["complexes"])
        m = int(p["complex_size"] or 2 * d + 1)
        q = d + 1
        beta = int(p["evolution_steps"] or 2 * d + 1)
        pts = self._uniform(n_cx * m)
        vals = yield pts
        weights = 2.0 * (m - np.arange(m)) / (m * (m + 1))
        while True:
            order = np.argsort(vals, kind="stable")
            pts, vals = pts[order], vals[order]
            for k in range(n_cx):
                idx = np.arange(k, n_cx * m, n_cx)
                cx, cv = pts[idx].copy(), vals[idx].copy()
                for _ in range(beta):
                    sub = np.sort(self.rng.choice(m, size=q, replace=False, p=weights))
                    s_pts, s_vals = cx[sub], cv[sub]
                    worst = int(np.argmax(s_vals))
                    others = np.delete(np.arange(q), worst)
                    centroid = s_pts[others].mean(axis=0)
                    box_lo, box_hi = cx.min(axis=0), cx.max(axis=0)
                    new = 2 * centroid - s_pts[worst]
                    if np.any(new < self.lo) or np.any(new > self.hi):
                        new = box_lo + self.rng.random(d) * (box_hi - box_lo)
                    fn = (yield new[None, :])[0]
                    if fn >= s_vals[worst]:
                        new = 0.5 * (centroid + s_pts[worst])
                        fn = (yield new[None, :])[0]
                        if fn >= s_vals[worst]:
                            new = box_lo + self.rng.random(d) * (box_hi - box_lo)
                            fn = (yield new[None, :])[0]
                    cx[sub[worst]], cv[sub[worst]] = new, fn
                    o = np.argsort(cv, kind="stable")
                    cx, cv = cx[o], cv[o]
                pts[idx], vals[idx] = cx, cv

    def _ga(self):
        p = self.params
        n = int(p["population"])
        d = self.dim
        rate = p["mutation_rate"] if p["mutation_rate"] is not None else 1.0 / d
        pop = self._uniform(n)
        fit = yield pop
        budget = self.spec.budget
        while True:
            progress = min(self.used / budget, 1.0)
            sigma = p["mutation_sigma"] * (1.0 - progress) + 0.005
            elite = int(np.argmin(fit))
            children = [pop[elite].copy()]
            while len(children) < n:
                a = self._tournament(fit, int(p["tournament"]))
                b = self._tournament(fit, int(p["tournament"]))
                if self.rng.random() < p["crossover_rate"]:
                    alpha = p["blend_alpha"]
                    lo = np.minimum(pop[a], pop[b])
                    hi = np.maximum(pop[a], pop[b])
                    span = hi - lo
                    child = lo - alpha * span + self.rng.random(d) * (1 + 2 * alpha) * span
                else:
                    child = pop[a].copy()
                mask = self.rng.random(d) < rate
                child = child + mask * self.rng.normal(0.0, 1.0, d) * sigma * self.width
                children.append(self._reflect(child))
            new = np.array(children[1:])
            new_fit = yield new
            pop = np.vstack([pop[elite][None, :], new])
            fit = np.concatenate([[fit[elite]], new_fit])

    def _tournament(self, fit, k):
        idx = self.rng.choice(len(fit), size=min(k, len(fit)), replace=False)
        return int(idx[np.argmin(fit[idx])])


def optimize(spec: OptimizerSpec, bounds, objective: Callable[[np.ndarray], float],
             map_fn: Callable = map) -> EvaluationTrace:
    """Run ``spec`` to its budget; every candidate lies inside ``bounds``."""
    opt = Optimizer(spec, bounds)
    trace = EvaluationTrace()
    while opt.remaining > 0:
        batch = opt.ask()
        if batch.shape[0] == 0:
            break
        values = []
        try:
            for x, y in zip(batch, map_fn(objective, list(batch))):
                values.append(float(y))
                trace.record(x, y)
        except Exception as exc:
            raise OptimizationAborted(trace, exc) from exc
        opt.tell(values)
    return trace
