"""Demand-driven hydraulics by the global gradient (Todini-Pilati) method.

Heads at junctions are the Newton unknowns; link flows are updated from the
linearised head-loss relation so that nodal mass balance holds after every
iteration. Emitters are pseudo-links from a junction to the atmosphere that
close when the junction pressure drops to zero.

Small networks are solved with dense batched factorisations over all time
steps at once; large ones with a sparse LU per step, reordered for fill.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .network import NetworkModel, Pipe, Valve, isolated_junctions

G = 9.81
VISCOSITY = 1.004e-6  # m2/s, water at 20 C
DERIVATIVE_FLOOR = 1e-8  # m per L/s
FLOW_TOLERANCE = 1e-6
ENERGY_TOLERANCE = 1e-6  # m
MAX_ITERATIONS = 200
DENSE_LIMIT = 300  # junctions

_RE_LAMINAR = 2000.0
_RE_TURBULENT = 4000.0


class HydraulicError(RuntimeError):
    pass


class SingularSystemError(HydraulicError):
    def __init__(self, junction_id: str):
        self.junction_id = junction_id
        super().__init__(f"junction {junction_id!r} has no open path to a fixed-head source")


class SimulationError(HydraulicError):
    """A time step failed to converge."""

    def __init__(self, time_s: float, result: "SimulationResult"):
        self.time_s = time_s
        self.result = result
        super().__init__(f"hydraulic solve did not converge at t={time_s:g} s")


# ---------------------------------------------------------------------------
# element laws


def _swamee_jain(re, rel_rough):
    """Swamee-Jain friction factor and Re*df/dRe."""
    b = 5.74
    u = rel_rough / 3.7 + b * re ** -0.9
    lg = np.log10(u)
    f = 0.25 / lg**2
    re_df = 0.45 * b * re**-0.9 / (lg**3 * u * np.log(10.0))
    return f, re_df


def _dw_losses(q, diameter, length, roughness, minor_k):
    """Darcy-Weisbach head loss (m) and derivative (m per m3/s) for flows q in m3/s."""
    aq = np.abs(q)
    k_re = 4.0 / (np.pi * diameter * VISCOSITY)  # Re = k_re * |q|
    re = k_re * aq
    c_f = 8.0 * length / (np.pi**2 * G * diameter**5)
    c_m = 8.0 * minor_k / (np.pi**2 * G * diameter**4)
    rel = roughness / diameter

    re_safe = np.maximum(re, _RE_TURBULENT)
    f_t, re_df_t = _swamee_jain(re_safe, rel)
    f4000, _ = _swamee_jain(_RE_TURBULENT, rel)
    f2000 = 64.0 / _RE_LAMINAR
    slope = (f4000 - f2000) / (_RE_TURBULENT - _RE_LAMINAR)
    f_x = f2000 + slope * (re - _RE_LAMINAR)
    re_df_x = re * slope

    laminar = re <= _RE_LAMINAR
    transition = (~laminar) & (re < _RE_TURBULENT)
    f = np.where(transition, f_x, f_t)
    re_df = np.where(transition, re_df_x, re_df_t)

    # laminar friction is linear in q: f*|q| = 64/k_re
    h_turb = c_f * f * aq * q
    d_turb = c_f * (2.0 * aq * f + aq * re_df)
    h_lam = c_f * (64.0 / k_re) * q
    d_lam = c_f * (64.0 / k_re) * np.ones_like(q)
    h = np.where(laminar, h_lam, h_turb) + c_m * aq * q
    d = np.where(laminar, d_lam, d_turb) + 2.0 * c_m * aq
    return h, d


def _hw_losses(q, diameter, length, c, minor_k):
    aq = np.abs(q)
    r = 10.667 * length / (c**1.852 * diameter**4.871)
    c_m = 8.0 * minor_k / (np.pi**2 * G * diameter**4)
    h = r * aq**1.852 * np.sign(q) + c_m * aq * q
    d = 1.852 * r * aq**0.852 + 2.0 * c_m * aq
    return h, d


def _minor_losses(q, diameter, minor_k):
    aq = np.abs(q)
    c_m = 8.0 * minor_k / (np.pi**2 * G * diameter**4)
    return c_m * aq * q, 2.0 * c_m * aq


def headloss(link: Pipe | Valve, flow: float, options) -> float:
    """Signed head loss in m for ``flow`` in L/s along ``link`` (from -> to)."""
    if isinstance(link, Valve):
        if not link.diameter > 0:
            raise ValueError(f"valve {link.id!r}: nonpositive diameter")
        h, _ = _minor_losses(np.array([flow / 1000.0]), link.diameter / 1000.0, link.loss_coeff_k)
        return float(h[0])
    if not (link.diameter > 0 and link.length > 0):
        raise ValueError(f"pipe {link.id!r}: nonpositive diameter or length")
    q = np.array([flow / 1000.0])
    d = link.diameter / 1000.0
    if options.headloss == "hazen-williams":
        h, _ = _hw_losses(q, d, link.length, link.roughness, link.minor_loss_k)
    else:
        h, _ = _dw_losses(q, d, link.length, link.roughness / 1000.0, link.minor_loss_k)
    return float(h[0])


def emitter_flow(pressure: float, coeff: float, exponent: float = 0.5) -> float:
    """Leakage outflow in L/s at ``pressure`` m head."""
    if pressure <= 0 or coeff == 0:
        return 0.0
    return coeff * pressure**exponent


# ---------------------------------------------------------------------------
# results


@dataclass
class HydraulicState:
    node_heads: dict[str, float]
    node_pressures: dict[str, float]
    link_flows: dict[str, float]
    emitter_flows: dict[str, float]
    iterations: int
    converged: bool
    mass_residual: float = 0.0  # max |imbalance| over junctions, L/s
    energy_residual: float = 0.0  # max |dH - h(Q)| over open links, m


@dataclass
class SimulationResult:
    timestamps: list[float]
    junction_ids: list[str]
    reservoir_ids: list[str]
    link_ids: list[str]
    heads: np.ndarray  # (T, junctions + reservoirs)
    elevations: np.ndarray  # (junctions,)
    flows: np.ndarray  # (T, links)
    emitter: np.ndarray  # (T, junctions)
    iterations: np.ndarray
    converged: np.ndarray
    mass_residual: np.ndarray
    energy_residual: np.ndarray

    @property
    def pressures(self) -> np.ndarray:
        return self.heads[:, : len(self.junction_ids)] - self.elevations

    @cached_property
    def states(self) -> list[HydraulicState]:
        nodes = self.junction_ids + self.reservoir_ids
        out = []
        pressures = self.pressures
        for t in range(len(self.timestamps)):
            out.append(HydraulicState(
                node_heads=dict(zip(nodes, self.heads[t].tolist())),
                node_pressures=dict(zip(self.junction_ids, pressures[t].tolist())),
                link_flows=dict(zip(self.link_ids, self.flows[t].tolist())),
                emitter_flows=dict(zip(self.junction_ids, self.emitter[t].tolist())),
                iterations=int(self.iterations[t]),
                converged=bool(self.converged[t]),
                mass_residual=float(self.mass_residual[t]),
                energy_residual=float(self.energy_residual[t]),
            ))
        return out

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


# ---------------------------------------------------------------------------
# compiled network


class HydraulicNetwork:
    """Array form of a :class:`NetworkModel` for repeated solves.

    Instances are immutable; :meth:`with_values` returns a modified copy,
    which is what the calibration loop uses instead of rebuilding models.
    """

    def __init__(self, model: NetworkModel):
        self.model = model
        self.options = model.options
        self.junction_ids = [j.id for j in model.junctions]
        self.reservoir_ids = [r.id for r in model.reservoirs]
        self.link_ids = [l.id for l in model.links]
        nj, nr = len(self.junction_ids), len(self.reservoir_ids)
        node_index = {n: i for i, n in enumerate(self.junction_ids + self.reservoir_ids)}
        self.node_index = node_index
        self.link_index = {l: i for i, l in enumerate(self.link_ids)}
        links = model.links
        self.n_pipes = len(model.pipes)
        self.elevation = np.array([j.elevation for j in model.junctions], dtype=float)
        self.base_demand = np.array([j.base_demand for j in model.junctions], dtype=float)
        self.emitter_coeff = np.array([j.emitter_coeff for j in model.junctions], dtype=float)
        self.reservoir_head = np.array([r.head for r in model.reservoirs], dtype=float)
        self.from_idx = np.array([node_index[l.from_node] for l in links], dtype=np.int64)
        self.to_idx = np.array([node_index[l.to_node] for l in links], dtype=np.int64)
        self.is_valve = np.array([isinstance(l, Valve) for l in links], dtype=bool)
        self.diameter = np.array([l.diameter / 1000.0 for l in links], dtype=float)
        self.length = np.array([l.length if isinstance(l, Pipe) else 0.0 for l in links], dtype=float)
        self.roughness = np.array([l.roughness if isinstance(l, Pipe) else 0.0 for l in links], dtype=float)
        self.minor_k = np.array(
            [l.minor_loss_k if isinstance(l, Pipe) else l.loss_coeff_k for l in links], dtype=float)
        self.is_open = np.array([l.status == "open" for l in links], dtype=bool)

        self.patterns = {k: np.asarray(v, dtype=float) for k, v in model.patterns.items()}
        self.demand_pattern = [j.pattern_id for j in model.junctions]
        self.head_pattern = [r.head_pattern for r in model.reservoirs]

        lost = isolated_junctions(model)
        self.isolated = lost
        self._nj, self._nr = nj, nr

    def with_values(self, *, roughness=None, minor_k=None, base_demand=None, emitter_coeff=None):
        """Copy with replaced per-link / per-junction arrays (link arrays in pipes-then-valves order)."""
        new = object.__new__(HydraulicNetwork)
        new.__dict__.update(self.__dict__)
        if roughness is not None:
            new.roughness = np.asarray(roughness, dtype=float)
        if minor_k is not None:
            new.minor_k = np.asarray(minor_k, dtype=float)
        if base_demand is not None:
            new.base_demand = np.asarray(base_demand, dtype=float)
        if emitter_coeff is not None:
            new.emitter_coeff = np.asarray(emitter_coeff, dtype=float)
        return new

    # -- boundary conditions -------------------------------------------------

    def _multiplier(self, pattern_id: str | None, t: float) -> float:
        if pattern_id is None:
            return 1.0
        mults = self.patterns[pattern_id]
        idx = int(math.floor(t / self.options.pattern_step)) % len(mults)
        return float(mults[idx])

    def boundary(self, times: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
        """Junction demands (T, nj) and reservoir heads (T, nr) at ``times``."""
        key = tuple(float(t) for t in times)
        cache = self.__dict__.setdefault("_multiplier_cache", {})
        if key not in cache:
            dmult = np.array([[self._multiplier(p, t) for p in self.demand_pattern] for t in key],
                             dtype=float).reshape(len(key), self._nj)
            hmult = np.array([[self._multiplier(p, t) for p in self.head_pattern] for t in key],
                             dtype=float).reshape(len(key), self._nr)
            cache[key] = (dmult, hmult)
        dmult, hmult = cache[key]
        return dmult * self.base_demand, hmult * self.reservoir_head

    # -- link laws -------------------------------------------------------------

    def link_losses(self, q_lps: np.ndarray, sel: np.ndarray | None = None):
        """Head loss (m) and derivative (m per L/s) for flows in L/s on links ``sel``."""
        if sel is None:
            sel = np.arange(len(self.link_ids))
        q = q_lps / 1000.0
        h = np.zeros_like(q)
        d = np.zeros_like(q)
        valve = self.is_valve[sel]
        pipe = ~valve
        if pipe.any():
            s = sel[pipe]
            if self.options.headloss == "hazen-williams":
                hp, dp = _hw_losses(q[..., pipe], self.diameter[s], self.length[s],
                                    self.roughness[s], self.minor_k[s])
            else:
                hp, dp = _dw_losses(q[..., pipe], self.diameter[s], self.length[s],
                                    self.roughness[s] / 1000.0, self.minor_k[s])
            h[..., pipe] = hp
            d[..., pipe] = dp
        if valve.any():
            s = sel[valve]
            hv, dv = _minor_losses(q[..., valve], self.diameter[s], self.minor_k[s])
            h[..., valve] = hv
            d[..., valve] = dv
        return h, d / 1000.0

    def _emitter_losses(self, qe, coeff):
        """Pseudo-link head loss (pressure) and derivative for emitter outflow qe >= 0."""
        inv = 1.0 / self.options.emitter_exponent
        safe = np.where(coeff > 0, coeff, 1.0)
        ratio = np.maximum(qe, 0.0) / safe
        h = ratio**inv
        d = inv * ratio ** (inv - 1.0) / safe
        return h, d

    # -- solver ----------------------------------------------------------------

    @property
    def _incidence(self):
        cached = self.__dict__.get("_incidence_cache")
        if cached is None:
            open_links = np.flatnonzero(self.is_open)
            nj = self._nj
            rows = np.repeat(np.arange(len(open_links)), 2)
            cols = np.stack([self.from_idx[open_links], self.to_idx[open_links]], axis=1).ravel()
            vals = np.tile([1.0, -1.0], len(open_links))
            b_all = sp.csr_matrix((vals, (rows, cols)), shape=(len(open_links), nj + self._nr))
            bj = b_all[:, :nj].tocsr()
            br = b_all[:, nj:].tocsr()
            cached = (open_links, bj, br, bj.toarray() if nj <= DENSE_LIMIT else None, br.toarray())
            self.__dict__["_incidence_cache"] = cached
        return cached

    def initial_flows(self, n_steps: int) -> np.ndarray:
        area = np.pi * self.diameter**2 / 4.0
        q0 = np.where(self.is_open, area * 0.3 * 1000.0, 0.0)
        return np.tile(q0, (n_steps, 1))

    def solve(self, demands: np.ndarray, reservoir_heads: np.ndarray,
              q_init: np.ndarray | None = None, max_iterations: int = MAX_ITERATIONS):
        """Solve every row of ``demands``/``reservoir_heads`` as an independent steady state."""
        if self.isolated:
            raise SingularSystemError(self.isolated[0])
        demands = np.atleast_2d(np.asarray(demands, dtype=float))
        reservoir_heads = np.atleast_2d(np.asarray(reservoir_heads, dtype=float))
        n_t, nj = demands.shape
        open_links, bj, br, bj_dense, br_dense = self._incidence
        n_l = len(self.link_ids)

        q = self.initial_flows(n_t) if q_init is None else np.array(q_init, dtype=float)
        q[:, ~self.is_open] = 0.0
        qo = q[:, open_links]
        coeff = self.emitter_coeff
        has_em = coeff > 0
        qe = np.where(has_em, coeff, 0.0) * np.ones((n_t, 1))
        active = np.broadcast_to(has_em, (n_t, nj)).copy()
        heads = np.zeros((n_t, nj))
        fixed = br_dense @ reservoir_heads.T  # (Lo, T): Br Hr per step
        fixed = fixed.T

        iterations = np.zeros(n_t, dtype=np.int64)
        converged = np.zeros(n_t, dtype=bool)
        pending = np.arange(n_t)
        z = self.elevation

        for it in range(1, max_iterations + 1):
            if pending.size == 0:
                break
            qk = qo[pending]
            h, d = self.link_losses(qk, open_links)
            d = np.maximum(d, DERIVATIVE_FLOOR)
            p = 1.0 / d
            a = qk - h * p
            act = active[pending]
            qek = qe[pending]
            he, de = self._emitter_losses(qek, coeff)
            de = np.maximum(de, DERIVATIVE_FLOOR)
            pe = np.where(act, 1.0 / de, 0.0)
            ae = np.where(act, qek - (he) * pe, 0.0)
            # emitter pseudo-link: qe_new = ae + pe*(H - z)
            rhs = -demands[pending] - ae + pe * z - _bt(a + p * fixed[pending], bj, bj_dense)
            hk = self._linear_solve(p, pe, rhs, bj, bj_dense)
            dh_links = _b(hk, bj, bj_dense) + fixed[pending]
            q_new = a + p * dh_links
            qe_new = np.where(act, ae + pe * (hk - z), 0.0)
            # stiff links (tiny derivative) amplify head rounding into mass error: refine once in flow space
            res = _bt(q_new, bj, bj_dense) + qe_new + demands[pending]
            rows = np.flatnonzero(np.abs(res).max(axis=1, initial=0.0) > 1e-10)
            if rows.size:
                dhk = self._linear_solve(p[rows], pe[rows], -res[rows], bj, bj_dense)
                ddh = _b(dhk, bj, bj_dense)
                hk[rows] += dhk
                dh_links[rows] += ddh
                q_new[rows] += p[rows] * ddh
                qe_new[rows] += pe[rows] * dhk

            # emitter status: close on reverse flow, reopen on positive pressure
            pressure = hk - z
            closing = act & (qe_new <= 0.0)
            opening = (~act) & has_em & (pressure > 0.0)
            qe_new = np.where(closing, 0.0, qe_new)
            qe_new = np.where(opening, coeff * np.maximum(pressure, 0.0) ** self.options.emitter_exponent, qe_new)
            act_new = (act & ~closing) | opening
            changed = (closing | opening).any(axis=1)

            num = np.abs(q_new - qk).sum(axis=1) + np.abs(qe_new - qek).sum(axis=1)
            den = np.abs(q_new).sum(axis=1) + np.abs(qe_new).sum(axis=1)
            rel = np.where(den > 0, num / np.where(den > 0, den, 1.0), num)

            h_new, _ = self.link_losses(q_new, open_links)
            energy = np.abs(dh_links - h_new).max(axis=1) if q_new.shape[1] else np.zeros(len(pending))
            he_new, _ = self._emitter_losses(qe_new, coeff)
            em_gap = np.where(act_new, np.abs(pressure - he_new), 0.0)
            energy = np.maximum(energy, em_gap.max(axis=1) if nj else 0.0)

            qo[pending] = q_new
            qe[pending] = qe_new
            active[pending] = act_new
            heads[pending] = hk
            iterations[pending] = it
            done = (rel < FLOW_TOLERANCE) & (~changed) & (energy < ENERGY_TOLERANCE)
            converged[pending[done]] = True
            pending = pending[~done]

        q_full = np.zeros((n_t, n_l))
        q_full[:, open_links] = qo
        all_heads = np.concatenate([heads, reservoir_heads], axis=1)
        mass, energy = self.residuals(all_heads, q_full, qe, demands)
        return all_heads, q_full, qe, iterations, converged, mass, energy

    def residuals(self, heads, flows, qe, demands):
        """Max nodal mass imbalance (L/s) and link energy residual (m) per step."""
        nj = self._nj
        net = np.zeros((flows.shape[0], nj + self._nr))
        np.add.at(net.T, self.from_idx, -flows.T)
        np.add.at(net.T, self.to_idx, flows.T)
        mass = net[:, :nj] - demands - qe
        mass = np.abs(mass).max(axis=1) if nj else np.zeros(flows.shape[0])
        open_links = np.flatnonzero(self.is_open)
        if open_links.size:
            dh = heads[:, self.from_idx[open_links]] - heads[:, self.to_idx[open_links]]
            h, _ = self.link_losses(flows[:, open_links], open_links)
            energy = np.abs(dh - h).max(axis=1)
        else:
            energy = np.zeros(flows.shape[0])
        return mass, energy

    def _linear_solve(self, p, pe, rhs, bj, bj_dense):
        n_t, nj = rhs.shape
        if nj == 0:
            return np.zeros((n_t, 0))
        if bj_dense is not None:
            a = np.matmul(bj_dense.T[None, :, :] * p[:, None, :], bj_dense)
            idx = np.arange(nj)
            a[:, idx, idx] += pe
            return np.linalg.solve(a, rhs[..., None])[..., 0]
        out = np.empty_like(rhs)
        for t in range(n_t):
            a = (bj.T @ sp.diags(p[t]) @ bj + sp.diags(pe[t])).tocsc()
            out[t] = splu(a, permc_spec="MMD_AT_PLUS_A").solve(rhs[t])
        return out

    # -- high level ------------------------------------------------------------

    def simulate(self, times: Sequence[float], q_init: np.ndarray | None = None) -> SimulationResult:
        demands, res_heads = self.boundary(times)
        heads, flows, qe, iters, conv, mass, energy = self.solve(demands, res_heads, q_init)
        return SimulationResult(
            timestamps=[float(t) for t in times],
            junction_ids=list(self.junction_ids),
            reservoir_ids=list(self.reservoir_ids),
            link_ids=list(self.link_ids),
            heads=heads, elevations=self.elevation.copy(), flows=flows, emitter=qe,
            iterations=iters, converged=conv, mass_residual=mass, energy_residual=energy,
        )


def _bt(x, bj, bj_dense):
    """Rows of x (per-link values) mapped to junction sums: x @ Bj."""
    if bj_dense is not None:
        return x @ bj_dense
    return np.asarray((bj.T @ x.T).T)


def _b(h, bj, bj_dense):
    """Junction heads mapped to link head differences: h @ Bj^T."""
    if bj_dense is not None:
        return h @ bj_dense.T
    return np.asarray((bj @ h.T).T)


# ---------------------------------------------------------------------------
# public operations


def solve_steady(model: NetworkModel, time: float = 0.0) -> HydraulicState:
    """Single steady state with demands and source heads scaled by patterns at ``time``."""
    result = HydraulicNetwork(model).simulate([time])
    return result.states[0]


def eps_times(duration: float, step: float) -> list[float]:
    if not step > 0:
        raise ValueError("hydraulic step must be positive")
    if duration == 0:
        return [0.0]
    if duration < step:
        raise ValueError("duration must be at least one step")
    n = duration / step
    if abs(n - round(n)) > 1e-9:
        raise ValueError("duration must be a multiple of the step")
    return [i * step for i in range(int(round(n)))]


def simulate_eps(model: NetworkModel, duration: float | None = None, step: float | None = None,
                 network: HydraulicNetwork | None = None, check: bool = True) -> SimulationResult:
    """Quasi-static extended-period run over ``[0, duration)`` in ``step`` increments.

    Raises :class:`SimulationError` naming the first non-converged time when
    ``check`` is set; otherwise the flags are left on the result.
    """
    duration = model.options.duration if duration is None else duration
    step = model.options.hydraulic_step if step is None else step
    net = network if network is not None else HydraulicNetwork(model)
    result = net.simulate(eps_times(duration, step))
    if check and not result.all_converged:
        bad = int(np.flatnonzero(~result.converged)[0])
        raise SimulationError(result.timestamps[bad], result)
    return result


@dataclass(frozen=True)
class SensorSet:
    flow_sensors: tuple[str, ...] = ()
    pressure_sensors: tuple[str, ...] = ()
    holdout_flow: tuple[str, ...] = ()
    holdout_pressure: tuple[str, ...] = ()

    def all_sensors(self) -> list[tuple[str, str]]:
        return ([("flow", s) for s in self.flow_sensors] + [("pressure", s) for s in self.pressure_sensors]
                + [("flow", s) for s in self.holdout_flow] + [("pressure", s) for s in self.holdout_pressure])

    def calibration(self, kind: str | None = None) -> list[tuple[str, str]]:
        out = [("flow", s) for s in self.flow_sensors] + [("pressure", s) for s in self.pressure_sensors]
        return [k for k in out if kind is None or k[0] == kind]

    def holdout(self) -> list[tuple[str, str]]:
        return [("flow", s) for s in self.holdout_flow] + [("pressure", s) for s in self.holdout_pressure]

    def check(self, model: NetworkModel) -> None:
        if set(self.flow_sensors) & set(self.holdout_flow) or \
                set(self.pressure_sensors) & set(self.holdout_pressure):
            raise ValueError("holdout sensors overlap calibration sensors")
        for kind, sid in self.all_sensors():
            table = model.pipe_index if kind == "flow" else model.junction_index
            if kind == "flow" and sid in model.valve_index:
                continue
            if sid not in table:
                raise KeyError(f"unknown {kind} sensor {sid!r}")


def extract_observations(result: SimulationResult, sensors: SensorSet | Iterable[tuple[str, str]]
                         ) -> dict[tuple[str, str], np.ndarray]:
    """Simulated series per sensor, keyed by ``(kind, element_id)``.

    Flow series are signed in the link's from->to orientation.
    """
    keys = sensors.all_sensors() if isinstance(sensors, SensorSet) else list(sensors)
    link_pos = {l: i for i, l in enumerate(result.link_ids)}
    junction_pos = {j: i for i, j in enumerate(result.junction_ids)}
    out: dict[tuple[str, str], np.ndarray] = {}
    pressures = None
    for kind, sid in keys:
        if kind == "flow":
            if sid not in link_pos:
                raise KeyError(f"unknown flow sensor {sid!r}")
            out[(kind, sid)] = result.flows[:, link_pos[sid]].copy()
        elif kind == "pressure":
            if sid not in junction_pos:
                raise KeyError(f"unknown pressure sensor {sid!r}")
            if pressures is None:
                pressures = result.pressures
            out[(kind, sid)] = pressures[:, junction_pos[sid]].copy()
        else:
            raise KeyError(f"unknown sensor kind {kind!r}")
    return out


RESULT_HEADER = "time_s,element_kind,element_id,quantity,value"


def result_to_csv(result: SimulationResult, model: NetworkModel) -> str:
    buf = io.StringIO()
    buf.write(RESULT_HEADER + "\n")
    link_kind = {p.id: "pipe" for p in model.pipes} | {v.id: "valve" for v in model.valves}
    pressures = result.pressures
    nj = len(result.junction_ids)
    for t, time in enumerate(result.timestamps):
        ts = repr(float(time))
        for i, jid in enumerate(result.junction_ids):
            buf.write(f"{ts},junction,{jid},head_m,{result.heads[t, i]!r}\n")
            buf.write(f"{ts},junction,{jid},pressure_m,{pressures[t, i]!r}\n")
        for i, rid in enumerate(result.reservoir_ids):
            buf.write(f"{ts},reservoir,{rid},head_m,{result.heads[t, nj + i]!r}\n")
        for i, lid in enumerate(result.link_ids):
            buf.write(f"{ts},{link_kind[lid]},{lid},flow_lps,{result.flows[t, i]!r}\n")
    return buf.getvalue()
