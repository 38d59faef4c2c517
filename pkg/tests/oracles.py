"""Independent reference implementations used by the tests.

Nothing here imports the solver, the NEAT activation or the objective code;
each check is written from the defining formulas with plain loops.
"""

from __future__ import annotations

import math

G = 9.81
NU = 1.004e-6


# -- hydraulics -----------------------------------------------------------------


def friction_factor(re: float, rel: float) -> float:
    def sj(r):
        return 0.25 / math.log10(rel / 3.7 + 5.74 / r**0.9) ** 2

    if re <= 2000.0:
        return 64.0 / re if re > 0 else math.inf
    if re >= 4000.0:
        return sj(re)
    f_lo, f_hi = 64.0 / 2000.0, sj(4000.0)
    return f_lo + (f_hi - f_lo) * (re - 2000.0) / 2000.0


def headloss_m(kind: str, q_lps: float, d_mm: float, length: float, rough: float, k: float,
               formula: str = "darcy-weisbach") -> float:
    q = q_lps / 1000.0
    d = d_mm / 1000.0
    s = math.copysign(1.0, q) if q != 0 else 0.0
    minor = k * 8.0 * q * q / (math.pi**2 * G * d**4) * s
    if kind == "valve":
        return minor
    if q == 0:
        return 0.0
    if formula == "hazen-williams":
        return 10.667 * length * abs(q) ** 1.852 / (rough**1.852 * d**4.871) * s + minor
    re = 4.0 * abs(q) / (math.pi * d * NU)
    if re <= 2000.0:
        # Hagen-Poiseuille, written without f so tiny flows do not overflow
        return 128.0 * NU * length * q / (math.pi * G * d**4) + minor
    f = friction_factor(re, rough / 1000.0 / d)
    return f * 8.0 * length * q * q / (math.pi**2 * G * d**5) * s + minor


def state_residuals(model, node_heads: dict, link_flows: dict, emitter_flows: dict, demands: dict):
    """Worst (mass excess ratio, energy residual m, emitter residual m) of a steady state.

    Mass excess ratio is |imbalance| / max(1, |demand|), so < 1e-6 is the pass mark.
    """
    balance = {j.id: 0.0 for j in model.junctions}
    for link in list(model.pipes) + list(model.valves):
        q = link_flows[link.id]
        if link.from_node in balance:
            balance[link.from_node] -= q
        if link.to_node in balance:
            balance[link.to_node] += q
    mass = 0.0
    for j in model.junctions:
        imbalance = balance[j.id] - demands[j.id] - emitter_flows.get(j.id, 0.0)
        mass = max(mass, abs(imbalance) / max(1.0, abs(demands[j.id])))

    energy = 0.0
    for p in model.pipes:
        q = link_flows[p.id]
        if p.status != "open":
            energy = max(energy, abs(q) * 1e6)  # closed pipes must carry nothing
            continue
        dh = node_heads[p.from_node] - node_heads[p.to_node]
        h = headloss_m("pipe", q, p.diameter, p.length, p.roughness, p.minor_loss_k, model.options.headloss)
        energy = max(energy, abs(dh - h))
    for v in model.valves:
        q = link_flows[v.id]
        if v.status != "open":
            energy = max(energy, abs(q) * 1e6)
            continue
        dh = node_heads[v.from_node] - node_heads[v.to_node]
        energy = max(energy, abs(dh - headloss_m("valve", q, v.diameter, 0.0, 0.0, v.loss_coeff_k)))

    emitter = 0.0
    gamma = model.options.emitter_exponent
    for j in model.junctions:
        qe = emitter_flows.get(j.id, 0.0)
        p = node_heads[j.id] - j.elevation
        if j.emitter_coeff == 0:
            emitter = max(emitter, abs(qe) * 1e6)
        elif qe > 0:
            emitter = max(emitter, abs(p - (qe / j.emitter_coeff) ** (1.0 / gamma)))
        else:
            emitter = max(emitter, max(p, 0.0))
    return mass, energy, emitter


# -- neat -------------------------------------------------------------------------


def _act(name, x):
    if name == "sigmoid":
        return 1.0 / (1.0 + math.exp(-4.9 * x)) if x > -100 else 0.0
    if name == "clamped":
        return min(1.0, max(-1.0, x))
    if name == "identity":
        return x
    raise ValueError(name)


def relaxation_activate(genome, inputs):
    """Output values by repeated synchronous sweeps until every node is stable.

    Works without a topological order: in an acyclic graph the values stop
    changing after at most (number of nodes) sweeps.
    """
    value = {nid: 0.0 for nid in genome.nodes}
    for i, x in enumerate(inputs):
        value[i] = float(x)
    enabled = [c for c in genome.connections.values() if c.enabled]
    for _ in range(len(genome.nodes) + 2):
        new = dict(value)
        for nid, node in genome.nodes.items():
            if node.role == "input":
                continue
            total = 0.0
            for c in enabled:
                if c.dst == nid:
                    total += c.weight * value[c.src]
            new[nid] = _act(node.activation, total)
        if new == value:
            break
        value = new
    return [value[genome.n_inputs + k] for k in range(genome.n_outputs)]


def genome_problems(genome) -> list[str]:
    problems = []
    ins = [n for n, g in genome.nodes.items() if g.role == "input"]
    outs = [n for n, g in genome.nodes.items() if g.role == "output"]
    if sorted(ins) != list(range(genome.n_inputs)):
        problems.append("input ids")
    if sorted(outs) != list(range(genome.n_inputs, genome.n_inputs + genome.n_outputs)):
        problems.append("output ids")
    pairs = set()
    for innov, c in genome.connections.items():
        if innov != c.innovation:
            problems.append("innovation key")
        if c.src not in genome.nodes or c.dst not in genome.nodes:
            problems.append("dangling connection")
            continue
        if genome.nodes[c.dst].role == "input" or genome.nodes[c.src].role == "output":
            problems.append("bad direction")
        if (c.src, c.dst) in pairs:
            problems.append("duplicate pair")
        pairs.add((c.src, c.dst))
        if not math.isfinite(c.weight):
            problems.append("weight")
    # cycle check over every gene, enabled or not (Kahn's algorithm)
    indeg = {n: 0 for n in genome.nodes}
    succ = {n: [] for n in genome.nodes}
    for c in genome.connections.values():
        if c.src in genome.nodes and c.dst in genome.nodes:
            succ[c.src].append(c.dst)
            indeg[c.dst] += 1
    stack = [n for n, d in indeg.items() if d == 0]
    seen = 0
    while stack:
        n = stack.pop()
        seen += 1
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                stack.append(m)
    if seen != len(genome.nodes):
        problems.append("cycle")
    return problems


# -- objectives ---------------------------------------------------------------


def _std(xs):
    m = sum(xs) / len(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / len(xs))


def direct_objective(sim: dict, obs: dict, kind: str, normalization: str) -> float:
    residuals = []
    nse_terms = []
    for key in sorted(obs):
        o = [float(v) for v in obs[key]]
        s = [float(v) for v in sim[key]]
        scale = max(_std(o), 1e-6) if normalization == "per-sensor-std" else 1.0
        r = [(si - oi) / scale for si, oi in zip(s, o)]
        residuals.extend(r)
        mean = sum(o) / len(o)
        den = sum((oi - mean) ** 2 for oi in o)
        num = sum((si - oi) ** 2 for si, oi in zip(s, o))
        nse_terms.append(1.0 - num / den)
    if kind == "rmse":
        return math.sqrt(math.fsum(x * x for x in residuals) / len(residuals))
    if kind == "mae":
        return math.fsum(abs(x) for x in residuals) / len(residuals)
    if kind == "nse":
        return -sum(nse_terms) / len(nse_terms)
    raise ValueError(kind)
