"""Random valid networks for property tests."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from aquacal.network import HydraulicOptions, Junction, NetworkModel, Pipe, Reservoir, Valve


def random_network(rng: np.random.Generator, n_junctions: int, *, formula: str = "darcy-weisbach",
                   extra_loops: float = 0.3, valves: bool = True, emitters: bool = True,
                   n_reservoirs: int | None = None) -> NetworkModel:
    """Connected network: random tree over the junctions plus loop-closing pipes."""
    n_res = n_reservoirs or int(rng.integers(1, 4))
    head = 80.0 + 10.0 * np.log10(n_junctions + 1)
    reservoirs = tuple(Reservoir(f"R{k}", float(head + rng.uniform(-2, 2))) for k in range(n_res))
    junctions = []
    for i in range(n_junctions):
        ec = float(rng.uniform(0.01, 0.2)) if emitters and rng.random() < 0.05 else 0.0
        junctions.append(Junction(f"J{i}", float(rng.uniform(0.0, 20.0)), float(rng.uniform(0.0, 1.0)),
                                  emitter_coeff=ec))
    nodes = [j.id for j in junctions]
    edges = []
    for i in range(1, n_junctions):
        edges.append((nodes[int(rng.integers(0, i))], nodes[i]))
    for k, r in enumerate(reservoirs):
        edges.append((r.id, nodes[int(rng.integers(0, n_junctions))] if k else nodes[0]))
    for _ in range(int(extra_loops * n_junctions)):
        a, b = rng.choice(n_junctions, size=2, replace=False)
        edges.append((nodes[a], nodes[b]))
    seen = set()
    pipes, valve_list = [], []
    for k, (a, b) in enumerate(edges):
        if (a, b) in seen or (b, a) in seen:
            continue
        seen.add((a, b))
        if rng.random() < 0.5:
            a, b = b, a
        diameter = float(rng.choice([100.0, 150.0, 200.0, 300.0, 400.0, 500.0]))
        if valves and rng.random() < 0.03 and not (a.startswith("R") or b.startswith("R")):
            valve_list.append(Valve(f"V{k}", a, b, diameter, "TCV", float(rng.uniform(0.0, 5.0))))
            continue
        rough = float(rng.uniform(0.001, 0.5)) if formula == "darcy-weisbach" else float(rng.uniform(90, 140))
        pipes.append(Pipe(f"P{k}", a, b, float(rng.uniform(10.0, 500.0)), diameter, rough,
                          float(rng.choice([0.0, 0.0, 1.0]))))
    return NetworkModel(tuple(junctions), reservoirs, tuple(pipes), tuple(valve_list),
                        options=HydraulicOptions(headloss=formula))


ident = st.text(alphabet="ABCDEFGHJKLMNPQRSTUVWXYZ0123456789_", min_size=1, max_size=6)
finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)
positive = st.floats(min_value=1e-3, max_value=1e5, allow_nan=False, allow_infinity=False)
nonneg = st.floats(min_value=0.0, max_value=1e4, allow_nan=False, allow_infinity=False)


@st.composite
def models(draw):
    """Arbitrary valid models (round-trip material, not necessarily solvable)."""
    n_j = draw(st.integers(0, 8))
    ids = draw(st.lists(ident, min_size=n_j + 2, max_size=n_j + 2, unique=True))
    patterns = {"pat": tuple(draw(st.lists(nonneg, min_size=1, max_size=5)))}
    zones = st.one_of(st.none(), st.sampled_from(["A", "B", "north"]))
    junctions = tuple(
        Junction(f"J{ids[i]}", draw(finite), draw(nonneg), draw(st.sampled_from([None, "pat"])),
                 draw(st.sampled_from([0.0, 0.0, 0.5])), draw(zones),
                 draw(st.one_of(st.none(), st.floats(0, 100, allow_nan=False))))
        for i in range(n_j))
    reservoirs = (Reservoir(f"R{ids[-1]}", draw(finite), draw(st.sampled_from([None, "pat"]))),)
    nodes = [j.id for j in junctions] + [r.id for r in reservoirs]
    pipes = []
    for i, j in enumerate(junctions):
        src = nodes[draw(st.integers(0, len(nodes) - 1))]
        if src == j.id:
            src = reservoirs[0].id
        pipes.append(Pipe(f"P{i}", src, j.id, draw(positive), draw(positive), draw(positive), draw(nonneg),
                          draw(st.sampled_from(["open", "closed"])),
                          draw(st.sampled_from([None, "PE", "CI"])),
                          draw(st.one_of(st.none(), st.floats(0, 100, allow_nan=False)))))
    valves = ()
    if junctions and draw(st.booleans()):
        valves = (Valve("V1", reservoirs[0].id, junctions[0].id, draw(positive), "TCV", draw(nonneg),
                        draw(st.sampled_from(["open", "closed"]))),)
    options = HydraulicOptions(draw(st.sampled_from(["darcy-weisbach", "hazen-williams"])),
                               float(draw(st.integers(0, 48)) * 3600), 3600.0, 3600.0,
                               draw(st.floats(0.3, 1.5, allow_nan=False)))
    return NetworkModel(junctions, reservoirs, tuple(pipes), valves, patterns, options, "generated")
