import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aquacal import calibration as cal
from aquacal.calibration import (COMBINED, CalibrationError, FeatureSchema, LoopConfig, MeasurementSet, Objective,
                                 Problem, align, build_features, calibrate, decode, objective, prepare,
                                 read_measurements, read_sensors, validate_run, write_measurements,
                                 write_sensors)
from aquacal.hydraulics import HydraulicNetwork, SensorSet
from aquacal.neat import ConnectionGene, Genome, InnovationRegistry, NeatConfig, NodeGene, minimal_genome
from aquacal.network import parse_inp
from aquacal.rules import ParameterSpace, ParameterSpec, compile_rules, parse_rules
from aquacal.synth import Perturbation, make_problem
from oracles import direct_objective

STAR = """[JUNCTIONS]
J0 10 1
J1 10 1
J2 10 1
J3 10 1
J4 10 1
J5 10 1
J6 10 1
J7 10 1
[RESERVOIRS]
R 60
[PIPES]
P0 R J0 100 200 0.1
P1 J0 J1 100 150 0.1
P2 J0 J2 100 150 0.1
P3 J0 J3 100 150 0.1
P4 J0 J4 100 150 0.1
P5 J0 J5 100 150 0.1
P6 J1 J6 100 100 0.1
P7 J1 J7 100 100 0.1
"""


@pytest.fixture(scope="module")
def synthetic():
    p = make_problem(seed=1)
    space = compile_rules(parse_rules(p.rules_text), p.model)
    return p, space


def _truth_vector(problem, space):
    vec = []
    for s in space.specs:
        if s.element_kind == "junction":
            vec.append(problem.truth.junction_index[s.element_id].base_demand)
        else:
            vec.append(problem.truth.pipe_index[s.element_id].roughness)
    return np.array(vec)


# -- features -------------------------------------------------------------------


def test_constant_feature_is_half():
    schema, feats = build_features(parse_inp(STAR))
    names = schema.block("pipe").names
    col = names.index("length_norm")
    assert all(feats[("pipe", f"P{i}")][col] == 0.5 for i in range(8))


def test_degree_feature_hand_value():
    schema, feats = build_features(parse_inp(STAR))
    col = schema.block("junction").names.index("degree_norm")
    assert feats[("junction", "J1")][col] == pytest.approx((3 - 1) / (6 - 1), abs=1e-15)
    assert feats[("junction", "J0")][col] == 1.0 and feats[("junction", "J6")][col] == 0.0


def test_feature_endpoints_and_range(fixture_text):
    model = parse_inp(fixture_text("fossolo_like.inp"))
    schema, feats = build_features(model)
    col = schema.block("pipe").names.index("length_norm")
    longest = max(model.pipes, key=lambda p: p.length).id
    shortest = min(model.pipes, key=lambda p: p.length).id
    assert feats[("pipe", longest)][col] == 1.0 and feats[("pipe", shortest)][col] == 0.0
    for v in feats.values():
        assert np.all((v >= 0) & (v <= 1))
    assert schema.block("pipe").names[0] == "const_1"
    assert FeatureSchema.from_text(schema.text()) == schema
    again, _ = build_features(parse_inp(fixture_text("fossolo_like.inp")))
    assert again.digest() == schema.digest()


# -- decode ---------------------------------------------------------------------


def _bias_genome(n_in, n_out, weight):
    """Every output driven by the const_1 input (index 0) only."""
    g = minimal_genome(n_in, n_out, InnovationRegistry(n_in + n_out), np.random.default_rng(0))
    for innov, c in list(g.connections.items()):
        g.connections[innov] = ConnectionGene(innov, c.src, c.dst, weight if c.src == 0 else 0.0)
    return g


@pytest.mark.parametrize("weight,expect", [(-5.0, "lo"), (5.0, "hi"), (0.0, "mid")])
def test_decode_affine_map(weight, expect):
    model = parse_inp(STAR)
    schema, feats = build_features(model)
    specs = [ParameterSpec("junction", f"J{i}", "base_demand", 10.0, 30.0, group="flow") for i in range(8)]
    n_in = len(schema.block("junction").names)
    values = decode(_bias_genome(n_in, 1, weight), specs, feats, schema)
    want = {"lo": 10.0, "hi": 30.0, "mid": 20.0}[expect]
    assert np.all(values == want)


def test_decode_schema_mismatch():
    model = parse_inp(STAR)
    schema, feats = build_features(model)
    specs = [ParameterSpec("junction", "J0", "base_demand", 0.0, 1.0, group="flow")]
    with pytest.raises(CalibrationError):
        decode(_bias_genome(2, 1, 1.0), specs, feats, schema)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_decode_within_bounds(seed):
    rng = np.random.default_rng(seed)
    model = parse_inp(STAR)
    schema, feats = build_features(model)
    specs = [ParameterSpec("pipe", f"P{i}", "roughness", 0.001, float(rng.uniform(0.002, 5)), group="pressure")
             for i in range(8)]
    n_in = len(schema.block("pipe").names)
    g = minimal_genome(n_in, 1, InnovationRegistry(n_in + 1), rng)
    for innov, c in list(g.connections.items()):
        g.connections[innov] = ConnectionGene(innov, c.src, c.dst, float(rng.normal(0, 10)))
    values = decode(g, specs, feats, schema)
    assert np.all(values >= 0.001) and np.all(values <= [s.hi for s in specs])


# -- objective ------------------------------------------------------------------


def test_objective_unit_offset():
    obs = {("flow", "a"): np.array([1.0, 2.0, 3.0])}
    sim = {("flow", "a"): np.array([2.0, 3.0, 4.0])}
    assert objective(sim, obs, Objective("rmse", "raw")) == 1.0
    assert objective(sim, obs, Objective("mae", "raw")) == 1.0


@pytest.mark.parametrize("norm", ["raw", "per-sensor-std"])
def test_objective_perfect_fit(norm):
    obs = {("flow", "a"): np.array([1.0, 2.0, 5.0]), ("pressure", "b"): np.array([40.0, 41.0, 39.5])}
    assert objective(obs, obs, Objective("rmse", norm)) == 0.0
    assert objective(obs, obs, Objective("mae", norm)) == 0.0
    assert objective(obs, obs, Objective("nse", norm)) == -1.0


@given(st.integers(0, 2**32 - 1), st.sampled_from(["rmse", "mae", "nse"]),
       st.sampled_from(["raw", "per-sensor-std"]))
@settings(max_examples=200, deadline=None)
def test_objective_matches_direct_formula(seed, kind, norm):
    rng = np.random.default_rng(seed)
    obs, sim = {}, {}
    for k in range(int(rng.integers(1, 4))):
        o = rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 10), size=100)
        obs[("flow", f"s{k}")] = o
        sim[("flow", f"s{k}")] = o + rng.normal(0, rng.uniform(0.01, 5), size=100)
    got = objective(sim, obs, Objective(kind, norm))
    want = direct_objective({k: v.tolist() for k, v in sim.items()}, {k: v.tolist() for k, v in obs.items()},
                            kind, norm)
    assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_objective_reordering_invariant(seed):
    rng = np.random.default_rng(seed)
    o, s = rng.normal(size=30), rng.normal(size=30)
    perm = rng.permutation(30)
    for kind in ("rmse", "mae"):
        a = objective({"k": s}, {"k": o}, Objective(kind, "raw"))
        b = objective({"k": s[perm]}, {"k": o[perm]}, Objective(kind, "raw"))
        assert math.isclose(a, b, rel_tol=1e-12)


def test_objective_errors():
    with pytest.raises(CalibrationError):
        objective({}, {}, Objective())
    with pytest.raises(CalibrationError):
        objective({"k": np.zeros(2)}, {"k": np.zeros(3)}, Objective())
    with pytest.raises(CalibrationError):
        objective({"k": np.zeros(0)}, {"k": np.zeros(0)}, Objective())
    with pytest.raises(ValueError):
        Objective("r2")


def test_align_rejects_missing_times():
    assert list(align([0.0, 900.0, 1800.0], np.array([900.0, 1800.0]))) == [1, 2]
    with pytest.raises(CalibrationError, match="450"):
        align([0.0, 900.0], np.array([450.0]))


# -- files ----------------------------------------------------------------------


def test_measurement_round_trip(synthetic):
    p, _ = synthetic
    text = write_measurements(p.measurements, p.model)
    back = read_measurements(text)
    assert set(back.series) == set(p.measurements.series)
    for key, (t, v) in p.measurements.series.items():
        assert np.array_equal(back.series[key][0], t) and np.array_equal(back.series[key][1], v)


def test_measurement_errors():
    with pytest.raises(CalibrationError):
        read_measurements("t,kind\n")
    head = cal.MEASUREMENT_HEADER + "\n"
    with pytest.raises(CalibrationError, match="line 2"):
        read_measurements(head + "0,junction,J1,flow_lps,1.0\n")
    with pytest.raises(CalibrationError):
        read_measurements(head + "0,pipe,P1,flow_lps,1\n0,pipe,P1,flow_lps,2\n")


def test_sensor_file_round_trip():
    s = SensorSet(("P1", "P2"), ("J1",), ("P3",), ("J4", "J5"))
    assert read_sensors(write_sensors(s)) == s
    assert read_sensors("# comment\nsensor flow P1  # main\n") == SensorSet(("P1",))
    with pytest.raises(CalibrationError, match="line 1"):
        read_sensors("sensor level T1\n")


# -- fitness --------------------------------------------------------------------


def test_truth_vector_scores_zero(synthetic):
    p, space = synthetic
    problem = Problem(p.model, space, p.measurements, p.sensors, COMBINED)
    vec = _truth_vector(p, space)
    assert np.all(vec >= space.lows) and np.all(vec <= space.highs)
    assert problem.evaluate(vec) <= 1e-9
    assert problem.evaluate(vec, p.sensors.holdout()) <= 1e-9


def test_nonsense_vector_is_finite(synthetic):
    p, space = synthetic
    problem = Problem(p.model, space, p.measurements, p.sensors, COMBINED)
    value = problem.evaluate(space.highs)
    assert math.isfinite(value) and value > 0


def test_penalty_ranks_below_converged(synthetic, monkeypatch):
    p, space = synthetic
    problem = Problem(p.model, space, p.measurements, p.sensors, COMBINED)
    good = problem.evaluate(space.highs)
    original = HydraulicNetwork.solve
    monkeypatch.setattr(HydraulicNetwork, "solve",
                        lambda self, d, r, q_init=None, **k: original(self, d, r, None, max_iterations=1))
    bad = problem.evaluate(space.centers)
    assert bad >= cal.PENALTY > good


def test_problem_rejects_empty_space(synthetic):
    p, _ = synthetic
    with pytest.raises(CalibrationError):
        Problem(p.model, ParameterSpace(), p.measurements, p.sensors)


# -- loop -----------------------------------------------------------------------


SMALL = dict(population_size=12, max_generations=3)


def test_zero_perturbation_exits_without_evolution():
    p = make_problem(seed=2, pert=Perturbation.none())
    space = compile_rules(parse_rules(p.rules_text), p.model)
    run = calibrate(p.model, space, p.measurements, p.sensors, NeatConfig(**SMALL))
    assert run.generations == 0 and run.outer_iterations == 0
    assert run.calibration_objective <= 1e-9
    assert run.validation_objective <= 1e-9


def test_budget_is_counted_exactly(synthetic, monkeypatch):
    p, space = synthetic
    calls = []
    original = Problem.simulate
    monkeypatch.setattr(Problem, "simulate", lambda self, vec: calls.append(1) or original(self, vec))
    config = NeatConfig(population_size=20, max_generations=5, fitness_threshold=0.0, seed=3)
    run = calibrate(p.model, space, p.measurements, p.sensors, config, LoopConfig(max_outer=1))
    assert run.simulations == len(calls)
    assert run.simulations <= 2 * 20 * (5 + 1)
    assert run.generations == 2 * 6


def test_simulation_cap(synthetic):
    p, space = synthetic
    config = NeatConfig(population_size=10, max_generations=50, fitness_threshold=0.0)
    run = calibrate(p.model, space, p.measurements, p.sensors, config, LoopConfig(max_simulations=60))
    assert run.simulations <= 60


def test_calibrate_deterministic_and_monotone(synthetic):
    p, space = synthetic
    config = NeatConfig(**SMALL, seed=4)
    a = calibrate(p.model, space, p.measurements, p.sensors, config, LoopConfig(max_outer=2, min_improvement=0.0))
    b = calibrate(p.model, space, p.measurements, p.sensors, config,
                  LoopConfig(max_outer=2, min_improvement=0.0, threads=4))
    assert a.history == b.history and a.combined_history == b.combined_history
    assert np.array_equal(a.final_vector, b.final_vector)
    incumbents = [row[3] for row in a.combined_history]
    assert all(x >= y for x, y in zip(incumbents, incumbents[1:]))
    assert np.all(a.final_vector >= space.lows) and np.all(a.final_vector <= space.highs)
    assert a.calibration_objective < a.baseline_objective


def test_single_kind_degrades(synthetic, caplog):
    p, space = synthetic
    sensors = SensorSet(p.sensors.flow_sensors, (), p.sensors.holdout_flow, ())
    run = calibrate(p.model, space, p.measurements, sensors, NeatConfig(**SMALL))
    assert {h[0] for h in run.history} == {"flow"}
    assert "pressure" in caplog.text


def test_no_calibration_sensors(synthetic):
    p, space = synthetic
    with pytest.raises(CalibrationError):
        calibrate(p.model, space, p.measurements, SensorSet((), (), p.sensors.holdout_flow, ()),
                  NeatConfig(**SMALL))


def test_holdout_equal_to_calibration(synthetic):
    p, space = synthetic
    run = calibrate(p.model, space, p.measurements, p.sensors, NeatConfig(**SMALL))
    same = validate_run(run, p.model, space, p.measurements, p.sensors, holdout=p.sensors.calibration())
    assert same == run.calibration_objective
    assert validate_run(run, p.model, space, p.measurements, p.sensors) == run.validation_objective


def test_validate_needs_holdout(synthetic):
    p, space = synthetic
    run = calibrate(p.model, space, p.measurements, p.sensors, NeatConfig(population_size=6, max_generations=0))
    with pytest.raises(CalibrationError):
        validate_run(run, p.model, space, p.measurements, SensorSet(("P1",)))


def test_prepare_layouts(synthetic):
    p, space = synthetic
    ctx = prepare(p.model, space, p.measurements, p.sensors)
    assert ctx.layouts["flow"].outputs == ("base_demand",)
    assert ctx.layouts["pressure"].outputs == ("roughness",)
    assert ctx.layouts["flow"].n_inputs == len(ctx.schema.block("junction").names)
