import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings

from aquacal.network import (DanglingReferenceError, DuplicateIdError, InpSyntaxError, ParameterError,
                             UnknownSectionError, apply_parameters, models_equivalent, parse_inp, validate,
                             write_inp)
from aquacal.rules import ParameterSpace, ParameterSpec
from conftest import FIXTURES
from strategies import models

FIXTURE_FILES = sorted(p.name for p in FIXTURES.glob("*.inp"))


@pytest.mark.parametrize("name", FIXTURE_FILES)
def test_fixture_round_trip(fixture_text, name):
    model = parse_inp(fixture_text(name))
    again = parse_inp(write_inp(model))
    assert models_equivalent(model, again)
    assert write_inp(again) == write_inp(model)


@given(models())
@settings(max_examples=150, deadline=None)
def test_round_trip_property(model):
    assert models_equivalent(model, parse_inp(write_inp(model)))


def test_benchmark_counts(fixture_text):
    model = parse_inp(fixture_text("fossolo_like.inp"))
    assert (len(model.junctions), len(model.pipes), len(model.reservoirs)) == (36, 58, 1)
    assert model.reservoirs[0].head == 121.0
    assert validate(model) == []


def test_minimal_network_is_valid(fixture_text):
    model = parse_inp(fixture_text("minimal.inp"))
    assert len(model.reservoirs) == 1 and not model.junctions
    assert validate(model) == []


def test_skipped_sections_reported(fixture_text):
    model = parse_inp(fixture_text("looped_valves.inp"))
    assert any("QUALITY" in str(n) for n in model.notes)
    assert model.patterns["day"] == (0.5, 1.0, 1.5, 1.2)
    assert model.junction_index["J3"].emitter_coeff == 0.2
    assert model.pipe_index["P5"].status == "closed"
    assert model.pipe_index["P3"].material == "CI" and model.pipe_index["P3"].age_years == 40
    assert model.junction_index["J1"].zone == "north"


def test_pattern_echo():
    text = "[JUNCTIONS]\nJ1 1 1 p\n[RESERVOIRS]\nR 10\n[PIPES]\nP R J1 10 100 0.1\n[PATTERNS]\np 0.5 1.5\n"
    model = parse_inp(text)
    out = write_inp(model)
    row = [line for line in out.splitlines() if line.startswith("p")]
    assert row and [float(x) for x in row[0].split()[1:]] == [0.5, 1.5]


def test_dangling_reference_names_node():
    text = "[JUNCTIONS]\nJ1 1 1\n[RESERVOIRS]\nR 10\n[PIPES]\nP1 R N99 10 100 0.1\n"
    with pytest.raises(DanglingReferenceError) as err:
        parse_inp(text)
    assert "N99" in str(err.value) and err.value.node_id == "N99"


def test_duplicate_id():
    with pytest.raises(DuplicateIdError):
        parse_inp("[JUNCTIONS]\nJ1 1 1\nJ1 2 2\n[RESERVOIRS]\nR 1\n")


def test_syntax_error_has_line_and_column():
    with pytest.raises(InpSyntaxError) as err:
        parse_inp("[RESERVOIRS]\nR1 1\n[JUNCTIONS]\nJ1 abc 1\n")
    assert err.value.line == 4 and err.value.column == 4


def test_unknown_section():
    with pytest.raises(UnknownSectionError):
        parse_inp("[RESERVOIRS]\nR1 1\n[WIBBLE]\nx\n")


def test_units_must_be_lps():
    with pytest.raises(InpSyntaxError):
        parse_inp("[RESERVOIRS]\nR1 1\n[OPTIONS]\nUnits GPM\n")


def test_validate_disconnected_junction():
    model = parse_inp("[JUNCTIONS]\nJ1 1 1\nJ2 1 1\n[RESERVOIRS]\nR 10\n[PIPES]\nP1 R J1 10 100 0.1\n")
    diags = validate(model)
    assert len(diags) == 1 and diags[0].element_id == "J2" and diags[0].severity == "ERROR"


def test_validate_negative_demand(fixture_text):
    model = parse_inp(fixture_text("hazen.inp"))
    bad = replace(model, junctions=(replace(model.junctions[0], base_demand=-1.0),) + model.junctions[1:])
    diags = validate(bad)
    assert len(diags) == 1 and diags[0].element_id == "J1"


def _space(*specs):
    return ParameterSpace(tuple(specs))


def test_apply_parameters_identity_and_overlay(fixture_text):
    model = parse_inp(fixture_text("looped_valves.inp"))
    assert apply_parameters(model, _space(), []) == model
    space = _space(ParameterSpec("pipe", "P1", "roughness", 0.0005, 0.01),
                   ParameterSpec("valve", "V1", "valve_loss", 0.0, 10.0),
                   ParameterSpec("junction", "J2", "leak_coeff", 0.0, 1.0))
    new = apply_parameters(model, space, [0.0015, 3.0, 0.25])
    assert new.pipe_index["P1"].roughness == 0.0015
    assert new.valve_index["V1"].loss_coeff_k == 3.0
    assert new.junction_index["J2"].emitter_coeff == 0.25
    assert model.pipe_index["P1"].roughness == 0.01  # base untouched
    assert new.pipes[1:] == model.pipes[1:]
    assert apply_parameters(model, space, [0.0015, 3.0, 0.25]) == new


def test_apply_parameters_errors(fixture_text):
    model = parse_inp(fixture_text("looped_valves.inp"))
    space = _space(ParameterSpec("pipe", "P1", "roughness", 0.0005, 0.01))
    with pytest.raises(ParameterError, match="pipe:P1:roughness"):
        apply_parameters(model, space, [0.02])
    with pytest.raises(ParameterError):
        apply_parameters(model, _space(ParameterSpec("pipe", "nope", "roughness", 0, 1)), [0.5])
    with pytest.raises(ParameterError):
        apply_parameters(model, space, [])


def test_write_is_deterministic_and_precise(fixture_text):
    model = parse_inp(fixture_text("fossolo_like.inp"))
    j = model.junctions[0]
    tweaked = replace(model, junctions=(replace(j, base_demand=0.1 + 1e-11),) + model.junctions[1:])
    back = parse_inp(write_inp(tweaked))
    assert math.isclose(back.junctions[0].base_demand, 0.1 + 1e-11, rel_tol=1e-12)
    assert np.isfinite([p.length for p in back.pipes]).all()
