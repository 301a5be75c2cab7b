import json
from fractions import Fraction

import pytest

from helpers import HEMO, make_pool
from reqsmith.formula import FALSE, And, Bool, Cmp, Not, Real, RealConst, Schema, Sort, UnknownSymbol, print_term, walk
from reqsmith.model import (
    DomainConstraints,
    Encoding,
    ExtraEncoding,
    GuardKindMismatch,
    Kind,
    MissingEncoding,
    ModelError,
    Requirement,
    assemble,
    encoding_to_json,
    encodings_from_json,
    load_json,
    load_model,
    lower,
    requirements_from_json,
    requirements_to_json,
    schema_from_json,
    schema_to_json,
)

BOLUS_SCHEMA = Schema.of(bolus_active=Sort.BOOL, volume=Sort.REAL, alarm_active=Sort.BOOL)
BOLUS_GUARD = And((Bool("bolus_active"), Cmp(">", Real("volume"), RealConst(400))))
VOL_NONNEG = DomainConstraints((("dom_volume_nonneg", Cmp(">=", Real("volume"), RealConst(0))),))


def req(rid, kind=Kind.CONDITIONAL, text="some requirement"):
    return Requirement(rid, text, kind)


def test_two_requirements_lower_to_three_assertions():
    m = assemble(
        BOLUS_SCHEMA,
        VOL_NONNEG,
        [req("b"), req("a", Kind.INVARIANT)],
        [Encoding("b", BOLUS_GUARD, Bool("alarm_active")), Encoding("a", None, Not(Bool("alarm_active")))],
    )
    labels = [label for label, _ in lower(m)]
    assert labels == ["dom_volume_nonneg", "req_a", "req_b"]
    assert m.ids == ["a", "b"]


def test_bolus_conditional_is_accepted():
    m = assemble(BOLUS_SCHEMA, DomainConstraints(), [req("r1")], [Encoding("r1", BOLUS_GUARD, Bool("alarm_active"))])
    (label, whole), = lower(m)
    assert label == "req_r1"
    assert print_term(whole) == "(=> (and bolus_active (> volume 400.0)) alarm_active)"


def test_kind_mismatch_in_both_directions():
    with pytest.raises(GuardKindMismatch):
        assemble(BOLUS_SCHEMA, DomainConstraints(), [req("r1", Kind.INVARIANT)], [Encoding("r1", BOLUS_GUARD, Bool("alarm_active"))])
    with pytest.raises(GuardKindMismatch):
        assemble(BOLUS_SCHEMA, DomainConstraints(), [req("r1")], [Encoding("r1", None, Bool("alarm_active"))])


def test_coverage_errors():
    enc = Encoding("r1", None, Bool("alarm_active"))
    with pytest.raises(MissingEncoding):
        assemble(BOLUS_SCHEMA, DomainConstraints(), [req("r1", Kind.INVARIANT), req("r2", Kind.INVARIANT)], [enc])
    with pytest.raises(ExtraEncoding):
        assemble(BOLUS_SCHEMA, DomainConstraints(), [], [enc])
    with pytest.raises(ExtraEncoding):
        assemble(BOLUS_SCHEMA, DomainConstraints(), [req("r1", Kind.INVARIANT)], [enc, enc])
    with pytest.raises(ModelError):
        assemble(BOLUS_SCHEMA, DomainConstraints(), [req("r1", Kind.INVARIANT), req("r1", Kind.INVARIANT)], [enc])


def test_unknown_symbol_in_encoding():
    with pytest.raises(UnknownSymbol):
        assemble(BOLUS_SCHEMA, DomainConstraints(), [req("r1", Kind.INVARIANT)], [Encoding("r1", None, Bool("pump_on"))])


def test_requirement_and_constraint_invariants():
    with pytest.raises(ModelError):
        Requirement("r1", "   ", Kind.INVARIANT)
    with pytest.raises(ModelError):
        Requirement("bad id", "text", Kind.INVARIANT)
    with pytest.raises(ModelError):
        DomainConstraints((("nonneg", Bool("alarm_active")),))
    with pytest.raises(ModelError):
        DomainConstraints((("dom_a", Bool("alarm_active")), ("dom_a", Bool("alarm_active"))))


def test_empty_model_lowers_to_nothing_and_is_sat():
    m = assemble(Schema(), DomainConstraints(), [], [])
    assert lower(m) == []
    with make_pool(Schema(), 1) as pool:
        assert pool.check(lower(m)).sat


def test_single_invariant_lowering():
    s = Schema.of(x=Sort.REAL)
    body = Cmp(">=", Real("x"), RealConst(0))
    m = assemble(s, DomainConstraints(), [req("r", Kind.INVARIANT)], [Encoding("r", None, body)])
    assert lower(m) == [("req_r", body)]


def test_conductivity_fixture_lowering(hemo):
    sub = assemble(
        hemo.schema,
        hemo.constraints,
        [hemo.requirement("r56"), hemo.requirement("r42")],
        [hemo.encodings["r42"], hemo.encodings["r56"]],
    )
    labels = [label for label, _ in lower(sub)]
    n = len(hemo.constraints)
    assert n > 0 and all(label.startswith("dom_") for label in labels[:n])
    assert labels[n:] == ["req_r42", "req_r56"]


def test_lower_is_deterministic(hemo):
    printed = lambda m: [(label, print_term(t)) for label, t in lower(m)]  # noqa: E731
    assert printed(hemo) == printed(load_model(HEMO / "schema.json", HEMO / "constraints.json", HEMO / "requirements.json", HEMO / "encodings.json"))


def test_false_guard_makes_whole_valid():
    s = Schema.of(x=Sort.REAL, alarm=Sort.BOOL)
    enc = Encoding("r", FALSE, Bool("alarm"))
    with make_pool(s, 1) as pool:
        r = pool.check([("negated_whole", Not(enc.whole()))])
    assert r.unsat


def test_replace_swaps_one_encoding(hemo):
    old = hemo.encodings["r42"]
    new = Encoding("r42", old.guard, Not(old.body))
    m2 = hemo.replace(new)
    assert m2.encodings["r42"] == new and hemo.encodings["r42"] == old
    with pytest.raises(GuardKindMismatch):
        hemo.replace(Encoding("r42", None if old.guard is not None else FALSE, old.body))


def test_json_round_trips(hemo):
    schema_data = load_json(HEMO / "schema.json")
    assert schema_to_json(schema_from_json(schema_data)) == [
        {"name": d["name"], "sort": d["sort"], "description": d.get("description", "")} for d in schema_data
    ]
    reqs = load_json(HEMO / "requirements.json")
    assert requirements_to_json(requirements_from_json(reqs)) == [{k: d[k] for k in ("id", "text", "kind")} for d in reqs]
    encs = [encoding_to_json(e) for e in hemo.encodings.values()]
    assert encodings_from_json(json.loads(json.dumps(encs)), hemo.schema) == list(hemo.encodings.values())


def test_bad_inputs_raise_model_error():
    with pytest.raises(ModelError):
        schema_from_json([{"name": "x", "sort": "Int"}])
    with pytest.raises(ModelError):
        encodings_from_json([{"req_id": "r1", "guard": None, "body": "(> nothing 1.0)"}], BOLUS_SCHEMA)


def test_exact_constants_in_fixture(hemo):
    # Constants from the fixture files are parsed without rounding.
    consts = {t.value for _, whole in lower(hemo) for t in walk(whole) if isinstance(t, RealConst)}
    assert Fraction(25, 2) in consts

