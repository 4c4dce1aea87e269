from __future__ import annotations

import pytest

from todstep import (
    DialogueGoal,
    DomainNotFoundError,
    SchemaFormatError,
    TurnGoal,
    ValidationError,
    build_database,
    derive_turn_goal,
    load_database,
    load_schema,
    lookup_entities,
    serialize_database,
    serialize_schema,
    toy_schema,
)


def test_toy_schema_shape(schema):
    assert schema.domains == ("attraction", "hotel", "restaurant")
    for domain in schema.domains:
        assert schema.informable[domain]
        assert schema.requestable[domain]
        for slot, values in schema.informable[domain].items():
            assert values, f"{domain}.{slot} has no values"
    assert schema.has_dialogue_acts


def test_toy_schema_acts_flag():
    assert toy_schema().has_dialogue_acts
    assert not toy_schema(acts=False).has_dialogue_acts
    # the flag is the only difference
    a, b = toy_schema(), toy_schema(acts=False)
    assert a.informable == b.informable
    assert a.requestable == b.requestable


def test_allows_and_requestable(schema):
    assert schema.allows("hotel", "stars", "three")
    assert not schema.allows("hotel", "stars", "eleven")
    assert not schema.allows("hotel", "phone", "123")
    assert schema.is_requestable("hotel", "phone")
    assert not schema.is_requestable("hotel", "stars")


def test_schema_roundtrip(schema):
    text = serialize_schema(schema)
    again = load_schema(text)
    assert again == schema


def test_load_schema_rejects_garbage():
    with pytest.raises(SchemaFormatError):
        load_schema("not json")
    with pytest.raises(SchemaFormatError):
        load_schema("[1, 2]")


def test_database_roundtrip(schema, db):
    text = serialize_database(db)
    again = load_database(text, schema)
    assert again.entities == db.entities


def test_database_determinism(schema):
    a = build_database(schema, entities_per_domain=7, seed=3)
    b = build_database(schema, entities_per_domain=7, seed=3)
    c = build_database(schema, entities_per_domain=7, seed=4)
    assert a.entities == b.entities
    assert a.entities != c.entities


def test_database_entities_cover_schema(schema, db):
    for domain in schema.domains:
        entities = db.entities[domain]
        assert len(entities) == 20
        names = [e.name for e in entities]
        assert len(set(names)) == len(names), "entity names must be unique"
        for e in entities:
            for slot in schema.informable[domain]:
                assert e.slots[slot] in schema.informable[domain][slot]
            for slot in schema.requestable[domain]:
                assert e.slots[slot]


def test_lookup_entities(schema, db):
    everything = lookup_entities(db, "hotel", [])
    assert len(everything) == 20
    cheap = lookup_entities(db, "hotel", [("price", "cheap")])
    assert cheap
    assert all(e.slots["price"] == "cheap" for e in cheap)
    for e in cheap:
        assert e in everything
    none = lookup_entities(db, "hotel", [("price", "cheap"), ("price", "expensive")])
    assert none == []
    with pytest.raises(DomainNotFoundError):
        lookup_entities(db, "spaceport", [])


def test_goal_validate(schema):
    good = DialogueGoal(
        constraints={"hotel": frozenset({("stars", "three")})},
        requested={"hotel": frozenset({"phone"})},
    )
    good.validate(schema)
    bad_domain = DialogueGoal(
        constraints={"zoo": frozenset({("stars", "three")})}, requested={}
    )
    with pytest.raises(ValidationError):
        bad_domain.validate(schema)
    bad_value = DialogueGoal(
        constraints={"hotel": frozenset({("stars", "eleven")})}, requested={}
    )
    with pytest.raises(ValidationError):
        bad_value.validate(schema)
    bad_request = DialogueGoal(
        constraints={}, requested={"hotel": frozenset({"stars"})}
    )
    with pytest.raises(ValidationError):
        bad_request.validate(schema)


def test_goal_dict_roundtrip(schema):
    goal = DialogueGoal(
        constraints={
            "hotel": frozenset({("stars", "three"), ("area", "north")}),
            "restaurant": frozenset({("price", "cheap")}),
        },
        requested={"hotel": frozenset({"phone", "postcode"})},
    )
    again = DialogueGoal.from_dict(goal.to_dict())
    assert again == goal
    triples = set(goal.constraint_triples())
    assert ("hotel", "stars", "three") in triples
    assert ("restaurant", "price", "cheap") in triples
    assert set(goal.requested_pairs()) == {("hotel", "phone"), ("hotel", "postcode")}


def test_derive_turn_goal(schema):
    turn = {
        "belief": "<sos_b> [hotel] stars three <eos_b>",
        "requested": [["hotel", "phone"], ["hotel", "postcode"]],
    }
    goal = derive_turn_goal(turn, schema)
    assert isinstance(goal, TurnGoal)
    assert goal.sv_gt == frozenset({("hotel", "stars", "three")})
    assert goal.s_gt == frozenset({("hotel", "phone"), ("hotel", "postcode")})


def test_derive_turn_goal_offer_turn(schema):
    # offer turns carry no requested slots, so only the belief side is targeted
    turn = {"belief": "<sos_b> [hotel] stars three area north <eos_b>"}
    goal = derive_turn_goal(turn, schema)
    assert goal.sv_gt == frozenset(
        {("hotel", "stars", "three"), ("hotel", "area", "north")}
    )
    assert goal.s_gt == frozenset()
    assert goal.primary_domain == "hotel"


def test_derive_turn_goal_rejects_bad_belief(schema):
    from todstep import MalformedSequenceError

    # unframed annotation
    with pytest.raises(MalformedSequenceError):
        derive_turn_goal({"belief": "<sos_b> [hotel] stars"}, schema)
    # framed but with a dangling slot name
    with pytest.raises(ValidationError):
        derive_turn_goal({"belief": "<sos_b> [hotel] stars <eos_b>"}, schema)
    # parses but the value is outside the ontology
    with pytest.raises(ValidationError):
        derive_turn_goal({"belief": "<sos_b> [hotel] stars eleven <eos_b>"}, schema)
