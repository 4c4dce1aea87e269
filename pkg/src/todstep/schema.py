"""Dialogue schema, entity database, and per-turn goal derivation.

A schema declares, per domain, the informable slots (with their closed value
vocabularies) and the requestable slots.  The entity database backs the
entity-provision metric.  A turn goal is the pair of ground-truth sets the
reward engine scores against: informable slot-value triples and requested
slot pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import DomainNotFoundError, SchemaFormatError, ValidationError


def normalize_text(text: str) -> str:
    """Lowercase and collapse runs of whitespace to single spaces."""
    return " ".join(text.lower().split())


def _check_identifier(name: str, kind: str) -> None:
    if not name:
        raise ValidationError(f"empty {kind} identifier")
    if name != name.lower() or any(c.isspace() for c in name):
        raise ValidationError(
            f"{kind} identifier {name!r} must be lowercase and whitespace-free"
        )


@dataclass(frozen=True)
class DialogueSchema:
    """Immutable schema: domains with informable vocabularies and requestable slots."""

    informable: Mapping[str, Mapping[str, frozenset[str]]]
    requestable: Mapping[str, frozenset[str]]
    has_dialogue_acts: bool = True

    @property
    def domains(self) -> tuple[str, ...]:
        return tuple(sorted(self.informable))

    def validate(self) -> None:
        if not self.informable:
            raise ValidationError("schema must declare at least one domain")
        if set(self.informable) != set(self.requestable):
            raise ValidationError("informable and requestable domain sets differ")
        for domain, slots in self.informable.items():
            _check_identifier(domain, "domain")
            for slot, values in slots.items():
                _check_identifier(slot, "slot")
                if not values:
                    raise ValidationError(
                        f"informable slot {domain}.{slot} has no allowed values"
                    )
                for value in values:
                    if value != normalize_text(value):
                        raise ValidationError(
                            f"value {value!r} of {domain}.{slot} is not normalized"
                        )
            for slot in self.requestable[domain]:
                _check_identifier(slot, "slot")

    def allows(self, domain: str, slot: str, value: str) -> bool:
        return value in self.informable.get(domain, {}).get(slot, frozenset())

    def is_requestable(self, domain: str, slot: str) -> bool:
        return slot in self.requestable.get(domain, frozenset())


@dataclass(frozen=True)
class Entity:
    """One database entry: a unique name plus one value per schema slot."""

    name: str
    slots: Mapping[str, str]

    def satisfies(self, constraints: Iterable[tuple[str, str]]) -> bool:
        return all(self.slots.get(s) == v for s, v in constraints)


@dataclass(frozen=True)
class EntityDatabase:
    """Per-domain entity lists, validated against their schema at load time."""

    schema: DialogueSchema
    entities: Mapping[str, tuple[Entity, ...]]

    def validate(self) -> None:
        for domain in self.entities:
            if domain not in self.schema.informable:
                raise DomainNotFoundError(f"database domain {domain!r} not in schema")
            seen = set()
            for entity in self.entities[domain]:
                if entity.name in seen:
                    raise ValidationError(
                        f"duplicate entity name {entity.name!r} in {domain!r}"
                    )
                seen.add(entity.name)
                for slot, values in self.schema.informable[domain].items():
                    value = entity.slots.get(slot)
                    if value is None:
                        raise ValidationError(
                            f"entity {entity.name!r} missing informable slot {slot!r}"
                        )
                    if value not in values:
                        raise ValidationError(
                            f"entity {entity.name!r} has disallowed value "
                            f"{value!r} for {domain}.{slot}"
                        )
                for slot in self.schema.requestable[domain]:
                    if slot not in entity.slots:
                        raise ValidationError(
                            f"entity {entity.name!r} missing requestable slot {slot!r}"
                        )


@dataclass(frozen=True)
class TurnGoal:
    """Ground-truth targets for one turn.

    sv_gt holds (domain, slot, value) informable triples; s_gt holds
    (domain, slot) requested pairs, matched in output as delexicalized
    placeholders.  Either set may be empty.
    """

    sv_gt: frozenset[tuple[str, str, str]] = field(default_factory=frozenset)
    s_gt: frozenset[tuple[str, str]] = field(default_factory=frozenset)

    @property
    def primary_domain(self) -> str | None:
        """Sole domain of the goal, preferring the requested-slot side; None if ambiguous."""
        request_domains = {d for d, _ in self.s_gt}
        if len(request_domains) == 1:
            return next(iter(request_domains))
        belief_domains = {d for d, _, _ in self.sv_gt}
        if not request_domains and len(belief_domains) == 1:
            return next(iter(belief_domains))
        return None

    def validate(self, schema: DialogueSchema) -> None:
        for domain, slot, value in self.sv_gt:
            if not schema.allows(domain, slot, value):
                raise ValidationError(
                    f"goal triple ({domain}, {slot}, {value}) not allowed by schema"
                )
        for domain, slot in self.s_gt:
            if not schema.is_requestable(domain, slot):
                raise ValidationError(
                    f"goal request ({domain}, {slot}) is not requestable"
                )


@dataclass(frozen=True)
class DialogueGoal:
    """Whole-dialogue target: constraints and requested slots per domain."""

    constraints: Mapping[str, frozenset[tuple[str, str]]]
    requested: Mapping[str, frozenset[str]]

    @property
    def domains(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.constraints) | set(self.requested)))

    def constraint_triples(self) -> frozenset[tuple[str, str, str]]:
        return frozenset(
            (domain, slot, value)
            for domain, pairs in self.constraints.items()
            for slot, value in pairs
        )

    def requested_pairs(self) -> frozenset[tuple[str, str]]:
        return frozenset(
            (domain, slot)
            for domain, slots in self.requested.items()
            for slot in slots
        )

    def validate(self, schema: DialogueSchema) -> None:
        for domain, slot, value in self.constraint_triples():
            if not schema.allows(domain, slot, value):
                raise ValidationError(
                    f"goal constraint ({domain}, {slot}, {value}) not allowed"
                )
        for domain, slot in self.requested_pairs():
            if not schema.is_requestable(domain, slot):
                raise ValidationError(
                    f"goal request ({domain}, {slot}) is not requestable"
                )

    def to_dict(self) -> dict:
        return {
            "constraints": {
                domain: sorted([slot, value] for slot, value in pairs)
                for domain, pairs in sorted(self.constraints.items())
            },
            "requested": {
                domain: sorted(slots)
                for domain, slots in sorted(self.requested.items())
            },
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "DialogueGoal":
        return cls(
            constraints={
                domain: frozenset((slot, value) for slot, value in pairs)
                for domain, pairs in raw.get("constraints", {}).items()
            },
            requested={
                domain: frozenset(slots)
                for domain, slots in raw.get("requested", {}).items()
            },
        )


def _reject_duplicate_keys(pairs):
    obj = {}
    for key, value in pairs:
        if key in obj:
            raise ValidationError(f"duplicate key {key!r} in document")
        obj[key] = value
    return obj


def _parse_json(document: str, what: str):
    try:
        return json.loads(document, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise SchemaFormatError(
            f"malformed {what} document: {exc.msg}", line=exc.lineno, column=exc.colno
        ) from None


def load_schema(document: str) -> DialogueSchema:
    """Parse and validate a schema document (JSON text)."""
    raw = _parse_json(document, "schema")
    if not isinstance(raw, dict) or "domains" not in raw:
        raise SchemaFormatError("schema document must be an object with 'domains'")
    informable = {}
    requestable = {}
    for domain, spec in raw["domains"].items():
        slots = spec.get("informable", {})
        informable[domain] = {
            slot: frozenset(values) for slot, values in slots.items()
        }
        requestable[domain] = frozenset(spec.get("requestable", ()))
    schema = DialogueSchema(
        informable=informable,
        requestable=requestable,
        has_dialogue_acts=bool(raw.get("has_dialogue_acts", True)),
    )
    schema.validate()
    return schema


def serialize_schema(schema: DialogueSchema) -> str:
    """Canonical JSON text; load_schema(serialize_schema(s)) == s."""
    doc = {
        "domains": {
            domain: {
                "informable": {
                    slot: sorted(values)
                    for slot, values in sorted(schema.informable[domain].items())
                },
                "requestable": sorted(schema.requestable[domain]),
            }
            for domain in schema.domains
        },
        "has_dialogue_acts": schema.has_dialogue_acts,
    }
    return json.dumps(doc, indent=2)


def load_database(document: str, schema: DialogueSchema) -> EntityDatabase:
    """Parse and validate a database document (JSON text) against a schema."""
    raw = _parse_json(document, "database")
    if not isinstance(raw, dict):
        raise SchemaFormatError("database document must be a JSON object")
    entities = {}
    for domain, rows in raw.items():
        entities[domain] = tuple(
            Entity(name=row["name"], slots=dict(row["slots"])) for row in rows
        )
    db = EntityDatabase(schema=schema, entities=entities)
    db.validate()
    return db


def serialize_database(db: EntityDatabase) -> str:
    doc = {
        domain: [
            {"name": e.name, "slots": {s: e.slots[s] for s in sorted(e.slots)}}
            for e in db.entities[domain]
        ]
        for domain in sorted(db.entities)
    }
    return json.dumps(doc, indent=2)


def lookup_entities(
    db: EntityDatabase, domain: str, constraints: Iterable[tuple[str, str]]
) -> list[Entity]:
    """Entities of a domain matching every constraint, ordered by name.

    Constraint slots must be informable in the domain and values allowed by
    the schema; an empty constraint set returns the whole domain.
    """
    if domain not in db.entities:
        raise DomainNotFoundError(f"unknown domain {domain!r}")
    constraints = list(constraints)
    for slot, value in constraints:
        if slot not in db.schema.informable[domain]:
            raise ValidationError(f"slot {slot!r} is not informable in {domain!r}")
        if not db.schema.allows(domain, slot, value):
            raise ValidationError(
                f"value {value!r} not allowed for {domain}.{slot}"
            )
    matches = [e for e in db.entities[domain] if e.satisfies(constraints)]
    return sorted(matches, key=lambda e: e.name)


def derive_turn_goal(annotated_turn: Mapping, schema: DialogueSchema) -> TurnGoal:
    """Build the TurnGoal from a gold turn record.

    The record must carry the turn's gold belief state (linearized, under the
    token convention) and the slots the user requested this turn.  Goals do
    not depend on dialogue-act annotations, so the schema mode is irrelevant.
    """
    from .linearizer import parse_belief, tokens_of

    belief = annotated_turn.get("belief", "")
    parsed = parse_belief(tokens_of(belief), schema)
    if parsed.malformed:
        raise ValidationError("gold belief annotation is malformed")
    requested = frozenset(
        (domain, slot) for domain, slot in annotated_turn.get("requested", ())
    )
    goal = TurnGoal(sv_gt=frozenset(parsed.triples), s_gt=requested)
    goal.validate(schema)
    return goal
