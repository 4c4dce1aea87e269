"""Token convention for linearized turn outputs, plus incremental extraction.

One turn output is a whitespace-tokenized sequence of up to three marked
spans: belief state, dialogue acts, delexicalized response:

    <sos_b> [domain] slot value words ... <eos_b>
    <sos_a> [domain] [act] [value_slot] ... <eos_a>
    <sos_r> free text with [value_slot] placeholders <eos_r>

Schemas without act annotations drop the middle span.  The extractor walks
a sequence token by token and accumulates the predicted slot-value triples
and requested-slot pairs the reward engine scores against.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

from .errors import MalformedSequenceError
from .schema import DialogueSchema

SOS_B = "<sos_b>"
EOS_B = "<eos_b>"
SOS_A = "<sos_a>"
EOS_A = "<eos_a>"
SOS_R = "<sos_r>"
EOS_R = "<eos_r>"
BOS = "<bos>"

MARKERS = (SOS_B, EOS_B, SOS_A, EOS_A, SOS_R, EOS_R)
ACT_TOKENS = ("[inform]", "[offer]", "[request]")
INFORM_ACT = "[inform]"
OFFER_ACT = "[offer]"
NAME_SLOT = "name"

_PLACEHOLDER_PREFIX = "[value_"


def domain_token(domain: str) -> str:
    return f"[{domain}]"


def placeholder_token(slot: str) -> str:
    return f"{_PLACEHOLDER_PREFIX}{slot}]"


def is_bracket(token: str) -> bool:
    return len(token) > 2 and token[0] == "[" and token[-1] == "]"


def bracket_name(token: str) -> str:
    return token[1:-1]


def placeholder_slot(token: str) -> str | None:
    """Slot name of a [value_*] token, else None."""
    if token.startswith(_PLACEHOLDER_PREFIX) and token.endswith("]"):
        return token[len(_PLACEHOLDER_PREFIX):-1]
    return None


def tokens_of(text: str) -> tuple[str, ...]:
    return tuple(text.split())


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


class Region(IntEnum):
    """Which span of the turn output the extractor is positioned in."""

    PENDING = 0
    BELIEF = 1
    ACT = 2
    RESPONSE = 3
    DONE = 4


class ExtractorState:
    """Incremental reader of one turn output.

    Feeds tokens one at a time, maintaining the predicted belief triples
    (sv_hat), requested-slot pairs (s_hat), and offered domains.  Marker
    tokens out of order halt extraction; lesser malformations set the
    malformed flag and continue.  Placeholders name only a slot, so they
    are attributed to the most recent domain bracket of the act span, or
    failing that to default_domain.
    """

    __slots__ = (
        "schema", "default_domain", "region", "in_span", "malformed",
        "halted", "sv_hat", "s_hat", "offered_domains", "_domain",
        "_slot", "_value_buf", "_active_domain", "_new_items", "n_fed",
    )

    def __init__(self, schema: DialogueSchema, default_domain: str | None = None):
        self.schema = schema
        self.default_domain = default_domain
        self.region = Region.PENDING
        self.in_span = False
        self.malformed = False
        self.halted = False
        self.sv_hat: set[tuple[str, str, str]] = set()
        self.s_hat: set[tuple[str, str]] = set()
        self.offered_domains: set[str] = set()
        self._domain: str | None = None
        self._slot: str | None = None
        self._value_buf: list[str] = []
        self._active_domain: str | None = None
        self._new_items: list[tuple] = []
        self.n_fed = 0

    @property
    def done(self) -> bool:
        return self.region == Region.DONE

    @property
    def pending_domain(self) -> str | None:
        """Domain whose slots are currently being written, if inside the belief span."""
        if self.region == Region.BELIEF and self.in_span:
            return self._domain
        return None

    @property
    def pending_slot(self) -> str | None:
        if self.region == Region.BELIEF and self.in_span:
            return self._slot
        return None

    def _flush_pair(self) -> None:
        if self._slot is not None:
            if self._value_buf and self._domain is not None:
                value = " ".join(self._value_buf)
                triple = (self._domain, self._slot, value)
                if triple not in self.sv_hat:
                    self.sv_hat.add(triple)
                    self._new_items.append(triple)
            else:
                self.malformed = True
        self._slot = None
        self._value_buf = []

    def _illegal_marker(self) -> None:
        self.malformed = True
        self.halted = True

    def _attributed_domain(self) -> str | None:
        return self._active_domain if self._active_domain is not None else self.default_domain

    def _note_placeholder(self, slot: str) -> None:
        domain = self._attributed_domain()
        if domain is None:
            return
        if slot == NAME_SLOT:
            self.offered_domains.add(domain)
            return
        if self.schema.is_requestable(domain, slot):
            pair = (domain, slot)
            if pair not in self.s_hat:
                self.s_hat.add(pair)
                self._new_items.append(pair)

    def feed(self, token: str) -> tuple[tuple, ...]:
        """Advance on one token; returns items completed by this token.

        Completed items are (domain, slot, value) triples from the belief
        span and (domain, slot) pairs from placeholders, already deduped.
        """
        self.n_fed += 1
        self._new_items = []
        if not self.halted:
            self._advance(token)
        return tuple(self._new_items)

    def _advance(self, token: str) -> None:
        if token == SOS_B:
            if self.region == Region.PENDING and not self.in_span:
                self.region = Region.BELIEF
                self.in_span = True
            else:
                self._illegal_marker()
        elif token == EOS_B:
            if self.region == Region.BELIEF and self.in_span:
                self._flush_pair()
                self._domain = None
                self.in_span = False
            else:
                self._illegal_marker()
        elif token == SOS_A:
            if (
                self.region == Region.BELIEF
                and not self.in_span
                and self.schema.has_dialogue_acts
            ):
                self.region = Region.ACT
                self.in_span = True
            else:
                self._illegal_marker()
        elif token == EOS_A:
            if self.region == Region.ACT and self.in_span:
                self.in_span = False
            else:
                self._illegal_marker()
        elif token == SOS_R:
            after_acts = self.region == Region.ACT and self.schema.has_dialogue_acts
            after_belief = (
                self.region == Region.BELIEF and not self.schema.has_dialogue_acts
            )
            if (after_acts or after_belief) and not self.in_span:
                self.region = Region.RESPONSE
                self.in_span = True
            else:
                self._illegal_marker()
        elif token == EOS_R:
            if self.region == Region.RESPONSE and self.in_span:
                self.region = Region.DONE
                self.in_span = False
                self.halted = True
            else:
                self._illegal_marker()
        elif not self.in_span:
            pass
        elif self.region == Region.BELIEF:
            self._feed_belief(token)
        elif self.region == Region.ACT:
            self._feed_act(token)
        elif self.region == Region.RESPONSE:
            slot = placeholder_slot(token)
            if slot is not None:
                self._note_placeholder(slot)

    def _feed_belief(self, token: str) -> None:
        if is_bracket(token):
            self._flush_pair()
            name = bracket_name(token)
            if name in self.schema.informable:
                self._domain = name
            else:
                self._domain = None
                self.malformed = True
        elif self._domain is not None and token in self.schema.informable[self._domain]:
            self._flush_pair()
            self._slot = token
        elif self._slot is not None:
            self._value_buf.append(token)
        else:
            self.malformed = True

    def _feed_act(self, token: str) -> None:
        if not is_bracket(token):
            self.malformed = True
            return
        name = bracket_name(token)
        if name in self.schema.informable:
            self._active_domain = name
            return
        slot = placeholder_slot(token)
        if slot is not None:
            self._note_placeholder(slot)
            return
        if token == OFFER_ACT:
            domain = self._attributed_domain()
            if domain is not None:
                self.offered_domains.add(domain)
            return
        if token not in ACT_TOKENS:
            self.malformed = True

    def feed_all(self, tokens: Iterable[str]) -> "ExtractorState":
        for token in tokens:
            self.feed(token)
        return self


@dataclass(frozen=True)
class ParsedBelief:
    triples: frozenset[tuple[str, str, str]]
    malformed: bool


def parse_belief(tokens: Sequence[str], schema: DialogueSchema) -> ParsedBelief:
    """Parse a complete belief span in one pass.

    The sequence must open with <sos_b> and close with <eos_b>; anything
    else raises MalformedSequenceError.  Interior problems (unknown
    brackets, slots without values, stray words) set the malformed flag
    but still yield every well-formed triple.  Kept separate from the
    incremental extractor so each can check the other.
    """
    tokens = tuple(tokens)
    if len(tokens) < 2 or tokens[0] != SOS_B or tokens[-1] != EOS_B:
        raise MalformedSequenceError(
            f"belief span must be framed by {SOS_B} and {EOS_B}"
        )
    body = tokens[1:-1]
    if any(t in MARKERS for t in body):
        raise MalformedSequenceError("marker token inside belief span")

    triples: set[tuple[str, str, str]] = set()
    malformed = False
    i = 0
    domain: str | None = None
    while i < len(body):
        token = body[i]
        if is_bracket(token):
            name = bracket_name(token)
            if name in schema.informable:
                domain = name
            else:
                domain = None
                malformed = True
            i += 1
            continue
        if domain is None or token not in schema.informable[domain]:
            malformed = True
            i += 1
            continue
        slot = token
        i += 1
        value_words = []
        while i < len(body):
            nxt = body[i]
            if is_bracket(nxt) or nxt in schema.informable[domain]:
                break
            value_words.append(nxt)
            i += 1
        if value_words:
            triples.add((domain, slot, " ".join(value_words)))
        else:
            malformed = True
    return ParsedBelief(triples=frozenset(triples), malformed=malformed)


def serialize_belief(triples: Iterable[tuple[str, str, str]]) -> str:
    """Render triples as a belief span, domains and slots in sorted order."""
    by_domain: dict[str, list[tuple[str, str]]] = {}
    for domain, slot, value in triples:
        by_domain.setdefault(domain, []).append((slot, value))
    parts = [SOS_B]
    for domain in sorted(by_domain):
        parts.append(domain_token(domain))
        for slot, value in sorted(by_domain[domain]):
            parts.append(slot)
            parts.append(value)
    parts.append(EOS_B)
    return " ".join(parts)


def serialize_acts(items: Iterable[tuple[str, str, Sequence[str]]]) -> str:
    """Render (domain, act, slots) groups as an act span.

    Slots appear as [value_*] placeholders; the offer act may carry none.
    """
    parts = [SOS_A]
    for domain, act, slots in items:
        parts.append(domain_token(domain))
        parts.append(f"[{act}]")
        for slot in slots:
            parts.append(placeholder_token(slot))
    parts.append(EOS_A)
    return " ".join(parts)


def serialize_response(text: str) -> str:
    return f"{SOS_R} {text} {EOS_R}" if text else f"{SOS_R} {EOS_R}"


class Vocabulary:
    """Fixed, ordered token inventory shared by the policy and the sampler."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = tuple(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index[token]

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]


def build_vocab(
    schema: DialogueSchema, extra_words: Iterable[str] = ()
) -> Vocabulary:
    """Assemble the generation vocabulary for a schema.

    Order is deterministic: sentinel, markers, domain tokens, act tokens
    (only when the schema annotates acts), placeholders, slot names, value
    words, then any extra response words, each group sorted and deduped
    against earlier groups.
    """
    ordered: list[str] = [BOS]
    seen = set(ordered)

    def extend(group: Iterable[str]) -> None:
        for token in group:
            if token not in seen:
                seen.add(token)
                ordered.append(token)

    markers = list(MARKERS)
    if not schema.has_dialogue_acts:
        markers = [m for m in markers if m not in (SOS_A, EOS_A)]
    extend(markers)
    extend(domain_token(d) for d in schema.domains)
    if schema.has_dialogue_acts:
        extend(ACT_TOKENS)
    placeholder_slots = set()
    for domain in schema.domains:
        placeholder_slots.update(schema.requestable[domain])
        placeholder_slots.add(NAME_SLOT)
    extend(placeholder_token(s) for s in sorted(placeholder_slots))
    slot_names = set()
    value_words = set()
    for domain in schema.domains:
        for slot, values in schema.informable[domain].items():
            slot_names.add(slot)
            for value in values:
                value_words.update(value.split())
    extend(sorted(slot_names))
    extend(sorted(value_words))
    extend(sorted(set(extra_words)))
    return Vocabulary(ordered)
