"""Synthetic mini dialogue corpus generator and per-turn episode environment.

Goals are sampled entity-first (constraints copied from a database entity),
so every dialogue is solvable by construction.  Each dialogue walks its
domains in order: constraint-introducing turns that each offer a matching
entity, then one turn requesting slots.  Belief states are cumulative.
Every turn becomes an independent generation episode whose context is
assembled from the gold previous turn.
"""

from __future__ import annotations

import dataclasses
import importlib.resources
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import linearizer
from .errors import GenerationError
from .linearizer import (
    EOS_R,
    ExtractorState,
    Vocabulary,
    build_vocab,
    serialize_acts,
    serialize_belief,
    serialize_response,
    tokens_of,
)
from .metrics import DialogueEval, EvalTurn
from .schema import (
    DialogueGoal,
    DialogueSchema,
    Entity,
    EntityDatabase,
    TurnGoal,
    derive_turn_goal,
    load_schema,
)

PREFIX_TOKENS = tokens_of(
    "translate dialogue to belief state dialogue action and system response"
)
PREFIX_TOKENS_NO_ACTS = tokens_of(
    "translate dialogue to belief state and system response"
)

_USER_PREFIXES = (
    "i am looking for a", "i need a", "please find me a", "can you get me a",
    "i would like a", "find a", "i want a", "do you have a",
    "could you find a", "hello i need a",
)
_REQUEST_PREFIXES = (
    "what is the", "can i get the", "please tell me the", "i need the",
    "could you share the",
)
_OFFER_RESPONSES = (
    "i recommend [value_name] for you",
    "[value_name] is a great choice",
    "how about [value_name]",
    "i suggest [value_name] it fits your needs",
    "[value_name] matches all your requirements",
)
TEMPLATE_SETS = {"default": None}


def toy_schema(acts: bool = True) -> DialogueSchema:
    """The bundled 3-domain schema used by tests and default configs.

    With acts=False the same domains are returned without a dialogue-act
    stage, which puts downstream evaluation in the belief+response mode.
    """
    text = (
        importlib.resources.files("todstep.data")
        .joinpath("toy_schema.json")
        .read_text()
    )
    schema = load_schema(text)
    if not acts:
        schema = dataclasses.replace(schema, has_dialogue_acts=False)
    return schema


def build_database(
    schema: DialogueSchema, entities_per_domain: int = 20, seed: int = 0
) -> EntityDatabase:
    """Random but seeded database with one entry block per domain."""
    rng = random.Random(seed)
    entities = {}
    for domain in schema.domains:
        rows = []
        for i in range(entities_per_domain):
            slots = {
                slot: rng.choice(sorted(values))
                for slot, values in sorted(schema.informable[domain].items())
            }
            for slot in sorted(schema.requestable[domain]):
                slots[slot] = f"{slot} {domain} {i}"
            rows.append(Entity(name=f"{domain}_{i}", slots=slots))
        entities[domain] = tuple(rows)
    db = EntityDatabase(schema=schema, entities=entities)
    db.validate()
    return db


@dataclass(frozen=True)
class GenConfig:
    """Knobs for corpus sampling; split fractions must sum to 1.

    Defaults give the standard toy corpus: 625 dialogues splitting
    500/62/63 into train/dev/test.
    """

    seed: int = 0
    n_dialogues: int = 625
    multi_domain_prob: float = 0.3
    constraints_range: tuple[int, int] = (1, 3)
    requests_range: tuple[int, int] = (1, 3)
    entities_per_domain: int = 20
    template_set: str = "default"
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    max_output: int = 64
    max_turns: int = 12

    def __post_init__(self):
        if self.n_dialogues <= 0 or self.entities_per_domain <= 0:
            raise GenerationError("dialogue and entity counts must be positive")
        if abs(sum(self.split) - 1.0) > 1e-9 or any(f < 0 for f in self.split):
            raise GenerationError("split fractions must be non-negative and sum to 1")
        for lo, hi in (self.constraints_range, self.requests_range):
            if lo < 1 or hi < lo:
                raise GenerationError("count ranges must satisfy 1 <= lo <= hi")
        if self.template_set not in TEMPLATE_SETS:
            raise GenerationError(f"unknown template set {self.template_set!r}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_dialogues": self.n_dialogues,
            "multi_domain_prob": self.multi_domain_prob,
            "constraints_range": list(self.constraints_range),
            "requests_range": list(self.requests_range),
            "entities_per_domain": self.entities_per_domain,
            "template_set": self.template_set,
            "split": list(self.split),
            "max_output": self.max_output,
            "max_turns": self.max_turns,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "GenConfig":
        kwargs = dict(raw)
        for key in ("constraints_range", "requests_range", "split"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class Turn:
    """One gold exchange; belief is the cumulative state after this turn."""

    user: str
    belief: str
    acts: str
    response: str
    domain: str
    requested: tuple[tuple[str, str], ...] = ()

    def to_dict(self) -> dict:
        return {
            "user": self.user,
            "belief": self.belief,
            "acts": self.acts,
            "response": self.response,
            "domain": self.domain,
            "requested": [list(pair) for pair in self.requested],
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Turn":
        return cls(
            user=raw.get("user", ""),
            belief=raw.get("belief", ""),
            acts=raw.get("acts", ""),
            response=raw.get("response", ""),
            domain=raw.get("domain", ""),
            requested=tuple(
                (domain, slot) for domain, slot in raw.get("requested", ())
            ),
        )


@dataclass(frozen=True)
class Dialogue:
    goal: DialogueGoal
    turns: tuple[Turn, ...]

    def to_dict(self) -> dict:
        return {
            "goal": self.goal.to_dict(),
            "turns": [turn.to_dict() for turn in self.turns],
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Dialogue":
        return cls(
            goal=DialogueGoal.from_dict(raw["goal"]),
            turns=tuple(Turn.from_dict(t) for t in raw["turns"]),
        )


@dataclass(frozen=True)
class Corpus:
    train: tuple[Dialogue, ...]
    dev: tuple[Dialogue, ...]
    test: tuple[Dialogue, ...]

    @property
    def all_dialogues(self) -> tuple[Dialogue, ...]:
        return self.train + self.dev + self.test


def gold_output(turn: Turn, schema: DialogueSchema) -> str:
    """The target generation sequence for one turn."""
    parts = [turn.belief]
    if schema.has_dialogue_acts and turn.acts:
        parts.append(turn.acts)
    parts.append(turn.response)
    return " ".join(parts)


def _phrase(slot: str, value: str) -> str:
    return f"{slot} {value}"


def _sample_domain_plan(rng, schema, db, domain, config):
    slots = sorted(schema.informable[domain])
    n_con = min(rng.randint(*config.constraints_range), len(slots))
    entity = rng.choice(db.entities[domain])
    con_slots = rng.sample(slots, n_con)
    constraints = [(slot, entity.slots[slot]) for slot in sorted(con_slots)]
    requestable = sorted(schema.requestable[domain])
    n_req = min(rng.randint(*config.requests_range), len(requestable))
    requests = sorted(rng.sample(requestable, n_req))
    return constraints, requests


def _generate_dialogue(rng, schema, db, config) -> Dialogue:
    domains = sorted(schema.domains)
    n_domains = 2 if len(domains) >= 2 and rng.random() < config.multi_domain_prob else 1
    chosen = rng.sample(domains, n_domains)

    plans = {}
    for domain in chosen:
        plans[domain] = _sample_domain_plan(rng, schema, db, domain, config)

    goal = DialogueGoal(
        constraints={d: frozenset(plans[d][0]) for d in chosen},
        requested={d: frozenset(plans[d][1]) for d in chosen},
    )

    turns = []
    belief: set[tuple[str, str, str]] = set()
    for domain in chosen:
        constraints, requests = plans[domain]
        remaining = list(constraints)
        rng.shuffle(remaining)
        while remaining:
            take = min(len(remaining), rng.choice((1, 2)))
            chunk, remaining = remaining[:take], remaining[take:]
            belief |= {(domain, slot, value) for slot, value in chunk}
            phrases = " and ".join(_phrase(s, v) for s, v in sorted(chunk))
            user = f"{rng.choice(_USER_PREFIXES)} {domain} with {phrases}"
            acts = serialize_acts([(domain, "offer", ("name",))])
            response = serialize_response(rng.choice(_OFFER_RESPONSES))
            turns.append(Turn(
                user=user,
                belief=serialize_belief(belief),
                acts=acts if schema.has_dialogue_acts else "",
                response=response,
                domain=domain,
            ))
        req_names = " and ".join(requests)
        user = f"{rng.choice(_REQUEST_PREFIXES)} {req_names}"
        acts = serialize_acts([(domain, "inform", tuple(requests))])
        fragments = " and ".join(
            f"the {slot} is {linearizer.placeholder_token(slot)}" for slot in requests
        )
        turns.append(Turn(
            user=user,
            belief=serialize_belief(belief),
            acts=acts if schema.has_dialogue_acts else "",
            response=serialize_response(fragments),
            domain=domain,
            requested=tuple((domain, slot) for slot in requests),
        ))
    if len(turns) > config.max_turns:
        raise GenerationError(
            f"dialogue of {len(turns)} turns exceeds max_turns={config.max_turns}"
        )
    return Dialogue(goal=goal, turns=tuple(turns))


def generate_corpus(
    config: GenConfig, schema: DialogueSchema, db: EntityDatabase
) -> Corpus:
    """Seeded corpus sampling, then a deterministic train/dev/test split."""
    for domain in schema.domains:
        if not db.entities.get(domain):
            raise GenerationError(f"database has no entities for {domain!r}")
    rng = random.Random(config.seed)
    dialogues = [
        _generate_dialogue(rng, schema, db, config)
        for _ in range(config.n_dialogues)
    ]
    n = len(dialogues)
    n_train = int(n * config.split[0])
    n_dev = int(n * config.split[1])
    return Corpus(
        train=tuple(dialogues[:n_train]),
        dev=tuple(dialogues[n_train:n_train + n_dev]),
        test=tuple(dialogues[n_train + n_dev:]),
    )


def dialogue_to_eval(
    dialogue: Dialogue,
    schema: DialogueSchema,
    pred_outputs: Sequence[str] | None = None,
) -> DialogueEval:
    """Pair a dialogue with predicted outputs; defaults to gold-as-prediction."""
    if pred_outputs is None:
        pred_outputs = [gold_output(t, schema) for t in dialogue.turns]
    if len(pred_outputs) != len(dialogue.turns):
        raise GenerationError("one predicted output required per turn")
    turns = tuple(
        EvalTurn(
            belief=turn.belief,
            acts=turn.acts,
            response=turn.response,
            pred_output=pred,
            domain=turn.domain,
        )
        for turn, pred in zip(dialogue.turns, pred_outputs)
    )
    return DialogueEval(goal=dialogue.goal, turns=turns)


def corpus_vocab(schema: DialogueSchema, dialogues: Iterable[Dialogue]) -> Vocabulary:
    """Generation vocabulary: schema-derived tokens plus corpus output words."""
    words = set()
    for dialogue in dialogues:
        for turn in dialogue.turns:
            for span in (turn.belief, turn.acts, turn.response):
                words.update(tokens_of(span))
    return build_vocab(schema, extra_words=words)


class EpisodeState:
    """One turn treated as a generation episode.

    The context is assembled from gold previous-turn fields; the output
    grows one token per step until the closing response marker or the
    length cap.  An extractor tracks the region for the policy features.
    """

    __slots__ = (
        "context", "goal", "output", "step_index", "done", "max_output",
        "extractor", "schema", "gold", "turn_domain",
    )

    def __init__(
        self,
        context: tuple[str, ...],
        goal: TurnGoal,
        schema: DialogueSchema,
        max_output: int = 64,
        gold: tuple[str, ...] = (),
        turn_domain: str | None = None,
    ):
        self.context = context
        self.goal = goal
        self.schema = schema
        self.output: list[str] = []
        self.step_index = 0
        self.done = False
        self.max_output = max_output
        self.extractor = ExtractorState(schema, default_domain=goal.primary_domain)
        self.gold = gold
        self.turn_domain = turn_domain if turn_domain else goal.primary_domain

    @property
    def region(self):
        return self.extractor.region

    def prev_tokens(self, n: int = 3) -> tuple[str, ...]:
        """Last n output tokens, oldest first, padded with the sentinel."""
        padded = [linearizer.BOS] * n + self.output
        return tuple(padded[-n:])


def reset_episode(
    dialogue: Dialogue,
    turn_index: int,
    schema: DialogueSchema,
    max_output: int = 64,
) -> EpisodeState:
    """Build the episode for one corpus turn with a teacher-forced context."""
    turn = dialogue.turns[turn_index]
    prefix = PREFIX_TOKENS if schema.has_dialogue_acts else PREFIX_TOKENS_NO_ACTS
    parts: list[str] = list(prefix)
    if turn_index > 0:
        prev = dialogue.turns[turn_index - 1]
        parts += tokens_of(prev.user)
        parts += tokens_of(prev.belief)
        if schema.has_dialogue_acts and prev.acts:
            parts += tokens_of(prev.acts)
        parts += tokens_of(prev.response)
    parts += tokens_of(turn.user)
    goal = derive_turn_goal(turn.to_dict(), schema)
    return EpisodeState(
        context=tuple(parts),
        goal=goal,
        schema=schema,
        max_output=max_output,
        gold=tokens_of(gold_output(turn, schema)),
        turn_domain=turn.domain,
    )


def env_step(state: EpisodeState, action: str) -> tuple[EpisodeState, bool]:
    """Append one token; done on the closing response marker or length cap."""
    if state.done:
        raise GenerationError("episode already done")
    state.output.append(action)
    state.step_index += 1
    state.extractor.feed(action)
    if action == EOS_R or len(state.output) >= state.max_output:
        state.done = True
    return state, state.done


def write_corpus(
    corpus: Corpus,
    out_dir: str | Path,
    schema: DialogueSchema,
    db: EntityDatabase,
    config: GenConfig | None = None,
) -> None:
    from .schema import serialize_database, serialize_schema

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, split in (("train", corpus.train), ("dev", corpus.dev), ("test", corpus.test)):
        with open(out / f"{name}.jsonl", "w") as fh:
            for dialogue in split:
                fh.write(json.dumps(dialogue.to_dict()) + "\n")
    (out / "schema.json").write_text(serialize_schema(schema))
    (out / "db.json").write_text(serialize_database(db))
    meta = {"splits": {"train": len(corpus.train), "dev": len(corpus.dev), "test": len(corpus.test)}}
    if config is not None:
        meta["config"] = config.to_dict()
    (out / "meta.json").write_text(json.dumps(meta, indent=2))


def load_corpus(corpus_dir: str | Path) -> tuple[DialogueSchema, EntityDatabase, Corpus]:
    from .schema import load_database

    root = Path(corpus_dir)
    schema = load_schema((root / "schema.json").read_text())
    db = load_database((root / "db.json").read_text(), schema)
    splits = {}
    for name in ("train", "dev", "test"):
        path = root / f"{name}.jsonl"
        dialogues = []
        if path.exists():
            with open(path) as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        dialogues.append(Dialogue.from_dict(json.loads(line)))
        splits[name] = tuple(dialogues)
    return schema, db, Corpus(train=splits["train"], dev=splits["dev"], test=splits["test"])
