from __future__ import annotations

import json

import pytest

from todstep import (
    GenConfig,
    GenerationError,
    build_database,
    derive_turn_goal,
    env_step,
    evaluate_corpus,
    generate_corpus,
    load_corpus,
    parse_belief,
    reset_episode,
    toy_schema,
    write_corpus,
)
from todstep.envgen import dialogue_to_eval, gold_output
from todstep.linearizer import EOS_R, placeholder_slot, tokens_of


def test_default_config_splits(schema, db):
    cfg = GenConfig(seed=0)
    assert cfg.n_dialogues == 625
    corpus = generate_corpus(cfg, schema, db)
    assert (len(corpus.train), len(corpus.dev), len(corpus.test)) == (500, 62, 63)


def test_generation_determinism(schema, db):
    a = generate_corpus(GenConfig(seed=5, n_dialogues=20), schema, db)
    b = generate_corpus(GenConfig(seed=5, n_dialogues=20), schema, db)
    c = generate_corpus(GenConfig(seed=6, n_dialogues=20), schema, db)
    assert a == b
    assert a != c


def test_config_validation():
    with pytest.raises(Exception):
        GenConfig(n_dialogues=0)
    with pytest.raises(Exception):
        GenConfig(split=(0.5, 0.2, 0.2))


def test_gold_annotations_are_selfconsistent(schema, small_corpus):
    for dialogue in small_corpus.train:
        dialogue.goal.validate(schema)
        seen_constraints = set()
        for turn in dialogue.turns:
            parsed = parse_belief(tokens_of(turn.belief), schema)
            assert not parsed.malformed
            # belief states accumulate monotonically across turns
            assert seen_constraints <= set(parsed.triples)
            seen_constraints = set(parsed.triples)
            goal = derive_turn_goal(
                {"belief": turn.belief, "requested": turn.requested}, schema
            )
            assert goal.sv_gt == frozenset(parsed.triples)
            # requested slots appear as placeholders in the gold response
            response_slots = {
                placeholder_slot(t)
                for t in tokens_of(turn.response)
                if placeholder_slot(t) is not None
            }
            for domain, slot in turn.requested:
                assert slot in response_slots
            assert turn.domain in schema.domains
        # the final turn's belief covers the whole goal
        assert seen_constraints == set(dialogue.goal.constraint_triples())


def test_turn_annotations_follow_schema_mode(small_corpus, schema, db):
    assert all(
        t.acts for d in small_corpus.train for t in d.turns
    ), "acts expected when the schema carries them"
    bare_schema = toy_schema(acts=False)
    bare_db = build_database(bare_schema)
    bare = generate_corpus(GenConfig(seed=0, n_dialogues=10), bare_schema, bare_db)
    assert all(not t.acts for d in bare.train for t in d.turns)


def test_gold_scores_perfect(small_corpus, schema, db):
    evals = [dialogue_to_eval(d, schema) for d in small_corpus.dev]
    report = evaluate_corpus(evals, db)
    assert report.inform == 100.0
    assert report.success == 100.0
    assert report.bleu == pytest.approx(100.0)
    assert report.combined == pytest.approx(200.0)


def test_corpus_roundtrip(tmp_path, schema, db, small_corpus):
    write_corpus(small_corpus, tmp_path / "c", schema, db, GenConfig(seed=0, n_dialogues=40))
    schema2, db2, corpus2 = load_corpus(tmp_path / "c")
    assert schema2 == schema
    assert db2.entities == db.entities
    assert corpus2 == small_corpus
    meta = json.loads((tmp_path / "c" / "meta.json").read_text())
    assert meta["splits"]["train"] == len(small_corpus.train)


def test_episode_walkthrough(schema, small_corpus):
    dialogue = small_corpus.train[0]
    state = reset_episode(dialogue, 0, schema)
    assert state.output == []
    assert state.gold
    assert state.turn_domain == dialogue.turns[0].domain
    # walking the gold output finishes cleanly within the cap
    done = False
    for token in state.gold:
        assert not done
        state, done = env_step(state, token)
    assert done
    assert state.output[-1] == EOS_R
    with pytest.raises(GenerationError):
        env_step(state, "extra")


def test_episode_length_cap(schema, small_corpus):
    state = reset_episode(small_corpus.train[0], 0, schema, max_output=4)
    done = False
    while not done:
        state, done = env_step(state, "stall")
    assert len(state.output) == 4


def test_episode_context_carries_history(schema, small_corpus):
    dialogue = next(d for d in small_corpus.train if len(d.turns) >= 2)
    first = reset_episode(dialogue, 0, schema)
    second = reset_episode(dialogue, 1, schema)
    assert len(second.context) > len(first.context)
    # prior gold output is part of the later turn's context
    gold_first = gold_output(dialogue.turns[0], schema)
    assert " ".join(second.context).count(gold_first) == 1
    assert second.prev_tokens(3) == ("<bos>",) * 3


def test_gold_output_layout(schema, small_corpus):
    turn = small_corpus.train[0].turns[0]
    out = gold_output(turn, schema)
    assert out.startswith("<sos_b>")
    assert out.endswith("<eos_r>")
    assert turn.belief in out
    assert turn.response in out


def test_multi_domain_dialogues_exist(small_corpus):
    assert any(len(d.goal.domains) > 1 for d in small_corpus.train)
    assert any(len(d.goal.domains) == 1 for d in small_corpus.train)
