"""Corpus-level task-completion metrics.

Inform: for every goal domain the system offered an entity consistent with
both its predicted constraints and the goal.  Success: informed and every
requested slot was provided as a placeholder.  Match: final predicted
belief equals the goal constraints exactly.  SuccF1: micro-averaged F1
over provided requested-slot placeholders.  BLEU: corpus BLEU-4 over
delexicalized responses.  Combined folds these per benchmark convention.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import EvaluationError
from .linearizer import EOS_R, SOS_R, ExtractorState, tokens_of
from .schema import DialogueGoal, DialogueSchema, EntityDatabase

BLEU_SMOOTHING_NOTE = (
    "corpus bleu-4: for order n>=2 with zero matches, precision = "
    "1/(2*candidate n-gram count); orders with no candidate n-grams count "
    "as 1; unigram precision unsmoothed"
)

MODES = ("multiwoz", "incar")


@dataclass(frozen=True)
class EvalTurn:
    """Gold spans plus the predicted output sequence for one turn."""

    belief: str
    response: str
    pred_output: str
    acts: str = ""
    domain: str | None = None

    def to_dict(self) -> dict:
        record = {
            "belief": self.belief,
            "acts": self.acts,
            "response": self.response,
            "pred_output": self.pred_output,
        }
        if self.domain is not None:
            record["domain"] = self.domain
        return record

    @classmethod
    def from_dict(cls, raw: Mapping) -> "EvalTurn":
        return cls(
            belief=raw.get("belief", ""),
            acts=raw.get("acts", ""),
            response=raw.get("response", ""),
            pred_output=raw.get("pred_output", ""),
            domain=raw.get("domain"),
        )


@dataclass(frozen=True)
class DialogueEval:
    """One dialogue ready for scoring: goal plus aligned turns."""

    goal: DialogueGoal
    turns: tuple[EvalTurn, ...]

    def to_dict(self) -> dict:
        return {
            "goal": self.goal.to_dict(),
            "turns": [turn.to_dict() for turn in self.turns],
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "DialogueEval":
        return cls(
            goal=DialogueGoal.from_dict(raw["goal"]),
            turns=tuple(EvalTurn.from_dict(t) for t in raw.get("turns", ())),
        )


@dataclass(frozen=True)
class DialogueFlags:
    informed: bool
    successful: bool
    matched: bool

    def to_dict(self) -> dict:
        return {
            "informed": self.informed,
            "successful": self.successful,
            "matched": self.matched,
        }


@dataclass(frozen=True)
class EvalReport:
    inform: float
    success: float
    match: float
    succ_f1: float
    bleu: float
    combined: float
    mode: str
    flags: tuple[DialogueFlags, ...]

    def to_dict(self) -> dict:
        return {
            "inform": self.inform,
            "success": self.success,
            "match": self.match,
            "succ_f1": self.succ_f1,
            "bleu": self.bleu,
            "combined": self.combined,
            "mode": self.mode,
            "bleu_smoothing": BLEU_SMOOTHING_NOTE,
            "dialogues": [f.to_dict() for f in self.flags],
        }


def response_span_tokens(tokens: Sequence[str]) -> tuple[str, ...]:
    """Interior of the response span; empty when the span never opens."""
    tokens = tuple(tokens)
    try:
        start = tokens.index(SOS_R)
    except ValueError:
        return ()
    rest = tokens[start + 1:]
    try:
        end = rest.index(EOS_R)
    except ValueError:
        return tuple(rest)
    return tuple(rest[:end])


@dataclass(frozen=True)
class _DialogueExtraction:
    final_belief: frozenset
    provided: frozenset
    offered: frozenset
    response_tokens: tuple[tuple[str, ...], ...]


def _extract_dialogue(dlg: DialogueEval, schema: DialogueSchema) -> _DialogueExtraction:
    final_belief: frozenset = frozenset()
    provided: set = set()
    offered: set = set()
    responses = []
    for turn in dlg.turns:
        default_domain = turn.domain
        if default_domain is None and len(dlg.goal.domains) == 1:
            default_domain = dlg.goal.domains[0]
        extractor = ExtractorState(schema, default_domain=default_domain)
        tokens = tokens_of(turn.pred_output)
        extractor.feed_all(tokens)
        final_belief = frozenset(extractor.sv_hat)
        provided |= extractor.s_hat
        offered |= extractor.offered_domains
        responses.append(response_span_tokens(tokens))
    return _DialogueExtraction(
        final_belief=final_belief,
        provided=frozenset(provided),
        offered=frozenset(offered),
        response_tokens=tuple(responses),
    )


def _domain_informed(
    extraction: _DialogueExtraction,
    goal: DialogueGoal,
    domain: str,
    db: EntityDatabase,
) -> bool:
    if domain not in extraction.offered:
        return False
    predicted = {
        (s, v) for d, s, v in extraction.final_belief if d == domain
    }
    required = predicted | set(goal.constraints.get(domain, frozenset()))
    return any(e.satisfies(required) for e in db.entities.get(domain, ()))


def _check_goal(goal: DialogueGoal, schema: DialogueSchema) -> None:
    for domain in goal.domains:
        if domain not in schema.informable:
            raise EvaluationError(f"goal references unknown domain {domain!r}")


def _dialogue_flags(
    dlg: DialogueEval, extraction: _DialogueExtraction, db: EntityDatabase
) -> DialogueFlags:
    goal = dlg.goal
    informed = all(
        _domain_informed(extraction, goal, domain, db) for domain in goal.domains
    )
    successful = informed and goal.requested_pairs() <= extraction.provided
    matched = extraction.final_belief == goal.constraint_triples()
    return DialogueFlags(informed=informed, successful=successful, matched=matched)


def _require_corpus(corpus: Sequence) -> None:
    if not corpus:
        raise EvaluationError("cannot evaluate an empty corpus")


def inform_rate(corpus: Sequence[DialogueEval], db: EntityDatabase) -> float:
    _require_corpus(corpus)
    flags = _corpus_flags(corpus, db)
    return 100.0 * sum(f.informed for f in flags) / len(flags)


def success_rate(corpus: Sequence[DialogueEval], db: EntityDatabase) -> float:
    _require_corpus(corpus)
    flags = _corpus_flags(corpus, db)
    return 100.0 * sum(f.successful for f in flags) / len(flags)


def match_rate(corpus: Sequence[DialogueEval], schema: DialogueSchema) -> float:
    _require_corpus(corpus)
    matched = 0
    for dlg in corpus:
        _check_goal(dlg.goal, schema)
        extraction = _extract_dialogue(dlg, schema)
        matched += extraction.final_belief == dlg.goal.constraint_triples()
    return 100.0 * matched / len(corpus)


def succ_f1(corpus: Sequence[DialogueEval], schema: DialogueSchema) -> float:
    _require_corpus(corpus)
    tp = fp = fn = 0
    for dlg in corpus:
        _check_goal(dlg.goal, schema)
        extraction = _extract_dialogue(dlg, schema)
        requested = dlg.goal.requested_pairs()
        provided = extraction.provided
        tp += len(requested & provided)
        fp += len(provided - requested)
        fn += len(requested - provided)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def _corpus_flags(
    corpus: Sequence[DialogueEval], db: EntityDatabase
) -> tuple[DialogueFlags, ...]:
    schema = db.schema
    out = []
    for dlg in corpus:
        _check_goal(dlg.goal, schema)
        extraction = _extract_dialogue(dlg, schema)
        out.append(_dialogue_flags(dlg, extraction, db))
    return tuple(out)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(
        tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)
    )


def corpus_bleu(
    candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]]
) -> float:
    """Corpus BLEU-4 in [0, 100] over aligned token sequences.

    Modified n-gram precisions are pooled corpus-wide.  Brevity penalty
    exp(1 - ref_len/cand_len) applies when the candidate side is shorter.
    Smoothing per BLEU_SMOOTHING_NOTE.
    """
    if len(candidates) != len(references):
        raise EvaluationError("candidate/reference counts differ")
    _require_corpus(candidates)
    matches = [0] * 4
    totals = [0] * 4
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand = tuple(cand)
        ref = tuple(ref)
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, 5):
            cand_counts = _ngrams(cand, n)
            ref_counts = _ngrams(ref, n)
            totals[n - 1] += sum(cand_counts.values())
            matches[n - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in cand_counts.items()
            )
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        total = totals[n - 1]
        match = matches[n - 1]
        if total == 0:
            precision = 1.0
        elif match == 0:
            if n == 1:
                return 0.0
            precision = 1.0 / (2.0 * total)
        else:
            precision = match / total
        log_sum += 0.25 * math.log(precision)
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_sum)


def combined_score(
    inform: float,
    success: float,
    match: float,
    succ_f1_value: float,
    bleu: float,
    mode: str,
) -> float:
    if mode == "multiwoz":
        return 0.5 * (inform + success) + bleu
    if mode == "incar":
        return 0.5 * (match + 100.0 * succ_f1_value) + bleu
    raise EvaluationError(f"unknown combined-score mode {mode!r}")


def evaluate_corpus(
    corpus: Sequence[DialogueEval],
    db: EntityDatabase,
    mode: str | None = None,
) -> EvalReport:
    """Score a prediction corpus; mode defaults by schema annotation style."""
    _require_corpus(corpus)
    schema = db.schema
    if mode is None:
        mode = "multiwoz" if schema.has_dialogue_acts else "incar"
    if mode not in MODES:
        raise EvaluationError(f"unknown evaluation mode {mode!r}")

    flags = []
    tp = fp = fn = 0
    matched = 0
    cands = []
    refs = []
    for dlg in corpus:
        _check_goal(dlg.goal, schema)
        extraction = _extract_dialogue(dlg, schema)
        flags.append(_dialogue_flags(dlg, extraction, db))
        requested = dlg.goal.requested_pairs()
        provided = extraction.provided
        tp += len(requested & provided)
        fp += len(provided - requested)
        fn += len(requested - provided)
        matched += extraction.final_belief == dlg.goal.constraint_triples()
        for turn, cand in zip(dlg.turns, extraction.response_tokens):
            cands.append(cand)
            refs.append(response_span_tokens(tokens_of(turn.response)))

    n = len(corpus)
    inform = 100.0 * sum(f.informed for f in flags) / n
    success = 100.0 * sum(f.successful for f in flags) / n
    match = 100.0 * matched / n
    if tp == 0:
        f1 = 0.0
    else:
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        f1 = 2 * precision * recall / (precision + recall)
    bleu = corpus_bleu(cands, refs)
    return EvalReport(
        inform=inform,
        success=success,
        match=match,
        succ_f1=f1,
        bleu=bleu,
        combined=combined_score(inform, success, match, f1, bleu, mode),
        mode=mode,
        flags=tuple(flags),
    )
