"""Log-linear token policy: hashed features, analytic gradients, sampling.

Candidate tokens are scored by a linear model over hashed features of the
generation state (previous output tokens, parse region, goal membership of
the candidate) and turned into a softmax distribution.  The same hashing
backs a separate linear value baseline.  Likelihood training and the
policy-gradient updates both use the exact softmax gradient, so gradient
checks against finite differences are meaningful.
"""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .envgen import Dialogue, EpisodeState, env_step, reset_episode
from .errors import ConfigError, TodstepError, ValidationError
from .kernels import gather_scores, hash_features, scatter_add
from .kernels.hashing import state_feature_ids
from .linearizer import (
    INFORM_ACT,
    NAME_SLOT,
    OFFER_ACT,
    Region,
    Vocabulary,
    domain_token,
    placeholder_token,
)
from .schema import DialogueSchema, TurnGoal

DEFAULT_BITS = 18

MEMBER_NONE = 0
MEMBER_REQ = 1
MEMBER_DOMAIN = 2
MEMBER_SLOT = 3
MEMBER_VALUE = 4


class FeatureContext:
    """Per-(vocabulary, goal) feature tables.

    member marks each vocabulary token's static relation to the goal.
    ctx_array marks, per step, which tokens the goal singles out in the
    current region: in the belief span, goal domains and the pending
    domain's goal slots (1) and words of the pending slot's goal value
    (2); in the act and response spans, the active turn's domain token
    plus requested placeholders and the inform act (3) when the goal
    requests anything, else the offer act and the name placeholder (4).
    Arrays are int8 as the kernels expect.
    """

    def __init__(self, vocab: Vocabulary, goal: TurnGoal, bits: int):
        self.vocab = vocab
        self.goal = goal
        self.bits = bits
        size = len(vocab)
        member = np.zeros(size, dtype=np.int8)

        def idx_of(token: str) -> int | None:
            return vocab.index.get(token)

        def mark(token: str, kind: int) -> None:
            idx = idx_of(token)
            if idx is not None:
                member[idx] = kind

        for _, _, value in goal.sv_gt:
            for word in value.split():
                mark(word, MEMBER_VALUE)
        for _, slot, _ in goal.sv_gt:
            mark(slot, MEMBER_SLOT)
        for domain in {d for d, _, _ in goal.sv_gt} | {d for d, _ in goal.s_gt}:
            mark(domain_token(domain), MEMBER_DOMAIN)
        for _, slot in goal.s_gt:
            mark(placeholder_token(slot), MEMBER_REQ)
        member.setflags(write=False)
        self.member = member

        self._domain_ids = [
            i for i in (
                idx_of(domain_token(d)) for d in {d for d, _, _ in goal.sv_gt}
            ) if i is not None
        ]
        self._slot_ids: dict[str, list[int]] = {}
        self._value_ids: dict[tuple[str, str], list[int]] = {}
        for domain, slot, value in goal.sv_gt:
            idx = idx_of(slot)
            if idx is not None:
                self._slot_ids.setdefault(domain, []).append(idx)
            ids = [
                vocab.index[word]
                for word in value.split()
                if word in vocab.index
            ]
            self._value_ids[(domain, slot)] = ids
        if goal.s_gt:
            self._span_ids = [
                i for i in (
                    [idx_of(placeholder_token(s)) for _, s in goal.s_gt]
                    + [idx_of(INFORM_ACT)]
                ) if i is not None
            ]
            self._span_class = 3
        else:
            self._span_ids = [
                i for i in (
                    idx_of(OFFER_ACT), idx_of(placeholder_token(NAME_SLOT)),
                ) if i is not None
            ]
            self._span_class = 4
        self._zeros = np.zeros(size, dtype=np.int8)
        self._zeros.setflags(write=False)
        self._ctx_cache: dict[tuple, np.ndarray] = {}

    def ctx_array(
        self,
        region: int,
        pending_domain: str | None,
        pending_slot: str | None,
        turn_domain: str | None = None,
    ) -> np.ndarray:
        key = (region, pending_domain, pending_slot, turn_domain)
        cached = self._ctx_cache.get(key)
        if cached is not None:
            return cached
        ctx = np.zeros(len(self.vocab), dtype=np.int8)
        if region == int(Region.BELIEF):
            for idx in self._domain_ids:
                ctx[idx] = 1
            if pending_domain is not None:
                for idx in self._slot_ids.get(pending_domain, ()):
                    ctx[idx] = 1
                if pending_slot is not None:
                    ids = self._value_ids.get((pending_domain, pending_slot), ())
                    for idx in ids:
                        ctx[idx] = 2
        elif region in (int(Region.ACT), int(Region.RESPONSE)):
            for idx in self._span_ids:
                ctx[idx] = self._span_class
            if turn_domain is not None:
                idx = self.vocab.index.get(domain_token(turn_domain))
                if idx is not None:
                    ctx[idx] = self._span_class
        else:
            return self._zeros
        ctx.setflags(write=False)
        self._ctx_cache[key] = ctx
        return ctx


_context_caches: "weakref.WeakKeyDictionary[Vocabulary, dict]" = weakref.WeakKeyDictionary()


def feature_context(vocab: Vocabulary, goal: TurnGoal, bits: int) -> FeatureContext:
    per_vocab = _context_caches.setdefault(vocab, {})
    key = (goal, bits)
    fc = per_vocab.get(key)
    if fc is None:
        fc = FeatureContext(vocab, goal, bits)
        per_vocab[key] = fc
    return fc


@dataclass(frozen=True)
class PolicySnapshot:
    """Immutable weight bundle; clones increment the version tag."""

    vocab: Vocabulary
    policy_weights: np.ndarray
    value_weights: np.ndarray
    bits: int = DEFAULT_BITS
    version: int = 0

    def __post_init__(self):
        if not (
            np.isfinite(self.policy_weights).all()
            and np.isfinite(self.value_weights).all()
        ):
            raise ValidationError("snapshot weights must be finite")
        self.policy_weights.setflags(write=False)
        self.value_weights.setflags(write=False)


def new_snapshot(vocab: Vocabulary, bits: int = DEFAULT_BITS) -> PolicySnapshot:
    size = 1 << bits
    return PolicySnapshot(
        vocab=vocab,
        policy_weights=np.zeros(size),
        value_weights=np.zeros(size),
        bits=bits,
        version=0,
    )


def clone_snapshot(snapshot: PolicySnapshot) -> PolicySnapshot:
    return PolicySnapshot(
        vocab=snapshot.vocab,
        policy_weights=snapshot.policy_weights.copy(),
        value_weights=snapshot.value_weights.copy(),
        bits=snapshot.bits,
        version=snapshot.version + 1,
    )


def with_weights(
    snapshot: PolicySnapshot,
    policy_weights: np.ndarray,
    value_weights: np.ndarray,
) -> PolicySnapshot:
    """Fresh snapshot around updated weight arrays (copies them)."""
    return PolicySnapshot(
        vocab=snapshot.vocab,
        policy_weights=np.array(policy_weights, dtype=np.float64),
        value_weights=np.array(value_weights, dtype=np.float64),
        bits=snapshot.bits,
        version=snapshot.version + 1,
    )


def save_snapshot(snapshot: PolicySnapshot, path: str | Path) -> None:
    meta = {
        "format": 1,
        "tokens": list(snapshot.vocab.tokens),
        "bits": snapshot.bits,
        "version": snapshot.version,
    }
    with open(path, "wb") as fh:
        np.savez_compressed(
            fh,
            policy=snapshot.policy_weights,
            value=snapshot.value_weights,
            meta=np.array(json.dumps(meta)),
        )


def load_snapshot(path: str | Path) -> PolicySnapshot:
    with np.load(path) as data:
        meta = json.loads(str(data["meta"][()]))
        if meta.get("format") != 1:
            raise ValidationError(f"unsupported snapshot format in {path}")
        return PolicySnapshot(
            vocab=Vocabulary(meta["tokens"]),
            policy_weights=data["policy"].copy(),
            value_weights=data["value"].copy(),
            bits=int(meta["bits"]),
            version=int(meta["version"]),
        )


def _prev_ids(vocab: Vocabulary, state: EpisodeState) -> tuple[int, int, int]:
    p3, p2, p1 = (vocab.id_of(t) for t in state.prev_tokens(3))
    return p1, p2, p3


def _region_code(state: EpisodeState) -> int:
    """Parse region fused with the turn type (goal requests slots or not).

    Keeping the two turn types in separate feature rows stops updates in
    slot-answering turns from rewriting the entity-offering behavior that
    shares the same surface context.
    """
    return int(state.extractor.region) + (8 if state.goal.s_gt else 0)


def _features(
    vocab: Vocabulary, bits: int, state: EpisodeState, cand_ids: np.ndarray
) -> np.ndarray:
    fc = feature_context(vocab, state.goal, bits)
    ctx = fc.ctx_array(
        int(state.extractor.region),
        state.extractor.pending_domain,
        state.extractor.pending_slot,
        state.turn_domain,
    )
    p1, p2, p3 = _prev_ids(vocab, state)
    return hash_features(
        cand_ids, fc.member, ctx, p1, p2, p3, _region_code(state), bits
    )


def candidate_features(
    snapshot: PolicySnapshot, state: EpisodeState, cand_ids: np.ndarray
) -> np.ndarray:
    """Feature-id matrix (int64[n, 7]) for candidate tokens in this state."""
    return _features(snapshot.vocab, snapshot.bits, state, cand_ids)


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def distribution_from_features(weights: np.ndarray, feats: np.ndarray) -> np.ndarray:
    return softmax(gather_scores(weights, feats))


def action_distribution(
    snapshot: PolicySnapshot,
    state: EpisodeState,
    mask: Iterable[int] | None = None,
) -> np.ndarray:
    """Probability vector over the full vocabulary; zero outside the mask."""
    size = len(snapshot.vocab)
    if mask is None:
        cand_ids = np.arange(size, dtype=np.int64)
    else:
        cand_ids = np.array(sorted(set(mask)), dtype=np.int64)
        if cand_ids.size == 0:
            raise ValidationError("action mask is empty")
        if cand_ids[0] < 0 or cand_ids[-1] >= size:
            raise ValidationError("action mask contains out-of-range token ids")
    feats = candidate_features(snapshot, state, cand_ids)
    probs = distribution_from_features(snapshot.policy_weights, feats)
    out = np.zeros(size)
    out[cand_ids] = probs
    return out


@dataclass(frozen=True)
class SampleInfo:
    """Everything the trainer needs to replay one sampled step.

    kept_positions indexes rows of cand_ids/feats that survived
    truncation; kept_index locates the sampled token within them.  The
    step's action support is exactly that kept set, and the logprob is
    taken under the renormalized distribution over it.
    """

    token_id: int
    token: str
    logprob: float
    cand_ids: np.ndarray
    feats: np.ndarray
    cand_index: int
    kept_positions: np.ndarray
    kept_index: int


def _check_sampling_args(top_k: int, top_p: float, temperature: float) -> None:
    if top_k < 1:
        raise ConfigError("top_k must be >= 1")
    if not (0.0 < top_p <= 1.0):
        raise ConfigError("top_p must be in (0, 1]")
    if temperature <= 0:
        raise ConfigError("temperature must be positive")


def truncate_and_sample(
    probs: np.ndarray,
    cand_ids: np.ndarray,
    top_k: int,
    top_p: float,
    rng: np.random.Generator,
) -> tuple[int, float, np.ndarray, int]:
    """Top-k then nucleus truncation, renormalize, draw.

    Returns (position within cand_ids, logprob under the truncated
    distribution, surviving positions, pick index within survivors).
    Ties order by descending probability then ascending token id, so
    results are reproducible.
    """
    order = np.lexsort((cand_ids, -probs))
    order = order[: min(top_k, order.size)]
    sorted_probs = probs[order]
    cumulative = np.cumsum(sorted_probs)
    total = cumulative[-1]
    cut = int(np.searchsorted(cumulative, top_p * total, side="left"))
    cut = min(cut, order.size - 1)
    kept_positions = order[: cut + 1]
    kept = sorted_probs[: cut + 1] / cumulative[cut]
    cdf = np.cumsum(kept)
    draw = rng.random()
    pick = int(np.searchsorted(cdf, draw, side="right"))
    pick = min(pick, kept.size - 1)
    return int(order[pick]), math.log(kept[pick]), kept_positions, pick


def sample_info(
    snapshot: PolicySnapshot,
    state: EpisodeState,
    top_k: int,
    top_p: float,
    temperature: float,
    rng: np.random.Generator,
    mask: Iterable[int] | None = None,
) -> SampleInfo:
    _check_sampling_args(top_k, top_p, temperature)
    size = len(snapshot.vocab)
    if mask is None:
        cand_ids = np.arange(size, dtype=np.int64)
    else:
        cand_ids = np.array(sorted(set(mask)), dtype=np.int64)
        if cand_ids.size == 0:
            raise ValidationError("action mask is empty")
    feats = candidate_features(snapshot, state, cand_ids)
    scores = gather_scores(snapshot.policy_weights, feats)
    probs = softmax(scores / temperature)
    index, logprob, kept_positions, kept_index = truncate_and_sample(
        probs, cand_ids, top_k, top_p, rng
    )
    token_id = int(cand_ids[index])
    return SampleInfo(
        token_id=token_id,
        token=snapshot.vocab.token_of(token_id),
        logprob=logprob,
        cand_ids=cand_ids,
        feats=feats,
        cand_index=index,
        kept_positions=kept_positions,
        kept_index=kept_index,
    )


def sample_action(
    snapshot: PolicySnapshot,
    state: EpisodeState,
    top_k: int,
    top_p: float,
    temperature: float,
    rng: np.random.Generator,
) -> tuple[str, float]:
    info = sample_info(snapshot, state, top_k, top_p, temperature, rng)
    return info.token, info.logprob


def state_value(snapshot: PolicySnapshot, state: EpisodeState) -> float:
    p1, p2, p3 = _prev_ids(snapshot.vocab, state)
    ids = state_feature_ids(p1, p2, p3, _region_code(state), snapshot.bits)
    return float(snapshot.value_weights[list(ids)].sum())


def state_value_ids(snapshot: PolicySnapshot, state: EpisodeState) -> tuple[int, ...]:
    p1, p2, p3 = _prev_ids(snapshot.vocab, state)
    return state_feature_ids(p1, p2, p3, _region_code(state), snapshot.bits)


def iter_teacher_steps(
    vocab: Vocabulary,
    bits: int,
    dialogues: Sequence[Dialogue],
    schema: DialogueSchema,
    max_output: int = 64,
):
    """Yield (feats, target index) over every gold token, teacher-forced.

    Candidates are the whole vocabulary, so the target index equals the
    target token id.  The walk never reads weights; only the caller's use
    of the features does.
    """
    all_ids = np.arange(len(vocab), dtype=np.int64)
    for dialogue in dialogues:
        for turn_index in range(len(dialogue.turns)):
            state = reset_episode(dialogue, turn_index, schema, max_output)
            for token in state.gold[:max_output]:
                feats = _features(vocab, bits, state, all_ids)
                yield feats, vocab.id_of(token)
                env_step(state, token)


def nll_of(
    snapshot: PolicySnapshot,
    dialogues: Sequence[Dialogue],
    schema: DialogueSchema,
    max_output: int = 64,
) -> float:
    """Total negative log likelihood of gold outputs under the snapshot."""
    total = 0.0
    steps = iter_teacher_steps(
        snapshot.vocab, snapshot.bits, dialogues, schema, max_output
    )
    for feats, target in steps:
        probs = distribution_from_features(snapshot.policy_weights, feats)
        total -= math.log(probs[target])
    return total


def sft_train(
    dialogues: Sequence[Dialogue],
    schema: DialogueSchema,
    epochs: int,
    learning_rate: float,
    vocab: Vocabulary | None = None,
    bits: int = DEFAULT_BITS,
    max_output: int = 64,
    start: PolicySnapshot | None = None,
) -> tuple[PolicySnapshot, list[float]]:
    """Likelihood training by plain SGD in fixed corpus order.

    Per token the weight update is the exact log-likelihood gradient:
    +lr on the target's features, -lr*p(a) on every candidate's.  Returns
    the trained snapshot and the per-epoch mean NLL (running, as seen
    during the pass).
    """
    if not dialogues:
        raise ValidationError("SFT corpus is empty")
    if start is not None:
        base = start
    else:
        if vocab is None:
            from .envgen import corpus_vocab

            vocab = corpus_vocab(schema, dialogues)
        base = new_snapshot(vocab, bits)
    weights = base.policy_weights.copy()
    epoch_nll: list[float] = []
    for epoch in range(epochs):
        total = 0.0
        count = 0
        steps = iter_teacher_steps(
            base.vocab, base.bits, dialogues, schema, max_output
        )
        for feats, target in steps:
            probs = distribution_from_features(weights, feats)
            total -= math.log(probs[target])
            count += 1
            coefs = (-learning_rate) * probs
            coefs[target] += learning_rate
            scatter_add(weights, feats, coefs)
        if not math.isfinite(total):
            raise TodstepError(
                f"non-finite SFT loss at epoch {epoch}: nll={total!r}"
            )
        epoch_nll.append(total / max(count, 1))
    final = PolicySnapshot(
        vocab=base.vocab,
        policy_weights=weights.copy(),
        value_weights=base.value_weights.copy(),
        bits=base.bits,
        version=base.version + 1,
    )
    return final, epoch_nll
