"""Policy-gradient fine-tuning on per-token shaped rewards.

Rollouts sample one corpus turn per episode; every sampled token carries
its task-reward delta minus the KL penalty against the frozen reference.
Updates maximize the clipped PPO surrogate with exact log-linear
gradients over each step's truncated action support, the linear value
baseline is regressed on observed returns, and the KL coefficient adapts
between batches.  Optional masked-policy action elimination restricts
sampling to a periodically refreshed nucleus.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .envgen import Corpus, Dialogue, dialogue_to_eval, env_step, reset_episode
from .errors import ConfigError, TodstepError
from .kernels import gather_scores, scatter_add
from .linearizer import EOS_R
from .metrics import EvalReport, evaluate_corpus
from .policy import (
    PolicySnapshot,
    SampleInfo,
    Vocabulary,
    candidate_features,
    clone_snapshot,
    sample_info,
    softmax,
    state_value_ids,
)
from .reward import (
    REWARD_MODES,
    AdaptiveKL,
    RewardConfig,
    RewardTracker,
)
from .schema import DialogueSchema, EntityDatabase


@dataclass(frozen=True)
class TrainConfig:
    """Loop sizing, PPO constants, sampling, and ablation mode."""

    episodes: int = 2500
    batch_size: int = 8
    epochs_per_batch: int = 5
    learning_rate: float = 1.0
    value_learning_rate: float = 0.2
    gamma: float = 0.99
    clip_epsilon: float = 0.2
    nlpo: bool = False
    nlpo_p: float = 0.9
    nlpo_refresh: int = 10
    reward_mode: str = "full"
    top_k: int = 50
    top_p: float = 1.0
    temperature: float = 1.0
    seed: int = 0
    max_output: int = 64
    eval_every: int = 0
    eval_dialogues: int = 0

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigError("gamma must be in [0, 1]")
        if self.clip_epsilon <= 0:
            raise ConfigError("clip_epsilon must be positive")
        if not (0.0 < self.nlpo_p <= 1.0):
            raise ConfigError("nlpo_p must be in (0, 1]")
        if self.reward_mode not in REWARD_MODES:
            raise ConfigError(f"unknown reward mode {self.reward_mode!r}")
        if self.episodes <= 0 or self.batch_size <= 0 or self.epochs_per_batch <= 0:
            raise ConfigError("episodes, batch_size, epochs_per_batch must be positive")
        if self.nlpo_refresh <= 0:
            raise ConfigError("nlpo_refresh must be positive")

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "batch_size": self.batch_size,
            "epochs_per_batch": self.epochs_per_batch,
            "learning_rate": self.learning_rate,
            "value_learning_rate": self.value_learning_rate,
            "gamma": self.gamma,
            "clip_epsilon": self.clip_epsilon,
            "nlpo": self.nlpo,
            "nlpo_p": self.nlpo_p,
            "nlpo_refresh": self.nlpo_refresh,
            "reward_mode": self.reward_mode,
            "top_k": self.top_k,
            "top_p": self.top_p,
            "temperature": self.temperature,
            "seed": self.seed,
            "max_output": self.max_output,
            "eval_every": self.eval_every,
            "eval_dialogues": self.eval_dialogues,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "TrainConfig":
        return cls(**dict(raw))


@dataclass(frozen=True)
class StepSample:
    """One sampled token with its frozen action support."""

    feats_kept: np.ndarray
    kept_index: int
    logprob: float
    logprob_ref: float
    value_ids: tuple[int, ...]
    value_pred: float


@dataclass(frozen=True)
class EpisodeRollout:
    steps: tuple[StepSample, ...]
    rewards: np.ndarray
    returns: np.ndarray
    advantages: np.ndarray
    task_return: float
    cum_tod: float


@dataclass(frozen=True)
class RolloutBatch:
    episodes: tuple[EpisodeRollout, ...]
    mean_logratio: float
    mean_task_return: float
    n_steps: int


def nucleus_mask(
    masked_snapshot: PolicySnapshot, state, p: float
) -> np.ndarray:
    """Smallest prefix of the masked policy's sorted vocabulary with mass >= p."""
    size = len(masked_snapshot.vocab)
    cand_ids = np.arange(size, dtype=np.int64)
    feats = candidate_features(masked_snapshot, state, cand_ids)
    probs = softmax(gather_scores(masked_snapshot.policy_weights, feats))
    order = np.lexsort((cand_ids, -probs))
    cumulative = np.cumsum(probs[order])
    cut = int(np.searchsorted(cumulative, p * cumulative[-1], side="left"))
    cut = min(cut, size - 1)
    return np.sort(order[: cut + 1])


def _mode_delta(mode: str, record, prev_u: float, prev_g: float) -> float:
    if mode == "full":
        return record.delta_tod
    if mode == "understanding_only":
        return record.cum_u - prev_u
    if mode == "generation_only":
        return record.cum_g - prev_g
    return 0.0


def _discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def _logprob_under(
    weights: np.ndarray, feats_kept: np.ndarray, kept_index: int, temperature: float
) -> float:
    probs = softmax(gather_scores(weights, feats_kept) / temperature)
    return math.log(probs[kept_index])


def _rollout_episode(
    policy: PolicySnapshot,
    ref: PolicySnapshot,
    dialogue: Dialogue,
    turn_index: int,
    schema: DialogueSchema,
    reward_config: RewardConfig,
    config: TrainConfig,
    rng: np.random.Generator,
    beta: float,
    masked: PolicySnapshot | None,
    force_gold: bool,
) -> EpisodeRollout:
    state = reset_episode(dialogue, turn_index, schema, config.max_output)
    tracker = RewardTracker(state.goal, schema, reward_config)
    prev_u, prev_g = tracker.initial_u, tracker.initial_g
    steps: list[StepSample] = []
    deltas: list[float] = []
    logratios: list[float] = []
    vocab = policy.vocab
    while not state.done:
        value_ids = state_value_ids(policy, state)
        value_pred = float(policy.value_weights[list(value_ids)].sum())
        if force_gold:
            token = (
                state.gold[len(state.output)]
                if len(state.output) < len(state.gold)
                else EOS_R
            )
            info = _forced_info(policy, state, token, config.temperature)
        else:
            mask = None
            if masked is not None:
                mask = nucleus_mask(masked, state, config.nlpo_p)
            info = sample_info(
                policy, state, config.top_k, config.top_p,
                config.temperature, rng, mask=mask,
            )
        feats_kept = info.feats[info.kept_positions]
        logprob_ref = _logprob_under(
            ref.policy_weights, feats_kept, info.kept_index, config.temperature
        )
        record = tracker.step(info.token)
        deltas.append(_mode_delta(config.reward_mode, record, prev_u, prev_g))
        prev_u, prev_g = record.cum_u, record.cum_g
        steps.append(StepSample(
            feats_kept=feats_kept,
            kept_index=info.kept_index,
            logprob=info.logprob,
            logprob_ref=logprob_ref,
            value_ids=value_ids,
            value_pred=value_pred,
        ))
        logratios.append(info.logprob - logprob_ref)
        env_step(state, info.token)
    summary = tracker.finalize()
    if config.reward_mode == "sparse_terminal" and deltas:
        deltas[-1] += summary.cum_tod
    deltas_arr = np.array(deltas, dtype=np.float64)
    logr = np.array(logratios, dtype=np.float64)
    rewards = deltas_arr - beta * logr
    returns = _discounted_returns(rewards, config.gamma)
    values = np.array([s.value_pred for s in steps])
    return EpisodeRollout(
        steps=tuple(steps),
        rewards=rewards,
        returns=returns,
        advantages=returns - values,
        task_return=float(deltas_arr.sum()),
        cum_tod=summary.cum_tod,
    )


def _forced_info(
    policy: PolicySnapshot, state, token: str, temperature: float
) -> SampleInfo:
    size = len(policy.vocab)
    cand_ids = np.arange(size, dtype=np.int64)
    feats = candidate_features(policy, state, cand_ids)
    probs = softmax(gather_scores(policy.policy_weights, feats) / temperature)
    idx = policy.vocab.id_of(token)
    return SampleInfo(
        token_id=idx,
        token=token,
        logprob=math.log(probs[idx]),
        cand_ids=cand_ids,
        feats=feats,
        cand_index=idx,
        kept_positions=cand_ids,
        kept_index=idx,
    )


def collect_rollouts(
    policy: PolicySnapshot,
    ref: PolicySnapshot,
    dialogues: Sequence[Dialogue],
    schema: DialogueSchema,
    reward_config: RewardConfig,
    config: TrainConfig,
    n_episodes: int,
    rng: np.random.Generator,
    beta: float,
    masked: PolicySnapshot | None = None,
    force_gold: bool = False,
) -> RolloutBatch:
    """Sample per-turn episodes uniformly from the corpus and score them."""
    turn_slots = [
        (di, ti)
        for di, dialogue in enumerate(dialogues)
        for ti in range(len(dialogue.turns))
    ]
    if not turn_slots:
        raise ConfigError("rollout corpus has no turns")
    episodes = []
    for _ in range(n_episodes):
        di, ti = turn_slots[int(rng.integers(len(turn_slots)))]
        episodes.append(_rollout_episode(
            policy, ref, dialogues[di], ti, schema, reward_config,
            config, rng, beta, masked, force_gold,
        ))
    all_logr = [
        s.logprob - s.logprob_ref for ep in episodes for s in ep.steps
    ]
    n_steps = len(all_logr)
    return RolloutBatch(
        episodes=tuple(episodes),
        mean_logratio=float(np.mean(all_logr)) if all_logr else 0.0,
        mean_task_return=float(np.mean([ep.task_return for ep in episodes])),
        n_steps=n_steps,
    )


def ppo_update(
    policy: PolicySnapshot, batch: RolloutBatch, config: TrainConfig
) -> tuple[PolicySnapshot, dict]:
    """Clipped-surrogate ascent plus a value regression step per epoch."""
    if not batch.episodes:
        raise ConfigError("cannot update from an empty batch")
    weights = policy.policy_weights.copy()
    value_weights = policy.value_weights.copy()
    n_steps = max(batch.n_steps, 1)
    eps = config.clip_epsilon
    tau = config.temperature
    stats = {"surrogate": 0.0, "clip_fraction": 0.0, "value_mse": 0.0}
    for _ in range(config.epochs_per_batch):
        grad = np.zeros_like(weights)
        surrogate = 0.0
        clipped = 0
        for ep in batch.episodes:
            for t, step in enumerate(ep.steps):
                probs = softmax(
                    gather_scores(weights, step.feats_kept) / tau
                )
                pi_new = probs[step.kept_index]
                ratio = pi_new / math.exp(step.logprob)
                advantage = ep.advantages[t]
                clipped_ratio = min(max(ratio, 1.0 - eps), 1.0 + eps)
                surrogate += min(ratio * advantage, clipped_ratio * advantage)
                inactive = (advantage >= 0 and ratio > 1.0 + eps) or (
                    advantage < 0 and ratio < 1.0 - eps
                )
                if inactive:
                    clipped += 1
                    continue
                if advantage == 0.0:
                    continue
                scale = advantage * ratio / (tau * n_steps)
                coefs = (-scale) * probs
                coefs[step.kept_index] += scale
                scatter_add(grad, step.feats_kept, coefs)
        if not np.isfinite(grad).all():
            raise TodstepError(
                f"non-finite PPO gradient (batch of {batch.n_steps} steps)"
            )
        weights += config.learning_rate * grad
        value_grad = np.zeros_like(value_weights)
        value_mse = 0.0
        for ep in batch.episodes:
            for t, step in enumerate(ep.steps):
                ids = list(step.value_ids)
                pred = float(value_weights[ids].sum())
                err = ep.returns[t] - pred
                value_mse += err * err
                value_grad[ids] += err / n_steps
        value_weights += config.value_learning_rate * value_grad
        stats = {
            "surrogate": surrogate / n_steps,
            "clip_fraction": clipped / n_steps,
            "value_mse": value_mse / n_steps,
        }
    updated = PolicySnapshot(
        vocab=policy.vocab,
        policy_weights=weights,
        value_weights=value_weights,
        bits=policy.bits,
        version=policy.version + 1,
    )
    return updated, stats


def greedy_decode(
    snapshot: PolicySnapshot,
    dialogue: Dialogue,
    turn_index: int,
    schema: DialogueSchema,
    max_output: int = 64,
) -> str:
    """Argmax rollout of one turn; deterministic."""
    state = reset_episode(dialogue, turn_index, schema, max_output)
    rng = np.random.default_rng(0)
    while not state.done:
        info = sample_info(snapshot, state, 1, 1.0, 1.0, rng)
        env_step(state, info.token)
    return " ".join(state.output)


def evaluate_snapshot(
    snapshot: PolicySnapshot,
    dialogues: Sequence[Dialogue],
    db: EntityDatabase,
    max_output: int = 64,
    mode: str | None = None,
) -> EvalReport:
    """Greedy-decode every turn and run the corpus metrics."""
    schema = db.schema
    evals = []
    for dialogue in dialogues:
        outputs = [
            greedy_decode(snapshot, dialogue, ti, schema, max_output)
            for ti in range(len(dialogue.turns))
        ]
        evals.append(dialogue_to_eval(dialogue, schema, outputs))
    return evaluate_corpus(evals, db, mode=mode)


@dataclass
class TrainerState:
    """Everything needed to resume a run deterministically."""

    snapshot: PolicySnapshot
    masked: PolicySnapshot | None
    episodes_done: int
    updates_done: int
    beta: float
    rng_state: dict
    logs: list = field(default_factory=list)


@dataclass(frozen=True)
class TrainResult:
    snapshot: PolicySnapshot
    logs: tuple[dict, ...]
    state: TrainerState


def train(
    config: TrainConfig,
    corpus: Corpus,
    db: EntityDatabase,
    sft_snapshot: PolicySnapshot,
    reward_config: RewardConfig | None = None,
    log_sink: Callable[[dict], None] | None = None,
    state: TrainerState | None = None,
) -> TrainResult:
    """Full loop: collect, update, adapt KL, periodically evaluate on dev.

    The reference policy is the supplied starting snapshot, frozen.  Log
    records carry the dev metrics plus the controller and divergence
    readings at that point.  Passing a saved TrainerState resumes exactly.
    """
    schema = db.schema
    reward_config = reward_config if reward_config is not None else RewardConfig()
    ref = clone_snapshot(sft_snapshot)
    kl = AdaptiveKL.from_config(reward_config)
    rng = np.random.default_rng(config.seed)
    if state is None:
        policy = clone_snapshot(sft_snapshot)
        masked = clone_snapshot(sft_snapshot) if config.nlpo else None
        state = TrainerState(
            snapshot=policy,
            masked=masked,
            episodes_done=0,
            updates_done=0,
            beta=kl.beta,
            rng_state=rng.bit_generator.state,
            logs=[],
        )
    else:
        kl.beta = state.beta
    rng.bit_generator.state = state.rng_state
    policy = state.snapshot
    masked = state.masked
    logs = list(state.logs)
    mean_kl = 0.0

    def emit(record: dict) -> None:
        logs.append(record)
        if log_sink is not None:
            log_sink(record)

    def run_eval(episode: int) -> None:
        dev = corpus.dev if corpus.dev else corpus.train
        if config.eval_dialogues:
            dev = dev[: config.eval_dialogues]
        report = evaluate_snapshot(policy, dev, db, config.max_output)
        emit({
            "episode": episode,
            "inform": report.inform,
            "success": report.success,
            "match": report.match,
            "succ_f1": report.succ_f1,
            "bleu": report.bleu,
            "combined": report.combined,
            "beta": kl.beta,
            "mean_kl": mean_kl,
            "reward_mode": config.reward_mode,
            "seed": config.seed,
        })

    next_eval = None
    if config.eval_every:
        already = state.episodes_done // config.eval_every
        next_eval = (already + 1) * config.eval_every

    while state.episodes_done < config.episodes:
        n = min(config.batch_size, config.episodes - state.episodes_done)
        batch = collect_rollouts(
            policy, ref, corpus.train, schema, reward_config,
            config, n, rng, kl.beta, masked=masked,
        )
        policy, _ = ppo_update(policy, batch, config)
        state.updates_done += 1
        if masked is not None and state.updates_done % config.nlpo_refresh == 0:
            masked = clone_snapshot(policy)
        mean_kl = batch.mean_logratio
        kl.update(max(0.0, mean_kl))
        state.episodes_done += n
        state.snapshot = policy
        state.masked = masked
        state.beta = kl.beta
        state.rng_state = rng.bit_generator.state
        while next_eval is not None and state.episodes_done >= next_eval:
            run_eval(next_eval)
            next_eval += config.eval_every
    if not config.eval_every or config.episodes % config.eval_every != 0:
        run_eval(config.episodes)
    state.logs = logs
    return TrainResult(snapshot=policy, logs=tuple(logs), state=state)


def save_checkpoint(state: TrainerState, path: str | Path) -> None:
    meta = {
        "format": 1,
        "tokens": list(state.snapshot.vocab.tokens),
        "bits": state.snapshot.bits,
        "version": state.snapshot.version,
        "episodes_done": state.episodes_done,
        "updates_done": state.updates_done,
        "beta": state.beta,
        "rng_state": json.loads(json.dumps(state.rng_state)),
        "logs": state.logs,
        "has_masked": state.masked is not None,
    }
    arrays = {
        "policy": state.snapshot.policy_weights,
        "value": state.snapshot.value_weights,
        "meta": np.array(json.dumps(meta)),
    }
    if state.masked is not None:
        arrays["masked_policy"] = state.masked.policy_weights
        arrays["masked_value"] = state.masked.value_weights
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_checkpoint(path: str | Path) -> TrainerState:
    with np.load(path) as data:
        meta = json.loads(str(data["meta"][()]))
        vocab = Vocabulary(meta["tokens"])
        snapshot = PolicySnapshot(
            vocab=vocab,
            policy_weights=data["policy"].copy(),
            value_weights=data["value"].copy(),
            bits=int(meta["bits"]),
            version=int(meta["version"]),
        )
        masked = None
        if meta.get("has_masked"):
            masked = PolicySnapshot(
                vocab=vocab,
                policy_weights=data["masked_policy"].copy(),
                value_weights=data["masked_value"].copy(),
                bits=int(meta["bits"]),
                version=int(meta["version"]),
            )
    rng_state = meta["rng_state"]
    return TrainerState(
        snapshot=snapshot,
        masked=masked,
        episodes_done=int(meta["episodes_done"]),
        updates_done=int(meta["updates_done"]),
        beta=float(meta["beta"]),
        rng_state=rng_state,
        logs=list(meta["logs"]),
    )
