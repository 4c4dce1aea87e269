"""Progressive task rewards for token-by-token turn generation.

Understanding reward: fraction of ground-truth slot-value triples already
produced, discounted by exp(-alpha_u * missing_fraction).  Generation
reward: the same over requested-slot placeholders.  The combined task
reward weights the two by their ground-truth set sizes.  A tracker turns
the cumulative value into per-token deltas, and an adaptive controller
keeps the KL penalty coefficient near a target divergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .errors import TodstepError
from .linearizer import ExtractorState
from .schema import DialogueSchema, TurnGoal

REWARD_MODES = ("full", "understanding_only", "generation_only", "sparse_terminal")


@dataclass(frozen=True)
class RewardConfig:
    """Penalty strengths for the two reward terms plus KL controller settings."""

    alpha_u: float = 1.0
    alpha_g: float = 1.0
    kl_beta_init: float = 0.01
    kl_target: float = 0.05
    kl_update_rate: float = 0.2
    kl_clip: float = 0.2

    def __post_init__(self):
        if self.alpha_u < 0 or self.alpha_g < 0:
            raise ValueError("alpha_u and alpha_g must be non-negative")
        if self.kl_beta_init <= 0 or self.kl_target <= 0 or self.kl_clip <= 0:
            raise ValueError("kl_beta_init, kl_target, kl_clip must be positive")


def _progressive(gt: frozenset, pred: Iterable, alpha: float) -> float:
    """|gt ∩ pred| · exp(−alpha·|gt ∖ pred|/|gt|) / |gt|; 1.0 on empty gt."""
    n = len(gt)
    if n == 0:
        return 1.0
    pred = set(pred)
    hit = len(gt & pred)
    missing = n - hit
    return hit * math.exp(-alpha * missing / n) / n


def understanding_reward(sv_gt, sv_hat, alpha_u: float) -> float:
    """Reward for correctly tracked belief triples, in [0, 1]."""
    return _progressive(frozenset(sv_gt), sv_hat, alpha_u)


def generation_reward(s_gt, s_hat, alpha_g: float) -> float:
    """Reward for provided requested-slot placeholders, in [0, 1]."""
    return _progressive(frozenset(s_gt), s_hat, alpha_g)


def tod_reward(sv_gt, sv_hat, s_gt, s_hat, config: RewardConfig) -> float:
    """Size-weighted combination of the two rewards, in [0, 1].

    An empty ground-truth side simply carries zero weight; when both sides
    are empty the turn has no task signal and the reward is 0.0.
    """
    sv_gt = frozenset(sv_gt)
    s_gt = frozenset(s_gt)
    denom = len(sv_gt) + len(s_gt)
    if denom == 0:
        return 0.0
    num = 0.0
    if sv_gt:
        num += len(sv_gt) * understanding_reward(sv_gt, sv_hat, config.alpha_u)
    if s_gt:
        num += len(s_gt) * generation_reward(s_gt, s_hat, config.alpha_g)
    return num / denom


@dataclass(frozen=True)
class TraceRecord:
    """One fed token with the reward state after it."""

    token: str
    delta_tod: float
    cum_u: float
    cum_g: float
    cum_tod: float
    region: str

    def to_dict(self) -> dict:
        return {
            "token": self.token,
            "delta_tod": self.delta_tod,
            "cum_u": self.cum_u,
            "cum_g": self.cum_g,
            "cum_tod": self.cum_tod,
            "region": self.region,
        }


@dataclass(frozen=True)
class EpisodeSummary:
    """Totals reported once a tracked episode is closed."""

    cum_u: float
    cum_g: float
    cum_tod: float
    n_tokens: int
    malformed: bool
    halted: bool
    sv_hat: frozenset
    s_hat: frozenset


class RewardTracker:
    """Streams one episode's tokens into per-token task-reward deltas.

    Wraps an extractor; after each token the three cumulative rewards are
    recomputed from the extracted sets, and the combined-reward delta is
    returned.  Deltas therefore sum to the final combined reward, and a
    stream that halts extraction stays flat from that point on.
    """

    def __init__(
        self,
        goal: TurnGoal,
        schema: DialogueSchema,
        config: RewardConfig | None = None,
    ):
        self.goal = goal
        self.config = config if config is not None else RewardConfig()
        self.extractor = ExtractorState(schema, default_domain=goal.primary_domain)
        self.initial_u = understanding_reward(goal.sv_gt, (), self.config.alpha_u)
        self.initial_g = generation_reward(goal.s_gt, (), self.config.alpha_g)
        self.cum_u = self.initial_u
        self.cum_g = self.initial_g
        self.cum_tod = 0.0
        self.trace: list[TraceRecord] = []
        self.finalized = False

    def step(self, token: str) -> TraceRecord:
        if self.finalized:
            raise TodstepError("tracker already finalized")
        self.extractor.feed(token)
        new_tod = tod_reward(
            self.goal.sv_gt, self.extractor.sv_hat,
            self.goal.s_gt, self.extractor.s_hat, self.config,
        )
        record = TraceRecord(
            token=token,
            delta_tod=new_tod - self.cum_tod,
            cum_u=understanding_reward(
                self.goal.sv_gt, self.extractor.sv_hat, self.config.alpha_u
            ),
            cum_g=generation_reward(
                self.goal.s_gt, self.extractor.s_hat, self.config.alpha_g
            ),
            cum_tod=new_tod,
            region=self.extractor.region.name.lower(),
        )
        self.cum_u = record.cum_u
        self.cum_g = record.cum_g
        self.cum_tod = new_tod
        self.trace.append(record)
        return record

    def finalize(self) -> EpisodeSummary:
        self.finalized = True
        return EpisodeSummary(
            cum_u=self.cum_u,
            cum_g=self.cum_g,
            cum_tod=self.cum_tod,
            n_tokens=len(self.trace),
            malformed=self.extractor.malformed,
            halted=self.extractor.halted,
            sv_hat=frozenset(self.extractor.sv_hat),
            s_hat=frozenset(self.extractor.s_hat),
        )


def tracker_step(tracker: RewardTracker, token: str) -> tuple[RewardTracker, float]:
    """Feed one token; returns the tracker and the combined-reward delta."""
    record = tracker.step(token)
    return tracker, record.delta_tod


class AdaptiveKL:
    """Proportional controller for the KL penalty coefficient.

    Each update moves beta by at most a factor of 1 ± update_rate·clip,
    raising it when observed divergence overshoots the target and lowering
    it when divergence undershoots.
    """

    def __init__(
        self,
        beta: float = 0.01,
        target: float = 0.05,
        update_rate: float = 0.2,
        clip: float = 0.2,
    ):
        if beta <= 0 or target <= 0 or clip <= 0:
            raise ValueError("beta, target, clip must be positive")
        self.beta = beta
        self.target = target
        self.update_rate = update_rate
        self.clip = clip

    @classmethod
    def from_config(cls, config: RewardConfig) -> "AdaptiveKL":
        return cls(
            beta=config.kl_beta_init,
            target=config.kl_target,
            update_rate=config.kl_update_rate,
            clip=config.kl_clip,
        )

    def update(self, observed_kl: float) -> float:
        if observed_kl < 0:
            raise ValueError("observed_kl must be non-negative")
        error = (observed_kl - self.target) / self.target
        error = max(-self.clip, min(self.clip, error))
        self.beta = self.beta * (1.0 + self.update_rate * error)
        return self.beta


def kl_update(kl: AdaptiveKL, observed_kl: float) -> AdaptiveKL:
    kl.update(observed_kl)
    return kl


def shaped_step(
    delta: float, logprob_policy: float, logprob_ref: float, kl: AdaptiveKL
) -> float:
    """Per-token shaped reward: task delta minus beta times the log-ratio."""
    return delta - kl.beta * (logprob_policy - logprob_ref)
