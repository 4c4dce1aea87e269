"""Acceptance gate.

Each test prints one PASS/FAIL line on the real stdout so the run log
shows the whole scorecard even under output capture.  Criteria 8 to 10
share one session-scoped set of RL runs; everything is seeded, so the
numbers in the printed lines are reproducible run to run.
"""

from __future__ import annotations

import math
import random
import time

import numpy as np
import pytest

import todstep
from todstep import (
    AdaptiveKL,
    GenConfig,
    RewardConfig,
    RewardTracker,
    TrainConfig,
    TurnGoal,
    build_database,
    collect_rollouts,
    combined_score,
    evaluate_corpus,
    evaluate_snapshot,
    generate_corpus,
    ppo_update,
    sft_train,
    toy_schema,
    train,
)
from todstep.envgen import dialogue_to_eval, gold_output
from todstep.linearizer import ExtractorState, tokens_of
from todstep.policy import clone_snapshot, distribution_from_features, iter_teacher_steps, nll_of, softmax
from todstep.trainer import REWARD_MODES

# Success threshold for the dense-vs-sparse sample-efficiency comparison
# (criterion 9), registered before measuring: the supervised starting point
# sits near 52 dev Success and converged dense runs plateau in the high 80s,
# so the bar asks for a level past every transient early spike.
SUCCESS_THRESHOLD = 88.0
RL_SEEDS = (0, 1, 2, 3, 4)


def _report(capsys, number, ok, detail):
    line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    with capsys.disabled():
        print(flush=True)
        print(line, flush=True)
    assert ok, line


# --- 1: closed-form rewards against a brute-force set oracle ---------------


def _brute_channel(gt, pred, alpha):
    gt, pred = set(gt), set(pred)
    if not gt:
        return 1.0
    hit = len(gt & pred)
    miss = len(gt - pred)
    return hit * math.exp(-alpha * miss / len(gt)) / len(gt)


def _brute_tod(sv_gt, sv_hat, s_gt, s_hat, alpha_u, alpha_g):
    sv_gt, sv_hat = set(sv_gt), set(sv_hat)
    s_gt, s_hat = set(s_gt), set(s_hat)
    denom = len(sv_gt) + len(s_gt)
    if denom == 0:
        return 0.0
    rho_u = math.exp(-alpha_u * len(sv_gt - sv_hat) / len(sv_gt)) if sv_gt else 0.0
    rho_g = math.exp(-alpha_g * len(s_gt - s_hat) / len(s_gt)) if s_gt else 0.0
    return (len(sv_gt & sv_hat) * rho_u + len(s_gt & s_hat) * rho_g) / denom


def test_criterion_1_reward_oracle(capsys):
    rng = random.Random(11)
    triples = [(f"d{i}", f"s{j}", f"v{k}") for i in range(3) for j in range(3) for k in range(2)]
    pairs = [(f"d{i}", f"s{j}") for i in range(3) for j in range(4)]
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(10_000):
        sv_gt = frozenset(rng.sample(triples, rng.randrange(0, 7)))
        sv_hat = frozenset(rng.sample(triples, rng.randrange(0, 7)))
        s_gt = frozenset(rng.sample(pairs, rng.randrange(0, 5)))
        s_hat = frozenset(rng.sample(pairs, rng.randrange(0, 5)))
        alpha_u = rng.uniform(0.0, 4.0)
        alpha_g = rng.uniform(0.0, 4.0)
        worst = max(worst, abs(
            todstep.understanding_reward(sv_gt, sv_hat, alpha_u)
            - _brute_channel(sv_gt, sv_hat, alpha_u)))
        worst = max(worst, abs(
            todstep.generation_reward(s_gt, s_hat, alpha_g)
            - _brute_channel(s_gt, s_hat, alpha_g)))
        cfg = RewardConfig(alpha_u=alpha_u, alpha_g=alpha_g)
        worst = max(worst, abs(
            todstep.tod_reward(sv_gt, sv_hat, s_gt, s_hat, cfg)
            - _brute_tod(sv_gt, sv_hat, s_gt, s_hat, alpha_u, alpha_g)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 5.0
    _report(capsys, 1, ok,
            f"reward formulas vs brute-force oracle, 10^4 pairs, "
            f"max diff {worst:.2e} <= 1e-12, {elapsed:.2f}s < 5s")


# --- 2: streamed deltas telescope to the batch reward ----------------------


def test_criterion_2_incremental_batch(capsys, schema):
    rng = random.Random(23)
    pool = tokens_of(
        "<sos_b> <eos_b> <sos_a> <eos_a> <sos_r> <eos_r> <sos_b> <eos_r> "
        "[hotel] [restaurant] [attraction] [inform] [offer] [request] "
        "stars three four area north south price cheap expensive food "
        "[value_phone] [value_address] [value_postcode] [value_name] the is um"
    )
    triples = [("hotel", "stars", "three"), ("hotel", "area", "north"),
               ("restaurant", "price", "cheap"), ("attraction", "area", "south")]
    pairs = [("hotel", "phone"), ("hotel", "address"), ("restaurant", "phone")]
    worst = 0.0
    malformed_seen = 0
    t0 = time.perf_counter()
    for _ in range(1000):
        goal = TurnGoal(
            sv_gt=frozenset(rng.sample(triples, rng.randrange(0, 4))),
            s_gt=frozenset(rng.sample(pairs, rng.randrange(0, 3))),
        )
        stream = [rng.choice(pool) for _ in range(rng.randrange(1, 40))]
        tracker = RewardTracker(goal, schema)
        summed = 0.0
        for token in stream:
            summed += tracker.step(token).delta_tod
        # independent batch pass: extract final sets, apply the closed form
        extractor = ExtractorState(schema)
        extractor.feed_all(stream)
        malformed_seen += extractor.malformed
        batch = todstep.tod_reward(
            goal.sv_gt, extractor.sv_hat, goal.s_gt, extractor.s_hat, RewardConfig()
        )
        worst = max(worst, abs(summed - batch))
        worst = max(worst, abs(summed - tracker.finalize().cum_tod))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 10.0 and malformed_seen > 0
    _report(capsys, 2, ok,
            f"sum of streamed deltas vs batch reward, 10^3 streams "
            f"({malformed_seen} malformed), max diff {worst:.2e} <= 1e-9, "
            f"{elapsed:.2f}s < 10s")


# --- 3: plateau structure of the cumulative reward on gold turns -----------


def test_criterion_3_plateaus(capsys, schema, db):
    corpus = generate_corpus(GenConfig(seed=2, n_dialogues=25), schema, db)
    checked = 0
    for dialogue in corpus.train:
        for index, turn in enumerate(dialogue.turns):
            goal = todstep.derive_turn_goal(
                {"belief": turn.belief, "requested": turn.requested}, schema
            )
            tracker = RewardTracker(goal, schema)
            shadow = ExtractorState(schema)
            tokens = tokens_of(gold_output(turn, schema))
            last = 0.0
            for token in tokens:
                record = tracker.step(token)
                completed = [
                    item for item in shadow.feed(token)
                    if item in goal.sv_gt or item in goal.s_gt
                ]
                if completed:
                    assert record.delta_tod > 0.0, (token, completed)
                else:
                    assert record.delta_tod == 0.0, (token, record.delta_tod)
                assert record.cum_tod >= last
                last = record.cum_tod
            assert last == pytest.approx(1.0, abs=1e-12), (dialogue, index)
            checked += 1
    _report(capsys, 3, True,
            f"cumulative reward on {checked} gold turns: non-decreasing, "
            f"deltas only at goal-item completions, each plateau ends at 1.0")


# --- 4: gold predictions score perfectly -----------------------------------


def test_criterion_4_gold_self_consistency(capsys):
    results = []
    for acts in (True, False):
        schema = toy_schema(acts=acts)
        db = build_database(schema)
        corpus = generate_corpus(GenConfig(seed=3, n_dialogues=40), schema, db)
        evals = [dialogue_to_eval(d, schema) for d in corpus.train]
        report = evaluate_corpus(evals, db)
        results.append(report)
    ok = all(
        r.inform == 100.0 and r.success == 100.0 and r.match == 100.0
        and r.succ_f1 == 1.0 and r.bleu == 100.0 and r.combined == 200.0
        for r in results
    )
    _report(capsys, 4, ok,
            "gold-vs-gold scoring, both annotation modes: "
            + "; ".join(
                f"{r.mode} inform {r.inform} success {r.success} match {r.match} "
                f"f1 {r.succ_f1} bleu {r.bleu} combined {r.combined}"
                for r in results
            ))


# --- 5: published combined-score arithmetic --------------------------------


def test_criterion_5_combined_arithmetic(capsys):
    woz = combined_score(96.1, 92.4, 0.0, 0.0, 17.2, "multiwoz")
    incar = combined_score(0.0, 0.0, 86.2, 0.861, 23.0, "incar")
    ok = abs(woz - 111.5) <= 0.05 and abs(incar - 109.2) <= 0.05
    _report(capsys, 5, ok,
            f"combined-score rows: multiwoz {woz:.2f} within 0.05 of 111.5, "
            f"in-car {incar:.2f} within 0.05 of 109.2")


# --- 6: analytic gradients against central finite differences --------------


def _fd_check(loss, weights, grad, coords, h=1e-5):
    worst = 0.0
    for i in coords:
        w_plus = weights.copy(); w_plus[i] += h
        w_minus = weights.copy(); w_minus[i] -= h
        fd = (loss(w_plus) - loss(w_minus)) / (2 * h)
        denom = max(abs(grad[i]), 1e-8)
        worst = max(worst, abs(fd - grad[i]) / denom)
    return worst


def test_criterion_6_gradient_checks(capsys, schema, db):
    corpus = generate_corpus(GenConfig(seed=4, n_dialogues=3), schema, db)
    dialogues = corpus.train
    base, _ = sft_train(dialogues, schema, epochs=1, learning_rate=0.05, bits=12)
    weights = base.policy_weights.copy()

    # supervised loss: total NLL of the gold outputs
    analytic = np.zeros_like(weights)
    n_vocab = len(base.vocab)
    for feats, target in iter_teacher_steps(base.vocab, base.bits, dialogues, schema):
        probs = distribution_from_features(weights, feats)
        coefs = probs.copy()
        coefs[target] -= 1.0
        np.add.at(analytic, feats.reshape(-1), np.repeat(coefs, feats.shape[1]))
    assert feats.shape == (n_vocab, 7)

    def sft_loss(w):
        snap = todstep.policy.with_weights(base, w, base.value_weights)
        return nll_of(snap, dialogues, schema)

    touched = np.argsort(-np.abs(analytic))[:8]
    sft_err = _fd_check(sft_loss, weights, analytic, touched)

    # PPO clipped surrogate: one full-batch epoch equals lr * gradient
    cfg = TrainConfig(episodes=6, batch_size=6, epochs_per_batch=1,
                      learning_rate=1.0, value_learning_rate=0.0, seed=0)
    batch = collect_rollouts(base, clone_snapshot(base), dialogues, schema,
                             RewardConfig(), cfg, 6, np.random.default_rng(0), beta=0.01)
    updated, _ = ppo_update(base, batch, cfg)
    ppo_grad = (updated.policy_weights - weights) / cfg.learning_rate

    eps = cfg.clip_epsilon

    def surrogate(w):
        total = 0.0
        for ep in batch.episodes:
            for step, adv in zip(ep.steps, ep.advantages):
                scores = w[step.feats_kept].sum(axis=1)
                p = softmax(scores)[step.kept_index]
                ratio = p / math.exp(step.logprob)
                total += min(ratio * adv, float(np.clip(ratio, 1 - eps, 1 + eps)) * adv)
        return total / batch.n_steps

    touched = np.argsort(-np.abs(ppo_grad))[:8]
    # the update ascends the surrogate, so flip the sign for the loss view
    ppo_err = _fd_check(lambda w: -surrogate(w), weights, -ppo_grad, touched)

    ok = sft_err < 1e-4 and ppo_err < 1e-4
    _report(capsys, 6, ok,
            f"finite-difference checks: supervised NLL rel err {sft_err:.2e}, "
            f"clipped-surrogate rel err {ppo_err:.2e}, both < 1e-4")


# --- 7: adaptive KL controller ---------------------------------------------


def test_criterion_7_adaptive_kl(capsys):
    rng = random.Random(5)
    worst_ratio = (1.0, 1.0)
    for _ in range(500):
        kl = AdaptiveKL()
        before = kl.beta
        kl.update(rng.uniform(0.0, 1.0))
        ratio = kl.beta / before
        worst_ratio = (min(worst_ratio[0], ratio), max(worst_ratio[1], ratio))
    single_ok = worst_ratio[0] >= 0.96 - 1e-12 and worst_ratio[1] <= 1.04 + 1e-12

    # drift simulation: observed KL responds inversely to the coefficient,
    # starting an order of magnitude above target
    kl = AdaptiveKL()
    settle = None
    observed = None
    for step in range(1, 201):
        observed = 0.005 / kl.beta
        kl.update(observed)
        if abs(observed - kl.target) <= 0.2 * kl.target:
            settle = step
            break
    drift_ok = settle is not None
    ok = single_ok and drift_ok
    _report(capsys, 7, ok,
            f"single-step beta ratio within [0.96, 1.04] "
            f"(saw [{worst_ratio[0]:.4f}, {worst_ratio[1]:.4f}]); drift reached "
            f"20% of target at update {settle} (< 200), observed {observed:.4f}")


# --- 8 to 10: shared RL runs -----------------------------------------------


@pytest.fixture(scope="session")
def rl_runs():
    """Train all reward-mode arms once on the default toy corpus.

    Dense and sparse arms carry a periodic dev evaluation for the
    sample-efficiency comparison; the two ablation arms only need final
    test scores.  Evaluation never touches the training RNG stream, so
    final snapshots are identical with or without the eval grid.
    """
    schema = toy_schema(acts=False)
    db = build_database(schema)
    t0 = time.perf_counter()
    corpus = generate_corpus(GenConfig(seed=0), schema, db)
    snapshot, _ = sft_train(corpus.train, schema, epochs=1, learning_rate=0.02)
    sft_report = evaluate_snapshot(snapshot, corpus.test, db)

    runs = {mode: [] for mode in REWARD_MODES}
    full_arm_time = None
    for mode in ("full", "sparse_terminal", "generation_only", "understanding_only"):
        for seed in RL_SEEDS:
            kwargs = {"reward_mode": mode, "seed": seed}
            if mode in ("full", "sparse_terminal"):
                kwargs.update(eval_every=125, eval_dialogues=62)
            result = train(TrainConfig(**kwargs), corpus, db, snapshot)
            report = evaluate_snapshot(result.snapshot, corpus.test, db)
            runs[mode].append((result.logs, report))
        if mode == "full":
            full_arm_time = time.perf_counter() - t0
    return {
        "sft": sft_report,
        "runs": runs,
        "full_arm_time": full_arm_time,
        "total_time": time.perf_counter() - t0,
    }


def test_criterion_8_rl_improvement(capsys, rl_runs):
    base = rl_runs["sft"].combined
    finals = [report.combined for _, report in rl_runs["runs"]["full"]]
    gain = float(np.mean(finals)) - base
    elapsed = rl_runs["full_arm_time"]
    ok = gain >= 5.0 and elapsed < 600.0
    _report(capsys, 8, ok,
            f"test combined over supervised baseline {base:.2f}: "
            f"seeds {[round(f, 1) for f in finals]}, mean gain {gain:+.2f} >= 5; "
            f"corpus+supervised+5 runs in {elapsed:.0f}s < 600s")


def _first_crossing(logs):
    for row in logs:
        if row["success"] >= SUCCESS_THRESHOLD:
            return row["episode"]
    return None


def test_criterion_9_dense_vs_sparse(capsys, rl_runs):
    dense = [_first_crossing(logs) for logs, _ in rl_runs["runs"]["full"]]
    sparse = [_first_crossing(logs) for logs, _ in rl_runs["runs"]["sparse_terminal"]]
    wins = 0
    for d, s in zip(dense, sparse):
        if d is not None and (s is None or d < s):
            wins += 1
    ok = wins >= 4
    _report(capsys, 9, ok,
            f"episodes to dev Success >= {SUCCESS_THRESHOLD:.0f}: "
            f"dense {dense} vs sparse {sparse}, dense earlier in {wins}/5 pairs (need 4)")


def test_criterion_10_ablation_direction(capsys, rl_runs):
    means = {
        mode: float(np.mean([report.combined for _, report in rl_runs["runs"][mode]]))
        for mode in ("full", "generation_only", "understanding_only")
    }
    margin_no_ru = means["full"] - means["generation_only"]
    margin_no_rg = means["full"] - means["understanding_only"]
    ok = margin_no_ru > 0.0 and margin_no_rg > 0.0
    _report(capsys, 10, ok,
            f"mean test combined: full {means['full']:.2f} vs "
            f"understanding channel removed {means['generation_only']:.2f} "
            f"(margin {margin_no_ru:+.2f}) and generation channel removed "
            f"{means['understanding_only']:.2f} (margin {margin_no_rg:+.2f}); "
            f"all 20 runs took {rl_runs['total_time']:.0f}s")
