"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python3 tests/test_acceptance.py``. Each test asserts its own runtime budget.
"""
from __future__ import annotations

import dataclasses
import itertools
import math
import random
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles
from medgrpo.config import load_run_config
from medgrpo.grpo import ClipConfig, GroupRollout, batch_objective, group_advantages, surrogate_terms
from medgrpo.judge import JudgeRequest, JudgeScores, JudgeUnavailableError, build_judge_prompt, mock_judge, parse_judge_response, render_scores
from medgrpo.metrics import BBox, DenseEvent, FrameTrack, TemporalInterval, box_iou, dvc_f1, match_events, mean_temporal_iou, stg_miou, temporal_iou
from medgrpo.normalization import PercentileStats, StatsTable, fit_percentile_stats, load_stats_table, normalize, normalize_derivative
from medgrpo.policy import ToyPolicy
from medgrpo.rewards import TaskSample, compose_grounding_reward, dispatch_reward
from medgrpo.simenv import build_environment, run_experiment
from medgrpo.tasks import TaskKind


@pytest.fixture
def report(capsys):
    """Print a verdict line that survives pytest's output capture."""

    def emit(n: int, ok: bool, elapsed: float, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail} ({elapsed:.2f}s)")

    return emit


class Check:
    """Collects failures instead of stopping at the first, so the verdict line is complete."""

    def __init__(self):
        self.failures: list[str] = []
        self.t0 = time.perf_counter()

    def that(self, cond, msg: str) -> None:
        if not cond:
            self.failures.append(msg)

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def finish(self, report, n: int, budget: float, detail: str) -> None:
        t = self.elapsed
        self.that(t < budget, f"runtime {t:.2f}s exceeds {budget}s")
        ok = not self.failures
        report(n, ok, t, detail if ok else f"{detail}; {len(self.failures)} failures, first: {self.failures[0]}")
        assert ok, self.failures[:5]


def test_criterion_1_median_fairness(report):
    c = Check()
    rng = np.random.default_rng(101)
    n = 0
    worst = 0.0
    while n < 1000:
        target = rng.uniform(0.05, 0.95)
        spread = rng.uniform(0.005, 0.2)
        xs = np.clip(rng.normal(target, spread, size=int(rng.integers(4, 200))), 0.0, 1.0)
        s = fit_percentile_stats(xs)
        if not 0.05 <= s.p50 <= 0.95:
            continue
        err = abs(normalize(s, s.p50) - 0.5)
        worst = max(worst, err)
        c.that(err <= 1e-12, f"p50={s.p50} gives {normalize(s, s.p50)}")
        n += 1
    c.finish(report, 1, 1.0, f"1000 fitted entries, max |r(p50) - 0.5| = {worst:.1e}")


def test_criterion_2_gradient(report):
    c = Check()
    rng = np.random.default_rng(102)
    worst = 0.0
    entries = 10
    for _ in range(entries):
        xs = rng.beta(rng.uniform(1, 10), rng.uniform(1, 10), size=200)
        s = fit_percentile_stats(xs)
        for u in rng.uniform(-4.0, 4.0, 100):
            x = s.p50 + u * s.iqr
            fd = oracles.central_difference(lambda v: normalize(s, v), x, 1e-3 * s.iqr)
            d = normalize_derivative(s, x)
            rel = abs(d - fd) / abs(fd)
            worst = max(worst, rel)
            c.that(rel <= 1e-6, f"x={x}: analytic {d} vs fd {fd}")
            c.that(d > 0, f"non-positive derivative at x={x}")
    c.finish(report, 2, 1.0, f"{entries} entries x 100 points, max rel err {worst:.1e}")


def test_criterion_3_format_penalty(report):
    c = Check()
    rng = random.Random(103)
    n = 0
    for _ in range(5000):
        p25 = rng.uniform(0, 0.5)
        p50 = p25 + rng.uniform(0, 0.3)
        entry = PercentileStats(p25, p50, p50 + rng.uniform(0, 0.3))
        x = rng.random()
        ok = compose_grounding_reward(entry, x, True).final
        bad = compose_grounding_reward(entry, x, False).final
        c.that(bad == 0.4 * ok, f"x={x}: {bad} != 0.4 * {ok}")
        n += 1
    # end to end through parsing: same (zero) content, one parseable and one not
    table = StatsTable({("d", TaskKind.TAG): PercentileStats(0.2, 0.35, 0.5), ("d", TaskKind.STG): PercentileStats(0.05, 0.1, 0.2)})
    for task, gt, miss in (
        ("TAG", (TemporalInterval(10, 20),), "30-40"),
        ("STG", FrameTrack({0: BBox(0, 0, 0.2, 0.2)}), "0: [0.5, 0.5, 0.9, 0.9]"),
    ):
        s = TaskSample("d", task, gt)
        good = dispatch_reward(s, miss, table)
        junk = dispatch_reward(s, "cannot tell", table)
        c.that(good.raw_content == junk.raw_content == 0.0, f"{task}: content differs")
        c.that(junk.final == 0.4 * good.final, f"{task}: {junk.final} != 0.4 * {good.final}")
        n += 1
    c.finish(report, 3, 1.0, f"{n} TAG/STG cases, invalid == 0.4 x valid exactly")


def test_criterion_4_advantages(report):
    c = Check()
    rng = np.random.default_rng(104)
    degenerate = 0
    for i in range(10_000):
        g = int(rng.integers(2, 17))
        if i % 10 == 0:
            r = np.full(g, rng.random())
        else:
            r = rng.random(g) * rng.choice([1e-3, 1.0, 1e3])
        adv = group_advantages(r)
        ref = oracles.pop_standardize(list(r))
        if float(np.std(r)) < 1e-8:
            degenerate += 1
            c.that(np.all(adv == 0.0), f"degenerate group gave {adv}")
            continue
        c.that(abs(adv.mean()) <= 1e-10, f"mean {adv.mean()}")
        c.that(abs(adv.std() - 1.0) <= 1e-8, f"std {adv.std()}")
        c.that(np.allclose(adv, ref, rtol=0, atol=1e-10), "oracle mismatch")
        a, b = rng.uniform(0.01, 100), rng.uniform(-10, 10)
        c.that(np.allclose(group_advantages(a * r + b), adv, rtol=0, atol=1e-10), f"affine a={a} b={b}")
    c.finish(report, 4, 5.0, f"10000 groups (G in [2, 16], {degenerate} degenerate)")


def _toy_batch(policy, old, contexts, rng, G=6):
    q_old = old.probs(contexts)
    out = []
    for i, ctx in enumerate(contexts):
        a = rng.choice(policy.num_actions, size=G, p=q_old[i]).astype(np.int64)
        lp = old.token_logprobs(ctx[None], a[None])[0]
        out.append(GroupRollout(f"p{i}", "d", TaskKind.STG, ctx, a, lp, policy.version).with_rewards(rng.random(G)))
    return out


def test_criterion_5_clipped_objective(report):
    c = Check()
    rng = np.random.default_rng(105)
    points = 0
    combos = [(lo, hi) for lo, hi in itertools.product((0.1, 0.2, 0.3), (0.2, 0.28, 0.3, 0.4)) if lo <= hi]
    for lo, hi in combos:
        rho = np.exp(rng.uniform(-1.5, 1.5, 12_000))
        adv = rng.normal(0, 2, 12_000)
        rho[:200] = 1 + hi
        rho[200:400] = 1 - lo
        adv[400:450] = 0.0
        terms, weights, _ = surrogate_terms(rho, adv, ClipConfig(lo, hi))
        for k in range(rho.size):
            bt, bw = oracles.surrogate_branches(float(rho[k]), float(adv[k]), 1.0 - lo, 1.0 + hi)
            if terms[k] != bt or weights[k] != bw:
                c.that(False, f"rho={rho[k]} A={adv[k]} eps=({lo},{hi})")
        points += rho.size
    c.that(points >= 100_000, f"only {points} grid points")

    worst = 0.0
    for seed in range(5):
        r = np.random.default_rng(seed)
        old = ToyPolicy.init(4, 5, r, scale=1.0)
        pol = ToyPolicy(old.weights + r.normal(0, 0.15, old.weights.shape))
        batch = _toy_batch(pol, old, r.normal(size=(3, 4)), r)
        clip = ClipConfig(0.2, 0.28)
        _, grad, _, _ = batch_objective(pol.weights, pol, batch, clip)
        W = pol.weights
        fd = np.zeros_like(W)
        h = 1e-6
        for idx in np.ndindex(W.shape):
            Wp, Wm = W.copy(), W.copy()
            Wp[idx] += h
            Wm[idx] -= h
            fd[idx] = (batch_objective(Wp, pol, batch, clip)[0] - batch_objective(Wm, pol, batch, clip)[0]) / (2 * h)
        scale = np.abs(grad).max()
        err = float(np.max(np.abs(grad - fd) / (np.abs(fd) + scale)))
        worst = max(worst, err)
        c.that(np.allclose(grad, fd, rtol=1e-5, atol=1e-5 * scale), f"gradient mismatch seed {seed}")
    c.finish(report, 5, 10.0, f"{points} grid points exact; 3-context/5-action gradient max rel err {worst:.1e}")


def _rand_interval(rng, grid=8, span=40):
    a, b = sorted(rng.randint(0, span * grid) for _ in range(2))
    return (a / grid, b / grid)


def _rand_box(rng, grid=16):
    x1, x2 = sorted(rng.randint(0, grid) for _ in range(2))
    y1, y2 = sorted(rng.randint(0, grid) for _ in range(2))
    return (x1 / grid, y1 / grid, x2 / grid, y2 / grid)


def test_criterion_6_metrics(report):
    c = Check()
    rng = random.Random(106)
    iv = TemporalInterval
    for _ in range(1000):
        a, b = _rand_interval(rng), _rand_interval(rng)
        c.that(temporal_iou(iv(*a), iv(*b)) == float(oracles.interval_iou(a, b)), f"temporal_iou {a} {b}")
    for _ in range(1000):
        a, b = _rand_box(rng), _rand_box(rng)
        c.that(box_iou(BBox(*a), BBox(*b)) == float(oracles.rect_iou(a, b)), f"box_iou {a} {b}")
    for _ in range(1000):
        gt = {f: _rand_box(rng) for f in rng.sample(range(40), rng.randint(1, 20))}
        pred = {f: _rand_box(rng) for f in rng.sample(range(40), rng.randint(0, 20))}
        got = stg_miou(FrameTrack({f: BBox(*x) for f, x in pred.items()}), FrameTrack({f: BBox(*x) for f, x in gt.items()}))
        c.that(got == oracles.track_miou(pred, dict(sorted(gt.items()))), "stg_miou")
    for _ in range(1000):
        n = rng.randint(1, 20)
        ps = [_rand_interval(rng) for _ in range(n)]
        gs = [_rand_interval(rng) for _ in range(n)]
        got = mean_temporal_iou([iv(*p) for p in ps], [iv(*g) for g in gs])
        c.that(got == oracles.mean_of(oracles.interval_iou(p, g) for p, g in zip(ps, gs)), "mean_temporal_iou")
    for _ in range(1000):
        pred = [_rand_interval(rng, grid=2, span=20) for _ in range(rng.randint(0, 6))]
        gt = [_rand_interval(rng, grid=2, span=20) for _ in range(rng.randint(0, 6))]
        thr = rng.choice([0.3, 0.5, 0.7, 1.0])
        pe = [DenseEvent(iv(*p), "e") for p in pred]
        ge = [DenseEvent(iv(*g), "e") for g in gt]
        tp = oracles.greedy_match_count(pred, gt, Fraction(thr).limit_denominator(10))
        c.that(len(match_events(pe, ge, thr)) == tp, "dvc match count")
        c.that(dvc_f1(pe, ge, thr) == oracles.f1_counts(tp, len(pred), len(gt)), "dvc_f1")
    c.finish(report, 6, 10.0, "5 metrics x 1000 instances match brute-force oracles")


ANCHORS = (
    "medical terms match reference precisely",
    "all instruments and anatomy match reference identifications",
    "specificity level matches reference",
    "procedural context matches reference",
    "all actions and states match reference",
)
DIMENSION_NAMES = (
    "Medical Terminology Precision",
    "Instrument and Anatomy Identification",
    "Specificity vs Vagueness",
    "Clinical Procedure Context",
    "Action and State Accuracy",
)


def test_criterion_7_judge(report):
    c = Check()
    n = 0
    for combo in itertools.product(range(1, 6), repeat=5):
        s = JudgeScores(*combo)
        c.that(parse_judge_response(render_scores(s)) == s, f"roundtrip {combo}")
        n += 1
    for task in ("RC", "VS"):
        p = build_judge_prompt(JudgeRequest("grasper retracts gallbladder", "grasper holds gallbladder", task))
        for text in DIMENSION_NAMES + ANCHORS:
            c.that(text in p, f"{task} prompt lacks {text!r}")
    c.finish(report, 7, 5.0, f"{n} score vectors round-trip; 5 dimensions and 5 anchors present")


def _run_seed(cfg, env, stats, seed):
    train = dataclasses.replace(cfg.train, seed=seed)
    raw = run_experiment(env, train, "raw", stats=stats)
    norm = run_experiment(env, train, "normalized", stats=stats)
    return raw.summary(), norm.summary()


@pytest.mark.slow
def test_criterion_8_collapse_vs_stability(report):
    c = Check()
    cfg = load_run_config("two_dataset")
    env = build_environment(cfg.environment.datasets, cfg.environment.seed, cfg.environment.num_actions)
    stats = load_stats_table(cfg.stats_path)
    hard = min(env.dataset_ids, key=lambda d: env.spec(d).median)
    c.that(cfg.train.gradient_steps == 2000, f"bundled config runs {cfg.train.gradient_steps} steps")
    lines = []
    for seed in range(5):
        raw, norm = _run_seed(cfg, env, stats, seed)
        d_norm = norm["greedy_improvement"][hard]
        d_raw = raw["greedy_improvement"][hard]
        v_raw, v_norm = raw["entropy"]["variance"], norm["entropy"]["variance"]
        c.that(d_norm >= 0.05, f"seed {seed}: normalized hard improvement {d_norm:.4f} < 0.05")
        c.that(d_raw < d_norm, f"seed {seed}: raw improvement {d_raw:.4f} >= normalized {d_norm:.4f}")
        c.that(v_raw > v_norm, f"seed {seed}: raw entropy variance {v_raw:.4f} <= normalized {v_norm:.4f}")
        lines.append(f"seed {seed}: hard +{d_norm:.4f} (norm) vs +{d_raw:.4f} (raw); entropy var {v_norm:.4f} vs {v_raw:.4f}")
    for line in lines:
        print(line)
    c.finish(report, 8, 120.0, "5 seeds x paired 2000-step runs: " + " | ".join(lines))


def test_criterion_9_hybrid_caption(report):
    c = Check()
    sim = PercentileStats(0.2, 0.4, 0.6)
    judge = PercentileStats(2.0, 3.0, 4.0)
    table = StatsTable({
        ("d", TaskKind.RC, "similarity"): sim, ("d", TaskKind.RC, "judge"): judge,
        ("d", TaskKind.VS, "similarity"): sim, ("d", TaskKind.VS, "judge"): judge,
    })
    vocab = "grasper hook clip cut dissect gallbladder cystic duct artery liver retract coagulate fat tissue".split()
    rng = random.Random(109)

    def cos(a, b):
        from collections import Counter

        ca, cb = Counter(a.split()), Counter(b.split())
        dot = sum(v * cb[t] for t, v in ca.items())
        return dot / (math.sqrt(sum(v * v for v in ca.values())) * math.sqrt(sum(v * v for v in cb.values())))

    def down(req):
        raise JudgeUnavailableError("endpoint down")

    for _ in range(100):
        gen = " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 10)))
        ref = " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 10)))
        s = TaskSample("d", rng.choice(["RC", "VS"]), ref)
        s_bar = sum(mock_judge(JudgeRequest(gen, ref)).as_tuple()) / 5
        expected = 0.5 * normalize(sim, cos(gen, ref)) + 0.5 * normalize(judge, s_bar)
        got = dispatch_reward(s, gen, table, judge=mock_judge)
        c.that(got.final == expected, f"{gen!r} vs {ref!r}: {got.final} != {expected}")
        fb = dispatch_reward(s, gen, table, judge=down)
        c.that(fb.judge_fallback and fb.final == normalize(sim, cos(gen, ref)), "fallback is not similarity-only")
    c.finish(report, 9, 5.0, "100 caption pairs equal the hand-computed average; fallback uses similarity only")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
