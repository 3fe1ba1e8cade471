"""Synthetic multi-dataset environment for raw-vs-normalized reward ablations.

Each prompt offers K candidate answers whose latent content scores are drawn
from a per-dataset Beta distribution with a chosen median. The policy is a
linear softmax over the candidates; a candidate is emitted as a short bit-token
sequence so the token-level clipped objective is exercised.

Observed scores are the latent score plus optional Gaussian jitter, and with
probability ``outlier_rate`` a lucky-hit outlier drawn uniformly from
``outlier_range`` (a metric that occasionally rewards a poor answer, e.g. an
IoU that happens to land on the right frames). Group standardization removes
any per-dataset scale, so the two reward modes differ only in how they treat
these heavy-tailed observations.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize, stats as sps

from . import kernels
from .grpo import GroupRollout, TrainConfig, train_step
from .normalization import DEFAULT_IQR_FLOOR, DEFAULT_K, StatsTable, fit_percentile_stats
from .policy import ToyPolicy, code_depth, top_p_sample
from .rewards import grounding_rewards_array
from .tasks import TaskKind

DEFAULT_NUM_ACTIONS = 16
MODES = ("raw", "normalized")

STEP_COLUMNS = (
    "step", "dataset_id", "greedy_score", "mean_raw_reward", "mean_norm_reward",
    "positive_advantage_fraction", "entropy", "clipped_fraction",
)


class EnvSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    dataset_id: str
    task: TaskKind = TaskKind.STG
    median: float = 0.5
    concentration: float = 10.0
    noise_scale: float = 0.0
    num_prompts: int = 128
    outlier_rate: float = 0.0
    outlier_range: tuple[float, float] = (0.4, 1.0)

    def __post_init__(self):
        if not self.dataset_id:
            raise EnvSpecError("dataset_id must be non-empty")
        try:
            task = TaskKind.parse(self.task)
        except ValueError as exc:
            raise EnvSpecError(str(exc)) from None
        if not task.is_grounding:
            raise EnvSpecError(f"{self.dataset_id}: synthetic datasets support grounding tasks only, got {task.value}")
        object.__setattr__(self, "task", task)
        if not 0 < self.median < 1:
            raise EnvSpecError(f"{self.dataset_id}: median must be in (0, 1), got {self.median}")
        if not self.concentration > 2:
            raise EnvSpecError(f"{self.dataset_id}: concentration must exceed 2, got {self.concentration}")
        if not self.noise_scale >= 0:
            raise EnvSpecError(f"{self.dataset_id}: noise_scale must be >= 0, got {self.noise_scale}")
        if int(self.num_prompts) != self.num_prompts or self.num_prompts < 1:
            raise EnvSpecError(f"{self.dataset_id}: num_prompts must be a positive integer, got {self.num_prompts}")
        if not 0 <= self.outlier_rate <= 1:
            raise EnvSpecError(f"{self.dataset_id}: outlier_rate must be in [0, 1], got {self.outlier_rate}")
        lo, hi = (float(v) for v in self.outlier_range)
        if not 0 <= lo <= hi <= 1:
            raise EnvSpecError(f"{self.dataset_id}: outlier_range must satisfy 0 <= lo <= hi <= 1")
        object.__setattr__(self, "outlier_range", (lo, hi))

    def beta_params(self) -> tuple[float, float]:
        """(a, b) with a + b = concentration and the requested median."""
        c = self.concentration
        a = optimize.brentq(lambda a: sps.beta.median(a, c - a) - self.median, 1e-6, c - 1e-6, xtol=1e-12)
        return a, c - a


@dataclass(frozen=True)
class SyntheticPrompt:
    prompt_id: str
    dataset_id: str
    task: TaskKind
    index: int
    context: np.ndarray
    candidates: tuple[tuple[int, ...], ...]
    scores: np.ndarray
    ground_truth: int


@dataclass(frozen=True)
class Environment:
    specs: tuple[SyntheticDatasetSpec, ...]
    seed: int
    num_actions: int
    scores: np.ndarray  # (num_prompts_total, K) latent content scores
    dataset_index: np.ndarray  # (num_prompts_total,) index into specs
    contexts: np.ndarray  # (num_prompts_total, num_features)

    @property
    def num_prompts(self) -> int:
        return len(self.scores)

    @property
    def dataset_ids(self) -> tuple[str, ...]:
        return tuple(s.dataset_id for s in self.specs)

    @property
    def depth(self) -> int:
        return code_depth(self.num_actions)

    def spec(self, dataset_id: str) -> SyntheticDatasetSpec:
        for s in self.specs:
            if s.dataset_id == dataset_id:
                return s
        raise KeyError(dataset_id)

    def prompt_ids(self, dataset_id: str) -> np.ndarray:
        return np.flatnonzero(self.dataset_index == self.dataset_ids.index(dataset_id))

    def prompt(self, i: int) -> SyntheticPrompt:
        spec = self.specs[self.dataset_index[i]]
        d = self.depth
        cands = tuple(tuple((a >> (d - 1 - t)) & 1 for t in range(d)) for a in range(self.num_actions))
        return SyntheticPrompt(
            prompt_id=f"{spec.dataset_id}/{i}",
            dataset_id=spec.dataset_id,
            task=spec.task,
            index=int(i),
            context=self.contexts[i],
            candidates=cands,
            scores=self.scores[i],
            ground_truth=int(self.scores[i].argmax()),
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.scores, self.dataset_index, self.contexts):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("policy", "rollout", "observe", "baseline")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def build_environment(
    specs: Sequence[SyntheticDatasetSpec], seed: int, num_actions: int = DEFAULT_NUM_ACTIONS
) -> Environment:
    specs = tuple(specs)
    if not specs:
        raise EnvSpecError("at least one dataset spec is required")
    ids = [s.dataset_id for s in specs]
    if len(set(ids)) != len(ids):
        raise EnvSpecError(f"duplicate dataset ids: {sorted({i for i in ids if ids.count(i) > 1})}")
    if num_actions < 2:
        raise EnvSpecError(f"num_actions must be >= 2, got {num_actions}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    blocks, idx = [], []
    for j, spec in enumerate(specs):
        a, b = spec.beta_params()
        s = rng.beta(a, b, size=(spec.num_prompts, num_actions))
        # redraw rows whose maximum is shared so the ground truth is unique
        while True:
            top = np.sort(s, axis=1)[:, -2:]
            tied = top[:, 0] == top[:, 1]
            if not tied.any():
                break
            s[tied] = rng.beta(a, b, size=(int(tied.sum()), num_actions))
        blocks.append(s)
        idx.append(np.full(spec.num_prompts, j))
    scores = np.vstack(blocks)
    scores.setflags(write=False)
    n = len(scores)
    contexts = np.eye(n)
    contexts.setflags(write=False)
    dataset_index = np.concatenate(idx)
    dataset_index.setflags(write=False)
    return Environment(specs, int(seed), int(num_actions), scores, dataset_index, contexts)


def init_policy(env: Environment, cfg: TrainConfig, scale: float = 0.1) -> ToyPolicy:
    return ToyPolicy.init(
        env.contexts.shape[1], env.num_actions, _streams(cfg.seed)["policy"], scale=scale,
        temperature=cfg.temperature, top_p=cfg.top_p,
    )


def rollout_group(env: Environment, policy: ToyPolicy, prompt: SyntheticPrompt | int, G: int, rng) -> GroupRollout:
    p = prompt if isinstance(prompt, SyntheticPrompt) else env.prompt(int(prompt))
    if not 0 <= p.index < env.num_prompts or env.dataset_ids[env.dataset_index[p.index]] != p.dataset_id:
        raise KeyError(f"prompt {p.prompt_id} does not belong to this environment")
    return _rollout_batch(env, policy, np.array([p.index]), G, rng)[0]


def _rollout_batch(env: Environment, policy: ToyPolicy, idx: np.ndarray, G: int, rng) -> list[GroupRollout]:
    ctx = env.contexts[idx]
    q = policy.probs(ctx)
    actions = top_p_sample(q, policy.top_p, G, rng).astype(np.int64)
    logp = kernels.token_logprobs(q, actions, policy.depth)
    out = []
    for b, i in enumerate(idx):
        spec = env.specs[env.dataset_index[i]]
        out.append(GroupRollout(
            prompt_id=f"{spec.dataset_id}/{i}", dataset_id=spec.dataset_id, task=spec.task,
            context=ctx[b], actions=actions[b], logp_old=logp[b], policy_version=policy.version,
        ))
    return out


def _prompt_index(rollout: GroupRollout) -> int:
    return int(rollout.prompt_id.rsplit("/", 1)[1])


def observe_scores(env: Environment, prompt_index: int, actions: np.ndarray, rng) -> np.ndarray:
    """Noisy observed content scores for ``actions`` on one prompt, clipped to [0, 1]."""
    spec = env.specs[env.dataset_index[prompt_index]]
    x = env.scores[prompt_index, actions].astype(np.float64)
    if spec.noise_scale > 0:
        x = x + rng.normal(0.0, spec.noise_scale, size=x.shape)
    if spec.outlier_rate > 0:
        hit = rng.random(x.shape) < spec.outlier_rate
        lo, hi = spec.outlier_range
        x = np.where(hit, rng.uniform(lo, hi, size=x.shape), x)
    return np.clip(x, 0.0, 1.0)


def rewards_for(env: Environment, dataset_id: str, raw: np.ndarray, mode: str, stats: StatsTable | None) -> np.ndarray:
    if mode == "raw":
        return np.asarray(raw, dtype=np.float64)
    if mode != "normalized":
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if stats is None:
        raise ValueError("normalized mode requires a stats table")
    entry = stats.get(dataset_id, env.spec(dataset_id).task)
    _, final = grounding_rewards_array(entry, raw, valid=True)
    return final


def score_rollout(env: Environment, rollout: GroupRollout, mode: str, stats: StatsTable | None, rng) -> GroupRollout:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "normalized" and stats is None:
        raise ValueError("normalized mode requires a stats table")
    raw = observe_scores(env, _prompt_index(rollout), rollout.actions, rng)
    return rollout.with_rewards(rewards_for(env, rollout.dataset_id, raw, mode, stats), raw)


def baseline_scores(env: Environment, policy: ToyPolicy, G: int, rng) -> list[tuple[str, TaskKind, float]]:
    """Observed scores of ``G`` samples per prompt from ``policy``, as (dataset, task, score) rows."""
    rows = []
    groups = _rollout_batch(env, policy, np.arange(env.num_prompts), G, rng)
    for g in groups:
        i = _prompt_index(g)
        for x in observe_scores(env, i, g.actions, rng):
            rows.append((g.dataset_id, g.task, float(x)))
    return rows


def fit_baseline_stats(
    env: Environment, cfg: TrainConfig, k: float = DEFAULT_K, iqr_floor: float = DEFAULT_IQR_FLOOR
) -> StatsTable:
    """Percentile stats from the step-0 policy's observed scores, one entry per dataset."""
    rng = _streams(cfg.seed)["baseline"]
    rows = baseline_scores(env, init_policy(env, cfg), cfg.group_size, rng)
    entries = {}
    for ds in env.dataset_ids:
        xs = [x for d, _, x in rows if d == ds]
        entries[(ds, env.spec(ds).task)] = fit_percentile_stats(xs, k=k, iqr_floor=iqr_floor)
    return StatsTable(entries, k=k)


def greedy_scores(env: Environment, policy: ToyPolicy) -> dict[str, float]:
    """Mean latent content score of the policy's greedy candidate, per dataset."""
    pick = policy.greedy(env.contexts)
    got = env.scores[np.arange(env.num_prompts), pick]
    return {ds: float(got[env.dataset_index == j].mean()) for j, ds in enumerate(env.dataset_ids)}


@dataclass
class RunReport:
    mode: str
    seed: int
    steps: int
    dataset_ids: tuple[str, ...]
    initial_greedy: dict[str, float]
    final_greedy: dict[str, float]
    rows: list[dict] = field(default_factory=list)
    entropy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    config_hash: str = ""

    def summary(self) -> dict:
        ent = self.entropy
        clipped = [r["clipped_fraction"] for r in self.rows]
        pos = {}
        for ds in self.dataset_ids:
            vals = [r[f"pos_adv_{ds}"] for r in self.rows if not math.isnan(r[f"pos_adv_{ds}"])]
            pos[ds] = float(np.mean(vals)) if vals else float("nan")
        return {
            "mode": self.mode,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "steps": self.steps,
            "initial_greedy_score": self.initial_greedy,
            "final_greedy_score": self.final_greedy,
            "greedy_improvement": {d: self.final_greedy[d] - self.initial_greedy[d] for d in self.dataset_ids},
            "positive_advantage_fraction": pos,
            "entropy": {
                "initial": float(ent[0]) if ent.size else None,
                "final": float(ent[-1]) if ent.size else None,
                "mean": float(ent.mean()) if ent.size else None,
                "variance": float(ent.var()) if ent.size else 0.0,
                "diff_variance": float(np.diff(ent).var()) if ent.size > 1 else 0.0,
                "max_jump": float(np.abs(np.diff(ent)).max()) if ent.size > 1 else 0.0,
            },
            "clipped_fraction": float(np.mean(clipped)) if clipped else 0.0,
        }

    def step_columns(self) -> list[str]:
        cols = ["step", "entropy", "clipped_fraction", "mean_advantage"]
        for ds in self.dataset_ids:
            cols += [f"greedy_{ds}", f"raw_{ds}", f"reward_{ds}", f"norm_{ds}", f"pos_adv_{ds}"]
        return cols

    def long_rows(self) -> Iterable[dict]:
        """One row per (step, dataset) in the step-metrics layout."""
        for r in self.rows:
            for ds in self.dataset_ids:
                yield {
                    "step": r["step"],
                    "dataset_id": ds,
                    "greedy_score": r[f"greedy_{ds}"],
                    "mean_raw_reward": r[f"raw_{ds}"],
                    "mean_norm_reward": r[f"norm_{ds}"],
                    "positive_advantage_fraction": r[f"pos_adv_{ds}"],
                    "entropy": r["entropy"],
                    "clipped_fraction": r["clipped_fraction"],
                }

    def write(self, out_dir, prefix: str = "") -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "log": out / f"{prefix}log.csv",
            "step_metrics": out / f"{prefix}step_metrics.csv",
            "summary": out / f"{prefix}summary.json",
        }
        with open(paths["log"], "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.step_columns())
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r[k]) for k in w.fieldnames})
        with open(paths["step_metrics"], "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(STEP_COLUMNS))
            w.writeheader()
            for r in self.long_rows():
                w.writerow({k: _fmt(v) for k, v in r.items()})
        paths["summary"].write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return paths


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def run_experiment(
    env: Environment,
    cfg: TrainConfig,
    mode: str,
    steps: int | None = None,
    stats: StatsTable | None = None,
    config_hash: str = "",
) -> RunReport:
    """Rollout, score, standardize and update for ``steps`` steps.

    Raw and normalized runs with the same seed share the policy init, the
    prompt order and the step-0 rollouts; only the rewards differ. In raw
    mode ``stats`` is optional and only used to log normalized rewards.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "normalized":
        if stats is None:
            raise ValueError("normalized mode requires a stats table")
        for ds in env.dataset_ids:
            stats.get(ds, env.spec(ds).task)
    steps = cfg.gradient_steps if steps is None else int(steps)
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if cfg.batch_size > env.num_prompts:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds the {env.num_prompts} prompts available")

    streams = _streams(cfg.seed)
    policy = init_policy(env, cfg)
    rollout_rng, observe_rng = streams["rollout"], streams["observe"]
    initial = greedy_scores(env, policy)
    ids = env.dataset_ids
    rows: list[dict] = []
    ent = np.empty(steps)

    for step in range(1, steps + 1):
        idx = rollout_rng.choice(env.num_prompts, size=cfg.batch_size, replace=False)
        batch = _rollout_batch(env, policy, idx, cfg.group_size, rollout_rng)
        scored, norm_sum = [], {}
        for g in batch:
            raw = observe_scores(env, _prompt_index(g), g.actions, observe_rng)
            scored.append(g.with_rewards(rewards_for(env, g.dataset_id, raw, mode, stats), raw))
            if stats is not None:
                n = scored[-1].rewards if mode == "normalized" else rewards_for(env, g.dataset_id, raw, "normalized", stats)
                norm_sum.setdefault(g.dataset_id, []).append(n)
        policy, m = train_step(policy, scored, cfg)
        greedy = greedy_scores(env, policy)
        row = {"step": step, "entropy": m.entropy, "clipped_fraction": m.clipped_fraction, "mean_advantage": m.mean_advantage}
        for ds in ids:
            row[f"greedy_{ds}"] = greedy[ds]
            row[f"raw_{ds}"] = m.mean_raw_score.get(ds, float("nan"))
            row[f"reward_{ds}"] = m.mean_reward.get(ds, float("nan"))
            row[f"norm_{ds}"] = float(np.mean(norm_sum[ds])) if ds in norm_sum else float("nan")
            row[f"pos_adv_{ds}"] = m.positive_advantage_fraction.get(ds, float("nan"))
        rows.append(row)
        ent[step - 1] = m.entropy

    final = greedy_scores(env, policy)
    return RunReport(mode, cfg.seed, steps, ids, initial, final, rows, ent, config_hash)
