"""Group-relative advantages, the asymmetric clipped surrogate, and the update step.

There is no KL penalty and no value function: each prompt's G rewards are
standardized within the group, and the policy ascends the token-level clipped
objective ``min(rho * A, clip(rho, 1 - eps_low, 1 + eps_high) * A)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .policy import ToyPolicy, entropy_rows, softmax_rows
from .tasks import TaskKind

MAX_LOG_RATIO = 50.0


class StaleRolloutError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClipConfig:
    eps_low: float = 0.2
    eps_high: float = 0.28

    def __post_init__(self):
        if not 0 < self.eps_low <= self.eps_high < 1:
            raise ValueError(
                f"clip range needs 0 < eps_low <= eps_high < 1, got ({self.eps_low}, {self.eps_high})"
            )


@dataclass(frozen=True)
class TrainConfig:
    """Defaults follow the published recipe; toy runs override lr and batch size."""

    group_size: int = 8
    learning_rate: float = 5e-7
    gradient_steps: int = 5000
    batch_size: int = 5
    clip: ClipConfig = field(default_factory=ClipConfig)
    temperature: float = 0.8
    top_p: float = 0.95
    seed: int = 0
    updates_per_batch: int = 1

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError(f"group_size must be >= 2, got {self.group_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.gradient_steps < 0:
            raise ValueError(f"gradient_steps must be >= 0, got {self.gradient_steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.updates_per_batch < 1:
            raise ValueError(f"updates_per_batch must be >= 1, got {self.updates_per_batch}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")


@dataclass
class GroupRollout:
    """G sampled responses to one prompt.

    ``actions[i]`` is the candidate chosen by response i; ``logp_old[i, t]`` is
    the log-prob of its t-th token under the policy that sampled it.
    ``raw_scores``, ``rewards`` and ``advantages`` are filled in later stages.
    """

    prompt_id: str
    dataset_id: str
    task: TaskKind
    context: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    policy_version: int
    raw_scores: np.ndarray | None = None
    rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None

    @property
    def group_size(self) -> int:
        return len(self.actions)

    def with_rewards(self, rewards, raw_scores=None) -> "GroupRollout":
        r = np.asarray(rewards, dtype=np.float64)
        if r.shape != self.actions.shape:
            raise ValueError(f"expected {self.group_size} rewards, got shape {r.shape}")
        raw = self.raw_scores if raw_scores is None else np.asarray(raw_scores, dtype=np.float64)
        return GroupRollout(
            self.prompt_id, self.dataset_id, self.task, self.context, self.actions, self.logp_old,
            self.policy_version, raw, r, group_advantages(r),
        )


@dataclass(frozen=True)
class StepMetrics:
    mean_reward: dict[str, float]
    mean_raw_score: dict[str, float]
    positive_advantage_fraction: dict[str, float]
    mean_advantage: float
    entropy: float
    clipped_fraction: float
    objective: float


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Standardize rewards within a group using the population std.

    Groups whose std is below 1e-8 carry no signal and get all-zero advantages.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError(f"a group needs at least 2 rewards, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise ValueError("group rewards must be finite")
    return kernels.group_advantages_rows(r[None, :])[0]


def importance_ratio(logp_new, logp_old) -> np.ndarray:
    new = np.asarray(logp_new, dtype=np.float64)
    old = np.asarray(logp_old, dtype=np.float64)
    if new.shape != old.shape:
        raise ValueError(f"log-prob shapes differ: {new.shape} vs {old.shape}")
    if not (np.all(np.isfinite(new)) and np.all(np.isfinite(old))):
        raise ValueError("log-probs must be finite")
    return np.exp(np.minimum(new - old, MAX_LOG_RATIO))


def surrogate_terms(ratios, advantage, clip: ClipConfig):
    """Per-token objective terms, d(term)/d(ratio), and the mask of clipped tokens."""
    r = np.asarray(ratios, dtype=np.float64)
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise ValueError("ratios must be positive and finite")
    return kernels.clipped_surrogate_terms(r, advantage, clip.eps_low, clip.eps_high)


def clipped_surrogate(ratios, advantage, clip: ClipConfig) -> tuple[float, np.ndarray]:
    """Loss (negated token mean of the clipped objective) and per-token gradient weights.

    The weight is the advantage where the unclipped branch is selected and 0
    where the clipped constant is.
    """
    terms, weights, _ = surrogate_terms(ratios, advantage, clip)
    return -float(terms.mean()), weights


def policy_entropy(dist) -> float:
    p = np.asarray(dist, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("distribution must be a non-empty vector of non-negative probabilities")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"distribution sums to {p.sum():.12g}, not 1")
    return float(entropy_rows(p))


def _stack(batch: Sequence[GroupRollout]):
    contexts = np.stack([g.context for g in batch])
    actions = np.stack([g.actions for g in batch]).astype(np.int64)
    logp_old = np.stack([g.logp_old for g in batch])
    adv = np.stack([g.advantages for g in batch])
    return contexts, actions, logp_old, adv


def batch_objective(weights: np.ndarray, policy: ToyPolicy, batch: Sequence[GroupRollout], clip: ClipConfig):
    """Token-mean clipped objective of ``batch`` at ``weights``, its gradient, and the clipped mask."""
    contexts, actions, logp_old, adv = _stack(batch)
    q = softmax_rows(contexts @ weights, policy.temperature)
    logp_new = kernels.token_logprobs(q, actions, policy.depth)
    ratios = np.exp(np.minimum(logp_new - logp_old, MAX_LOG_RATIO))
    terms, dterm, clipped = kernels.clipped_surrogate_terms(ratios, adv[:, :, None], clip.eps_low, clip.eps_high)
    n_tok = terms.size
    coef = dterm * ratios / n_tok
    dz = kernels.logit_grad(q, actions, coef, policy.depth, policy.temperature)
    grad = contexts.T @ dz
    return float(terms.sum() / n_tok), grad, clipped, q


def train_step(policy: ToyPolicy, batch: Sequence[GroupRollout], cfg: TrainConfig) -> tuple[ToyPolicy, StepMetrics]:
    """One plain gradient-ascent update on the summed clipped objective of ``batch``."""
    if not batch:
        raise ValueError("empty rollout batch")
    for g in batch:
        if g.policy_version != policy.version:
            raise StaleRolloutError(
                f"rollout {g.prompt_id} was sampled by policy v{g.policy_version}, current is v{policy.version}"
            )
        if g.advantages is None or g.rewards is None:
            raise ValueError(f"rollout {g.prompt_id} has no rewards/advantages")

    weights = policy.weights.copy()
    clipped_total = 0.0
    entropy = objective = 0.0
    for u in range(cfg.updates_per_batch):
        objective_u, grad, clipped, q = batch_objective(weights, policy, batch, cfg.clip)
        if u == 0:
            entropy = float(entropy_rows(q).mean())
            objective = objective_u
        clipped_total += float(clipped.mean())
        weights = weights + cfg.learning_rate * grad

    by_ds: dict[str, list[GroupRollout]] = {}
    for g in batch:
        by_ds.setdefault(g.dataset_id, []).append(g)
    mean_reward = {d: float(np.mean([g.rewards for g in gs])) for d, gs in by_ds.items()}
    mean_raw = {
        d: float(np.mean([g.raw_scores if g.raw_scores is not None else g.rewards for g in gs]))
        for d, gs in by_ds.items()
    }
    pos = {d: float(np.mean([g.advantages > 0 for g in gs])) for d, gs in by_ds.items()}
    metrics = StepMetrics(
        mean_reward=mean_reward,
        mean_raw_score=mean_raw,
        positive_advantage_fraction=pos,
        mean_advantage=float(np.mean([g.advantages for g in batch])),
        entropy=entropy,
        clipped_fraction=clipped_total / cfg.updates_per_batch,
        objective=objective,
    )
    return policy.updated(weights), metrics
