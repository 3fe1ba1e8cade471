"""Linear softmax policy over a fixed candidate set, factored into bit tokens.

Candidate ``a`` is emitted as the ``depth``-bit binary code of ``a`` (most
significant bit first). The per-token conditionals are exact marginals of the
candidate softmax, so ``sum_t log pi(b_t | b_<t) = log pi(a)`` and the
token-level clipped objective has something real to clip.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels


def code_depth(num_actions: int) -> int:
    return max(1, math.ceil(math.log2(num_actions)))


def softmax_rows(logits: np.ndarray, temperature: float) -> np.ndarray:
    z = logits / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy_rows(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log(p), 0.0)
    return -t.sum(axis=-1)


def top_p_sample(probs: np.ndarray, top_p: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` candidates per row from the top-p nucleus of ``probs``."""
    order = np.argsort(-probs, axis=1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=1)
    cum = np.cumsum(sorted_p, axis=1)
    # keep the smallest prefix whose mass reaches top_p; the mode is always kept
    if top_p >= 1.0:
        keep = np.ones_like(sorted_p, dtype=bool)
    else:
        keep = (cum - sorted_p) < top_p
        keep[:, 0] = True
    kept = np.where(keep, sorted_p, 0.0)
    cdf = np.cumsum(kept, axis=1)
    u = rng.random((probs.shape[0], size)) * cdf[:, -1:]
    pos = (cdf[:, None, :] <= u[:, :, None]).sum(axis=2)
    pos = np.minimum(pos, keep.sum(axis=1, keepdims=True) - 1)
    return np.take_along_axis(order, pos, axis=1)


@dataclass(frozen=True)
class ToyPolicy:
    """``weights`` maps a context feature vector to one logit per candidate."""

    weights: np.ndarray
    temperature: float = 0.8
    top_p: float = 0.95
    version: int = 0
    depth: int = field(init=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] < 2:
            raise ValueError(f"weights must be (features, actions>=2), got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("policy weights must be finite")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "depth", code_depth(w.shape[1]))

    @classmethod
    def init(cls, num_features: int, num_actions: int, rng: np.random.Generator, scale: float = 0.1, **kw) -> "ToyPolicy":
        return cls(rng.normal(0.0, scale, size=(num_features, num_actions)), **kw)

    @property
    def num_actions(self) -> int:
        return self.weights.shape[1]

    def logits(self, contexts: np.ndarray) -> np.ndarray:
        return np.atleast_2d(contexts) @ self.weights

    def probs(self, contexts: np.ndarray) -> np.ndarray:
        return softmax_rows(self.logits(contexts), self.temperature)

    def entropy(self, contexts: np.ndarray) -> np.ndarray:
        return entropy_rows(self.probs(contexts))

    def greedy(self, contexts: np.ndarray) -> np.ndarray:
        return self.logits(contexts).argmax(axis=1)

    def sample(self, contexts: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
        return top_p_sample(self.probs(contexts), self.top_p, size, rng)

    def token_logprobs(self, contexts: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return kernels.token_logprobs(self.probs(contexts), np.atleast_2d(actions), self.depth)

    def tokens(self, action: int) -> tuple[int, ...]:
        return tuple((int(action) >> (self.depth - 1 - t)) & 1 for t in range(self.depth))

    def updated(self, weights: np.ndarray) -> "ToyPolicy":
        return replace(self, weights=weights, version=self.version + 1)
