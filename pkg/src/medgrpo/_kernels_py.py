"""Numpy implementations of the hot kernels.

These are the reference versions; ``_kernels.pyx`` mirrors them loop for loop.
All functions take float64 / int64 arrays and never validate their inputs.
"""
from __future__ import annotations

import numpy as np

STD_EPS = 1e-8
LOG_FLOOR = -700.0


def temporal_iou_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    inter = np.maximum(0.0, np.minimum(a[:, 1], b[:, 1]) - np.maximum(a[:, 0], b[:, 0]))
    union = (a[:, 1] - a[:, 0]) + (b[:, 1] - b[:, 0]) - inter
    same = np.all(a == b, axis=1)
    out = np.zeros(len(a))
    pos = union > 0
    out[pos] = inter[pos] / union[pos]
    out[~pos & same] = 1.0
    return out


def box_iou_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    iw = np.maximum(0.0, np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]))
    ih = np.maximum(0.0, np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]))
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a + area_b - inter
    same = np.all(a == b, axis=1)
    out = np.zeros(len(a))
    pos = union > 0
    out[pos] = inter[pos] / union[pos]
    out[~pos & same] = 1.0
    return out


def group_advantages_rows(rewards: np.ndarray) -> np.ndarray:
    mean = rewards.mean(axis=1, keepdims=True)
    centered = rewards - mean
    std = np.sqrt((centered * centered).mean(axis=1, keepdims=True))
    out = np.zeros_like(rewards)
    ok = std[:, 0] >= STD_EPS
    out[ok] = centered[ok] / std[ok]
    return out


def clipped_surrogate_terms(ratios: np.ndarray, adv: np.ndarray, eps_low: float, eps_high: float):
    """Per-token ``min(r*A, clip(r)*A)``, d(term)/d(ratio), and the clipped mask."""
    adv = np.broadcast_to(adv, ratios.shape)
    unclipped = ratios * adv
    clipped = np.clip(ratios, 1.0 - eps_low, 1.0 + eps_high) * adv
    use_clip = clipped < unclipped
    terms = np.where(use_clip, clipped, unclipped)
    weights = np.where(use_clip, 0.0, adv)
    return terms, weights, use_clip


def _levels(q: np.ndarray, depth: int) -> list[np.ndarray]:
    n, k = q.shape
    width = 1 << depth
    padded = np.zeros((n, width))
    padded[:, :k] = q
    return [padded.reshape(n, 1 << t, width >> t).sum(axis=2) for t in range(depth + 1)]


def _log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(x), LOG_FLOOR)


def token_logprobs(q: np.ndarray, actions: np.ndarray, depth: int) -> np.ndarray:
    """Log-prob of each bit token of each sampled candidate code, shape (B, G, depth)."""
    levels = _levels(q, depth)
    rows = np.arange(q.shape[0])[:, None]
    out = np.empty(actions.shape + (depth,))
    for t in range(depth):
        num = levels[t + 1][rows, actions >> (depth - t - 1)]
        den = levels[t][rows, actions >> (depth - t)]
        out[:, :, t] = _log(num) - _log(den)
    return out


def logit_grad(q: np.ndarray, actions: np.ndarray, coef: np.ndarray, depth: int, tau: float) -> np.ndarray:
    """sum_{g,t} coef[b,g,t] * d log pi_t / d z_b, shape (B, K)."""
    n, k = q.shape
    levels = _levels(q, depth)
    rows = np.arange(n)[:, None]
    codes = np.arange(k)
    grad = np.zeros((n, k))
    for t in range(depth):
        hi = depth - t - 1
        lo = depth - t
        s_num = levels[t + 1][rows, actions >> hi]
        s_den = levels[t][rows, actions >> lo]
        in_num = (codes[None, None, :] >> hi) == (actions[:, :, None] >> hi)
        in_den = (codes[None, None, :] >> lo) == (actions[:, :, None] >> lo)
        c = coef[:, :, t]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(s_num > 0, c / s_num, 0.0)
            b = np.where(s_den > 0, c / s_den, 0.0)
        grad += ((in_num * a[:, :, None]).sum(axis=1) - (in_den * b[:, :, None]).sum(axis=1)) * q
    return grad / tau
