"""Response parsing and task-specific rewards.

Grounding tasks (TAG, STG) use a multiplicative composite:
``final = normalize(metric) * format_factor`` where the format factor is 1.0
for a parseable answer and ``1 - beta`` otherwise. Caption tasks (VS, RC)
average a normalized embedding-similarity channel and a normalized judge
channel with equal weight.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol, Sequence

import numpy as np

from .judge.client import JudgeUnavailableError
from .judge.prompt import JudgeRequest, JudgeScores, mean_score
from . import kernels
from .metrics import BBox, FrameTrack, MetricInputError, TemporalInterval, stg_miou
from .normalization import PercentileStats, StatsTable, normalize
from .tasks import TaskKind

FORMAT_PENALTY = 0.6
SIMILARITY_FLOOR = 0.0
JUDGE_FLOOR = 1.0


class RewardError(RuntimeError):
    """Unrecoverable failure while scoring a response (e.g. the embedder broke)."""


class RewardConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSample:
    dataset_id: str
    task: TaskKind
    ground_truth: Any
    prompt_id: str = ""

    def __post_init__(self):
        try:
            task = TaskKind.parse(self.task)
        except ValueError as exc:
            raise RewardConfigError(str(exc)) from None
        object.__setattr__(self, "task", task)
        gt = self.ground_truth
        if task is TaskKind.TAG:
            if isinstance(gt, TemporalInterval):
                gt = (gt,)
            gt = tuple(gt)
            if not gt or not all(isinstance(g, TemporalInterval) for g in gt):
                raise RewardConfigError("TAG ground truth must be one or more TemporalInterval")
        elif task is TaskKind.STG:
            if not isinstance(gt, FrameTrack) or len(gt) == 0:
                raise RewardConfigError("STG ground truth must be a non-empty FrameTrack")
        elif not isinstance(gt, str) or not gt.strip():
            raise RewardConfigError(f"{task.value} ground truth must be a non-empty reference caption")
        object.__setattr__(self, "ground_truth", gt)


@dataclass(frozen=True)
class ParsedAnswer:
    valid: bool
    payload: Any = None

    def __post_init__(self):
        if not self.valid and self.payload is not None:
            raise ValueError("invalid answers carry no payload")


INVALID = ParsedAnswer(False)


@dataclass(frozen=True)
class RewardBreakdown:
    raw_content: float
    normalized_content: float
    format_factor: float
    final: float
    judge_component: float | None = None
    similarity_component: float | None = None
    judge_mean: float | None = None
    judge_fallback: bool = False


class EmbeddingProvider(Protocol):
    def embed(self, text: str) -> Any: ...


JudgeProvider = Callable[[JudgeRequest], JudgeScores]


# ---------------------------------------------------------------- parsing

_NUM = r"(\d+(?:\.\d+)?)"
_PAIR = re.compile(r"^\[?\s*" + _NUM + r"\s*(?:s|sec|seconds)?\s*(?:–|—|-|to)\s*" + _NUM + r"\s*(?:s|sec|seconds)?\s*\]?$")
_FRAME = re.compile(
    r"^(?:frame\s*)?(\d+)\s*:\s*\[\s*" + r"\s*,\s*".join([r"(-?\d+(?:\.\d+)?(?:e-?\d+)?)"] * 4) + r"\s*\]$",
    re.IGNORECASE,
)


def _parse_tag(text: str) -> ParsedAnswer:
    items = [s.strip() for s in re.split(r"[;,\n]", text) if s.strip()]
    if not items:
        return INVALID
    out = []
    for item in items:
        m = _PAIR.match(item)
        if not m:
            return INVALID
        try:
            out.append(TemporalInterval(float(m.group(1)), float(m.group(2))))
        except MetricInputError:
            return INVALID
    return ParsedAnswer(True, tuple(out))


def _parse_stg(text: str) -> ParsedAnswer:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        return INVALID
    frames: dict[int, BBox] = {}
    last = -1
    for ln in lines:
        m = _FRAME.match(ln)
        if not m:
            return INVALID
        idx = int(m.group(1))
        if idx <= last:
            return INVALID
        last = idx
        try:
            frames[idx] = BBox(*(float(m.group(i)) for i in range(2, 6)))
        except MetricInputError:
            return INVALID
    return ParsedAnswer(True, FrameTrack(frames))


def parse_answer(text: str, task) -> ParsedAnswer:
    """Parse a model response for ``task``; never raises on malformed text.

    TAG: one or more ``start–end`` second pairs separated by commas, semicolons
    or newlines. STG: one ``<frame>: [x1, y1, x2, y2]`` line per frame with
    strictly increasing frame indices. VS/RC: any non-empty text.
    """
    task = TaskKind.parse(task)
    if not isinstance(text, str):
        return INVALID
    text = text.strip()
    if not text:
        return INVALID
    if task is TaskKind.TAG:
        return _parse_tag(text)
    if task is TaskKind.STG:
        return _parse_stg(text)
    return ParsedAnswer(True, text)


def format_reward(parsed: ParsedAnswer, beta: float = FORMAT_PENALTY) -> float:
    return 1.0 - beta * (1.0 - float(bool(parsed.valid)))


# ---------------------------------------------------------------- grounding

def tag_content(pred: Sequence[TemporalInterval], gt: Sequence[TemporalInterval]) -> float:
    """Mean temporal IoU over ground-truth intervals, pairing predictions by position.

    Ground-truth intervals without a prediction at their position score 0;
    surplus predictions are ignored.
    """
    n = min(len(pred), len(gt))
    if n == 0:
        return 0.0
    ious = kernels.temporal_iou_pairs(
        [(p.start, p.end) for p in pred[:n]], [(g.start, g.end) for g in gt[:n]]
    )
    return math.fsum(ious.tolist()) / len(gt)


def compose_grounding_reward(
    entry: PercentileStats, raw_content: float, valid: bool, beta: float = FORMAT_PENALTY
) -> RewardBreakdown:
    norm = normalize(entry, raw_content)
    fmt = 1.0 - beta * (1.0 - float(bool(valid)))
    return RewardBreakdown(float(raw_content), norm, fmt, norm * fmt)


def grounding_reward(
    sample: TaskSample, parsed: ParsedAnswer, stats: StatsTable, beta: float = FORMAT_PENALTY
) -> RewardBreakdown:
    if not sample.task.is_grounding:
        raise RewardConfigError(f"grounding_reward called for {sample.task.value}")
    entry = stats.get(sample.dataset_id, sample.task)
    if not parsed.valid:
        raw = 0.0
    elif sample.task is TaskKind.TAG:
        raw = tag_content(parsed.payload, sample.ground_truth)
    else:
        raw = stg_miou(parsed.payload, sample.ground_truth)
    return compose_grounding_reward(entry, raw, parsed.valid, beta)


def grounding_rewards_array(entry: PercentileStats, raw_scores: np.ndarray, valid=True, beta: float = FORMAT_PENALTY):
    """Vectorized grounding reward for many raw scores; returns (normalized, final)."""
    norm = np.asarray(normalize(entry, np.asarray(raw_scores, dtype=np.float64)))
    fmt = 1.0 - beta * (1.0 - np.asarray(valid, dtype=np.float64))
    return norm, norm * fmt


# ---------------------------------------------------------------- captions

_WORD = re.compile(r"[a-z0-9]+")


class BagOfWordsEmbedder:
    """Term-frequency bag-of-words vectors; deterministic and offline."""

    def embed(self, text: str) -> Counter:
        return Counter(_WORD.findall(text.lower()))


def cosine_similarity(u, v) -> float:
    if isinstance(u, Mapping):
        dot = sum(c * v.get(t, 0) for t, c in u.items())
        nu = math.sqrt(sum(c * c for c in u.values()))
        nv = math.sqrt(sum(c * c for c in v.values()))
    else:
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        dot, nu, nv = float(u @ v), float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0 or nv == 0:
        return 0.0
    return dot / (nu * nv)


def caption_reward(
    sample: TaskSample,
    parsed: ParsedAnswer,
    stats: StatsTable,
    judge: JudgeProvider | None,
    embedder: EmbeddingProvider,
) -> RewardBreakdown:
    if not sample.task.is_caption:
        raise RewardConfigError(f"caption_reward called for {sample.task.value}")
    sim_stats = stats.get(sample.dataset_id, sample.task, "similarity")
    judge_stats = stats.get(sample.dataset_id, sample.task, "judge")

    fallback = False
    if parsed.valid:
        try:
            raw_sim = cosine_similarity(embedder.embed(parsed.payload), embedder.embed(sample.ground_truth))
        except Exception as exc:  # noqa: BLE001
            raise RewardError(f"embedding failed: {exc}") from exc
        raw_sim = min(max(raw_sim, SIMILARITY_FLOOR), 1.0)
        s_bar: float | None
        if judge is None:
            s_bar, fallback = None, True
        else:
            try:
                s_bar = mean_score(judge(JudgeRequest(parsed.payload, sample.ground_truth, sample.task)))
            except JudgeUnavailableError:
                s_bar, fallback = None, True
    else:
        raw_sim, s_bar = SIMILARITY_FLOOR, JUDGE_FLOOR

    sim_comp = normalize(sim_stats, raw_sim)
    if fallback:
        return RewardBreakdown(raw_sim, sim_comp, 1.0, sim_comp, sim_comp, sim_comp, None, True)
    judge_comp = normalize(judge_stats, s_bar)
    final = 0.5 * sim_comp + 0.5 * judge_comp
    return RewardBreakdown(raw_sim, sim_comp, 1.0, final, judge_comp, sim_comp, s_bar, False)


def dispatch_reward(
    sample: TaskSample,
    response_text: str,
    stats: StatsTable,
    judge: JudgeProvider | None = None,
    embedder: EmbeddingProvider | None = None,
    beta: float = FORMAT_PENALTY,
) -> RewardBreakdown:
    if not isinstance(sample.task, TaskKind):
        raise RewardConfigError(f"unknown task kind {sample.task!r}")
    parsed = parse_answer(response_text, sample.task)
    if sample.task.is_grounding:
        return grounding_reward(sample, parsed, stats, beta)
    if sample.task.is_caption:
        return caption_reward(sample, parsed, stats, judge, embedder or BagOfWordsEmbedder())
    raise RewardConfigError(f"no reward defined for task {sample.task.value}")
