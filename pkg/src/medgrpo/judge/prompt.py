"""Comparative five-dimension judge prompt, score rendering and parsing."""
from __future__ import annotations

import re
from dataclasses import dataclass, fields

from ..tasks import TaskKind

SCALE = {
    5: "very close match, minor phrasing differences",
    4: "good match, minor omissions",
    3: "partial match, notable omissions",
    2: "significant differences, missing important information",
    1: "very different, major errors or missing content",
}


@dataclass(frozen=True)
class Dimension:
    key: str
    title: str
    question: str
    rubric: dict[int, str]


DIMENSIONS: tuple[Dimension, ...] = (
    Dimension(
        "terminology",
        "Medical Terminology Precision",
        "Does the generated caption use the same medical terms as the reference?",
        {
            5: "medical terms match reference precisely (instruments, anatomy, actions)",
            4: "most terms match reference, minor substitutions acceptable",
            3: "some terms match reference, some generic or imprecise",
            2: "many terms don't match reference, often generic",
            1: "terms mostly don't match reference or are incorrect",
        },
    ),
    Dimension(
        "instrument_anatomy",
        "Instrument and Anatomy Identification",
        "Are the instruments and anatomical structures identified the same as in the reference?",
        {
            5: "all instruments and anatomy match reference identifications",
            4: "most instruments and anatomy match reference",
            3: "some instruments and anatomy match reference, some missing",
            2: "many instruments and anatomy don't match reference",
            1: "instruments and anatomy mostly wrong or missing vs reference",
        },
    ),
    Dimension(
        "specificity",
        "Specificity vs Vagueness",
        "Is the level of specificity/vagueness similar to the reference?",
        {
            5: "specificity level matches reference (specific when reference is specific)",
            4: "specificity level mostly matches reference",
            3: "specificity level sometimes differs from reference",
            2: "specificity level often differs from reference (too vague or too specific)",
            1: "specificity level doesn't match reference at all",
        },
    ),
    Dimension(
        "procedure_context",
        "Clinical Procedure Context",
        "Does the generated caption convey the same procedural understanding as the reference?",
        {
            5: "procedural context matches reference (workflow, steps, purpose)",
            4: "most procedural context matches reference",
            3: "some procedural context matches reference, some missing",
            2: "procedural context differs significantly from reference",
            1: "procedural context mostly missing or wrong vs reference",
        },
    ),
    Dimension(
        "action_state",
        "Action and State Accuracy",
        "Are the actions and states described the same as in the reference?",
        {
            5: "all actions and states match reference (active/idle, grasping/releasing, etc.)",
            4: "most actions and states match reference",
            3: "some actions and states match reference, some differ",
            2: "many actions and states differ from reference",
            1: "actions and states mostly wrong vs reference",
        },
    ),
)

DIMENSION_KEYS = tuple(d.key for d in DIMENSIONS)

GENERATED_OPEN, GENERATED_CLOSE = "<generated_caption>", "</generated_caption>"
REFERENCE_OPEN, REFERENCE_CLOSE = "<reference_caption>", "</reference_caption>"

SYSTEM_PROMPT = (
    "You are a surgical video expert comparing a generated caption against a reference caption. "
    "Judge how closely the generated caption matches the reference, dimension by dimension. "
    "Do not rate the caption's quality on its own terms; only its agreement with the reference matters."
)


class JudgeParseError(ValueError):
    pass


@dataclass(frozen=True)
class JudgeScores:
    terminology: int
    instrument_anatomy: int
    specificity: int
    procedure_context: int
    action_state: int

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, int) or not 1 <= v <= 5:
                raise ValueError(f"{f.name} score must be an integer in [1, 5], got {v!r}")

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, k) for k in DIMENSION_KEYS)

    @classmethod
    def from_sequence(cls, values) -> "JudgeScores":
        return cls(*[int(v) for v in values])


@dataclass(frozen=True)
class JudgeRequest:
    generated: str
    reference: str
    task: TaskKind = TaskKind.RC

    def __post_init__(self):
        if not self.generated or not self.generated.strip():
            raise ValueError("generated caption is empty")
        if not self.reference or not self.reference.strip():
            raise ValueError("reference caption is empty")
        object.__setattr__(self, "task", TaskKind.parse(self.task))


def mean_score(s: JudgeScores) -> float:
    return sum(s.as_tuple()) / len(DIMENSION_KEYS)


_TASK_NOUN = {
    TaskKind.VS: "video summary",
    TaskKind.RC: "region caption",
    TaskKind.TAG: "caption",
    TaskKind.STG: "caption",
}


def build_judge_prompt(req: JudgeRequest) -> str:
    noun = _TASK_NOUN[req.task]
    lines = [
        f"How closely does the generated {noun} match the reference?",
        "",
        "Use this 1-5 scale for every dimension:",
    ]
    lines += [f"  {score}: {SCALE[score]}" for score in sorted(SCALE, reverse=True)]
    lines.append("")
    for i, dim in enumerate(DIMENSIONS, 1):
        lines.append(f"({i}) {dim.title} [{dim.key}]")
        lines.append(f"Definition: {dim.question}")
        for score in sorted(dim.rubric, reverse=True):
            lines.append(f"  Score {score}: {dim.rubric[score]}")
        lines.append("")
    lines += [
        GENERATED_OPEN,
        req.generated.strip(),
        GENERATED_CLOSE,
        REFERENCE_OPEN,
        req.reference.strip(),
        REFERENCE_CLOSE,
        "",
        "Respond with exactly these five lines, each an integer from 1 to 5, and nothing else:",
    ]
    lines += [f"{k}: <score>" for k in DIMENSION_KEYS]
    return "\n".join(lines)


def extract_captions(prompt: str) -> tuple[str, str]:
    """Recover (generated, reference) from a prompt built by :func:`build_judge_prompt`."""
    def between(a, b):
        i, j = prompt.find(a), prompt.find(b)
        if i < 0 or j < 0:
            raise JudgeParseError("prompt does not contain caption markers")
        return prompt[i + len(a) : j].strip()

    return between(GENERATED_OPEN, GENERATED_CLOSE), between(REFERENCE_OPEN, REFERENCE_CLOSE)


def render_scores(s: JudgeScores) -> str:
    return "\n".join(f"{k}: {v}" for k, v in zip(DIMENSION_KEYS, s.as_tuple()))


_NUM = r"[\"']?\s*[:=]\s*[\"']?(-?\d+(?:\.\d+)?)"
_PATTERNS = {k: re.compile(r"(?<![A-Za-z_])[\"']?" + k + _NUM, re.IGNORECASE) for k in DIMENSION_KEYS}


def parse_judge_response(text: str) -> JudgeScores:
    if not isinstance(text, str):
        raise JudgeParseError(f"judge response must be text, got {type(text).__name__}")
    values = {}
    for key, pat in _PATTERNS.items():
        found = {m.group(1) for m in pat.finditer(text)}
        if not found:
            raise JudgeParseError(f"judge response has no score for {key!r}")
        nums = {float(v) for v in found}
        if len(nums) > 1:
            raise JudgeParseError(f"judge response gives conflicting scores for {key!r}: {sorted(nums)}")
        v = nums.pop()
        if v != int(v) or not 1 <= v <= 5:
            raise JudgeParseError(f"score for {key!r} must be an integer in [1, 5], got {v:g}")
        values[key] = int(v)
    return JudgeScores(**values)
