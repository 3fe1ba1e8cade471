from .client import JudgeClient, JudgeConfig, JudgeConfigError, JudgeUnavailableError, judge_call
from .mock import MockJudgeServer, mock_judge
from .prompt import (
    DIMENSION_KEYS,
    DIMENSIONS,
    JudgeParseError,
    JudgeRequest,
    JudgeScores,
    build_judge_prompt,
    mean_score,
    parse_judge_response,
    render_scores,
)

__all__ = [
    "DIMENSIONS",
    "DIMENSION_KEYS",
    "JudgeClient",
    "JudgeConfig",
    "JudgeConfigError",
    "JudgeParseError",
    "JudgeRequest",
    "JudgeScores",
    "JudgeUnavailableError",
    "MockJudgeServer",
    "build_judge_prompt",
    "judge_call",
    "mean_score",
    "mock_judge",
    "parse_judge_response",
    "render_scores",
]
