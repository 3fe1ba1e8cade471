"""HTTP client for a chat-completions judge endpoint."""
from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import httpx

from .prompt import (
    SYSTEM_PROMPT,
    JudgeParseError,
    JudgeRequest,
    JudgeScores,
    build_judge_prompt,
    parse_judge_response,
)

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "MEDGRPO_JUDGE_API_KEY"
BACKOFF_BASE = 0.5
BACKOFF_FACTOR = 2.0
_FATAL_STATUS = {400, 401, 403, 404, 405, 422}


class JudgeUnavailableError(RuntimeError):
    """The judge could not produce scores within the retry budget."""


class JudgeConfigError(RuntimeError):
    """Non-retriable failure: bad credentials, wrong endpoint, malformed request."""


@dataclass(frozen=True)
class JudgeConfig:
    endpoint: str
    model: str = "gpt-4.1"
    timeout: float = 60.0
    max_retries: int = 3
    max_concurrent_requests: int = 8
    temperature: float = 0.0
    api_key_env: str = DEFAULT_API_KEY_ENV

    def __post_init__(self):
        if not self.endpoint:
            raise ValueError("judge.endpoint must be set")
        if self.max_retries < 0:
            raise ValueError(f"judge.max_retries must be >= 0, got {self.max_retries}")
        if self.max_concurrent_requests < 1:
            raise ValueError(f"judge.max_concurrent_requests must be >= 1, got {self.max_concurrent_requests}")
        if self.timeout <= 0:
            raise ValueError(f"judge.timeout must be positive, got {self.timeout}")

    @classmethod
    def from_mapping(cls, data: dict) -> "JudgeConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown judge config fields: {sorted(unknown)}")
        return cls(**known)

    @classmethod
    def from_file(cls, path) -> "JudgeConfig":
        from ..config import read_toml

        doc = read_toml(Path(path))
        return cls.from_mapping(doc.get("judge", doc))


class JudgeClient:
    """Thread-safe judge client with bounded concurrency and exponential backoff.

    Instances are callable, so they can be handed to the reward functions as a
    judge provider.
    """

    def __init__(
        self,
        cfg: JudgeConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        self._sem = threading.BoundedSemaphore(cfg.max_concurrent_requests)
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(timeout=cfg.timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "JudgeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __call__(self, req: JudgeRequest) -> JudgeScores:
        return self.judge(req)

    def _payload(self, req: JudgeRequest) -> dict:
        return {
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": build_judge_prompt(req)},
            ],
            "temperature": self.cfg.temperature,
        }

    def _post_once(self, payload: dict) -> str:
        with self._sem:
            resp = self._http.post(self.cfg.endpoint, json=payload)
        if resp.status_code in _FATAL_STATUS:
            raise JudgeConfigError(f"judge endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
        resp.raise_for_status()
        body = resp.json()
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise JudgeParseError("response body has no choices[0].message.content") from None

    def judge(self, req: JudgeRequest) -> JudgeScores:
        payload = self._payload(req)
        last: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self._sleep(BACKOFF_BASE * BACKOFF_FACTOR ** (attempt - 1))
            try:
                return parse_judge_response(self._post_once(payload))
            except JudgeConfigError:
                raise
            except (httpx.HTTPError, JudgeParseError, ValueError) as exc:
                last = exc
                log.warning("judge attempt %d/%d failed: %s", attempt + 1, self.cfg.max_retries + 1, exc)
        raise JudgeUnavailableError(f"judge failed after {self.cfg.max_retries + 1} attempts: {last}")


def judge_call(cfg: JudgeConfig, req: JudgeRequest, **kwargs) -> JudgeScores:
    with JudgeClient(cfg, **kwargs) as client:
        return client.judge(req)
