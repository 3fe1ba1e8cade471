"""Run configuration: TOML loading, validation with field paths, provenance hash."""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .grpo import ClipConfig, TrainConfig
from .judge.client import JudgeConfig
from .simenv import DEFAULT_NUM_ACTIONS, MODES, SyntheticDatasetSpec
from .tasks import TaskKind

BUNDLED_DIR = Path(__file__).parent / "configs"


class ConfigError(ValueError):
    """One or more config fields are invalid; ``problems`` lists (path, message)."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{p}: {m}" for p, m in problems))


def read_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([(str(path), "file not found")]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([(str(path), f"invalid TOML: {exc}")]) from None


def resolve_config_path(name) -> Path:
    """A filesystem path, or the stem of a bundled config such as ``two_dataset``."""
    p = Path(name)
    if p.exists():
        return p
    bundled = BUNDLED_DIR / f"{name}.toml"
    if bundled.exists():
        return bundled
    return p


@dataclass(frozen=True)
class EnvironmentConfig:
    datasets: tuple[SyntheticDatasetSpec, ...]
    seed: int = 0
    num_actions: int = DEFAULT_NUM_ACTIONS


@dataclass(frozen=True)
class RunConfig:
    environment: EnvironmentConfig
    train: TrainConfig
    mode: str
    stats_path: Path | None
    judge: JudgeConfig | None
    out_dir: Path
    seed: int
    source: dict

    @property
    def has_caption_tasks(self) -> bool:
        return any(d.task.is_caption for d in self.environment.datasets)

    def config_hash(self) -> str:
        """Identifies the experiment: where outputs go is not part of it, and
        the stats table is hashed by content rather than by path."""
        doc = {k: v for k, v in self.source.items() if k not in ("out", "stats")}
        if self.stats_path is not None:
            doc["stats"] = hashlib.sha256(self.stats_path.read_bytes()).hexdigest()
        blob = json.dumps(doc, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


class _Checker:
    def __init__(self):
        self.problems: list[tuple[str, str]] = []

    def err(self, path: str, msg: str) -> None:
        self.problems.append((path, msg))

    def table(self, doc: dict, key: str, path: str, required: bool = True) -> dict:
        v = doc.get(key)
        if v is None:
            if required:
                self.err(path, "missing section")
            return {}
        if not isinstance(v, dict):
            self.err(path, "must be a table")
            return {}
        return v

    def number(self, doc: dict, key: str, path: str, default=None, integer: bool = False):
        v = doc.get(key, default)
        if v is None:
            self.err(path, "missing value")
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
            self.err(path, f"expected {'an integer' if integer else 'a number'}, got {v!r}")
            return None
        return v

    def unknown(self, doc: dict, allowed: set[str], path: str) -> None:
        for k in sorted(set(doc) - allowed):
            self.err(f"{path}.{k}" if path else k, "unknown field")

    def build(self, path: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (TypeError, ValueError) as exc:
            self.err(path, str(exc))
            return None


_TOP = {"seed", "mode", "stats", "out", "train", "environment", "judge"}
_TRAIN = {"group_size", "learning_rate", "steps", "batch_size", "eps_low", "eps_high", "temperature", "top_p", "updates_per_batch"}
_ENV = {"seed", "num_actions", "datasets"}
_DS = {"id", "task", "median", "concentration", "noise_scale", "num_prompts", "outlier_rate", "outlier_range"}


def parse_run_config(doc: dict, base_dir: Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Validate a config mapping; every problem is reported with its field path."""
    doc = json.loads(json.dumps(doc, default=str))
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        *parents, leaf = k.split(".")
        node = doc
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = str(v) if isinstance(v, Path) else v
    base = base_dir or Path(".")
    c = _Checker()
    c.unknown(doc, _TOP, "")

    seed = c.number(doc, "seed", "seed", default=0, integer=True)
    mode = doc.get("mode", "normalized")
    if mode not in MODES:
        c.err("mode", f"must be one of {list(MODES)}, got {mode!r}")

    t = c.table(doc, "train", "train")
    c.unknown(t, _TRAIN, "train")
    tv = {}
    for key, default, integer in (
        ("group_size", 8, True), ("learning_rate", None, False), ("steps", None, True),
        ("batch_size", 8, True), ("eps_low", 0.2, False), ("eps_high", 0.28, False),
        ("temperature", 0.8, False), ("top_p", 0.95, False), ("updates_per_batch", 1, True),
    ):
        tv[key] = c.number(t, key, f"train.{key}", default=default, integer=integer)
    clip = None
    if tv["eps_low"] is not None and tv["eps_high"] is not None:
        clip = c.build("train.eps_low", ClipConfig, tv["eps_low"], tv["eps_high"])
    train = None
    if clip is not None and seed is not None and all(v is not None for v in tv.values()):
        train = c.build(
            "train", TrainConfig,
            group_size=tv["group_size"], learning_rate=tv["learning_rate"], gradient_steps=tv["steps"],
            batch_size=tv["batch_size"], clip=clip, temperature=tv["temperature"], top_p=tv["top_p"],
            seed=seed, updates_per_batch=tv["updates_per_batch"],
        )

    e = c.table(doc, "environment", "environment")
    c.unknown(e, _ENV, "environment")
    env_seed = c.number(e, "seed", "environment.seed", default=0, integer=True)
    num_actions = c.number(e, "num_actions", "environment.num_actions", default=DEFAULT_NUM_ACTIONS, integer=True)
    if isinstance(num_actions, int) and num_actions < 2:
        c.err("environment.num_actions", f"must be >= 2, got {num_actions}")
    raw_ds = e.get("datasets")
    specs = []
    if not isinstance(raw_ds, list) or not raw_ds:
        c.err("environment.datasets", "must be a non-empty array of tables")
        raw_ds = []
    seen = set()
    caption_paths = []
    for i, d in enumerate(raw_ds):
        path = f"environment.datasets[{i}]"
        if not isinstance(d, dict):
            c.err(path, "must be a table")
            continue
        c.unknown(d, _DS, path)
        kw = {k: d[k] for k in _DS - {"id", "outlier_range"} if k in d}
        if "outlier_range" in d:
            kw["outlier_range"] = tuple(d["outlier_range"])
        if "id" not in d:
            c.err(f"{path}.id", "missing value")
            continue
        if d["id"] in seen:
            c.err(f"{path}.id", f"duplicate dataset id {d['id']!r}")
        seen.add(d["id"])
        try:
            if TaskKind.parse(d.get("task", "STG")).is_caption:
                caption_paths.append(f"{path}.task")
        except ValueError:
            pass
        spec = c.build(path, SyntheticDatasetSpec, dataset_id=d["id"], **kw)
        if spec is not None:
            specs.append(spec)

    stats_path = None
    if doc.get("stats"):
        stats_path = (base / doc["stats"]).resolve()
        if not stats_path.is_file():
            c.err("stats", f"stats file not found: {stats_path}")
    elif mode == "normalized":
        c.err("stats", "normalized mode requires a stats table path")

    judge = None
    j = c.table(doc, "judge", "judge", required=False)
    if j:
        judge = c.build("judge", JudgeConfig.from_mapping, j)
    elif caption_paths:
        c.err("judge", f"caption tasks ({', '.join(caption_paths)}) require a [judge] section")

    out = doc.get("out")
    if not out:
        c.err("out", "missing output directory")
    out_dir = Path(out).resolve() if out else Path(".")
    if out and out_dir.exists() and not out_dir.is_dir():
        c.err("out", f"{out_dir} exists and is not a directory")

    if c.problems:
        raise ConfigError(c.problems)
    env = EnvironmentConfig(tuple(specs), env_seed, num_actions)
    return RunConfig(env, train, mode, stats_path, judge, out_dir, seed, doc)


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    path = resolve_config_path(path)
    doc = read_toml(path)
    return parse_run_config(doc, base_dir=path.parent.resolve(), overrides=overrides)


def provenance(cfg: RunConfig) -> dict[str, Any]:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed, "mode": cfg.mode}
