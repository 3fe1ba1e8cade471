"""Command-line entry point: ``medgrpo <command> ...``.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_run_config, provenance, read_toml
from .grpo import StaleRolloutError
from .judge import DIMENSION_KEYS, JudgeClient, JudgeConfig, JudgeConfigError, JudgeRequest, JudgeUnavailableError, mean_score, mock_judge
from .normalization import (
    DEFAULT_IQR_FLOOR,
    DEFAULT_K,
    FittingError,
    PercentileStats,
    StatsFormatError,
    StatsInvariantError,
    StatsLookupError,
    StatsTable,
    fit_stats_table,
    load_stats_table,
    normalize,
    save_stats_table,
)
from .tasks import TaskKind

log = logging.getLogger("medgrpo")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

# judge-score stats used when no table is supplied: centred on the middle of the 1..5 scale
DEFAULT_JUDGE_STATS = PercentileStats(2.0, 3.0, 4.0)


class ValidationError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _read_scores_csv(path) -> list[tuple]:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{p}: file not found")
    rows = []
    with open(p, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        missing = {"dataset", "task", "score"} - cols
        if missing:
            raise ValidationError(f"{p}: missing columns {sorted(missing)}; expected dataset, task, score")
        for lineno, row in enumerate(reader, start=2):
            try:
                task = TaskKind.parse(row["task"])
                score = float(row["score"])
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{p}:{lineno}: {exc}") from None
            if not row["dataset"]:
                raise ValidationError(f"{p}:{lineno}: empty dataset")
            rows.append((row["dataset"], task, score, (row.get("channel") or "content")))
    if not rows:
        raise ValidationError(f"{p}: no score rows")
    return rows


def _load_run(args, mode_override: str | None = None, **extra) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "mode": mode_override or getattr(args, "mode", None),
        "out": args.out,
        "stats": Path(args.stats).resolve() if getattr(args, "stats", None) else None,
        "train.steps": getattr(args, "steps", None),
        **extra,
    }
    return load_run_config(args.config, overrides)


def _load_stats_for(cfg: RunConfig) -> StatsTable | None:
    if cfg.stats_path is None:
        return None
    table = load_stats_table(cfg.stats_path)
    for d in cfg.environment.datasets:
        if (d.dataset_id, d.task) not in table:
            raise ValidationError(
                f"stats: {cfg.stats_path} has no entry for dataset={d.dataset_id!r} task={d.task.value}"
            )
    return table


def _environment(cfg: RunConfig):
    from .simenv import build_environment

    e = cfg.environment
    return build_environment(e.datasets, e.seed, e.num_actions)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_fit_stats(args) -> int:
    rows = _read_scores_csv(args.scores)
    table = fit_stats_table(rows, k=args.k, iqr_floor=args.iqr_floor)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_stats_table(table, out)
    print(f"{'dataset':<16} {'task':<5} {'channel':<10} {'n':>6} {'p25':>10} {'p50':>10} {'p75':>10}")
    counts: dict = {}
    for d, t, _, ch in rows:
        counts[(d, t, ch)] = counts.get((d, t, ch), 0) + 1
    for (d, t, ch), st in sorted(table.entries.items(), key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2])):
        print(f"{d:<16} {t.value:<5} {ch:<10} {counts[(d, t, ch)]:>6} {st.p25:>10.6f} {st.p50:>10.6f} {st.p75:>10.6f}")
    print(f"wrote {len(table)} entries to {out}")
    return EXIT_OK


def cmd_baseline_scores(args) -> int:
    from .simenv import baseline_scores, init_policy, _streams

    # the stats table is usually fitted from this output, so it need not exist yet
    cfg = _load_run(args, mode_override="raw", stats="")
    env = _environment(cfg)
    rows = baseline_scores(env, init_policy(env, cfg.train), cfg.train.group_size, _streams(cfg.train.seed)["baseline"])
    out = Path(args.scores_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "task", "score"])
        for d, t, x in rows:
            w.writerow([d, t.value, repr(x)])
    print(f"wrote {len(rows)} step-0 scores to {out}")
    return EXIT_OK


def _run_one(cfg: RunConfig, env, stats, mode: str, out_dir: Path, prefix: str = ""):
    from .plots import plot_run
    from .simenv import run_experiment

    rep = run_experiment(env, cfg.train, mode, stats=stats, config_hash=cfg.config_hash())
    paths = rep.write(out_dir, prefix)
    summary = rep.summary()
    summary["environment"] = env.fingerprint()
    _write_json(paths["summary"], summary)
    plot_run(rep, out_dir / f"{prefix}curves.png")
    return rep, summary


def cmd_train(args) -> int:
    cfg = _load_run(args)
    stats = _load_stats_for(cfg)
    env = _environment(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _, summary = _run_one(cfg, env, stats, cfg.mode, cfg.out_dir)
    ids = env.dataset_ids
    print(f"mode={cfg.mode} seed={cfg.seed} steps={summary['steps']} config_hash={cfg.config_hash()}")
    for ds in ids:
        print(f"  {ds:<12} greedy {summary['initial_greedy_score'][ds]:.4f} -> {summary['final_greedy_score'][ds]:.4f}")
    print(f"  entropy variance {summary['entropy']['variance']:.5f}")
    print(f"outputs in {cfg.out_dir}")
    return EXIT_OK


def cmd_ablation(args) -> int:
    from .plots import plot_entropy_comparison

    cfg = _load_run(args, mode_override="normalized")
    stats = _load_stats_for(cfg)
    env = _environment(cfg)
    hard = args.hard or min(env.dataset_ids, key=lambda d: env.spec(d).median)
    if hard not in env.dataset_ids:
        raise ValidationError(f"--hard: unknown dataset {hard!r}")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    reports, summaries = {}, {}
    for mode in ("raw", "normalized"):
        reports[mode], summaries[mode] = _run_one(cfg, env, stats, mode, cfg.out_dir / mode)
    comp = {
        **provenance(cfg),
        "mode": "ablation",
        "environment": env.fingerprint(),
        "hard_dataset": hard,
        "modes": {
            m: {
                "initial_hard_score": s["initial_greedy_score"][hard],
                "final_hard_score": s["final_greedy_score"][hard],
                "hard_improvement": s["greedy_improvement"][hard],
                "final_greedy_score": s["final_greedy_score"],
                "entropy_variance": s["entropy"]["variance"],
                "entropy_diff_variance": s["entropy"]["diff_variance"],
                "hard_positive_advantage_fraction": s["positive_advantage_fraction"][hard],
                "clipped_fraction": s["clipped_fraction"],
            }
            for m, s in summaries.items()
        },
    }
    raw, norm = comp["modes"]["raw"], comp["modes"]["normalized"]
    comp["checks"] = {
        "normalized_improves_hard": norm["hard_improvement"] >= 0.05,
        "raw_improves_less": raw["hard_improvement"] < norm["hard_improvement"],
        "raw_entropy_more_variable": raw["entropy_variance"] > norm["entropy_variance"],
    }
    _write_json(cfg.out_dir / "comparison.json", comp)
    plot_entropy_comparison(
        {"without normalization": reports["raw"], "with normalization": reports["normalized"]},
        cfg.out_dir / "entropy.png",
    )
    print(f"seed={cfg.seed} steps={cfg.train.gradient_steps} hard dataset={hard} config_hash={cfg.config_hash()}")
    print(f"{'mode':<11} {'hard init':>10} {'hard final':>11} {'improve':>9} {'ent var':>9}")
    for m in ("raw", "normalized"):
        r = comp["modes"][m]
        print(f"{m:<11} {r['initial_hard_score']:>10.4f} {r['final_hard_score']:>11.4f} {r['hard_improvement']:>9.4f} {r['entropy_variance']:>9.5f}")
    for name, ok in comp["checks"].items():
        print(f"  {'PASS' if ok else 'FAIL'} {name}")
    print(f"outputs in {cfg.out_dir}")
    return EXIT_OK


def cmd_judge_test(args) -> int:
    try:
        req = JudgeRequest(args.generated, args.reference, TaskKind.parse(args.task))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    entry = DEFAULT_JUDGE_STATS
    if args.stats:
        if not args.dataset:
            raise ValidationError("--stats requires --dataset")
        entry = load_stats_table(args.stats).get(args.dataset, req.task, "judge")
    if args.mock:
        scores = mock_judge(req)
    else:
        if not args.config:
            raise ValidationError("judge-test needs --config or --mock")
        doc = read_toml(args.config)
        try:
            jcfg = JudgeConfig.from_mapping(doc.get("judge", doc))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"judge: {exc}") from None
        with JudgeClient(jcfg) as client:
            scores = client.judge(req)
    s_bar = mean_score(scores)
    for key, v in zip(DIMENSION_KEYS, scores.as_tuple()):
        print(f"{key}: {v}")
    print(f"mean: {s_bar}")
    print(f"r_llm: {normalize(entry, s_bar):.6f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="medgrpo", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit-stats", help="fit percentile stats from a (dataset, task, score) CSV")
    p.add_argument("scores", help="CSV with columns dataset, task, score and optional channel")
    p.add_argument("--out", required=True, help="stats table JSON to write")
    p.add_argument("--k", type=float, default=DEFAULT_K)
    p.add_argument("--iqr-floor", type=float, default=DEFAULT_IQR_FLOOR)
    p.set_defaults(func=cmd_fit_stats)

    def run_args(p, mode=True):
        p.add_argument("--config", required=True, help="run config TOML, or a bundled name such as two_dataset")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int)
        p.add_argument("--stats", help="stats table JSON (overrides the config)")
        p.add_argument("--steps", type=int, help="number of training steps (overrides the config)")
        if mode:
            p.add_argument("--mode", choices=("raw", "normalized"))

    p = sub.add_parser("baseline-scores", help="dump step-0 policy scores of the synthetic environment")
    run_args(p, mode=False)
    p.add_argument("--scores-out", required=True, help="CSV to write")
    p.set_defaults(func=cmd_baseline_scores)

    p = sub.add_parser("train", help="run one training experiment")
    run_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablation", help="paired raw vs normalized runs from one seed")
    run_args(p, mode=False)
    p.add_argument("--hard", help="dataset to report as hard (default: lowest target median)")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("judge-test", help="score one caption pair with the judge")
    p.add_argument("--config", help="TOML file with a [judge] section")
    p.add_argument("--mock", "--mock-judge", dest="mock", action="store_true", help="use the offline mock judge")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--task", default="RC", choices=("VS", "RC"))
    p.add_argument("--stats", help="stats table with a judge channel entry")
    p.add_argument("--dataset", help="dataset id for the --stats lookup")
    p.set_defaults(func=cmd_judge_test)
    return ap


_VALIDATION = (ValidationError, ConfigError, FittingError, StatsFormatError, StatsInvariantError, StatsLookupError, FileNotFoundError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _VALIDATION as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    except (JudgeUnavailableError, JudgeConfigError, StaleRolloutError, OSError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
