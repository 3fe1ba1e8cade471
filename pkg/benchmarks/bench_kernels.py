"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 7] [--scale 1.0] [--json out.json]

Each kernel is run on inputs shaped like one training step of the bundled
two-dataset config (batch 8, group 8, 16 candidates) and on metric batches.
Results are checked for agreement before timing.
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit
from dataclasses import asdict, dataclass

import numpy as np

from medgrpo import kernels


@dataclass
class Row:
    kernel: str
    shape: str
    python_us: float
    cython_us: float | None

    @property
    def speedup(self) -> float | None:
        return None if self.cython_us is None else self.python_us / self.cython_us


def _cases(scale: float, rng: np.random.Generator):
    n = max(1, int(4096 * scale))
    s = rng.uniform(0, 50, (n, 1))
    a = np.hstack([s, s + rng.uniform(0, 10, (n, 1))])
    b = np.hstack([s + 2, s + rng.uniform(2, 12, (n, 1))])
    xy = rng.uniform(0, 0.6, (n, 2))
    boxes_a = np.hstack([xy, xy + 0.3])
    boxes_b = np.hstack([xy + 0.1, xy + 0.35])
    rewards = rng.random((max(1, int(512 * scale)), 8))
    ratios = rng.uniform(0.5, 1.5, (8, 8, 4))
    adv = rng.normal(size=(8, 8, 1))
    q = rng.dirichlet(np.ones(16), size=8)
    actions = rng.integers(0, 16, (8, 8)).astype(np.int64)
    coef = rng.normal(size=(8, 8, 4))
    big_q = rng.dirichlet(np.ones(16), size=max(1, int(256 * scale)))
    big_actions = rng.integers(0, 16, (len(big_q), 8)).astype(np.int64)
    big_coef = rng.normal(size=(len(big_q), 8, 4))
    return [
        ("temporal_iou_pairs", f"{n} pairs", kernels.temporal_iou_pairs, (a, b)),
        ("box_iou_pairs", f"{n} pairs", kernels.box_iou_pairs, (boxes_a, boxes_b)),
        ("group_advantages_rows", f"{len(rewards)}x8", kernels.group_advantages_rows, (rewards,)),
        ("clipped_surrogate_terms", "8x8x4", kernels.clipped_surrogate_terms, (ratios, adv, 0.2, 0.28)),
        ("token_logprobs", "8x8, K=16", kernels.token_logprobs, (q, actions, 4)),
        ("logit_grad", "8x8, K=16", kernels.logit_grad, (q, actions, coef, 4, 0.8)),
        ("token_logprobs", f"{len(big_q)}x8, K=16", kernels.token_logprobs, (big_q, big_actions, 4)),
        ("logit_grad", f"{len(big_q)}x8, K=16", kernels.logit_grad, (big_q, big_actions, big_coef, 4, 0.8)),
    ]


def _time(fn, args, repeat: int) -> float:
    t = timeit.Timer(lambda: fn(*args))
    number, _ = t.autorange()
    return min(t.repeat(repeat=repeat, number=number)) / number * 1e6


def _same(x, y) -> bool:
    if isinstance(x, tuple):
        return all(_same(u, v) for u, v in zip(x, y))
    return np.allclose(np.asarray(x, dtype=float), np.asarray(y, dtype=float), rtol=1e-10, atol=1e-12)


def run(repeat: int, scale: float, seed: int = 0) -> list[Row]:
    have_cython = "cython" in kernels.available_backends()
    before = kernels.BACKEND
    rows = []
    try:
        for name, shape, fn, args in _cases(scale, np.random.default_rng(seed)):
            kernels.use_backend("python")
            ref = fn(*args)
            py = _time(fn, args, repeat)
            cy = None
            if have_cython:
                kernels.use_backend("cython")
                if not _same(ref, fn(*args)):
                    raise AssertionError(f"{name}: backends disagree")
                cy = _time(fn, args, repeat)
            rows.append(Row(name, shape, py, cy))
    finally:
        kernels.use_backend(before)
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplier on the metric and batch sizes")
    ap.add_argument("--json", help="also write the rows to this file")
    args = ap.parse_args(argv)

    rows = run(args.repeat, args.scale)
    print(f"{'kernel':<24} {'shape':<16} {'python us':>11} {'cython us':>11} {'speedup':>8}")
    for r in rows:
        cy = f"{r.cython_us:11.2f}" if r.cython_us is not None else f"{'n/a':>11}"
        sp = f"{r.speedup:7.1f}x" if r.speedup is not None else f"{'':>8}"
        print(f"{r.kernel:<24} {r.shape:<16} {r.python_us:11.2f} {cy} {sp}")
    if "cython" not in kernels.available_backends():
        print("compiled extension not built; only the fallback was timed", file=sys.stderr)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([{**asdict(r), "speedup": r.speedup} for r in rows], fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
