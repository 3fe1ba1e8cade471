from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from medgrpo import _kernels_py, kernels

needs_cython = pytest.mark.skipif("cython" not in kernels.available_backends(), reason="extension not built")


@pytest.fixture
def backends():
    before = kernels.BACKEND
    yield
    kernels.use_backend(before)


def _both(fn, *args):
    kernels.use_backend("python")
    a = fn(*args)
    kernels.use_backend("cython")
    b = fn(*args)
    return a, b


def _rand_intervals(rng, n):
    s = rng.uniform(0, 50, n)
    e = s + rng.choice([0.0, 1.0, 5.0], n) * rng.random(n)
    return np.stack([s, e], axis=1)


def _rand_boxes(rng, n):
    xy = rng.uniform(0, 0.7, (n, 2))
    wh = rng.uniform(0, 0.3, (n, 2)) * (rng.random((n, 1)) > 0.1)
    return np.concatenate([xy, xy + wh], axis=1)


@needs_cython
class TestAgreement:
    def test_temporal_iou(self, backends):
        rng = np.random.default_rng(0)
        a, b = _rand_intervals(rng, 5000), _rand_intervals(rng, 5000)
        b[:50] = a[:50]
        x, y = _both(kernels.temporal_iou_pairs, a, b)
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-15)

    def test_box_iou(self, backends):
        rng = np.random.default_rng(1)
        a, b = _rand_boxes(rng, 5000), _rand_boxes(rng, 5000)
        b[:50] = a[:50]
        x, y = _both(kernels.box_iou_pairs, a, b)
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-15)

    def test_group_advantages(self, backends):
        rng = np.random.default_rng(2)
        r = rng.random((200, 8))
        r[:10] = 0.3
        x, y = _both(kernels.group_advantages_rows, r)
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
        assert np.all(y[:10] == 0.0)

    def test_surrogate(self, backends):
        rng = np.random.default_rng(3)
        ratios = rng.uniform(0.3, 2.0, (64, 8, 4))
        adv = rng.normal(size=(64, 8, 1))
        x, y = _both(kernels.clipped_surrogate_terms, ratios, adv, 0.2, 0.28)
        for u, v in zip(x, y):
            np.testing.assert_array_equal(np.asarray(u, dtype=float), np.asarray(v, dtype=float).reshape(np.shape(u)))

    @pytest.mark.parametrize("k", [2, 5, 16, 17])
    def test_token_logprobs_and_grad(self, backends, k):
        rng = np.random.default_rng(k)
        depth = max(1, int(np.ceil(np.log2(k))))
        q = rng.dirichlet(np.ones(k), size=6)
        q[0, 0] = 0.0
        q[0] /= q[0].sum()
        actions = rng.integers(1, k, size=(6, 5))
        coef = rng.normal(size=(6, 5, depth))
        x, y = _both(kernels.token_logprobs, q, actions, depth)
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
        g1, g2 = _both(kernels.logit_grad, q, actions, coef, depth, 0.8)
        np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-12)

    def test_token_logprobs_sum_to_candidate_logprob(self, backends):
        rng = np.random.default_rng(7)
        q = rng.dirichlet(np.ones(16), size=4)
        actions = rng.integers(0, 16, size=(4, 9))
        for name in kernels.available_backends():
            kernels.use_backend(name)
            lp = kernels.token_logprobs(q, actions, 4).sum(axis=2)
            np.testing.assert_allclose(lp, np.log(np.take_along_axis(q, actions, axis=1)), rtol=1e-12)


class TestSelection:
    def test_python_always_available(self, backends):
        assert "python" in kernels.available_backends()
        kernels.use_backend("python")
        assert kernels.BACKEND == "python"
        assert kernels._impl is _kernels_py

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            kernels.use_backend("fortran")

    def test_env_var_forces_fallback(self):
        env = dict(os.environ, MEDGRPO_PURE_PYTHON="1")
        out = subprocess.run(
            [sys.executable, "-c", "from medgrpo import kernels; print(kernels.BACKEND)"],
            env=env, capture_output=True, text=True, check=True,
        )
        assert out.stdout.strip() == "python"

    @needs_cython
    def test_compiled_is_default(self):
        env = {k: v for k, v in os.environ.items() if k != "MEDGRPO_PURE_PYTHON"}
        out = subprocess.run(
            [sys.executable, "-c", "from medgrpo import kernels; print(kernels.BACKEND)"],
            env=env, capture_output=True, text=True, check=True,
        )
        assert out.stdout.strip() == "cython"


def test_benchmark_smoke():
    from pathlib import Path

    sys.path.insert(0, str(Path(__file__).parents[1] / "benchmarks"))
    import bench_kernels

    rows = bench_kernels.run(repeat=1, scale=0.01)
    assert len(rows) == 8
    assert all(r.python_us > 0 for r in rows)
