"""The numba kernels and the pure-numpy fallback must agree bit for bit."""

import numpy as np
import pytest

from anchorsynth import _kernels
from anchorsynth.synthworld import OracleDenoiser, make_codebook
from anchorsynth.tokenflow import FlowSchedule, TokenSeq, corrupt, sample

needs_numba = pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba not installed")


@pytest.fixture
def restore_backend():
    before = _kernels.active_backend()
    yield
    _kernels.use_backend(before)


def random_rate_inputs(rng, n=64, v=24):
    cb = make_codebook(v, 8, 0.2, seed=int(rng.integers(1 << 30)))
    current = rng.integers(0, v, size=n)
    proposal = rng.integers(0, v, size=n)
    corruption = rng.random((n, v))
    corruption /= corruption.sum(axis=1, keepdims=True)
    return current, proposal, cb.distances, corruption


@needs_numba
def test_rate_rows_backends_identical(restore_backend):
    rng = np.random.default_rng(0)
    for _ in range(10):
        args = random_rate_inputs(rng)
        _kernels.use_backend("numpy")
        rates_np, totals_np = _kernels.rate_rows(*args)
        _kernels.use_backend("numba")
        rates_nb, totals_nb = _kernels.rate_rows(*args)
        assert np.array_equal(rates_np, rates_nb)
        assert np.array_equal(totals_np, totals_nb)


@needs_numba
def test_weighted_pick_backends_identical(restore_backend):
    rng = np.random.default_rng(1)
    for _ in range(10):
        weights = rng.random((128, 16))
        weights[rng.random((128, 16)) < 0.5] = 0.0  # plenty of zero entries
        weights[3] = 0.0  # a fully dead row
        uniforms = rng.random(128)
        _kernels.use_backend("numpy")
        a = _kernels.weighted_pick(weights, uniforms)
        _kernels.use_backend("numba")
        b = _kernels.weighted_pick(weights, uniforms)
        assert np.array_equal(a, b)


@needs_numba
def test_weighted_pick_uniform_near_one(restore_backend):
    # u close to 1 exercises the last-positive-index guard on both paths
    weights = np.array([[0.25, 0.0, 0.75, 0.0], [0.0, 1.0, 0.0, 0.0]])
    uniforms = np.array([1.0 - 1e-16, 1.0 - 1e-16])
    _kernels.use_backend("numpy")
    a = _kernels.weighted_pick(weights, uniforms)
    _kernels.use_backend("numba")
    b = _kernels.weighted_pick(weights, uniforms)
    assert np.array_equal(a, b)
    assert a.tolist() == [2, 1]


@needs_numba
def test_corrupt_backends_identical(restore_backend):
    cb = make_codebook(20, 10, 0.2, seed=5)
    sched = FlowSchedule()
    clean = TokenSeq(np.random.default_rng(6).integers(0, 20, size=500))
    outs = {}
    for backend in ("numpy", "numba"):
        _kernels.use_backend(backend)
        outs[backend] = corrupt(clean, 0.5, cb, sched, np.random.default_rng(7))
    assert np.array_equal(outs["numpy"].ids, outs["numba"].ids)


@needs_numba
def test_sample_backends_identical(restore_backend):
    cb = make_codebook(32, 16, 0.3, seed=8)
    sched = FlowSchedule(steps=64)
    clean = TokenSeq(np.random.default_rng(9).integers(0, 32, size=16))
    outs = {}
    for backend in ("numpy", "numba"):
        _kernels.use_backend(backend)
        den = OracleDenoiser(clean, 32, 0.2, seed=10)
        outs[backend] = sample(den, 16, cb, sched, rng=np.random.default_rng(11))
    assert np.array_equal(outs["numpy"].ids, outs["numba"].ids)


def test_weighted_pick_dead_rows_return_zero():
    weights = np.zeros((3, 5))
    ids = _kernels.weighted_pick(weights, np.array([0.1, 0.5, 0.99]))
    assert ids.tolist() == [0, 0, 0]


def test_weighted_pick_matches_searchsorted_oracle():
    rng = np.random.default_rng(12)
    weights = rng.random((200, 12))
    uniforms = rng.random(200)
    ids = _kernels.weighted_pick(weights, uniforms)
    for row in range(200):
        cdf = np.cumsum(weights[row])
        expect = int(np.searchsorted(cdf, uniforms[row] * cdf[-1], side="right"))
        assert ids[row] == min(expect, 11)


def test_use_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _kernels.use_backend("cuda")
