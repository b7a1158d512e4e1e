import numpy as np
import pytest

from daf3d import _kernels
from daf3d._accel import HAVE_NUMBA

from oracles import brute_surface

BACKENDS = ["numpy"] + (["numba"] if HAVE_NUMBA else [])


@pytest.mark.parametrize("backend", BACKENDS)
def test_surface_matches_neighbour_loop(backend, rng):
    for _ in range(30):
        shape = tuple(rng.integers(1, 9, size=3))
        m = rng.random(shape) < 0.6
        got = np.argwhere(_kernels.surface_mask(m, backend))
        assert np.array_equal(got, brute_surface(m))


@pytest.mark.parametrize("backend", BACKENDS)
def test_squared_edt_is_exact(backend, rng):
    for _ in range(40):
        shape = tuple(rng.integers(1, 12, size=3))
        seeds = rng.random(shape) < rng.uniform(0.005, 0.3)
        if not seeds.any():
            seeds[tuple(rng.integers(0, s) for s in shape)] = True
        got = _kernels.squared_edt(seeds, backend)
        pts = np.argwhere(seeds)
        grid = np.indices(shape).reshape(3, -1).T
        want = ((grid[:, None, :] - pts[None]) ** 2).sum(-1).min(1).reshape(shape)
        assert got.dtype == np.int64
        assert np.array_equal(got, want)


def test_empty_seed_set():
    out = _kernels.squared_edt(np.zeros((4, 4, 4), bool), "numpy")
    assert (out == -1).all()


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba disabled")
def test_backends_agree_on_large_volume():
    m = np.zeros((60, 50, 30), bool)
    m[10:45, 12:40, 5:25] = True
    s = _kernels.surface_mask(m, "numba")
    assert np.array_equal(s, _kernels.surface_mask(m, "numpy"))
    assert np.array_equal(_kernels.squared_edt(s, "numba"), _kernels.squared_edt(s, "numpy"))


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.surface_mask(np.ones((2, 2, 2)), "cuda")
