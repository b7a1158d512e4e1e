"""Hot loops of the evaluation engine.

Each kernel has a numba implementation and a numpy/scipy implementation that
return identical results. ``backend=None`` picks numba when it is enabled.
"""

import numpy as np
from scipy import ndimage

from ._accel import HAVE_NUMBA, njit

_SIX = ndimage.generate_binary_structure(3, 1)


def _resolve(backend):
    if backend is None:
        return "numba" if HAVE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is disabled or missing")
    return backend


# --------------------------------------------------------------------------
# surface extraction: foreground voxels with a background 6-neighbour,
# out-of-bounds counts as background
# --------------------------------------------------------------------------

@njit(cache=True)
def _surface_numba(m):
    nx, ny, nz = m.shape
    out = np.zeros(m.shape, dtype=np.bool_)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not m[i, j, k]:
                    continue
                if (i == 0 or i == nx - 1 or j == 0 or j == ny - 1 or k == 0 or k == nz - 1
                        or not m[i - 1, j, k] or not m[i + 1, j, k]
                        or not m[i, j - 1, k] or not m[i, j + 1, k]
                        or not m[i, j, k - 1] or not m[i, j, k + 1]):
                    out[i, j, k] = True
    return out


def _surface_numpy(m):
    eroded = ndimage.binary_erosion(m, structure=_SIX, border_value=0)
    return m & ~eroded


def surface_mask(m, backend=None):
    m = np.ascontiguousarray(m, dtype=bool)
    if m.ndim != 3:
        raise ValueError(f"expected a 3D mask, got shape {m.shape}")
    if _resolve(backend) == "numba":
        return _surface_numba(m)
    return _surface_numpy(m)


# --------------------------------------------------------------------------
# exact squared Euclidean distance transform to a seed set
# (separable lower-envelope-of-parabolas algorithm, integer exact)
# --------------------------------------------------------------------------

@njit(cache=True)
def _edt_1d(f, n, d, v, z):
    # lower envelope over the finite entries of f only
    k = -1
    s = 0.0
    for q in range(n):
        if f[q] == np.inf:
            continue
        while k >= 0:
            vk = v[k]
            s = ((f[q] + q * q) - (f[vk] + vk * vk)) / (2.0 * q - 2.0 * vk)
            if s <= z[k]:
                k -= 1
            else:
                break
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
        else:
            k += 1
            v[k] = q
            z[k] = s
        z[k + 1] = np.inf
    if k < 0:
        for q in range(n):
            d[q] = np.inf
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        dq = q - v[k]
        d[q] = dq * dq + f[v[k]]


@njit(cache=True)
def _sqedt_numba(seeds):
    nx, ny, nz = seeds.shape
    g = np.empty((nx, ny, nz), dtype=np.float64)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                g[i, j, k] = 0.0 if seeds[i, j, k] else np.inf
    nmax = max(nx, ny, nz)
    f = np.empty(nmax, dtype=np.float64)
    d = np.empty(nmax, dtype=np.float64)
    v = np.empty(nmax, dtype=np.int64)
    z = np.empty(nmax + 1, dtype=np.float64)
    for j in range(ny):
        for k in range(nz):
            for i in range(nx):
                f[i] = g[i, j, k]
            _edt_1d(f, nx, d, v, z)
            for i in range(nx):
                g[i, j, k] = d[i]
    for i in range(nx):
        for k in range(nz):
            for j in range(ny):
                f[j] = g[i, j, k]
            _edt_1d(f, ny, d, v, z)
            for j in range(ny):
                g[i, j, k] = d[j]
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                f[k] = g[i, j, k]
            _edt_1d(f, nz, d, v, z)
            for k in range(nz):
                g[i, j, k] = d[k]
    out = np.empty((nx, ny, nz), dtype=np.int64)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                out[i, j, k] = np.int64(g[i, j, k]) if g[i, j, k] < np.inf else -1
    return out


def _sqedt_numpy(seeds):
    # scipy's transform is exact in its nearest-feature indices; the squared
    # distance is recomputed from them in integers
    idx = ndimage.distance_transform_edt(~seeds, return_distances=False, return_indices=True)
    grid = np.indices(seeds.shape)
    return ((idx - grid).astype(np.int64) ** 2).sum(axis=0)


def squared_edt(seeds, backend=None):
    """Integer squared distance from every voxel to the nearest ``True`` voxel.

    Returns -1 everywhere when ``seeds`` is empty.
    """
    seeds = np.ascontiguousarray(seeds, dtype=bool)
    if seeds.ndim != 3:
        raise ValueError(f"expected a 3D array, got shape {seeds.shape}")
    if not seeds.any():
        return np.full(seeds.shape, -1, dtype=np.int64)
    if _resolve(backend) == "numba":
        return _sqedt_numba(seeds)
    return _sqedt_numpy(seeds)
