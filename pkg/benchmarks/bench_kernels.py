"""Time the metric kernels on both backends.

    python benchmarks/bench_kernels.py [--shape 170 132 80] [--repeat 5]

The numba timings exclude the first (compiling) call. Both backends are
checked for identical output before timing.
"""

import argparse
import time

import numpy as np

from daf3d import _kernels
from daf3d.volume_data import PhantomSpec, synth_phantom


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shape", type=int, nargs=3, default=(170, 132, 80))
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    shape = tuple(args.shape)
    semi = tuple(0.3 * n for n in shape)
    _, mask = synth_phantom(PhantomSpec(seed=0, shape=shape, semi_axes_min=tuple(0.6 * s for s in semi),
                                        semi_axes_max=semi))
    m = mask.data.astype(bool)
    surf = _kernels.surface_mask(m, "numpy")

    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    if "numba" in backends:
        assert np.array_equal(_kernels.surface_mask(m, "numba"), surf)
        assert np.array_equal(_kernels.squared_edt(surf, "numba"), _kernels.squared_edt(surf, "numpy"))
    else:
        print("numba unavailable or disabled; timing numpy only")

    print(f"shape {shape}, {int(m.sum())} foreground voxels, {int(surf.sum())} surface voxels")
    print(f"{'kernel':<14}" + "".join(f"{b:>12}" for b in backends))
    for name, fn, arg in (("surface_mask", _kernels.surface_mask, m),
                          ("squared_edt", _kernels.squared_edt, surf)):
        row = [best_of(lambda: fn(arg, b), args.repeat) for b in backends]
        print(f"{name:<14}" + "".join(f"{t * 1e3:>10.1f}ms" for t in row))


if __name__ == "__main__":
    main()
