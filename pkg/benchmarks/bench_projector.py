"""Time forward and back projection with the compiled and NumPy kernels.

    python benchmarks/bench_projector.py [--repeat N]
"""
import argparse
import time

import numpy as np

from inrct import _joseph_py
from inrct._backend import BACKEND, kernels
from inrct.grid import ConeBeamGeometry, FanBeamGeometry, VoxelGrid, covering_det_spacing, full_circle_angles
from inrct.projector import Projector


def cases():
    g2 = VoxelGrid((128, 128), 2.0)
    yield "2d 128^2, 60x192", g2, FanBeamGeometry(full_circle_angles(60), 500.0, 1000.0, 192,
                                                   covering_det_spacing(g2, 500.0, 1000.0, 192))
    g3 = VoxelGrid((64, 64, 64), 2.0)
    du = covering_det_spacing(g3, 500.0, 1000.0, 96)
    yield "3d 64^3, 30x64x96", g3, ConeBeamGeometry(full_circle_angles(30), 500.0, 1000.0, 96, du, 64, 1.2 * du)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"default backend: {BACKEND}")
    print(f"{'case':22s} {'op':8s} {'compiled s':>11s} {'numpy s':>9s} {'speedup':>8s}")
    rng = np.random.default_rng(0)
    for name, grid, geom in cases():
        P = Projector(grid, geom)
        x = rng.random(grid.shape)
        y = rng.random(geom.sino_shape)
        for op, fn in (("forward", lambda k: P.forward(x, kernels=k)), ("back", lambda k: P.back(y, kernels=k))):
            a = best_of(lambda: fn(kernels), args.repeat) if BACKEND == "cython" else float("nan")
            b = best_of(lambda: fn(_joseph_py), args.repeat)
            print(f"{name:22s} {op:8s} {a:11.4f} {b:9.4f} {b / a:8.1f}")


if __name__ == "__main__":
    main()
