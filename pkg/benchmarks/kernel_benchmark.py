"""Compare the compiled kernels against the pure-numpy fallback.

Run:  python benchmarks/kernel_benchmark.py
"""

import time

import numpy as np

from binpick.backend import get_kernels
from binpick.physics import PhysicsParams, RigidBody, World
from binpick.rotation import random_quat, quat_to_mat


def _random_shapes(n, rng):
    pos = rng.uniform(-0.05, 0.05, size=(n, 3))
    pos[:, 2] = rng.uniform(0.0, 0.04, size=n)
    rots = np.array([quat_to_mat(random_quat(rng)) for _ in range(n)])
    halves = rng.uniform(0.01, 0.03, size=(n, 3))
    pairs = np.array([(i, j) for i in range(n) for j in range(i + 1, n)],
                     dtype=np.intp)
    return pos, rots, halves, pairs


def bench_collide(kr, reps=50):
    rng = np.random.default_rng(0)
    pos, rots, halves, pairs = _random_shapes(24, rng)
    kr.collide_pairs(pos, rots, halves, pairs)  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        kr.collide_pairs(pos, rots, halves, pairs)
    return (time.perf_counter() - t0) / reps


def bench_render(kr, reps=20):
    rng = np.random.default_rng(1)
    v0 = rng.uniform(-0.08, 0.08, size=(300, 3))
    v1 = v0 + rng.uniform(-0.02, 0.02, size=(300, 3))
    v2 = v0 + rng.uniform(-0.02, 0.02, size=(300, 3))
    kr.render_heightmap(-0.1, -0.1, 0.2 / 128, 128, 128, v0, v1, v2, 0.0)
    t0 = time.perf_counter()
    for _ in range(reps):
        kr.render_heightmap(-0.1, -0.1, 0.2 / 128, 128, 128, v0, v1, v2, 0.0)
    return (time.perf_counter() - t0) / reps


def bench_world_step(backend, steps=400):
    import os
    os.environ["BINPICK_BACKEND"] = backend
    rng = np.random.default_rng(2)
    world = World(params=PhysicsParams())
    for i in range(8):
        body = RigidBody(f"b{i}", "dynamic",
                         [(np.zeros(3), np.eye(3),
                           np.array([0.015, 0.015, 0.015]))],
                         pos=np.array([rng.uniform(-0.05, 0.05),
                                       rng.uniform(-0.05, 0.05),
                                       0.05 + 0.04 * i]),
                         quat=random_quat(rng))
        world.add_body(body)
    world.run(200)  # let the pile form
    t0 = time.perf_counter()
    world.run(steps)
    return (time.perf_counter() - t0) / steps


def main():
    rows = []
    for name in ("pure", "native"):
        try:
            kr = get_kernels(name)
        except ImportError:
            print(f"{name}: extension not available, skipped")
            continue
        rows.append((name, bench_collide(kr), bench_render(kr)))
    print(f"{'backend':<8} {'collide(24 bodies)':>20} {'render(300 tris)':>18}")
    for name, tc, tr in rows:
        print(f"{name:<8} {tc * 1e3:>17.3f} ms {tr * 1e3:>15.3f} ms")
    if len(rows) == 2:
        print(f"speedup: collide x{rows[0][1] / rows[1][1]:.1f}, "
              f"render x{rows[0][2] / rows[1][2]:.1f}")
    print()
    for name in ("pure", "native"):
        try:
            get_kernels(name)
        except ImportError:
            continue
        # fresh interpreter state is not needed; World picks kernels per call
        import binpick.backend as bk
        old = bk.kernels
        bk.kernels = get_kernels(name)
        try:
            t = bench_world_step(name)
        finally:
            bk.kernels = old
        print(f"world step ({name}): {t * 1e3:.3f} ms")


if __name__ == "__main__":
    main()
