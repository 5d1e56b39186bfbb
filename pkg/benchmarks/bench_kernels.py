"""Compare the compiled and numpy statevector kernels.

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 64]
"""
import argparse
import time

import numpy as np

from qadv import _backend
from qadv.featuremap import angle_matrix, compact_map, large_map


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if not _backend.HAVE_CYTHON:
        print("compiled extension not built; only the numpy backend is timed")
    rng = np.random.default_rng(args.seed)
    cases = [("compact 4q", compact_map(4, 2)), ("compact 10q", compact_map()),
             ("large 10q", large_map()), ("compact 12q", compact_map(12, 4))]
    print(f"{'map':<14}{'ops':>6}{'batch':>7}{'python s':>11}{'cython s':>11}{'speedup':>9}")
    for name, spec in cases:
        X = rng.uniform(-1, 1, (args.batch, spec.data_dim))
        angles = angle_matrix(spec, X, rng.uniform(0, 2 * np.pi, spec.param_dim))
        tpl = spec.template

        def run(backend):
            return _backend.simulate_batch(spec.n_qubits, tpl.kinds, tpl.targets, tpl.controls,
                                           angles, backend=backend)
        t_py = best_time(lambda: run("python"), args.repeat)
        if _backend.HAVE_CYTHON:
            assert np.allclose(run("python"), run("cython"), atol=1e-12)
            t_cy = best_time(lambda: run("cython"), args.repeat)
            print(f"{name:<14}{len(tpl.kinds):>6}{args.batch:>7}{t_py:>11.4f}{t_cy:>11.4f}{t_py / t_cy:>8.1f}x")
        else:
            print(f"{name:<14}{len(tpl.kinds):>6}{args.batch:>7}{t_py:>11.4f}{'-':>11}{'-':>9}")


if __name__ == "__main__":
    main()
