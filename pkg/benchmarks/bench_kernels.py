"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--size 128] [--repeat 20] [--threads 1]

Times the three hot kernels on their own and one full loss+gradient
evaluation at the chosen image size, for each available backend.
"""
import argparse
import os
import timeit

import numpy as np

from occflow import kernels
from occflow.loss import FlowObjective, LossConfig
from occflow.synth import translate_scene


def _best(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_backend(name, size, repeat):
    impl = kernels.get_backend(name)
    threads = kernels.num_threads()
    rng = np.random.default_rng(0)
    sc = translate_scene(size, 2, 1, seed=0, channels=3)
    flow = rng.normal(0, 2, (size, size, 2))
    weight = rng.random((size, size))
    obj = FlowObjective(*sc.triplet, LossConfig())
    side_args = (obj._sources["f"], flow, obj.curr, obj._target_grads, obj._target_masks,
                 len(obj.cfg.directions), obj.cfg.epsilon, obj.cfg.kappa, True, threads)

    saved = kernels._impl
    kernels._impl = impl
    try:
        return {
            "bilinear_sample": _best(lambda: impl.bilinear_sample(sc.curr, flow, threads), repeat),
            "smooth_second_order": _best(lambda: impl.smooth_second_order(flow, weight, 1, 1, True), repeat),
            "photometric_side": _best(lambda: impl.photometric_side(*side_args), repeat),
            "objective+gradient": _best(lambda: obj.evaluate(-flow, flow, need_grad=True), repeat),
        }
    finally:
        kernels._impl = saved


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    os.environ["OCCFLOW_THREADS"] = str(args.threads)

    results = {"python": bench_backend("python", args.size, args.repeat)}
    try:
        results["cython"] = bench_backend("cython", args.size, args.repeat)
    except ImportError:
        print("compiled kernels not built; timing the numpy fallback only")

    print(f"{args.size}x{args.size}x3, best of {args.repeat}, {args.threads} thread(s); times in ms")
    print(f"{'kernel':<22}{'python':>10}{'cython':>10}{'speedup':>10}")
    for kernel, t_py in results["python"].items():
        row = f"{kernel:<22}{1e3 * t_py:>10.2f}"
        if "cython" in results:
            t_cy = results["cython"][kernel]
            row += f"{1e3 * t_cy:>10.2f}{t_py / t_cy:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
