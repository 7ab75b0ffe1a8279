"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 2000] [--repeat 5]

Inputs match one filter step at the default settings: n candidate poses,
a 64-point arc, two cameras, five detections per camera.
"""
import argparse
import timeit

import numpy as np

from needletrack import _kernels
from needletrack.camera import StereoRig, arc_template
from needletrack.observation import _pack_cameras
from needletrack.se3 import axis_angle_to_matrix


def inputs(n, rng):
    axis = rng.standard_normal((n, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    R = axis_angle_to_matrix(axis * rng.uniform(0, np.pi, (n, 1)))
    t = rng.uniform(-10, 10, (n, 3)) + [0, 0, 100]
    arc = np.ascontiguousarray(arc_template(5.4, 64))
    cams = _pack_cameras(StereoRig.from_params())
    det = rng.uniform(100, 156, (10, 2))
    cam_ids = np.repeat(np.arange(2, dtype=np.intc), 5)
    S = np.ascontiguousarray(rng.uniform(0, 1, (n, 4)))
    w = rng.dirichlet(np.ones(n))
    cs = np.cumsum(w)
    cs /= cs[-1]
    pos = (np.arange(n) + rng.random(n)) / n
    return {
        "loglik_batch": (R, t, arc, cams, det, cam_ids, 1 / 72, 2500 / 72, 0.0, 1.0),
        "hf_transition": (S, np.full(4, 1e-3), 9.0),
        "stratified_indices": (cs, pos),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    args_by_kernel = inputs(args.n, np.random.default_rng(0))
    impls = [("numpy", _kernels.python)]
    if _kernels.compiled is not None:
        impls.append(("cython", _kernels.compiled))
    else:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"n = {args.n}, best of {args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{name:>12}" for name, _ in impls) + ("     speedup" if len(impls) == 2 else ""))
    for kernel, kargs in args_by_kernel.items():
        times = []
        for _, mod in impls:
            fn = getattr(mod, kernel)
            times.append(min(timeit.repeat(lambda: fn(*kargs), number=1, repeat=args.repeat)))
        row = f"{kernel:<20}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
