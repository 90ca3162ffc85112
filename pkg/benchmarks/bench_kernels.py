"""Compare the compiled and pure-Python kernels on a 64x64 grid with 121 displacements.

    python benchmarks/bench_kernels.py [--repeat N] [--threads T]
"""
import argparse
import time

import numpy as np

from ensemblereg import _backend, _pykernels, rwir
from ensemblereg.core import DisplacementSet, Image, scalar_keys
from ensemblereg.interpret import lookup
from ensemblereg.scenarios import circle_ellipse_images


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    fixed, moving = circle_ellipse_images()
    disps = DisplacementSet.grid(5)
    cfg = rwir.RwirConfig()
    lik = rwir.data_likelihood(fixed, moving, disps, cfg)
    wh, wv = rwir.edge_weights(fixed, cfg)
    rhs = np.ascontiguousarray(cfg.gamma * np.moveaxis(lik.probs, 2, 0))
    x0 = np.ascontiguousarray(np.moveaxis(lik.probs, 2, 0))
    n = fixed.width * fixed.height
    values = lookup(moving.pixels, disps).reshape(-1, disps.K)
    keys = scalar_keys(values)
    weights = lik.probs.reshape(-1, disps.K)

    backends = {"python": _pykernels}
    if _backend.NAME == "cython":
        backends["cython"] = _backend.kernels
    _backend.set_num_threads(args.threads)

    print(f"grid 64x64, K={disps.K}, threads={args.threads}")
    print(f"{'kernel':<12}" + "".join(f"{b:>12}" for b in backends))
    rows = {
        "patch_ssd": lambda k: k.patch_ssd(fixed.pixels, moving.pixels, disps.vectors, cfg.patch_radius),
        "cg_solve": lambda k: k.solve_shifted_laplacian(wh, wv, cfg.gamma, rhs, x0, cfg.solver_tol,
                                                        cfg.max_iter_for(n), args.threads),
        "aggregate": lambda k: k.aggregate_rows(keys, values, weights),
    }
    for name, call in rows.items():
        line = f"{name:<12}"
        for kern in backends.values():
            line += f"{best_of(lambda: call(kern), args.repeat) * 1e3:>10.1f}ms"
        print(line)


if __name__ == "__main__":
    main()
