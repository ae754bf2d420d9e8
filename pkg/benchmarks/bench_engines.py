"""Wall-clock comparison of the numba and numpy integration engines.

Integrates a half-cell-offset grid of initial conditions for each catalog
field with both engines, reports seconds, speed-up and the largest
endpoint disagreement.  JIT compilation is excluded by a warm-up call.

    python3 benchmarks/bench_engines.py --grid 4 8 16 --T 100
"""
import argparse
import json
import time

import numpy as np

from rotaflow._accel import USE_NUMBA
from rotaflow.fields import catalog_build
from rotaflow.integrate import IntegratorConfig, run_batch
from rotaflow.torus import uniform_grid

FIELDS = ["constant", "shear_41_perturbed", "vanishing_segment_42", "gradient_flow",
          "current_35", "conductivity"]


def timed(field, x0s, T, config, engine, threads, repeat):
    best = np.inf
    final = None
    for _ in range(repeat):
        start = time.perf_counter()
        _, _, final, _ = run_batch(field, x0s, T, config, np.array([T]), threads, engine)
        best = min(best, time.perf_counter() - start)
    return best, final


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fields", nargs="+", default=FIELDS)
    ap.add_argument("--grid", nargs="+", type=int, default=[4, 8, 16])
    ap.add_argument("--T", type=float, default=100.0)
    ap.add_argument("--tol", type=float, default=1e-10)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write the rows to this file")
    args = ap.parse_args(argv)
    if not USE_NUMBA:
        ap.error("numba is disabled (ROTAFLOW_NO_NUMBA) or missing; nothing to compare")

    config = IntegratorConfig(abs_tol=args.tol, rel_tol=args.tol)
    rows = []
    print(f"{'field':<22}{'n':>6}{'numba s':>11}{'numpy s':>11}{'speed-up':>10}{'max diff':>11}")
    for name in args.fields:
        field = catalog_build(name)
        run_batch(field, uniform_grid(2, 2), 1.0, config, np.array([1.0]), 1, "numba")
        for g in args.grid:
            x0s = uniform_grid(g, 2)
            t_nb, f_nb = timed(field, x0s, args.T, config, "numba", args.threads, args.repeat)
            t_np, f_np = timed(field, x0s, args.T, config, "numpy", args.threads, args.repeat)
            diff = float(np.abs(f_nb - f_np).max())
            rows.append({"field": name, "points": len(x0s), "T": args.T, "numba_s": t_nb,
                         "numpy_s": t_np, "speedup": t_np / t_nb, "max_diff": diff})
            print(f"{name:<22}{len(x0s):>6}{t_nb:>11.4f}{t_np:>11.4f}{t_np / t_nb:>10.1f}"
                  f"{diff:>11.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
