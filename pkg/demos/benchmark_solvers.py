"""Time the projection backends across grid resolutions.

Each backend projects the same randomized velocity field; the timed
repetitions must reproduce the warmup result bitwise, so the numbers also
double as a determinism check.  Pass a model file to time the learned
projection alongside the classical solvers.
"""

import argparse

from macfluid.evaluate import bench, parse_backend
from macfluid.grids import GridDims


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--res", default="32,64,128", help="comma-separated sides")
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--model", help="trained model file; adds convnet:<model>")
    args = ap.parse_args()

    specs = ["jacobi:34", "pcg:1e-4", "exact"]
    if args.model:
        specs.append(f"convnet:{args.model}")
    dims = [GridDims(int(s), int(s)) for s in args.res.split(",")]

    print(f"{'backend':>14}  {'grid':>9}  {'median ms':>10}")
    for spec in specs:
        name, projection = parse_backend(spec)
        sizes = [d for d in dims if spec != "exact" or d.nx * d.ny <= 64 * 64]
        for row in bench(projection, sizes, repetitions=args.reps, name=name):
            print(f"{row.backend:>14}  {row.nx:>4}x{row.ny:<4}  "
                  f"{row.median_ms:>10.3f}")


if __name__ == "__main__":
    main()
