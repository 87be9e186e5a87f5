"""Side-by-side plume runs: how each projection backend holds up.

Rolls the canonical buoyant plume once per backend and prints the final
divergence and speed statistics.  Pass a trained model to add the learned
projection to the lineup; pass --pgm to dump grayscale density frames for
each backend under OUT/<name>/.
"""

import argparse
from pathlib import Path

from macfluid.evaluate import parse_backend
from macfluid.grids import GridDims
from macfluid.sim import PgmFrameSink, plume_scenario, run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--res", type=int, default=64)
    ap.add_argument("--frames", type=int, default=128)
    ap.add_argument("--model", help="trained model file; adds convnet:<model>")
    ap.add_argument("--pgm", action="store_true", help="write density frames")
    ap.add_argument("--out", default="plume-out", help="frame output root")
    args = ap.parse_args()

    specs = ["pcg:1e-4", "jacobi:34", "none"]
    if args.model:
        specs.append(f"convnet:{args.model}")

    print(f"{args.res}x{args.res} plume, {args.frames} frames")
    print(f"{'backend':>14}  {'mean |div|':>11}  {'max |div|':>11}  {'max speed':>11}")
    for spec in specs:
        name, projection = parse_backend(spec)
        state, cfg = plume_scenario(GridDims(args.res, args.res),
                                    projection=projection)
        sinks = ()
        if args.pgm:
            sinks = (PgmFrameSink(Path(args.out) / name),)
        _, metrics = run(state, cfg, args.frames, sinks)
        last = metrics[-1]
        print(f"{name:>14}  {last.mean_div_l2:>11.3e}  {last.max_div:>11.3e}"
              f"  {last.max_speed:>11.3e}")


if __name__ == "__main__":
    main()
