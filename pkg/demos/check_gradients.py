"""Compare backpropagated gradients against finite differences.

The training loss backpropagates through the whole projection step, so a
sign or indexing slip anywhere in the network plumbing shows up here as a
large relative error.  Everything runs in double precision on a reduced
configuration; single precision would drown the comparison in rounding
noise.
"""

import argparse

import numpy as np

from macfluid.convnet import NetArch, init_params
from macfluid.datagen import SceneConfig, build_scene
from macfluid.grids import GridDims
from macfluid.training import gradient_check


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--res", type=int, default=8)
    ap.add_argument("--features", type=int, default=3)
    ap.add_argument("--checks", type=int, default=120)
    ap.add_argument("--eps", type=float, default=1e-5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    state, _ = build_scene(SceneConfig(dims=GridDims(args.res, args.res),
                                       seed=args.seed))
    params = init_params(NetArch(features=args.features, kernel=3),
                         np.random.SeedSequence(args.seed))
    err = gradient_check(params, state, eps=args.eps,
                         n_checked=args.checks, seed=args.seed)
    verdict = "ok" if err <= 1e-4 else "SUSPECT"
    print(f"max relative error over {args.checks} parameters: {err:.3e} [{verdict}]")


if __name__ == "__main__":
    main()
