"""Train a projection network from scratch and measure what it learned.

Uses an existing dataset (see make_dataset.py), trains with the rollout
divergence loss, then scores the result on the dataset frames against the
no-projection baseline: the trained network should remove most of the
divergence a single unprojected step creates.
"""

import argparse

import numpy as np

from macfluid.convnet import NetArch, init_params
from macfluid.datagen import load_dataset
from macfluid.evaluate import one_step_loss
from macfluid.formats import save_model
from macfluid.sim import ConvnetProjection, NoProjection
from macfluid.training import TrainConfig, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="dataset")
    ap.add_argument("--out", default="model.fnm")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--features", type=int, default=16)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    frames = [f for scene in load_dataset(args.data) for f in scene.frames]
    print(f"{len(frames)} training frames from {args.data}")

    arch = NetArch(features=args.features, kernel=3)
    cfg = TrainConfig(arch=arch, lr=args.lr)
    params, stats = train(frames, cfg, epochs=args.epochs, seed=args.seed)
    for s in stats:
        print(f"epoch {s.epoch}: loss {s.mean_loss:.4e}  "
              f"div@1 {s.mean_div_step1:.4e}  div@n {s.mean_div_stepn:.4e}")
    save_model(args.out, params)
    print(f"saved {params.n_params} parameters to {args.out}")

    def score(projection):
        return float(np.mean([one_step_loss(f, projection) for f in frames]))

    base = score(NoProjection())
    raw = score(ConvnetProjection(init_params(arch, np.random.SeedSequence(args.seed))))
    fit = score(ConvnetProjection(params))
    print(f"one-step weighted divergence: none {base:.4e}  "
          f"untrained {raw:.4e}  trained {fit:.4e} "
          f"({100 * fit / base:.1f}% of baseline)")


if __name__ == "__main__":
    main()
