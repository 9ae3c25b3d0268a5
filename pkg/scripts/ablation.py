"""Sampling-loss ablation on reconstruction at m=16, averaged over seeds.

    python3 scripts/ablation.py [--seeds 0,1,2] [--m 16]
"""

import argparse

import numpy as np

from ptsample.experiments import Pipeline, with_loss
from ptsample.training import SamplerSpec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--m", type=int, default=16)
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    pipe = Pipeline.reconstruction()
    arms = {"default": with_loss(pipe), "beta=0": with_loss(pipe, beta=0.0), "gamma=0": with_loss(pipe, gamma=0.0),
            "delta=1": with_loss(pipe, delta=1.0)}
    for name, loss in arms.items():
        vals = []
        for s in seeds:
            params, _ = pipe.sampler(pipe.config(m=args.m, loss=loss, seed=s))
            vals.append(pipe.evaluate(SamplerSpec("apsnet", params), (args.m,))[args.m])
        print(f"{name:<8} mean {np.mean(vals):.3f}  std {np.std(vals):.3f}  " + " ".join(f"{v:.3f}" for v in vals))


if __name__ == "__main__":
    main()
