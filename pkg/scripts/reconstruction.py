"""Reconstruction sweep: NRE of APSNet-G/M, FPS and random sampling at m = 8, 16, 32.

    python3 scripts/reconstruction.py [--out results/reconstruction.csv]
"""

import argparse
import logging

from ptsample.experiments import Pipeline, baseline_table
from ptsample.training import Metrics, SamplerSpec

SIZES = (8, 16, 32)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=None)
    ap.add_argument("-v", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.v else logging.WARNING)

    pipe = Pipeline.reconstruction()
    rows = baseline_table(pipe, SIZES, methods=("random", "fps"))
    for variant in ("g", "m"):
        rows[f"apsnet-{variant}"] = {m: pipe.evaluate(SamplerSpec("apsnet", pipe.sampler(pipe.config(m=m))[0],
                                                                  variant), (m,))[m] for m in SIZES}
    print(f"{'method':<10}" + "".join(f"{m:>8}" for m in SIZES))
    out = Metrics()
    for name, vals in rows.items():
        print(f"{name:<10}" + "".join(f"{vals[m]:8.2f}" for m in SIZES))
        for m, v in vals.items():
            out.add(-1, "test", f"{name}:nre", m, v)
    if args.out:
        out.write_csv(args.out)


if __name__ == "__main__":
    main()
