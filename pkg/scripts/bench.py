"""Per-cloud sampling time of a trained classification sampler, generate-only vs matched.

    python3 scripts/bench.py [--sizes 8,32,128] [--repeats 30]
"""

import argparse

from ptsample.experiments import Pipeline
from ptsample.training import bench


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="8,32,128")
    ap.add_argument("--repeats", type=int, default=30)
    args = ap.parse_args()
    sizes = tuple(int(s) for s in args.sizes.split(","))

    pipe = Pipeline.classification()
    params, _ = pipe.sampler(pipe.config(m=32))
    for row in bench(params, pipe.test.clouds, sizes, repeats=args.repeats).rows:
        print(f"{row[2]:<18} m={row[3]:<4} {row[4] * 1e3:8.3f} ms")


if __name__ == "__main__":
    main()
