"""Classification sweep: baselines, supervised / KD / joint samplers at m = 8..64 (128 for joint).

    python3 scripts/classification.py [--out results/classification.csv]
"""

import argparse
import logging

from ptsample.experiments import Pipeline, baseline_table
from ptsample.training import Metrics, SamplerSpec

SIZES = (8, 16, 32, 64)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=None)
    ap.add_argument("-v", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.v else logging.WARNING)

    pipe = Pipeline.classification()
    rows = {name: vals for name, vals in baseline_table(pipe, SIZES + (128,)).items()}
    for variant in ("g", "m"):
        rows[f"apsnet-{variant}"] = {m: pipe.evaluate(SamplerSpec("apsnet", pipe.sampler(pipe.config(m=m))[0],
                                                                  variant), (m,))[m] for m in SIZES}
    rows["apsnet-kd"] = {16: pipe.evaluate(SamplerSpec("apsnet", pipe.sampler(pipe.config("kd", m=16))[0]), (16,))[16]}
    joint, _ = pipe.sampler(pipe.config("joint"))
    rows["apsnet-joint"] = pipe.evaluate(SamplerSpec("apsnet", joint), SIZES + (128,))

    print(f"full-cloud accuracy {pipe.full_score():.3f} ({len(pipe.train)} train / {len(pipe.test)} test)")
    cols = SIZES + (128,)
    print(f"{'method':<14}" + "".join(f"{m:>8}" for m in cols))
    out = Metrics()
    for name, vals in rows.items():
        print(f"{name:<14}" + "".join(f"{vals[m]:8.3f}" if m in vals else f"{'-':>8}" for m in cols))
        for m, v in vals.items():
            out.add(-1, "test", f"{name}:accuracy", m, v)
    if args.out:
        out.write_csv(args.out)


if __name__ == "__main__":
    main()
