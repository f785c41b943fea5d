"""Hidden-unit report for a trained net: filter montages, entropy and covariance spectra.

    python3 scripts/inspect_units.py runs/desk/run/model.mlpd runs/desk/test runs/desk/inspect
"""

import argparse
import sys
from pathlib import Path

from mlpdenoise import cli


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("model")
    p.add_argument("images")
    p.add_argument("out_dir")
    p.add_argument("--sigma", type=float, default=25.0)
    args = p.parse_args()

    out = Path(args.out_dir)
    common = ["--model", args.model]
    sample = ["--images", args.images, "--sigma", str(args.sigma), "--n", "20000", "--seed", "77"]
    jobs = [
        ["filters", *common, "--out", str(out / "filters.png")],
        ["output-patterns", *common, "--out", str(out / "patterns.png")],
        ["entropy", *common, *sample, "--out", str(out / "entropy.csv")],
        ["histogram", *common, *sample, "--out", str(out / "histogram.csv")],
        ["covariance", *common, *sample, "--out", str(out / "covariance.csv")],
        ["spectrum", *common, "--layer", "0", "--out", str(out / "spectrum.csv")],
    ]
    for job in jobs:
        code = cli.run(["analyze", *job])
        if code:
            sys.exit(code)
    print(f"wrote {len(jobs)} reports to {out}")


if __name__ == "__main__":
    main()
