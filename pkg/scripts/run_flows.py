"""Flow comparison: ratio of final to initial W2^2 per functional and seed, written as CSV."""

import argparse
import csv
import sys

import numpy as np

from psot.experiments import FlowExperiment, describe


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--functionals", default="minps,ps,sw,es")
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--out", default="flows.csv")
    args = p.parse_args()
    exp = FlowExperiment(iterations=args.iterations)
    print(f"setup: {describe(exp)}", file=sys.stderr)
    rows = [exp.run(f, s) for s in range(args.seeds) for f in args.functionals.split(",")]
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for f in args.functionals.split(","):
        r = np.array([row["ratio"] for row in rows if row["functional"] == f])
        print(f"{f:>6}: median ratio {np.median(r):.2e}, below 1e-2 in {int(np.sum(r < 1e-2))}/{len(r)} seeds")


if __name__ == "__main__":
    main()
