"""Timing sweep over n for minPS, ES and SW (thin wrapper over ``psot bench``)."""

import argparse
import sys

from psot.cli import main as cli


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n-list", default="1e3,1e4,1e5,1e6")
    p.add_argument("--d", default="3")
    p.add_argument("--L", default="50")
    p.add_argument("--out", default="bench.csv")
    args = p.parse_args()
    return cli(["bench", "--n-list", args.n_list, "--d", args.d, "--L", args.L, "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
