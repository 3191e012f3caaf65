"""minPS triangle defect on five rotated copies of the three-cloud example, over L and seeds."""

import argparse
import math

from psot.fixtures import minps_triangle_defect


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--L", type=lambda s: [int(float(x)) for x in s.split(",")], default=[100, 1000, 10000])
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--step", type=float, default=math.pi / 5, help="rotation step in radians")
    args = p.parse_args()
    print("L,seed,ac,cb,ab,defect")
    for L in args.L:
        for seed in range(args.seeds):
            defect, (ac, cb, ab) = minps_triangle_defect(L=L, seed=seed, step=args.step)
            print(f"{L},{seed},{ac:.6f},{cb:.6f},{ab:.6f},{defect:.6f}")


if __name__ == "__main__":
    main()
