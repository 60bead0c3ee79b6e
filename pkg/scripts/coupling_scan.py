"""Partition function, Jensen bound and one-cube Lyapunov bound across couplings.

    python3 scripts/coupling_scan.py --n 20000
"""
import argparse

import numpy as np

from vgibbs import MarkMeasure, PartitionSpec, Region, hard_range
from vgibbs.estimates import exp_moment_check
from vgibbs.marks import DivergentLaplaceExponent
from vgibbs.rng import stream
from vgibbs.specification import Model, partition_function_mc


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    spec = PartitionSpec(1, 1.0, 1.0)
    mm = MarkMeasure.positive(1, 1.0, 2.0, 1e-3)
    one = Region.of(spec, [(0,)])
    print(f"{'c':>6} {'Z':>9} {'se':>8} {'jensen':>9} {'E exp(A V^2)':>13} {'bound':>10}")
    for c in (0.01, 0.02, 0.05, 0.1, 0.2, 0.5):
        model = Model(spec, mm, hard_range(c, 1.0))
        z = partition_function_mc(model, Region.box(spec, -1, 1), None, args.n, stream(args.seed, "z", str(c)))
        try:
            rep = exp_moment_check(model, (0,), one, None, model.A, args.n, stream(args.seed, "lyap", str(c)))
            lyap = f"{rep.lhs_estimate.value:13.4f} {rep.rhs_bound:10.4g}"
        except DivergentLaplaceExponent:
            lyap = f"{'-':>13} {'divergent':>10}"
        print(f"{c:6.2f} {z.value:9.4g} {z.stderr:8.2g} {z.jensen_lower:9.4g} {lyap}")


if __name__ == "__main__":
    main()
