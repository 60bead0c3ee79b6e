"""Rejection vs birth-death MCMC on a few windows: KS p-values and timings.

    python3 scripts/sampler_agreement.py --c 0.5 --n 10000
"""
import argparse
import time

import numpy as np
from scipy import stats

from vgibbs import MarkMeasure, PartitionSpec, Region, hard_range
from vgibbs.specification import MCMCKnobs, Model, sample_gibbs_mcmc_batch, sample_gibbs_rejection_batch


def tv(batch):
    return np.bincount(batch.owner, weights=np.linalg.norm(batch.marks, axis=1), minlength=len(batch))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--c", type=float, default=0.5)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    spec = PartitionSpec(1, 1.0, 1.0)
    model = Model(spec, MarkMeasure.positive(1, 1.0, 2.0, 1e-3), hard_range(args.c, 1.0))
    print(f"{'cubes':>5} {'rej s':>7} {'acc rate':>9} {'mcmc s':>7} {'p_tv':>6} {'p_n':>6}")
    for width, thin in ((1, 150), (3, 400)):
        region = Region.box(spec, -(width // 2), width // 2)
        t0 = time.perf_counter()
        rb = sample_gibbs_rejection_batch(model, region, None, args.n, np.random.default_rng(args.seed))
        t1 = time.perf_counter()
        mc, _ = sample_gibbs_mcmc_batch(model, region, None, args.n, np.random.default_rng(args.seed + 1),
                                        MCMCKnobs(burn_in=10 * thin, thin=thin), chains=1000)
        t2 = time.perf_counter()
        p_tv = stats.ks_2samp(tv(rb.batch), tv(mc)).pvalue
        p_n = stats.ks_2samp(rb.batch.counts, mc.counts).pvalue
        print(f"{width:5d} {t1 - t0:7.1f} {rb.acceptance_rate:9.4f} {t2 - t1:7.1f} {p_tv:6.3f} {p_n:6.3f}")


if __name__ == "__main__":
    main()
