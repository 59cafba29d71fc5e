"""Spearman correlation of certified radius with per-sample curvature metrics.

Trains the preset model for each seed, computes gradient norm, input-Hessian
spectral norm and local Lipschitz estimates on the test points, and writes
the full analysis (radius groups, threshold histograms, correlations) per seed.
"""

import argparse
from dataclasses import replace
from pathlib import Path

from dpcert import config as C
from dpcert import pipeline as P


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="table1-trend", help="preset name or JSON config path")
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--out", default="runs/radius-correlation")
    args = parser.parse_args()

    base = C.preset(args.config) if args.config in C.PRESETS else C.load(args.config)
    for seed in range(args.seeds):
        cfg = replace(base, dataset=replace(base.dataset, seed=seed), training=replace(base.training, seed=seed))
        out = Path(args.out) / f"seed{seed}"
        ckpt = P.run_train(cfg, out).checkpoint
        P.run_certify(cfg, ckpt, out)
        P.run_metrics(cfg, ckpt, out)
        corr = P.run_analyze(cfg, out)["spearman"]
        print(f"seed {seed}: " + ", ".join(f"{k}={v:+.3f}" if v is not None else f"{k}=n/a"
                                          for k, v in corr.items()))


if __name__ == "__main__":
    main()
