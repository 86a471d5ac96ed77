"""Compare LSE, LASSO and LASSLE on simulated networks.

Example:
    python3 scripts/simulation_study.py --out runs/sim --reps 20 --T 10000
    python3 scripts/simulation_study.py --out runs/big --settings cluster:100:1 --reps 1

Each setting is kind:P:d; results go to <out>/mse.csv (one row per setting
and method) and <out>/replicates.csv (one row per replicate and method).
"""

import argparse
import time
from pathlib import Path

import numpy as np

from sparsevar import NetworkSpec, NoiseSpec, RunConfig, compare_methods, generate_network, simulate
from sparsevar.io import write_csv

DEFAULT_SETTINGS = ["cluster:10:1", "scale_free:10:1", "cluster:10:5", "scale_free:10:5"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--settings", nargs="+", default=DEFAULT_SETTINGS)
    ap.add_argument("--noise", nargs="+", default=["gaussian"],
                    choices=["gaussian", "student_t", "shifted_chi2"])
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--T", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cv-rule", choices=["min", "1se"], default="1se")
    args = ap.parse_args(argv)

    cfg = RunConfig(cv_rule=args.cv_rule, seed=args.seed)
    summary, per_rep = [], []
    for noise in args.noise:
        for setting in args.settings:
            kind, P, d = setting.split(":")
            P, d = int(P), int(d)
            truth = generate_network(NetworkSpec(kind, P=P, d=d), seed=args.seed)
            t0 = time.perf_counter()
            reps = [simulate(truth, NoiseSpec(noise), T=args.T, seed=s)
                    for s in np.random.SeedSequence([args.seed, P, d]).spawn(args.reps)]
            comp = compare_methods(reps, truth, cfg=cfg)
            secs = time.perf_counter() - t0
            for row in comp.table():
                summary.append({"noise": noise, "kind": kind, "P": P, "d": d, "n_params": P * P * d,
                                **row, "seconds": secs})
                print(f"{noise:12s} {kind:10s} P={P:3d} d={d:2d} {row['method']:6s} "
                      f"mse={row['mse']:.3e} median={row['median_error']:.3e} spec={row['specificity']:.3f}")
            for m in comp.methods:
                for r, (e, s) in enumerate(zip(comp.errors[m], comp.specificity[m])):
                    per_rep.append({"noise": noise, "kind": kind, "P": P, "d": d, "method": m,
                                    "replicate": r, "squared_error": e, "specificity": s})
    write_csv(summary, args.out / "mse.csv")
    write_csv(per_rep, args.out / "replicates.csv")


if __name__ == "__main__":
    main()
