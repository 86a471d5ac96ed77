"""Effect of the CV selection rule (minimum error vs one-standard-error) on
sparsity and estimation error.

    python3 scripts/lambda_rule_study.py --out runs/rules --reps 6
"""

import argparse
from pathlib import Path

import numpy as np

from sparsevar import NetworkSpec, build_problem, fit, generate_network, select_lambda, simulate
from sparsevar.estimators import lambda_max
from sparsevar.io import write_csv
from sparsevar.pipeline import squared_error, zero_specificity


def main(argv=None):
    ap = argparse.ArgumentParser(description="CV rule comparison")
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--reps", type=int, default=6)
    ap.add_argument("--T", type=int, default=10_000)
    args = ap.parse_args(argv)

    rows = []
    for kind in ("cluster", "scale_free"):
        truth = generate_network(NetworkSpec(kind, P=10), seed=1)
        for rule in ("min", "1se"):
            err = {m: [] for m in ("lse", "lasso", "lassle")}
            spec, ratio = [], []
            for r in range(args.reps):
                x = simulate(truth, T=args.T, seed=100 + r)
                problem = build_problem(x, 1)
                lam = select_lambda(x, 1, rule=rule, seed=r).chosen[1]
                ratio.append(lam / lambda_max(problem))
                for m in err:
                    est = fit(problem, m, lam).phi_hat
                    err[m].append(squared_error(truth.phi, est))
                    if m == "lassle":
                        spec.append(zero_specificity(truth.phi, est))
            row = {"kind": kind, "rule": rule, "specificity": float(np.mean(spec)),
                   "lambda_over_max": float(np.mean(ratio))}
            row.update({f"median_{m}": float(np.median(v)) for m, v in err.items()})
            rows.append(row)
            print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    write_csv(rows, args.out / "rules.csv")


if __name__ == "__main__":
    main()
