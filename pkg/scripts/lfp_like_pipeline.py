"""End-to-end run on a synthetic epoch ensemble shaped like a tetrode LFP session.

247 epochs x 12 channels x 1,000 samples at 1 kHz are drawn from a VAR(3)
cluster network.  Roughly one epoch in ten is labelled OutSeq and has a
stronger self-coupling on channels 1 and 2, so the KS tests have something to
find.  The script writes the data and then drives the command-line tool:

    python3 scripts/lfp_like_pipeline.py --out runs/lfp [--epochs 247] [--threads 1]
"""

import argparse
import time
from pathlib import Path

import numpy as np

from sparsevar import EpochDataset, NetworkSpec, VarModel, generate_network, simulate
from sparsevar.cli import main as cli
from sparsevar.io import write_epochs


def make_dataset(n_epochs, seed):
    rng = np.random.default_rng(seed)
    base = generate_network(NetworkSpec("cluster", P=12, d=3), seed=seed)
    out_seq = rng.random(n_epochs) < 0.1
    epochs = []
    for e, flag in enumerate(out_seq):
        phi = base.phi.copy()
        phi[0] += rng.normal(scale=0.01, size=phi[0].shape) * (phi[0] != 0)
        if flag:
            phi[0, 1, 1] += 0.2
            phi[0, 2, 2] += 0.2
        m = VarModel(phi, base.sigma)
        if not m.stationary:
            m = base
        epochs.append(simulate(m, T=1000, seed=[seed, e]))
    labels = ["OutSeq" if f else "InSeq" for f in out_seq]
    return EpochDataset(epochs, [f"T{i + 1}" for i in range(12)], labels, 1000.0)


def step(argv):
    t0 = time.perf_counter()
    code = cli(argv)
    print(f"sparsevar {argv[0]:9s} exit={code} ({time.perf_counter() - t0:.1f}s)")
    if code:
        raise SystemExit(code)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--epochs", type=int, default=247)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-perm", type=int, default=10_000)
    args = ap.parse_args(argv)

    data = args.out / "data"
    write_epochs(make_dataset(args.epochs, args.seed), data / "epochs.csv", labels_path=data / "labels.csv")
    common = ["--seed", str(args.seed), "--threads", str(args.threads)]
    src = ["--data", str(data / "epochs.csv"), "--labels", str(data / "labels.csv")]
    step(["fit", "--out", str(args.out / "fit"), *src, *common])
    step(["pdc", "--out", str(args.out / "pdc"), "--fits", str(args.out / "fit" / "fits.json"), *common])
    step(["kstest", "--out", str(args.out / "kstest"), "--pdc", str(args.out / "pdc" / "pdc_bands.csv"),
          "--band", "gamma", "--positive", "OutSeq", "--n-perm", str(args.n_perm), *common])
    step(["diagnose", "--out", str(args.out / "diagnose"), *src, "--channel", "T3", *common])
    print((args.out / "fit" / "order_histogram.csv").read_text())


if __name__ == "__main__":
    main()
