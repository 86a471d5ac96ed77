"""Command-line driver.

    sparsevar simulate   ground-truth network + simulated epochs
    sparsevar fit        per-epoch order selection and sparse VAR fit
    sparsevar pdc        band-averaged (or per-frequency) PDC per epoch
    sparsevar bootstrap  residual bootstrap of one epoch's fit
    sparsevar compare    LSE / LASSO / LASSLE error against a known truth
    sparsevar kstest     block-permutation KS test of PDC between label classes
    sparsevar diagnose   ACF/PACF summaries before and after differencing

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .connectivity import FrequencyGrid, band_pdc, bands_by_name, pdc
from .errors import MissingTruth, ParseError, SparseVarError
from .estimators import FitResult, build_problem
from .inference import block_permutation_test, bootstrap, empirical_ci
from .io import (EpochDataset, RunConfig, load_config, load_model, read_epochs, read_json, write_csv,
                 write_epochs, write_json, write_results)
from .model import NetworkSpec, NoiseSpec, generate_network, simulate
from .pipeline import compare_methods, fit_var
from .preprocess import diagnose

logger = logging.getLogger("sparsevar")

EXIT_USAGE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="flat key = value run configuration")
    p.add_argument("--seed", type=int, help="master seed (default: config or 0)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="epoch-level worker threads")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _data_args(p):
    p.add_argument("--data", type=Path, required=True, help="epoch file (csv_long) or directory (csv_wide)")
    p.add_argument("--data-format", choices=("csv_long", "csv_wide"), default="csv_long")
    p.add_argument("--labels", type=Path, help="epoch,label sidecar CSV")
    p.add_argument("--sampling-rate", type=float)


def _fit_args(p):
    p.add_argument("--method", choices=("lse", "lasso", "lassle"))
    p.add_argument("--order", type=int, help="fixed lag order (skips order selection)")
    p.add_argument("--lambda", dest="lam", type=float, help="fixed penalty (skips CV)")
    p.add_argument("--d-max", type=int)
    p.add_argument("--criterion", choices=("aic", "bic", "hqc"))
    p.add_argument("--cv-joint", action="store_true", default=None,
                   help="choose (d, lambda) jointly by CV instead of criterion-then-CV")
    p.add_argument("--cv-rule", choices=("min", "1se"))
    p.add_argument("--folds", type=int, dest="cv_folds")
    p.add_argument("--difference", action="store_true", default=None, help="first-difference each epoch")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparsevar", description="Sparse VAR estimation and connectivity analysis.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()

    p = sub.add_parser("simulate", parents=[common], help="simulate epochs from a ground-truth network")
    p.add_argument("--network", choices=("cluster", "scale_free"), default="cluster")
    p.add_argument("-P", "--channels", type=int, default=10)
    p.add_argument("-d", "--lag-order", type=int, default=1)
    p.add_argument("--noise", choices=("gaussian", "student_t", "shifted_chi2"), default="gaussian")
    p.add_argument("-T", "--length", type=int, default=10_000)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--regions", type=int, default=4)
    p.add_argument("--connected", help="cross-connected region pairs, e.g. '0-3,1-2' "
                                       "(default: first and last region)")
    p.add_argument("--cross-density", type=float, default=0.5)
    p.add_argument("--probability", type=float, default=0.05)
    p.add_argument("--sampling-rate", type=float)

    p = sub.add_parser("fit", parents=[common], help="fit a sparse VAR to every epoch")
    _data_args(p)
    _fit_args(p)

    p = sub.add_parser("pdc", parents=[common], help="PDC per epoch from fits or a model")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--fits", type=Path, help="fits.json written by 'fit'")
    src.add_argument("--model", type=Path, help="VarModel JSON (e.g. truth.json)")
    p.add_argument("--sampling-rate", type=float)
    p.add_argument("--resolution", type=float)
    p.add_argument("--bands", help="comma-separated canonical band names")
    p.add_argument("--per-frequency", action="store_true", help="emit every grid frequency, not band means")

    p = sub.add_parser("bootstrap", parents=[common], help="residual bootstrap for one epoch")
    _data_args(p)
    _fit_args(p)
    p.add_argument("--epoch", type=int, default=0, help="epoch index (0-based)")
    p.add_argument("-B", "--replicates", type=int)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--no-pdc", action="store_true")

    p = sub.add_parser("compare", parents=[common], help="compare estimators against a known truth")
    _data_args(p)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--methods", default="lse,lasso,lassle")
    p.add_argument("--cv-rule", choices=("min", "1se"))

    p = sub.add_parser("kstest", parents=[common], help="block-permutation KS test per PDC pair")
    p.add_argument("--pdc", type=Path, required=True, help="pdc_bands.csv written by 'pdc'")
    p.add_argument("--labels", type=Path, help="epoch,label CSV (default: labels in the PDC file)")
    p.add_argument("--band", default="gamma")
    p.add_argument("--group-size", type=int)
    p.add_argument("--n-perm", type=int)
    p.add_argument("--positive", help="minority label, e.g. OutSeq")
    p.add_argument("--smoothed", action="store_true", help="use (count + 1) / (n_perm + 1)")

    p = sub.add_parser("diagnose", parents=[common], help="ACF/PACF before and after differencing")
    _data_args(p)
    p.add_argument("--channel", default="0", help="channel name or 0-based index")
    p.add_argument("--max-lag", type=int, default=40)
    return parser


# --- helpers -----------------------------------------------------------------

def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for name in ("seed", "cv_rule", "cv_folds", "criterion", "d_max", "sampling_rate"):
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    if getattr(args, "method", None):
        overrides["estimator"] = args.method
    for flag in ("cv_joint", "difference"):
        if getattr(args, flag, None):
            overrides[flag] = True
    if getattr(args, "n_perm", None) is not None:
        overrides["n_perm"] = args.n_perm
    if getattr(args, "group_size", None) is not None:
        overrides["group_size"] = args.group_size
    if getattr(args, "replicates", None) is not None:
        overrides["bootstrap_b"] = args.replicates
    if getattr(args, "resolution", None) is not None:
        overrides["freq_resolution"] = args.resolution
    if getattr(args, "bands", None):
        overrides["bands"] = args.bands
    return cfg.updated(**overrides)


def _load(args, cfg) -> EpochDataset:
    return read_epochs(args.data, args.data_format, args.labels, cfg.sampling_rate)


def _check_fit_flags(args):
    if getattr(args, "cv_joint", None) and args.order is not None:
        raise UsageError("--cv-joint chooses the order; do not combine with --order")
    if getattr(args, "cv_joint", None) and args.lam is not None:
        raise UsageError("--cv-joint chooses lambda; do not combine with --lambda")
    if args.method == "lse" and args.lam is not None:
        raise UsageError("--lambda has no effect with --method lse")


def _run_epochs(fn, items, threads):
    """Apply fn to every (index, item); returns (results, errors) in index order."""
    def guarded(pair):
        i, item = pair
        try:
            return i, fn(item), None
        except SparseVarError as exc:
            return i, None, exc

    pairs = list(enumerate(items))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(guarded, pairs))
    else:
        out = [guarded(p) for p in pairs]
    return [r for _, r, _ in out], [(i, e) for i, _, e in out if e is not None]


def _report_failures(errors, ids) -> int:
    for i, exc in errors:
        print(f"epoch {ids[i]} (index {i}): {type(exc).__name__}: {exc}", file=sys.stderr)
    return max((e.exit_code for _, e in errors), default=0)


# --- subcommands -------------------------------------------------------------

def _region_pairs(text, n_regions):
    if text is None:
        return ((0, n_regions - 1),) if n_regions > 1 else ()
    try:
        pairs = tuple(tuple(int(v) for v in item.split("-")) for item in text.split(",") if item.strip())
    except ValueError:
        pairs = ((),)
    if any(len(p) != 2 for p in pairs):
        raise UsageError(f"--connected expects pairs like 0-3, got {text!r}")
    return pairs


def cmd_simulate(args, cfg) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    spec = NetworkSpec(kind=args.network, P=args.channels, d=args.lag_order, n_regions=args.regions,
                       connected=_region_pairs(args.connected, args.regions),
                       cross_density=args.cross_density, probability=args.probability)
    truth = generate_network(spec, seed=cfg.seed)
    noise = NoiseSpec(args.noise)
    streams = np.random.SeedSequence([cfg.seed, 1]).spawn(args.reps)
    epochs = [simulate(truth, noise, args.length, seed=s, burn_in=args.burn_in) for s in streams]
    truth.metadata.update(noise=args.noise, T=args.length, reps=args.reps, burn_in=args.burn_in)
    write_results(truth, args.out / "truth.json", "json")
    names = [f"ch{i}" for i in range(truth.P)]
    ds = EpochDataset(epochs, names, ["sim"] * len(epochs), cfg.sampling_rate)
    write_epochs(ds, args.out / "epochs.csv", "csv_long", labels_path=args.out / "labels.csv")
    return 0


def cmd_fit(args, cfg) -> int:
    _check_fit_flags(args)
    ds = _load(args, cfg)
    res, errors = _run_epochs(lambda x: fit_var(x, cfg, d=args.order, lam=args.lam), ds.epochs, args.threads)
    records, order_rows = [], []
    for i, r in enumerate(res):
        if r is None:
            continue
        order = r.info.get("order")
        rec = {"epoch": ds.epoch_ids[i], "label": ds.labels[i], **r.to_dict(include_residuals=False)}
        if order is not None:
            rec["orders"] = {k: int(v) for k, v in order.chosen.items()}
        records.append(rec)
        row = {"epoch": ds.epoch_ids[i], "label": ds.labels[i], "d": r.d,
               "lambda": "" if r.lam is None else float(r.lam)}
        for c in ("aic", "bic", "hqc"):
            row[f"d_{c}"] = int(order.chosen[c]) if order is not None else ""
        order_rows.append(row)
    write_json({"sampling_rate": ds.sampling_rate, "channel_names": ds.channel_names,
                "differenced": cfg.difference, "fits": records}, args.out / "fits.json")
    cols = ["epoch", "label", "d", "lambda", "d_aic", "d_bic", "d_hqc"]
    write_csv(order_rows, args.out / "orders.csv", cols)
    hist = Counter(r["d"] for r in order_rows)
    n = max(len(order_rows), 1)
    write_csv(({"d": d, "count": c, "proportion": c / n} for d, c in sorted(hist.items())),
              args.out / "order_histogram.csv", ["d", "count", "proportion"])
    return _report_failures(errors, ds.epoch_ids)


def _grid(cfg) -> FrequencyGrid:
    return FrequencyGrid.regular(cfg.sampling_rate, cfg.freq_resolution)


def cmd_pdc(args, cfg) -> int:
    if args.model:
        model = load_model(args.model)
        entries = [{"epoch": "model", "label": "", "obj": model}]
        names = [f"ch{i}" for i in range(model.P)]
    else:
        payload = read_json(args.fits)
        names = payload.get("channel_names")
        if args.sampling_rate is None and "sampling_rate" in payload:
            cfg = cfg.updated(sampling_rate=payload["sampling_rate"])
        entries = [{"epoch": f["epoch"], "label": f.get("label", ""), "obj": FitResult.from_dict(f)}
                   for f in payload["fits"]]
    grid = _grid(cfg)
    bands = bands_by_name(cfg.band_names)
    rows, blobs = [], []
    for e in entries:
        mat = pdc(e["obj"], grid) if args.per_frequency else band_pdc(e["obj"], grid, bands)
        mat.channel_names = names
        blobs.append({"epoch": e["epoch"], "label": e["label"], **mat.to_dict()})
        for r in mat.rows():
            rows.append({"epoch": e["epoch"], "label": e["label"], **r})
    stem = "pdc_frequencies" if args.per_frequency else "pdc_bands"
    if args.format == "json":
        write_json({"sampling_rate": grid.sampling_rate, "epochs": blobs}, args.out / f"{stem}.json")
    else:
        write_csv(rows, args.out / f"{stem}.csv", ["epoch", "label", "freq_or_band", "receiver", "sender", "value"])
    return 0


def cmd_bootstrap(args, cfg) -> int:
    _check_fit_flags(args)
    ds = _load(args, cfg)
    if not 0 <= args.epoch < len(ds):
        raise UsageError(f"--epoch must be in [0, {len(ds) - 1}]")
    x = ds.epochs[args.epoch]
    res = fit_var(x, cfg, d=args.order, lam=args.lam)
    if cfg.difference:
        from .preprocess import difference

        x = difference(x)
    grid = None if args.no_pdc else _grid(cfg)
    bands = bands_by_name(cfg.band_names)
    kw = {} if res.method == "lse" else {"tol": cfg.tol, "max_iter": cfg.max_iter}
    ens = bootstrap(x, res, B=cfg.bootstrap_b, seed=cfg.seed, grid=grid, bands=bands,
                    threads=args.threads, **kw)
    ens.level = args.level
    write_results(res, args.out / "fit.json", "json")
    if args.format == "json":
        write_results(ens, args.out / "bootstrap.json", "json")
    else:
        write_results(ens, args.out / "bootstrap_draws.csv", "csv")
    lo, med, hi = empirical_ci(ens.draws, args.level)
    rows = []
    for lag in range(res.d):
        for u in range(res.P):
            for v in range(res.P):
                rows.append({"lag": lag + 1, "receiver": ds.channel_names[u], "sender": ds.channel_names[v],
                             "estimate": float(res.phi_hat[lag, u, v]), "lower": float(lo[lag, u, v]),
                             "median": float(med[lag, u, v]), "upper": float(hi[lag, u, v]),
                             "zero_fraction": float(np.mean(ens.draws[:, lag, u, v] == 0))})
    write_csv(rows, args.out / "coef_ci.csv")
    if grid is not None:
        plo, pmed, phi_ = empirical_ci(ens.pdc_draws, args.level)
        point = band_pdc(res, grid, bands).values
        rows = []
        for b, band in enumerate(ens.bands):
            for u in range(res.P):
                for v in range(res.P):
                    rows.append({"band": band, "receiver": ds.channel_names[u], "sender": ds.channel_names[v],
                                 "estimate": float(point[b, u, v]), "lower": float(plo[b, u, v]),
                                 "median": float(pmed[b, u, v]), "upper": float(phi_[b, u, v])})
        write_csv(rows, args.out / "pdc_ci.csv")
    if ens.failed:
        write_json({"failed": ens.failed}, args.out / "bootstrap_failed.json")
        print(f"{len(ens.failed)} bootstrap replicate(s) failed", file=sys.stderr)
        return 3
    return 0


def cmd_compare(args, cfg) -> int:
    if not args.truth.exists():
        raise MissingTruth(f"truth model {args.truth} not found")
    truth = load_model(args.truth)
    ds = _load(args, cfg)
    if ds.P != truth.P:
        raise MissingTruth(f"truth has P={truth.P} but data has P={ds.P}")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = set(methods) - {"lse", "lasso", "lassle"}
    if bad or not methods:
        raise UsageError(f"unknown methods {sorted(bad)}")
    comp = compare_methods(ds.epochs, truth, methods, cfg)
    write_csv(comp.table(), args.out / "mse_table.csv",
              ["method", "mse", "median_error", "specificity", "replicates"])
    rows = []
    for m in methods:
        for lag in range(truth.d):
            for u in range(truth.P):
                for v in range(truth.P):
                    rows.append({"method": m, "lag": lag + 1, "receiver": u, "sender": v,
                                 "value": float(comp.abs_diff[m][lag, u, v])})
    write_csv(rows, args.out / "abs_diff.csv", ["method", "lag", "receiver", "sender", "value"])
    return 0


def _read_pdc_csv(path, band):
    by_epoch = defaultdict(dict)
    order, labels = [], {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"epoch", "freq_or_band", "receiver", "sender", "value"}
        if not need <= set(reader.fieldnames or []):
            raise ParseError(f"PDC file needs columns {sorted(need)}", line=1, path=path)
        for row in reader:
            if row["freq_or_band"] != band:
                continue
            ep = row["epoch"]
            if ep not in by_epoch:
                order.append(ep)
                labels[ep] = row.get("label", "")
            try:
                by_epoch[ep][(row["receiver"], row["sender"])] = float(row["value"])
            except ValueError:
                raise ParseError(f"bad value {row['value']!r}", line=reader.line_num, path=path) from None
    if not order:
        raise ParseError(f"no rows for band {band!r}", path=path)
    pairs = list(by_epoch[order[0]])
    values = np.array([[by_epoch[ep][p] for p in pairs] for ep in order])
    return order, [labels[e] for e in order], pairs, values


def cmd_kstest(args, cfg) -> int:
    epochs, labels, pairs, values = _read_pdc_csv(args.pdc, args.band)
    if args.labels:
        from .io import read_labels

        table = read_labels(args.labels)
        labels = [table.get(e) for e in epochs]
        if None in labels:
            from .errors import MissingLabel

            raise MissingLabel("label file does not cover every epoch")
    results = block_permutation_test(values, labels, positive=args.positive, group_size=cfg.group_size,
                                     n_perm=cfg.n_perm, seed=cfg.seed, smoothed=args.smoothed)
    rows = [{"receiver": p[0], "sender": p[1], **r.to_dict()} for p, r in zip(pairs, results)]
    if args.format == "json":
        write_json({"band": args.band, "tests": rows}, args.out / "kstest.json")
    else:
        write_csv(rows, args.out / "kstest.csv", ["receiver", "sender", "statistic", "p_value", "n_perm",
                                                   "group_size", "n_groups", "n_a", "n_b", "smoothed", "label"])
    return 0


def cmd_diagnose(args, cfg) -> int:
    ds = _load(args, cfg)
    if args.channel in ds.channel_names:
        ch = ds.channel_names.index(args.channel)
    else:
        try:
            ch = int(args.channel)
        except ValueError:
            raise UsageError(f"unknown channel {args.channel!r}") from None
        if not 0 <= ch < ds.P:
            raise UsageError(f"channel index {ch} out of range")
    for tag, diffed in (("raw", False), ("diff", True)):
        diag = diagnose(ds.epochs, ch, args.max_lag, differenced=diffed, channel_name=ds.channel_names[ch])
        write_csv(diag.rows(), args.out / f"acf_pacf_{tag}.csv", ["epoch", "channel", "lag", "acf", "pacf"])
        write_csv(diag.summary_rows(), args.out / f"acf_pacf_{tag}_summary.csv")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "pdc": cmd_pdc,
    "bootstrap": cmd_bootstrap,
    "compare": cmd_compare,
    "kstest": cmd_kstest,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be positive")
    try:
        cfg = _config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"sparsevar {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SparseVarError as exc:
        print(f"sparsevar {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
