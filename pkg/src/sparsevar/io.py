"""Epoch datasets, result serialization and run configuration."""

from __future__ import annotations

import configparser
import csv
import json
import math
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from functools import singledispatch
from pathlib import Path
from typing import Optional

import numpy as np

from .connectivity import PdcMatrix
from .errors import ConfigError, InconsistentShape, InsufficientReplicates, IoError, MissingLabel, ParseError
from .estimators import CvReport, FitResult
from .inference import BootstrapEnsemble, KsTestResult
from .model import VarModel
from .preprocess import DiagnosticSeries
from .selection import OrderSelectionReport


@dataclass
class EpochDataset:
    epochs: list                     # each (P, T_e)
    channel_names: list
    labels: list
    sampling_rate: float = 1000.0
    epoch_ids: Optional[list] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.epochs = [np.asarray(e, dtype=float) for e in self.epochs]
        if not self.epochs:
            raise InconsistentShape("dataset has no epochs")
        P = len(self.channel_names)
        for i, e in enumerate(self.epochs):
            if e.ndim != 2 or e.shape[0] != P:
                raise InconsistentShape(f"epoch {i} has shape {e.shape}, expected ({P}, T)")
        if len(self.labels) != len(self.epochs):
            raise MissingLabel("need one label per epoch")
        if self.epoch_ids is None:
            self.epoch_ids = [str(i) for i in range(len(self.epochs))]

    @property
    def P(self) -> int:
        return len(self.channel_names)

    def __len__(self):
        return len(self.epochs)


# --- number formatting -------------------------------------------------------

def fmt(x) -> str:
    """Round-trippable text for a double (17 significant digits)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json_text(obj) -> str:
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_json_text(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_json_text(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _json_text(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return fmt(x)
    return json.dumps(obj)


def dumps(obj) -> str:
    """JSON text with every double written at 17 significant digits."""
    return _json_text(obj) + "\n"


@contextmanager
def atomic_open(path, mode="w"):
    """Write to a temp file beside ``path`` and rename on success only."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, mode, newline="") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_json(obj, path):
    text = dumps(obj)
    with atomic_open(path) as fh:
        fh.write(text)


def write_csv(rows, path, columns=None):
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) if isinstance(r[c], (float, np.floating)) else r[c] for c in columns])


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=path) from None


# --- result serialization ----------------------------------------------------

@singledispatch
def to_payload(obj):
    raise TypeError(f"no serializer for {type(obj).__name__}")


@to_payload.register
def _(obj: VarModel):
    return obj.to_dict()


@to_payload.register
def _(obj: FitResult):
    return obj.to_dict()


@to_payload.register
def _(obj: OrderSelectionReport):
    return obj.to_dict()


@to_payload.register
def _(obj: CvReport):
    return obj.to_dict()


@to_payload.register
def _(obj: PdcMatrix):
    return obj.to_dict()


@to_payload.register
def _(obj: KsTestResult):
    return obj.to_dict()


@to_payload.register
def _(obj: BootstrapEnsemble):
    if obj.B == 0:
        raise InsufficientReplicates("empty bootstrap ensemble")
    out = {"B": obj.B, "seed": obj.seed, "failed": obj.failed, "draws": obj.draws.tolist()}
    if obj.B >= 2.0 / (1.0 - obj.level):
        lo, med, hi = obj.quantiles()
        out.update(level=obj.level, lower=lo.tolist(), median=med.tolist(), upper=hi.tolist())
    if obj.pdc_draws is not None:
        out.update(bands=obj.bands, pdc_draws=obj.pdc_draws.tolist())
    return out


@singledispatch
def to_rows(obj):
    raise TypeError(f"no CSV layout for {type(obj).__name__}")


@to_rows.register
def _(obj: OrderSelectionReport):
    return list(obj.rows())


@to_rows.register
def _(obj: PdcMatrix):
    return list(obj.rows())


@to_rows.register
def _(obj: BootstrapEnsemble):
    if obj.B == 0:
        raise InsufficientReplicates("empty bootstrap ensemble")
    return list(obj.rows())


@to_rows.register
def _(obj: DiagnosticSeries):
    return list(obj.rows())


@to_rows.register
def _(obj: CvReport):
    return [{"d": d, "lambda": lam, "error": float(e)} for (d, lam), e in zip(obj.candidates, obj.errors)]


@to_rows.register
def _(obj: FitResult):
    rows = []
    for lag in range(obj.d):
        for u in range(obj.P):
            for v in range(obj.P):
                rows.append({"lag": lag + 1, "receiver": u, "sender": v,
                             "value": float(obj.phi_hat[lag, u, v]),
                             "support": int(obj.support[u, lag * obj.P + v])})
    return rows


def write_results(obj, path, format: str = "json"):
    """Serialize a result object; nothing is left at ``path`` if this fails."""
    if format == "json":
        write_json(to_payload(obj), path)
    elif format == "csv":
        write_csv(to_rows(obj), path)
    else:
        raise ValueError(f"unknown format {format!r}")


def load_model(path) -> VarModel:
    return VarModel.from_dict(read_json(path))


def load_fit(path) -> FitResult:
    return FitResult.from_dict(read_json(path))


# --- epoch files -------------------------------------------------------------

def _float(cell: str, line: int, path) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"non-numeric value {cell!r}", line=line, path=path) from None


def read_labels(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["epoch", "label"]:
            raise ParseError("label file needs header 'epoch,label'", line=1, path=path)
        for row in reader:
            if not row:
                continue
            if len(row) < 2:
                raise ParseError("expected epoch,label", line=reader.line_num, path=path)
            out[row[0].strip()] = row[1].strip()
    return out


def _attach_labels(ids, labels_path):
    if labels_path is None:
        return ["unlabeled"] * len(ids)
    table = read_labels(labels_path)
    missing = [i for i in ids if i not in table]
    if missing:
        raise MissingLabel(f"no label for epoch(s) {missing[:5]}")
    return [table[i] for i in ids]


def read_epochs(path, format: str = "csv_long", labels_path=None, sampling_rate: float = 1000.0
                ) -> EpochDataset:
    """Load epochs.

    csv_long: one file with header ``epoch,channel,t,value``; samples of each
    (epoch, channel) pair are taken in row order.  csv_wide: a directory of
    ``*.csv`` files, one per epoch (sorted by name), header = channel names,
    one row per time point.  Labels come from an optional ``epoch,label``
    sidecar keyed by epoch id (file stem for csv_wide).
    """
    path = Path(path)
    if format == "csv_long":
        ids, chans, data = [], [], {}
        try:
            fh = open(path, newline="")
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        with fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader, [])]
            if header[:4] != ["epoch", "channel", "t", "value"]:
                raise ParseError("expected header epoch,channel,t,value", line=1, path=path)
            for row in reader:
                if not row:
                    continue
                line = reader.line_num
                if len(row) != 4:
                    raise ParseError(f"expected 4 fields, got {len(row)}", line=line, path=path)
                ep, ch = row[0].strip(), row[1].strip()
                _float(row[2], line, path)
                value = _float(row[3], line, path)
                if ep not in data:
                    ids.append(ep)
                    data[ep] = {}
                if ch not in chans:
                    chans.append(ch)
                data[ep].setdefault(ch, []).append(value)
        epochs = []
        for ep in ids:
            if set(data[ep]) != set(chans):
                raise InconsistentShape(f"epoch {ep} is missing channels")
            lengths = {len(v) for v in data[ep].values()}
            if len(lengths) != 1:
                raise InconsistentShape(f"epoch {ep} has channels of unequal length")
            epochs.append(np.array([data[ep][c] for c in chans]))
        if not epochs:
            raise InconsistentShape(f"{path} contains no samples")
        return EpochDataset(epochs, chans, _attach_labels(ids, labels_path), sampling_rate, ids,
                            {"source": str(path), "format": format})
    if format == "csv_wide":
        files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
        ids, epochs, chans = [], [], None
        for f in files:
            with open(f, newline="") as fh:
                reader = csv.reader(fh)
                header = [h.strip() for h in next(reader, [])]
                if chans is None:
                    chans = header
                elif header != chans:
                    raise InconsistentShape(f"{f} has channels {header}, expected {chans}")
                rows = []
                for row in reader:
                    if not row:
                        continue
                    if len(row) != len(chans):
                        raise ParseError(f"expected {len(chans)} fields", line=reader.line_num, path=f)
                    rows.append([_float(c, reader.line_num, f) for c in row])
            ids.append(f.stem)
            epochs.append(np.array(rows, dtype=float).reshape(-1, len(chans)).T)
        if not epochs:
            raise InconsistentShape(f"no epoch files under {path}")
        return EpochDataset(epochs, chans, _attach_labels(ids, labels_path), sampling_rate, ids,
                            {"source": str(path), "format": format})
    raise ValueError(f"unknown epoch format {format!r}")


def write_epochs(dataset: EpochDataset, path, format: str = "csv_long", labels_path=None):
    path = Path(path)
    names = [str(c) for c in dataset.channel_names]
    if format == "csv_long":
        with atomic_open(path) as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "channel", "t", "value"])
            for ep_id, ep in zip(dataset.epoch_ids, dataset.epochs):
                for c, name in enumerate(names):
                    for t, v in enumerate(ep[c]):
                        w.writerow([ep_id, name, t, fmt(v)])
    elif format == "csv_wide":
        path.mkdir(parents=True, exist_ok=True)
        for ep_id, ep in zip(dataset.epoch_ids, dataset.epochs):
            with atomic_open(path / f"{ep_id}.csv") as fh:
                w = csv.writer(fh)
                w.writerow(names)
                for row in ep.T:
                    w.writerow([fmt(v) for v in row])
    else:
        raise ValueError(f"unknown epoch format {format!r}")
    if labels_path is not None:
        write_csv(({"epoch": i, "label": lab} for i, lab in zip(dataset.epoch_ids, dataset.labels)),
                  labels_path, ["epoch", "label"])


# --- configuration -----------------------------------------------------------

@dataclass
class RunConfig:
    """Pipeline settings; loadable from a flat ``key = value`` file."""

    estimator: str = "lassle"
    n_lambda: int = 50
    lambda_ratio: float = 1e-3
    cv_folds: int = 5
    cv_rule: str = "1se"
    cv_fold_scheme: str = "random"
    cv_joint: bool = False
    d_min: int = 1
    d_max: int = 12
    criterion: str = "aic"
    bands: str = "delta,theta,alpha,beta,gamma"
    bootstrap_b: int = 1000
    n_perm: int = 10_000
    group_size: int = 5
    seed: int = 0
    difference: bool = False
    sampling_rate: float = 1000.0
    freq_resolution: float = 1.0
    tol: float = 1e-7
    max_iter: int = 10_000

    _CHOICES = {
        "estimator": ("lse", "lasso", "lassle"),
        "cv_rule": ("min", "1se"),
        "cv_fold_scheme": ("random", "block"),
        "criterion": ("aic", "bic", "hqc"),
    }

    def validate(self) -> "RunConfig":
        for key, allowed in self._CHOICES.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}")
        positive = ("n_lambda", "cv_folds", "d_min", "d_max", "bootstrap_b", "n_perm", "group_size",
                    "sampling_rate", "freq_resolution", "tol", "max_iter")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be at least 2")
        if self.d_min > self.d_max:
            raise ConfigError("d_min must not exceed d_max")
        if not 0 < self.lambda_ratio < 1:
            raise ConfigError("lambda_ratio must lie in (0, 1)")
        from .connectivity import bands_by_name

        bands_by_name(self.band_names)
        return self

    @property
    def band_names(self) -> list:
        return [b.strip() for b in self.bands.split(",") if b.strip()]

    def updated(self, **kw) -> "RunConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig(**data).validate()


def _coerce(key: str, raw: str, kind):
    try:
        if kind is bool or kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def load_config(path) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments); unknown keys are rejected."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for key, raw in parser.items("run"):
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw, known[key])
    return RunConfig(**values).validate()
