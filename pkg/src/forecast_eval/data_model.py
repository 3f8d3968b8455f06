"""Dataset types and CSV ingestion for prediction studies.

Three kinds of study data are supported:

* effect studies: noisy treatment-effect estimates ``Y`` with covariance
  ``Sigma`` plus a ``K x F`` matrix of forecasts (possibly with gaps);
* replication studies: sample size, p-value and direction of each
  replication, plus forecasters' probabilities that each study replicates;
* optional treatment categories (with a reverse-coding sign) and
  forecaster groups.

Every loader raises :class:`DataValidationError` carrying the file and the
offending row (1-based line number, header is line 1).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import norm

SYMMETRY_TOL = 1e-8
PSD_JITTER = 1e-10


class DataValidationError(ValueError):
    """Input data violates a schema or a domain invariant."""

    def __init__(self, message: str, *, path=None, row: int | None = None,
                 column: str | None = None):
        parts = []
        if path is not None:
            parts.append(str(path))
        if row is not None:
            parts.append(f"row {row}")
        if column is not None:
            parts.append(f"column {column!r}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.row = row
        self.column = column


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def check_covariance(cov: np.ndarray) -> None:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DataValidationError(f"covariance must be square, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise DataValidationError("covariance contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
    if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise DataValidationError("covariance is not symmetric")
    diag = np.diag(cov)
    if np.any(diag < 0):
        k = int(np.argmin(diag))
        raise DataValidationError(
            f"covariance is not positive semi-definite: variance {diag[k]:g} "
            f"at position {k}"
        )
    if not np.any(cov - np.diag(diag)):
        return
    jitter = PSD_JITTER * max(1.0, float(np.max(diag, initial=0.0)))
    try:
        np.linalg.cholesky(0.5 * (cov + cov.T) + jitter * np.eye(len(cov)))
    except np.linalg.LinAlgError:
        raise DataValidationError("covariance is not positive semi-definite") from None


@dataclass(frozen=True)
class EffectEstimates:
    """Noisy estimates ``Y ~ N(mu, Sigma)`` of ``K`` treatment effects."""

    treatment_ids: tuple
    estimates: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        ids = tuple(self.treatment_ids)
        y = np.asarray(self.estimates, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if len(ids) != len(y) or cov.shape != (len(y), len(y)):
            raise DataValidationError(
                f"{len(ids)} treatment ids, {len(y)} estimates and covariance "
                f"of shape {cov.shape} do not agree"
            )
        if len(set(ids)) != len(ids):
            raise DataValidationError("duplicate treatment ids")
        if not np.all(np.isfinite(y)):
            raise DataValidationError("estimates must be finite")
        check_covariance(cov)
        object.__setattr__(self, "treatment_ids", ids)
        object.__setattr__(self, "estimates", _frozen(y))
        object.__setattr__(self, "covariance", _frozen(cov))

    @classmethod
    def from_variances(cls, treatment_ids: Sequence, estimates, variances) -> "EffectEstimates":
        variances = np.asarray(variances, dtype=float)
        if np.any(variances < 0):
            raise DataValidationError("variances must be non-negative")
        return cls(tuple(treatment_ids), estimates, np.diag(variances))

    @property
    def K(self) -> int:
        return len(self.treatment_ids)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def is_diagonal(self) -> bool:
        off = self.covariance - np.diag(np.diag(self.covariance))
        return not np.any(off)

    def shifted(self, c: float) -> "EffectEstimates":
        return EffectEstimates(self.treatment_ids, self.estimates + c, self.covariance)


@dataclass(frozen=True)
class ForecastMatrix:
    """``K x F`` forecasts; missing cells hold NaN and are flagged in ``missing_mask``.

    ``treatment_categories`` maps a treatment id to ``(category, sign)``, where
    ``sign = -1`` reverse-codes the category so that positive bias always
    means the forecasters overstate the phenomenon.
    """

    treatment_ids: tuple
    forecaster_ids: tuple
    predictions: np.ndarray
    missing_mask: np.ndarray | None = None
    forecaster_groups: Mapping | None = None
    treatment_categories: Mapping | None = None

    def __post_init__(self):
        tids = tuple(self.treatment_ids)
        fids = tuple(self.forecaster_ids)
        x = np.array(self.predictions, dtype=float, ndmin=2)
        if x.shape != (len(tids), len(fids)):
            raise DataValidationError(
                f"predictions shape {x.shape} does not match "
                f"{len(tids)} treatments x {len(fids)} forecasters"
            )
        if len(set(tids)) != len(tids) or len(set(fids)) != len(fids):
            raise DataValidationError("duplicate treatment or forecaster ids")
        if self.missing_mask is None:
            mask = np.isnan(x)
        else:
            mask = np.asarray(self.missing_mask, dtype=bool)
            if mask.shape != x.shape:
                raise DataValidationError("missing_mask shape does not match predictions")
        x[mask] = np.nan
        if not np.all(np.isfinite(x[~mask])):
            raise DataValidationError("non-missing predictions must be finite")
        empty_t = np.flatnonzero(mask.all(axis=1))
        if empty_t.size:
            raise DataValidationError(
                f"treatments without any forecast: {[tids[i] for i in empty_t]}"
            )
        empty_f = np.flatnonzero(mask.all(axis=0))
        if empty_f.size:
            raise DataValidationError(
                f"forecasters without any forecast: {[fids[i] for i in empty_f]}"
            )
        groups = None
        if self.forecaster_groups is not None:
            groups = dict(self.forecaster_groups)
            unknown = set(groups) - set(fids)
            if unknown:
                raise DataValidationError(f"groups given for unknown forecasters {sorted(map(str, unknown))}")
        cats = None
        if self.treatment_categories is not None:
            cats = {}
            for tid, (label, sign) in dict(self.treatment_categories).items():
                if tid not in tids:
                    raise DataValidationError(f"category given for unknown treatment {tid!r}")
                if sign not in (1, -1):
                    raise DataValidationError(f"sign for {tid!r} must be +1 or -1, got {sign!r}")
                cats[tid] = (str(label), int(sign))
        object.__setattr__(self, "treatment_ids", tids)
        object.__setattr__(self, "forecaster_ids", fids)
        object.__setattr__(self, "predictions", _frozen(x))
        object.__setattr__(self, "missing_mask", _frozen(mask))
        object.__setattr__(self, "forecaster_groups", groups)
        object.__setattr__(self, "treatment_categories", cats)

    @property
    def K(self) -> int:
        return len(self.treatment_ids)

    @property
    def F(self) -> int:
        return len(self.forecaster_ids)

    @property
    def observed(self) -> np.ndarray:
        return ~self.missing_mask

    def filled(self, value: float = 0.0) -> np.ndarray:
        """Predictions with missing cells replaced by ``value``."""
        return np.where(self.missing_mask, value, self.predictions)

    def group_labels(self) -> list:
        if not self.forecaster_groups:
            return []
        return sorted(set(self.forecaster_groups.values()), key=str)

    def group_indicator(self) -> tuple[list, np.ndarray]:
        """Group labels and an ``(n_groups, F)`` boolean membership matrix."""
        labels = self.group_labels()
        member = np.zeros((len(labels), self.F), dtype=bool)
        pos = {g: i for i, g in enumerate(labels)}
        for j, fid in enumerate(self.forecaster_ids):
            g = self.forecaster_groups.get(fid) if self.forecaster_groups else None
            if g is not None:
                member[pos[g], j] = True
        return labels, member

    def with_predictions(self, predictions) -> "ForecastMatrix":
        return ForecastMatrix(
            self.treatment_ids, self.forecaster_ids, predictions, self.missing_mask,
            self.forecaster_groups, self.treatment_categories,
        )

    def with_categories(self, categories: Mapping | None) -> "ForecastMatrix":
        return ForecastMatrix(
            self.treatment_ids, self.forecaster_ids, self.predictions, self.missing_mask,
            self.forecaster_groups, categories,
        )


@dataclass(frozen=True)
class ReplicationDataset:
    """Replication outcomes and forecasters' replication probabilities."""

    study_ids: tuple
    original_effect: np.ndarray
    replication_n: np.ndarray
    replication_p: np.ndarray
    replication_direction: np.ndarray
    forecasts: ForecastMatrix
    alpha: np.ndarray = field(default=None)

    def __post_init__(self):
        ids = tuple(self.study_ids)
        k = len(ids)
        orig = np.asarray(self.original_effect, dtype=float).reshape(-1)
        n = np.asarray(self.replication_n).reshape(-1)
        p = np.asarray(self.replication_p, dtype=float).reshape(-1)
        d = np.asarray(self.replication_direction).reshape(-1)
        alpha = self.alpha
        alpha = np.full(k, 0.05) if alpha is None else np.broadcast_to(
            np.asarray(alpha, dtype=float), (k,))
        for name, arr in (("original_effect", orig), ("replication_n", n),
                          ("replication_p", p), ("replication_direction", d)):
            if len(arr) != k:
                raise DataValidationError(f"{name} has length {len(arr)}, expected {k}")
        if not np.all(np.isfinite(orig)):
            raise DataValidationError("original effects must be finite")
        if np.any(n != np.round(n)) or np.any(n < 2):
            raise DataValidationError("replication_n must be integers >= 2")
        if np.any(~(p > 0) | ~(p <= 1)):
            raise DataValidationError("replication_p must lie in (0, 1]")
        if np.any((d != 1) & (d != -1)):
            raise DataValidationError("replication_direction must be +1 or -1")
        if np.any(~(alpha > 0) | ~(alpha < 1)):
            raise DataValidationError("alpha must lie in (0, 1)")
        if self.forecasts.treatment_ids != ids:
            raise DataValidationError("forecast rows are not aligned with study ids")
        x = self.forecasts.predictions
        present = x[self.forecasts.observed]
        if np.any((present < 0) | (present > 1)):
            raise DataValidationError("forecast probabilities must lie in [0, 1]")
        object.__setattr__(self, "study_ids", ids)
        object.__setattr__(self, "original_effect", _frozen(orig))
        object.__setattr__(self, "replication_n", _frozen(n.astype(np.int64)))
        object.__setattr__(self, "replication_p", _frozen(p))
        object.__setattr__(self, "replication_direction", _frozen(d.astype(np.int64)))
        object.__setattr__(self, "alpha", _frozen(alpha))

    @property
    def K(self) -> int:
        return len(self.study_ids)

    @property
    def forecaster_probs(self) -> np.ndarray:
        return self.forecasts.predictions

    def effect_estimates(self) -> EffectEstimates:
        """Backed-out replication effects with their sampling covariance ``diag(1/n)``."""
        return EffectEstimates.from_variances(
            self.study_ids, backout_replication_effect(self), 1.0 / self.replication_n
        )


def critical_value(alpha) -> np.ndarray | float:
    """Two-tailed critical value ``c_alpha``."""
    return norm.isf(np.asarray(alpha, dtype=float) / 2.0)


def backout_replication_effect(dataset: ReplicationDataset) -> np.ndarray:
    """Normalised replication effect ``Y*`` implied by ``(n, p, direction)``.

    ``sqrt(n) * Y*`` is the z statistic whose two-sided p-value is ``p``,
    signed by the reported direction.
    """
    p = dataset.replication_p
    # isf(p/2) == ppf(1 - p/2) without cancellation for tiny p
    z = norm.isf(p / 2.0)
    return dataset.replication_direction * z / np.sqrt(dataset.replication_n)


# --------------------------------------------------------------------------- CSV

def _read_rows(path, required: Sequence[str], optional: Sequence[str] = ()):
    path = Path(path)
    if not path.exists():
        raise DataValidationError("file not found", path=path)
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataValidationError(f"missing column(s) {missing}", path=path, row=1)
        reader.fieldnames = header
        rows = []
        for line, raw in enumerate(reader, start=2):
            if raw is None or all((v or "").strip() == "" for v in raw.values() if isinstance(v, str)):
                continue
            if None in raw:
                raise DataValidationError("too many fields", path=path, row=line)
            row = {}
            for col in list(required) + [c for c in optional if c in header]:
                val = raw.get(col)
                row[col] = "" if val is None else val.strip()
                if col in required and row[col] == "":
                    raise DataValidationError("empty cell", path=path, row=line, column=col)
            rows.append((line, row))
    if not rows:
        raise DataValidationError("no data rows", path=path)
    return header, rows


def _float(value: str, path, line: int, column: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise DataValidationError(f"non-numeric value {value!r}", path=path, row=line,
                                  column=column) from None
    if not math.isfinite(out):
        raise DataValidationError(f"non-finite value {value!r}", path=path, row=line,
                                  column=column)
    return out


def _int(value: str, path, line: int, column: str) -> int:
    out = _float(value, path, line, column)
    if out != int(out):
        raise DataValidationError(f"expected an integer, got {value!r}", path=path,
                                  row=line, column=column)
    return int(out)


def _sign(value: str, path, line: int, column: str) -> int:
    out = _float(value, path, line, column)
    if out not in (1.0, -1.0):
        raise DataValidationError(f"sign must be +1 or -1, got {value!r}", path=path,
                                  row=line, column=column)
    return int(out)


def _unique_ids(rows, column, path) -> list:
    seen = {}
    for line, row in rows:
        tid = row[column]
        if tid in seen:
            raise DataValidationError(f"duplicate id {tid!r} (first at row {seen[tid]})",
                                      path=path, row=line, column=column)
        seen[tid] = line
    return list(seen)


def _alignment_error(expected: Iterable, got: Iterable, what: str, path) -> None:
    a, b = set(expected), set(got)
    if a != b:
        diff = sorted(map(str, a ^ b))
        raise DataValidationError(f"{what} ids do not match; symmetric difference: {diff}",
                                  path=path)


def _read_long_forecasts(path, row_col: str, value_col: str, row_ids: Sequence,
                         with_group: bool = True):
    optional = ("group",) if with_group else ()
    header, rows = _read_rows(path, [row_col, "forecaster_id", value_col], optional)
    row_pos = {t: i for i, t in enumerate(row_ids)}
    fids: dict = {}
    cells = {}
    groups: dict = {}
    referenced = set()
    for line, row in rows:
        tid, fid = row[row_col], row["forecaster_id"]
        referenced.add(tid)
        if (tid, fid) in cells:
            raise DataValidationError(f"duplicate forecast for ({tid!r}, {fid!r})",
                                      path=path, row=line)
        cells[(tid, fid)] = (_float(row[value_col], path, line, value_col), line)
        fids.setdefault(fid, len(fids))
        g = row.get("group", "")
        if g:
            if groups.setdefault(fid, g) != g:
                raise DataValidationError(
                    f"forecaster {fid!r} assigned to groups {groups[fid]!r} and {g!r}",
                    path=path, row=line, column="group")
    _alignment_error(row_ids, referenced, row_col.replace("_id", ""), path)
    x = np.full((len(row_ids), len(fids)), np.nan)
    lines = {}
    for (tid, fid), (val, line) in cells.items():
        x[row_pos[tid], fids[fid]] = val
        lines[(row_pos[tid], fids[fid])] = line
    return list(fids), x, (groups or None), lines


def load_covariance(path, treatment_ids: Sequence) -> np.ndarray:
    path = Path(path)
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataValidationError("empty covariance file", path=path) from None
        body = [(i, r) for i, r in enumerate(reader, start=2) if any(c.strip() for c in r)]
    _alignment_error(treatment_ids, header, "covariance treatment", path)
    if len(header) != len(set(header)):
        raise DataValidationError("duplicate treatment ids in header", path=path, row=1)
    if len(body) != len(header):
        raise DataValidationError(f"expected {len(header)} rows, found {len(body)}", path=path)
    grid = np.empty((len(header), len(header)))
    for r, (line, cells) in enumerate(body):
        if len(cells) != len(header):
            raise DataValidationError(f"expected {len(header)} fields, found {len(cells)}",
                                      path=path, row=line)
        for c, cell in enumerate(cells):
            grid[r, c] = _float(cell.strip(), path, line, header[c])
    order = [header.index(t) for t in treatment_ids]
    cov = grid[np.ix_(order, order)]
    try:
        check_covariance(cov)
    except DataValidationError as exc:
        raise DataValidationError(str(exc), path=path) from None
    return cov


def load_categories(path, treatment_ids: Sequence) -> dict:
    _, rows = _read_rows(path, ["treatment_id", "category", "sign"])
    known = set(treatment_ids)
    cats = {}
    for line, row in rows:
        tid = row["treatment_id"]
        if tid not in known:
            raise DataValidationError(f"unknown treatment {tid!r}", path=path, row=line,
                                      column="treatment_id")
        if tid in cats:
            raise DataValidationError(f"treatment {tid!r} listed twice", path=path, row=line)
        cats[tid] = (row["category"], _sign(row["sign"], path, line, "sign"))
    return cats


def load_effect_study(effects_path, forecasts_path, covariance_path=None,
                      categories_path=None) -> tuple[EffectEstimates, ForecastMatrix]:
    """Load an effect study from the long-format CSV files.

    The covariance comes from ``covariance_path`` when given, otherwise from
    the ``variance`` column of the effects file (diagonal ``Sigma``).
    """
    optional = () if covariance_path is None else ("variance",)
    required = ["treatment_id", "estimate"] + (["variance"] if covariance_path is None else [])
    _, rows = _read_rows(effects_path, required, optional)
    tids = _unique_ids(rows, "treatment_id", effects_path)
    y = np.array([_float(r["estimate"], effects_path, ln, "estimate") for ln, r in rows])
    if covariance_path is None:
        var = np.empty(len(rows))
        for i, (line, row) in enumerate(rows):
            var[i] = _float(row["variance"], effects_path, line, "variance")
            if var[i] < 0:
                raise DataValidationError(
                    f"negative variance {var[i]:g}; covariance must be positive semi-definite",
                    path=effects_path, row=line, column="variance")
        cov = np.diag(var)
    else:
        cov = load_covariance(covariance_path, tids)
    estimates = EffectEstimates(tuple(tids), y, cov)

    fids, x, groups, lines = _read_long_forecasts(forecasts_path, "treatment_id", "prediction",
                                                  tids)
    cats = load_categories(categories_path, tids) if categories_path is not None else None
    try:
        forecasts = ForecastMatrix(tuple(tids), tuple(fids), x, None, groups, cats)
    except DataValidationError as exc:
        raise DataValidationError(str(exc), path=forecasts_path) from None
    return estimates, forecasts


def load_replication_study(path, forecasts_path=None) -> ReplicationDataset:
    """Load ``replication.csv`` and its long-format probability forecasts.

    ``forecasts_path`` defaults to ``replication_forecasts.csv`` next to ``path``.
    """
    path = Path(path)
    required = ["study_id", "original_effect", "replication_n", "replication_p",
                "replication_direction"]
    header, rows = _read_rows(path, required, ("alpha",))
    sids = _unique_ids(rows, "study_id", path)
    orig, n, p, d, alpha = [], [], [], [], []
    for line, row in rows:
        orig.append(_float(row["original_effect"], path, line, "original_effect"))
        nk = _int(row["replication_n"], path, line, "replication_n")
        if nk < 2:
            raise DataValidationError(f"replication_n must be >= 2, got {nk}", path=path,
                                      row=line, column="replication_n")
        n.append(nk)
        pk = _float(row["replication_p"], path, line, "replication_p")
        if not 0.0 < pk <= 1.0:
            raise DataValidationError(
                f"p-value {pk:g} outside (0, 1]; the z statistic is undefined",
                path=path, row=line, column="replication_p")
        p.append(pk)
        d.append(_sign(row["replication_direction"], path, line, "replication_direction"))
        a = row.get("alpha", "")
        if a:
            ak = _float(a, path, line, "alpha")
            if not 0.0 < ak < 1.0:
                raise DataValidationError(f"alpha {ak:g} outside (0, 1)", path=path,
                                          row=line, column="alpha")
            alpha.append(ak)
        else:
            alpha.append(0.05)

    if forecasts_path is None:
        forecasts_path = path.with_name("replication_forecasts.csv")
    fids, x, _, lines = _read_long_forecasts(forecasts_path, "study_id", "probability", sids,
                                             with_group=False)
    bad = np.argwhere(~np.isnan(x) & ((x < 0) | (x > 1)))
    if bad.size:
        k, f = bad[0]
        raise DataValidationError(f"probability {x[k, f]:g} outside [0, 1]",
                                  path=forecasts_path, row=lines[(k, f)], column="probability")
    forecasts = ForecastMatrix(tuple(sids), tuple(fids), x)
    return ReplicationDataset(tuple(sids), orig, n, p, d, forecasts, np.array(alpha))


def load_effort_conditions(path) -> list:
    from .baselines import EffortConditionSpec, IncentiveKind

    _, rows = _read_rows(path, ["condition_id", "incentive_kind", "own_cents_per_100",
                                "charity_cents_per_100"])
    _unique_ids(rows, "condition_id", path)
    out = []
    for line, row in rows:
        try:
            kind = IncentiveKind(row["incentive_kind"])
        except ValueError:
            allowed = [k.value for k in IncentiveKind]
            raise DataValidationError(f"incentive_kind must be one of {allowed}", path=path,
                                      row=line, column="incentive_kind") from None
        own = _float(row["own_cents_per_100"], path, line, "own_cents_per_100")
        charity = _float(row["charity_cents_per_100"], path, line, "charity_cents_per_100")
        if own < 0 or charity < 0:
            raise DataValidationError("payments must be non-negative", path=path, row=line)
        out.append(EffortConditionSpec(row["condition_id"], kind, own, charity))
    return out


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _forecast_rows(forecasts: ForecastMatrix, value_fmt=_fmt, with_group=True):
    groups = forecasts.forecaster_groups or {}
    # forecaster-major, so the loader's first-appearance order keeps the columns
    for f, fid in enumerate(forecasts.forecaster_ids):
        for k, tid in enumerate(forecasts.treatment_ids):
            if forecasts.missing_mask[k, f]:
                continue
            row = [tid, fid, value_fmt(forecasts.predictions[k, f])]
            if with_group and groups:
                row.append(groups.get(fid, ""))
            yield row


def write_effect_study(directory, estimates: EffectEstimates, forecasts: ForecastMatrix,
                       full_covariance: bool | None = None) -> dict:
    """Write the study in the loader's CSV schemas; returns the paths written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if full_covariance is None:
        full_covariance = not estimates.is_diagonal
    paths = {"effects": directory / "effects.csv", "forecasts": directory / "forecasts.csv"}
    var = np.diag(estimates.covariance)
    if full_covariance:
        _write_csv(paths["effects"], ["treatment_id", "estimate"],
                   [[t, _fmt(y)] for t, y in zip(estimates.treatment_ids, estimates.estimates)])
        paths["covariance"] = directory / "covariance.csv"
        _write_csv(paths["covariance"], list(estimates.treatment_ids),
                   [[_fmt(v) for v in row] for row in estimates.covariance])
    else:
        _write_csv(paths["effects"], ["treatment_id", "estimate", "variance"],
                   [[t, _fmt(y), _fmt(v)] for t, y, v in
                    zip(estimates.treatment_ids, estimates.estimates, var)])
    header = ["treatment_id", "forecaster_id", "prediction"]
    if forecasts.forecaster_groups:
        header.append("group")
    _write_csv(paths["forecasts"], header, _forecast_rows(forecasts))
    if forecasts.treatment_categories:
        paths["categories"] = directory / "categories.csv"
        _write_csv(paths["categories"], ["treatment_id", "category", "sign"],
                   [[t, c, s] for t, (c, s) in forecasts.treatment_categories.items()])
    return paths


def write_replication_study(directory, dataset: ReplicationDataset) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"replication": directory / "replication.csv",
             "forecasts": directory / "replication_forecasts.csv"}
    _write_csv(paths["replication"],
               ["study_id", "original_effect", "replication_n", "replication_p",
                "replication_direction", "alpha"],
               [[s, _fmt(o), int(n), _fmt(p), int(d), _fmt(a)] for s, o, n, p, d, a in
                zip(dataset.study_ids, dataset.original_effect, dataset.replication_n,
                    dataset.replication_p, dataset.replication_direction, dataset.alpha)])
    _write_csv(paths["forecasts"], ["study_id", "forecaster_id", "probability"],
               _forecast_rows(dataset.forecasts, with_group=False))
    return paths
