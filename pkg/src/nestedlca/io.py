"""Readers and writers for data, parameter, trace and report files.

Data CSV: a header row, then J integer response columns (1-based codes)
followed by covariate columns. Parameter files are JSON with ``pi`` nested
as [class][item][category] and ``beta`` as a (R-1) x P matrix.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .harness import Categorical, Normal, TrueModel
from .model import Dataset, ModelParams

# rows summing to 1 within this tolerance are renormalized on load
FILE_SIMPLEX_TOL = 1e-8


def read_dataset(path, n_items: int, category_counts=None, intercept: bool = False) -> Dataset:
    """Parse a data CSV.

    ``category_counts`` may be a sequence of K_j, a single int for all items,
    or None to use the largest observed code per item (at least 2).
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise DataError(f"cannot read {path}: {err.strerror}") from None
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    header, body = rows[0], rows[1:]
    if n_items < 1 or n_items > len(header):
        raise DataError(f"{path}: {n_items} response columns requested, header has {len(header)}")
    codes = np.empty((len(body), n_items), dtype=np.int64)
    covs = np.empty((len(body), len(header) - n_items))
    for i, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                if j < n_items:
                    codes[i - 1, j] = int(cell)
                else:
                    covs[i - 1, j - n_items] = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i}, column {j + 1} ({header[j]}): "
                                f"cannot parse {cell!r}") from None
    if category_counts is None:
        counts = tuple(max(2, int(c)) for c in codes.max(axis=0))
    elif np.isscalar(category_counts):
        counts = (int(category_counts),) * n_items
    else:
        counts = tuple(int(k) for k in category_counts)
    if intercept:
        covs = np.column_stack([np.ones(len(body)), covs])
    if covs.shape[1] == 0:
        raise DataError(f"{path}: no covariate columns (use --intercept for an intercept-only model)")
    return Dataset.from_codes(codes, counts, covs)


def write_dataset(path, dataset: Dataset, covariate_names=None, skip_intercept: bool = False) -> None:
    x = dataset.design[:, 1:] if skip_intercept else dataset.design
    names = covariate_names or [f"x{p + 1}" for p in range(x.shape[1])]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"y{j + 1}" for j in range(dataset.n_items)] + list(names))
        for codes, cov in zip(dataset.responses + 1, x):
            w.writerow([int(c) for c in codes] + [repr(float(v)) for v in cov])


def params_to_dict(params: ModelParams) -> dict:
    return {
        "n_classes": params.n_classes,
        "category_counts": list(params.category_counts),
        "n_covariates": int(params.beta.shape[1]),
        "beta": params.beta.tolist(),
        "pi": [[p[r].tolist() for p in params.pi] for r in range(params.n_classes)],
    }


def params_from_dict(d: dict) -> ModelParams:
    try:
        n_classes = int(d["n_classes"])
        pi_nested = d["pi"]
        beta = np.array(d["beta"], dtype=float).reshape(n_classes - 1, int(d["n_covariates"]))
    except (KeyError, TypeError, ValueError) as err:
        raise DataError(f"malformed parameter file: {err}") from None
    if len(pi_nested) != n_classes:
        raise DataError(f"pi lists {len(pi_nested)} classes, n_classes is {n_classes}")
    n_items = len(pi_nested[0])
    pi = []
    for j in range(n_items):
        try:
            p = np.array([pi_nested[r][j] for r in range(n_classes)], dtype=float)
        except (IndexError, ValueError):
            raise DataError(f"pi is ragged across classes at item {j + 1}") from None
        if p.ndim != 2:
            raise DataError(f"pi is ragged across classes at item {j + 1}")
        sums = p.sum(axis=1)
        if np.any(p < 0) or np.any(np.abs(sums - 1) > FILE_SIMPLEX_TOL):
            r = int(np.argmax(np.abs(sums - 1) + (p < 0).any(axis=1)))
            raise DataError(f"pi row for class {r + 1}, item {j + 1} is not a probability "
                            f"vector (sum {sums[r]:.10g})")
        pi.append(p / sums[:, None])
    if "category_counts" in d and tuple(d["category_counts"]) != tuple(q.shape[1] for q in pi):
        raise DataError("category_counts disagrees with pi")
    return ModelParams(beta, tuple(pi))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as err:
        raise DataError(f"cannot read {path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: invalid JSON ({err})") from None


def write_params(path, params: ModelParams) -> None:
    write_json(path, params_to_dict(params))


def read_params(path) -> ModelParams:
    return params_from_dict(read_json(path))


def write_trace(path, trace) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loglik"])
        for t, v in enumerate(trace):
            w.writerow([t, repr(float(v))])


def read_trace(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["iteration", "loglik"]:
        raise DataError(f"{path}: not a trace file")
    return np.array([float(r[1]) for r in rows[1:]])


def _covariate_from_dict(d: dict):
    kind = d.get("type")
    if kind == "categorical":
        return Categorical(tuple(d["levels"]), tuple(d["probs"]))
    if kind == "normal":
        return Normal(float(d.get("mean", 0.0)), float(d.get("sd", 1.0)))
    raise DataError(f"unknown covariate type {kind!r}")


def model_to_dict(model: TrueModel) -> dict:
    covs = []
    for c in model.covariates:
        if isinstance(c, Categorical):
            covs.append({"type": "categorical", "levels": list(c.levels), "probs": list(c.probs)})
        else:
            covs.append({"type": "normal", "mean": c.mean, "sd": c.sd})
    return {**params_to_dict(model.params), "intercept": model.intercept, "covariates": covs}


def model_from_dict(d: dict) -> TrueModel:
    covs = tuple(_covariate_from_dict(c) for c in d.get("covariates", []))
    return TrueModel(params_from_dict(d), covs, bool(d.get("intercept", True)))


def write_runs(path, records) -> None:
    fields = ["run", "seed", "algorithm", "loglik", "iterations", "decays",
              "converged", "wall_time", "error"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in records:
            row = []
            for f in fields:
                v = getattr(r, f)
                row.append("" if v is None else repr(v) if isinstance(v, float) else v)
            w.writerow(row)


def read_runs(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
