"""Readers and writers for datasets, fit artifacts and curve exports.

Fit artifacts and gamma-search reports are JSON documents carrying a
``format_version`` field.  Curve exports are CSV files whose leading ``#``
lines hold JSON metadata.  Floats are written in shortest round-trip form
so every file reads back to the exact values that were written.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .estimator import Dataset, MultiQuantileModel, QuantileModel, predict
from .metrics import coverage_error, quantile_property_check, ramp_loss

FORMAT_VERSION = 1


class InputError(ValueError):
    """Malformed user input (CSV data, artifacts, grids)."""


def read_dataset(path) -> Dataset:
    """Read a ``x1,...,xd,y`` CSV file.

    Errors name the offending file line (1-based, header is line 1) and column.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    rows, lines = [], []
    for r in reader:
        if r and any(c.strip() for c in r):
            rows.append(r)
            lines.append(reader.line_num)
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    d = len(header) - 1
    expected = [f"x{k}" for k in range(1, d + 1)] + ["y"]
    if d < 1 or header != expected:
        raise InputError(f"{path}: header must be x1,...,xd,y, got {','.join(header)}")
    body = rows[1:]
    if len(body) < 2:
        raise InputError(f"{path}: need at least 2 data rows, found {len(body)}")
    values = np.empty((len(body), d + 1))
    for i, (row, line) in enumerate(zip(body, lines[1:])):
        if len(row) != d + 1:
            raise InputError(f"{path}: line {line} has {len(row)} fields, expected {d + 1}")
        for j, cell in enumerate(row):
            try:
                v = float(cell.strip())
            except ValueError:
                raise InputError(f"{path}: line {line}, column {header[j]}: "
                                 f"not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise InputError(f"{path}: line {line}, column {header[j]}: non-finite value {cell!r}")
            values[i, j] = v
    return Dataset(values[:, :d], values[:, d])


def write_dataset(data: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(1, data.d + 1)] + ["y"])
        for x, y in zip(data.X.tolist(), data.y.tolist()):
            w.writerow([repr(v) for v in x] + [repr(y)])


def _quantile_doc(model: QuantileModel, data: Optional[Dataset]) -> dict:
    doc = {
        "tau": model.tau,
        "objective": model.objective,
        "alpha": model.alpha.tolist(),
        "beta": model.beta.tolist(),
        "eps_pos": model.eps_pos.tolist(),
        "eps_neg": model.eps_neg.tolist(),
    }
    n_pos, n_neg, ok = quantile_property_check(model)
    metrics = {"n_pos": n_pos, "n_neg": n_neg, "property_ok": ok}
    if data is not None:
        qhat = predict(model, data.X)
        metrics["ramp_loss"] = ramp_loss(data.y, qhat, model.tau)
        metrics["coverage_error"] = coverage_error(data.y, qhat, model.tau)
    doc["metrics"] = metrics
    return doc


def fit_artifact(model: Union[QuantileModel, MultiQuantileModel], estimator: str,
                 data: Dataset, gamma: Optional[float] = None) -> dict:
    """Structured description of a fitted model, ready for :func:`write_json`."""
    if isinstance(model, MultiQuantileModel):
        models, objective, C = model.models, model.objective, model.C.tolist()
    else:
        models, objective, C = (model,), model.objective, None
    return {
        "format_version": FORMAT_VERSION,
        "kind": "fit",
        "estimator": estimator,
        "n": data.n,
        "d": data.d,
        "gamma": gamma,
        "C": C,
        "objective": objective,
        "inputs": data.X.tolist(),
        "outputs": data.y.tolist(),
        "quantiles": [_quantile_doc(m, data) for m in models],
    }


def write_json(doc: dict, path) -> None:
    text = json.dumps(doc, indent=1, allow_nan=False) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def read_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise InputError(f"{path}: not a format_version {FORMAT_VERSION} document")
    return doc


@dataclass(frozen=True, eq=False)
class LoadedQuantile:
    """One quantile function read back from an artifact."""

    model: QuantileModel
    estimator: str
    gamma: Optional[float]
    C: Optional[list]
    inputs: np.ndarray


def load_quantiles(path) -> list[LoadedQuantile]:
    """All quantile functions in a fit artifact or a gamma-search report."""
    doc = read_json(path)
    kind = doc.get("kind")
    if kind == "gamma_search":
        docs = [doc["fits"]["low"], doc["fits"]["high"]]
    elif kind == "fit":
        docs = [doc]
    else:
        raise InputError(f"{path}: unknown document kind {kind!r}")
    out = []
    try:
        for fd in docs:
            X = np.asarray(fd["inputs"], dtype=float).reshape(fd["n"], fd["d"])
            for qd in fd["quantiles"]:
                beta = np.asarray(qd["beta"], dtype=float).reshape(fd["n"], fd["d"])
                model = QuantileModel(
                    tau=float(qd["tau"]), alpha=np.asarray(qd["alpha"], dtype=float), beta=beta,
                    eps_pos=np.asarray(qd["eps_pos"], dtype=float),
                    eps_neg=np.asarray(qd["eps_neg"], dtype=float),
                    gamma=float(fd["gamma"] or 0.0), objective=float(qd["objective"]), X=X)
                out.append(LoadedQuantile(model, fd["estimator"], fd["gamma"], fd["C"], X))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed artifact: {exc}") from exc
    return out


def parse_grid(spec: str, inputs: np.ndarray) -> np.ndarray:
    """Evaluation points from a grid spec.

    ``"N"``      N points on the segment from the columnwise min to max of ``inputs``
    ``"lo:hi:N"`` N points with every coordinate running from lo to hi
    ``"data"``   the training inputs themselves
    """
    spec = spec.strip()
    if spec == "data":
        return np.array(inputs, dtype=float)
    parts = spec.split(":")
    try:
        if len(parts) == 1:
            num = int(parts[0])
            lo, hi = inputs.min(axis=0), inputs.max(axis=0)
        elif len(parts) == 3:
            num = int(parts[2])
            lo = np.full(inputs.shape[1], float(parts[0]))
            hi = np.full(inputs.shape[1], float(parts[1]))
        else:
            raise ValueError
    except ValueError:
        raise InputError(f"bad grid spec {spec!r}; use N, lo:hi:N or data") from None
    if num < 1:
        raise InputError(f"grid spec {spec!r} has no points")
    t = np.linspace(0.0, 1.0, num)[:, None]
    return lo + t * (hi - lo)


def write_curve(path, points: np.ndarray, quantiles: Sequence[LoadedQuantile]) -> None:
    """Write evaluated quantile curves, one row per point and one column per quantile."""
    columns = []
    for k, lq in enumerate(quantiles, start=1):
        columns.append({"name": f"q{k}", "tau": lq.model.tau, "estimator": lq.estimator,
                        "gamma": lq.gamma, "C": lq.C})
    values = [predict(lq.model, points) for lq in quantiles]
    d = points.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# format_version: {FORMAT_VERSION}\n")
        fh.write("# kind: curve\n")
        fh.write("# columns: " + json.dumps(columns) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(1, d + 1)] + [c["name"] for c in columns])
        for i in range(points.shape[0]):
            w.writerow([repr(float(v)) for v in points[i]] + [repr(float(v[i])) for v in values])


def read_curve(path) -> tuple[dict, np.ndarray, np.ndarray]:
    """Inverse of :func:`write_curve`: ``(meta, points, values)``."""
    meta, body = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
            else:
                body.append(line)
    if meta.get("format_version") != str(FORMAT_VERSION):
        raise InputError(f"{path}: not a format_version {FORMAT_VERSION} curve file")
    meta["columns"] = json.loads(meta["columns"])
    rows = list(csv.reader(body))
    header, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    d = len(header) - len(meta["columns"])
    return meta, data[:, :d], data[:, d:]
