"""File formats: quote CSV, kernel and estimate JSON, study reports, manifests."""

from __future__ import annotations

import csv
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .core import CumulativeKernel, Grid, QuoteSet, l2_distance, sup_distance
from .errors import InputError

__all__ = [
    "QuoteParseError",
    "fmt",
    "read_quotes_csv",
    "write_quotes_csv",
    "kernel_to_dict",
    "kernel_from_dict",
    "estimate_to_dict",
    "write_json",
    "read_json",
    "load_schema",
    "validate",
    "write_study_csv",
    "write_timing_csv",
    "STUDY_COLUMNS",
]

STUDY_COLUMNS = ("method", "N", "replication", "seed", "lambda", "sup_error", "l2_error", "objective", "iterations")


class QuoteParseError(InputError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def fmt(x) -> str:
    """17 significant digits; round-trips every double."""
    return format(float(x), ".17g")


def read_quotes_csv(path) -> QuoteSet:
    """Read ``strike,price[,sigma]``. Extra columns are ignored."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise QuoteParseError("empty file", line=1)
        cols = [h.strip().lower() for h in header]
        if "strike" not in cols or "price" not in cols:
            raise QuoteParseError(f"header must contain 'strike' and 'price', got {header}", line=1)
        i_k, i_p = cols.index("strike"), cols.index("price")
        i_s = cols.index("sigma") if "sigma" in cols else None
        strikes, prices, sigmas = [], [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(cols):
                raise QuoteParseError(f"expected {len(cols)} fields, got {len(row)}", line=line)
            try:
                k, p = float(row[i_k]), float(row[i_p])
                s = float(row[i_s]) if i_s is not None and row[i_s].strip() else None
            except ValueError as exc:
                raise QuoteParseError(f"not a number: {exc}", line=line) from None
            if not (math.isfinite(k) and math.isfinite(p)):
                raise QuoteParseError("non-finite value", line=line)
            strikes.append(k)
            prices.append(p)
            if s is not None:
                sigmas.append(s)
    if not strikes:
        raise QuoteParseError("no quote rows", line=2)
    sigma = None
    if sigmas and len(set(sigmas)) == 1:
        sigma = sigmas[0]
    return QuoteSet(np.array(strikes), np.array(prices), noise_sigma=sigma)


def write_quotes_csv(path, quotes: QuoteSet, with_sigma: bool = False):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strike", "price", "sigma"] if with_sigma else ["strike", "price"])
        for k, p in zip(quotes.strikes, quotes.prices):
            row = [fmt(k), fmt(p)]
            if with_sigma:
                row.append(fmt(quotes.noise_sigma or 0.0))
            w.writerow(row)


def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=float)]


def kernel_to_dict(P: CumulativeKernel, spec=None) -> dict:
    return {
        "B": P.grid.B,
        "M": P.grid.M,
        "base": P.base,
        "increments": _floats(P.increments),
        "values": _floats(P.values),
        "spec": spec.to_dict() if spec is not None else None,
    }


def kernel_from_dict(d: dict) -> CumulativeKernel:
    validate(d, "kernel")
    return CumulativeKernel(Grid(d["B"], d["M"]), d["base"], np.asarray(d["increments"], dtype=float))


def estimate_to_dict(est, quotes: QuoteSet, entropy_form: str = "generalized",
                     truth: CumulativeKernel | None = None) -> dict:
    g = est.kernel.grid
    out = {
        "method": est.method,
        "grid": {"B": g.B, "M": g.M},
        "nodes": _floats(g.nodes),
        "values": _floats(est.kernel.values),
        "base": est.kernel.base,
        "increments": _floats(est.kernel.increments),
        "extrapolated": [bool(v) for v in est.extrapolated],
        "nonunique": [bool(v) for v in est.nonunique] if est.nonunique is not None else [],
        "identifiable_upper": est.identifiable_upper,
        "strikes": _floats(quotes.strikes),
        "quotes": _floats(quotes.prices),
        "fitted_prices": _floats(est.fitted_prices),
        "objective": {
            "total": est.objective,
            "mse_term": est.mse_term,
            "entropy_term": est.entropy_term,
            "lambda": est.lam,
            "entropy_form": entropy_form,
        },
        "solver": {
            "iterations": int(est.iterations),
            "kkt_residual": est.kkt_residual,
            "warnings": list(est.warnings),
        },
    }
    if truth is not None:
        out["errors"] = {
            "sup_error": sup_distance(est.kernel, truth, est.identifiable_upper),
            "l2_error": l2_distance(est.kernel, truth, est.identifiable_upper),
        }
    return out


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_json(path, obj):
    text = json.dumps(_clean(obj), indent=2, allow_nan=False)
    Path(path).write_text(text + "\n")


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def load_schema(name: str) -> dict:
    return json.loads(resources.files("pkernel").joinpath("schemas", f"{name}.schema.json").read_text())


def validate(obj, schema_name: str):
    """Raise :class:`InputError` naming the offending field path."""
    try:
        jsonschema.validate(_clean(obj), load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"{schema_name}: field '{where}': {exc.message}") from None


def write_study_csv(path, report):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for r in report.rows:
            w.writerow([r.method, r.N, r.replication, r.seed, fmt(r.lam), fmt(r.sup_error),
                        fmt(r.l2_error), fmt(r.objective), r.iterations])


def write_timing_csv(path, report):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "N", "replication", "runtime_ms"])
        for r in report.rows:
            w.writerow([r.method, r.N, r.replication, f"{r.runtime_ms:.3f}"])
