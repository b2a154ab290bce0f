"""On-disk formats.

Instance and noise files are ``.npz`` archives with a ``format_version``
entry and a JSON ``meta`` string; no pickled objects are stored.  Sweep
output is CSV whose first column is ``schema_version``, with a JSON sidecar
holding the fully materialised configuration.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import NoiseRealization, PerturbationScheme, ProblemInstance

INSTANCE_FORMAT = "privlasso-instance/1"
NOISE_FORMAT = "privlasso-noise/1"
SCHEMA_VERSION = 1
STATUSES = ("converged", "max_iter", "diverged", "se_unstable")


class FormatError(ValueError):
    pass


def _check_format(data, expected, path):
    if "format_version" not in data.files:
        raise FormatError(f"{path}: missing format_version")
    got = str(data["format_version"])
    if got != expected:
        raise FormatError(f"{path}: format {got!r}, expected {expected!r}")


def save_instance(path, instance: ProblemInstance) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, format_version=np.array(INSTANCE_FORMAT), F=instance.F, y=instance.y,
                 x0=instance.x0, v=instance.v, sigma_xi=np.array(instance.sigma_xi),
                 seed=np.array(instance.seed, dtype=np.uint64),
                 meta=np.array(json.dumps(instance.meta, sort_keys=True)))


def load_instance(path) -> ProblemInstance:
    with np.load(path, allow_pickle=False) as data:
        _check_format(data, INSTANCE_FORMAT, path)
        return ProblemInstance(F=data["F"], y=data["y"], x0=data["x0"], v=data["v"],
                               sigma_xi=float(data["sigma_xi"]), seed=int(data["seed"]),
                               meta=json.loads(str(data["meta"])))


def save_noise(path, noise: NoiseRealization, seed: int | None = None) -> None:
    meta = {"scheme": noise.scheme.variant.value,
            "sigma_eta_bar_sq": noise.scheme.sigma_eta_bar_sq, "seed": seed}
    with open(path, "wb") as fh:
        np.savez(fh, format_version=np.array(NOISE_FORMAT), eta=noise.eta,
                 variances=noise.variances, meta=np.array(json.dumps(meta, sort_keys=True)))


def load_noise(path) -> NoiseRealization:
    with np.load(path, allow_pickle=False) as data:
        _check_format(data, NOISE_FORMAT, path)
        meta = json.loads(str(data["meta"]))
        scheme = PerturbationScheme(meta["scheme"], meta["sigma_eta_bar_sq"])
        return NoiseRealization(eta=data["eta"], variances=data["variances"], scheme=scheme)


@dataclass(frozen=True)
class RunRecord:
    """One output row.  Optional fields are written as empty cells."""

    schema_version: int
    engine: str
    scheme: str
    scale_model: str
    alpha: float
    rho: float
    sigma_xi: float
    lam: float
    sigma_eta_bar: float
    N: int | None
    M: int | None
    seed: int | None
    damping: float | None
    status: str
    iterations: int | None
    E_generalization: float | None
    rho_hat: float | None
    cw_onave_kl: float | None
    wall_time_ms: float

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"status {self.status!r} not in {STATUSES}")
        if self.E_generalization is not None and self.E_generalization < 0:
            raise ValueError("E_generalization must be >= 0")


# CSV header names; "lambda" is a keyword in Python, hence the field name ``lam``.
CSV_COLUMNS = tuple("lambda" if f.name == "lam" else f.name for f in fields(RunRecord))


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


class RecordWriter:
    """Serialised CSV writer; rows are flushed as they arrive."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, quoting=csv.QUOTE_MINIMAL)
        self._w.writerow(CSV_COLUMNS)

    def write(self, rec: RunRecord):
        self._w.writerow([_cell(v) for v in asdict(rec).values()])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_records(path, records: Iterable[RunRecord]) -> None:
    with RecordWriter(path) as w:
        for rec in records:
            w.write(rec)


def _parse(x: str, typ):
    if x == "":
        return None
    if typ is int:
        return int(x)
    if typ is float:
        return float(x)
    return x


def read_records(path) -> list[RunRecord]:
    types = {"schema_version": int, "N": int, "M": int, "seed": int, "iterations": int,
             "engine": str, "scheme": str, "scale_model": str, "status": str}
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise FormatError(f"{path}: unexpected header {header}")
        for row in reader:
            kw = {}
            for f, cell in zip(fields(RunRecord), row):
                kw[f.name] = _parse(cell, types.get(f.name, float))
            out.append(RunRecord(**kw))
    return out


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n",
                          encoding="utf-8")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


def json_safe(x):
    """Replace non-finite floats by strings so output is strict JSON."""
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if isinstance(x, dict):
        return {k: json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [json_safe(v) for v in x]
    return x
