"""Config files, canonical hashing, run manifests, and data file IO.

Configs are JSON objects mirroring :class:`~gradmatch.study.StudyConfig`
plus a ``schema_version`` field.  Unknown keys are rejected outright so a
typo cannot silently fall back to a default.  Data files are delimited
text with a header row ``t, y1, ..., yd``.
"""

from __future__ import annotations

import datetime
import hashlib
import json
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__ as _version
from .errors import InvalidArgumentError, ParseError
from .study import StudyConfig

__all__ = ["SCHEMA_VERSION", "load_config", "canonical_config_json",
           "config_hash", "run_manifest", "read_data_file", "write_data_file"]

SCHEMA_VERSION = 1

_CONFIG_FIELDS = {f.name for f in fields(StudyConfig)}
_LIST_FIELDS = {"n_list"}


def load_config(path) -> StudyConfig:
    """Parse and validate a JSON config file into a StudyConfig."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc.msg}",
                         line=exc.lineno) from None
    if not isinstance(raw, dict):
        raise ParseError("config must be a JSON object")
    version = raw.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise InvalidArgumentError(
            f"unsupported config schema_version {version}; this build reads "
            f"version {SCHEMA_VERSION}")
    unknown = set(raw) - _CONFIG_FIELDS
    if unknown:
        raise InvalidArgumentError(
            f"unknown config keys {sorted(unknown)}; allowed keys: "
            f"{sorted(_CONFIG_FIELDS)}")
    for key in _LIST_FIELDS & set(raw):
        raw[key] = tuple(raw[key])
    cfg = StudyConfig(**raw)
    return cfg.validate()


def canonical_config_json(cfg: StudyConfig) -> str:
    """Key-sorted, whitespace-free JSON rendering used for hashing and echo."""
    payload = asdict(cfg)
    payload["schema_version"] = SCHEMA_VERSION
    payload["n_list"] = list(payload["n_list"])
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: StudyConfig) -> str:
    return hashlib.sha256(canonical_config_json(cfg).encode()).hexdigest()[:16]


def run_manifest(cfg: StudyConfig, inputs: dict, outputs: dict) -> dict:
    """Provenance record for a CLI run (hash, paths, seed, times, version)."""
    return {
        "config_hash": config_hash(cfg),
        "config": json.loads(canonical_config_json(cfg)),
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "seed": cfg.seed,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "version": _version,
    }


def _split_row(line: str):
    return [tok for tok in line.replace(",", " ").split() if tok]


def read_data_file(path):
    """Read a delimited data file with header ``t, y1, ..., yd``.

    Returns ``(t, Y)`` with Y of shape (n, d).  Malformed rows raise
    :class:`ParseError` carrying the 1-based line number.
    """
    lines = Path(path).read_text().splitlines()
    rows = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not rows:
        raise ParseError("data file is empty", line=1)
    header_no, header = rows[0]
    names = _split_row(header)
    try:
        float(names[0])
    except ValueError:
        pass
    else:
        raise ParseError("data file must start with a header row "
                         "(e.g. 't,y1')", line=header_no)
    if len(names) < 2:
        raise ParseError("header must name a time column and at least one "
                         "response column", line=header_no)
    width = len(names)
    t_vals, y_vals = [], []
    for lineno, ln in rows[1:]:
        toks = _split_row(ln)
        if len(toks) != width:
            raise ParseError(
                f"expected {width} columns, found {len(toks)}", line=lineno)
        try:
            nums = [float(tok) for tok in toks]
        except ValueError as exc:
            raise ParseError(f"non-numeric value: {exc}", line=lineno) from None
        t_vals.append(nums[0])
        y_vals.append(nums[1:])
    if not t_vals:
        raise ParseError("data file holds a header but no observations",
                         line=header_no)
    return np.asarray(t_vals), np.asarray(y_vals)


def write_data_file(path, t, y) -> None:
    """Write ``(t, Y)`` as comma-delimited text that round-trips exactly."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    header = "t," + ",".join(f"y{j + 1}" for j in range(y.shape[1]))
    lines = [header]
    for i in range(len(t)):
        vals = [repr(float(t[i]))] + [repr(float(v)) for v in y[i]]
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")
