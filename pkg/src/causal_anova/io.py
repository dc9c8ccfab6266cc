"""Plain-file loading: CSV tables and JSON schemas.

A table is a headed CSV. Columns whose every value parses as a float load as
numeric; anything else stays text. A schema is a JSON object

    {"outcome": "y",
     "factors": {"W1": {"kind": "continuous"},
                 "W2": {"kind": "discrete", "levels": [0, 1]}}}

naming the outcome column, the factor columns to use (others are ignored)
and their kinds; "levels" is optional and defaults to the sorted distinct
values present. Without a schema every non-outcome column is a factor and
kinds are inferred from the data.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .core import Continuous, Discrete, FactorKind, validate_dataset
from .errors import EmptyData, InputError, LengthMismatch


def read_table(path: str) -> dict[str, np.ndarray]:
    """Columns of a headed CSV, numeric where every value parses as float."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise EmptyData(f"{path}: file is empty") from None
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc

    header = [name.strip() for name in header]
    if any(not name for name in header):
        raise InputError(f"{path}: blank column name in header")
    if len(set(header)) != len(header):
        raise InputError(f"{path}: duplicate column names in header")

    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise LengthMismatch(
                f"{path}: row {i + 2} has {len(row)} fields, header has {len(header)}"
            )

    columns: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        raw = [row[j].strip() for row in rows]
        for i, v in enumerate(raw):
            if v == "":
                raise InputError(f"{path}: empty cell in column {name!r}, row {i + 2}")
        try:
            columns[name] = np.array([float(v) for v in raw], dtype=np.float64)
        except ValueError:
            columns[name] = np.array(raw, dtype=object)
    return columns


def read_schema(path: str) -> tuple[str, dict[str, dict]]:
    """(outcome name, factor name -> {"kind", "levels"?}) from a schema file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc

    if not isinstance(raw, dict) or "outcome" not in raw or "factors" not in raw:
        raise InputError(f"{path}: schema needs 'outcome' and 'factors' keys")
    outcome = raw["outcome"]
    factors = raw["factors"]
    if not isinstance(outcome, str) or not isinstance(factors, dict) or not factors:
        raise InputError(f"{path}: 'outcome' must be a name, 'factors' a nonempty object")
    out: dict[str, dict] = {}
    for name, spec in factors.items():
        if not isinstance(spec, dict) or spec.get("kind") not in ("discrete", "continuous"):
            raise InputError(
                f"{path}: factor {name!r} needs kind 'discrete' or 'continuous'"
            )
        if "levels" in spec and (
            not isinstance(spec["levels"], list) or not spec["levels"]
        ):
            raise InputError(f"{path}: factor {name!r} has bad 'levels'")
        out[name] = spec
    return outcome, out


def load_dataset(table_path: str, schema_path: str | None = None, outcome: str | None = None):
    """Read a CSV (and optional schema) into a validated Dataset."""
    columns = read_table(table_path)
    if schema_path is None:
        if outcome is None:
            raise InputError("an outcome column name is required without a schema")
        return validate_dataset(columns, outcome)

    schema_outcome, factor_specs = read_schema(schema_path)
    if outcome is not None and outcome != schema_outcome:
        raise InputError(
            f"outcome given twice: {outcome!r} on the command line, "
            f"{schema_outcome!r} in the schema"
        )
    missing = [n for n in factor_specs if n not in columns] + (
        [] if schema_outcome in columns else [schema_outcome]
    )
    if missing:
        raise InputError(f"{table_path}: missing columns {missing}")

    kinds: dict[str, FactorKind] = {}
    for name, spec in factor_specs.items():
        if spec["kind"] == "continuous":
            kinds[name] = Continuous()
        elif "levels" in spec:
            col = columns[name]
            levels = spec["levels"]
            if np.issubdtype(col.dtype, np.number):
                levels = [float(v) for v in levels]
            kinds[name] = Discrete(tuple(levels))
        else:
            kinds[name] = Discrete(tuple(sorted(set(columns[name].tolist()))))

    used = {schema_outcome: columns[schema_outcome]}
    used.update({name: columns[name] for name in factor_specs})
    return validate_dataset(used, schema_outcome, kinds)
