"""Tables, schemas, normalization and the random draws used in training.

Masks follow the usual convention: 1 marks an observed cell, 0 a missing
one. Missing cells hold the placeholder 0 in ``DataTable.values``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError, LoadError, NormalizationError, SchemaError

CONTINUOUS = "continuous"
BINARY = "binary"
COLUMN_KINDS = (CONTINUOUS, BINARY)
MISSING_TOKENS = {"", "na", "nan", "null"}

STREAM_NAMES = ("mask", "noise", "hint", "init", "batch")


@dataclass(frozen=True)
class DataTable:
    values: np.ndarray
    mask: np.ndarray
    column_kinds: Tuple[str, ...]
    column_names: Tuple[str, ...] = ()
    labels: Optional[np.ndarray] = None
    label_names: Tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=np.float64)
        if values.ndim != 2 or mask.shape != values.shape:
            raise InputError(f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        if not np.isin(mask, (0.0, 1.0)).all():
            raise InputError("mask entries must be 0 or 1")
        d = values.shape[1]
        kinds = tuple(self.column_kinds) if self.column_kinds else (CONTINUOUS,) * d
        names = tuple(self.column_names) if self.column_names else tuple(f"x{j}" for j in range(d))
        if len(kinds) != d or len(names) != d:
            raise InputError("column_kinds and column_names must have one entry per column")
        for kind in kinds:
            if kind not in COLUMN_KINDS:
                raise SchemaError(f"unknown column kind {kind!r}")
        observed = mask == 1.0
        if not np.isfinite(values[observed]).all():
            raise InputError("observed cells must be finite")
        values = np.where(observed, values, 0.0)
        for j, kind in enumerate(kinds):
            if kind == BINARY and not np.isin(values[observed[:, j], j], (0.0, 1.0)).all():
                raise SchemaError(f"binary column {names[j]!r} holds values other than 0/1")
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (values.shape[0],):
                raise InputError("labels need one entry per row")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "column_kinds", kinds)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "label_names", tuple(self.label_names))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def is_complete(self) -> bool:
        return bool((self.mask == 1.0).all())

    def replace(self, **changes) -> "DataTable":
        fields = dict(
            values=self.values, mask=self.mask, column_kinds=self.column_kinds,
            column_names=self.column_names, labels=self.labels, label_names=self.label_names,
        )
        fields.update(changes)
        return DataTable(**fields)

    def select_columns(self, keep: Sequence[int]) -> "DataTable":
        keep = list(keep)
        return self.replace(
            values=self.values[:, keep],
            mask=self.mask[:, keep],
            column_kinds=tuple(self.column_kinds[j] for j in keep),
            column_names=tuple(self.column_names[j] for j in keep),
        )


@dataclass
class Schema:
    """Column kinds by name (undeclared columns are continuous) and the label column."""

    column_kinds: Dict[str, str] = field(default_factory=dict)
    label_column: Optional[str] = None

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        kinds = dict(raw.get("column_kinds", {}))
        for name in raw.get("binary", []):
            kinds[name] = BINARY
        for name, kind in kinds.items():
            if kind not in COLUMN_KINDS:
                raise SchemaError(f"column {name!r}: unknown kind {kind!r}")
        return cls(kinds, raw.get("label_column"))

    def to_dict(self) -> dict:
        return {"column_kinds": dict(sorted(self.column_kinds.items())),
                "label_column": self.label_column}


def read_csv_text(path) -> Tuple[List[str], List[List[str]]]:
    """Header and raw string cells of a CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if not rows:
        raise LoadError(f"{path}: empty file, a header row is required")
    header, body = rows[0], rows[1:]
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise LoadError(f"{path}: row {i + 1} has {len(row)} cells, header has {len(header)}")
    return header, body


def is_missing_token(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def load_csv(path, schema: Optional[Schema] = None) -> DataTable:
    schema = schema or Schema()
    header, body = read_csv_text(path)
    for name in schema.column_kinds:
        if name not in header:
            raise SchemaError(f"schema declares column {name!r} which is not in {path}")
    if schema.label_column is not None and schema.label_column not in header:
        raise SchemaError(f"label column {schema.label_column!r} is not in {path}")
    feature_idx = [j for j, name in enumerate(header) if name != schema.label_column]
    n, d = len(body), len(feature_idx)
    values = np.zeros((n, d))
    mask = np.zeros((n, d))
    for i, row in enumerate(body):
        for out_j, j in enumerate(feature_idx):
            cell = row[j]
            if is_missing_token(cell):
                continue
            try:
                value = float(cell)
            except ValueError:
                raise LoadError(
                    f"{path}: cannot parse {cell!r} at row {i + 1}, column {header[j]!r}"
                ) from None
            if not np.isfinite(value):
                raise LoadError(f"{path}: non-finite value at row {i + 1}, column {header[j]!r}")
            values[i, out_j] = value
            mask[i, out_j] = 1.0
    names = tuple(header[j] for j in feature_idx)
    kinds = tuple(schema.column_kinds.get(name, CONTINUOUS) for name in names)
    labels, label_names = None, ()
    if schema.label_column is not None:
        j = header.index(schema.label_column)
        raw = [row[j].strip() for row in body]
        if any(is_missing_token(v) for v in raw):
            raise LoadError(f"{path}: label column {schema.label_column!r} has empty cells")
        label_names = tuple(sorted(set(raw), key=_label_sort_key))
        lookup = {name: k for k, name in enumerate(label_names)}
        labels = np.array([lookup[v] for v in raw], dtype=np.int64)
    return DataTable(values, mask, kinds, names, labels, label_names)


def _label_sort_key(value: str):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)


def write_csv(path, table: DataTable, comment: Optional[str] = None) -> None:
    """Write a table with empty cells where the mask is 0."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        header = list(table.column_names)
        if table.labels is not None:
            header.append("label")
        writer.writerow(header)
        for i in range(table.n_rows):
            row = [repr(float(v)) if m else "" for v, m in zip(table.values[i], table.mask[i])]
            if table.labels is not None:
                lab = table.labels[i]
                row.append(table.label_names[lab] if table.label_names else str(lab))
            writer.writerow(row)


def drop_sparse_columns(table: DataTable, max_missing_fraction: float) -> Tuple[DataTable, List[int]]:
    """Remove columns whose missing fraction exceeds the threshold.

    Returns the reduced table and the indices of the kept columns.
    """
    missing = 1.0 - table.mask.mean(axis=0)
    keep = [j for j in range(table.n_cols) if missing[j] <= max_missing_fraction]
    return table.select_columns(keep), keep


@dataclass(frozen=True)
class NormalizationParams:
    mins: np.ndarray
    maxs: np.ndarray
    continuous: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        scaled = np.where(span > 0, (values - self.mins) / safe, 0.0)
        return np.where(self.continuous, scaled, values)

    def invert(self, values: np.ndarray) -> np.ndarray:
        restored = values * (self.maxs - self.mins) + self.mins
        return np.where(self.continuous, restored, values)


def normalize(table: DataTable) -> Tuple[DataTable, NormalizationParams]:
    """Min-max scale observed continuous entries to [0, 1]; binary columns pass through."""
    d = table.n_cols
    continuous = np.array([k == CONTINUOUS for k in table.column_kinds])
    mins, maxs = np.zeros(d), np.ones(d)
    observed = table.mask == 1.0
    for j in range(d):
        if not continuous[j]:
            continue
        col = table.values[observed[:, j], j]
        if col.size == 0:
            raise NormalizationError(f"column {table.column_names[j]!r} has no observed values")
        mins[j], maxs[j] = col.min(), col.max()
    params = NormalizationParams(mins, maxs, continuous)
    scaled = np.where(observed, params.apply(table.values), 0.0)
    return table.replace(values=scaled), params


def denormalize(values: np.ndarray, params: NormalizationParams) -> np.ndarray:
    return params.invert(np.asarray(values, dtype=np.float64))


@dataclass
class RngStreams:
    """Independent generators for masking, noise, hints, initialization and batching."""

    mask: np.random.Generator
    noise: np.random.Generator
    hint: np.random.Generator
    init: np.random.Generator
    batch: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int, *keys: int) -> "RngStreams":
        """Streams derived from a master seed plus optional integer keys (trial, candidate...)."""
        root = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
        children = root.spawn(len(STREAM_NAMES))
        return cls(*[np.random.Generator(np.random.PCG64(c)) for c in children])

    def next_seed(self) -> int:
        """A fresh integer seed drawn from the init stream."""
        return int(self.init.integers(0, 2**63 - 1))


def generate_mcar_mask(shape, miss_rate: float, rng: np.random.Generator) -> np.ndarray:
    """Each cell missing independently with probability ``miss_rate``."""
    if not 0.0 <= miss_rate <= 1.0:
        raise InputError(f"miss_rate must lie in [0, 1], got {miss_rate}")
    return (rng.random(shape) >= miss_rate).astype(np.float64)


def make_observed(table, mask) -> np.ndarray:
    values = table.values if isinstance(table, DataTable) else np.asarray(table, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if values.shape != mask.shape:
        raise InputError(f"values {values.shape} and mask {mask.shape} differ in shape")
    return np.where(mask == 1.0, values, 0.0)


def sample_batch(table, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Row indices drawn without replacement; ``batch_size`` is clamped to the row count."""
    n = table.n_rows if isinstance(table, DataTable) else int(table)
    if batch_size < 1:
        raise InputError("batch_size must be at least 1")
    return rng.choice(n, size=min(int(batch_size), n), replace=False)


def sample_noise(shape, rng: np.random.Generator, high: float = 0.01) -> np.ndarray:
    return rng.uniform(0.0, high, size=shape)


def sample_hint(mask_batch, hint_rate: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Hint matrix H and reveal indicator B.

    Where B is 1 the hint equals the mask, elsewhere it is 0.5.
    """
    if not 0.0 <= hint_rate <= 1.0:
        raise InputError(f"hint_rate must lie in [0, 1], got {hint_rate}")
    mask_batch = np.asarray(mask_batch, dtype=np.float64)
    reveal = (rng.random(mask_batch.shape) < hint_rate).astype(np.float64)
    hint = reveal * mask_batch + 0.5 * (1.0 - reveal)
    return hint, reveal


def schema_digest(table: DataTable) -> str:
    text = json.dumps([list(table.column_names), list(table.column_kinds)])
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def table_from_array(values, column_kinds=None, labels=None, mask=None, column_names=None) -> DataTable:
    """Convenience constructor; NaN entries become missing cells."""
    values = np.asarray(values, dtype=np.float64)
    if mask is None:
        mask = np.isfinite(values).astype(np.float64)
    values = np.where(np.asarray(mask) == 1.0, np.nan_to_num(values), 0.0)
    return DataTable(values, mask, tuple(column_kinds or ()), tuple(column_names or ()), labels)

