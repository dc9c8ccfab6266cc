"""Data model and estimand algebra.

A dataset is an outcome column plus K factor columns, each declared Discrete
(with an explicit level list) or Continuous. Estimands are reduced to signed
combinations of building blocks, where a block is indexed by the subset of
factors *excluded* from the conditioning set:

    block(S) ~ E[ E[Y | W_not_S]^2 ] / Var(Y)

Excluding nothing conditions on all factors; excluding everything leaves the
squared outcome mean. A total-effect estimand for a factor subset S is
block(empty) - block(S); a pairwise interaction adds the two singleton
exclusions with negative sign and the joint exclusion back with positive
sign. Keeping blocks as the unit of estimation makes the inclusion-exclusion
identity between totals and interactions hold exactly by construction.

Factor indices are 0-based everywhere in this package. The CLI additionally
accepts 1-based positions and column names and converts at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    ConfigError,
    EmptyData,
    LengthMismatch,
    MissingSubset,
    NonFiniteOutcome,
    NonFiniteValue,
    TooFewObservations,
    UnknownLevel,
)

# Column kind inference: at most this many distinct values means Discrete.
MAX_INFERRED_LEVELS = 20


@dataclass(frozen=True)
class Discrete:
    """Finitely many levels; order of `levels` fixes the integer coding."""

    levels: tuple

    def __post_init__(self):
        if len(self.levels) == 0:
            raise ConfigError("a Discrete factor needs at least one level")
        if len(set(self.levels)) != len(self.levels):
            raise ConfigError(f"duplicate declared levels: {self.levels!r}")


@dataclass(frozen=True)
class Continuous:
    pass


FactorKind = Union[Discrete, Continuous]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated outcome plus factor columns. Construct via validate_dataset."""

    outcome: np.ndarray
    factor_names: tuple[str, ...]
    factors: tuple[np.ndarray, ...]
    kinds: tuple[FactorKind, ...]
    _codes: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def num_factors(self) -> int:
        return len(self.factor_names)

    def codes(self, k: int) -> np.ndarray:
        """Integer codes of a Discrete factor, following its level order."""
        if k not in self._codes:
            kind = self.kinds[k]
            if not isinstance(kind, Discrete):
                raise ConfigError(f"factor {self.factor_names[k]!r} is not Discrete")
            lookup = {lvl: i for i, lvl in enumerate(kind.levels)}
            col = self.factors[k]
            self._codes[k] = np.fromiter(
                (lookup[v] for v in col.tolist()), dtype=np.int64, count=len(col)
            )
        return self._codes[k]

    def matrix(self) -> np.ndarray:
        """(n, K) float matrix; Discrete columns carry their integer codes."""
        cols = []
        for k, kind in enumerate(self.kinds):
            if isinstance(kind, Discrete):
                cols.append(self.codes(k).astype(np.float64))
            else:
                cols.append(np.asarray(self.factors[k], dtype=np.float64))
        return np.column_stack(cols) if cols else np.empty((self.n, 0))

    def index_of(self, name: str) -> int:
        try:
            return self.factor_names.index(name)
        except ValueError:
            raise ConfigError(f"unknown factor {name!r}") from None

    def to_columns(self) -> dict:
        cols = {"__outcome__": self.outcome.copy()}
        for name, col in zip(self.factor_names, self.factors):
            cols[name] = col.copy()
        return cols

    def replace_factors(self, new_factors: Sequence[np.ndarray], new_codes: Mapping[int, np.ndarray] | None = None) -> "Dataset":
        """Same schema, different factor columns. Caller guarantees validity
        (used by permutation, which only reorders existing values)."""
        ds = Dataset(self.outcome, self.factor_names, tuple(new_factors), self.kinds)
        if new_codes:
            ds._codes.update(new_codes)
        return ds

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.factor_names == other.factor_names
            and self.kinds == other.kinds
            and np.array_equal(self.outcome, other.outcome)
            and all(np.array_equal(a, b) for a, b in zip(self.factors, other.factors))
        )


def _as_column(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise LengthMismatch(f"columns must be 1-dimensional, got shape {arr.shape}")
    return arr


def _infer_kind(col: np.ndarray) -> FactorKind:
    distinct = set(col.tolist())
    if len(distinct) <= MAX_INFERRED_LEVELS:
        return Discrete(tuple(sorted(distinct)))
    if not np.issubdtype(col.dtype, np.number):
        raise ConfigError(
            "a non-numeric factor with more than "
            f"{MAX_INFERRED_LEVELS} distinct values needs an explicit kind"
        )
    return Continuous()


def validate_dataset(
    columns: Mapping[str, Sequence] | Dataset,
    outcome: str = "__outcome__",
    kinds: Mapping[str, FactorKind] | None = None,
) -> Dataset:
    """Check lengths, finiteness and level membership; return a Dataset.

    `kinds` may declare any subset of the factor columns; undeclared factors
    are inferred (Discrete when the column has at most MAX_INFERRED_LEVELS
    distinct values, Continuous otherwise). Validation is idempotent: a valid
    Dataset round-trips to an equal Dataset.
    """
    if isinstance(columns, Dataset):
        ds = columns
        declared = dict(zip(ds.factor_names, ds.kinds))
        if kinds:
            declared.update(kinds)
        return validate_dataset(ds.to_columns(), "__outcome__", declared)

    kinds = dict(kinds or {})
    if outcome not in columns:
        raise ConfigError(f"outcome column {outcome!r} not present")

    names = [name for name in columns if name != outcome]
    if not names:
        raise EmptyData("no factor columns")

    y = _as_column(columns[outcome])
    if y.shape[0] == 0:
        raise EmptyData("no rows")
    if y.shape[0] < 2:
        raise TooFewObservations("at least two rows are required")
    try:
        y = y.astype(np.float64)
    except (TypeError, ValueError):
        raise NonFiniteOutcome("outcome column is not numeric") from None
    if not np.all(np.isfinite(y)):
        raise NonFiniteOutcome("outcome contains NaN or infinity")

    cols: list[np.ndarray] = []
    out_kinds: list[FactorKind] = []
    for name in names:
        col = _as_column(columns[name])
        if col.shape[0] != y.shape[0]:
            raise LengthMismatch(
                f"column {name!r} has {col.shape[0]} rows, outcome has {y.shape[0]}"
            )
        kind = kinds.get(name)
        if kind is None:
            kind = _infer_kind(col)
        if isinstance(kind, Continuous):
            try:
                col = col.astype(np.float64)
            except (TypeError, ValueError):
                raise NonFiniteValue(f"continuous factor {name!r} is not numeric") from None
            if not np.all(np.isfinite(col)):
                raise NonFiniteValue(f"continuous factor {name!r} contains NaN or infinity")
        elif isinstance(kind, Discrete):
            allowed = set(kind.levels)
            for v in col.tolist():
                if v not in allowed:
                    raise UnknownLevel(name, v)
        else:
            raise ConfigError(f"unknown factor kind {kind!r} for column {name!r}")
        cols.append(col)
        out_kinds.append(kind)

    return Dataset(y, tuple(names), tuple(cols), tuple(out_kinds))


# ---------------------------------------------------------------------------
# Estimands and building blocks


@dataclass(frozen=True)
class EstimandSpec:
    """Either the total effect of a factor subset or a pairwise interaction."""

    kind: str  # "total" | "interaction"
    factors: frozenset[int]

    def __post_init__(self):
        if self.kind not in ("total", "interaction"):
            raise ConfigError(f"unknown estimand kind {self.kind!r}")
        if not self.factors:
            raise ConfigError("estimand needs at least one factor")
        if any((not isinstance(k, int)) or k < 0 for k in self.factors):
            raise ConfigError("factor indices must be non-negative integers")
        if self.kind == "interaction" and len(self.factors) != 2:
            raise ConfigError("interaction estimands are pairwise")

    def label(self, names: Sequence[str] | None = None) -> str:
        """Stable text form, e.g. "total:W1,W3"; 1-based positions without names."""
        parts = [names[k] if names is not None else str(k + 1) for k in sorted(self.factors)]
        return f"{self.kind}:{','.join(parts)}"


def total(*factor_indices: int) -> EstimandSpec:
    return EstimandSpec("total", frozenset(factor_indices))


def interaction(k: int, k_other: int) -> EstimandSpec:
    return EstimandSpec("interaction", frozenset((k, k_other)))


@dataclass(frozen=True)
class BuildingBlock:
    """Ratio E[E[Y | W_not_excluded]^2] / Var(Y), indexed by the excluded set."""

    excluded: frozenset[int]


@dataclass(frozen=True)
class SignedBlockCombination:
    terms: tuple[tuple[int, BuildingBlock], ...]

    def blocks(self) -> tuple[BuildingBlock, ...]:
        return tuple(b for _, b in self.terms)


def expand_estimand(spec: EstimandSpec, num_factors: int) -> SignedBlockCombination:
    """Reduce an estimand to signed building blocks.

    total(S)            -> +block({}) - block(S)
    interaction(k, k')  -> +block({}) - block({k}) - block({k'}) + block({k, k'})

    Term order is canonical and deterministic.
    """
    if num_factors < 1:
        raise ConfigError("num_factors must be positive")
    if any(k >= num_factors for k in spec.factors):
        raise ConfigError(
            f"estimand references factor index {max(spec.factors)} "
            f"but only {num_factors} factors exist"
        )
    empty = BuildingBlock(frozenset())
    if spec.kind == "total":
        return SignedBlockCombination(
            ((1, empty), (-1, BuildingBlock(frozenset(spec.factors))))
        )
    k, k_other = sorted(spec.factors)
    return SignedBlockCombination(
        (
            (1, empty),
            (-1, BuildingBlock(frozenset((k,)))),
            (-1, BuildingBlock(frozenset((k_other,)))),
            (1, BuildingBlock(frozenset((k, k_other)))),
        )
    )


def _nonempty_subsets(s: frozenset[int]) -> Iterable[frozenset[int]]:
    items = sorted(s)
    for mask in range(1, 1 << len(items)):
        yield frozenset(items[i] for i in range(len(items)) if mask >> i & 1)


def anchored_decomposition_check(
    totals: Mapping[frozenset[int], float],
    interactions: Mapping[frozenset[int], float],
    subset: Iterable[int],
) -> float:
    """Absolute residual of the signed decomposition of a total effect.

    The total effect of `subset` must equal the alternating sum of the
    interaction values of its nonempty subsets (singletons being the per-
    factor totals). Exact plug-in inputs make the residual vanish to float
    precision, which is what the property tests assert.
    """
    target = frozenset(subset)
    if target not in totals:
        raise MissingSubset(f"totals map lacks {set(target)!r}")
    rhs = 0.0
    for sub in _nonempty_subsets(target):
        sign = -1.0 if len(sub) % 2 == 0 else 1.0
        if len(sub) == 1:
            if sub in totals:
                value = totals[sub]
            elif sub in interactions:
                value = interactions[sub]
            else:
                raise MissingSubset(f"missing singleton term {set(sub)!r}")
        else:
            if sub not in interactions:
                raise MissingSubset(f"missing interaction term {set(sub)!r}")
            value = interactions[sub]
        rhs += sign * value
    return abs(float(totals[target]) - rhs)
