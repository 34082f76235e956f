"""Data ingestion, splitting, synthetic generation and group statistics.

A :class:`Dataset` keeps its rows as parallel numpy arrays (features,
labels, sensitive flags, ids). The sensitive attribute is also one of the
feature columns, so a model trained on ``X`` sees it unless told otherwise.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptyDatasetError,
    EncodingError,
    GroupError,
    MissingFileError,
    RowError,
    SchemaError,
    SplitError,
)


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    label: int
    sensitive: int
    id: int


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of examples stored column-wise.

    ``attributes`` holds raw (unencoded) side columns kept for
    attribute-based partitioning; they are not model features.
    """

    X: np.ndarray
    y: np.ndarray
    s: np.ndarray
    ids: np.ndarray
    feature_names: tuple[str, ...]
    sensitive_name: str = "sensitive"
    label_name: str = "label"
    attributes: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(len(X), -1) if X.size else X.reshape(0, len(self.feature_names))
        n = X.shape[0]
        object.__setattr__(self, "X", _readonly(X, float))
        object.__setattr__(self, "y", _readonly(self.y, np.int8))
        object.__setattr__(self, "s", _readonly(self.s, np.int8))
        object.__setattr__(self, "ids", _readonly(self.ids, np.int64))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(
            self, "attributes", {k: _readonly(v, object) for k, v in self.attributes.items()}
        )
        if not (len(self.y) == len(self.s) == len(self.ids) == n):
            raise ValueError("column lengths disagree")
        if X.shape[1] != len(self.feature_names):
            raise ValueError("feature_names does not match feature dimension")
        if n and not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        if np.any((self.y != 0) & (self.y != 1)) or np.any((self.s != 0) & (self.s != 1)):
            raise ValueError("label and sensitive must be binary")
        if len(np.unique(self.ids)) != n:
            raise ValueError("ids must be unique")
        for v in self.attributes.values():
            if len(v) != n:
                raise ValueError("attribute column length disagrees")

    def __len__(self):
        return self.X.shape[0]

    def __iter__(self) -> Iterator[Example]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i) -> Example:
        return Example(self.X[i], int(self.y[i]), int(self.s[i]), int(self.ids[i]))

    @property
    def examples(self) -> list[Example]:
        return list(self)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def sensitive_index(self) -> int | None:
        try:
            return self.feature_names.index(self.sensitive_name)
        except ValueError:
            return None

    @cached_property
    def _row_of(self) -> dict[int, int]:
        return {int(i): r for r, i in enumerate(self.ids)}

    def rows(self, ids: Sequence[int]) -> np.ndarray:
        """Row positions for the given ids (KeyError on unknown id)."""
        lookup = self._row_of
        return np.fromiter((lookup[int(i)] for i in ids), dtype=np.int64, count=len(ids))

    def take(self, rows) -> Dataset:
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            self.X[rows],
            self.y[rows],
            self.s[rows],
            self.ids[rows],
            self.feature_names,
            self.sensitive_name,
            self.label_name,
            {k: v[rows] for k, v in self.attributes.items()},
        )

    def select_ids(self, ids: Sequence[int]) -> Dataset:
        return self.take(self.rows(ids))

    def concat(self, other: Dataset) -> Dataset:
        if other.feature_names != self.feature_names:
            raise ValueError("cannot concatenate datasets with different schemas")
        keys = set(self.attributes) & set(other.attributes)
        return Dataset(
            np.vstack([self.X, other.X]),
            np.concatenate([self.y, other.y]),
            np.concatenate([self.s, other.s]),
            np.concatenate([self.ids, other.ids]),
            self.feature_names,
            self.sensitive_name,
            self.label_name,
            {k: np.concatenate([self.attributes[k], other.attributes[k]]) for k in keys},
        )

    def with_example(self, d: Example) -> Dataset:
        extra = Dataset(
            np.asarray(d.features, dtype=float).reshape(1, -1),
            [d.label],
            [d.sensitive],
            [d.id],
            self.feature_names,
            self.sensitive_name,
            self.label_name,
        )
        return self.concat(extra)


# --------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class Schema:
    """Column roles and encodings for :func:`load_csv`.

    ``categorical`` maps a feature column to ``{"encoding": "ordinal" |
    "onehot", "values": [...]}``. For ordinal encoding the code of a value
    is its position in ``values``. ``sensitive_map`` and ``label_map`` map
    raw strings to 0/1; anything else is an encoding error.
    """

    features: tuple[str, ...]
    sensitive: str
    sensitive_map: Mapping[str, int]
    label: str
    label_map: Mapping[str, int]
    categorical: Mapping[str, Mapping] = field(default_factory=dict)
    attributes: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, d: Mapping) -> Schema:
        try:
            sens = d["sensitive"]
            lab = d["label"]
            schema = cls(
                features=tuple(d["features"]),
                sensitive=sens["column"],
                sensitive_map={str(k): int(v) for k, v in sens["map"].items()},
                label=lab["column"],
                label_map={str(k): int(v) for k, v in lab["map"].items()},
                categorical=dict(d.get("categorical", {})),
                attributes=tuple(d.get("attributes", ())),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc!r}") from exc
        for mapping in (schema.sensitive_map, schema.label_map):
            if not set(mapping.values()) <= {0, 1}:
                raise SchemaError("sensitive/label maps must target {0, 1}")
        for col, spec in schema.categorical.items():
            if spec.get("encoding") not in ("ordinal", "onehot") or not spec.get("values"):
                raise SchemaError(f"categorical column {col!r} needs encoding and values")
        return schema

    @classmethod
    def load(cls, path) -> Schema:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise MissingFileError(f"cannot read schema {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)


def load_csv(path, schema: Schema) -> Dataset:
    """Read a headed CSV into a :class:`Dataset`, ids following row order."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, skipinitialspace=True)
        header = reader.fieldnames or []
        needed = list(schema.features) + [schema.sensitive, schema.label, *schema.attributes]
        missing = [c for c in needed if c not in header]
        if missing:
            raise SchemaError(f"missing columns: {missing}")

        names: list[str] = []
        for col in schema.features:
            spec = schema.categorical.get(col)
            if spec and spec["encoding"] == "onehot":
                names.extend(f"{col}={v}" for v in spec["values"])
            else:
                names.append(col)
        sens_name = schema.sensitive

        X, y, s = [], [], []
        attrs: dict[str, list] = {a: [] for a in schema.attributes}
        for rownum, row in enumerate(reader, start=1):
            feats = []
            for col in schema.features:
                raw = (row[col] or "").strip()
                spec = schema.categorical.get(col)
                if col == schema.sensitive and not spec:
                    if raw not in schema.sensitive_map:
                        raise EncodingError(f"row {rownum}: sensitive value {raw!r} not in map")
                    feats.append(float(schema.sensitive_map[raw]))
                elif spec:
                    values = [str(v) for v in spec["values"]]
                    if raw not in values:
                        raise EncodingError(f"row {rownum}: {col}={raw!r} not a declared category")
                    k = values.index(raw)
                    if spec["encoding"] == "ordinal":
                        feats.append(float(k))
                    else:
                        onehot = [0.0] * len(values)
                        onehot[k] = 1.0
                        feats.extend(onehot)
                else:
                    try:
                        v = float(raw)
                    except ValueError:
                        raise RowError(rownum, f"cannot parse {col}={raw!r} as a number") from None
                    if not math.isfinite(v):
                        raise RowError(rownum, f"non-finite value in {col}")
                    feats.append(v)
            sraw = (row[schema.sensitive] or "").strip()
            yraw = (row[schema.label] or "").strip()
            if sraw not in schema.sensitive_map:
                raise EncodingError(f"row {rownum}: sensitive value {sraw!r} not in map")
            if yraw not in schema.label_map:
                raise EncodingError(f"row {rownum}: label value {yraw!r} not in map")
            X.append(feats)
            s.append(schema.sensitive_map[sraw])
            y.append(schema.label_map[yraw])
            for a in schema.attributes:
                attrs[a].append((row[a] or "").strip())

    if not X:
        raise EmptyDatasetError(f"{path} has no data rows")
    return Dataset(
        np.asarray(X, dtype=float),
        y,
        s,
        np.arange(len(X)),
        names,
        sens_name,
        schema.label,
        {k: np.asarray(v, dtype=object) for k, v in attrs.items()},
    )


# --------------------------------------------------------------------------
# Group statistics


@dataclass(frozen=True)
class GroupStats:
    counts: Mapping[tuple[int, int], int]  # (s, y) -> count
    rate_protected: float
    rate_privileged: float

    @property
    def delta_br(self) -> float:
        return self.rate_protected - self.rate_privileged


def group_stats(data: Dataset) -> GroupStats:
    counts = {(a, b): int(np.sum((data.s == a) & (data.y == b))) for a in (0, 1) for b in (0, 1)}
    n0 = counts[(0, 0)] + counts[(0, 1)]
    n1 = counts[(1, 0)] + counts[(1, 1)]
    if n0 == 0 or n1 == 0:
        raise GroupError("both sensitive groups must be present")
    return GroupStats(counts, counts[(0, 1)] / n0, counts[(1, 1)] / n1)


# --------------------------------------------------------------------------
# Splitting


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[int, int, int] = (1, 4, 15)
    rho: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(int(r) != r or r <= 0 for r in self.ratios):
            raise ConfigError("ratios must be three positive integers")
        if not 0 < self.rho <= 1:
            raise ConfigError("rho must lie in (0, 1]")


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Split into (train, test, pool) with a protected-positive-thinned train.

    Test rows are drawn uniformly first. The remaining rows are visited in
    random order and admitted to train (protected positives only with
    probability ``rho``) until the train quota is met; every row not taken
    lands in the pool.
    """
    total = sum(spec.ratios)
    n = len(data)
    if n < 20 * total:
        raise SplitError(f"need at least {20 * total} rows, got {n}")
    n_train = n * spec.ratios[0] // total
    n_test = n * spec.ratios[1] // total

    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    test_rows = np.sort(perm[:n_test])
    rest = perm[n_test:]
    pp = (data.s[rest] == 0) & (data.y[rest] == 1)
    keep = ~pp | (rng.random(len(rest)) < spec.rho)
    admitted = rest[keep][:n_train]
    if len(admitted) < n_train:
        raise SplitError("not enough rows left to fill the train quota after thinning")
    taken = np.zeros(n, dtype=bool)
    taken[admitted] = True
    taken[test_rows] = True
    train_rows = np.sort(admitted)
    pool_rows = np.flatnonzero(~taken)

    parts = tuple(data.take(r) for r in (train_rows, test_rows, pool_rows))
    for name, part in zip(("train", "test", "pool"), parts):
        if len(np.unique(part.s)) < 2:
            raise SplitError(f"{name} split is missing a sensitive group")
    return parts


# --------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian class-conditional data with group-specific base rates.

    ``means`` has shape (2, 2, p) indexed ``[s][y]``; ``variances`` has
    shape (p,). The sensitive flag is appended as the last feature, so the
    generated dataset has ``p + 1`` feature columns.
    """

    n: int
    p: int
    q: float
    means: np.ndarray
    variances: np.ndarray
    base_rates: tuple[float, float]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float))
        if self.means.shape != (2, 2, self.p) or self.variances.shape != (self.p,):
            raise ConfigError("means must be (2, 2, p) and variances (p,)")
        if np.any(self.variances <= 0):
            raise ConfigError("variances must be positive")
        if not all(0 <= v <= 1 for v in (self.q, *self.base_rates)):
            raise ConfigError("probabilities must lie in [0, 1]")
        if self.n < 0:
            raise ConfigError("n must be non-negative")

    @classmethod
    def hiring(cls, n=20_000, seed=0) -> SyntheticSpec:
        """Biased-hiring scenario: the protected group has a lower base rate
        and a trained model shows a parity gap of roughly -0.35."""
        return cls._label_shift(n, seed, q=0.7, base_rates=(0.5, 0.6), sep=0.7)

    @classmethod
    def biased_pool(cls, n=20_000, seed=0) -> SyntheticSpec:
        """Milder base-rate gap; the initial gap of about -0.28 comes mostly
        from the thinned training split."""
        return cls._label_shift(n, seed, q=0.7, base_rates=(0.55, 0.6), sep=0.75)

    @classmethod
    def _label_shift(cls, n, seed, q, base_rates, sep, p=5) -> SyntheticSpec:
        means = np.zeros((2, 2, p))
        means[:, 1, :] = sep
        return cls(n=n, p=p, q=q, means=means, variances=np.ones(p),
                   base_rates=base_rates, seed=seed)

    def to_dict(self) -> dict:
        return {"n": self.n, "p": self.p, "q": self.q, "means": self.means.tolist(),
                "variances": self.variances.tolist(), "base_rates": list(self.base_rates),
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping) -> SyntheticSpec:
        presets = {"hiring": cls.hiring, "biased_pool": cls.biased_pool}
        if "preset" in d:
            if d["preset"] not in presets:
                raise ConfigError(f"unknown synthetic preset {d['preset']!r}")
            return presets[d["preset"]](n=int(d.get("n", 20_000)), seed=int(d.get("seed", 0)))
        try:
            return cls(int(d["n"]), int(d["p"]), float(d["q"]), d["means"], d["variances"],
                       tuple(d["base_rates"]), int(d.get("seed", 0)))
        except KeyError as exc:
            raise ConfigError(f"synthetic spec missing {exc}") from exc


def synthesize(spec: SyntheticSpec) -> Dataset:
    if spec.n == 0:
        raise EmptyDatasetError("synthetic spec requests zero rows")
    rng = np.random.default_rng(spec.seed)
    s = (rng.random(spec.n) < spec.q).astype(np.int8)
    rates = np.where(s == 1, spec.base_rates[1], spec.base_rates[0])
    y = (rng.random(spec.n) < rates).astype(np.int8)
    noise = rng.standard_normal((spec.n, spec.p)) * np.sqrt(spec.variances)
    X = spec.means[s, y] + noise
    X = np.column_stack([X, s.astype(float)])
    names = [f"x{j}" for j in range(spec.p)] + ["s"]
    return Dataset(X, y, s, np.arange(spec.n), names, "s", "y")
