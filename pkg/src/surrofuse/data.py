"""Two-sample data containers, validation and CSV round-tripping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

EXPERIMENTAL = "E"
OBSERVATIONAL = "O"

ROLES = ("covariate", "categorical", "treatment", "instrument", "surrogate",
         "primary", "location")


class SampleError(ValueError):
    pass


def _frozen(a, dtype=float):
    if a is None:
        return None
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """One sample of units (experimental ``E`` or observational ``O``).

    Arrays are copied and made read-only on construction. Construction does
    not check invariants; call :func:`validate`.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    surrogate: np.ndarray
    group: str
    instrument: np.ndarray | None = None
    primary: np.ndarray | None = None
    location: np.ndarray | None = None
    covariate_names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        X = np.array(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X.flags.writeable = False
        object.__setattr__(self, "covariates", X)
        for name in ("treatment", "surrogate", "instrument", "primary", "location"):
            value = getattr(self, name)
            if value is not None:
                value = np.array(value, dtype=float).ravel()
                value.flags.writeable = False
                object.__setattr__(self, name, value)
        if self.covariate_names is None:
            names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
            object.__setattr__(self, "covariate_names", names)
        else:
            object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def outcome(self, which: str) -> np.ndarray:
        if which not in ("surrogate", "primary"):
            raise SampleError(f"unknown outcome {which!r}")
        y = getattr(self, which)
        if y is None:
            raise SampleError(f"sample has no {which} outcome")
        return y

    def subset(self, index, group: str | None = None, *, drop_primary=False,
               drop_instrument=False, drop_location=False) -> "LabeledSample":
        index = np.asarray(index)

        def pick(a):
            return None if a is None else a[index]

        return LabeledSample(
            covariates=self.covariates[index],
            treatment=self.treatment[index],
            surrogate=self.surrogate[index],
            group=self.group if group is None else group,
            instrument=None if drop_instrument else pick(self.instrument),
            primary=None if drop_primary else pick(self.primary),
            location=None if drop_location else pick(self.location),
            covariate_names=self.covariate_names,
        )


@dataclass(frozen=True)
class AteEstimate:
    value: float
    strategy_name: str
    n_exp: int
    n_obs: int
    diagnostics: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise SampleError(f"non-finite ATE estimate from {self.strategy_name}")

    def __float__(self) -> float:
        return float(self.value)


def _first_bad(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0])


def validate(sample: LabeledSample) -> LabeledSample:
    """Return ``sample`` unchanged if every invariant holds, else raise.

    Row numbers in messages are 1-based data rows.
    """
    X = sample.covariates
    if X.ndim != 2:
        raise SampleError("covariates must be a matrix")
    n, p = X.shape
    if n < 1 or p < 1:
        raise SampleError(f"sample needs N >= 1 and p >= 1, got N={n}, p={p}")
    if len(sample.covariate_names) != p:
        raise SampleError("dimension mismatch: covariate_names does not match p")
    if sample.group not in (EXPERIMENTAL, OBSERVATIONAL):
        raise SampleError(f"group must be 'E' or 'O', got {sample.group!r}")
    for name in ("treatment", "surrogate", "instrument", "primary", "location"):
        col = getattr(sample, name)
        if col is None:
            continue
        if col.shape != (n,):
            raise SampleError(f"dimension mismatch: {name} has length {col.size}, expected {n}")
    bad = ~np.isfinite(X)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise SampleError(
            f"non-finite value at row {r + 1}, column {sample.covariate_names[c]!r}")
    for name in ("treatment", "surrogate", "instrument", "primary", "location"):
        col = getattr(sample, name)
        if col is None:
            continue
        bad = ~np.isfinite(col)
        if bad.any():
            raise SampleError(f"non-finite value at row {_first_bad(bad) + 1}, column {name!r}")
        if name in ("treatment", "instrument", "location"):
            bad = (col != 0) & (col != 1)
            if bad.any():
                r = _first_bad(bad)
                raise SampleError(f"non-binary {name} value {col[r]:g} at row {r + 1}")
    if sample.group == OBSERVATIONAL and sample.primary is None:
        raise SampleError("missing primary outcome on observational sample")
    if sample.group == EXPERIMENTAL and sample.primary is not None:
        raise SampleError("experimental sample must not carry a primary outcome")
    return sample


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SampleError(f"line {line}, column {column!r}: cannot parse {text!r}") from None
    if not math.isfinite(value):
        raise SampleError(f"line {line}, column {column!r}: non-finite value {text!r}")
    return value


def load_csv(path, schema: Mapping[str, str], group: str = EXPERIMENTAL) -> LabeledSample:
    """Read a CSV into a validated sample.

    ``schema`` maps column name to role (see ``ROLES``). ``categorical``
    columns are one-hot encoded with the first (sorted) level dropped.
    Columns not named in the schema are ignored.
    """
    for col, role in schema.items():
        if role not in ROLES:
            raise SampleError(f"unknown column role {role!r} for column {col!r}")
    singles = {}
    for role in ROLES[2:]:
        cols = [c for c, r in schema.items() if r == role]
        if len(cols) > 1:
            raise SampleError(f"role {role!r} assigned to several columns: {cols}")
        if cols:
            singles[role] = cols[0]

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SampleError("no data rows")
        header = [h.strip() for h in header]
        missing = [c for c in schema if c not in header]
        if missing:
            raise SampleError(f"schema columns missing from header: {missing}")
        pos = {h: k for k, h in enumerate(header)}
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise SampleError(
                    f"line {line}: expected {len(header)} fields, got {len(row)}")
            rows.append((line, row))
    if not rows:
        raise SampleError("no data rows")

    names: list[str] = []
    columns: list[np.ndarray] = []
    for col, role in schema.items():
        if role == "covariate":
            names.append(col)
            columns.append(np.array([_parse_float(r[pos[col]].strip(), ln, col)
                                     for ln, r in rows]))
        elif role == "categorical":
            raw = [r[pos[col]].strip() for _, r in rows]
            for (ln, _), cell in zip(rows, raw):
                if cell == "":
                    raise SampleError(f"line {ln}, column {col!r}: empty category")
            for level in sorted(set(raw))[1:]:
                names.append(f"{col}={level}")
                columns.append(np.array([1.0 if v == level else 0.0 for v in raw]))
    if not columns:
        raise SampleError("schema declares no covariate columns")

    def single(role):
        col = singles.get(role)
        if col is None:
            return None
        return np.array([_parse_float(r[pos[col]].strip(), ln, col) for ln, r in rows])

    for role in ("treatment", "surrogate"):
        if role not in singles:
            raise SampleError(f"schema lacks a {role} column")
    sample = LabeledSample(
        covariates=np.column_stack(columns),
        treatment=single("treatment"),
        surrogate=single("surrogate"),
        group=group,
        instrument=single("instrument"),
        primary=single("primary"),
        location=single("location"),
        covariate_names=tuple(names),
    )
    return validate(sample)


def save_csv(sample: LabeledSample, path) -> dict[str, str]:
    """Write ``sample`` as CSV and return the schema that reads it back."""
    schema = {name: "covariate" for name in sample.covariate_names}
    extra = [("w", "treatment", sample.treatment), ("z", "instrument", sample.instrument),
             ("ys", "surrogate", sample.surrogate), ("yp", "primary", sample.primary),
             ("loc", "location", sample.location)]
    extra = [(name, role, col) for name, role, col in extra if col is not None]
    for name, role, _ in extra:
        if name in schema:
            raise SampleError(f"covariate name {name!r} collides with a reserved column")
        schema[name] = role
    cols = [sample.covariates[:, j] for j in range(sample.p)] + [c for _, _, c in extra]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(schema))
        for i in range(sample.n):
            writer.writerow([repr(float(c[i])) for c in cols])
    return schema


def read_keyvalue(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file with ``#`` comments."""
    out: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SampleError(f"{path}:{line_no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise SampleError(f"{path}:{line_no}: duplicate key {key!r}")
        out[key] = value
    return out


def write_schema(schema: Mapping[str, str], path) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in schema.items()),
                          encoding="utf-8")
