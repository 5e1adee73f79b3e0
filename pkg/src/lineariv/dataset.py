"""Data model, CSV ingestion and basis expansion.

A :class:`Dataset` holds the outcome, the exposure, one or more instrument
columns and the raw covariates as immutable numpy arrays.  A
:class:`BasisSpec` is an ordered list of term descriptors which, evaluated on
a dataset, produces a design matrix; every model in the package (outcome,
exposure, instrument, index) is parameterised through such a basis.  The
intercept is never implicit: a basis that wants one must list the ``1`` term.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ParseError, SchemaError, TermSpecError

__all__ = [
    "Dataset",
    "ColumnMap",
    "BasisSpec",
    "Intercept",
    "Raw",
    "Power",
    "Product",
    "InstrumentColumn",
    "InstrumentByTerm",
    "parse_term",
    "build_design",
    "load_csv",
    "write_csv",
]


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Intercept:
    def label(self) -> str:
        return "1"


@dataclass(frozen=True)
class Raw:
    index: int

    def label(self) -> str:
        return f"c{self.index}"


@dataclass(frozen=True)
class Power:
    index: int
    exponent: int

    def label(self) -> str:
        return f"c{self.index}^{self.exponent}"


@dataclass(frozen=True)
class Product:
    left: "Term"
    right: "Term"

    def label(self) -> str:
        return f"{self.left.label()}*{self.right.label()}"


@dataclass(frozen=True)
class InstrumentColumn:
    index: int

    def label(self) -> str:
        return f"z{self.index}"


@dataclass(frozen=True)
class InstrumentByTerm:
    index: int
    term: "Term"

    def label(self) -> str:
        return f"z{self.index}:{self.term.label()}"


Term = Union[Intercept, Raw, Power, Product, InstrumentColumn, InstrumentByTerm]


def z_degree(term: Term) -> int:
    """Polynomial degree of a term in the instrument columns."""
    if isinstance(term, (Intercept, Raw, Power)):
        return 0
    if isinstance(term, InstrumentColumn):
        return 1
    if isinstance(term, InstrumentByTerm):
        return 1 + z_degree(term.term)
    if isinstance(term, Product):
        return z_degree(term.left) + z_degree(term.right)
    raise TermSpecError(f"unknown term {term!r}")


def parse_term(text: str) -> Term:
    """Parse a term string: ``1``, ``c0``, ``c0^2``, ``z0``, ``z0:c1``, ``c0*c1``."""
    text = text.strip()
    if "*" in text:
        parts = text.split("*")
        term = parse_term(parts[0])
        for p in parts[1:]:
            term = Product(term, parse_term(p))
        return term
    if text == "1":
        return Intercept()
    if text.startswith("z"):
        body = text[1:]
        if ":" in body:
            idx_s, rest = body.split(":", 1)
            return InstrumentByTerm(_parse_index(idx_s, text), parse_term(rest))
        return InstrumentColumn(_parse_index(body, text))
    if text.startswith("c"):
        body = text[1:]
        if "^" in body:
            idx_s, exp_s = body.split("^", 1)
            return Power(_parse_index(idx_s, text), _parse_index(exp_s, text))
        return Raw(_parse_index(body, text))
    raise TermSpecError(f"cannot parse term {text!r}")


def _parse_index(s: str, context: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise TermSpecError(f"bad index {s!r} in term {context!r}") from None


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

def _as_locked_array(a, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1 and ndim == 2:
        arr = arr[:, None]
    if arr.ndim != ndim:
        raise SchemaError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise SchemaError(f"{name} contains non-finite values")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """Columnar observations: outcome y, exposure x, instruments z, covariates.

    All arrays are validated to be finite and are frozen after construction,
    so a Dataset can be shared freely across threads.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    c_raw: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", _as_locked_array(self.y, "y", 1))
        object.__setattr__(self, "x", _as_locked_array(self.x, "x", 1))
        object.__setattr__(self, "z", _as_locked_array(self.z, "z", 2))
        object.__setattr__(self, "c_raw", _as_locked_array(self.c_raw, "c_raw", 2))
        n = self.y.shape[0]
        if n < 1:
            raise SchemaError("dataset must contain at least one observation")
        for name in ("x", "z", "c_raw"):
            if getattr(self, name).shape[0] != n:
                raise SchemaError(f"column {name} has length {getattr(self, name).shape[0]}, expected {n}")
        if self.z.shape[1] < 1:
            raise SchemaError("at least one instrument column is required")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_instruments(self) -> int:
        return self.z.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.c_raw.shape[1]

    def with_z(self, z_new) -> "Dataset":
        """Copy of the dataset with the instrument block replaced.

        A scalar is broadcast to every instrument cell; used for evaluating
        index functions and exposure models at counterfactual instrument
        values (e.g. the two-point mixture for a binary instrument).
        """
        z_arr = np.asarray(z_new, dtype=float)
        if z_arr.ndim == 0:
            z_arr = np.full_like(np.asarray(self.z), float(z_arr))
        return replace(self, z=z_arr)

    def take(self, rows) -> "Dataset":
        """Row subset/resample (used by the bootstrap)."""
        idx = np.asarray(rows)
        return Dataset(self.y[idx], self.x[idx], self.z[idx], self.c_raw[idx])

    def z_is_binary(self) -> bool:
        return bool(np.all((self.z == 0.0) | (self.z == 1.0)))


# ---------------------------------------------------------------------------
# BasisSpec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisSpec:
    """Ordered list of term descriptors; evaluates to an n-by-p design matrix."""

    terms: tuple[Term, ...]

    def __init__(self, terms: Iterable[Term | str]):
        parsed = tuple(parse_term(t) if isinstance(t, str) else t for t in terms)
        object.__setattr__(self, "terms", parsed)

    def __len__(self) -> int:
        return len(self.terms)

    def labels(self) -> list[str]:
        return [t.label() for t in self.terms]

    def max_z_degree(self) -> int:
        return max((z_degree(t) for t in self.terms), default=0)

    def is_linear_in_z(self) -> bool:
        return self.max_z_degree() <= 1

    def append(self, term: Term | str) -> "BasisSpec":
        return BasisSpec(self.terms + (parse_term(term) if isinstance(term, str) else term,))


def _eval_term(term: Term, data: Dataset) -> np.ndarray:
    if isinstance(term, Intercept):
        return np.ones(data.n)
    if isinstance(term, Raw):
        _check_cov_index(term.index, data)
        return data.c_raw[:, term.index]
    if isinstance(term, Power):
        _check_cov_index(term.index, data)
        return data.c_raw[:, term.index] ** term.exponent
    if isinstance(term, Product):
        return _eval_term(term.left, data) * _eval_term(term.right, data)
    if isinstance(term, InstrumentColumn):
        _check_inst_index(term.index, data)
        return data.z[:, term.index]
    if isinstance(term, InstrumentByTerm):
        _check_inst_index(term.index, data)
        return data.z[:, term.index] * _eval_term(term.term, data)
    raise TermSpecError(f"unknown term {term!r}")


def _check_cov_index(i: int, data: Dataset) -> None:
    if not 0 <= i < data.n_covariates:
        raise TermSpecError(f"covariate index {i} out of range (dataset has {data.n_covariates})")


def _check_inst_index(i: int, data: Dataset) -> None:
    if not 0 <= i < data.n_instruments:
        raise TermSpecError(f"instrument index {i} out of range (dataset has {data.n_instruments})")


def build_design(data: Dataset, spec: BasisSpec) -> np.ndarray:
    """Evaluate a basis on a dataset, column j = term j evaluated pointwise."""
    if len(spec) == 0:
        return np.empty((data.n, 0))
    return np.column_stack([_eval_term(t, data) for t in spec.terms])


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnMap:
    """Names of the CSV columns holding y, x, the instruments and covariates."""

    y: str
    x: str
    z: tuple[str, ...]
    covariates: tuple[str, ...] = field(default_factory=tuple)

    def __init__(self, y: str, x: str, z: Sequence[str], covariates: Sequence[str] = ()):
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", tuple(z))
        object.__setattr__(self, "covariates", tuple(covariates))


def _parse_cell(raw: str, row: int, col: str) -> float:
    text = raw.strip()
    if not text:
        raise ParseError(f"empty cell at data row {row}, column {col!r}")
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {raw!r} at data row {row}, column {col!r}") from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite value {raw!r} at data row {row}, column {col!r}")
    return value


def load_csv(path, columns: ColumnMap) -> Dataset:
    """Read an RFC-4180 style CSV (header row required) into a Dataset.

    Rows are kept in file order; data row indices in error messages are
    1-based (the header is row 0).
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty, expected a header row") from None
        header = [h.strip() for h in header]
        positions: dict[str, int] = {}
        for name in (columns.y, columns.x, *columns.z, *columns.covariates):
            if name not in header:
                raise SchemaError(f"{path}: required column {name!r} not found in header {header}")
            positions[name] = header.index(name)
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: data row {i} has {len(row)} fields, expected {len(header)}")
            rows.append([_parse_cell(row[positions[name]], i, name)
                         for name in (columns.y, columns.x, *columns.z, *columns.covariates)])
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=float)
    nz = len(columns.z)
    return Dataset(
        y=arr[:, 0],
        x=arr[:, 1],
        z=arr[:, 2:2 + nz],
        c_raw=arr[:, 2 + nz:],
    )


def write_csv(data: Dataset, path, columns: ColumnMap | None = None) -> None:
    """Write a dataset as CSV with full round-trip precision (shortest repr)."""
    if columns is None:
        z_names = ("z",) if data.n_instruments == 1 else tuple(f"z{j}" for j in range(data.n_instruments))
        if data.n_covariates == 0:
            c_names = ()
        elif data.n_covariates == 1:
            c_names = ("v",)
        else:
            c_names = tuple(f"v{j}" for j in range(data.n_covariates))
        columns = ColumnMap(y="y", x="x", z=z_names, covariates=c_names)
    header = [columns.y, columns.x, *columns.z, *columns.covariates]
    block = np.column_stack([data.y, data.x, data.z, data.c_raw])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in block:
            writer.writerow([repr(float(v)) for v in row])
