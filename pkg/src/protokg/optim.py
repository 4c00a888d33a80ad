"""Dense embedding storage, initializers, Adam/Adagrad with sparse row
updates, and a central-difference gradient checker used as the numerical
oracle for every analytic gradient in the package.

Complex-valued tables store 2k reals per row: k real parts followed by k
imaginary parts. Rotation relations are parameterized by k phase angles, so
the unit-modulus constraint holds by construction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ENTITY = "entity"
RELATION_PHASE = "relation-phase"
PROTOTYPE = "prototype"
GCN_WEIGHT = "gcn-weight"

KINDS = (ENTITY, RELATION_PHASE, PROTOTYPE, GCN_WEIGHT)

SparseGrads = list[tuple[int, np.ndarray]]


@dataclass
class EmbeddingTable:
    values: np.ndarray   # (rows, width) float64
    dim: int             # embedding dimension k; width is 2k for complex kinds
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown table kind {self.kind!r}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("table values must be 2-D")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.values.copy(), self.dim, self.kind)

    def as_complex(self) -> np.ndarray:
        """(rows, k) complex view of a table stored as k reals + k imaginaries."""
        k = self.dim
        if self.width != 2 * k:
            raise ValueError(f"table width {self.width} is not 2*dim={2 * k}")
        return self.values[:, :k] + 1j * self.values[:, k:]


def pack_complex(z: np.ndarray) -> np.ndarray:
    """Complex (..., k) -> real (..., 2k), real parts then imaginary parts."""
    return np.concatenate([z.real, z.imag], axis=-1)


def phases_to_complex(phases: np.ndarray) -> np.ndarray:
    """Angles -> unit-modulus complex numbers cos(theta) + i sin(theta)."""
    return np.cos(phases) + 1j * np.sin(phases)


def init_table(rows: int, dim: int, kind: str, scheme: str = "uniform",
               seed=0, scale: float = 1.0, pairs: bool = False) -> EmbeddingTable:
    """Deterministic table initialization.

    ``uniform`` draws entity/prototype/weight entries from [-b, b] with
    b = scale * 6/sqrt(dim), and phase entries from [-pi, pi). ``pairs``
    doubles the storage width for complex tables.
    """
    if rows <= 0 or dim <= 0:
        raise ValueError("rows and dim must be positive")
    width = 2 * dim if pairs else dim
    rng = np.random.default_rng(seed)
    if scheme == "zeros":
        values = np.zeros((rows, width))
    elif scheme == "uniform":
        if kind == RELATION_PHASE:
            values = rng.uniform(-np.pi, np.pi, size=(rows, width))
        else:
            b = scale * 6.0 / np.sqrt(dim)
            values = rng.uniform(-b, b, size=(rows, width))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return EmbeddingTable(values, dim, kind)


class Adam:
    """Adam with bias correction and lazy sparse-row updates.

    Moments and step counts are per row: bias correction uses the number of
    times each row was touched, so steps on disjoint row sets commute.
    ``step_count`` tracks apply calls and is monotone.
    """

    algorithm = "adam"

    def __init__(self, shape, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, check_finite: bool = False):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.check_finite = check_finite
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.row_steps = np.zeros(shape[0], dtype=np.int64)
        self.step_count = 0

    def update_rows(self, values: np.ndarray, rows: np.ndarray, grads: np.ndarray):
        self.step_count += 1
        self.row_steps[rows] += 1
        t = self.row_steps[rows][:, None].astype(np.float64)
        self.m[rows] = self.beta1 * self.m[rows] + (1.0 - self.beta1) * grads
        self.v[rows] = self.beta2 * self.v[rows] + (1.0 - self.beta2) * grads ** 2
        m_hat = self.m[rows] / (1.0 - self.beta1 ** t)
        v_hat = self.v[rows] / (1.0 - self.beta2 ** t)
        values[rows] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


class Adagrad:
    """Adagrad with per-parameter accumulated squared gradients."""

    algorithm = "adagrad"

    def __init__(self, shape, learning_rate: float, eps: float = 1e-10,
                 check_finite: bool = False):
        self.learning_rate = learning_rate
        self.eps = eps
        self.check_finite = check_finite
        self.accum = np.zeros(shape)
        self.step_count = 0

    def update_rows(self, values: np.ndarray, rows: np.ndarray, grads: np.ndarray):
        self.step_count += 1
        self.accum[rows] += grads ** 2
        values[rows] -= self.learning_rate * grads / (np.sqrt(self.accum[rows]) + self.eps)


def apply_gradients(table: EmbeddingTable, sparse_grads: SparseGrads, state) -> EmbeddingTable:
    """Apply one optimizer step to the touched rows of a table, in place.

    ``sparse_grads`` is a list of (row, gradient) with duplicate rows
    pre-summed by the caller; passing a duplicate row is an error.
    """
    if not sparse_grads:
        state.step_count += 1
        return table
    rows = np.asarray([r for r, _ in sparse_grads], dtype=np.intp)
    if len(set(rows.tolist())) != len(rows):
        raise ValueError("duplicate rows in sparse_grads; pre-sum them")
    if rows.min() < 0 or rows.max() >= table.rows:
        raise ValueError("gradient row out of range")
    grads = np.stack([np.asarray(g, dtype=np.float64) for _, g in sparse_grads])
    if grads.shape[1] != table.width:
        raise ValueError(f"gradient width {grads.shape[1]} != table width {table.width}")
    state.update_rows(table.values, rows, grads)
    if state.check_finite and not np.isfinite(table.values[rows]).all():
        raise FloatingPointError("non-finite parameter after optimizer step")
    return table


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_row: int
    worst_col: int
    analytic: float
    numeric: float
    tolerance: float
    passed: bool

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"gradcheck {status}: max rel err {self.max_rel_error:.3e} at "
                f"({self.worst_row},{self.worst_col}) analytic={self.analytic:.6e} "
                f"numeric={self.numeric:.6e} tol={self.tolerance:.1e}")


def finite_difference_check(loss_fn, table: EmbeddingTable,
                            analytic_grads: dict[int, np.ndarray],
                            rows_to_check=None, h: float = 1e-4,
                            tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn(table) -> float`` must be deterministic. Relative error per
    coordinate is |a - n| / max(|a|, |n|, 1e-8); the report carries the worst
    coordinate. Rows default to the keys of ``analytic_grads``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    rows = sorted(analytic_grads) if rows_to_check is None else sorted(rows_to_check)
    worst = (0.0, -1, -1, 0.0, 0.0)
    values = table.values
    base = loss_fn(table)
    if not np.isfinite(base):
        raise FloatingPointError("non-finite loss at the evaluation point")
    for row in rows:
        grad_row = np.asarray(analytic_grads.get(row, np.zeros(table.width)))
        for col in range(table.width):
            orig = values[row, col]
            values[row, col] = orig + h
            f_plus = loss_fn(table)
            values[row, col] = orig - h
            f_minus = loss_fn(table)
            values[row, col] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(f"non-finite loss at perturbed ({row},{col})")
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = grad_row[col]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            if rel > worst[0]:
                worst = (rel, row, col, analytic, numeric)
    rel, row, col, analytic, numeric = worst
    return GradCheckReport(max_rel_error=rel, worst_row=row, worst_col=col,
                           analytic=analytic, numeric=numeric,
                           tolerance=tolerance, passed=rel < tolerance)


# ---------------------------------------------------------------------------
# export / import

_KIND_CODES = {kind: i for i, kind in enumerate(KINDS)}
_MAGIC = b"EMBTBL"


def save_table_text(table: EmbeddingTable, path):
    """Header line "rows dim kind", then one row per line of decimal floats."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{table.rows} {table.dim} {table.kind}\n")
        for row in table.values:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_table_text(path) -> EmbeddingTable:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: bad table header")
        rows, dim, kind = int(header[0]), int(header[1]), header[2]
        values = np.array([[float(x) for x in line.split()] for line in fh if line.strip()])
    if values.shape[0] != rows:
        raise ValueError(f"{path}: expected {rows} rows, found {values.shape[0]}")
    return EmbeddingTable(values, dim, kind)


def save_table_binary(table: EmbeddingTable, path):
    """16-byte magic+shape header, then row-major little-endian float64."""
    header = _MAGIC + struct.pack("<BBII", 1, _KIND_CODES[table.kind],
                                  table.rows, table.dim)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(table.values.astype("<f8").tobytes(order="C"))


def load_table_binary(path) -> EmbeddingTable:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:6] != _MAGIC:
        raise ValueError(f"{path}: not an embedding table file")
    version, kind_code, rows, dim = struct.unpack("<BBII", raw[6:16])
    if version != 1:
        raise ValueError(f"{path}: unsupported table version {version}")
    payload = np.frombuffer(raw[16:], dtype="<f8")
    if payload.size % rows:
        raise ValueError(f"{path}: payload size {payload.size} not divisible by rows")
    values = payload.reshape(rows, payload.size // rows).astype(np.float64)
    return EmbeddingTable(values, dim, KINDS[kind_code])
