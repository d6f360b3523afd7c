"""Laurent polynomials on the unit circle and small Hermitian spectral routines.

A ``LaurentPoly`` is ``P(z) = Σ_l c_l z^l`` evaluated on ``z = e^{2πiξ}``. The
coefficients are held densely from the lowest nonzero degree upward.
"""

__all__ = (
    "PRUNE_TOL",
    "MAX_SWEEPS",
    "MAX_LEIBNIZ",
    "CMatrix",
    "LaurentPoly",
    "LaurentMatrix",
    "EigenResult",
    "GramInverse",
    "laurent_arith",
    "eval_at",
    "hermitian_eigenvalues",
    "laurent_det",
    "pinv_at",
)

import itertools
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from numbers import Number
from typing import Final, TypeAlias

import numpy as np

from mdframe.exceptions import SingularMatrixError, TooLargeError

logger = logging.getLogger(__name__)

PRUNE_TOL: Final[float] = 1e-15
MAX_SWEEPS: Final[int] = 30
JACOBI_TOL: Final[float] = 1e-14
MAX_LEIBNIZ: Final[int] = 6
SINGULAR_TOL: Final[float] = 1e-12
ARITH_OPS: Final[frozenset[str]] = frozenset(
    {"add", "sub", "mul", "scalar_mul", "conj_reflect"}
)

CMatrix: TypeAlias = np.ndarray


def _phases(xi: float | np.ndarray, degrees: np.ndarray) -> np.ndarray:
    xi_arr = np.asarray(xi, dtype=float)
    return np.exp(2j * np.pi * np.multiply.outer(xi_arr, degrees))


@dataclass(frozen=True, slots=True, eq=False)
class LaurentPoly:
    """Finite Laurent series with coefficients below PRUNE_TOL dropped.

    Examples
    --------
    >>> import mdframe as md
    >>> z = md.linalg.LaurentPoly.monomial(1)
    >>> ((1 + z) * (1 - z)).to_pairs()
    [[0, 1.0, 0.0], [2, -1.0, 0.0]]
    >>> z.conj_reflect().to_pairs()
    [[-1, 1.0, 0.0]]
    """

    low: int
    coeffs: np.ndarray

    __array_ufunc__ = None

    def __post_init__(self) -> None:
        arr = np.array(self.coeffs, dtype=complex).ravel()
        arr[np.abs(arr) < PRUNE_TOL] = 0
        nonzero = np.flatnonzero(arr)
        if nonzero.size == 0:
            low, arr = 0, np.zeros(0, dtype=complex)
        else:
            low = int(self.low) + int(nonzero[0])
            arr = arr[nonzero[0] : nonzero[-1] + 1]
        arr.flags.writeable = False
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "coeffs", arr)

    @classmethod
    def zero(cls) -> "LaurentPoly":
        return cls(0, ())

    @classmethod
    def constant(cls, value: complex) -> "LaurentPoly":
        return cls(0, (value,))

    @classmethod
    def monomial(cls, degree: int, value: complex = 1) -> "LaurentPoly":
        return cls(degree, (value,))

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, complex]) -> "LaurentPoly":
        """Return the polynomial Σ mapping[d]·z^d."""
        if not mapping:
            return cls.zero()
        low, high = min(mapping), max(mapping)
        arr = np.zeros(high - low + 1, dtype=complex)
        for degree, value in mapping.items():
            arr[degree - low] += value
        return cls(low, arr)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> "LaurentPoly":
        """Return the polynomial described by [degree, re, im] triples."""
        mapping: dict[int, complex] = {}
        for degree, re, im in pairs:
            mapping[int(degree)] = mapping.get(int(degree), 0) + complex(re, im)
        return cls.from_mapping(mapping)

    @classmethod
    def coerce(cls, value: "LaurentPoly | Number") -> "LaurentPoly":
        if isinstance(value, LaurentPoly):
            return value
        if isinstance(value, Number):
            return cls.constant(complex(value))
        raise TypeError(f"unsupported type {type(value).__name__!r}")

    @property
    def high(self) -> int:
        """Return the highest degree (low - 1 for the zero polynomial)."""
        return self.low + self.coeffs.size - 1

    @property
    def degrees(self) -> np.ndarray:
        return np.arange(self.low, self.high + 1)

    @property
    def is_zero(self) -> bool:
        return self.coeffs.size == 0

    def coefficient(self, degree: int) -> complex:
        """Return the coefficient of z^degree."""
        index = degree - self.low
        if 0 <= index < self.coeffs.size:
            return complex(self.coeffs[index])
        return 0j

    def coefficients(self, degrees: np.ndarray) -> np.ndarray:
        """Return the coefficients for an array of degrees (zero outside)."""
        index = np.asarray(degrees) - self.low
        out = np.zeros(index.shape, dtype=complex)
        inside = (index >= 0) & (index < self.coeffs.size)
        out[inside] = self.coeffs[index[inside]]
        return out

    def conj_reflect(self) -> "LaurentPoly":
        """Return the pointwise conjugate on |z| = 1, i.e. c_l ↦ conj(c_{-l})."""
        return LaurentPoly(-self.high, np.conj(self.coeffs[::-1]))

    def shift(self, k: int) -> "LaurentPoly":
        """Return z^k·P."""
        return LaurentPoly(self.low + k, self.coeffs)

    def norm_sq(self) -> float:
        """Return ∫₀¹ |P(e^{2πiξ})|² dξ = Σ_l |c_l|²."""
        return float(np.sum(np.abs(self.coeffs) ** 2))

    def l1(self) -> float:
        """Return Σ_l |c_l|, a bound for sup |P| on the circle."""
        return float(np.sum(np.abs(self.coeffs)))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0

    def distance(self, other: "LaurentPoly | Number") -> float:
        """Return the largest coefficientwise difference to other."""
        other = LaurentPoly.coerce(other)
        lo = min(self.low, other.low)
        hi = max(self.high, other.high)
        if hi < lo:
            return 0.0
        degrees = np.arange(lo, hi + 1)
        diff = self.coefficients(degrees) - other.coefficients(degrees)
        return float(np.max(np.abs(diff)))

    def to_pairs(self) -> list[list[float]]:
        """Return the nonzero coefficients as [degree, re, im] triples."""
        return [
            [int(d), float(c.real) + 0.0, float(c.imag) + 0.0]
            for d, c in zip(self.degrees, self.coeffs)
            if c != 0
        ]

    def __call__(self, xi: float | np.ndarray) -> complex | np.ndarray:
        if self.is_zero:
            return np.zeros(np.shape(xi), dtype=complex) if np.ndim(xi) else 0j
        values = _phases(xi, self.degrees) @ self.coeffs
        return complex(values) if np.ndim(values) == 0 else values

    def __add__(self, other: "LaurentPoly | Number") -> "LaurentPoly":
        if not isinstance(other, (LaurentPoly, Number)):
            return NotImplemented
        other = LaurentPoly.coerce(other)
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        lo = min(self.low, other.low)
        hi = max(self.high, other.high)
        arr = np.zeros(hi - lo + 1, dtype=complex)
        arr[self.low - lo : self.high - lo + 1] += self.coeffs
        arr[other.low - lo : other.high - lo + 1] += other.coeffs
        return LaurentPoly(lo, arr)

    __radd__ = __add__

    def __neg__(self) -> "LaurentPoly":
        return LaurentPoly(self.low, -self.coeffs)

    def __sub__(self, other: "LaurentPoly | Number") -> "LaurentPoly":
        if not isinstance(other, (LaurentPoly, Number)):
            return NotImplemented
        return self + (-LaurentPoly.coerce(other))

    def __rsub__(self, other: Number) -> "LaurentPoly":
        return LaurentPoly.coerce(other) - self

    def __mul__(self, other: "LaurentPoly | Number") -> "LaurentPoly":
        if isinstance(other, Number):
            return LaurentPoly(self.low, self.coeffs * complex(other))
        if not isinstance(other, LaurentPoly):
            return NotImplemented
        if self.is_zero or other.is_zero:
            return LaurentPoly.zero()
        return LaurentPoly(self.low + other.low, np.convolve(self.coeffs, other.coeffs))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        terms = " + ".join(f"({c:.6g})z^{d}" for d, c in self.to_pairs_complex())
        return f"{self.__class__.__name__}({terms or '0'})"

    def to_pairs_complex(self) -> list[tuple[int, complex]]:
        return [(int(d), complex(c)) for d, c in zip(self.degrees, self.coeffs) if c != 0]


@dataclass(frozen=True, slots=True, eq=False)
class LaurentMatrix:
    """Rectangular matrix of Laurent polynomials.

    Examples
    --------
    >>> import mdframe as md
    >>> z = md.linalg.LaurentPoly.monomial(1)
    >>> m = md.linalg.LaurentMatrix.from_rows([[z, 0], [0, z.conj_reflect()]])
    >>> md.linalg.laurent_det(m).to_pairs()
    [[0, 1.0, 0.0]]
    """

    entries: tuple[tuple[LaurentPoly, ...], ...]

    __array_ufunc__ = None

    def __post_init__(self) -> None:
        widths = {len(row) for row in self.entries}
        if len(widths) > 1:
            raise ValueError(f"rows of unequal length {sorted(widths)!r}")

    @classmethod
    def from_rows(
        cls, rows: Iterable[Iterable["LaurentPoly | Number"]]
    ) -> "LaurentMatrix":
        return cls(tuple(tuple(LaurentPoly.coerce(v) for v in row) for row in rows))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "LaurentMatrix":
        zero = LaurentPoly.zero()
        return cls(tuple((zero,) * cols for _ in range(rows)))

    @classmethod
    def identity(cls, size: int) -> "LaurentMatrix":
        return cls.diagonal([LaurentPoly.constant(1)] * size)

    @classmethod
    def diagonal(
        cls, values: Sequence["LaurentPoly | Number"], rows: int | None = None
    ) -> "LaurentMatrix":
        """Return the rows×len(values) matrix [diag(values); 0]."""
        cols = len(values)
        rows = cols if rows is None else rows
        out = [[LaurentPoly.zero()] * cols for _ in range(rows)]
        for k, value in enumerate(values):
            out[k][k] = LaurentPoly.coerce(value)
        return cls.from_rows(out)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "LaurentMatrix":
        """Return the constant Laurent matrix with the given complex entries."""
        return cls.from_rows(np.asarray(array, dtype=complex).tolist())

    @property
    def shape(self) -> tuple[int, int]:
        rows = len(self.entries)
        return rows, (len(self.entries[0]) if rows else 0)

    def __getitem__(self, index: tuple[int, int]) -> LaurentPoly:
        r, s = index
        return self.entries[r][s]

    def _map(self, fn) -> "LaurentMatrix":
        return LaurentMatrix(tuple(tuple(fn(v) for v in row) for row in self.entries))

    def _zip(self, other: "LaurentMatrix", fn) -> "LaurentMatrix":
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return LaurentMatrix(
            tuple(
                tuple(fn(a, b) for a, b in zip(ra, rb))
                for ra, rb in zip(self.entries, other.entries)
            )
        )

    def __add__(self, other: "LaurentMatrix") -> "LaurentMatrix":
        return self._zip(other, lambda a, b: a + b)

    def __sub__(self, other: "LaurentMatrix") -> "LaurentMatrix":
        return self._zip(other, lambda a, b: a - b)

    def __mul__(self, other: "LaurentPoly | Number") -> "LaurentMatrix":
        if not isinstance(other, (LaurentPoly, Number)):
            return NotImplemented
        return self._map(lambda v: v * other)

    __rmul__ = __mul__

    def __matmul__(self, other: "LaurentMatrix") -> "LaurentMatrix":
        rows, inner = self.shape
        inner_other, cols = other.shape
        if inner != inner_other:
            raise ValueError(f"shape mismatch {self.shape} @ {other.shape}")
        out = []
        for r in range(rows):
            row = []
            for c in range(cols):
                acc = LaurentPoly.zero()
                for k in range(inner):
                    a, b = self.entries[r][k], other.entries[k][c]
                    if not (a.is_zero or b.is_zero):
                        acc = acc + a * b
                row.append(acc)
            out.append(tuple(row))
        return LaurentMatrix(tuple(out))

    def transpose(self) -> "LaurentMatrix":
        rows, cols = self.shape
        return LaurentMatrix(
            tuple(tuple(self.entries[r][c] for r in range(rows)) for c in range(cols))
        )

    def conj(self) -> "LaurentMatrix":
        """Return the entrywise pointwise conjugate on the circle."""
        return self._map(LaurentPoly.conj_reflect)

    def adjoint(self) -> "LaurentMatrix":
        """Return M* with M*(ξ) = M(ξ)^H for every ξ."""
        return self.transpose().conj()

    def shift(self, k: int) -> "LaurentMatrix":
        return self._map(lambda v: v.shift(k))

    def max_abs(self) -> float:
        return max((v.max_abs() for row in self.entries for v in row), default=0.0)

    def distance(self, other: "LaurentMatrix") -> float:
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return max(
            (
                a.distance(b)
                for ra, rb in zip(self.entries, other.entries)
                for a, b in zip(ra, rb)
            ),
            default=0.0,
        )

    def is_unitary(self, tol: float = SINGULAR_TOL) -> bool:
        """Return True if M*·M = I holds as a Laurent identity."""
        rows, cols = self.shape
        if rows != cols:
            return False
        return (self.adjoint() @ self).distance(LaurentMatrix.identity(rows)) < tol

    def __call__(self, xi: float | np.ndarray) -> CMatrix:
        """Return M(ξ), shaped (rows, cols) or (len(ξ), rows, cols)."""
        rows, cols = self.shape
        xi_arr = np.asarray(xi, dtype=float)
        out = np.zeros(xi_arr.shape + (rows, cols), dtype=complex)
        for r in range(rows):
            for c in range(cols):
                entry = self.entries[r][c]
                if not entry.is_zero:
                    out[..., r, c] = entry(xi_arr)
        return out

    def to_entries(self) -> list[dict]:
        rows, cols = self.shape
        return [
            {"r": r, "s": s, "coeffs": self.entries[r][s].to_pairs()}
            for r in range(rows)
            for s in range(cols)
        ]

    @classmethod
    def from_entries(
        cls, entries: Iterable[Mapping], rows: int, cols: int
    ) -> "LaurentMatrix":
        out = [[LaurentPoly.zero()] * cols for _ in range(rows)]
        for item in entries:
            out[int(item["r"])][int(item["s"])] = LaurentPoly.from_pairs(item["coeffs"])
        return cls.from_rows(out)


@dataclass(frozen=True, slots=True)
class EigenResult:
    """Ascending eigenvalues, matching eigenvectors (columns) and sweep count."""

    values: np.ndarray
    vectors: np.ndarray
    sweeps: int
    converged: bool


@dataclass(frozen=True, slots=True)
class GramInverse:
    """(M*M)^{-1} with the condition number of M*M."""

    inverse: CMatrix
    condition: float


def laurent_arith(op: str, *inputs: "LaurentPoly | Number") -> LaurentPoly:
    """Apply one coefficient-exact Laurent operation.

    Examples
    --------
    >>> import mdframe as md
    >>> z = md.linalg.LaurentPoly.monomial(1)
    >>> md.linalg.laurent_arith("conj_reflect", z).to_pairs()
    [[-1, 1.0, 0.0]]
    """
    if op not in ARITH_OPS:
        message = f"invalid choice {op!r}; expected a value from {ARITH_OPS!r}"
        raise ValueError(message)
    if op == "conj_reflect":
        (poly,) = inputs
        return LaurentPoly.coerce(poly).conj_reflect()
    left, right = inputs
    if op == "add":
        return LaurentPoly.coerce(left) + right
    if op == "sub":
        return LaurentPoly.coerce(left) - right
    if op == "scalar_mul" and not isinstance(right, Number):
        raise TypeError(f"unsupported type {type(right).__name__!r}; expected number")
    return LaurentPoly.coerce(left) * right


def eval_at(
    value: LaurentPoly | LaurentMatrix, xi: float | np.ndarray
) -> complex | np.ndarray:
    """Return value(e^{2πiξ}), entrywise for matrices.

    Examples
    --------
    >>> import mdframe as md
    >>> z = md.linalg.LaurentPoly.monomial(1)
    >>> md.linalg.eval_at(1 + z, 0.0)
    (2+0j)
    """
    return value(xi)


def _off_norm(a: np.ndarray) -> float:
    return math.sqrt(max(float(np.sum(np.abs(a) ** 2) - np.sum(np.abs(np.diag(a)) ** 2)), 0.0))


def _rotate(a: np.ndarray, v: np.ndarray, k: int, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero a[k, l] with the unitary W = diag(1, e^{-iφ})·R on the (k, l) plane."""
    h = a[k, l]
    mag = abs(h)
    phase = h / mag
    tau = (a[l, l].real - a[k, k].real) / (2 * mag)
    t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
    c = 1 / math.hypot(1.0, t)
    s = t * c
    w = np.eye(a.shape[0], dtype=complex)
    w[k, k] = c
    w[k, l] = s
    w[l, k] = -s * np.conj(phase)
    w[l, l] = c * np.conj(phase)
    return w.conj().T @ a @ w, v @ w


def hermitian_eigenvalues(h: CMatrix) -> EigenResult:
    """Return the spectrum of a Hermitian matrix by cyclic Jacobi rotations.

    The input is symmetrized first. Sweeps stop once the off-diagonal
    Frobenius norm falls below JACOBI_TOL·‖H‖ or after MAX_SWEEPS.

    Examples
    --------
    >>> import numpy as np
    >>> import mdframe as md
    >>> eig = md.linalg.hermitian_eigenvalues(np.array([[0, 1j], [-1j, 0]]))
    >>> np.round(eig.values, 12)
    array([-1.,  1.])
    """
    a = np.array(h, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix; got shape {a.shape}")
    a = (a + a.conj().T) / 2
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = float(np.linalg.norm(a))

    sweeps = 0
    converged = _off_norm(a) <= JACOBI_TOL * scale
    while not converged and sweeps < MAX_SWEEPS:
        sweeps += 1
        for k in range(n - 1):
            for l in range(k + 1, n):
                if abs(a[k, l]) > 0:
                    a, v = _rotate(a, v, k, l)
        converged = _off_norm(a) <= JACOBI_TOL * scale

    if not converged:
        logger.warning("Jacobi did not converge after %d sweeps", sweeps)

    values = np.real(np.diag(a))
    order = np.argsort(values, kind="stable")
    return EigenResult(values[order], v[:, order], sweeps, converged)


def laurent_det(m: LaurentMatrix) -> LaurentPoly:
    """Return det(M) exactly by Leibniz expansion (square, at most 6×6).

    Examples
    --------
    >>> import mdframe as md
    >>> z = md.linalg.LaurentPoly.monomial(1)
    >>> md.linalg.laurent_det(
    ...     md.linalg.LaurentMatrix.from_rows([[1, z], [z.conj_reflect(), 1]])
    ... ).is_zero
    True
    """
    rows, cols = m.shape
    if rows != cols:
        raise ValueError(f"expected a square matrix; got shape {m.shape}")
    if rows > MAX_LEIBNIZ:
        raise TooLargeError(f"Leibniz determinant limited to {MAX_LEIBNIZ}x{MAX_LEIBNIZ}")

    total = LaurentPoly.zero()
    for perm in itertools.permutations(range(rows)):
        inversions = sum(
            1 for i in range(rows) for j in range(i + 1, rows) if perm[i] > perm[j]
        )
        term = LaurentPoly.constant(-1 if inversions % 2 else 1)
        for r, c in enumerate(perm):
            entry = m[r, c]
            if entry.is_zero:
                term = LaurentPoly.zero()
                break
            term = term * entry
        if not term.is_zero:
            total = total + term
    return total


def pinv_at(m: CMatrix) -> GramInverse:
    """Return (M*M)^{-1} for a q×p matrix with q ≥ p, via eigendecomposition.

    Examples
    --------
    >>> import numpy as np
    >>> import mdframe as md
    >>> md.linalg.pinv_at(2 * np.eye(2)).inverse.real
    array([[0.25, 0.  ],
           [0.  , 0.25]])
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim < 2:
        # a vector is a single column
        m = m.reshape(-1, 1)
    rows, cols = m.shape
    if rows < cols:
        raise ValueError(f"expected rows >= cols; got shape {m.shape}")
    eig = hermitian_eigenvalues(m.conj().T @ m)
    smallest, largest = float(eig.values[0]), float(eig.values[-1])
    if largest <= 0 or smallest < SINGULAR_TOL * largest:
        raise SingularMatrixError(
            f"Gram matrix is singular (eigenvalues {smallest:.3g}..{largest:.3g})"
        )
    inverse = (eig.vectors / eig.values) @ eig.vectors.conj().T
    return GramInverse(inverse, largest / smallest)
