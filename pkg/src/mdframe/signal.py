"""Piecewise-constant functions on the δ^{1/N}-geometric grid over ℝ₊.

Cell ``i`` is ``[δ^{i/N}, δ^{(i+1)/N})``. Every power of ``a``, ``b`` and ``β``
is a power of ``δ``, so dilations by them are integer index shifts and the
b-adic breakpoints of the modulation functions never split a cell.
"""

__all__ = (
    "GeoGrid",
    "StepFunction",
    "refine",
    "dilate",
    "lambda_integral",
    "modulation",
    "inner_product",
    "md_inner",
    "align",
    "modulation_gram",
    "random_window",
)

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass
from numbers import Number
from typing import Any, Final

import numpy as np

import mdframe as md
from mdframe.exceptions import GridMisalignedError

logger = logging.getLogger(__name__)

EDGE_TOL: Final[float] = 1e-12


def _floor_log(x: np.ndarray, log_step: float) -> np.ndarray:
    """Return floor(log x / log_step), with points within EDGE_TOL of an edge put on it."""
    t = np.log(x) / log_step
    nearest = np.rint(t)
    on_edge = np.abs(t - nearest) <= EDGE_TOL * np.maximum(1.0, np.abs(t))
    return np.where(on_edge, nearest, np.floor(t)).astype(int)


@dataclass(frozen=True, slots=True)
class GeoGrid:
    """Cells i_min ≤ i < i_max of the grid with N cells per factor δ.

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 1, 1)
    >>> grid = md.signal.GeoGrid(params, 1, 0, 2)
    >>> grid.edges().tolist()
    [1.0, 2.0, 4.0]
    >>> grid.widths().tolist()
    [1.0, 2.0]
    """

    params: "md.lattice.MDParams"
    n_cells: int
    i_min: int
    i_max: int

    def __post_init__(self) -> None:
        if not isinstance(self.n_cells, int) or self.n_cells < 1:
            raise ValueError(f"n_cells={self.n_cells!r} must be a positive integer")
        if self.i_min >= self.i_max:
            raise ValueError(f"empty cell range [{self.i_min}, {self.i_max})")

    @property
    def size(self) -> int:
        return self.i_max - self.i_min

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.i_min, self.i_max)

    @property
    def log_step(self) -> float:
        """Return ln δ^{1/N}, the log-width of one cell."""
        return math.log(self.params.delta) / self.n_cells

    def cells_per(self, exponent: int) -> int:
        """Return the index shift that corresponds to a dilation by δ^exponent."""
        return exponent * self.n_cells

    def edges(self, indices: np.ndarray | None = None) -> np.ndarray:
        """Return left edges δ^{i/N} (all edges, right end included, by default)."""
        if indices is None:
            indices = np.arange(self.i_min, self.i_max + 1)
        return np.exp(np.asarray(indices) * self.log_step)

    def widths(self, indices: np.ndarray | None = None) -> np.ndarray:
        """Return cell widths w_i = δ^{i/N}(δ^{1/N} − 1)."""
        if indices is None:
            indices = self.indices
        return np.exp(np.asarray(indices) * self.log_step) * math.expm1(self.log_step)

    def cell_of(self, x: float | np.ndarray) -> np.ndarray:
        """Return the index of the cell that contains each point x > 0."""
        return _floor_log(np.asarray(x, dtype=float), self.log_step)

    def with_range(self, i_min: int, i_max: int) -> "GeoGrid":
        return GeoGrid(self.params, self.n_cells, i_min, i_max)

    def same_lattice(self, other: "GeoGrid") -> bool:
        return (self.params.delta, self.params.p, self.params.q) == (
            other.params.delta,
            other.params.p,
            other.params.q,
        )


@dataclass(frozen=True, slots=True, eq=False)
class StepFunction:
    """f = Σ_i v_i·χ_{cell i}, zero outside the grid's index range.

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 1, 1)
    >>> f = md.signal.StepFunction.indicator(params, 1, 0, 2)
    >>> f.norm_sq()
    3.0
    >>> f(3.0)
    (1+0j)
    """

    grid: GeoGrid
    values: np.ndarray

    __array_ufunc__ = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=complex).ravel()
        if values.size != self.grid.size:
            raise ValueError(
                f"expected {self.grid.size} values for cells "
                f"[{self.grid.i_min}, {self.grid.i_max}); got {values.size}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(
        cls, params: "md.lattice.MDParams", n_cells: int, i_min: int, i_max: int
    ) -> "StepFunction":
        grid = GeoGrid(params, n_cells, i_min, i_max)
        return cls(grid, np.zeros(grid.size, dtype=complex))

    @classmethod
    def indicator(
        cls,
        params: "md.lattice.MDParams",
        n_cells: int,
        i_min: int,
        i_max: int,
        value: complex = 1,
    ) -> "StepFunction":
        """Return value·χ on the union of cells [i_min, i_max)."""
        grid = GeoGrid(params, n_cells, i_min, i_max)
        return cls(grid, np.full(grid.size, value, dtype=complex))

    @classmethod
    def from_indexed(
        cls,
        params: "md.lattice.MDParams",
        n_cells: int,
        values: Mapping[int, complex],
    ) -> "StepFunction":
        """Return the function with the given value per cell index."""
        if not values:
            return cls.zeros(params, n_cells, 0, 1)
        i_min, i_max = min(values), max(values) + 1
        out = np.zeros(i_max - i_min, dtype=complex)
        for i, v in values.items():
            out[i - i_min] = v
        return cls(GeoGrid(params, n_cells, i_min, i_max), out)

    @property
    def params(self) -> "md.lattice.MDParams":
        return self.grid.params

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    @property
    def i_min(self) -> int:
        return self.grid.i_min

    @property
    def i_max(self) -> int:
        return self.grid.i_max

    def widths(self) -> np.ndarray:
        return self.grid.widths()

    def norm_sq(self) -> float:
        """Return ‖f‖² = Σ_i |v_i|²·w_i."""
        return float(np.sum(np.abs(self.values) ** 2 * self.widths()))

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())

    def at(self, indices: int | np.ndarray) -> np.ndarray:
        """Return the values on arbitrary cell indices, zero outside the range."""
        index = np.asarray(indices) - self.i_min
        out = np.zeros(index.shape, dtype=complex)
        inside = (index >= 0) & (index < self.values.size)
        out[inside] = self.values[index[inside]]
        return out

    def __call__(self, x: float | np.ndarray) -> complex | np.ndarray:
        values = self.at(self.grid.cell_of(x))
        return complex(values) if values.ndim == 0 else values

    def restrict(self, i_min: int, i_max: int) -> "StepFunction":
        """Return the same function on the cell range [i_min, i_max), zero-padded."""
        return StepFunction(
            self.grid.with_range(i_min, i_max), self.at(np.arange(i_min, i_max))
        )

    def support(self) -> tuple[int, int] | None:
        """Return the smallest cell range holding every nonzero value."""
        nonzero = np.flatnonzero(self.values)
        if nonzero.size == 0:
            return None
        return self.i_min + int(nonzero[0]), self.i_min + int(nonzero[-1]) + 1

    def trim(self) -> "StepFunction":
        support = self.support()
        if support is None:
            return self.restrict(self.i_min, self.i_min + 1)
        return self.restrict(*support)

    def _union(self, other: "StepFunction") -> tuple["StepFunction", "StepFunction"]:
        f, g = align(self, other)
        lo, hi = min(f.i_min, g.i_min), max(f.i_max, g.i_max)
        return f.restrict(lo, hi), g.restrict(lo, hi)

    def __add__(self, other: "StepFunction") -> "StepFunction":
        if not isinstance(other, StepFunction):
            return NotImplemented
        f, g = self._union(other)
        return StepFunction(f.grid, f.values + g.values)

    def __sub__(self, other: "StepFunction") -> "StepFunction":
        if not isinstance(other, StepFunction):
            return NotImplemented
        f, g = self._union(other)
        return StepFunction(f.grid, f.values - g.values)

    def __neg__(self) -> "StepFunction":
        return StepFunction(self.grid, -self.values)

    def __mul__(self, other: Number) -> "StepFunction":
        if not isinstance(other, Number):
            return NotImplemented
        return StepFunction(self.grid, self.values * complex(other))

    __rmul__ = __mul__

    def distance(self, other: "StepFunction") -> float:
        """Return the largest cellwise difference to other."""
        f, g = self._union(other)
        return float(np.max(np.abs(f.values - g.values)))

    def to_dict(self) -> dict[str, Any]:
        """Return the window/signal file representation."""
        params = self.params
        return {
            "delta": repr(params.delta),
            "p": params.p,
            "q": params.q,
            "N": self.n_cells,
            "i_min": self.i_min,
            "values": [[float(v.real), float(v.imag)] for v in self.values],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StepFunction":
        """Parse the window/signal file representation.

        Examples
        --------
        >>> import mdframe as md
        >>> data = {"delta": "2", "p": 1, "q": 2, "N": 1, "i_min": 0,
        ...         "values": [[1, 0], [0, 1]]}
        >>> f = md.signal.StepFunction.from_dict(data)
        >>> f.params.b, f.values.tolist()
        (4.0, [(1+0j), 1j])
        """
        missing = {"delta", "p", "q", "N", "i_min", "values"} - set(data)
        if missing:
            raise ValueError(f"missing fields {sorted(missing)!r}")
        params = md.lattice.derive_params(
            float(str(data["delta"])), int(data["p"]), int(data["q"])
        )
        pairs = np.asarray(data["values"], dtype=float)
        if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] == 0:
            raise ValueError("values must be a non-empty list of [re, im] pairs")
        i_min = int(data["i_min"])
        grid = GeoGrid(params, int(data["N"]), i_min, i_min + pairs.shape[0])
        return cls(grid, pairs[:, 0] + 1j * pairs[:, 1])


def refine(f: StepFunction, factor: int) -> StepFunction:
    """Return f on the grid with factor·N cells per δ; each value is replicated.

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 1, 1)
    >>> g = md.signal.refine(md.signal.StepFunction.indicator(params, 1, 0, 1), 2)
    >>> g.n_cells, g.i_min, g.i_max, g.values.tolist()
    (2, 0, 2, [(1+0j), (1+0j)])
    """
    if not isinstance(factor, int) or factor < 1:
        raise ValueError(f"factor={factor!r} must be a positive integer")
    if factor == 1:
        return f
    grid = GeoGrid(
        f.params, f.n_cells * factor, f.i_min * factor, f.i_max * factor
    )
    return StepFunction(grid, np.repeat(f.values, factor))


def dilate(f: StepFunction, k: int) -> StepFunction:
    """Return D_{δ^k} f(x) = δ^{k/2} f(δ^k x).

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(4, 1, 1)
    >>> g = md.signal.dilate(md.signal.StepFunction.indicator(params, 1, 0, 1), 1)
    >>> g.i_min, g.values.tolist()
    (-1, [(2+0j)])
    """
    if k == 0:
        return f
    shift = f.grid.cells_per(k)
    grid = f.grid.with_range(f.i_min - shift, f.i_max - shift)
    return StepFunction(grid, f.values * f.params.power(k / 2))


def lambda_integral(
    m: int | np.ndarray, i: int | np.ndarray, grid: GeoGrid
) -> complex | np.ndarray:
    """Return ∫_{cell i} conj(Λ_m(x)) dx in closed form, broadcasting m and i.

    On the annulus [b^k, b^{k+1}) the substitution u = x b^{-k} maps the cell
    into [1, b), where Λ_m(u) = e^{2πimu/(b−1)}/√(b−1).

    Examples
    --------
    >>> import numpy as np
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 1, 2)
    >>> grid = md.signal.GeoGrid(params, 4, 0, 8)
    >>> cells = np.arange(8)
    >>> bool(np.isclose(md.signal.lambda_integral(0, cells, grid).sum(), np.sqrt(3)))
    True
    >>> bool(abs(md.signal.lambda_integral(3, cells, grid).sum()) < 1e-12)
    True
    """
    params = grid.params
    m_arr = np.asarray(m)
    i_arr = np.asarray(i)
    per_annulus = grid.cells_per(params.q)
    k, local = np.divmod(i_arr, per_annulus)
    u0 = np.exp(local * grid.log_step)
    du = u0 * math.expm1(grid.log_step)
    period = params.b - 1
    phase = np.exp(-2j * np.pi * m_arr * (u0 + du / 2) / period)
    # np.sinc covers the removable singularity at m = 0
    value = params.b**k * du * phase * np.sinc(m_arr * du / period) / math.sqrt(period)
    return complex(value) if np.ndim(value) == 0 else value


def modulation(
    m: int | np.ndarray, x: float | np.ndarray, params: "md.lattice.MDParams"
) -> complex | np.ndarray:
    """Return Λ_m(x), the b-dilation periodic extension of its [1, b) expression.

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 1, 1)
    >>> md.signal.modulation(0, 5.0, params)
    (1+0j)
    """
    x_arr = np.asarray(x, dtype=float)
    k = _floor_log(x_arr, math.log(params.b))
    u = x_arr / params.b**k
    period = params.b - 1
    value = np.exp(2j * np.pi * np.asarray(m) * u / period) / math.sqrt(period)
    return complex(value) if np.ndim(value) == 0 else value


def align(f: StepFunction, g: StepFunction) -> tuple[StepFunction, StepFunction]:
    """Refine f and g to a common grid with lcm(N_f, N_g) cells per δ."""
    if not f.grid.same_lattice(g.grid):
        raise GridMisalignedError(
            f"grids differ: (δ, p, q) = ({f.params.delta}, {f.params.p}, {f.params.q})"
            f" vs ({g.params.delta}, {g.params.p}, {g.params.q})"
        )
    n_cells = math.lcm(f.n_cells, g.n_cells)
    return refine(f, n_cells // f.n_cells), refine(g, n_cells // g.n_cells)


def inner_product(f: StepFunction, g: StepFunction) -> complex:
    """Return ⟨f, g⟩ = Σ_i f_i conj(g_i) w_i.

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 1, 1)
    >>> f = md.signal.StepFunction.indicator(params, 1, 0, 1)
    >>> g = md.signal.StepFunction.indicator(params, 1, 0, 2)
    >>> md.signal.inner_product(f, g)
    (1+0j)
    """
    f, g = align(f, g)
    lo, hi = max(f.i_min, g.i_min), min(f.i_max, g.i_max)
    if lo >= hi:
        return 0j
    cells = np.arange(lo, hi)
    return complex(np.sum(f.at(cells) * np.conj(g.at(cells)) * f.grid.widths(cells)))


def md_inner(
    f: StepFunction, psi: StepFunction, m: int | np.ndarray, j: int
) -> complex | np.ndarray:
    """Return ⟨f, Λ_m D_{a^j} ψ⟩, for every m when m is an array.

    Examples
    --------
    >>> import math
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(3, 1, 1)
    >>> f = md.signal.StepFunction.indicator(params, 2, 0, 2)
    >>> math.isclose(md.signal.md_inner(f, f, 0, 0).real, math.sqrt(2))
    True
    >>> abs(md.signal.md_inner(f, f, 1, 0)) < 1e-12
    True
    """
    f, psi = align(f, psi)
    g = dilate(psi, psi.params.p * j)
    lo, hi = max(f.i_min, g.i_min), min(f.i_max, g.i_max)
    m_arr = np.asarray(m)
    if lo >= hi:
        return np.zeros(m_arr.shape, dtype=complex) if m_arr.ndim else 0j
    cells = np.arange(lo, hi)
    h = f.at(cells) * np.conj(g.at(cells))
    integrals = lambda_integral(np.expand_dims(m_arr, -1), cells, f.grid)
    value = integrals @ h
    return complex(value) if np.ndim(value) == 0 else value


def modulation_gram(
    params: "md.lattice.MDParams", n_cells: int, m_max: int
) -> np.ndarray:
    """Return the Gram matrix ⟨Λ_m, Λ_{m'}⟩ on [1, b) for |m|, |m'| ≤ m_max.

    Λ_m·conj(Λ_{m'}) = conj(Λ_{m'−m})/√(b−1) on [1, b), so each entry is a sum
    of closed-form cell integrals.

    Examples
    --------
    >>> import numpy as np
    >>> import mdframe as md
    >>> gram = md.signal.modulation_gram(md.lattice.derive_params(2, 1, 2), 4, 2)
    >>> bool(np.allclose(gram, np.eye(5), atol=1e-12))
    True
    """
    grid = GeoGrid(params, n_cells, 0, n_cells * params.q)
    ms = np.arange(-m_max, m_max + 1)
    diffs = ms[np.newaxis, :] - ms[:, np.newaxis]
    cells = grid.indices
    integrals = lambda_integral(diffs[..., np.newaxis], cells, grid)
    return integrals.sum(axis=-1) / math.sqrt(params.b - 1)


def random_window(
    params: "md.lattice.MDParams",
    n_cells: int,
    rng: np.random.Generator,
    periods: int = 1,
    start: int = 0,
) -> StepFunction:
    """Return a window with values uniform on the unit disk over whole β-periods.

    Examples
    --------
    >>> import numpy as np
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 2, 3)
    >>> psi = md.signal.random_window(params, 2, np.random.default_rng(0))
    >>> psi.i_min, psi.i_max, bool(np.all(np.abs(psi.values) <= 1))
    (0, 12, True)
    """
    if periods < 1:
        raise ValueError(f"periods={periods!r} must be a positive integer")
    size = periods * params.period * n_cells
    radius = np.sqrt(rng.uniform(size=size))
    angle = rng.uniform(0, 2 * np.pi, size=size)
    grid = GeoGrid(params, n_cells, start, start + size)
    return StepFunction(grid, radius * np.exp(1j * angle))
