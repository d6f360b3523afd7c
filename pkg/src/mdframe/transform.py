"""The Θ_β transform, its vectorization Γ and the transform matrix Ψ.

All three are exact Laurent data for step functions. Θ_β f at cell ``c`` is
``Σ_l β^{l/2} f(cell c + pqN·l) z^{-l}``, so a shift of ``pqN`` cells is a
degree shift and every x-dilation by a power of δ is a cell-index shift.
"""

__all__ = (
    "ThetaField",
    "GammaField",
    "TransformMatrix",
    "RecurrenceReport",
    "theta_at",
    "theta",
    "theta_inverse",
    "assemble_window",
    "gamma",
    "matrix_at_cell",
    "transform_matrix",
    "window_from_matrix",
    "extend_matrix",
    "check_quasi_periodicity",
    "check_recurrences",
    "check_analysis_factorization",
)

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import Any

import numpy as np

import mdframe as md
from mdframe.exceptions import (
    DegenerateSetupError,
    GridMisalignedError,
    IndexOutOfRangeError,
)
from mdframe.linalg import LaurentMatrix, LaurentPoly

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class ThetaField:
    """Θ_β f on the base cells [0, pqN), which cover [1, β)."""

    params: "md.lattice.MDParams"
    n_cells: int
    cells: tuple[LaurentPoly, ...]

    def norm_sq(self) -> float:
        """Return ‖Θ_β f‖² over [1, β)×[0, 1) by circle Parseval."""
        grid = md.signal.GeoGrid(self.params, self.n_cells, 0, len(self.cells))
        return float(grid.widths() @ np.array([t.norm_sq() for t in self.cells]))


@dataclass(frozen=True, slots=True)
class GammaField:
    """Γf on the cells [0, qN) of [1, b), one p-vector of Laurent data per cell."""

    params: "md.lattice.MDParams"
    n_cells: int
    cells: tuple[tuple[LaurentPoly, ...], ...]

    def norm_sq(self) -> float:
        grid = md.signal.GeoGrid(self.params, self.n_cells, 0, len(self.cells))
        norms = np.array([sum(c.norm_sq() for c in cell) for cell in self.cells])
        return float(grid.widths() @ norms)


@dataclass(frozen=True)
class TransformMatrix:
    """Ψ on the N cells of the fundamental domain [1, δ), q×p per cell.

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 1, 2)
    >>> psi = md.signal.StepFunction.indicator(params, 1, 0, 1)
    >>> Psi = md.transform.transform_matrix(psi)
    >>> Psi.shape, Psi.cells[0][0, 0].to_pairs(), Psi.cells[0][1, 0].is_zero
    ((2, 1), [[0, 1.0, 0.0]], True)
    """

    params: "md.lattice.MDParams"
    n_cells: int
    cells: tuple[LaurentMatrix, ...]

    def __post_init__(self) -> None:
        expected = (self.params.q, self.params.p)
        if len(self.cells) != self.n_cells:
            raise GridMisalignedError(
                f"expected {self.n_cells} cells over [1, δ); got {len(self.cells)}"
            )
        for i, cell in enumerate(self.cells):
            if cell.shape != expected:
                raise GridMisalignedError(
                    f"cell {i} has shape {cell.shape}; expected {expected}"
                )

    @property
    def shape(self) -> tuple[int, int]:
        return self.params.q, self.params.p

    @cached_property
    def window(self) -> "md.signal.StepFunction":
        """Return the unique window whose transform matrix this is."""
        return window_from_matrix(self)

    def gram(self) -> tuple[LaurentMatrix, ...]:
        """Return Ψ*Ψ per cell as exact p×p Laurent matrices."""
        return tuple(cell.adjoint() @ cell for cell in self.cells)

    def to_dict(self) -> dict[str, Any]:
        return {
            "delta": repr(self.params.delta),
            "p": self.params.p,
            "q": self.params.q,
            "N": self.n_cells,
            "cells": [
                {"cell": i, "entries": cell.to_entries()}
                for i, cell in enumerate(self.cells)
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TransformMatrix":
        params = md.lattice.derive_params(
            float(str(data["delta"])), int(data["p"]), int(data["q"])
        )
        ordered = sorted(data["cells"], key=lambda item: int(item["cell"]))
        cells = tuple(
            LaurentMatrix.from_entries(item["entries"], params.q, params.p)
            for item in ordered
        )
        return cls(params, int(data["N"]), cells)


@dataclass(frozen=True, slots=True)
class RecurrenceReport:
    """Largest residual of each matrix recurrence.

    ``by_shift`` maps (l, m) to the residual of the a^{lq+m} recurrence;
    ``delta_step`` is None when the δ-step recurrence does not apply.
    """

    by_shift: Mapping[tuple[int, int], float]
    delta_step: float | None

    @property
    def max_residual(self) -> float:
        values = list(self.by_shift.values())
        if self.delta_step is not None:
            values.append(self.delta_step)
        return max(values, default=0.0)


def _relative(residual: float, *scales: float) -> float:
    return residual / max(1.0, *scales)


def theta_at(f: "md.signal.StepFunction", cell: int) -> LaurentPoly:
    """Return Θ_β f on an arbitrary cell as Σ_l β^{l/2} f(cell + pqN·l) z^{-l}.

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 1, 1)
    >>> f = md.signal.StepFunction.indicator(params, 1, 1, 2)
    >>> md.transform.theta_at(f, 0).to_pairs()
    [[-1, 1.4142135623730951, 0.0]]
    """
    period = f.grid.cells_per(f.params.period)
    l_lo = -((cell - f.i_min) // period)
    l_hi = (f.i_max - 1 - cell) // period
    if l_hi < l_lo:
        return LaurentPoly.zero()
    ls = np.arange(l_lo, l_hi + 1)
    coeffs = f.at(cell + period * ls) * f.params.beta ** (ls / 2)
    # degree −l, stored from the lowest degree upward
    return LaurentPoly(-l_hi, coeffs[::-1])


def theta(f: "md.signal.StepFunction") -> ThetaField:
    """Return Θ_β f over [1, β)."""
    period = f.grid.cells_per(f.params.period)
    return ThetaField(
        f.params, f.n_cells, tuple(theta_at(f, i) for i in range(period))
    )


def assemble_window(
    params: "md.lattice.MDParams",
    n_cells: int,
    cells: Iterable[tuple[int, LaurentPoly]],
) -> "md.signal.StepFunction":
    """Return the step function whose Θ_β transform is given on the listed cells.

    The cells must be pairwise incongruent modulo pqN; the coefficient of z^{-l}
    at cell c becomes the value β^{-l/2}·coef on cell c + pqN·l.
    """
    period = params.period * n_cells
    values: dict[int, complex] = {}
    seen: set[int] = set()
    for cell, poly in cells:
        residue = cell % period
        if residue in seen:
            raise GridMisalignedError(f"cell {cell} repeats residue {residue} mod {period}")
        seen.add(residue)
        for degree, coef in poly.to_pairs_complex():
            l = -degree
            values[cell + period * l] = coef * params.beta ** (-l / 2)
    return md.signal.StepFunction.from_indexed(params, n_cells, values).trim()


def theta_inverse(field: ThetaField) -> "md.signal.StepFunction":
    """Return the step function f with Θ_β f = field.

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 1, 1)
    >>> one = md.linalg.LaurentPoly.constant(1)
    >>> f = md.transform.theta_inverse(md.transform.ThetaField(params, 1, (one,)))
    >>> f.i_min, f.i_max, f.values.tolist()
    (0, 1, [(1+0j)])
    """
    return assemble_window(field.params, field.n_cells, enumerate(field.cells))


def gamma(f: "md.signal.StepFunction") -> GammaField:
    """Return Γf(x)_s = b^{s/2} Θ_β f(b^s x) over [1, b)."""
    params = f.params
    per_b = f.grid.cells_per(params.q)
    cells = tuple(
        tuple(
            theta_at(f, i + s * per_b) * params.b ** (s / 2) for s in range(params.p)
        )
        for i in range(per_b)
    )
    return GammaField(params, f.n_cells, cells)


def matrix_at_cell(psi: "md.signal.StepFunction", cell: int) -> LaurentMatrix:
    """Return Ψ on an arbitrary cell: entry (r, s) is δ^{(pr+qs)/2}Θ_βψ(δ^{pr+qs}x)."""
    params = psi.params
    rows = []
    for r in range(params.q):
        row = []
        for s in range(params.p):
            step = params.p * r + params.q * s
            poly = theta_at(psi, cell + psi.grid.cells_per(step))
            row.append(poly * params.power(step / 2))
        rows.append(row)
    return LaurentMatrix.from_rows(rows)


def transform_matrix(psi: "md.signal.StepFunction") -> TransformMatrix:
    """Return Ψ over the fundamental domain [1, δ).

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 1, 1)
    >>> psi = md.signal.StepFunction.indicator(params, 2, 0, 2)
    >>> [cell[0, 0].to_pairs() for cell in md.transform.transform_matrix(psi).cells]
    [[[0, 1.0, 0.0]], [[0, 1.0, 0.0]]]
    """
    cells = tuple(matrix_at_cell(psi, i) for i in range(psi.n_cells))
    return TransformMatrix(psi.params, psi.n_cells, cells)


def window_from_matrix(Psi: TransformMatrix) -> "md.signal.StepFunction":
    """Return ψ with ψ(β^j a^r b^s x_i) = β^{-j/2}δ^{-(pr+qs)/2}[z^{-j}]Ψ_{r,s}(x_i).

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 1, 1)
    >>> Psi = md.transform.TransformMatrix(
    ...     params, 1, (md.linalg.LaurentMatrix.from_rows([[1]]),)
    ... )
    >>> md.transform.window_from_matrix(Psi).values.tolist()
    [(1+0j)]
    """
    params = Psi.params
    n_cells = Psi.n_cells
    items = []
    for i, cell in enumerate(Psi.cells):
        for r in range(params.q):
            for s in range(params.p):
                step = params.p * r + params.q * s
                items.append(
                    (i + step * n_cells, cell[r, s] * params.power(-step / 2))
                )
    return assemble_window(params, n_cells, items)


def extend_matrix(Psi: TransformMatrix, cell_offset: int) -> tuple[LaurentMatrix, ...]:
    """Return Ψ on δ^{cell_offset/N}·[1, δ), read off the window's Θ_β data."""
    window = Psi.window
    return tuple(matrix_at_cell(window, i + cell_offset) for i in range(Psi.n_cells))


def check_quasi_periodicity(f: "md.signal.StepFunction", j: int, m: int) -> float:
    """Return the residual of Θ_β f(β^j x, ξ+m) = β^{-j/2} e^{2πijξ} Θ_β f(x, ξ).

    The shift ξ ↦ ξ+m is the identity on integer-degree Laurent data, so m only
    labels the identity being checked.

    Examples
    --------
    >>> import numpy as np
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 2, 3)
    >>> f = md.signal.random_window(params, 2, np.random.default_rng(1), periods=2)
    >>> md.transform.check_quasi_periodicity(f, 1, 5) < 1e-13
    True
    """
    period = f.grid.cells_per(f.params.period)
    scale = 1.0
    residual = 0.0
    for i in range(period):
        base = theta_at(f, i)
        left = theta_at(f, i + j * period)
        right = base.shift(j) * f.params.beta ** (-j / 2)
        scale = max(scale, left.max_abs(), right.max_abs())
        residual = max(residual, left.distance(right))
    logger.debug("quasi-periodicity j=%d m=%d residual=%.3g", j, m, residual)
    return _relative(residual, scale)


def _max_distance(
    left: Sequence[LaurentMatrix], right: Sequence[LaurentMatrix]
) -> float:
    scale = max((m.max_abs() for m in (*left, *right)), default=0.0)
    residual = max((a.distance(b) for a, b in zip(left, right)), default=0.0)
    return _relative(residual, scale)


def check_recurrences(
    Psi: TransformMatrix, shifts: Iterable[int] = (-1, 0, 1)
) -> RecurrenceReport:
    """Compare extend_matrix against the U_m and L_q/R_p recurrences.

    For each l in shifts and m ∈ N_q the left side Ψ(a^{lq+m}x) is read off the
    window, the right side is a^{-(lq+m)/2} z^l U_m Ψ(x). When p, q > 1 the
    δ-step Ψ(δx) = δ^{-1/2} L_q Ψ(x) R_p is checked too.

    Examples
    --------
    >>> import numpy as np
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 1, 2)
    >>> Psi = md.transform.transform_matrix(
    ...     md.signal.random_window(params, 2, np.random.default_rng(3))
    ... )
    >>> report = md.transform.check_recurrences(Psi)
    >>> report.delta_step is None, report.max_residual < 1e-12
    (True, True)
    """
    params = Psi.params
    n_cells = Psi.n_cells
    by_shift: dict[tuple[int, int], float] = {}
    for l in shifts:
        for m in range(params.q):
            power = l * params.q + m
            left = extend_matrix(Psi, params.p * power * n_cells)
            u_m = md.lattice.structural_matrices(params, "Um", m)
            factor = LaurentPoly.monomial(l, params.a ** (-power / 2))
            right = [(u_m @ cell) * factor for cell in Psi.cells]
            by_shift[l, m] = _max_distance(left, right)

    delta_step = None
    try:
        l_q = md.lattice.structural_matrices(params, "Lq")
        r_p = md.lattice.structural_matrices(params, "Rp")
    except DegenerateSetupError:
        logger.debug("δ-step recurrence not applicable for p=%d q=%d", params.p, params.q)
    else:
        left = extend_matrix(Psi, n_cells)
        right = [(l_q @ cell @ r_p) * params.power(-0.5) for cell in Psi.cells]
        delta_step = _max_distance(left, right)

    return RecurrenceReport(by_shift, delta_step)


def check_analysis_factorization(
    f: "md.signal.StepFunction",
    m: int,
    j: int,
    r: int,
    points: Iterable[tuple[float, float]],
) -> float:
    """Return the residual of Γ(Λ_m D_{a^{jq+r}} f) = e_{m,j}·(a^{r/2}b^{s/2}Θ_β f(a^r b^s x))_s.

    The left side is evaluated from point values of Λ_m and f; the right side
    uses the Laurent data of Θ_β f. Points are (x, ξ) pairs with x ∈ [1, b).
    """
    params = f.params
    if not 0 <= r < params.q:
        raise IndexOutOfRangeError(f"r={r} outside N_q with q={params.q}")
    power = j * params.q + r
    dilation = params.a**power
    # enough β-periods to cover f's support after every dilation involved
    span_cells = max(abs(f.i_min), abs(f.i_max)) + f.grid.cells_per(
        abs(power) * params.p + params.q * params.p
    )
    l_span = span_cells // f.grid.cells_per(params.period) + 2

    def dilated(y: np.ndarray) -> np.ndarray:
        return (
            md.signal.modulation(m, y, params)
            * math.sqrt(dilation)
            * f(y * dilation)
        )

    residual = 0.0
    scale = 1.0
    beta = params.beta
    ls = np.arange(-l_span, l_span + 1)
    for x, xi in points:
        e_mj = md.signal.modulation(m, x, params) * np.exp(2j * np.pi * j * xi)
        for s in range(params.p):
            y = x * params.b**s
            left_terms = dilated(y * beta**ls)
            left = params.b ** (s / 2) * np.sum(
                beta ** (ls / 2) * left_terms * np.exp(-2j * np.pi * ls * xi)
            )
            target = y * params.a**r
            poly = theta_at(f, int(f.grid.cell_of(target)))
            right = e_mj * params.a ** (r / 2) * params.b ** (s / 2) * poly(xi)
            residual = max(residual, abs(left - right))
            scale = max(scale, abs(right))
    return _relative(residual, scale)
