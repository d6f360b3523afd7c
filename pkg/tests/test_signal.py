import json
import math
from dataclasses import FrozenInstanceError

import numpy as np
import pytest

import mdframe as md
from mdframe.exceptions import GridMisalignedError
from mdframe.signal import GeoGrid, StepFunction


@pytest.fixture
def params() -> md.lattice.MDParams:
    return md.lattice.derive_params(2, 1, 2)


def cell_quadrature(fn, lo: float, hi: float, points: int = 20_000) -> complex:
    """Midpoint rule on [lo, hi)."""
    width = (hi - lo) / points
    x = lo + width * (np.arange(points) + 0.5)
    return complex(np.sum(fn(x)) * width)


class TestGeoGrid:
    def test_edges_and_widths(self, params):
        grid = GeoGrid(params, 2, 0, 4)
        np.testing.assert_allclose(grid.edges(), [1, 2**0.5, 2, 2**1.5, 4])
        np.testing.assert_allclose(grid.widths(), np.diff(grid.edges()))
        assert grid.size == 4
        assert grid.cells_per(3) == 6

    def test_cell_of(self, params):
        grid = GeoGrid(params, 4, -8, 8)
        mids = np.sqrt(grid.edges()[:-1] * grid.edges()[1:])
        np.testing.assert_array_equal(grid.cell_of(mids), grid.indices)

    def test_cell_of_edges(self):
        params = md.lattice.derive_params(1.5, 1, 2)
        grid = GeoGrid(params, 2, -12, 12)
        ks = np.arange(-5, 6)
        np.testing.assert_array_equal(grid.cell_of(1.5**ks), 2 * ks)
        np.testing.assert_array_equal(grid.cell_of(grid.edges()), np.arange(-12, 13))
        for k in ks:
            psi = StepFunction.indicator(params, 2, 2 * k, 2 * k + 1)
            assert psi(1.5**k) == 1

    @pytest.mark.parametrize("n_cells, i_min, i_max", [(0, 0, 1), (2, 3, 3), (2, 4, 1)])
    def test_invalid(self, params, n_cells: int, i_min: int, i_max: int):
        with pytest.raises(ValueError):
            GeoGrid(params, n_cells, i_min, i_max)

    def test_immutability(self, params):
        grid = GeoGrid(params, 2, 0, 4)
        with pytest.raises(FrozenInstanceError):
            grid.n_cells = 3
        assert not hasattr(grid, "__dict__")


class TestStepFunction:
    def test_norm_and_evaluation(self):
        params = md.lattice.derive_params(2, 1, 1)
        f = StepFunction.indicator(params, 1, 0, 2, value=2j)
        assert f.norm_sq() == pytest.approx(12.0)
        assert f(1.5) == 2j
        assert f(3.9) == 2j
        assert f(0.5) == 0
        np.testing.assert_array_equal(f.at(np.array([-1, 0, 1, 2])), [0, 2j, 2j, 0])

    def test_support_and_trim(self, params):
        f = StepFunction.from_indexed(params, 2, {-3: 0, 1: 1.0, 4: 2.0, 6: 0})
        assert f.support() == (1, 5)
        trimmed = f.trim()
        assert (trimmed.i_min, trimmed.i_max) == (1, 5)
        assert StepFunction.zeros(params, 2, 0, 3).support() is None
        assert StepFunction.zeros(params, 2, 0, 3).trim().grid.size == 1

    def test_from_indexed_empty(self, params):
        f = StepFunction.from_indexed(params, 3, {})
        assert (f.i_min, f.i_max) == (0, 1)
        assert f.norm_sq() == 0

    def test_arithmetic_on_union(self, params):
        f = StepFunction.indicator(params, 1, 0, 2)
        g = StepFunction.indicator(params, 2, 2, 6, value=3)
        total = f + g
        assert total.n_cells == 2
        assert (total.i_min, total.i_max) == (0, 6)
        np.testing.assert_array_equal(total.values, [1, 1, 4, 4, 3, 3])
        assert (total - g).distance(f) == 0
        assert (2 * f).norm_sq() == pytest.approx(4 * f.norm_sq())
        assert (-f).distance(f) == 2

    def test_file_round_trip(self, params, rng: np.random.Generator):
        f = md.signal.random_window(params, 3, rng, start=-4)
        data = json.loads(json.dumps(f.to_dict()))
        restored = StepFunction.from_dict(data)
        assert restored.params == f.params
        assert (restored.i_min, restored.n_cells) == (f.i_min, f.n_cells)
        assert restored.distance(f) == 0

    @pytest.mark.parametrize(
        "data, match",
        [
            ({"delta": "2", "p": 1, "q": 1, "N": 1, "i_min": 0}, "missing fields"),
            ({"delta": "2", "p": 1, "q": 1, "N": 1, "i_min": 0, "values": []}, "non-empty"),
            ({"delta": "2", "p": 1, "q": 1, "N": 1, "i_min": 0, "values": [1, 2]}, "pairs"),
        ],
    )
    def test_from_dict_invalid(self, data: dict, match: str):
        with pytest.raises(ValueError, match=match):
            StepFunction.from_dict(data)

    def test_values_read_only(self, params):
        f = StepFunction.indicator(params, 1, 0, 2)
        with pytest.raises(ValueError):
            f.values[0] = 3
        with pytest.raises(FrozenInstanceError):
            f.grid = None


class TestGridOperations:
    def test_refine_preserves_function(self, params, rng: np.random.Generator):
        f = md.signal.random_window(params, 2, rng)
        g = md.signal.refine(f, 3)
        assert g.n_cells == 6
        assert g.norm_sq() == pytest.approx(f.norm_sq(), rel=1e-12)
        x = np.array([1.1, 1.7, 2.5, 3.3, 7.0])
        np.testing.assert_allclose(g(x), f(x))

    def test_refine_invalid(self, params):
        with pytest.raises(ValueError):
            md.signal.refine(StepFunction.indicator(params, 1, 0, 1), 0)

    @pytest.mark.parametrize("k", [-3, -1, 1, 2, 5])
    def test_dilate_is_isometric(self, params, rng: np.random.Generator, k: int):
        f = md.signal.random_window(params, 2, rng)
        g = md.signal.dilate(f, k)
        assert g.norm_sq() == pytest.approx(f.norm_sq(), rel=1e-12)
        x = 1.3
        assert g(x) == pytest.approx(params.power(k / 2) * f(x * params.power(k)))

    def test_align_mismatch(self, params):
        other = md.lattice.derive_params(2, 1, 3)
        with pytest.raises(GridMisalignedError, match="grids differ"):
            md.signal.align(
                StepFunction.indicator(params, 1, 0, 1),
                StepFunction.indicator(other, 1, 0, 1),
            )

    def test_align_uses_lcm(self, params):
        f, g = md.signal.align(
            StepFunction.indicator(params, 4, 0, 4), StepFunction.indicator(params, 6, 0, 6)
        )
        assert f.n_cells == g.n_cells == 12

    def test_inner_product(self, params, rng: np.random.Generator):
        f = md.signal.random_window(params, 2, rng)
        g = md.signal.random_window(params, 3, rng, start=-2)
        assert md.signal.inner_product(f, f) == pytest.approx(f.norm_sq())
        assert md.signal.inner_product(f, g) == pytest.approx(
            np.conj(md.signal.inner_product(g, f))
        )


class TestModulation:
    @pytest.mark.parametrize("m", [-3, 0, 2])
    def test_b_dilation_periodic(self, params, m: int):
        x = np.array([1.2, 2.9, 3.7])
        np.testing.assert_allclose(
            md.signal.modulation(m, x * params.b, params),
            md.signal.modulation(m, x, params),
            atol=1e-12,
        )

    @pytest.mark.parametrize("m, i", [(0, 0), (3, 1), (-2, 5), (7, 9), (1, -3)])
    def test_lambda_integral_matches_quadrature(self, params, m: int, i: int):
        grid = GeoGrid(params, 4, -4, 12)
        lo, hi = grid.edges(np.array([i, i + 1]))

        def integrand(x):
            return np.conj(md.signal.modulation(m, x, params))

        expected = cell_quadrature(integrand, lo, hi)
        assert md.signal.lambda_integral(m, i, grid) == pytest.approx(expected, abs=1e-7)

    def test_lambda_integral_broadcasts(self, params):
        grid = GeoGrid(params, 4, 0, 8)
        ms = np.arange(-3, 4)
        table = md.signal.lambda_integral(ms[:, np.newaxis], grid.indices, grid)
        assert table.shape == (7, 8)
        assert table[4, 2] == pytest.approx(md.signal.lambda_integral(1, 2, grid))

    @pytest.mark.parametrize(
        "delta, p, q, n_cells", [(2, 1, 2, 4), (1.5, 2, 3, 3), (3, 1, 1, 2)]
    )
    def test_modulation_gram_is_identity(self, delta: float, p: int, q: int, n_cells: int):
        gram = md.signal.modulation_gram(
            md.lattice.derive_params(delta, p, q), n_cells, 8
        )
        np.testing.assert_allclose(gram, np.eye(17), atol=1e-12)


class TestMDInner:
    def test_zero_modulation_is_plain_inner_product(self, params, rng: np.random.Generator):
        f = md.signal.random_window(params, 2, rng)
        psi = md.signal.random_window(params, 2, rng, start=-2)
        for j in (-1, 0, 1):
            dilated = md.signal.dilate(psi, params.p * j)
            expected = md.signal.inner_product(f, dilated) / math.sqrt(params.b - 1)
            assert md.signal.md_inner(f, psi, 0, j) == pytest.approx(expected, abs=1e-12)

    def test_array_matches_scalar(self, params, rng: np.random.Generator):
        f = md.signal.random_window(params, 2, rng)
        psi = md.signal.random_window(params, 2, rng)
        ms = np.arange(-4, 5)
        values = md.signal.md_inner(f, psi, ms, 0)
        for m, value in zip(ms, values):
            assert value == pytest.approx(md.signal.md_inner(f, psi, int(m), 0), abs=1e-14)

    def test_disjoint_supports(self, params):
        f = StepFunction.indicator(params, 2, 0, 2)
        psi = StepFunction.indicator(params, 2, 0, 2)
        assert md.signal.md_inner(f, psi, 3, 4) == 0
        np.testing.assert_array_equal(md.signal.md_inner(f, psi, np.arange(3), 4), [0, 0, 0])


class TestRandomWindow:
    def test_reproducible(self, params):
        a = md.signal.random_window(params, 2, np.random.default_rng(7), periods=2)
        b = md.signal.random_window(params, 2, np.random.default_rng(7), periods=2)
        assert a.distance(b) == 0
        assert a.grid.size == 2 * params.period * 2
        assert np.all(np.abs(a.values) <= 1)

    def test_invalid_periods(self, params, rng: np.random.Generator):
        with pytest.raises(ValueError):
            md.signal.random_window(params, 2, rng, periods=0)
