import json
import logging
import math

import numpy as np
import pytest

import mdframe as md
from mdframe.exceptions import (
    DensityViolatedError,
    NonCoprimeError,
    NotAFrameError,
    TailNotConvergedError,
    UnitarityViolatedError,
)
from mdframe.frames import SynthesisSpec
from mdframe.linalg import LaurentMatrix, LaurentPoly
from mdframe.signal import StepFunction
from mdframe.transform import TransformMatrix

z = LaurentPoly.monomial(1)


def frame_spec(p: int, q: int, rng: np.random.Generator, delta: float = 2.0):
    """Random spec with frame bounds inside [1, 8]."""
    params = md.lattice.derive_params(delta, p, q)
    return md.frames.bounded_spec(params, 2, 1.0, 8.0, rng)


def random_signal(params: md.lattice.MDParams, rng: np.random.Generator) -> StepFunction:
    return md.signal.random_window(params, 2, rng, periods=2, start=-3)


class TestCompleteness:
    def test_parseval_window(self, parseval_window):
        Psi = md.transform.transform_matrix(parseval_window)
        result = md.frames.completeness(Psi)
        assert result.complete
        assert result.method == "exact"

    def test_structural_when_p_exceeds_q(self, rng: np.random.Generator):
        params = md.lattice.derive_params(2, 2, 1)
        Psi = md.transform.transform_matrix(md.signal.random_window(params, 3, rng))
        result = md.frames.completeness(Psi)
        assert not result.complete
        assert result.method == "structural"
        assert result.failure_cells == (0, 1, 2)

    def test_rank_deficient_symbol(self):
        params = md.lattice.derive_params(2, 2, 3)
        deficient = LaurentMatrix.from_rows([[1, z], [z.conj_reflect(), 1], [0, 0]])
        repaired = LaurentMatrix.from_rows([[1, z], [z.conj_reflect(), 1], [0, 1e-3]])
        for method in ("exact", "sampled"):
            assert not md.frames.completeness(
                TransformMatrix(params, 1, (deficient,)), method
            ).complete
            assert md.frames.completeness(
                TransformMatrix(params, 1, (repaired,)), method
            ).complete

    @pytest.mark.parametrize("p, q", [(1, 1), (1, 2), (2, 3), (3, 4)])
    def test_methods_agree(self, p: int, q: int, rng: np.random.Generator):
        params = md.lattice.derive_params(2, p, q)
        Psi = md.transform.transform_matrix(md.signal.random_window(params, 2, rng, periods=2))
        exact = md.frames.completeness(Psi, "exact")
        sampled = md.frames.completeness(Psi, "sampled")
        assert exact.complete == sampled.complete
        assert exact.failure_cells == sampled.failure_cells

    @pytest.mark.parametrize("eps", [1e-3, 1e-5, 1e-7, 1e-9])
    def test_nearly_deficient_symbol(self, eps: float):
        params = md.lattice.derive_params(2, 2, 3)
        cell = LaurentMatrix.from_rows([[1, z], [z.conj_reflect(), 1], [0, eps]])
        Psi = TransformMatrix(params, 1, (cell,))
        exact = md.frames.completeness(Psi, "exact")
        sampled = md.frames.completeness(Psi, "sampled")
        assert exact.complete
        assert sampled.complete

    def test_unbalanced_columns(self):
        params = md.lattice.derive_params(2, 2, 3)
        cell = LaurentMatrix.from_rows([[1, 0], [0, 1e-11], [z, 0]])
        Psi = TransformMatrix(params, 1, (cell,))
        for method in ("exact", "sampled"):
            assert md.frames.completeness(Psi, method).complete

    def test_methods_agree_on_many_windows(self):
        rng = np.random.default_rng(2024)
        for p, q in [(1, 1), (1, 2), (2, 3), (3, 4)]:
            params = md.lattice.derive_params(2, p, q)
            for _ in range(25):
                Psi = md.transform.transform_matrix(md.signal.random_window(params, 2, rng))
                exact = md.frames.completeness(Psi, "exact")
                sampled = md.frames.completeness(Psi, "sampled")
                assert exact.complete == sampled.complete
                assert exact.failure_cells == sampled.failure_cells

    def test_failure_cell_reported(self):
        params = md.lattice.derive_params(2, 1, 2)
        one = LaurentPoly.constant(1)
        spec = SynthesisSpec(params, 2, ((one,), (LaurentPoly.zero(),)))
        Psi = md.frames.synthesize(spec).Psi
        for method in ("exact", "sampled"):
            assert md.frames.completeness(Psi, method).failure_cells == (1,)

    def test_invalid_method(self, parseval_window):
        Psi = md.transform.transform_matrix(parseval_window)
        with pytest.raises(ValueError, match="invalid choice"):
            md.frames.completeness(Psi, "fast")


class TestFrameBounds:
    def test_parseval(self, parseval_window):
        spectral, verdict = md.frames.frame_bounds(
            md.transform.transform_matrix(parseval_window)
        )
        assert verdict.frame
        assert verdict.A_est == pytest.approx(1.0)
        assert verdict.B_est == pytest.approx(1.0)
        assert spectral.converged

    def test_indicator_window(self):
        params = md.lattice.derive_params(2, 1, 2)
        psi = StepFunction.indicator(params, 4, 0, 4)
        _, verdict = md.frames.frame_bounds(md.transform.transform_matrix(psi))
        assert verdict.frame
        assert verdict.A_est == pytest.approx(1 / params.a)
        assert verdict.B_est == pytest.approx(1.0)
        assert verdict.bound_gap == 2.0
        assert not verdict.tight_possible

    def test_zero_window_is_not_a_frame(self):
        params = md.lattice.derive_params(2, 1, 2)
        Psi = md.transform.transform_matrix(StepFunction.zeros(params, 2, 0, 4))
        spectral, verdict = md.frames.frame_bounds(Psi)
        assert not verdict.complete
        assert not verdict.frame
        assert verdict.A_est == 0.0
        assert spectral.lambda_max_global == 0.0

    def test_report_layout(self, rng: np.random.Generator):
        params = md.lattice.derive_params(2, 2, 3)
        Psi = md.transform.transform_matrix(md.signal.random_window(params, 3, rng))
        spectral, verdict = md.frames.frame_bounds(Psi, K=32)
        assert spectral.eigenvalues.shape == (3, verdict.K_final, 2)
        assert np.all(np.diff(spectral.eigenvalues, axis=-1) >= -1e-12)
        los = [lo for _, lo, _ in spectral.history]
        his = [hi for _, _, hi in spectral.history]
        assert los == sorted(los, reverse=True)
        assert his == sorted(his)
        rows = list(spectral.rows())
        assert len(rows) == 3 * verdict.K_final
        assert len(rows[0]) == 4

    @pytest.mark.parametrize("K", [8, 100, 0])
    def test_invalid_samples(self, parseval_window, K: int):
        Psi = md.transform.transform_matrix(parseval_window)
        with pytest.raises(ValueError, match="power of two"):
            md.frames.frame_bounds(Psi, K)

    def test_refinement_cap_warns(self, caplog, rng: np.random.Generator):
        spec = frame_spec(1, 2, rng)
        Psi = md.frames.synthesize(spec).Psi
        caplog.set_level(logging.WARNING)
        spectral, verdict = md.frames.frame_bounds(Psi, K=16, tol=0.0, cap=64)
        assert not spectral.converged
        assert not verdict.converged
        assert verdict.K_final == 64
        assert "not settled" in caplog.text

    def test_analyze(self, parseval_window):
        Psi, _, verdict = md.frames.analyze(parseval_window)
        assert Psi.shape == (1, 1)
        assert verdict.frame

    @pytest.mark.parametrize("p, q", [(1, 1), (1, 2), (2, 3), (3, 2)])
    def test_bounds_consistency(self, p: int, q: int, rng: np.random.Generator):
        params = md.lattice.derive_params(1.5, p, q)
        Psi = md.transform.transform_matrix(md.signal.random_window(params, 2, rng))
        assert md.frames.bounds_consistency(Psi) < 1e-6


class TestSynthesis:
    def test_witness_is_an_indicator(self):
        params = md.lattice.derive_params(2, 2, 3)
        psi = md.frames.synthesize(md.frames.witness_spec(params, 2)).psi
        _, _, verdict = md.frames.analyze(psi)
        assert verdict.frame
        assert verdict.A_est == pytest.approx(0.25)
        assert verdict.B_est == pytest.approx(1.0)

    def test_constant_lambda(self):
        params = md.lattice.derive_params(2, 1, 2)
        c = 1.5
        spec = SynthesisSpec(params, 2, ((LaurentPoly.constant(c),),) * 2)
        _, verdict = md.frames.frame_bounds(md.frames.synthesize(spec).Psi)
        assert verdict.A_est == pytest.approx(c**2 / 2)
        assert verdict.B_est == pytest.approx(c**2)

    def test_vanishing_lambda(self):
        params = md.lattice.derive_params(2, 1, 2)
        spec = SynthesisSpec(params, 2, ((LaurentPoly.constant(1),), (LaurentPoly.zero(),)))
        prediction = md.frames.predict(spec)
        assert not prediction.complete
        assert not prediction.frame
        assert prediction.zero_cells == (1,)
        _, verdict = md.frames.frame_bounds(md.frames.synthesize(spec).Psi)
        assert not verdict.complete

    def test_unitarity_violated(self):
        params = md.lattice.derive_params(2, 1, 2)
        one = LaurentPoly.constant(1)
        shear = LaurentMatrix.from_rows([[1, 1], [0, 1]])
        spec = SynthesisSpec(
            params, 2, ((one,),) * 2, U=(LaurentMatrix.identity(2), shear)
        )
        with pytest.raises(UnitarityViolatedError) as excinfo:
            md.frames.synthesize(spec)
        assert excinfo.value.cell == 1

    def test_density_violated(self):
        params = md.lattice.derive_params(2, 3, 2)
        spec = md.frames.witness_spec(params, 1)
        with pytest.raises(DensityViolatedError):
            md.frames.synthesize(spec)

    def test_shape_errors(self):
        params = md.lattice.derive_params(2, 2, 3)
        one = LaurentPoly.constant(1)
        with pytest.raises(ValueError, match="expected 2"):
            md.frames.synthesize(SynthesisSpec(params, 2, ((one, one),)))
        with pytest.raises(ValueError, match="expected p=2"):
            md.frames.synthesize(SynthesisSpec(params, 1, ((one,),)))

    @pytest.mark.parametrize("p, q", [(1, 1), (1, 2), (2, 3)])
    def test_bounded_spec(self, p: int, q: int, rng: np.random.Generator):
        spec = frame_spec(p, q, rng)
        result = md.frames.synthesize(spec)
        _, verdict = md.frames.frame_bounds(result.Psi)
        prediction = md.frames.predict(spec)
        assert verdict.frame
        assert prediction.frame
        assert 1.0 - 1e-9 <= verdict.A_est
        assert verdict.B_est <= 8.0 + 1e-9
        assert verdict.A_est == pytest.approx(prediction.A_est, rel=1e-8)
        assert verdict.B_est == pytest.approx(prediction.B_est, rel=1e-8)

    def test_bounded_spec_impossible(self, rng: np.random.Generator):
        params = md.lattice.derive_params(2, 2, 3)
        with pytest.raises(ValueError, match="no MD frame"):
            md.frames.bounded_spec(params, 1, 1.0, 3.0, rng)
        with pytest.raises(ValueError, match="positive"):
            md.frames.bounded_spec(params, 1, 0.0, 3.0, rng)

    def test_spec_file_round_trip(self, rng: np.random.Generator):
        spec = frame_spec(2, 3, rng)
        restored = SynthesisSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        a = md.frames.synthesize(spec).psi
        b = md.frames.synthesize(restored).psi
        assert a.distance(b) < 1e-15

    def test_spec_missing_fields(self):
        with pytest.raises(ValueError, match="missing fields"):
            SynthesisSpec.from_dict({"delta": "2", "p": 1, "q": 1})

    @pytest.mark.parametrize(
        "p, q, expected", [(1, 1, True), (2, 3, True), (3, 2, False), (5, 3, False)]
    )
    def test_density_verdict(self, p: int, q: int, expected: bool):
        assert md.frames.density_verdict(p, q) is expected

    @pytest.mark.parametrize(
        "p, q", [(p, q) for q in range(1, 6) for p in range(1, q + 1) if math.gcd(p, q) == 1]
    )
    def test_witness_frames_below_density(self, p: int, q: int):
        params = md.lattice.derive_params(2, p, q)
        Psi = md.frames.synthesize(md.frames.witness_spec(params, 1)).Psi
        _, verdict = md.frames.frame_bounds(Psi)
        assert verdict.frame
        assert verdict.B_est >= params.bound_gap * verdict.A_est - 1e-8

    def test_density_verdict_non_coprime(self):
        with pytest.raises(NonCoprimeError):
            md.frames.density_verdict(2, 4)

    def test_random_windows_incomplete_above_density(self, rng: np.random.Generator):
        params = md.lattice.derive_params(1.5, 5, 3)
        for _ in range(20):
            psi = md.signal.random_window(params, 1, rng)
            assert not md.frames.completeness(md.transform.transform_matrix(psi)).complete


class TestAnalysisCoefficients:
    @pytest.mark.parametrize("p, q", [(1, 1), (1, 2), (2, 3), (3, 2)])
    def test_routes_agree(self, p: int, q: int, rng: np.random.Generator):
        params = md.lattice.derive_params(2, p, q)
        f = random_signal(params, rng)
        psi = md.signal.random_window(params, 2, rng)
        report = md.frames.analysis_coefficients(f, psi, m_max=8, tol=1.0)
        assert report.time.shape == (17, report.j_values.size)
        assert report.max_discrepancy < 1e-10
        assert report.time_total == pytest.approx(report.exact_total, rel=1e-10)

    def test_parseval_total(self, parseval_window, rng: np.random.Generator):
        f = random_signal(parseval_window.params, rng)
        report = md.frames.analysis_coefficients(f, parseval_window, tol=1e-3)
        assert report.converged
        assert report.exact_total == pytest.approx(f.norm_sq(), rel=1e-10)
        assert report.truncated_total <= report.exact_total * (1 + 1e-12)

    @pytest.mark.parametrize("p, q", [(1, 2), (2, 3)])
    def test_frame_inequality(self, p: int, q: int, rng: np.random.Generator):
        spec = frame_spec(p, q, rng)
        psi = md.frames.synthesize(spec).psi
        _, verdict = md.frames.frame_bounds(md.transform.transform_matrix(psi))
        f = random_signal(spec.params, rng)
        total = md.frames.analysis_coefficients(f, psi, m_max=4, tol=1.0).exact_total
        norm_sq = f.norm_sq()
        assert verdict.A_est * norm_sq * (1 - 1e-9) <= total
        assert total <= verdict.B_est * norm_sq * (1 + 1e-9)

    def test_zero_window(self, parseval_window):
        psi = StepFunction.zeros(parseval_window.params, 2, 0, 2)
        report = md.frames.analysis_coefficients(parseval_window, psi)
        assert report.j_values.size == 0
        assert report.exact_total == 0
        assert report.converged

    def test_tail_not_converged(self, parseval_window, rng: np.random.Generator):
        f = random_signal(parseval_window.params, rng)
        with pytest.raises(TailNotConvergedError) as excinfo:
            md.frames.analysis_coefficients(f, parseval_window, m_max=2, tol=1e-12, cap=8)
        report = excinfo.value.report
        assert not report.converged
        assert report.m_max_final == 8
        assert report.relative_gap > 1e-12
        assert report.summary()["converged"] is False

    @pytest.mark.parametrize("j", range(-3, 4))
    def test_parseval_system_is_orthonormal(self, parseval_window, j: int):
        f = md.signal.dilate(parseval_window, j)
        report = md.frames.analysis_coefficients(f, parseval_window, m_max=8)
        expected = np.zeros((17, 1))
        expected[8, 0] = 1
        assert report.j_values.tolist() == [j]
        np.testing.assert_allclose(report.time, expected, atol=1e-10)

    def test_rows(self, parseval_window):
        report = md.frames.analysis_coefficients(parseval_window, parseval_window, m_max=1)
        rows = list(report.rows())
        assert [row[:2] for row in rows] == [[-1, 0], [0, 0], [1, 0]]
        assert rows[1][2] == pytest.approx(1.0)


class TestDuals:
    def test_parseval_dual(self, parseval_window):
        dual = md.frames.dual_window(md.transform.transform_matrix(parseval_window))
        assert dual.distance(parseval_window) < 1e-12

    def test_single_dual_warns_when_q_exceeds_one(self, caplog):
        params = md.lattice.derive_params(2, 1, 2)
        psi = StepFunction.indicator(params, 2, 0, 2)
        caplog.set_level(logging.WARNING)
        dual = md.frames.dual_window(md.transform.transform_matrix(psi))
        assert "does not invert" in caplog.text
        assert dual.distance(psi) < 1e-12

    def test_not_a_frame(self):
        params = md.lattice.derive_params(2, 1, 2)
        Psi = md.transform.transform_matrix(StepFunction.zeros(params, 2, 0, 4))
        with pytest.raises(NotAFrameError, match="not invertible"):
            md.frames.dual_window(Psi)

    def test_above_density(self, rng: np.random.Generator):
        params = md.lattice.derive_params(2, 3, 2)
        Psi = md.transform.transform_matrix(md.signal.random_window(params, 1, rng))
        with pytest.raises(NotAFrameError, match="p > q"):
            md.frames.dual_windows(Psi)

    def test_q_one_reconstruction(self, rng: np.random.Generator):
        spec = frame_spec(1, 1, rng)
        result = md.frames.synthesize(spec)
        dual = md.frames.dual_window(result.Psi)
        f = random_signal(spec.params, rng)
        assert md.frames.reconstruct(f, result.psi, dual).residual < 1e-8

    @pytest.mark.parametrize("p, q, delta", [(1, 2, 2.0), (2, 3, 1.5), (1, 3, 1.5)])
    def test_canonical_duals_reconstruct(
        self, p: int, q: int, delta: float, rng: np.random.Generator
    ):
        spec = frame_spec(p, q, rng, delta)
        result = md.frames.synthesize(spec)
        duals = md.frames.dual_windows(result.Psi)
        assert len(duals) == q
        f = random_signal(spec.params, rng)
        assert md.frames.reconstruct(f, result.psi, duals).residual < 1e-8

    def test_dual_windows_match_single_dual_for_q_one(self, rng: np.random.Generator):
        spec = frame_spec(1, 1, rng)
        Psi = md.frames.synthesize(spec).Psi
        (only,) = md.frames.dual_windows(Psi)
        assert only.distance(md.frames.dual_window(Psi)) < 1e-12


class TestReconstruct:
    def test_wrong_dual(self, parseval_window, rng: np.random.Generator):
        f = random_signal(parseval_window.params, rng)
        residual = md.frames.reconstruct(f, parseval_window, 2 * parseval_window).residual
        assert residual == pytest.approx(1.0)

    def test_truncated_m_sum(self, parseval_window):
        result = md.frames.reconstruct(
            parseval_window, parseval_window, parseval_window, m_max=2
        )
        assert result.residual < 1e-10

    def test_dual_count(self, rng: np.random.Generator):
        params = md.lattice.derive_params(2, 2, 3)
        psi = md.signal.random_window(params, 1, rng)
        with pytest.raises(ValueError, match="expected 1 or q=3"):
            md.frames.reconstruct(psi, psi, (psi, psi))

    def test_empty_overlap(self, parseval_window):
        f = StepFunction.zeros(parseval_window.params, 2, 0, 2)
        result = md.frames.reconstruct(f, parseval_window, parseval_window)
        assert result.residual == 0
        assert result.f_hat.norm_sq() == 0


class TestTightness:
    def test_parseval_is_tight(self, parseval_window):
        _, _, verdict = md.frames.analyze(parseval_window)
        report = md.frames.tightness_check(verdict, parseval_window.params)
        assert report.tight
        assert report.tight_possible
        assert not report.non_tight_guaranteed

    @pytest.mark.parametrize("p, q", [(1, 2), (2, 3), (1, 3)])
    def test_witness_ratio_is_the_bound_gap(self, p: int, q: int):
        params = md.lattice.derive_params(2, p, q)
        psi = md.frames.synthesize(md.frames.witness_spec(params, 2)).psi
        _, _, verdict = md.frames.analyze(psi)
        report = md.frames.tightness_check(verdict, params)
        assert report.ratio == pytest.approx(params.bound_gap)
        assert report.gap_holds
        assert report.non_tight_guaranteed
        assert not report.tight

    def test_gap_violation_warns(self, caplog):
        params = md.lattice.derive_params(2, 1, 2)
        verdict = md.frames.FrameVerdict(True, True, True, 1.0, 1.0, 2.0, False, (), 256)
        caplog.set_level(logging.WARNING)
        report = md.frames.tightness_check(verdict, params)
        assert not report.gap_holds
        assert "below" in caplog.text

    def test_not_a_frame(self):
        params = md.lattice.derive_params(2, 1, 2)
        verdict = md.frames.FrameVerdict(True, False, False, 0.0, 1.0, 2.0, False, (0,), 256)
        with pytest.raises(NotAFrameError):
            md.frames.tightness_check(verdict, params)


class TestThreads:
    def test_thread_pool_gives_same_results(self, monkeypatch, rng: np.random.Generator):
        params = md.lattice.derive_params(2, 2, 3)
        Psi = md.transform.transform_matrix(md.signal.random_window(params, 4, rng, periods=2))
        serial = md.frames.frame_bounds(Psi)[0].eigenvalues
        monkeypatch.setenv(md.frames.THREADS_ENV, "3")
        pooled = md.frames.frame_bounds(Psi)[0].eigenvalues
        np.testing.assert_array_equal(serial, pooled)

    def test_invalid_thread_count(self, monkeypatch, parseval_window):
        monkeypatch.setenv(md.frames.THREADS_ENV, "many")
        with pytest.raises(ValueError, match="positive integer"):
            md.frames.completeness(md.transform.transform_matrix(parseval_window))
