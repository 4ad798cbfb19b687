import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from psdcert.channel import poisson_pmf, predict_histogram, simulate_from_histogram
from psdcert.model import DEFAULT_ANGLES, DetectionParams, MarginalDistribution, PooledHistogram, m_sq_grid, \
    pool_angles, validate_records
from psdcert.reconstruct import (
    DeconvolutionSettings,
    deconvolve,
    forward_convolve,
    g_to_G,
    kernel_transform,
    read_marginal,
    reconstruct_marginal,
    resolve_half_width,
    symmetric_grid,
    total_variation,
    write_marginal,
)
from psdcert.synthetic import SyntheticState, exact_marginal, exact_pooled_histogram

from conftest import DEFAULT_LAMBDA

REFERENCE = SyntheticState.gaussian(math.sqrt(1500.0))


def two_gaussian_closed_form(m0, mt, lam):
    return 0.5 * (np.exp(-lam * (m0 - mt) ** 2) + np.exp(-lam * (m0 + mt) ** 2))


def poisson_histogram(chi, tail=1e-14):
    n_max = int(stats.poisson.isf(tail, chi)) + 1
    return PooledHistogram(poisson_pmf(np.arange(n_max + 1), chi))


def l1(a: MarginalDistribution, b: MarginalDistribution) -> float:
    return float(a.weights @ np.abs(a.density - b.density))


class TestGFunction:
    def test_vacuum(self, params):
        grid = symmetric_grid(100.0, 64)
        G = g_to_G(PooledHistogram(np.array([1.0])), params, grid)
        np.testing.assert_allclose(G.values, np.exp(-params.lam * grid**2), rtol=1e-14)

    @pytest.mark.parametrize("m0", [5.0, 30.0, 80.0])
    def test_kernel_identity(self, params, m0):
        grid = symmetric_grid(150.0, 512)
        G = g_to_G(poisson_histogram(params.lam * m0**2), params, grid)
        np.testing.assert_allclose(G.values, two_gaussian_closed_form(m0, grid, params.lam), atol=1e-10)

    def test_kernel_identity_by_brute_force_summation(self, params):
        # term-by-term sum in exact rational-free floats for a small case
        m0, mt, lam = 12.0, 9.0, params.lam
        chi = lam * m0**2
        total = sum(poisson_pmf(n, chi) * math.exp(-lam * mt**2) * math.factorial(n) / math.factorial(2 * n)
                    * (4 * lam * mt**2) ** n for n in range(60))
        assert total == pytest.approx(float(two_gaussian_closed_form(m0, mt, lam)), rel=1e-12)

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60).filter(lambda p: sum(p) > 0))
    def test_even_finite_non_negative(self, params, weights):
        p = np.array(weights) / sum(weights)
        grid = symmetric_grid(300.0, 256)
        v = g_to_G(PooledHistogram(p), params, grid).values
        # node 0 is -300; pair j with -j around the centre node
        np.testing.assert_allclose(v[1:], v[1:][::-1], rtol=1e-10, atol=0)
        assert np.all(np.isfinite(v)) and np.all(v >= 0)

    def test_overflow_reports_photon_number(self):
        p = np.zeros(3001)
        p[[0, 3000]] = 0.5
        with pytest.raises(OverflowError, match="n=3000"):
            g_to_G(PooledHistogram(p), DetectionParams.from_lambda(1e300), np.array([-1e10, 0.0, 1e10]))


class TestKernelTransform:
    def test_origin(self, params):
        assert kernel_transform(0.0, params.lam) == pytest.approx(math.sqrt(math.pi / params.lam), rel=1e-15)
        # sqrt(pi / 8.64e-3) = 19.0686; the quoted 19.066 agrees to 1.5e-4 relative
        assert kernel_transform(0.0, DEFAULT_LAMBDA) == pytest.approx(19.0686, abs=1e-4)
        assert kernel_transform(0.0, DEFAULT_LAMBDA) == pytest.approx(19.066, rel=1.5e-4)

    def test_matches_discrete_transform(self, params):
        grid = symmetric_grid(200.0, 4096)
        dm = grid[1] - grid[0]
        f = np.exp(-params.lam * grid**2)
        omega = np.linspace(0.0, 1.0, 41)
        dft = (np.exp(-1j * omega[:, None] * grid[None, :]) @ f).real * dm
        np.testing.assert_allclose(dft, kernel_transform(omega, params.lam), atol=1e-8)

    def test_bad_lambda(self):
        with pytest.raises(ValueError):
            kernel_transform(0.0, 0.0)


class TestForwardConvolve:
    def test_delta(self, params):
        grid = symmetric_grid(150.0, 256)
        mg = m_sq_grid(150.0, 1001)
        node = mg[400]
        G = forward_convolve(MarginalDistribution.point_mass(mg, node), params.lam, grid)
        np.testing.assert_allclose(G.values, two_gaussian_closed_form(math.sqrt(node), grid, params.lam),
                                   atol=1e-12)

    def test_mass_at_origin(self, params):
        grid = symmetric_grid(150.0, 256)
        mg = m_sq_grid(150.0, 1001)
        G = forward_convolve(MarginalDistribution.point_mass(mg, 0.0), params.lam, grid)
        # the smallest representable point mass sits on node 1 = (0.15)^2
        np.testing.assert_allclose(G.values, np.exp(-params.lam * grid**2), atol=1e-3)

    @given(st.floats(0.0, 1.0))
    def test_linear(self, params, w):
        grid = symmetric_grid(300.0, 128)
        mg = m_sq_grid(300.0, 2001)
        a, b = exact_marginal(SyntheticState.ring(40.0), mg), exact_marginal(SyntheticState.gaussian(25.0), mg)
        mix = MarginalDistribution(mg, w * a.density + (1 - w) * b.density)
        np.testing.assert_allclose(
            forward_convolve(mix, params.lam, grid).values,
            w * forward_convolve(a, params.lam, grid).values + (1 - w) * forward_convolve(b, params.lam, grid).values,
            atol=1e-14)

    def test_commuting_diagram(self, params):
        pooled = exact_pooled_histogram(REFERENCE, params)
        grid = symmetric_grid(resolve_half_width(pooled, params, DeconvolutionSettings()), 4096)
        marg = exact_marginal(REFERENCE, m_sq_grid(grid[-1], 2049))
        pred = predict_histogram(marg, params, n_max=400)
        via_counts = g_to_G(PooledHistogram(pred.probs / pred.probs.sum()), params, grid)
        np.testing.assert_allclose(via_counts.values, forward_convolve(marg, params.lam, grid).values, atol=1e-7)


class TestDeconvolve:
    def test_gaussian_reference_recovers_marginal(self, params):
        marg, _ = reconstruct_marginal(exact_pooled_histogram(REFERENCE, params), params)
        assert l1(marg, exact_marginal(REFERENCE, marg.grid)) < 1e-3

    def test_two_component_round_trip(self, params):
        state = SyntheticState.mixture([0.5, 0.5], [SyntheticState.gaussian(20.0), SyntheticState.gaussian(45.0)])
        grid = symmetric_grid(400.0, 4096)
        truth = exact_marginal(state, grid[2048:] ** 2)
        marg = deconvolve(forward_convolve(truth, params.lam, grid), DeconvolutionSettings(regularization=1e-10))
        assert l1(marg, truth) < 1e-3

    def test_round_trip_reproduces_G(self, params):
        pooled = exact_pooled_histogram(REFERENCE, params)
        grid = symmetric_grid(resolve_half_width(pooled, params, DeconvolutionSettings()), 4096)
        G = g_to_G(pooled, params, grid)
        back = forward_convolve(deconvolve(G), params.lam, grid)
        assert np.max(np.abs(back.values - G.values)) < 1e-6

    def test_zero_width_kernel_is_refused(self):
        grid = symmetric_grid(100.0, 256)
        G = g_to_G(PooledHistogram(np.array([1.0])), DetectionParams.from_lambda(50.0), grid)
        with pytest.raises(ValueError, match="kernel width"):
            deconvolve(G)

    def test_normalization_bound(self, params):
        grid = symmetric_grid(150.0, 256)
        G = g_to_G(PooledHistogram(np.array([1.0])), params, grid)
        bad = type(G)(G.grid, 2.0 * G.values, G.lam)
        with pytest.raises(ValueError, match="normalization"):
            deconvolve(bad)

    def test_grid_checks(self, params):
        with pytest.raises(ValueError):
            deconvolve(g_to_G(PooledHistogram(np.array([1.0])), params, np.linspace(-10, 10, 65)))
        with pytest.raises(ValueError):
            DeconvolutionSettings(grid_points=1001)
        with pytest.raises(ValueError):
            DeconvolutionSettings(regularization=0.0)

    def test_half_width_must_cover_six_pilot_sd(self, params):
        pooled = exact_pooled_histogram(REFERENCE, params)
        with pytest.raises(ValueError, match="pilot standard deviations"):
            resolve_half_width(pooled, params, DeconvolutionSettings(grid_half_width=100.0))


class TestReconstructMarginal:
    def test_self_consistency(self, params):
        pooled = exact_pooled_histogram(REFERENCE, params)
        _, pred = reconstruct_marginal(pooled, params)
        assert total_variation(pred.probs, pooled.probs) < 0.01

    def test_vacuum_concentrates_at_origin(self, params):
        # resolution is set by the floor (S_f < 1e-6 S_f(0) beyond omega ~ 0.69 / mu_B),
        # so the spike rings; judge it against the kernel variance 1 / (2 lam)
        marg, _ = reconstruct_marginal(PooledHistogram(np.array([1.0])), params)
        near = marg.m < 20.0
        assert float(marg.weights[near] @ marg.density[near]) == pytest.approx(1.0, abs=0.01)
        assert abs(marg.integrate(marg.grid)) < 0.05 * (0.5 / params.lam)

    def test_single_excitation_suppressed_near_origin(self, params):
        # 4e4 pulses; noisy data wants a stronger floor than the noiseless default
        settings = DeconvolutionSettings(regularization=1e-2)
        curves = {}
        for name, state in (("excited", SyntheticState.single_excitation(math.sqrt(500.0))), ("ref", REFERENCE)):
            recs = simulate_from_histogram(exact_pooled_histogram(state, params), DEFAULT_ANGLES, 10_000, seed=1)
            marg, _ = reconstruct_marginal(pool_angles(validate_records(recs)), params, settings)
            near = marg.m < 8.0
            curves[name] = (marg.axis_density()[near].mean(),
                            exact_marginal(state, marg.grid).axis_density()[near].mean())
        rec_exc, exact_exc = curves["excited"]
        rec_ref, _ = curves["ref"]
        assert rec_exc < 0.25 * rec_ref
        assert abs(rec_exc - exact_exc) < 0.1 * rec_ref

    def test_marginal_io(self, params, tmp_path):
        marg, _ = reconstruct_marginal(exact_pooled_histogram(REFERENCE, params), params)
        write_marginal(tmp_path / "m.csv", marg, {"lam": params.lam})
        back = read_marginal(tmp_path / "m.csv")
        np.testing.assert_array_equal(back.density, marg.density)
        with pytest.raises(FileExistsError):
            write_marginal(tmp_path / "m.csv", marg, {})
