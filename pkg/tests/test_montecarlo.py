"""Tests for the Monte Carlo deviation-curve machinery."""

from __future__ import annotations

import math

import numpy as np
import pytest

from ergodev.errors import ConfigurationError, DataError
from ergodev.models import DiffusionModel, Innovation, ModelBundle, TestFunction
from ergodev.montecarlo import (
    DeviationExperiment,
    TailEstimate,
    clopper_pearson,
    estimate_reference,
    figure_theta_grid,
    noise_intensity,
    run_deviation_curve,
)

A_GRID = np.linspace(0.0, 3.0, 13)


def _degenerate_bundle(sigma_scale: float) -> ModelBundle:
    """1d model with constant diffusion coefficient sigma_scale."""
    model = DiffusionModel(
        name="toy",
        dim=1,
        noise_dim=1,
        drift=lambda x: -x,
        sigma=lambda x: np.full(x.shape[:-1] + (1, 1), sigma_scale),
    )
    f = TestFunction(name="id", value=lambda x: x[..., 0], grad_sup=1.0)
    return ModelBundle(
        name="toy", model=model, innovation=Innovation("gaussian", 1),
        x0_mode="zero", f_obs=f,
    )


class TestThetaGrid:
    def test_values(self):
        grid = figure_theta_grid()
        assert len(grid) == 5
        np.testing.assert_allclose(
            grid, [1 / 3 + (2 / 3) * j / 5 for j in range(1, 6)], rtol=1e-15
        )
        assert grid[-1] == 1.0


class TestClopperPearson:
    def test_half_width_near_half(self):
        lo, hi = clopper_pearson(np.array([5000]), 10**4)
        np.testing.assert_allclose(lo[0], 0.490151, atol=2e-6)
        np.testing.assert_allclose(hi[0], 0.509849, atol=2e-6)
        assert max(hi[0] - 0.5, 0.5 - lo[0]) <= 0.016

    def test_edge_counts(self):
        lo, hi = clopper_pearson(np.array([0, 10**4]), 10**4)
        assert lo[0] == 0.0 and hi[1] == 1.0
        np.testing.assert_allclose(hi[0], 1.0 - 0.025 ** (1.0 / 10**4), rtol=1e-10)
        np.testing.assert_allclose(lo[1], 0.025 ** (1.0 / 10**4), rtol=1e-10)

    def test_duality(self):
        # lower bound at h equals one minus the upper bound at mc - h
        h = np.array([3, 17, 400])
        lo, hi = clopper_pearson(h, 1000)
        lo2, hi2 = clopper_pearson(1000 - h, 1000)
        np.testing.assert_allclose(lo, 1.0 - hi2, rtol=1e-12)

    def test_domain(self):
        with pytest.raises(ConfigurationError):
            clopper_pearson(np.array([1]), 10, level=1.0)
        with pytest.raises(ConfigurationError):
            clopper_pearson(np.array([11]), 10)


class TestTailEstimate:
    def test_log_scale_and_sentinel(self):
        te = TailEstimate(theta=0.5, a=np.array([0.0, 1.0, 2.0]),
                          hits=np.array([100, 10, 0]), mc=100)
        g = te.g_emp
        assert g[0] == 0.0
        np.testing.assert_allclose(g[1], math.log(0.1), rtol=1e-15)
        assert g[2] == -math.inf
        lo_log, hi_log = te.log_band()
        assert lo_log[2] == -math.inf and np.isfinite(hi_log[2])


class TestExperimentValidation:
    def test_bad_configs(self):
        ok = dict(model="ou1d", thetas=(0.5,), n=10, mc=4, a_grid=A_GRID)
        DeviationExperiment(**ok)
        with pytest.raises(ConfigurationError):
            DeviationExperiment(**{**ok, "a_grid": [1.0, 1.0, 2.0]})
        with pytest.raises(ConfigurationError):
            DeviationExperiment(**{**ok, "mc": 0})
        with pytest.raises(ConfigurationError):
            DeviationExperiment(**{**ok, "mode": "exact"})
        with pytest.raises(ConfigurationError):
            DeviationExperiment(**{**ok, "mode": "biased", "corrector": "none"})
        with pytest.raises(ConfigurationError):
            DeviationExperiment(**{**ok, "mode": "slutsky"})
        with pytest.raises(ConfigurationError):
            DeviationExperiment(**{**ok, "thetas": ()})

    def test_mode_prerequisites(self):
        # ou1d registers no plain observable, so slutsky cannot run on it
        exp = DeviationExperiment(model="ou1d", thetas=(0.5,), n=10, mc=4,
                                  a_grid=A_GRID, mode="slutsky", nu_ref=1.0)
        with pytest.raises(ConfigurationError, match="observable"):
            run_deviation_curve(exp)
        # a bundle without a smooth test function cannot run generator modes
        exp2 = DeviationExperiment(model=_degenerate_bundle(1.0), thetas=(0.5,),
                                   n=10, mc=4, a_grid=A_GRID, mode="unbiased")
        with pytest.raises(ConfigurationError, match="test function"):
            run_deviation_curve(exp2)


class TestUnbiasedCurve:
    def test_frozen_hits_and_zero_threshold(self):
        exp = DeviationExperiment(
            model="hypo1d-drifted", thetas=(1.0 / 3.0 + 2.0 / 15.0,), n=2000,
            mc=1024, a_grid=A_GRID, mode="unbiased", seed=7, block_size=128,
        )
        (te,) = run_deviation_curve(exp)
        assert te.hits.tolist() == [1024, 770, 531, 314, 190, 97, 50, 18, 12, 4, 3, 2, 0]
        assert te.g_emp[0] == 0.0
        assert np.all(np.diff(te.hits) <= 0)
        assert te.g_emp[-1] == -math.inf

    def test_worker_count_invariance(self):
        exp = DeviationExperiment(
            model="hypo1d-drifted", thetas=(0.6, 1.0), n=600, mc=384,
            a_grid=A_GRID, mode="unbiased", seed=21, block_size=64,
        )
        serial = run_deviation_curve(exp, workers=1)
        twow = run_deviation_curve(exp, workers=2)
        for s, t in zip(serial, twow):
            np.testing.assert_array_equal(s.hits, t.hits)

    def test_repeatable(self):
        exp = DeviationExperiment(model="ou1d", thetas=(0.5,), n=300, mc=64,
                                  a_grid=A_GRID, seed=5)
        a = run_deviation_curve(exp)[0]
        b = run_deviation_curve(exp)[0]
        np.testing.assert_array_equal(a.hits, b.hits)


class TestBiasedCurve:
    def test_frozen_hits_and_worker_invariance(self):
        exp = DeviationExperiment(
            model="hypo1d-cos", thetas=(1.0 / 3.0,), n=500, mc=256,
            a_grid=A_GRID, mode="biased", seed=11, block_size=64, bias_m=10,
        )
        (serial,) = run_deviation_curve(exp)
        assert serial.hits.tolist() == [256, 110, 38, 9, 1, 0, 0, 0, 0, 0, 0, 0, 0]
        (threew,) = run_deviation_curve(exp, workers=3)
        np.testing.assert_array_equal(serial.hits, threew.hits)

    def test_corrector_choice_matters(self):
        base = dict(model="hypo1d-cos", thetas=(1.0 / 3.0,), n=500, mc=256,
                    a_grid=A_GRID, mode="biased", seed=11, block_size=64)
        (partial,) = run_deviation_curve(DeviationExperiment(**base))
        (full,) = run_deviation_curve(
            DeviationExperiment(**base, corrector="full")
        )
        assert not np.array_equal(partial.hits, full.hits)


class TestSlutskyCurve:
    def test_runs_and_is_monotone(self):
        exp = DeviationExperiment(
            model="confluent2d", thetas=(0.401,), n=1000, mc=256, a_grid=A_GRID,
            mode="slutsky", seed=13, gamma0=0.1, nu_ref=0.198, block_size=64,
        )
        (te,) = run_deviation_curve(exp, workers=2)
        assert te.hits[0] == 256
        assert np.all(np.diff(te.hits) <= 0)
        (serial,) = run_deviation_curve(exp)
        np.testing.assert_array_equal(te.hits, serial.hits)

    def test_zero_noise_raises_data_error(self):
        exp = DeviationExperiment(
            model=_degenerate_bundle(0.0), thetas=(0.5,), n=50, mc=8,
            a_grid=A_GRID, mode="slutsky", nu_ref=0.0, seed=1,
        )
        with pytest.raises(DataError, match="not positive"):
            run_deviation_curve(exp)


class TestNoiseIntensity:
    def test_frobenius_square(self):
        bundle = _degenerate_bundle(2.0)
        ob = noise_intensity(bundle.model)
        np.testing.assert_allclose(ob(np.zeros((5, 1))), 4.0)


class TestReference:
    def test_ou_variance_small(self):
        ref = estimate_reference("ou1d", f=lambda x: x[..., 0] ** 2, n_c=20_000,
                                 theta_c=0.5, seed=101, replicates=40)
        assert abs(ref.value - 1.0) <= 0.02
        # unit diffusion coefficient: every replicate's nu(|sigma|^2) is 1
        assert ref.nu_sigma2 == 1.0 and ref.nu_sigma2_half_width == 0.0
        # |sigma* grad phi|^2 = 4 x^2 under phi = x^2
        assert abs(ref.nu_carre - 4.0) <= 0.2
        assert ref.samples["f"].shape == (40,)

    def test_ou_variance_full_scale(self):
        # invariant second moment of the unit-noise OU process is exactly 1
        ref = estimate_reference("ou1d", f=lambda x: x[..., 0] ** 2, n_c=10**5,
                                 theta_c=0.5, seed=101, replicates=100)
        assert abs(ref.value - 1.0) <= 0.02
        assert ref.half_width <= 0.02

    def test_constant_observable_is_exact(self):
        ref = estimate_reference("ou1d", f=lambda x: np.full(x.shape[:-1], 2.5),
                                 n_c=500, theta_c=0.5, seed=3, replicates=8)
        assert ref.value == 2.5
        assert ref.half_width == 0.0

    def test_single_replicate(self):
        ref = estimate_reference("ou1d", f=lambda x: x[..., 0], n_c=100,
                                 theta_c=0.5, seed=3, replicates=1)
        assert ref.half_width == 0.0
        assert ref.replicates == 1

    def test_worker_invariance(self):
        kw = dict(n_c=2000, theta_c=0.401, seed=5, replicates=16, gamma0=0.1,
                  block_size=4)
        serial = estimate_reference("confluent2d", **kw)
        parallel = estimate_reference("confluent2d", workers=3, **kw)
        np.testing.assert_array_equal(serial.samples["f"], parallel.samples["f"])
        np.testing.assert_array_equal(
            serial.samples["noise"], parallel.samples["noise"]
        )

    def test_needs_observable(self):
        with pytest.raises(ConfigurationError, match="observable"):
            estimate_reference("ou1d", n_c=100, theta_c=0.5, seed=1, replicates=2)
        with pytest.raises(ConfigurationError):
            estimate_reference("ou1d", f=lambda x: x[..., 0], n_c=100,
                               theta_c=0.5, seed=1, replicates=0)
