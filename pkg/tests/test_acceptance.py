"""End-to-end acceptance checks.

Dominance and oracle properties at desk scale, plus two checks that pin
externally recorded target values for the confluent model (a contraction
rate near 3.085 and a reference ergodic value near 0.71308).  This
implementation reproduces neither target — the faithful grid search
returns about 3.713 and replicated ergodic averages concentrate near
0.198 — so TestContractionRate and TestReferenceValue fail by design
rather than being loosened; see README.  Everything else passes against
frozen oracles.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from ergodev.asclt import simulate_asclt, wallis_rho
from ergodev.bias import BiasAccumulator, bias_radius
from ergodev.bounds import (
    BoundParams,
    cardan_lambda_min,
    comparison_curves,
    deviation_polynomial,
    p_lambda_min,
)
from ergodev.cli import main
from ergodev.models import Innovation, get_model, registry_names
from ergodev.montecarlo import DeviationExperiment, figure_theta_grid, run_deviation_curve
from ergodev.poisson import confluence_alpha
from ergodev.scheme import run_batch, run_trajectory
from ergodev.steps import StepSequence

LOG2 = math.log(2.0)


class TestContractionRate:
    def test_confluent_rate_in_target_window(self):
        # Target window [3.075, 3.095]; the grid search itself lands near
        # 3.713 (see README), so the window assertion fails while the
        # runtime assertion holds.
        model = get_model("confluent2d").model
        start = time.monotonic()
        est = confluence_alpha(model)
        elapsed = time.monotonic() - start
        assert elapsed < 30.0
        assert 3.075 <= est.alpha <= 3.095


class TestReferenceValue:
    def test_confluent_reference_in_target_window(self, confluent_reference):
        # Target 0.71308 +/- 0.005; replicated averages concentrate near
        # 0.198 at every n_c we tried, so the value assertion fails while
        # the runtime assertion holds.
        ref, elapsed = confluent_reference
        assert elapsed < 600.0
        assert ref.n_c == 500_000 and ref.replicates == 100
        assert abs(ref.value - 0.71308) <= 0.005


class TestFigureDominance:
    """Desk-scale reproduction of the hypoelliptic deviation figure: the
    empirical log-tail stays below every closed-form curve plus log 2."""

    def test_empirical_tail_below_curves(self, hypo_calibration, workers):
        np.testing.assert_allclose(hypo_calibration.nu_sigma2, 0.5775339523617291, rtol=1e-10)
        np.testing.assert_allclose(hypo_calibration.nu_carre, 0.5774769746471224, rtol=1e-10)

        bundle = get_model("hypo1d-drifted")
        a_grid = np.linspace(0.0, 3.0, 61)
        exp = DeviationExperiment(
            model="hypo1d-drifted",
            thetas=figure_theta_grid(),
            n=10_000,
            mc=1000,
            a_grid=a_grid,
            mode="unbiased",
            seed=2026,
        )
        estimates = run_deviation_curve(exp, workers=workers)
        model, phi = bundle.model, bundle.phi
        for theta, est in zip(exp.thetas, estimates):
            params = BoundParams(
                sigma_sup=model.sigma_sup,
                grad_sup=phi.grad_sup,
                phi_lip=phi.lipschitz,
                theta_lip=model.sigma_lip,
                nu_sigma2=hypo_calibration.nu_sigma2,
                nu_carre=hypo_calibration.nu_carre,
                gamma_total=StepSequence(theta=theta).gamma_sum(exp.n),
            )
            curves = comparison_curves(a_grid, params)
            seen = est.hits >= 10
            assert seen.any()
            assert np.all(est.g_emp[seen] <= curves["S_n"][seen] + LOG2)
            small = a_grid <= 1.0
            assert np.all(est.g_emp[small] <= curves["P_lambda_min"][small] + LOG2)


class TestSelfNormalisedDominance:
    """Desk-scale confluent figure: the self-normalised (Slutsky) log-tail
    stays below the contraction-rate curve -a^2 alpha^2 / 2 + log 2."""

    def test_slutsky_tail_below_alpha_curve(self, confluent_reference, workers):
        ref, _ = confluent_reference
        a_grid = np.linspace(0.0, 3.0, 61)
        exp = DeviationExperiment(
            model="confluent2d",
            thetas=(0.401,),
            n=10_000,
            mc=500,
            a_grid=a_grid,
            mode="slutsky",
            seed=41,
            gamma0=0.1,
            nu_ref=ref.value,
            nu_ref_provenance="session calibration",
        )
        est = run_deviation_curve(exp, workers=workers)[0]
        curve = -(a_grid**2) * 3.085**2 / 2.0 + LOG2
        seen = est.hits >= 10
        assert seen[0]
        assert np.all(est.g_emp[seen] <= curve[seen])


class TestCardanOracle:
    def test_closed_form_matches_bisection_and_is_fast(self):
        rng = np.random.default_rng(20260825)
        n_draws = 10_000
        a = rng.uniform(0.0, 5.0, n_draws)
        g = 10.0 ** rng.uniform(-2.0, 6.0, n_draws)
        ac = 10.0 ** rng.uniform(-3.0, 3.0, n_draws)
        bc = 10.0 ** rng.uniform(-3.0, 3.0, n_draws)

        start = time.perf_counter()
        roots = np.array(
            [cardan_lambda_min(a[i], g[i], ac[i], bc[i]) for i in range(n_draws)]
        )
        closed_form_seconds = time.perf_counter() - start
        assert closed_form_seconds < 1.0

        worst_residual = 0.0
        for i in range(n_draws):
            p = ac[i] * g[i] * g[i] / (2.0 * bc[i])
            q = -a[i] * g[i] ** 2.5 / (4.0 * bc[i])
            worst_residual = max(
                worst_residual, abs(roots[i] ** 3 + p * roots[i] + q) / max(abs(q), 1.0)
            )
            if a[i] == 0.0:
                assert roots[i] == 0.0
                continue
            hi = 10.0 * max(1.0, (-q) ** (1.0 / 3.0))
            while hi**3 + p * hi + q < 0.0:
                hi *= 2.0
            ref = brentq(lambda x: x**3 + p * x + q, 0.0, hi, xtol=1e-300, rtol=8.9e-16)
            assert abs(roots[i] - ref) <= 1e-9 * ref
        assert worst_residual < 1e-10


class TestExponentConsistency:
    def test_closed_form_exponent_equals_polynomial_at_root(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            a = 10.0 ** rng.uniform(-3.0, 1.0)
            g = 10.0 ** rng.uniform(0.0, 6.0)
            at = 10.0 ** rng.uniform(-2.0, 2.0)
            bt = 10.0 ** rng.uniform(-2.0, 2.0)
            rho = 1.0 + 10.0 ** rng.uniform(-3.0, 2.0)
            closed = p_lambda_min(a, g, at, bt, rho)
            a_coef = rho * at
            b_coef = rho**3 * bt / (rho - 1.0)
            lam = cardan_lambda_min(a, g, a_coef, b_coef)
            direct = deviation_polynomial(lam, a, g, a_coef, b_coef)
            assert abs(closed - direct) <= 1e-8 * abs(direct)


class TestPerturbedRecursion:
    @pytest.mark.parametrize("kind", ["gaussian", "rademacher"])
    def test_recursion_tracks_normalised_sums(self, kind):
        res = simulate_asclt(Innovation(kind, 1), 100_000, seed=20260825, indices=(0, 1, 2, 3))
        assert float(np.max(res.max_recursion_residual)) <= 1e-12


class TestWallisGrowth:
    def test_product_grows_like_sqrt_pi_n(self):
        n = 10**6
        ratio = wallis_rho(n) / math.sqrt(math.pi * n)
        assert 0.999 <= ratio <= 1.001


class TestBiasDominance:
    def test_third_derivative_term_inside_radius(self):
        bundle = get_model("hypo1d-cos")
        steps = StepSequence(theta=1.0 / 3.0)
        n = 1000
        hook = BiasAccumulator(bundle.model, bundle.phi, bundle.innovation, beta=1.0, M=10)
        run_batch(
            bundle.model,
            steps,
            bundle.innovation,
            n,
            seed=7,
            indices=range(100),
            x0_mode=bundle.x0_mode,
            step_hook=hook,
        )
        terms = hook.finalize(steps.gamma_sum(n))
        radius = bias_radius(bundle.phi, bundle.model, bundle.innovation, steps, n, beta=1.0)
        worst = float(np.max(np.abs(terms.third_term)))
        np.testing.assert_allclose(worst, 0.041725372758704526, rtol=1e-10)
        np.testing.assert_allclose(radius, 0.09404213924667512, rtol=1e-10)
        assert np.all(np.abs(terms.third_term) <= radius)


class TestInvariantLaw:
    def test_ou_second_moment_near_one(self):
        bundle = get_model("ou1d")
        res = run_trajectory(
            bundle.model,
            StepSequence(theta=0.5),
            bundle.innovation,
            1_000_000,
            seed=20260825,
            observables={"x2": lambda x: x[..., 0] ** 2},
            traj_index=10,
            x0_mode=bundle.x0_mode,
        )
        value = res.nu["x2"]
        np.testing.assert_allclose(value, 0.9969016097733124, rtol=1e-10)
        assert abs(value - 1.0) <= 0.02


class TestDerivativeConsistency:
    """Declared derivatives agree with central differences (step 1e-5,
    absolute tolerance 1e-6) on every registry model."""

    @staticmethod
    def _fd_worst(fn, partial, x, h=1e-5):
        worst = 0.0
        for axis in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[axis] = h
            numeric = (fn(x + e) - fn(x - e)) / (2.0 * h)
            worst = max(worst, float(np.max(np.abs(numeric - partial(x, axis)))))
        return worst

    @pytest.mark.parametrize("name", registry_names())
    def test_registry_model_derivatives(self, name):
        bundle = get_model(name)
        m = bundle.model
        rng = np.random.default_rng(11)
        x = rng.uniform(-5.0, 5.0, size=(100, m.dim))

        for i in range(m.dim):
            err = self._fd_worst(
                lambda y, i=i: m.drift(y)[..., i],
                lambda y, axis, i=i: m.drift_jacobian(y)[..., i, axis],
                x,
            )
            assert err < 1e-6
        for i in range(m.dim):
            for j in range(m.noise_dim):
                err = self._fd_worst(
                    lambda y, i=i, j=j: m.sigma(y)[..., i, j],
                    lambda y, axis, i=i, j=j: m.sigma_jacobian(y)[..., i, j, axis],
                    x,
                )
                assert err < 1e-6
        if m.Sigma is not None:
            s = m.sigma(x)
            np.testing.assert_allclose(
                np.einsum("...ir,...jr->...ij", s, s), m.Sigma(x), atol=1e-12
            )

        phi = bundle.phi or bundle.f_obs
        if phi is None or phi.gradient is None:
            return
        err = self._fd_worst(phi.value, lambda y, axis: phi.gradient(y)[..., axis], x)
        assert err < 1e-6
        if phi.hessian is not None:
            for i in range(m.dim):
                err = self._fd_worst(
                    lambda y, i=i: phi.gradient(y)[..., i],
                    lambda y, axis, i=i: phi.hessian(y)[..., i, axis],
                    x,
                )
                assert err < 1e-6


class TestDeterminism:
    def test_figure_bytes_identical_across_runs_and_threads(self, tmp_path):
        base = [
            "figure",
            "fig1",
            "--n", "500",
            "--mc", "128",
            "--a-count", "13",
            "--calib-n", "500",
            "--seed", "17",
        ]
        blobs = []
        for tag, threads in (("a", "1"), ("b", "1"), ("c", "8"), ("d", "8")):
            out = tmp_path / f"fig1_{tag}.csv"
            code = main([*base, "--threads", threads, "--out", str(out)])
            assert code == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1] == blobs[2] == blobs[3]
