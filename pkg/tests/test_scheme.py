"""Euler recursion, occupation averages, determinism, diagnostics."""

from __future__ import annotations

import math

import numpy as np
import pytest

from ergodev.errors import ConfigurationError, SimulationError
from ergodev.models import DiffusionModel, generator_apply, get_model
from ergodev.scheme import (
    NuAccumulator,
    lyapunov_diagnostic,
    make_stream,
    new_state,
    run_batch,
    run_trajectory,
    step,
)
from ergodev.steps import StepSequence


def _constant_sigma_model(drift, dim=1):
    return DiffusionModel(
        name="custom",
        dim=dim,
        noise_dim=dim,
        drift=drift,
        sigma=lambda x: np.broadcast_to(np.eye(dim), x.shape[:-1] + (dim, dim)).copy(),
        sigma_sup=math.sqrt(dim),
    )


def _zero_noise_model(drift, dim=1):
    return DiffusionModel(
        name="deterministic",
        dim=dim,
        noise_dim=dim,
        drift=drift,
        sigma=lambda x: np.zeros(x.shape[:-1] + (dim, dim)),
        sigma_sup=0.0,
    )


class TestSingleStep:
    def test_deterministic_euler_map(self):
        # sigma = 0, b = -x/2, gamma_1 = 1, X0 = 2  ->  X1 = 2 - 1 = 1.
        model = _zero_noise_model(lambda x: -0.5 * x)
        bundle = get_model("ou1d")
        st = new_state(model, seed=0, x0=np.array([2.0]))
        st = step(st, model, StepSequence(theta=1.0), bundle.innovation)
        assert st.x[0] == 1.0
        assert st.step_index == 1

    def test_pure_noise_step_is_sign(self):
        # b = 0, sigma = 1, gamma_1 = 1, rademacher: X1 is a sign.
        model = _constant_sigma_model(lambda x: np.zeros_like(x))
        inn = get_model("hypo1d-cos").innovation
        seen = set()
        for idx in range(16):
            st = new_state(model, seed=99, traj_index=idx)
            st = step(st, model, StepSequence(theta=1.0), inn)
            seen.add(st.x[0])
        assert seen == {-1.0, 1.0}

    def test_single_step_occupation_charges_start_point(self):
        # After one step nu_1(f) = f(X0) regardless of where the step lands.
        bundle = get_model("hypo1d-cos")
        obs = {"f": lambda xs: bundle.phi.value(xs)}
        res = run_trajectory(
            bundle.model,
            StepSequence(theta=0.5),
            bundle.innovation,
            n=1,
            seed=4,
            observables=obs,
            x0=np.array([0.3]),
        )
        assert res.nu["f"] == pytest.approx(math.cos(0.3), rel=1e-15)


class TestDeterminism:
    def test_scalar_stepper_matches_batch_row_bitwise(self):
        bundle = get_model("hypo1d-cos")
        m, phi, inn = bundle.model, bundle.phi, bundle.innovation
        ss = StepSequence(theta=0.5)
        obs = {"A": lambda xs: generator_apply(m, phi, xs)}
        st = new_state(m, seed=123, traj_index=5, x0_mode="pm1", observables=obs)
        for _ in range(200):
            st = step(st, m, ss, inn, observables=obs)
        tr = run_trajectory(
            m, ss, inn, 200, 123, observables=obs, traj_index=5, x0_mode="pm1", chunk_steps=64
        )
        assert np.array_equal(st.x, tr.x_final)
        assert st.accumulator.nu("A") == tr.nu["A"]

    def test_chunk_size_is_a_pure_performance_knob(self):
        bundle = get_model("hypo1d-cos")
        ss = StepSequence(theta=0.5)
        obs = {"f": lambda xs: bundle.phi.value(xs)}
        runs = [
            run_trajectory(
                bundle.model,
                ss,
                bundle.innovation,
                999,
                77,
                observables=obs,
                traj_index=3,
                x0_mode="pm1",
                chunk_steps=c,
            )
            for c in (37, 256, 4096)
        ]
        for other in runs[1:]:
            assert np.array_equal(runs[0].x_final, other.x_final)
            assert runs[0].nu["f"] == other.nu["f"]

    def test_batch_composition_does_not_affect_a_trajectory(self):
        bundle = get_model("confluent2d")
        ss = StepSequence(theta=0.401, gamma0=0.1)
        obs = {"f": lambda xs: bundle.f_obs.value(xs)}
        solo = run_trajectory(
            bundle.model, ss, bundle.innovation, 500, 11, observables=obs, traj_index=7
        )
        batch = run_batch(
            bundle.model, ss, bundle.innovation, 500, 11, indices=[2, 7, 30], observables=obs
        )
        assert np.array_equal(batch.x_final[1], solo.x_final)
        assert batch.nu["f"][1] == solo.nu["f"]

    def test_same_seed_same_bits(self):
        bundle = get_model("hypo1d-drifted")
        ss = StepSequence(theta=7.0 / 15.0)
        obs = {"f": lambda xs: bundle.phi.value(xs)}
        a = run_trajectory(
            bundle.model, ss, bundle.innovation, 400, 9, observables=obs, x0_mode="pm1"
        )
        b = run_trajectory(
            bundle.model, ss, bundle.innovation, 400, 9, observables=obs, x0_mode="pm1"
        )
        assert np.array_equal(a.x_final, b.x_final)
        assert a.nu["f"] == b.nu["f"]

    def test_streams_are_trajectory_indexed(self):
        # Different indices give different paths; same index same path.
        u0 = make_stream(5, 0).standard_normal(4)
        u0_again = make_stream(5, 0).standard_normal(4)
        u1 = make_stream(5, 1).standard_normal(4)
        assert np.array_equal(u0, u0_again)
        assert not np.array_equal(u0, u1)


class TestOccupationMeasure:
    def test_constant_observable_averages_to_one(self):
        bundle = get_model("hypo1d-cos")
        res = run_trajectory(
            bundle.model,
            StepSequence(theta=0.5),
            bundle.innovation,
            700,
            3,
            observables={"one": lambda xs: np.ones(xs.shape[:-1])},
            x0_mode="pm1",
        )
        assert res.nu["one"] == pytest.approx(1.0, abs=1e-14)

    def test_scalar_accumulator_linearity(self):
        acc = NuAccumulator(("f", "g", "combo"))
        rng = np.random.default_rng(0)
        for _ in range(500):
            gamma = rng.uniform(0.01, 1.0)
            f, g = rng.normal(size=2)
            acc.update(gamma, {"f": f, "g": g, "combo": 2.0 * f - 3.0 * g})
        assert acc.nu("combo") == pytest.approx(2.0 * acc.nu("f") - 3.0 * acc.nu("g"), abs=1e-12)

    def test_gamma_total_matches_step_sums(self):
        ss = StepSequence(theta=0.5)
        bundle = get_model("ou1d")
        res = run_trajectory(bundle.model, ss, bundle.innovation, 999, 77)
        assert abs(res.gamma_total - ss.gamma_sum(999)) <= 1e-14 * ss.gamma_sum(999)

    def test_ou_second_moment_near_invariant_value(self):
        # nu_n(x^2) -> 1 for the OU model; moderate horizon, batch of 16.
        bundle = get_model("ou1d")
        res = run_batch(
            bundle.model,
            StepSequence(theta=0.5),
            bundle.innovation,
            10**5,
            2024,
            indices=range(16),
            observables={"x2": lambda xs: xs[..., 0] ** 2},
        )
        assert res.nu["x2"].mean() == pytest.approx(1.0, abs=0.05)

    def test_martingale_fluctuation_scaling(self):
        # sqrt(Gamma_n) nu_n(A phi) is O(1): its spread over trajectories
        # stays bounded as n grows (here: does not triple from n=2e3 to 2e4).
        bundle = get_model("hypo1d-cos")
        m, phi = bundle.model, bundle.phi
        obs = {"A": lambda xs: generator_apply(m, phi, xs)}
        ss = StepSequence(theta=0.5)
        spreads = []
        for n in (2000, 20000):
            res = run_batch(
                m, ss, bundle.innovation, n, 13, indices=range(64), observables=obs, x0_mode="pm1"
            )
            spreads.append(np.std(math.sqrt(res.gamma_total) * res.nu["A"]))
        assert spreads[1] < 3.0 * spreads[0]


class TestFailureModes:
    def test_non_finite_trajectory_raises_with_step_index(self):
        blow = DiffusionModel(
            name="blow",
            dim=1,
            noise_dim=1,
            drift=lambda x: x**3,
            sigma=lambda x: np.ones(x.shape[:-1] + (1, 1)),
            sigma_sup=1.0,
        )
        bundle = get_model("ou1d")
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(SimulationError) as err:
                run_trajectory(
                    blow, StepSequence(theta=0.01, gamma0=5.0), bundle.innovation, 500, 11
                )
        assert err.value.step is not None and 1 <= err.value.step <= 500

    def test_bad_n_rejected(self):
        bundle = get_model("ou1d")
        with pytest.raises(ConfigurationError):
            run_trajectory(bundle.model, StepSequence(theta=0.5), bundle.innovation, 0, 1)

    def test_unknown_x0_mode_rejected(self):
        bundle = get_model("ou1d")
        with pytest.raises(ConfigurationError):
            run_trajectory(
                bundle.model, StepSequence(theta=0.5), bundle.innovation, 10, 1, x0_mode="weird"
            )


class TestLyapunovDiagnostic:
    def test_contractive_model_not_flagged(self):
        bundle = get_model("hypo1d-cos")
        rep = lyapunov_diagnostic(
            bundle.model,
            StepSequence(theta=0.5),
            bundle.innovation,
            2000,
            5,
            n_traj=128,
            x0_mode="pm1",
        )
        assert not rep.flagged

    def test_explosive_drift_flagged(self):
        expl = _constant_sigma_model(lambda x: 0.75 * x)
        bundle = get_model("ou1d")
        with np.errstate(over="ignore", invalid="ignore"):
            rep = lyapunov_diagnostic(
                expl, StepSequence(theta=0.5), bundle.innovation, 2000, 5, n_traj=128
            )
        assert rep.flagged
