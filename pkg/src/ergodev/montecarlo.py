"""Parallel Monte Carlo estimation of deviation tails.

An experiment draws MC independent trajectories of the decreasing-step
scheme, reduces each one to a single deviation statistic, and estimates
log P[|statistic| >= a] over a grid of thresholds with exact binomial
(Clopper-Pearson) confidence bands.  Three statistics are supported:

* unbiased:  sqrt(Gamma_n) nu_n(A phi), the generator average;
* biased:    the same plus the quantised second-order corrector (drift
  curvature + hessian increment terms accumulated along the trajectory;
  optionally also the third-derivative term);
* slutsky:   sqrt(Gamma_n) (nu_n(f) - ref) / sqrt(nu_n(|sigma|^2)),
  self-normalised by the trajectory's own noise average.

Trajectories are processed in fixed-size index blocks; each block reduces
to per-threshold hit counts, and blocks merge in index order.  Per-run
statistics depend only on (seed, trajectory index), never on block or
worker layout, so a k-worker run reproduces the 1-worker tables bit for
bit.  Worker processes rebuild registry models from (name, params);
experiments built around ad-hoc bundles run serially.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import beta as _beta_dist

from .bias import BiasAccumulator
from .errors import ConfigurationError, DataError
from .models import ModelBundle, carre_du_champ, generator_apply, get_model
from .scheme import run_batch
from .steps import StepSequence

Array = np.ndarray

_MODES = ("unbiased", "biased", "slutsky")
_CORRECTORS = ("second_order", "full")


def figure_theta_grid() -> tuple[float, ...]:
    """The five-step grid theta_j = 1/3 + (2/3) j/5, j = 1..5."""
    return tuple(1.0 / 3.0 + (2.0 / 3.0) * j / 5.0 for j in range(1, 6))


def noise_intensity(model) -> Callable[[Array], Array]:
    """Observable x -> |sigma(x)|^2 (squared Frobenius norm)."""

    def ob(x: Array) -> Array:
        sig = model.sigma(np.asarray(x, dtype=np.float64))
        return np.einsum("...ir,...ir->...", sig, sig)

    return ob


def clopper_pearson(hits: Array, mc: int, level: float = 0.95) -> tuple[Array, Array]:
    """Exact binomial band on the probability scale."""
    if not 0.0 < level < 1.0:
        raise ConfigurationError(f"level must be in (0,1), got {level}")
    h = np.asarray(hits, dtype=np.int64)
    if np.any(h < 0) or np.any(h > mc):
        raise ConfigurationError("hit counts must lie in [0, mc]")
    tail = (1.0 - level) / 2.0
    lo = _beta_dist.ppf(tail, np.maximum(h, 1), mc - h + 1)
    hi = _beta_dist.ppf(1.0 - tail, h + 1, np.maximum(mc - h, 1))
    lo = np.where(h == 0, 0.0, lo)
    hi = np.where(h == mc, 1.0, hi)
    return lo, hi


@dataclass
class TailEstimate:
    """Hit counts over the threshold grid for one step exponent."""

    theta: float
    a: Array
    hits: Array
    mc: int

    @property
    def probabilities(self) -> Array:
        return self.hits / float(self.mc)

    @property
    def g_emp(self) -> Array:
        """log of the empirical tail; -inf where no trajectory reached a."""
        with np.errstate(divide="ignore"):
            return np.log(self.probabilities)

    def band(self, level: float = 0.95) -> tuple[Array, Array]:
        return clopper_pearson(self.hits, self.mc, level)

    def log_band(self, level: float = 0.95) -> tuple[Array, Array]:
        lo, hi = self.band(level)
        with np.errstate(divide="ignore"):
            return np.log(lo), np.log(hi)


@dataclass
class DeviationExperiment:
    """One deviation-curve configuration (all step exponents share it)."""

    model: str | ModelBundle
    thetas: tuple[float, ...]
    n: int
    mc: int
    a_grid: Array
    mode: str = "unbiased"
    seed: int = 0
    gamma0: float = 1.0
    model_params: dict = field(default_factory=dict)
    nu_ref: float | None = None
    nu_ref_provenance: str = ""
    corrector: str = "second_order"
    bias_beta: float = 1.0
    bias_m: int = 10
    x0_mode: str | None = None  # None: use the model bundle's start mode
    block_size: int = 256
    chunk_steps: int = 2048

    def __post_init__(self) -> None:
        self.thetas = tuple(float(t) for t in self.thetas)
        if not self.thetas:
            raise ConfigurationError("need at least one step exponent")
        self.a_grid = np.asarray(self.a_grid, dtype=np.float64)
        if self.a_grid.ndim != 1 or self.a_grid.size == 0:
            raise ConfigurationError("a_grid must be a nonempty 1-d grid")
        if np.any(np.diff(self.a_grid) <= 0.0):
            raise ConfigurationError("a_grid must be strictly increasing")
        if self.mc < 1:
            raise ConfigurationError(f"mc must be >= 1, got {self.mc}")
        if self.n < 1:
            raise ConfigurationError(f"n must be >= 1, got {self.n}")
        if self.mode not in _MODES:
            raise ConfigurationError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.corrector not in _CORRECTORS:
            raise ConfigurationError(
                f"corrector must be one of {_CORRECTORS}, got {self.corrector!r}"
            )
        if self.mode == "slutsky" and self.nu_ref is None:
            raise ConfigurationError("slutsky mode needs a reference value nu_ref")
        if self.block_size < 1:
            raise ConfigurationError("block_size must be >= 1")


def _resolve(model: str | ModelBundle, params: dict) -> ModelBundle:
    if isinstance(model, ModelBundle):
        return model
    return get_model(model, **params)


def _check_prerequisites(bundle: ModelBundle, mode: str) -> None:
    if mode in ("unbiased", "biased"):
        if bundle.phi is None:
            raise ConfigurationError(
                f"model {bundle.name!r} has no smooth test function for {mode} mode"
            )
        if mode == "biased" and bundle.phi.third is None:
            raise ConfigurationError(
                "biased mode needs the third derivative of the test function"
            )
    else:
        if bundle.f_obs is None:
            raise ConfigurationError(
                f"model {bundle.name!r} has no scalar observable for slutsky mode"
            )


def _block_statistics(bundle: ModelBundle, payload: dict, indices: list[int]) -> Array:
    model, innov = bundle.model, bundle.innovation
    steps = StepSequence(theta=payload["theta"], gamma0=payload["gamma0"])
    mode = payload["mode"]
    if mode in ("unbiased", "biased"):
        phi = bundle.phi
        obs = {"gen": lambda xs: generator_apply(model, phi, xs)}
        hook = None
        if mode == "biased":
            hook = BiasAccumulator(
                model, phi, innov, beta=payload["bias_beta"], M=payload["bias_m"]
            )
        res = run_batch(
            model,
            steps,
            innov,
            payload["n"],
            payload["seed"],
            indices,
            observables=obs,
            x0_mode=payload["x0_mode"],
            step_hook=hook,
            chunk_steps=payload["chunk_steps"],
        )
        stat = math.sqrt(res.gamma_total) * res.nu["gen"]
        if hook is not None:
            terms = hook.finalize(res.gamma_total)
            if payload["corrector"] == "second_order":
                stat = stat + terms.second_order
            else:
                stat = stat + terms.full
        return stat
    # slutsky
    obs = {"f": bundle.f_obs.value, "noise": noise_intensity(model)}
    res = run_batch(
        model,
        steps,
        innov,
        payload["n"],
        payload["seed"],
        indices,
        observables=obs,
        x0_mode=payload["x0_mode"],
        chunk_steps=payload["chunk_steps"],
    )
    denom = res.nu["noise"]
    if np.any(denom <= 0.0):
        bad = int(np.asarray(indices)[np.argmax(denom <= 0.0)])
        raise DataError(
            f"trajectory {bad}: occupation average of |sigma|^2 is not positive; "
            "the self-normalised statistic is undefined"
        )
    return math.sqrt(res.gamma_total) * (res.nu["f"] - payload["nu_ref"]) / np.sqrt(denom)


def _curve_block_worker(payload: dict) -> tuple[int, int, Array]:
    bundle = _resolve(payload["model"], payload["model_params"])
    indices = list(range(payload["block_start"], payload["block_stop"]))
    stat = _block_statistics(bundle, payload, indices)
    a = np.asarray(payload["a_grid"])
    hits = (np.abs(stat)[:, None] >= a[None, :]).sum(axis=0).astype(np.int64)
    return payload["theta_index"], payload["block_start"], hits


def run_deviation_curve(
    exp: DeviationExperiment, workers: int = 1
) -> list[TailEstimate]:
    """One TailEstimate per step exponent, deterministic in exp.seed.

    Trajectory i of every exponent uses the stream keyed by (seed, i);
    block and worker layout never enter the arithmetic.
    """
    if workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {workers}")
    bundle = _resolve(exp.model, exp.model_params)
    _check_prerequisites(bundle, exp.mode)
    x0_mode = exp.x0_mode if exp.x0_mode is not None else bundle.x0_mode

    payloads = []
    for ti, theta in enumerate(exp.thetas):
        for start in range(0, exp.mc, exp.block_size):
            payloads.append(
                {
                    "model": exp.model if isinstance(exp.model, str) else bundle,
                    "model_params": exp.model_params,
                    "theta": theta,
                    "theta_index": ti,
                    "gamma0": exp.gamma0,
                    "n": exp.n,
                    "seed": exp.seed,
                    "mode": exp.mode,
                    "corrector": exp.corrector,
                    "bias_beta": exp.bias_beta,
                    "bias_m": exp.bias_m,
                    "nu_ref": exp.nu_ref,
                    "x0_mode": x0_mode,
                    "chunk_steps": exp.chunk_steps,
                    "a_grid": exp.a_grid,
                    "block_start": start,
                    "block_stop": min(start + exp.block_size, exp.mc),
                }
            )

    hit_tables = [np.zeros(exp.a_grid.size, dtype=np.int64) for _ in exp.thetas]
    if workers > 1 and isinstance(exp.model, str):
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_curve_block_worker, payloads))
    else:
        results = [_curve_block_worker(p) for p in payloads]
    for ti, _start, hits in results:
        hit_tables[ti] += hits

    return [
        TailEstimate(theta=theta, a=exp.a_grid.copy(), hits=hit_tables[ti], mc=exp.mc)
        for ti, theta in enumerate(exp.thetas)
    ]


# ---------------------------------------------------------------------------
# Reference (calibration) estimates
# ---------------------------------------------------------------------------


@dataclass
class ReferenceEstimate:
    """Replicate-averaged ergodic estimates with normal-theory 95% bands."""

    value: float
    half_width: float
    nu_sigma2: float
    nu_sigma2_half_width: float
    nu_carre: float
    nu_carre_half_width: float
    n_c: int
    theta_c: float
    seed: int
    replicates: int
    samples: dict[str, Array] = field(default_factory=dict)


def _ref_block_worker(payload: dict) -> tuple[int, dict[str, Array]]:
    bundle = _resolve(payload["model"], payload["model_params"])
    model = bundle.model
    f = payload["f"] if payload["f"] is not None else bundle.f_obs.value
    obs = {"f": f, "noise": noise_intensity(model)}
    phi = bundle.phi
    if phi is not None and phi.gradient is not None:
        obs["carre"] = lambda xs: carre_du_champ(model, phi, xs)
    steps = StepSequence(theta=payload["theta_c"], gamma0=payload["gamma0"])
    res = run_batch(
        model,
        steps,
        bundle.innovation,
        payload["n_c"],
        payload["seed"],
        list(range(payload["block_start"], payload["block_stop"])),
        observables=obs,
        x0_mode=payload["x0_mode"],
        chunk_steps=payload["chunk_steps"],
    )
    return payload["block_start"], res.nu


def _mean_band(vals: Array) -> tuple[float, float]:
    m = float(vals.mean())
    if vals.size < 2:
        return m, 0.0
    return m, 1.96 * float(vals.std(ddof=1)) / math.sqrt(vals.size)


def estimate_reference(
    model: str | ModelBundle,
    f: Callable[[Array], Array] | None = None,
    n_c: int = 10**4,
    theta_c: float = 1.0 / 3.0 + 1e-3,
    seed: int = 0,
    replicates: int = 100,
    gamma0: float = 1.0,
    x0_mode: str | None = None,
    model_params: dict | None = None,
    workers: int = 1,
    block_size: int = 32,
    chunk_steps: int = 2048,
) -> ReferenceEstimate:
    """Replicate-averaged estimates of nu(f), nu(|sigma|^2) and, when the
    model ships a smooth test function, nu(|sigma* grad phi|^2).

    f defaults to the model's registered scalar observable.  Results are
    deterministic in (seed, replicate index) and independent of worker
    count; a custom f or an ad-hoc bundle forces the serial path.
    """
    if replicates < 1:
        raise ConfigurationError(f"replicates must be >= 1, got {replicates}")
    model_params = model_params or {}
    bundle = _resolve(model, model_params)
    if f is None and bundle.f_obs is None:
        raise ConfigurationError(
            f"model {bundle.name!r} has no registered observable; pass f explicitly"
        )
    if x0_mode is None:
        x0_mode = bundle.x0_mode

    payloads = []
    for start in range(0, replicates, block_size):
        payloads.append(
            {
                "model": model if isinstance(model, str) else bundle,
                "model_params": model_params,
                "f": f,
                "theta_c": theta_c,
                "gamma0": gamma0,
                "n_c": n_c,
                "seed": seed,
                "x0_mode": x0_mode,
                "chunk_steps": chunk_steps,
                "block_start": start,
                "block_stop": min(start + block_size, replicates),
            }
        )

    parallel_ok = workers > 1 and isinstance(model, str) and f is None
    if parallel_ok:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ref_block_worker, payloads))
    else:
        results = [_ref_block_worker(p) for p in payloads]

    samples: dict[str, list[Array]] = {}
    for _start, nu in results:
        for name, arr in nu.items():
            samples.setdefault(name, []).append(arr)
    merged = {name: np.concatenate(chunks) for name, chunks in samples.items()}

    value, hw = _mean_band(merged["f"])
    s2, s2_hw = _mean_band(merged["noise"])
    if "carre" in merged:
        carre, carre_hw = _mean_band(merged["carre"])
    else:
        carre, carre_hw = math.nan, math.nan
    return ReferenceEstimate(
        value=value,
        half_width=hw,
        nu_sigma2=s2,
        nu_sigma2_half_width=s2_hw,
        nu_carre=carre,
        nu_carre_half_width=carre_hw,
        n_c=n_c,
        theta_c=theta_c,
        seed=seed,
        replicates=replicates,
        samples=merged,
    )
