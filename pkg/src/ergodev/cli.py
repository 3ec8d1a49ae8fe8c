"""Command-line surface: simulate, figure, bounds, interval, confluence, asclt.

Every option resolves from three layers: an explicit flag wins, then a
``key = value`` line in the --config file, then the command's default.
The resolved values are echoed into the CSV metadata block, so any
artifact can be reproduced from its own header.  Worker counts come from
--threads, the config, then the ERGODEV_THREADS environment variable;
they are deliberately kept out of the metadata because results do not
depend on them.

Exit codes: 0 success, 2 configuration error (unknown model, bad flag or
config value), 3 runtime error (diverging trajectory, degenerate data).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from ._csv import format_cell, write_csv
from .asclt import envelope_log_bound, gaussian_mean, simulate_asclt
from .bias import bias_radius
from .bounds import (
    BoundParams,
    StrictSequences,
    coboundary_log_bound,
    comparison_curves,
    confidence_interval,
    coverage_level,
    gaussian_log_bound,
)
from .errors import ConfigurationError, DataError, SimulationError
from .models import Innovation, carre_du_champ, generator_apply, get_model
from .montecarlo import (
    DeviationExperiment,
    clopper_pearson,
    estimate_reference,
    figure_theta_grid,
    noise_intensity,
    run_deviation_curve,
)
from .poisson import confluence_alpha
from .scheme import run_trajectory
from .steps import StepSequence

# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Flat ``key = value`` run configuration.

    Values are kept as raw strings so from_text/to_text round-trip
    losslessly; casting happens when an option is resolved.  Blank lines
    and '#' comments are ignored; duplicate keys are rejected rather
    than silently overwritten.
    """

    values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigurationError(
                    f"config line {lineno}: expected 'key = value', got {line!r}"
                )
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if not key:
                raise ConfigurationError(f"config line {lineno}: empty key")
            if key in values:
                raise ConfigurationError(f"config line {lineno}: duplicate key {key!r}")
            values[key] = raw.strip()
        return cls(values)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from None
        return cls.from_text(text)

    def to_text(self) -> str:
        return "".join(f"{key} = {self.values[key]}\n" for key in sorted(self.values))


# -- casting helpers ---------------------------------------------------------


def _cast_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {raw!r}")


def _cast_floats(raw: str) -> tuple[float, ...]:
    tokens = raw.replace(",", " ").split()
    if not tokens:
        raise ConfigurationError("expected at least one number")
    return tuple(float(tok) for tok in tokens)


def _coerce_value(raw: str) -> object:
    for kind in (int, float):
        try:
            return kind(raw)
        except ValueError:
            pass
    return raw


def _parse_model_args(raw: str) -> dict[str, object]:
    """'eps=0.02,sigma_variant=caption' -> {'eps': 0.02, 'sigma_variant': 'caption'}."""
    out: dict[str, object] = {}
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        if "=" not in token:
            raise ConfigurationError(f"model argument {token!r} is not of the form key=value")
        key, _, val = token.partition("=")
        out[key.strip()] = _coerce_value(val.strip())
    return out


OptionSpec = "dict[str, tuple[Callable[[str], object], object]]"


def _resolve_options(
    args: argparse.Namespace,
    command: str,
    spec: dict[str, tuple[Callable[[str], object], object]],
    reserved: dict[str, str] | None = None,
) -> dict[str, object]:
    """Merge flags > config file > defaults for one command."""
    path = getattr(args, "config", None)
    cfg = RunConfig.from_file(path) if path else RunConfig()
    expected = {"command": command}
    expected.update(reserved or {})
    for key, want in expected.items():
        declared = cfg.values.get(key)
        if declared is not None and declared != want:
            raise ConfigurationError(
                f"config file sets {key} = {declared}, but this run is {key} = {want}"
            )
    unknown = sorted(set(cfg.values) - set(spec) - set(expected))
    if unknown:
        raise ConfigurationError("unknown config keys: " + ", ".join(unknown))
    out: dict[str, object] = {}
    for key, (cast, default) in spec.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in cfg.values:
            try:
                out[key] = cast(cfg.values[key])
            except ValueError as exc:
                raise ConfigurationError(f"config key {key}: {exc}") from None
        else:
            out[key] = default
    return out


def _thread_count(value: object) -> int:
    if value is None:
        env = os.environ.get("ERGODEV_THREADS", "").strip()
        if env:
            try:
                value = int(env)
            except ValueError:
                raise ConfigurationError(
                    f"ERGODEV_THREADS must be an integer, got {env!r}"
                ) from None
    if value is None:
        return 1
    count = int(value)
    if count < 1:
        raise ConfigurationError(f"thread count must be >= 1, got {count}")
    return count


def _require_model(options: dict[str, object]) -> str:
    name = options.get("model")
    if name is None:
        raise ConfigurationError("a model name is required (--model or 'model =' in the config)")
    return str(name)


def _base_metadata(command: str, options: dict[str, object], skip: tuple[str, ...]) -> dict:
    meta: dict[str, object] = {"version": __version__, "command": command}
    hidden = set(skip) | {"out", "threads", "model_args", "config"}
    for key, val in options.items():
        if key in hidden or val is None:
            continue
        meta[key] = val
    return meta


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

_SIMULATE_SPEC: dict[str, tuple[Callable[[str], object], object]] = {
    "model": (str, None),
    "model_args": (_parse_model_args, {}),
    "theta": (float, 0.5),
    "n": (int, 1000),
    "seed": (int, 0),
    "gamma0": (float, 1.0),
    "traj_index": (int, 0),
    "x0_mode": (str, None),
    "chunk_steps": (int, 2048),
    "out": (str, None),
}


def cmd_simulate(args: argparse.Namespace) -> int:
    o = _resolve_options(args, "simulate", _SIMULATE_SPEC)
    name = _require_model(o)
    bundle = get_model(name, **o["model_args"])
    model, phi = bundle.model, bundle.phi

    observables: dict[str, Callable] = {"noise": noise_intensity(model)}
    if bundle.f_obs is not None:
        observables["f"] = bundle.f_obs.value
    if phi is not None:
        observables["phi"] = phi.value
        if phi.gradient is not None:
            observables["carre_phi"] = lambda xs: carre_du_champ(model, phi, xs)
        if phi.gradient is not None and phi.hessian is not None:
            observables["gen_phi"] = lambda xs: generator_apply(model, phi, xs)

    steps = StepSequence(theta=o["theta"], gamma0=o["gamma0"])
    result = run_trajectory(
        model,
        steps,
        bundle.innovation,
        o["n"],
        o["seed"],
        observables=observables,
        traj_index=o["traj_index"],
        x0_mode=o["x0_mode"] or bundle.x0_mode,
        chunk_steps=o["chunk_steps"],
    )

    meta = _base_metadata("simulate", o, skip=())
    meta.update(bundle.metadata())
    if o["x0_mode"]:
        meta["x0"] = o["x0_mode"]
    meta["gamma_total"] = result.gamma_total
    meta["x_final"] = result.x_final
    rows = [(obs_name, result.nu[obs_name]) for obs_name in sorted(result.nu)]
    write_csv(o["out"], meta, ["observable", "nu_n"], rows)
    return 0


# ---------------------------------------------------------------------------
# figure
# ---------------------------------------------------------------------------

_THIRD = 1.0 / 3.0

_FIGURE_PRESETS: dict[str, dict[str, object]] = {
    "fig1": dict(
        model="hypo1d-drifted",
        theta=figure_theta_grid(),
        n=50_000,
        mc=10_000,
        mode="unbiased",
        gamma0=1.0,
        calib_n=10_000,
        calib_theta=_THIRD + 1e-3,
        calib_replicates=1,
    ),
    "fig2": dict(
        model="hypo1d-cos",
        theta=(_THIRD,),
        n=5_000_000,
        mc=10_000,
        mode="biased",
        gamma0=1.0,
        calib_n=10_000,
        calib_theta=_THIRD + 1e-3,
        calib_replicates=1,
    ),
    "fig3": dict(
        model="hypo1d-cos",
        theta=figure_theta_grid(),
        n=50_000,
        mc=10_000,
        mode="unbiased",
        gamma0=1.0,
        calib_n=10_000,
        calib_theta=_THIRD + 1e-3,
        calib_replicates=1,
    ),
    "fig4": dict(
        model="confluent2d",
        theta=(0.401,),
        n=50_000,
        mc=1_000,
        mode="slutsky",
        gamma0=0.1,
        calib_n=500_000,
        calib_theta=0.401,
        calib_replicates=100,
        alpha=3.085,
    ),
}

# Which bound-curve family accompanies each figure.
_FIGURE_VARIANTS = {"fig1": "default", "fig2": "default", "fig3": "carre", "fig4": "alpha"}


def _figure_spec(fig: str) -> dict[str, tuple[Callable[[str], object], object]]:
    spec: dict[str, tuple[Callable[[str], object], object]] = {
        "model": (str, None),
        "model_args": (_parse_model_args, {}),
        "theta": (_cast_floats, ()),
        "n": (int, None),
        "mc": (int, None),
        "mode": (str, None),
        "corrector": (str, "second_order"),
        "bias_m": (int, 10),
        "bias_beta": (float, 1.0),
        "gamma0": (float, 1.0),
        "seed": (int, 0),
        "a_min": (float, 0.0),
        "a_max": (float, 3.0),
        "a_count": (int, 61),
        "x0_mode": (str, None),
        "block_size": (int, 256),
        "chunk_steps": (int, 2048),
        "calib_n": (int, None),
        "calib_theta": (float, None),
        "calib_seed": (int, None),
        "calib_replicates": (int, None),
        "nu_sigma2": (float, None),
        "nu_carre": (float, None),
        "nu_ref": (float, None),
        "alpha": (float, None),
        "recompute_alpha": (_cast_bool, False),
        "threads": (int, None),
        "out": (str, f"{fig}.csv"),
    }
    for key, preset in _FIGURE_PRESETS[fig].items():
        cast, _ = spec[key]
        spec[key] = (cast, preset)
    return spec


def cmd_figure(args: argparse.Namespace) -> int:
    fig = args.figure
    o = _resolve_options(args, "figure", _figure_spec(fig), reserved={"figure": fig})
    threads = _thread_count(o["threads"])
    name = _require_model(o)
    bundle = get_model(name, **o["model_args"])
    thetas = tuple(float(t) for t in o["theta"])
    if not thetas:
        raise ConfigurationError("at least one theta is required")
    a_grid = np.linspace(o["a_min"], o["a_max"], o["a_count"])
    mode = str(o["mode"])
    variant = _FIGURE_VARIANTS[fig]
    if o["calib_seed"] is None:
        o["calib_seed"] = o["seed"] + 1

    meta = _base_metadata("figure", o, skip=("recompute_alpha",))
    meta["figure"] = fig
    meta["variant"] = variant
    meta["ci_level"] = 0.95
    meta["ci_scale"] = "log"
    meta.update(bundle.metadata())
    if o["x0_mode"]:
        meta["x0"] = o["x0_mode"]

    nu_ref = o["nu_ref"]
    provenance = ""
    nu_sigma2, nu_carre = o["nu_sigma2"], o["nu_carre"]
    alpha = o["alpha"]

    if mode == "slutsky":
        if bundle.f_obs is None:
            raise ConfigurationError(f"model {name!r} has no registered observable for slutsky mode")
        if nu_ref is None:
            ref = estimate_reference(
                name,
                n_c=o["calib_n"],
                theta_c=o["calib_theta"],
                seed=o["calib_seed"],
                replicates=o["calib_replicates"],
                gamma0=o["gamma0"],
                x0_mode=o["x0_mode"],
                model_params=o["model_args"],
                workers=threads,
                chunk_steps=o["chunk_steps"],
            )
            nu_ref = ref.value
            provenance = (
                f"estimate_reference(n_c={o['calib_n']}; theta_c={o['calib_theta']!r}; "
                f"replicates={o['calib_replicates']}; seed={o['calib_seed']}; "
                f"gamma0={o['gamma0']!r})"
            )
            meta["nu_ref"] = nu_ref
            meta["nu_ref_half_width"] = ref.half_width
        else:
            provenance = "supplied"
            for key in ("calib_n", "calib_theta", "calib_seed", "calib_replicates"):
                meta.pop(key, None)
        meta["nu_ref_provenance"] = provenance
        if o["recompute_alpha"]:
            contraction = confluence_alpha(bundle.model)
            alpha = contraction.alpha
            meta["alpha_source"] = f"grid search (p={contraction.p_exponent!r})"
        elif alpha is not None:
            meta["alpha_source"] = "preset"
        if alpha is None:
            raise ConfigurationError("slutsky figures need --alpha or --recompute-alpha")
        meta["alpha"] = alpha
    else:
        if bundle.phi is None:
            raise ConfigurationError(f"model {name!r} has no registered test function")
        if nu_sigma2 is None or nu_carre is None:
            ref = estimate_reference(
                name,
                f=bundle.phi.value,
                n_c=o["calib_n"],
                theta_c=o["calib_theta"],
                seed=o["calib_seed"],
                replicates=o["calib_replicates"],
                gamma0=o["gamma0"],
                x0_mode=o["x0_mode"],
                model_params=o["model_args"],
                workers=threads,
                chunk_steps=o["chunk_steps"],
            )
            if nu_sigma2 is None:
                nu_sigma2 = ref.nu_sigma2
            if nu_carre is None:
                nu_carre = ref.nu_carre
        else:
            for key in ("calib_n", "calib_theta", "calib_seed", "calib_replicates"):
                meta.pop(key, None)
        meta["nu_sigma2"] = nu_sigma2
        meta["nu_carre"] = nu_carre

    experiment = DeviationExperiment(
        model=name,
        thetas=thetas,
        n=o["n"],
        mc=o["mc"],
        a_grid=a_grid,
        mode=mode,
        seed=o["seed"],
        gamma0=o["gamma0"],
        model_params=o["model_args"],
        nu_ref=nu_ref,
        nu_ref_provenance=provenance,
        corrector=o["corrector"],
        bias_beta=o["bias_beta"],
        bias_m=o["bias_m"],
        x0_mode=o["x0_mode"],
        block_size=o["block_size"],
        chunk_steps=o["chunk_steps"],
    )
    estimates = run_deviation_curve(experiment, workers=threads)

    if variant == "alpha":
        curve_names = ["S_sigma"]
        shared = comparison_curves(a_grid, BoundParams(alpha=alpha, f_lip=bundle.f_obs.lipschitz), "alpha")
        curves_by_theta = {theta: shared for theta in thetas}
    else:
        phi, model = bundle.phi, bundle.model
        curve_names = ["S_n", "S_nc", "S_nA", "P_lambda_min"]
        if variant == "carre":
            curve_names.append("P_lambda_min_carre")
        theta_lip = model.sigma_lip if 0.0 < model.sigma_lip < math.inf else None
        curves_by_theta = {}
        radii = []
        for theta in thetas:
            steps = StepSequence(theta=theta, gamma0=o["gamma0"])
            # The second-order-corrected statistic keeps the third-derivative
            # remainder; its deterministic radius shifts every bound curve.
            radius = 0.0
            if mode == "biased" and o["corrector"] == "second_order":
                radius = bias_radius(phi, model, bundle.innovation, steps, o["n"], o["bias_beta"])
            radii.append(radius)
            params = BoundParams(
                sigma_sup=model.sigma_sup,
                grad_sup=phi.grad_sup,
                phi_lip=phi.lipschitz,
                theta_lip=theta_lip,
                nu_sigma2=nu_sigma2,
                nu_carre=nu_carre,
                gamma_total=steps.gamma_sum(o["n"]),
                bias_radius=radius,
            )
            curves_by_theta[theta] = comparison_curves(a_grid, params, variant)
        if mode == "biased":
            meta["bias_radius"] = radii

    header = ["theta", "a", "g_emp", "ci_lo", "ci_hi", *curve_names]
    rows = []
    for theta, estimate in zip(thetas, estimates):
        log_lo, log_hi = estimate.log_band()
        curves = curves_by_theta[theta]
        for j, a in enumerate(a_grid):
            rows.append(
                (theta, a, estimate.g_emp[j], log_lo[j], log_hi[j])
                + tuple(curves[cname][j] for cname in curve_names)
            )
    write_csv(o["out"], meta, header, rows)
    if o["out"] not in (None, "-"):
        print(f"{fig}: wrote {o['out']}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------

_BOUNDS_SPEC: dict[str, tuple[Callable[[str], object], object]] = {
    "model": (str, None),
    "model_args": (_parse_model_args, {}),
    "theta": (float, 0.5),
    "n": (int, 10_000),
    "gamma0": (float, 1.0),
    "a_min": (float, 0.0),
    "a_max": (float, 3.0),
    "a_count": (int, 61),
    "variant": (str, "default"),
    "form": (str, "proof"),
    "nu_sigma2": (float, None),
    "nu_carre": (float, None),
    "calib_n": (int, 10_000),
    "calib_theta": (float, _THIRD + 1e-3),
    "calib_seed": (int, 1),
    "calib_replicates": (int, 1),
    "bias_radius": (float, 0.0),
    "alpha": (float, None),
    "f_lip": (float, None),
    "strict_c": (float, 1.0),
    "strict_bigc": (float, 1.0),
    "strict_d": (float, 0.0),
    "strict_q": (float, 1.0),
    "threads": (int, None),
    "out": (str, None),
}


def cmd_bounds(args: argparse.Namespace) -> int:
    o = _resolve_options(args, "bounds", _BOUNDS_SPEC)
    name = _require_model(o)
    bundle = get_model(name, **o["model_args"])
    a_grid = np.linspace(o["a_min"], o["a_max"], o["a_count"])
    meta = _base_metadata("bounds", o, skip=())
    meta.update(bundle.metadata())

    if o["variant"] == "alpha":
        f_lip = o["f_lip"]
        if f_lip is None and bundle.f_obs is not None:
            f_lip = bundle.f_obs.lipschitz
        if f_lip is None:
            raise ConfigurationError("variant 'alpha' needs --f-lip or a registered observable")
        if o["alpha"] is None:
            raise ConfigurationError("variant 'alpha' needs --alpha")
        params = BoundParams(alpha=o["alpha"], f_lip=f_lip)
        curves = comparison_curves(a_grid, params, "alpha")
        meta["f_lip"] = f_lip
        for key in ("calib_n", "calib_theta", "calib_seed", "calib_replicates", "form"):
            meta.pop(key, None)
        header = ["a", "S_sigma"]
        rows = [(a_grid[j], curves["S_sigma"][j]) for j in range(a_grid.size)]
        write_csv(o["out"], meta, header, rows)
        return 0

    phi, model = bundle.phi, bundle.model
    if phi is None:
        raise ConfigurationError(f"model {name!r} has no registered test function")
    nu_sigma2, nu_carre = o["nu_sigma2"], o["nu_carre"]
    if nu_sigma2 is None or nu_carre is None:
        ref = estimate_reference(
            name,
            f=phi.value,
            n_c=o["calib_n"],
            theta_c=o["calib_theta"],
            seed=o["calib_seed"],
            replicates=o["calib_replicates"],
            gamma0=o["gamma0"],
            model_params=o["model_args"],
            workers=_thread_count(o["threads"]),
        )
        if nu_sigma2 is None:
            nu_sigma2 = ref.nu_sigma2
        if nu_carre is None:
            nu_carre = ref.nu_carre
    else:
        for key in ("calib_n", "calib_theta", "calib_seed", "calib_replicates"):
            meta.pop(key, None)
    meta["nu_sigma2"] = nu_sigma2
    meta["nu_carre"] = nu_carre

    steps = StepSequence(theta=o["theta"], gamma0=o["gamma0"])
    theta_lip = model.sigma_lip if 0.0 < model.sigma_lip < math.inf else None
    params = BoundParams(
        sigma_sup=model.sigma_sup,
        grad_sup=phi.grad_sup,
        phi_lip=phi.lipschitz,
        theta_lip=theta_lip,
        nu_sigma2=nu_sigma2,
        nu_carre=nu_carre,
        gamma_total=steps.gamma_sum(o["n"]),
        bias_radius=o["bias_radius"],
    )
    strict = StrictSequences(
        c_n=o["strict_c"], big_c_n=o["strict_bigc"], d_n=o["strict_d"], q=o["strict_q"]
    )
    gaussian = gaussian_log_bound(a_grid, params, strict=strict)
    coboundary = coboundary_log_bound(a_grid, params, form=o["form"])
    curves = comparison_curves(a_grid, params, o["variant"])
    meta["gamma_total"] = params.gamma_total
    meta["a_tilde"] = params.a_tilde
    meta["b_tilde"] = params.b_tilde

    curve_names = ["S_n", "S_nc", "S_nA", "P_lambda_min"]
    if o["variant"] == "carre":
        curve_names.append("P_lambda_min_carre")
    header = ["a", "gaussian", "coboundary", *curve_names]
    rows = [
        (a_grid[j], gaussian[j], coboundary[j])
        + tuple(curves[cname][j] for cname in curve_names)
        for j in range(a_grid.size)
    ]
    write_csv(o["out"], meta, header, rows)
    return 0


# ---------------------------------------------------------------------------
# interval
# ---------------------------------------------------------------------------

_INTERVAL_SPEC: dict[str, tuple[Callable[[str], object], object]] = {
    "model": (str, None),
    "model_args": (_parse_model_args, {}),
    "theta": (float, 0.5),
    "n": (int, 10_000),
    "seed": (int, 0),
    "gamma0": (float, 0.1),
    "coverage": (float, 0.95),
    "alpha": (float, None),
    "x0_mode": (str, None),
    "chunk_steps": (int, 2048),
    "out": (str, None),
}


def cmd_interval(args: argparse.Namespace) -> int:
    o = _resolve_options(args, "interval", _INTERVAL_SPEC)
    name = _require_model(o)
    bundle = get_model(name, **o["model_args"])
    if bundle.f_obs is None:
        raise ConfigurationError(
            f"model {name!r} has no registered scalar observable; the interval command needs one"
        )
    model, f_obs = bundle.model, bundle.f_obs

    alpha = o["alpha"]
    alpha_source = "flag"
    if alpha is None:
        contraction = confluence_alpha(model)
        alpha = contraction.alpha
        alpha_source = f"grid search (p={contraction.p_exponent!r})"

    steps = StepSequence(theta=o["theta"], gamma0=o["gamma0"])
    result = run_trajectory(
        model,
        steps,
        bundle.innovation,
        o["n"],
        o["seed"],
        observables={"f": f_obs.value, "noise": noise_intensity(model)},
        x0_mode=o["x0_mode"] or bundle.x0_mode,
        chunk_steps=o["chunk_steps"],
    )
    nu_f, nu_noise = result.nu["f"], result.nu["noise"]
    a = coverage_level(o["coverage"])
    params = BoundParams(
        alpha=alpha,
        f_lip=f_obs.lipschitz,
        gamma_total=result.gamma_total,
        sigma_sup=model.sigma_sup,
    )
    plain = confidence_interval(nu_f, a, params, mode="plain")
    slutsky = confidence_interval(nu_f, a, params, mode="slutsky", nu_n_sigma2=nu_noise)

    print(
        f"interval: model={name} theta={o['theta']!r} n={o['n']} "
        f"gamma0={o['gamma0']!r} seed={o['seed']}"
    )
    print(f"  Gamma_n = {result.gamma_total!r}")
    print(f"  nu_n({f_obs.name}) = {nu_f!r}")
    print(f"  nu_n(|sigma|^2) = {nu_noise!r}")
    print(f"  alpha = {alpha!r} ({alpha_source})")
    print(f"  a = {a!r} (coverage floor {o['coverage']!r})")
    for label, (lo, hi, floor) in (("plain", plain), ("slutsky", slutsky)):
        print(f"  {label}: [{lo!r}, {hi!r}]  half-width {(hi - lo) / 2.0!r}  coverage >= {floor!r}")

    if o["out"] is not None:
        meta = _base_metadata("interval", o, skip=())
        meta.update(bundle.metadata())
        meta["alpha"] = alpha
        meta["alpha_source"] = alpha_source
        meta["a"] = a
        meta["gamma_total"] = result.gamma_total
        meta["nu_f"] = nu_f
        meta["nu_sigma2"] = nu_noise
        rows = [
            ("plain", plain[0], plain[1], (plain[1] - plain[0]) / 2.0, plain[2]),
            ("slutsky", slutsky[0], slutsky[1], (slutsky[1] - slutsky[0]) / 2.0, slutsky[2]),
        ]
        write_csv(o["out"], meta, ["mode", "lo", "hi", "half_width", "coverage_floor"], rows)
    return 0


# ---------------------------------------------------------------------------
# confluence
# ---------------------------------------------------------------------------

_CONFLUENCE_SPEC: dict[str, tuple[Callable[[str], object], object]] = {
    "model": (str, "confluent2d"),
    "model_args": (_parse_model_args, {}),
    "p_exponent": (float, None),
    "box_lo": (float, -10.0),
    "box_hi": (float, 10.0),
    "resolution": (int, 200),
    "directions": (int, 720),
    "drift_only": (_cast_bool, False),
    "out": (str, None),
}


def cmd_confluence(args: argparse.Namespace) -> int:
    o = _resolve_options(args, "confluence", _CONFLUENCE_SPEC)
    name = _require_model(o)
    bundle = get_model(name, **o["model_args"])
    estimate = confluence_alpha(
        bundle.model,
        p_exponent=o["p_exponent"],
        box=(o["box_lo"], o["box_hi"]),
        resolution=o["resolution"],
        xi_samples=o["directions"],
        drift_only=o["drift_only"],
    )
    print(f"confluence: model={name}")
    print(f"  alpha = {estimate.alpha!r}")
    print(f"  p_exponent = {estimate.p_exponent!r}")
    print(f"  max form value = {estimate.max_value!r}")
    print(f"  worst x = {format_cell(estimate.worst_x)}")
    print(f"  worst xi = {format_cell(estimate.worst_xi)}")
    print(
        f"  box = [{o['box_lo']!r}, {o['box_hi']!r}]  resolution = {o['resolution']}"
        f"  directions = {o['directions']}"
    )
    if o["out"] is not None:
        meta = _base_metadata("confluence", o, skip=())
        meta.update(bundle.metadata())
        rows = [
            (
                estimate.alpha,
                estimate.p_exponent,
                estimate.max_value,
                estimate.worst_x,
                estimate.worst_xi,
            )
        ]
        write_csv(
            o["out"], meta, ["alpha", "p_exponent", "max_value", "worst_x", "worst_xi"], rows
        )
    return 0


# ---------------------------------------------------------------------------
# asclt
# ---------------------------------------------------------------------------

_ASCLT_OBSERVABLES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sinx": lambda z: np.sin(z[..., 0]),
    "cosx": lambda z: np.cos(z[..., 0]),
    "x": lambda z: z[..., 0],
}

_ASCLT_SPEC: dict[str, tuple[Callable[[str], object], object]] = {
    "n": (int, 100_000),
    "runs": (int, 200),
    "f": (str, "sinx"),
    "innovation": (str, "gaussian"),
    "charge": (str, "pre"),
    "seed": (int, 0),
    "a_min": (float, 0.0),
    "a_max": (float, 3.0),
    "a_count": (int, 61),
    "chunk_steps": (int, 4096),
    "out": (str, None),
}


def cmd_asclt(args: argparse.Namespace) -> int:
    o = _resolve_options(args, "asclt", _ASCLT_SPEC)
    f_name = str(o["f"])
    if f_name not in _ASCLT_OBSERVABLES:
        raise ConfigurationError(
            f"unknown observable {f_name!r}; choose one of {', '.join(sorted(_ASCLT_OBSERVABLES))}"
        )
    if o["runs"] < 1:
        raise ConfigurationError(f"runs must be >= 1, got {o['runs']}")
    f = _ASCLT_OBSERVABLES[f_name]
    f_lip = 1.0
    innov = Innovation(str(o["innovation"]), 1)
    result = simulate_asclt(
        innov,
        o["n"],
        o["seed"],
        observables={"f": f},
        indices=tuple(range(o["runs"])),
        charge=str(o["charge"]),
        chunk_steps=o["chunk_steps"],
    )
    center = gaussian_mean(f, 1)
    scale = math.sqrt(math.log(o["n"]) + 1.0)
    deviations = scale * (result.nu_z["f"] - center)

    a_grid = np.linspace(o["a_min"], o["a_max"], o["a_count"])
    hits = (np.abs(deviations)[:, None] >= a_grid[None, :]).sum(axis=0).astype(np.int64)
    with np.errstate(divide="ignore"):
        g_emp = np.log(hits / float(o["runs"]))
        lo, hi = clopper_pearson(hits, o["runs"])
        log_lo, log_hi = np.log(lo), np.log(hi)
    envelope = envelope_log_bound(a_grid, f_lip)

    meta = _base_metadata("asclt", o, skip=())
    meta["f_lip"] = f_lip
    meta["gaussian_mean"] = center
    meta["deviation_scale"] = "sqrt(log(n) + 1)"
    meta["coupling_avg_mean"] = float(np.mean(result.coupling_avg))
    meta["coupling_max"] = float(np.max(result.coupling_max))
    meta["max_recursion_residual"] = float(np.max(result.max_recursion_residual))
    header = ["a", "g_emp", "ci_lo", "ci_hi", "envelope"]
    rows = [
        (a_grid[j], g_emp[j], log_lo[j], log_hi[j], envelope[j]) for j in range(a_grid.size)
    ]
    write_csv(o["out"], meta, header, rows)
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def _add_option(parser: argparse.ArgumentParser, key: str, cast: Callable, helptext: str) -> None:
    flag = "--" + key.replace("_", "-")
    if cast is _cast_bool:
        parser.add_argument(flag, dest=key, action="store_true", default=None, help=helptext)
    elif cast in (_cast_floats, _parse_model_args):
        parser.add_argument(flag, dest=key, type=cast, default=None, help=helptext)
    elif cast is int:
        parser.add_argument(flag, dest=key, type=int, default=None, help=helptext)
    elif cast is float:
        parser.add_argument(flag, dest=key, type=float, default=None, help=helptext)
    else:
        parser.add_argument(flag, dest=key, default=None, help=helptext)


_OPTION_HELP = {
    "model": "registry model name",
    "model_args": "model parameters, e.g. 'eps=0.02,sigma_variant=caption'",
    "theta": "step exponent(s) in (0, 1]",
    "n": "number of Euler steps",
    "mc": "Monte Carlo trajectory count",
    "mode": "statistic: unbiased, biased or slutsky",
    "corrector": "bias corrector: second_order or full",
    "bias_m": "quantisation points for the corrector integrals",
    "bias_beta": "Hoelder exponent of the third derivative",
    "gamma0": "first step size gamma_1",
    "seed": "master seed",
    "a_min": "deviation grid start",
    "a_max": "deviation grid end",
    "a_count": "deviation grid size",
    "x0_mode": "start mode: zero or pm1",
    "block_size": "trajectories per work block",
    "chunk_steps": "steps per simulation chunk",
    "calib_n": "calibration horizon n_c",
    "calib_theta": "calibration step exponent",
    "calib_seed": "calibration seed",
    "calib_replicates": "calibration replicate count",
    "nu_sigma2": "override the calibrated average of |sigma|^2",
    "nu_carre": "override the calibrated squared-gradient average",
    "nu_ref": "reference ergodic value for the slutsky statistic",
    "alpha": "contraction rate",
    "recompute_alpha": "run the contraction grid search instead of the preset",
    "threads": "worker processes (also ERGODEV_THREADS)",
    "out": "output path ('-' or omitted: stdout)",
    "traj_index": "trajectory index within the seed's batch",
    "variant": "bound curve family: default, carre or alpha",
    "form": "coboundary bound form: proof or theorem",
    "bias_radius": "deterministic radius subtracted from the deviation level",
    "f_lip": "Lipschitz seminorm of the observable",
    "strict_c": "exponent scale c_n",
    "strict_bigc": "level scale C_n",
    "strict_d": "exponent reduction d_n in [0, 1)",
    "strict_q": "variance inflation q >= 1",
    "coverage": "target coverage for the interval",
    "p_exponent": "contraction exponent p in [1, 2); default scans",
    "box_lo": "grid box lower corner",
    "box_hi": "grid box upper corner",
    "resolution": "grid points per axis",
    "directions": "unit directions sampled",
    "drift_only": "use only the symmetrised drift Jacobian",
    "runs": "independent runs",
    "f": "observable name: sinx, cosx or x",
    "innovation": "innovation law: gaussian or rademacher",
    "charge": "occupation measure charges pre- or post-update points",
}


def _add_spec_options(parser: argparse.ArgumentParser, spec: dict) -> None:
    parser.add_argument("--config", help="flat 'key = value' config file")
    for key, (cast, _) in spec.items():
        _add_option(parser, key, cast, _OPTION_HELP.get(key, ""))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergodev",
        description=(
            "Decreasing-step Euler simulation of ergodic diffusions with "
            "non-asymptotic Gaussian deviation bounds."
        ),
    )
    parser.add_argument("--version", action="version", version=f"ergodev {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="run one trajectory and emit its ergodic averages")
    _add_spec_options(p, _SIMULATE_SPEC)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("figure", help="reproduce a deviation-curve figure as CSV")
    p.add_argument("figure", choices=sorted(_FIGURE_PRESETS), help="figure id")
    _add_spec_options(p, _figure_spec("fig1"))
    p.set_defaults(func=cmd_figure)

    p = sub.add_parser("bounds", help="tabulate the closed-form tail bounds")
    _add_spec_options(p, _BOUNDS_SPEC)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("interval", help="confidence intervals from one trajectory")
    _add_spec_options(p, _INTERVAL_SPEC)
    p.set_defaults(func=cmd_interval)

    p = sub.add_parser("confluence", help="grid-search the contraction rate alpha")
    _add_spec_options(p, _CONFLUENCE_SPEC)
    p.set_defaults(func=cmd_confluence)

    p = sub.add_parser("asclt", help="almost-sure CLT occupation measures and envelope bound")
    _add_spec_options(p, _ASCLT_SPEC)
    p.set_defaults(func=cmd_asclt)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse: --help exits 0, usage errors exit 2
        code = exc.code
        if code is None:
            return 0
        return code if isinstance(code, int) else 2
    except (SimulationError, DataError) as exc:
        print(f"ergodev: error: {exc}", file=sys.stderr)
        return 3
    except (ConfigurationError, ValueError) as exc:
        print(f"ergodev: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ergodev: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
