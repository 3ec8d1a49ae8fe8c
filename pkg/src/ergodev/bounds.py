"""Closed-form deviation bounds, optimized tail exponents and confidence
intervals for the normalised occupation-measure statistic.

All bounds are returned on the log scale: a value L means the tail
probability is bounded by exp(L).  The plain Gaussian bound is

    log 2 - a^2 / (2 sup|sigma|^2 sup|grad phi|^2),

optionally with the deviation radius shrunk by the bias radius when the
statistic carries the uncentered third-derivative term.  The sharper
bounds trade the sup-norm variance proxy for the ergodic averages
nu(|sigma|^2) (coboundary form) or nu(|sigma* grad phi|^2) (carre du
champ form), at the price of a quartic term controlled through a free
parameter rho > 1; the closed-form optimum in the quartic penalty is the
root of a depressed cubic (solved by the hyperbolic Cardan formula, exact
for positive coefficients) and the remaining rho-optimization is a
one-dimensional golden-section search.

Limiting profile: the slowly-varying sequences entering the non-asymptotic
statements are frozen at their limits (variance inflation q = 1, level
constants 1, remainder fractions 0), which is what the plotted comparison
curves use; `StrictSequences` lets callers restore finite values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, DataError

Array = np.ndarray

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# Parameter bundles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StrictSequences:
    """Finite replacements for the frozen limit sequences.

    c_n scales the exponent, big_c_n the level in front of the
    exponential, d_n removes a fraction of the exponent, q inflates the
    variance proxy.  The defaults reproduce the limiting profile.
    """

    c_n: float = 1.0
    big_c_n: float = 1.0
    d_n: float = 0.0
    q: float = 1.0

    def __post_init__(self) -> None:
        if not (self.c_n > 0.0 and self.big_c_n > 0.0):
            raise ConfigurationError("c_n and big_c_n must be positive")
        if not (0.0 <= self.d_n < 1.0):
            raise ConfigurationError(f"d_n must lie in [0, 1), got {self.d_n}")
        if self.q < 1.0:
            raise ConfigurationError(f"q must be >= 1, got {self.q}")


_LIMIT = StrictSequences()


@dataclass(frozen=True)
class BoundParams:
    """Everything the closed-form bounds consume.

    Fields default to None; each operation validates the subset it
    needs.  nu_sigma2 / nu_carre are ergodic averages of |sigma|^2 and of
    the squared diffusion gradient |sigma* grad phi|^2, usually estimated
    by a calibration run.  bias_radius is the deterministic radius
    dominating the uncentered third-derivative term (0 when the statistic
    is fully centered).
    """

    sigma_sup: float | None = None  # sup of the Frobenius norm of sigma
    grad_sup: float | None = None  # sup |grad phi|
    phi_lip: float | None = None  # Lipschitz seminorm of phi
    theta_lip: float | None = None  # Lipschitz seminorm of the shifted solution
    nu_sigma2: float | None = None  # nu(|sigma|^2) estimate
    nu_carre: float | None = None  # nu(|sigma* grad phi|^2) estimate
    alpha: float | None = None  # contraction rate for gradient bounds
    f_lip: float | None = None  # Lipschitz seminorm of the observable f
    gamma_total: float | None = None  # Gamma_n of the run being bounded
    bias_radius: float = 0.0

    def __post_init__(self) -> None:
        for name in (
            "sigma_sup",
            "grad_sup",
            "phi_lip",
            "theta_lip",
            "nu_sigma2",
            "nu_carre",
            "alpha",
            "f_lip",
            "gamma_total",
        ):
            v = getattr(self, name)
            if v is not None and not v > 0.0:
                raise ConfigurationError(f"{name} must be positive, got {v}")
        if self.bias_radius < 0.0:
            raise ConfigurationError("bias_radius must be >= 0")
        if (
            self.nu_sigma2 is not None
            and self.sigma_sup is not None
            and math.isfinite(self.sigma_sup)
            and self.nu_sigma2 > self.sigma_sup**2 * (1.0 + 1e-12)
        ):
            raise ConfigurationError(
                "nu_sigma2 exceeds sigma_sup^2: an ergodic average of "
                "|sigma|^2 cannot pass the sup"
            )

    # -- derived constants -------------------------------------------------
    def _need(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ConfigurationError(
                "missing bound parameters: " + ", ".join(missing)
            )

    @property
    def a_tilde(self) -> float:
        """Quadratic penalty coefficient [phi]_1^2 nu(|sigma|^2) / 2."""
        self._need("phi_lip", "nu_sigma2")
        return 0.5 * self.phi_lip**2 * self.nu_sigma2

    @property
    def a_tilde_carre(self) -> float:
        """Quadratic coefficient with the carre du champ average: nu(|sigma* grad phi|^2)/2."""
        self._need("nu_carre")
        return 0.5 * self.nu_carre

    @property
    def b_tilde(self) -> float:
        """Quartic penalty coefficient [phi]_1^4 sup|sigma|^2 [theta]_1^2 / 8."""
        self._need("phi_lip", "sigma_sup", "theta_lip")
        return 0.125 * self.phi_lip**4 * self.sigma_sup**2 * self.theta_lip**2

    @property
    def c_bar(self) -> float:
        """Regime crossover constant a_tilde / b_tilde^(1/3).

        Algebraically identical to
        ([phi]_1/[theta]_1)^(2/3) nu(|sigma|^2) sup|sigma|^(-2/3).
        """
        return self.a_tilde / self.b_tilde ** (1.0 / 3.0)


# ---------------------------------------------------------------------------
# Gaussian bound
# ---------------------------------------------------------------------------


def lambda_n(a: float, q: float, params: BoundParams) -> float:
    """Chernoff parameter a sqrt(Gamma_n) / (q sup|sigma|^2 sup|grad phi|^2)."""
    params._need("sigma_sup", "grad_sup", "gamma_total")
    if not a > 0.0:
        raise ConfigurationError(f"deviation level a must be positive, got {a}")
    if q < 1.0:
        raise ConfigurationError(f"q must be >= 1, got {q}")
    den = q * params.sigma_sup**2 * params.grad_sup**2
    if not (math.isfinite(den) and den > 0.0):
        raise ConfigurationError("sigma_sup and grad_sup must be finite and positive")
    return a * math.sqrt(params.gamma_total) / den


def gaussian_log_bound(
    a: float | Array,
    params: BoundParams,
    bias_centered: bool = False,
    strict: StrictSequences | None = None,
) -> float | Array:
    """Log of the two-sided Gaussian tail bound at deviation level a.

    log(2 C_n) - c_n (1 - d_n) a_eff^2 / (2 q sup|sigma|^2 sup|grad phi|^2),
    where a_eff = a when the statistic is centered and (a - bias_radius)+
    otherwise.  The limiting profile gives log 2 - a^2/(2 sup^2 sup^2).
    """
    params._need("sigma_sup", "grad_sup")
    seq = strict if strict is not None else _LIMIT
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0.0):
        raise ConfigurationError("deviation level a must be >= 0")
    a_eff = a if bias_centered else np.maximum(a - params.bias_radius, 0.0)
    expo = (
        -seq.c_n
        * (1.0 - seq.d_n)
        * a_eff**2
        / (2.0 * seq.q * params.sigma_sup**2 * params.grad_sup**2)
    )
    out = math.log(2.0 * seq.big_c_n) + expo
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Cardan root and the quartic-penalty polynomial
# ---------------------------------------------------------------------------


def cardan_lambda_min(
    a: float | Array, gamma_total: float, a_coef: float, b_coef: float
) -> float | Array:
    """Unique real root of lam^3 + (A G^2 / 2B) lam - a G^(5/2) / 4B = 0.

    A depressed cubic with positive linear coefficient has exactly one
    real root; the hyperbolic form 2 s sinh(asinh(z)/3) evaluates it
    without cancellation for any magnitudes.
    """
    if not (a_coef > 0.0 and b_coef > 0.0):
        raise ConfigurationError("penalty coefficients must be positive")
    if not gamma_total > 0.0:
        raise ConfigurationError("gamma_total must be positive")
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0.0):
        raise ConfigurationError("deviation level a must be >= 0")
    p = a_coef * gamma_total**2 / (2.0 * b_coef)
    s = math.sqrt(p / 3.0)
    z = a * gamma_total**2.5 / (8.0 * b_coef * s**3)
    root = 2.0 * s * np.sinh(np.arcsinh(z) / 3.0)
    return float(root) if np.ndim(root) == 0 else root


def deviation_polynomial(
    lam: float | Array, a: float | Array, gamma_total: float, a_coef: float, b_coef: float
) -> float | Array:
    """Chernoff exponent -a lam/sqrt(G) + lam^2 A/G + lam^4 B/G^3.

    cardan_lambda_min returns its stationary point; the optimized
    exponent is this polynomial evaluated there.
    """
    lam = np.asarray(lam, dtype=np.float64)
    out = (
        -np.asarray(a, dtype=np.float64) * lam / math.sqrt(gamma_total)
        + lam**2 * a_coef / gamma_total
        + lam**4 * b_coef / gamma_total**3
    )
    return float(out) if np.ndim(out) == 0 else out


def _phi_two_roots(
    a: float | Array, gamma_total: float, a_tilde: float, b_tilde: float, rho: float
) -> float | Array:
    """Sum of the two signed cube roots in the closed-form rho-bound.

    With x = a / (b_tilde sqrt(G)) and
    s = sqrt(x^2 + (rho-1)(2 a_tilde / 3 b_tilde)^3) the sum
    (x+s)^(1/3) + (x-s)^(1/3) is evaluated as 2x / (A^2 + AB + B^2),
    A = (s+x)^(1/3), B = (s-x)^(1/3), which avoids the catastrophic
    cancellation of the naive form when s >> x.
    """
    x = np.asarray(a, dtype=np.float64) / (b_tilde * math.sqrt(gamma_total))
    s = np.sqrt(x**2 + (rho - 1.0) * (2.0 * a_tilde / (3.0 * b_tilde)) ** 3)
    ca = np.cbrt(s + x)
    cb = np.cbrt(s - x)
    den = ca**2 + ca * cb + cb**2
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(den > 0.0, 2.0 * x / np.where(den > 0.0, den, 1.0), 0.0)
    return phi


def p_lambda_min(
    a: float | Array,
    gamma_total: float,
    a_tilde: float,
    b_tilde: float,
    rho: float,
) -> float | Array:
    """Optimized Chernoff exponent at a given quartic split rho > 1.

    -(sqrt(G)/4) ((rho-1)^(1/3)/rho) Phi (3a/2 - (sqrt(G)/2)(rho-1)^(1/3) a_tilde Phi)
    with Phi the two-cube-root sum; algebraically equal to the polynomial
    evaluated at the cubic's root with A = rho a_tilde,
    B = rho^3 b_tilde / (rho - 1).
    """
    if not rho > 1.0:
        raise ConfigurationError(f"rho must exceed 1, got {rho}")
    if not (a_tilde > 0.0 and b_tilde > 0.0):
        raise ConfigurationError("penalty coefficients must be positive")
    if not gamma_total > 0.0:
        raise ConfigurationError("gamma_total must be positive")
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0.0):
        raise ConfigurationError("deviation level a must be >= 0")
    phi = _phi_two_roots(a, gamma_total, a_tilde, b_tilde, rho)
    cube = (rho - 1.0) ** (1.0 / 3.0)
    root_g = math.sqrt(gamma_total)
    out = (
        -(root_g / 4.0)
        * (cube / rho)
        * phi
        * (1.5 * a - 0.5 * root_g * cube * a_tilde * phi)
    )
    return float(out) if np.ndim(out) == 0 else out


def optimize_rho(
    a: float, gamma_total: float, a_tilde: float, b_tilde: float
) -> tuple[float, float]:
    """Minimize the rho-split exponent; returns (rho_star, exponent).

    The search runs over rho = 1 + exp(s), s in [-20, 20]: a coarse scan
    locates the basin, golden-section refines it to 1e-8 in s.
    """
    if a == 0.0:
        return 2.0, 0.0

    def val(s: float) -> float:
        return float(p_lambda_min(a, gamma_total, a_tilde, b_tilde, 1.0 + math.exp(s)))

    lo_s, hi_s = -20.0, 20.0
    grid = np.linspace(lo_s, hi_s, 97)
    coarse = [val(s) for s in grid]
    i = int(np.argmin(coarse))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]

    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = val(c), val(d)
    while hi - lo > 1e-8:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = val(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = val(d)
    s_star = 0.5 * (lo + hi)
    return 1.0 + math.exp(s_star), val(s_star)


def quadratic_regime_rho(
    a: float, gamma_total: float, a_tilde: float, b_tilde: float
) -> float:
    """Closed-form near-optimal rho in the small-deviation regime.

    alpha = b_tilde a^2 / (4 a_tilde^3 G), xi = 1/(1 + sqrt(1 + 1/alpha)),
    rho = 1 + alpha/xi.
    """
    if not a > 0.0:
        raise ConfigurationError("deviation level a must be positive")
    alpha = b_tilde * a * a / (4.0 * a_tilde**3 * gamma_total)
    xi = 1.0 / (1.0 + math.sqrt(1.0 + 1.0 / alpha))
    return 1.0 + alpha / xi


# ---------------------------------------------------------------------------
# Coboundary-corrected log bound
# ---------------------------------------------------------------------------


def coboundary_branches(
    a: float | Array, params: BoundParams, form: str = "proof"
) -> tuple[Array, Array]:
    """The two regime exponents underlying the coboundary bound.

    Returned as log-scale exponents (without the log 2 level), quadratic
    regime first.  The quadratic branch saturates: as a grows it tends to
    -c_bar^3 G / (2 nu(|sigma|^2) sup|grad phi|^2), which is why the
    quartic branch exists.
    """
    if form not in ("proof", "theorem"):
        raise ConfigurationError(f"form must be 'proof' or 'theorem', got {form!r}")
    params._need("gamma_total")
    g = params.gamma_total
    at, bt, cb = params.a_tilde, params.b_tilde, params.c_bar
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0.0):
        raise ConfigurationError("deviation level a must be >= 0")

    with np.errstate(divide="ignore", invalid="ignore"):
        if form == "proof":
            quad = -(a**2 / (4.0 * at)) * (
                1.0 - 2.0 / (1.0 + np.sqrt(1.0 + 4.0 * at**3 * g / (bt * a**2)))
            )
            quart = (
                -(a ** (4.0 / 3.0) / 4.0)
                * (g / bt) ** (1.0 / 3.0)
                * np.maximum(1.0 - (2.0 / 3.0) * cb * (g / a**2) ** (1.0 / 3.0), 0.0)
            )
        else:
            params._need("nu_sigma2", "grad_sup")
            den = 2.0 * params.nu_sigma2 * params.grad_sup**2
            quad = (
                -(a**2) * (1.0 - 2.0 / (1.0 + np.sqrt(1.0 + 4.0 * cb**3 * g / a**2)))
            ) / den
            quart = (
                -(a ** (4.0 / 3.0))
                * g ** (cb / 3.0)
                * np.maximum(1.0 - (2.0 / 3.0) * cb * (g / a**2) ** (1.0 / 3.0), 0.0)
            ) / den
    quad = np.where(a == 0.0, 0.0, quad)
    quart = np.where(a == 0.0, 0.0, quart)
    return quad, quart


def coboundary_log_bound(
    a: float | Array, params: BoundParams, form: str = "proof"
) -> float | Array:
    """Two-branch log bound using the ergodic variance nu(|sigma|^2).

    form="proof" (default) takes the better of the two closed-form
    exponents obtained by optimizing the quartic split in its quadratic
    and quartic regimes:

        P1 = -(a^2 / 4 a_tilde) (1 - 2/(1 + sqrt(1 + 4 a_tilde^3 G / (b_tilde a^2))))
        P2 = -(a^(4/3)/4) (G/b_tilde)^(1/3) (1 - (2/3) c_bar (G/a^2)^(1/3))+

    form="theorem" evaluates the statement-level display, whose second
    branch carries G^(c_bar/3) instead of (G/b_tilde)^(1/3); both are kept
    because they genuinely differ unless c_bar = 1 (the first branches
    are algebraically identical).  Returns log 2 at a = 0.
    """
    quad, quart = coboundary_branches(a, params, form)
    out = math.log(2.0) + np.minimum(quad, quart)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Confidence intervals
# ---------------------------------------------------------------------------


def confidence_interval(
    nu_n_f: float,
    a: float,
    params: BoundParams,
    mode: str = "plain",
    nu_n_sigma2: float | None = None,
) -> tuple[float, float, float]:
    """Interval around the occupation average with a Gaussian coverage floor.

    plain:     half-width a sup|sigma| [f]_1 / (alpha sqrt(G))
    slutsky:   sup|sigma| replaced by the trajectory's own sqrt(nu_n(|sigma|^2))
    lipschitz: same half-width as plain; the underlying statement needs
               theta in (1/2, 1] and f Lipschitz rather than smooth
    Coverage floor is 1 - 2 exp(-a^2/2), clamped at 0.
    """
    params._need("alpha", "f_lip", "gamma_total")
    if a < 0.0:
        raise ConfigurationError("deviation level a must be >= 0")
    root_g = math.sqrt(params.gamma_total)
    if mode in ("plain", "lipschitz"):
        params._need("sigma_sup")
        if not math.isfinite(params.sigma_sup):
            raise ConfigurationError("plain interval needs a finite sigma_sup")
        scale = params.sigma_sup
    elif mode == "slutsky":
        if nu_n_sigma2 is None:
            raise ConfigurationError("slutsky mode needs the trajectory nu_n(|sigma|^2)")
        if not nu_n_sigma2 > 0.0 or not math.isfinite(nu_n_sigma2):
            raise DataError(
                f"trajectory average of |sigma|^2 must be positive, got {nu_n_sigma2}"
            )
        scale = math.sqrt(nu_n_sigma2)
    else:
        raise ConfigurationError(
            f"mode must be 'plain', 'slutsky' or 'lipschitz', got {mode!r}"
        )
    hw = a * scale * params.f_lip / (params.alpha * root_g)
    coverage = max(0.0, 1.0 - 2.0 * math.exp(-0.5 * a * a))
    return nu_n_f - hw, nu_n_f + hw, coverage


def coverage_level(target: float) -> float:
    """Deviation level a with Gaussian coverage floor `target`:
    1 - 2exp(-a^2/2) = target, i.e. a = sqrt(2 ln(2/(1-target)))."""
    if not (0.0 < target < 1.0):
        raise ConfigurationError(f"coverage target must lie in (0, 1), got {target}")
    return math.sqrt(2.0 * math.log(2.0 / (1.0 - target)))


# ---------------------------------------------------------------------------
# Figure comparison curves
# ---------------------------------------------------------------------------


def comparison_curves(
    a_grid: Iterable[float], params: BoundParams, variant: str = "default"
) -> dict[str, Array]:
    """Tail-exponent curves on a deviation grid (log bounds without log 2).

    default: S_n    = -(a - a_n)+^2 / (2 sup|sigma|^2 sup|grad phi|^2)
             S_nc   = -(a - a_n)+^2 / (2 nu(|sigma|^2) sup|grad phi|^2)
             S_nA   = -(a - a_n)+^2 / (2 nu(|sigma* grad phi|^2))
             P_lambda_min = rho-optimized exponent at radius (a - a_n)+
    carre:   default plus P_lambda_min_carre, the same optimized exponent
             with the quadratic coefficient built from the carre du champ
             average instead of nu(|sigma|^2) sup|grad phi|^2
    alpha:   S_sigma = -a^2 alpha^2 / (2 [f]_1^2), the contraction-rate
             curve matched to the slutsky-normalised statistic
    """
    a = np.asarray(list(a_grid), dtype=np.float64)
    if np.any(a < 0.0):
        raise ConfigurationError("deviation grid must be >= 0")
    out: dict[str, Array] = {"a": a}
    if variant == "alpha":
        params._need("alpha", "f_lip")
        out["S_sigma"] = -(a**2) * params.alpha**2 / (2.0 * params.f_lip**2)
        return out
    if variant not in ("default", "carre"):
        raise ConfigurationError(
            f"variant must be 'default', 'carre' or 'alpha', got {variant!r}"
        )
    params._need("sigma_sup", "grad_sup", "nu_sigma2", "nu_carre", "gamma_total")
    a_eff = np.maximum(a - params.bias_radius, 0.0)
    out["S_n"] = -(a_eff**2) / (2.0 * params.sigma_sup**2 * params.grad_sup**2)
    out["S_nc"] = -(a_eff**2) / (2.0 * params.nu_sigma2 * params.grad_sup**2)
    out["S_nA"] = -(a_eff**2) / (2.0 * params.nu_carre)
    g = params.gamma_total
    out["P_lambda_min"] = np.array(
        [optimize_rho(x, g, params.a_tilde, params.b_tilde)[1] for x in a_eff]
    )
    if variant == "carre":
        out["P_lambda_min_carre"] = np.array(
            [optimize_rho(x, g, params.a_tilde_carre, params.b_tilde)[1] for x in a_eff]
        )
    return out
