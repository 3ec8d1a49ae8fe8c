"""Gradient-bound constants for centered source problems, and mollification.

The deviation bounds need sup |grad phi| for the solution phi of the
generator equation A phi = f - nu(f).  Two routes are provided:

* `confluence_alpha`: numerically certify a pathwise contraction rate
  alpha by maximising, over a sampled box and unit directions xi, the
  quadratic form

      <sym(Db(x)) xi, xi>
      + 1/2 sum_j ((p-2) <D sigma_.j(x) xi, xi>^2 + |D sigma_.j(x) xi|^2),

  which must stay below -alpha |xi|^2.  The estimate certifies only the
  sampled region; the box and resolutions are explicit parameters.
* `bakry_emery_alpha`: the curvature shortcut rho (kappa/sigma_lower)^(-1/2)
  in dimension >= 2 (plain rho in dimension 1).

Either way `gradient_bound` turns a Lipschitz seminorm [f]_1 into the
bound [f]_1 / alpha.  For merely Lipschitz sources, `mollify` produces a
smooth stand-in f_delta = f * eta_delta (compactly supported bump kernel,
Gauss-Legendre quadrature) with |f_delta - f| <= C_eta delta [f]_1 and
[f_delta]_1 <= [f]_1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DataError
from .models import DiffusionModel

Array = np.ndarray

_CHUNK_CELLS = 1024
_P_SCAN = (1.0, 1.5, 2.0 - 1e-6)


def _unit_directions(dim: int, count: int) -> Array:
    """Unit directions covering the sphere; the target form is even in xi,
    so antipodal duplicates are skipped where cheap (half circle in 2d)."""
    if dim == 1:
        return np.array([[1.0]])
    if dim == 2:
        ang = np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if dim == 3:
        i = np.arange(count, dtype=np.float64)
        z = 1.0 - (2.0 * i + 1.0) / count
        r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        phi = i * math.pi * (3.0 - math.sqrt(5.0))
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    raise ConfigurationError(f"direction sampling implemented for d <= 3, got d={dim}")


@dataclass(frozen=True)
class ConfluenceEstimate:
    """Outcome of the contraction grid search."""

    alpha: float
    p_exponent: float
    box: tuple[float, float]
    resolution: int
    xi_samples: int
    worst_x: Array
    worst_xi: Array
    max_value: float  # the signed maximum of the form (= -alpha)


def confluence_alpha(
    model: DiffusionModel,
    p_exponent: float | None = None,
    box: tuple[float, float] = (-10.0, 10.0),
    resolution: int = 200,
    xi_samples: int = 720,
    drift_only: bool = False,
) -> ConfluenceEstimate:
    """Grid-search the contraction form; alpha is minus its sampled maximum.

    p_exponent=None scans p in {1, 1.5, 2-1e-6} and keeps the best
    (largest) alpha.  drift_only evaluates the <sym(Db) xi, xi> part
    alone, which recovers the extreme eigenvalue of the symmetrised
    Jacobian when the drift is linear.  A nonnegative maximum means the
    sampled region contradicts contraction; that is reported as an error
    with the witnessing point and direction.
    """
    if p_exponent is not None and not (1.0 <= p_exponent < 2.0):
        raise ConfigurationError(f"p_exponent must lie in [1, 2), got {p_exponent}")
    if resolution < 2 or xi_samples < 1:
        raise ConfigurationError("resolution must be >= 2 and xi_samples >= 1")
    lo, hi = box
    if not lo < hi:
        raise ConfigurationError(f"box must be an increasing interval, got {box}")
    d = model.dim
    xi = _unit_directions(d, xi_samples)
    n_xi = xi.shape[0]
    p_values = (p_exponent,) if p_exponent is not None else _P_SCAN

    axes = [np.linspace(lo, hi, resolution)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    cells = np.stack([m.ravel() for m in mesh], axis=1)

    best: dict[float, float] = {p: -math.inf for p in p_values}
    witness: dict[float, tuple[Array, Array]] = {}
    for start in range(0, cells.shape[0], _CHUNK_CELLS):
        x = cells[start : start + _CHUNK_CELLS]
        jac = model.drift_jacobian(x)
        sym = 0.5 * (jac + np.swapaxes(jac, -1, -2))
        term1 = np.einsum("cij,ni,nj->cn", sym, xi, xi)
        if drift_only:
            contract2 = norm2 = 0.0
        else:
            sj = model.sigma_jacobian(x)  # (..., i, j, l) = d_l sigma_ij
            v = np.einsum("cirl,nl->cnir", sj, xi)
            dots = np.einsum("cnir,ni->cnr", v, xi)
            contract2 = np.einsum("cnr,cnr->cn", dots, dots)
            norm2 = np.einsum("cnir,cnir->cn", v, v)
        for p in p_values:
            if drift_only:
                form = term1
            else:
                form = term1 + 0.5 * ((p - 2.0) * contract2 + norm2)
            flat = int(np.argmax(form))
            val = float(form.flat[flat])
            if val > best[p]:
                best[p] = val
                ci, ni = np.unravel_index(flat, form.shape)
                witness[p] = (x[ci].copy(), xi[ni].copy())

    p_best = max(p_values, key=lambda p: -best[p])
    max_value = best[p_best]
    wx, wxi = witness[p_best]
    if max_value >= 0.0:
        raise DataError(
            "confluence violated on the sampled region: form value "
            f"{max_value:.6g} >= 0 at x={wx.tolist()}, xi={wxi.tolist()}"
        )
    return ConfluenceEstimate(
        alpha=-max_value,
        p_exponent=p_best,
        box=(float(lo), float(hi)),
        resolution=resolution,
        xi_samples=n_xi,
        worst_x=wx,
        worst_xi=wxi,
        max_value=max_value,
    )


def bakry_emery_alpha(rho: float, kappa: float, sigma_lower: float, d: int) -> float:
    """Curvature-condition contraction rate: rho (kappa/sigma_lower)^(-1/2)
    for d >= 2, rho for d = 1."""
    if not (rho > 0.0 and kappa > 0.0 and sigma_lower > 0.0):
        raise ConfigurationError("rho, kappa and sigma_lower must be positive")
    if d < 1:
        raise ConfigurationError(f"dimension must be >= 1, got {d}")
    if d == 1:
        return rho
    return rho * (kappa / sigma_lower) ** -0.5


def gradient_bound(f_lip: float, alpha: float) -> float:
    """sup |grad phi| <= [f]_1 / alpha for the centered-source solution."""
    if not alpha > 0.0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    if f_lip < 0.0:
        raise ConfigurationError(f"f_lip must be >= 0, got {f_lip}")
    return f_lip / alpha


# ---------------------------------------------------------------------------
# Mollification
# ---------------------------------------------------------------------------


def _bump(u_sq: Array) -> Array:
    """Unnormalised bump exp(-1/(1-|u|^2)) on |u| < 1, vectorised on |u|^2."""
    out = np.zeros_like(u_sq)
    inside = u_sq < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u_sq[inside]))
    return out


@dataclass(frozen=True)
class MollifiedFunction:
    """Smooth approximation f_delta = f * eta_delta with query methods.

    c_eta is the first absolute moment of the normalised kernel, so
    sup |f_delta - f| <= c_eta * delta * [f]_1 for Lipschitz f.
    """

    delta: float
    dim: int
    c_eta: float
    _f: Callable[[Array], Array]
    _nodes: Array  # (Q, d) kernel quadrature nodes in the unit ball
    _weights: Array  # (Q,) normalised: sums to 1
    _grad_weights: Array  # (Q, d) weights against the differentiated kernel

    def value(self, x: Array) -> Array:
        x = np.asarray(x, dtype=np.float64)
        shifted = x[..., None, :] - self.delta * self._nodes  # (..., Q, d)
        return np.einsum("q,...q->...", self._weights, self._f(shifted))

    def gradient(self, x: Array) -> Array:
        x = np.asarray(x, dtype=np.float64)
        shifted = x[..., None, :] - self.delta * self._nodes
        return np.einsum("qi,...q->...i", self._grad_weights, self._f(shifted)) / self.delta

    def sup_error(self, f_lip: float) -> float:
        """Uniform distance bound c_eta * delta * [f]_1."""
        return self.c_eta * self.delta * f_lip


def mollify(
    f: Callable[[Array], Array],
    delta: float,
    dim: int,
    nodes_per_axis: int = 32,
) -> MollifiedFunction:
    """Smooth a Lipschitz source by convolution with the scaled bump kernel.

    f maps (..., d) -> (...).  Quadrature is tensor Gauss-Legendre with
    nodes_per_axis points per axis on the kernel support; the discrete
    kernel mass is renormalised to exactly 1, which makes affine f
    reproduce exactly (symmetric nodes kill the odd moments).  Gradients
    use the differentiated kernel, so f itself is never differentiated.
    """
    if not delta > 0.0:
        raise ConfigurationError(f"delta must be positive, got {delta}")
    if dim not in (1, 2):
        raise ConfigurationError(
            f"mollification quadrature supports d <= 2, got d={dim}"
        )
    x1, w1 = np.polynomial.legendre.leggauss(nodes_per_axis)
    if dim == 1:
        nodes = x1[:, None]
        w = w1
    else:
        nodes = np.stack([m.ravel() for m in np.meshgrid(x1, x1, indexing="ij")], axis=1)
        w = np.outer(w1, w1).ravel()
    u_sq = np.einsum("qi,qi->q", nodes, nodes)
    eta = _bump(u_sq)
    mass = float(w @ eta)
    weights = w * eta / mass
    c_eta = float(weights @ np.sqrt(u_sq))
    # grad eta(u) = eta(u) * (-2u / (1-|u|^2)^2); zero outside the ball
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(u_sq < 1.0, -2.0 / (1.0 - u_sq) ** 2, 0.0)
    grad_weights = (w * eta * factor / mass)[:, None] * nodes
    return MollifiedFunction(
        delta=float(delta),
        dim=dim,
        c_eta=c_eta,
        _f=f,
        _nodes=nodes,
        _weights=weights,
        _grad_weights=grad_weights,
    )


def kernel_mass(dim: int, nodes_per_axis: int) -> float:
    """Quadrature mass of the unnormalised bump at a given rule size (used
    to check that the discrete normalisation is stable under refinement)."""
    x1, w1 = np.polynomial.legendre.leggauss(nodes_per_axis)
    if dim == 1:
        u_sq = x1 * x1
        w = w1
    elif dim == 2:
        g = np.meshgrid(x1, x1, indexing="ij")
        u_sq = (g[0] ** 2 + g[1] ** 2).ravel()
        w = np.outer(w1, w1).ravel()
    else:
        raise ConfigurationError(f"kernel quadrature supports d <= 2, got d={dim}")
    return float(w @ _bump(u_sq))
