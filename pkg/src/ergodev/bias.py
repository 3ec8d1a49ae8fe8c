"""Second-order bias correctors for the weighted occupation measure.

A third-order Taylor expansion of a test function phi along one Euler step
leaves three deterministic remainder terms.  With x the pre-step point,
gamma the step, b = b(x), s = sigma(x) and w = s U:

* third-derivative term (all beta): the double integral over (t, u) of

      Lambda(t, u, x) = E_U [ D3phi(x + gamma b + u t sqrt(gamma) w)[w, w, w] ],

  weighted by (1 - t) t, then scaled by gamma^(3/2);
* drift curvature term (only when the third derivative is Lipschitz,
  beta = 1): gamma^2 * int_0^1 (1-t) Tr(D2phi(x + t gamma b) b b*) dt;
* increment term (beta = 1): (gamma / 2) *
  Tr[(D2phi(x + gamma b) - D2phi(x)) Sigma(x)].

The (t, u) integrals are replaced by the M-point midpoint quantisation of
the uniform law (nodes (2i-1)/(2M)); the expectation over U is exact
enumeration for rademacher innovations and tensor Gauss-Hermite for
gaussian ones.  Totals are normalised by sqrt(Gamma_n).

Every computed increment is certified against its own Hoelder bound while
it is accumulated: the quantised sum obeys

    |increment| <= gamma^((3+beta)/2) [phi```]_beta sup|sigma|^(3+beta)
                   m_(3+beta) q_M,

with m the quadrature moment of |U| and q_M the quantised weight integral;
the accumulator records the worst observed ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .models import DiffusionModel, Innovation, TestFunction
from .steps import StepSequence

Array = np.ndarray

# Elements per third-derivative evaluation block; bounds memory while
# keeping the blocking independent of the batch size (bit-stability).
_BLOCK_BUDGET = 1 << 18


def _midpoint_nodes(M: int) -> Array:
    """Midpoint quantisation of the uniform law on (0, 1): (2i-1)/(2M)."""
    if M < 1:
        raise ConfigurationError(f"quantisation size M must be >= 1, got {M}")
    return (2.0 * np.arange(1, M + 1) - 1.0) / (2.0 * M)


def lambda_term(
    model: DiffusionModel,
    phi: TestFunction,
    x: Array,
    gamma_k: float,
    t: float,
    u: float,
    innov: Innovation,
) -> Array:
    """Lambda(t, u, x): inner expectation of the third-derivative contraction.

    Vectorised over leading axes of x; the expectation over the innovation
    is exact enumeration (rademacher) or tensor Gauss-Hermite (gaussian).
    """
    x = np.asarray(x, dtype=np.float64)
    nodes, weights = innov.quadrature()
    b = model.drift(x)
    s = model.sigma(x)
    w = np.einsum("...ir,qr->q...i", s, nodes)  # (Q, ..., d)
    base = x + gamma_k * b
    y = base[None] + (u * t * math.sqrt(gamma_k)) * w
    third = phi.third(y)  # (Q, ..., d, d, d)
    contr = np.einsum("q...xyz,q...x,q...y,q...z->q...", third, w, w, w)
    return np.einsum("q,q...->...", weights, contr)


def sample_lambda_integrand(
    model: DiffusionModel,
    phi: TestFunction,
    x: Array,
    gamma_k: float,
    t: float,
    u: float,
    draws: Array,
) -> Array:
    """Realised integrand D3phi(x + gamma b + u t sqrt(gamma) w)[w,w,w] for
    given innovation draws (n, r); x is a single point (d,).  Used as the
    Monte Carlo oracle for lambda_term."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    b = model.drift(x)
    s = model.sigma(x)
    w = np.einsum("ir,nr->ni", s, np.asarray(draws, dtype=np.float64))
    y = (x + gamma_k * b)[None, :] + (u * t * math.sqrt(gamma_k)) * w
    third = phi.third(y)
    return np.einsum("nxyz,nx,ny,nz->n", third, w, w, w)


@dataclass
class BiasTerms:
    """Normalised corrector pieces, one entry per trajectory."""

    third_term: Array  # third-derivative double integral / sqrt(Gamma_n)
    drift_term: Array  # beta = 1 drift curvature piece / sqrt(Gamma_n)
    increment_term: Array  # beta = 1 hessian increment piece / sqrt(Gamma_n)

    @property
    def second_order(self) -> Array:
        """The corrector added to the plotted statistic (drift + increment)."""
        return self.drift_term + self.increment_term

    @property
    def full(self) -> Array:
        """The full centering corrector (all three pieces)."""
        return self.third_term + self.drift_term + self.increment_term


class BiasAccumulator:
    """Per-step accumulation of the corrector pieces along a batch.

    Plugs into the scheme engine as a step hook: update(x_pre, k, gamma_k)
    with x_pre of shape (B, d).  Results for a trajectory depend only on
    its own path, never on the batch around it.
    """

    def __init__(
        self,
        model: DiffusionModel,
        phi: TestFunction,
        innov: Innovation,
        beta: float = 1.0,
        M: int = 10,
    ):
        if not (0.0 < beta <= 1.0):
            raise ConfigurationError(f"beta must lie in (0, 1], got {beta}")
        if phi.third is None:
            raise ConfigurationError(f"test function {phi.name!r} has no third derivative")
        if beta == 1.0 and phi.hessian is None:
            raise ConfigurationError(
                f"beta = 1 corrector needs the hessian of {phi.name!r}"
            )
        self.model = model
        self.phi = phi
        self.innov = innov
        self.beta = float(beta)
        self.M = int(M)

        t = _midpoint_nodes(self.M)
        self._t_nodes = t
        # flattened (t_i, u_j) products and their quantisation weights
        self._pair_scale = np.repeat(t, self.M) * np.tile(t, self.M)
        self._pair_weight = np.repeat((1.0 - t) * t, self.M) / float(self.M * self.M)
        self._drift_weight = (1.0 - t) / float(self.M)
        self._iw_nodes, self._iw_weights = innov.quadrature()
        d = model.dim
        q = self._iw_nodes.shape[0]
        self._pair_block = max(1, _BLOCK_BUDGET // (q * d**3))

        # Hoelder certificate pieces for the per-step domination check.
        self._holder = phi.third_holder(self.beta) if phi.third_holder else math.inf
        norms = np.linalg.norm(self._iw_nodes, axis=1) ** (3.0 + self.beta)
        self._quad_abs_moment = float(self._iw_weights @ norms)
        self._q_m = float(
            np.sum(self._pair_weight * self._pair_scale**self.beta)
        )

        self._sum_third = None
        self._sum_drift = None
        self._sum_incr = None
        self.max_certificate_ratio = 0.0
        self.steps_seen = 0

    # ------------------------------------------------------------------
    def _ensure(self, B: int) -> None:
        if self._sum_third is None:
            from .scheme import _BatchNeumaier

            self._sum_third = _BatchNeumaier((B,))
            self._sum_drift = _BatchNeumaier((B,))
            self._sum_incr = _BatchNeumaier((B,))

    def update(self, x: Array, k: int, gamma_k: float) -> None:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        B, d = x.shape
        self._ensure(B)
        b = self.model.drift(x)
        s = self.model.sigma(x)
        w = np.einsum("bir,qr->qbi", s, self._iw_nodes)  # (Q, B, d)
        base = x + gamma_k * b
        sq = math.sqrt(gamma_k)

        # third-derivative double integral, quantised over (t, u)
        lam_weighted = np.zeros(B)
        P = self._pair_scale.shape[0]
        for lo in range(0, P, self._pair_block):
            hi = min(lo + self._pair_block, P)
            sc = self._pair_scale[lo:hi] * sq  # (p,)
            y = base[None, None] + sc[:, None, None, None] * w[None]  # (p, Q, B, d)
            third = self.phi.third(y)
            contr = np.einsum("pqbxyz,qbx,qby,qbz->pqb", third, w, w, w)
            lam = np.einsum("q,pqb->pb", self._iw_weights, contr)
            lam_weighted += np.einsum("p,pb->b", self._pair_weight[lo:hi], lam)
        delta_third = gamma_k**1.5 * lam_weighted

        # certificate: the quantised sum can never exceed its Hoelder bound
        if math.isfinite(self._holder):
            sig_pow = self.model.squared_noise(x) ** ((3.0 + self.beta) / 2.0)
            cert = (
                gamma_k ** ((3.0 + self.beta) / 2.0)
                * self._holder
                * sig_pow
                * self._quad_abs_moment
                * self._q_m
            )
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = np.where(cert > 0.0, np.abs(delta_third) / cert, 0.0)
            self.max_certificate_ratio = max(self.max_certificate_ratio, float(ratio.max()))

        self._sum_third.add(delta_third)

        if self.beta == 1.0:
            # drift curvature: gamma^2 int (1-t) Tr(D2phi(x + t gamma b) b b*)
            y = x[None] + (gamma_k * self._t_nodes)[:, None, None] * b[None]  # (M, B, d)
            hess = self.phi.hessian(y)  # (M, B, d, d)
            quad = np.einsum("mbij,bi,bj->mb", hess, b, b)
            drift_piece = gamma_k**2 * np.einsum("m,mb->b", self._drift_weight, quad)
            self._sum_drift.add(drift_piece)

            # hessian increment against the diffusion matrix
            h1 = self.phi.hessian(base)
            h0 = self.phi.hessian(x)
            sig_mat = self.model.diffusion_matrix(x)
            incr_piece = 0.5 * gamma_k * np.einsum("bij,bij->b", h1 - h0, sig_mat)
            self._sum_incr.add(incr_piece)

        self.steps_seen += 1

    # ------------------------------------------------------------------
    def finalize(self, gamma_total: float) -> BiasTerms:
        if self._sum_third is None:
            raise ConfigurationError("finalize called before any accumulation")
        root = math.sqrt(gamma_total)
        zero = np.zeros_like(self._sum_third.value())
        return BiasTerms(
            third_term=self._sum_third.value() / root,
            drift_term=(self._sum_drift.value() / root) if self.beta == 1.0 else zero,
            increment_term=(self._sum_incr.value() / root) if self.beta == 1.0 else zero,
        )


def bias_radius(
    phi: TestFunction,
    model: DiffusionModel,
    innov: Innovation,
    steps: StepSequence,
    n: int,
    beta: float,
) -> float:
    """Deterministic radius dominating the normalised third-derivative term.

    a_n = [phi```]_beta sup|sigma|^(3+beta) E|U|^(3+beta)
          / ((1+beta)(2+beta)(3+beta)) * Gamma_n((3+beta)/2) / sqrt(Gamma_n).

    Vanishing Hoelder seminorm (e.g. quadratic observables) gives 0.
    """
    if not (0.0 < beta <= 1.0):
        raise ConfigurationError(f"beta must lie in (0, 1], got {beta}")
    if phi.third_holder is None:
        raise ConfigurationError(f"test function {phi.name!r} declares no Hoelder seminorm")
    holder = phi.third_holder(beta)
    if holder == 0.0:
        return 0.0
    if not math.isfinite(model.sigma_sup):
        return math.inf
    coef = (
        holder
        * model.sigma_sup ** (3.0 + beta)
        * innov.abs_moment(3.0 + beta)
        / ((1.0 + beta) * (2.0 + beta) * (3.0 + beta))
    )
    return coef * steps.bias_ratio(n, beta)
