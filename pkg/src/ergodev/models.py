"""Diffusion models, test functions, and innovation laws.

Every callable here is vectorised over leading axes: positions have shape
(..., d), drifts (..., d), diffusion coefficients (..., d, r), Jacobians
(..., d, d), and so on.  The same functions therefore serve the sequential
scheme, the batched Monte Carlo engine, and grid searches.

The registry exposes the built-in experiment models by name; unknown names
raise a ConfigurationError that lists what is available.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, ClassVar

import numpy as np

from .errors import ConfigurationError

Array = np.ndarray


# ---------------------------------------------------------------------------
# Innovations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Innovation:
    """Innovation law for the Euler recursion: centred, unit covariance.

    kind is "gaussian" (standard normal in R^r) or "rademacher"
    (independent +-1 coordinates).  Both are symmetric, so all odd moments
    vanish -- the bias expansion relies on that.
    """

    kind: str
    dim: int

    _GH_NODES_PER_AXIS = 8
    _RADEMACHER_MAX_DIM = 20

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "rademacher"):
            raise ConfigurationError(
                f"unknown innovation kind {self.kind!r}; choose 'gaussian' or 'rademacher'"
            )
        if self.dim < 1:
            raise ConfigurationError(f"innovation dimension must be >= 1, got {self.dim}")

    # -- sampling -----------------------------------------------------------
    def draw(self, rng: np.random.Generator, n: int) -> Array:
        """n innovation vectors, shape (n, r).  Stream-stable under chunking."""
        if self.kind == "gaussian":
            return rng.standard_normal((n, self.dim))
        return rng.integers(0, 2, size=(n, self.dim)).astype(np.float64) * 2.0 - 1.0

    # -- exact moments ------------------------------------------------------
    def abs_moment(self, p: float) -> float:
        """E |U|^p for the Euclidean norm of the innovation vector."""
        r = self.dim
        if self.kind == "rademacher":
            # |U| = sqrt(r) almost surely.
            return float(r) ** (p / 2.0)
        # |U| follows a chi distribution with r degrees of freedom.
        return 2.0 ** (p / 2.0) * math.exp(math.lgamma((r + p) / 2.0) - math.lgamma(r / 2.0))

    # -- quadrature for E over U --------------------------------------------
    def quadrature(self) -> tuple[Array, Array]:
        """Nodes (Q, r) and weights (Q,) so that E f(U) ~= sum w_q f(node_q).

        Rademacher: exact enumeration of all 2^r sign vectors (guarded at
        r <= 20).  Gaussian: tensorised Gauss-Hermite with 8 nodes per axis.
        Nodes are symmetric in both cases, so odd polynomial moments vanish
        exactly in the quadrature as well.
        """
        r = self.dim
        if self.kind == "rademacher":
            if r > self._RADEMACHER_MAX_DIM:
                raise ConfigurationError(
                    f"rademacher enumeration needs 2^r points; r={r} exceeds the "
                    f"guard r <= {self._RADEMACHER_MAX_DIM}"
                )
            nodes = np.array(list(itertools.product((-1.0, 1.0), repeat=r)))
            weights = np.full(nodes.shape[0], 1.0 / nodes.shape[0])
            return nodes, weights
        x, w = np.polynomial.hermite.hermgauss(self._GH_NODES_PER_AXIS)
        grids = np.meshgrid(*([x] * r), indexing="ij")
        nodes = math.sqrt(2.0) * np.stack([g.ravel() for g in grids], axis=-1)
        wgrids = np.meshgrid(*([w] * r), indexing="ij")
        weights = np.ones(nodes.shape[0])
        for g in wgrids:
            weights = weights * g.ravel()
        weights = weights / weights.sum()
        return nodes, weights

    def params(self) -> dict[str, object]:
        return {"innovation": self.kind, "innovation_dim": self.dim}


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """A smooth observable with the seminorms the bounds consume.

    grad_sup is sup |grad f| (None/inf when unbounded); third_holder(beta)
    is the beta-Hoelder seminorm of the third derivative.  Higher
    derivatives may be None when a use case does not need them.
    """

    # "test function" is analysis vocabulary; keep pytest from collecting it
    __test__: ClassVar[bool] = False

    name: str
    value: Callable[[Array], Array]
    gradient: Callable[[Array], Array] | None = None
    hessian: Callable[[Array], Array] | None = None
    third: Callable[[Array], Array] | None = None
    grad_sup: float = math.inf
    third_holder: Callable[[float], float] | None = None

    @property
    def lipschitz(self) -> float:
        """[f]_1; equals sup |grad f| for the C^1 functions used here."""
        return self.grad_sup


# ---------------------------------------------------------------------------
# Diffusion models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionModel:
    """Time-homogeneous diffusion: drift b, diffusion coefficient sigma.

    sigma_jacobian returns the tensor J with J[..., i, j, l] = d sigma_ij / d x_l,
    i.e. J[..., :, j, :] is the Jacobian of the j-th column of sigma.
    sigma_sup is sup_x of the Frobenius norm of sigma (sqrt of the trace of
    the diffusion matrix); squared_noise uses the same convention.
    """

    name: str
    dim: int
    noise_dim: int
    drift: Callable[[Array], Array]
    sigma: Callable[[Array], Array]
    drift_jacobian: Callable[[Array], Array] | None = None
    sigma_jacobian: Callable[[Array], Array] | None = None
    Sigma: Callable[[Array], Array] | None = None
    sigma_sup: float = math.inf
    sigma_lip: float = math.inf
    params: dict[str, object] = field(default_factory=dict)

    def diffusion_matrix(self, x: Array) -> Array:
        """Sigma(x) = sigma sigma^T, (..., d, d)."""
        if self.Sigma is not None:
            return self.Sigma(x)
        s = self.sigma(x)
        return np.einsum("...ir,...jr->...ij", s, s)

    def squared_noise(self, x: Array) -> Array:
        """|sigma(x)|_F^2 = trace of the diffusion matrix, shape (...,)."""
        sig = self.diffusion_matrix(x)
        return np.trace(sig, axis1=-2, axis2=-1)


def generator_apply(model: DiffusionModel, phi: TestFunction, x: Array) -> Array:
    """Infinitesimal generator: b . grad phi + (1/2) Tr(Sigma D2 phi)."""
    x = np.asarray(x, dtype=np.float64)
    b = model.drift(x)
    grad = phi.gradient(x)
    hess = phi.hessian(x)
    sig = model.diffusion_matrix(x)
    return np.einsum("...i,...i->...", b, grad) + 0.5 * np.einsum("...ij,...ij->...", sig, hess)


def carre_du_champ(model: DiffusionModel, phi: TestFunction, x: Array) -> Array:
    """|sigma^T grad phi|^2, the squared diffusion seen by phi."""
    x = np.asarray(x, dtype=np.float64)
    s = model.sigma(x)
    grad = phi.gradient(x)
    v = np.einsum("...ir,...i->...r", s, grad)
    return np.einsum("...r,...r->...", v, v)


# ---------------------------------------------------------------------------
# Registry bundles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelBundle:
    """A registry entry: model, bound test function phi and/or plain
    observable f, plus the experiment defaults (innovation law, start mode).
    """

    name: str
    model: DiffusionModel
    innovation: Innovation
    x0_mode: str  # "zero" or "pm1" (uniform on {-1,+1}^d)
    phi: TestFunction | None = None
    f_obs: TestFunction | None = None
    params: dict[str, object] = field(default_factory=dict)

    def metadata(self) -> dict[str, object]:
        out: dict[str, object] = {"model": self.name, "x0": self.x0_mode}
        out.update({f"model_{k}": v for k, v in self.params.items()})
        out.update(self.innovation.params())
        return out


# -- 1d hypoelliptic family --------------------------------------------------


def _hypo1d_model(eps: float, sigma_variant: str) -> DiffusionModel:
    if sigma_variant not in ("text", "caption"):
        raise ConfigurationError(
            f"sigma_variant must be 'text' or 'caption', got {sigma_variant!r}"
        )

    def drift(x: Array) -> Array:
        return -0.5 * x

    def drift_jac(x: Array) -> Array:
        return np.full(x.shape[:-1] + (1, 1), -0.5)

    if sigma_variant == "text":

        def sigma(x: Array) -> Array:
            return np.cos(x)[..., None]

        def sigma_jac(x: Array) -> Array:
            return (-np.sin(x))[..., None, None]

        sigma_sup = 1.0
        sigma_lip = 1.0
    else:
        # Degenerate documentation variant: sigma(x) = x + eps cos x is
        # unbounded, so every sup-norm bound built on it is vacuous.

        def sigma(x: Array) -> Array:
            return (x + eps * np.cos(x))[..., None]

        def sigma_jac(x: Array) -> Array:
            return (1.0 - eps * np.sin(x))[..., None, None]

        sigma_sup = math.inf
        sigma_lip = 1.0 + eps

    return DiffusionModel(
        name="hypo1d",
        dim=1,
        noise_dim=1,
        drift=drift,
        drift_jacobian=drift_jac,
        sigma=sigma,
        sigma_jacobian=sigma_jac,
        sigma_sup=sigma_sup,
        sigma_lip=sigma_lip,
        params={"eps": eps, "sigma_variant": sigma_variant},
    )


def _phi_drifted(eps: float) -> TestFunction:
    return TestFunction(
        name="x+eps*cos(x)",
        value=lambda x: x[..., 0] + eps * np.cos(x[..., 0]),
        gradient=lambda x: 1.0 - eps * np.sin(x),
        hessian=lambda x: (-eps * np.cos(x))[..., None],
        third=lambda x: (eps * np.sin(x))[..., None, None],
        grad_sup=1.0 + eps,
        # third derivative is eps*sin, whose beta-Hoelder seminorm is
        # eps * 2^(1-beta) (attained at argument gap 2 for beta < 1).
        third_holder=lambda beta: eps * 2.0 ** (1.0 - beta),
    )


def _phi_cos() -> TestFunction:
    return TestFunction(
        name="cos(x)",
        value=lambda x: np.cos(x[..., 0]),
        gradient=lambda x: -np.sin(x),
        hessian=lambda x: (-np.cos(x))[..., None],
        third=lambda x: np.sin(x)[..., None, None],
        grad_sup=1.0,
        third_holder=lambda beta: 2.0 ** (1.0 - beta),
    )


def _build_hypo1d_drifted(
    eps: float = 0.01, sigma_variant: str = "text", innovation: str = "rademacher"
) -> ModelBundle:
    return ModelBundle(
        name="hypo1d-drifted",
        model=_hypo1d_model(eps, sigma_variant),
        phi=_phi_drifted(eps),
        innovation=Innovation(innovation, 1),
        x0_mode="pm1",
        params={"eps": eps, "sigma_variant": sigma_variant},
    )


def _build_hypo1d_cos(
    eps: float = 0.01, sigma_variant: str = "text", innovation: str = "rademacher"
) -> ModelBundle:
    return ModelBundle(
        name="hypo1d-cos",
        model=_hypo1d_model(eps, sigma_variant),
        phi=_phi_cos(),
        innovation=Innovation(innovation, 1),
        x0_mode="pm1",
        params={"eps": eps, "sigma_variant": sigma_variant},
    )


# -- 1d Ornstein-Uhlenbeck sanity model ---------------------------------------


def _build_ou1d(innovation: str = "gaussian") -> ModelBundle:
    def sigma(x: Array) -> Array:
        return np.ones(x.shape[:-1] + (1, 1))

    model = DiffusionModel(
        name="ou1d",
        dim=1,
        noise_dim=1,
        drift=lambda x: -0.5 * x,
        drift_jacobian=lambda x: np.full(x.shape[:-1] + (1, 1), -0.5),
        sigma=sigma,
        sigma_jacobian=lambda x: np.zeros(x.shape[:-1] + (1, 1, 1)),
        sigma_sup=1.0,
        sigma_lip=0.0,
    )
    phi = TestFunction(
        name="x^2",
        value=lambda x: x[..., 0] ** 2,
        gradient=lambda x: 2.0 * x,
        hessian=lambda x: np.full(x.shape[:-1] + (1, 1), 2.0),
        third=lambda x: np.zeros(x.shape[:-1] + (1, 1, 1)),
        grad_sup=math.inf,
        third_holder=lambda beta: 0.0,
    )
    return ModelBundle(
        name="ou1d",
        model=model,
        phi=phi,
        innovation=Innovation(innovation, 1),
        x0_mode="zero",
    )


# -- d-dimensional OU companion used by the almost-sure CLT module ------------


def _build_asclt_ou(dim: int = 1, innovation: str = "gaussian") -> ModelBundle:
    d = int(dim)

    def sigma(x: Array) -> Array:
        eye = np.eye(d)
        return np.broadcast_to(eye, x.shape[:-1] + (d, d)).copy()

    model = DiffusionModel(
        name="asclt-ou",
        dim=d,
        noise_dim=d,
        drift=lambda x: -0.5 * x,
        drift_jacobian=lambda x: np.broadcast_to(-0.5 * np.eye(d), x.shape[:-1] + (d, d)).copy(),
        sigma=sigma,
        sigma_jacobian=lambda x: np.zeros(x.shape[:-1] + (d, d, d)),
        sigma_sup=math.sqrt(d),
        sigma_lip=0.0,
        params={"dim": d},
    )
    return ModelBundle(
        name="asclt-ou",
        model=model,
        innovation=Innovation(innovation, d),
        x0_mode="zero",
        params={"dim": d},
    )


# -- 2d confluent model --------------------------------------------------------


def _confluent2d_sigma_parts(x: Array) -> tuple[Array, ...]:
    """Cholesky entries and Sigma entries shared by sigma and its Jacobian."""
    x1 = x[..., 0]
    x2 = x[..., 1]
    s11 = 0.5 * np.cos(x1 + x2) + 1.0
    s12 = 0.25 * np.sin(x1) * np.sin(x2)
    s22 = 1.0 - 0.5 * np.sin(x2)
    l11 = np.sqrt(s11)
    l21 = s12 / l11
    c = s22 - l21**2
    l22 = np.sqrt(c)
    return x1, x2, s11, s12, s22, l11, l21, c, l22


def _build_confluent2d(
    beta: float = 0.5, f_variant: str = "display", innovation: str = "gaussian"
) -> ModelBundle:
    if not (0.0 < beta <= 1.0):
        raise ConfigurationError(f"beta must lie in (0, 1], got {beta}")
    if f_variant not in ("display", "caption"):
        raise ConfigurationError(f"f_variant must be 'display' or 'caption', got {f_variant!r}")

    jac = np.array([[-4.0, 6.0], [-5.0, -5.0]])

    def drift(x: Array) -> Array:
        return np.einsum("ij,...j->...i", jac, x)

    def drift_jac(x: Array) -> Array:
        return np.broadcast_to(jac, x.shape[:-1] + (2, 2)).copy()

    def Sigma(x: Array) -> Array:
        _, _, s11, s12, s22, *_ = _confluent2d_sigma_parts(x)
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = s11
        out[..., 0, 1] = s12
        out[..., 1, 0] = s12
        out[..., 1, 1] = s22
        return out

    def sigma(x: Array) -> Array:
        _, _, _, _, _, l11, l21, _, l22 = _confluent2d_sigma_parts(x)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = l11
        out[..., 1, 0] = l21
        out[..., 1, 1] = l22
        return out

    def sigma_jac(x: Array) -> Array:
        x1, x2, s11, s12, s22, l11, l21, c, l22 = _confluent2d_sigma_parts(x)
        da = -0.5 * np.sin(x1 + x2)  # d s11 / d x1 = d s11 / d x2
        db1 = 0.25 * np.cos(x1) * np.sin(x2)
        db2 = 0.25 * np.sin(x1) * np.cos(x2)
        dl11_1 = da / (2.0 * l11)
        dl11_2 = dl11_1
        dl21_1 = (db1 - l21 * dl11_1) / l11
        dl21_2 = (db2 - l21 * dl11_2) / l11
        dc_1 = -2.0 * l21 * dl21_1
        dc_2 = -0.5 * np.cos(x2) - 2.0 * l21 * dl21_2
        dl22_1 = dc_1 / (2.0 * l22)
        dl22_2 = dc_2 / (2.0 * l22)
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = dl11_1
        out[..., 0, 0, 1] = dl11_2
        out[..., 1, 0, 0] = dl21_1
        out[..., 1, 0, 1] = dl21_2
        out[..., 1, 1, 0] = dl22_1
        out[..., 1, 1, 1] = dl22_2
        return out

    model = DiffusionModel(
        name="confluent2d",
        dim=2,
        noise_dim=2,
        drift=drift,
        drift_jacobian=drift_jac,
        sigma=sigma,
        sigma_jacobian=sigma_jac,
        Sigma=Sigma,
        # sup of trace(Sigma) = 3, attained e.g. at (pi/2, -pi/2).  No tidy
        # Lipschitz constant for the Cholesky factor, so sigma_lip stays inf.
        sigma_sup=math.sqrt(3.0),
        params={"beta": beta},
    )

    if f_variant == "display":

        def g(r: Array) -> Array:
            return r ** (1.0 + beta) / (1.0 + r**beta)

        def g_prime(r: Array) -> Array:
            rb = r**beta
            return rb * (1.0 + beta + rb) / (1.0 + rb) ** 2

        f_lip = 1.0
    else:

        def g(r: Array) -> Array:
            rb = r**beta
            return rb / (1.0 + rb)

        def g_prime(r: Array) -> Array:
            rb = r**beta
            return beta * np.where(r > 0.0, rb / r, np.inf) / (1.0 + rb) ** 2

        f_lip = math.inf  # derivative blows up at the origin for beta < 1

    def f_value(x: Array) -> Array:
        return g(np.linalg.norm(x, axis=-1))

    def f_gradient(x: Array) -> Array:
        r = np.linalg.norm(x, axis=-1)
        safe = np.maximum(r, np.finfo(float).tiny)
        factor = np.where(r > 0.0, g_prime(safe) / safe, 0.0)
        return factor[..., None] * x

    f_obs = TestFunction(
        name=f"|x|^(1+b)/(1+|x|^b)" if f_variant == "display" else "|x|^b/(1+|x|^b)",
        value=f_value,
        gradient=f_gradient,
        grad_sup=f_lip,
    )
    return ModelBundle(
        name="confluent2d",
        model=model,
        f_obs=f_obs,
        innovation=Innovation(innovation, 2),
        x0_mode="zero",
        params={"beta": beta, "f_variant": f_variant},
    )


# ---------------------------------------------------------------------------
# Registry access
# ---------------------------------------------------------------------------

_REGISTRY: dict[str, Callable[..., ModelBundle]] = {
    "hypo1d-drifted": _build_hypo1d_drifted,
    "hypo1d-cos": _build_hypo1d_cos,
    "ou1d": _build_ou1d,
    "confluent2d": _build_confluent2d,
    "asclt-ou": _build_asclt_ou,
}


def registry_names() -> list[str]:
    return sorted(_REGISTRY)


def get_model(name: str, **params: object) -> ModelBundle:
    """Build a registry model by name; unknown names list the registry."""
    try:
        builder = _REGISTRY[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown model {name!r}; available models: {', '.join(registry_names())}"
        ) from None
    try:
        return builder(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for model {name!r}: {exc}") from None
