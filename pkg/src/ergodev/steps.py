"""Polynomially decreasing step sequences and their running sums.

A step sequence is gamma_k = gamma0 * k**(-theta) for k >= 1 with
theta in (0, 1].  Everything downstream (scheme weights, bound
normalisations, bias radii) is expressed through the partial sums

    Gamma_n(ell) = sum_{k=1..n} gamma_k**ell,

so this module keeps an incremental, compensated cache of those sums:
extending a cached sum from n0 to n costs O(n - n0) and agrees with a
fresh full summation to machine accuracy (the additions are performed
one term at a time in k order, so a continued cache is bit-identical
to a restart).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class _RunningSum:
    """Neumaier-compensated running sum of gamma_k**ell in k order."""

    n: int = 0
    total: float = 0.0
    comp: float = 0.0

    def add(self, term: float) -> None:
        t = self.total + term
        if abs(self.total) >= abs(term):
            self.comp += (self.total - t) + term
        else:
            self.comp += (term - t) + self.total
        self.total = t
        self.n += 1

    def value(self) -> float:
        return self.total + self.comp


@dataclass
class StepSequence:
    """gamma_k = gamma0 * k**(-theta), theta in (0, 1], gamma0 > 0."""

    theta: float
    gamma0: float = 1.0
    _cache: dict[float, _RunningSum] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not (0.0 < self.theta <= 1.0):
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if not (self.gamma0 > 0.0) or not math.isfinite(self.gamma0):
            raise ValueError(f"gamma0 must be positive and finite, got {self.gamma0}")

    # ------------------------------------------------------------------
    def gamma(self, k: int) -> float:
        """Step size at index k (the first step is k = 1).

        Delegates to the vectorised block path so that scalar and batch
        computations agree bit-for-bit (numpy and libm pow can differ in
        the last ulp).
        """
        if k < 1:
            raise ValueError(f"step index starts at 1, got {k}")
        return float(self.gamma_block(k, k + 1)[0])

    def gamma_block(self, k_lo: int, k_hi: int):
        """Vector of gamma_k for k in [k_lo, k_hi), as a numpy array."""
        import numpy as np

        if k_lo < 1 or k_hi < k_lo:
            raise ValueError(f"invalid step range [{k_lo}, {k_hi})")
        k = np.arange(k_lo, k_hi, dtype=np.float64)
        return self.gamma0 * k ** (-self.theta)

    # ------------------------------------------------------------------
    def gamma_sum(self, n: int, ell: float = 1.0) -> float:
        """Gamma_n(ell) = sum_{k<=n} gamma_k**ell, cached incrementally."""
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        if n == 0:
            return 0.0
        key = float(ell)
        g0 = self.gamma0**key
        exponent = -self.theta * key
        state = self._cache.get(key)
        if state is not None and state.n <= n:
            for k in range(state.n + 1, n + 1):
                state.add(g0 * float(k) ** exponent)
            return state.value()
        # Either no cache yet, or the request is below the cached horizon;
        # the cache only runs forward, so sum afresh (and keep the longer
        # of the two states).
        fresh = _RunningSum()
        for k in range(1, n + 1):
            fresh.add(g0 * float(k) ** exponent)
        if state is None:
            self._cache[key] = fresh
        return fresh.value()

    # ------------------------------------------------------------------
    def bias_ratio(self, n: int, beta: float) -> float:
        """Gamma_n((3+beta)/2) / sqrt(Gamma_n(1)).

        This is the deterministic factor multiplying the bias radius of the
        weighted occupation measure; beta is the Hoelder exponent of the
        third derivative of the test function, beta in (0, 1].
        """
        if not (0.0 < beta <= 1.0):
            raise ValueError(f"beta must lie in (0, 1], got {beta}")
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        return self.gamma_sum(n, (3.0 + beta) / 2.0) / math.sqrt(self.gamma_sum(n, 1.0))

    # ------------------------------------------------------------------
    def params(self) -> dict[str, float]:
        """Plain-dict view used for config round-trips and CSV metadata."""
        return {"theta": self.theta, "gamma0": self.gamma0}


def fsum_gamma_sum(theta: float, gamma0: float, n: int, ell: float = 1.0) -> float:
    """Reference implementation of Gamma_n(ell) via math.fsum (exact ordering).

    Slow; used by tests as the summation oracle.
    """
    return math.fsum(gamma0**ell * float(k) ** (-theta * ell) for k in range(1, n + 1))
