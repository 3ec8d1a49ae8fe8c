"""Decreasing-step Euler recursion and weighted occupation measures.

The recursion is

    X_{k} = X_{k-1} + gamma_k b(X_{k-1}) + sqrt(gamma_k) sigma(X_{k-1}) U_k,

and the empirical measure charges the *pre-step* points:

    nu_n(f) = (1/Gamma_n) sum_{k=1..n} gamma_k f(X_{k-1}).

Reproducibility contract: trajectory i of a run seeded with s draws from
``np.random.Generator(np.random.Philox(SeedSequence((s, i))))``; a random
start (when enabled) is drawn from that stream before any innovation.
Philox draws are stream-stable under chunking, every reduction below is
performed in a fixed order, and no result ever crosses trajectories, so
outputs are independent of batch size, chunk size, and worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, SimulationError
from .models import DiffusionModel, Innovation
from .steps import StepSequence

Array = np.ndarray

DEFAULT_CHUNK_STEPS = 2048


def make_stream(master_seed: int, index: int = 0) -> np.random.Generator:
    """The per-trajectory random stream (counter-based, split-safe)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((master_seed, index))))


def draw_x0(rng: np.random.Generator, mode: str, dim: int, value: Array | None = None) -> Array:
    """Initial condition; random modes consume the stream before innovations."""
    if value is not None:
        x0 = np.asarray(value, dtype=np.float64).reshape(dim)
        return x0.copy()
    if mode == "zero":
        return np.zeros(dim)
    if mode == "pm1":
        return rng.integers(0, 2, size=dim).astype(np.float64) * 2.0 - 1.0
    raise ConfigurationError(f"unknown start mode {mode!r}; choose 'zero' or 'pm1'")


# ---------------------------------------------------------------------------
# Weighted occupation accumulation (scalar path)
# ---------------------------------------------------------------------------


@dataclass
class NuAccumulator:
    """Running gamma-weighted sums, one compensated scalar per observable."""

    names: Sequence[str]
    _sums: dict[str, float] = field(default_factory=dict)
    _comps: dict[str, float] = field(default_factory=dict)
    gamma_total: float = 0.0
    _gamma_comp: float = 0.0

    def __post_init__(self) -> None:
        for name in self.names:
            self._sums[name] = 0.0
            self._comps[name] = 0.0

    @staticmethod
    def _add(total: float, comp: float, term: float) -> tuple[float, float]:
        t = total + term
        if abs(total) >= abs(term):
            comp += (total - t) + term
        else:
            comp += (term - t) + total
        return t, comp

    def update(self, gamma_k: float, values: dict[str, float]) -> None:
        self.gamma_total, self._gamma_comp = self._add(
            self.gamma_total, self._gamma_comp, gamma_k
        )
        for name, v in values.items():
            self._sums[name], self._comps[name] = self._add(
                self._sums[name], self._comps[name], gamma_k * v
            )

    def nu(self, name: str) -> float:
        g = self.gamma_total + self._gamma_comp
        return (self._sums[name] + self._comps[name]) / g


class _BatchNeumaier:
    """Elementwise compensated accumulation of per-chunk partial sums."""

    def __init__(self, shape: tuple[int, ...]):
        self.total = np.zeros(shape)
        self.comp = np.zeros(shape)

    def add(self, term: Array) -> None:
        t = self.total + term
        swap = np.abs(self.total) >= np.abs(term)
        self.comp += np.where(swap, (self.total - t) + term, (term - t) + self.total)
        self.total = t

    def value(self) -> Array:
        return self.total + self.comp


# ---------------------------------------------------------------------------
# Single-step transition (scalar path)
# ---------------------------------------------------------------------------


@dataclass
class SchemeState:
    """State after `step_index` completed Euler steps of one trajectory."""

    step_index: int
    x: Array
    rng: np.random.Generator
    accumulator: NuAccumulator | None = None


def new_state(
    model: DiffusionModel,
    seed: int,
    traj_index: int = 0,
    x0_mode: str = "zero",
    x0: Array | None = None,
    observables: Iterable[str] = (),
) -> SchemeState:
    rng = make_stream(seed, traj_index)
    x = draw_x0(rng, x0_mode, model.dim, x0)
    return SchemeState(step_index=0, x=x, rng=rng, accumulator=NuAccumulator(tuple(observables)))


def step(
    state: SchemeState,
    model: DiffusionModel,
    steps: StepSequence,
    innov: Innovation,
    observables: dict[str, Callable[[Array], Array]] | None = None,
) -> SchemeState:
    """Advance one Euler step, charging the pre-step point.

    Returns a new state sharing the (advanced) random stream.  Arithmetic
    mirrors the batch engine exactly, so a stepped trajectory is
    bit-identical to the corresponding row of a batch run.
    """
    k = state.step_index + 1
    gam = steps.gamma_block(k, k + 1)  # length-1 array, numpy pow path
    sqg = np.sqrt(gam)
    x_pre = state.x[None, :]  # (1, d)
    if state.accumulator is not None and observables:
        vals = {name: float(fn(x_pre)[0]) for name, fn in observables.items()}
        state.accumulator.update(float(gam[0]), vals)
    elif state.accumulator is not None:
        state.accumulator.update(float(gam[0]), {})
    u = innov.draw(state.rng, 1)  # (1, r)
    drift = model.drift(x_pre)
    sig = model.sigma(x_pre)
    x_new = x_pre + gam[0] * drift + sqg[0] * np.einsum("...ir,...r->...i", sig, u)
    if not np.all(np.isfinite(x_new)):
        raise SimulationError(f"trajectory left the finite range at step {k}", step=k)
    return SchemeState(step_index=k, x=x_new[0], rng=state.rng, accumulator=state.accumulator)


# ---------------------------------------------------------------------------
# Batched engine
# ---------------------------------------------------------------------------


@dataclass
class BatchResult:
    """Occupation averages for a batch of trajectories.

    nu maps observable name -> (B,) array of nu_n values; gamma_total is
    the common Gamma_n; x_final is (B, d).
    """

    indices: np.ndarray
    n: int
    gamma_total: float
    nu: dict[str, Array]
    x_final: Array
    hook_output: object | None = None


def run_batch(
    model: DiffusionModel,
    steps: StepSequence,
    innov: Innovation,
    n: int,
    seed: int,
    indices: Sequence[int],
    observables: dict[str, Callable[[Array], Array]] | None = None,
    x0_mode: str = "zero",
    x0: Array | None = None,
    step_hook=None,
    chunk_steps: int = DEFAULT_CHUNK_STEPS,
) -> BatchResult:
    """Simulate len(indices) trajectories for n steps, vectorised across
    the batch and sequential in the step index.

    step_hook, if given, must provide update(x_pre, k, gamma_k) taking the
    (B, d) pre-step positions; it is called once per step in order (used by
    the bias corrector).  Results for trajectory i depend only on
    (seed, i) and the parameters -- never on the batch composition.
    """
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    observables = observables or {}
    names = list(observables)
    B = len(indices)
    d = model.dim
    rngs = [make_stream(seed, int(i)) for i in indices]
    x = np.empty((B, d))
    for row, rng in enumerate(rngs):
        x[row] = draw_x0(rng, x0_mode, d, x0)

    # One accumulator over (trajectory, observable); the trailing column
    # holds the constant 1 so the Gamma_n denominator is accumulated through
    # the identical arithmetic as every numerator (nu of the constant 1 is
    # then exactly 1).  Additions happen once per step, elementwise, so the
    # result is bit-independent of chunking and batch composition.
    acc = _BatchNeumaier((B, len(names) + 1))
    xs = None

    k0 = 1
    while k0 <= n:
        k1 = min(k0 + chunk_steps, n + 1)
        K = k1 - k0
        gam = steps.gamma_block(k0, k1)
        sqg = np.sqrt(gam)
        U = np.stack([innov.draw(r, K) for r in rngs], axis=1)  # (K, B, r)
        if xs is None or xs.shape[0] != K:
            xs = np.empty((K, B, d))
        for j in range(K):
            xs[j] = x
            if step_hook is not None:
                step_hook.update(x, k0 + j, float(gam[j]))
            drift = model.drift(x)
            sig = model.sigma(x)
            x = x + gam[j] * drift + sqg[j] * np.einsum("...ir,...r->...i", sig, U[j])
        if not np.all(np.isfinite(x)):
            bad_rows = ~np.isfinite(xs).all(axis=2).all(axis=1)
            first_bad = int(np.argmax(bad_rows)) if bad_rows.any() else K
            failing = k0 + first_bad - 1 if bad_rows.any() else k1 - 1
            raise SimulationError(
                f"trajectory left the finite range at step {failing}", step=failing
            )
        vals = np.empty((K, B, len(names) + 1))
        vals[..., -1] = 1.0
        for col, name in enumerate(names):
            vals[..., col] = observables[name](xs)
        for j in range(K):
            acc.add(gam[j] * vals[j])
        k0 = k1

    totals = acc.value()  # (B, n_obs + 1)
    gamma_col = totals[:, -1]
    gamma_total = float(gamma_col[0])
    nu = {name: totals[:, col] / gamma_col for col, name in enumerate(names)}
    return BatchResult(
        indices=np.asarray(list(indices), dtype=np.int64),
        n=n,
        gamma_total=gamma_total,
        nu=nu,
        x_final=x,
        hook_output=step_hook,
    )


@dataclass
class TrajectoryResult:
    n: int
    gamma_total: float
    nu: dict[str, float]
    x_final: Array
    hook_output: object | None = None


def run_trajectory(
    model: DiffusionModel,
    steps: StepSequence,
    innov: Innovation,
    n: int,
    seed: int,
    observables: dict[str, Callable[[Array], Array]] | None = None,
    traj_index: int = 0,
    x0_mode: str = "zero",
    x0: Array | None = None,
    step_hook=None,
    chunk_steps: int = DEFAULT_CHUNK_STEPS,
) -> TrajectoryResult:
    """One trajectory; equals row `traj_index` of any batch containing it."""
    res = run_batch(
        model,
        steps,
        innov,
        n,
        seed,
        [traj_index],
        observables=observables,
        x0_mode=x0_mode,
        x0=x0,
        step_hook=step_hook,
        chunk_steps=chunk_steps,
    )
    return TrajectoryResult(
        n=n,
        gamma_total=res.gamma_total,
        nu={name: float(v[0]) for name, v in res.nu.items()},
        x_final=res.x_final[0],
        hook_output=res.hook_output,
    )


# ---------------------------------------------------------------------------
# Stability diagnostic
# ---------------------------------------------------------------------------


@dataclass
class LyapunovReport:
    flagged: bool
    checkpoints: list[int]
    means: list[float]


def lyapunov_diagnostic(
    model: DiffusionModel,
    steps: StepSequence,
    innov: Innovation,
    n: int,
    seed: int,
    n_traj: int = 256,
    lam: float = 0.05,
    V: Callable[[Array], Array] | None = None,
    x0_mode: str = "zero",
    x0: Array | None = None,
) -> LyapunovReport:
    """Track the empirical mean of exp(lam * V(X_k)) across trajectories.

    V defaults to 1 + |x|^2.  The run is flagged when a later checkpoint
    mean exceeds twice the maximum over the first tenth of the horizon
    (or when any mean stops being finite).
    """
    if V is None:
        V = lambda x: 1.0 + np.einsum("...i,...i->...", x, x)  # noqa: E731
    rngs = [make_stream(seed, i) for i in range(n_traj)]
    x = np.empty((n_traj, model.dim))
    for row, rng in enumerate(rngs):
        x[row] = draw_x0(rng, x0_mode, model.dim, x0)
    n_checkpoints = min(50, n)
    every = max(1, n // n_checkpoints)
    checkpoints: list[int] = []
    means: list[float] = []
    with np.errstate(over="ignore", invalid="ignore"):
        k0 = 1
        while k0 <= n:
            k1 = min(k0 + DEFAULT_CHUNK_STEPS, n + 1)
            K = k1 - k0
            gam = steps.gamma_block(k0, k1)
            sqg = np.sqrt(gam)
            U = np.stack([innov.draw(r, K) for r in rngs], axis=1)  # (K, B, r)
            for j in range(K):
                sig = model.sigma(x)
                x = x + gam[j] * model.drift(x) + sqg[j] * np.einsum(
                    "...ir,...r->...i", sig, U[j]
                )
                k = k0 + j
                if k % every == 0 or k == n:
                    checkpoints.append(k)
                    means.append(float(np.mean(np.exp(lam * V(x)))))
            k0 = k1
    head = max(1, len(means) // 10)
    baseline = max(means[:head])
    flagged = (not all(np.isfinite(means))) or any(m > 2.0 * baseline for m in means[head:])
    return LyapunovReport(flagged=flagged, checkpoints=checkpoints, means=means)
