"""Time-varying quadratic objective family and its per-epoch constants.

An epoch holds one snapshot of the objective

    J(x, y) = f(x) + g(y)
    f(x) = 0.5 x^T Q x + q^T x + offset
    g(y) = 0.5 (y - theta)^T P (y - theta)

with Q, P symmetric positive definite.  A linear output cost is always
normalized to the target form (theta = -P^{-1} p plus a constant), so one
canonical g shape serves both experiment families.

:func:`epoch_constants` derives everything the bound ladder consumes:
Lipschitz and gradient-norm bounds, the strong-convexity modulus, the
minimizer drift between consecutive epochs and the temporal-drift and
error-bound estimates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from afosim.blocks import BlockLayout, BoxSet, OutputMap, project_box

__all__ = [
    "QuadraticEpoch",
    "EpochSchedule",
    "EpochConstants",
    "EpochContext",
    "eval_J",
    "eval_f",
    "eval_g",
    "grad_f",
    "grad_g",
    "grad_block",
    "epoch_constants",
    "estimate_error_bound_constant",
]

_SYM_TOL = 1e-12
# Fixed entropy for the seeded estimators below; independent of run seeds so
# constants are reproducible across configurations.
_ESTIMATOR_SEED = 0x5EB0
_LT_SAMPLES = 1000
_LAMBDA_SAMPLES = 10_000
_CORNER_BUDGET = 16  # enumerate box corners only when n + m fits


def _check_spd(mat: np.ndarray, name: str) -> None:
    scale = max(1.0, float(np.abs(mat).max()))
    if np.abs(mat - mat.T).max() > _SYM_TOL * scale:
        raise ValueError(f"{name} is not symmetric to tolerance {_SYM_TOL}")
    ev_min = float(np.linalg.eigvalsh(mat)[0])
    if ev_min <= 0.0:
        raise ValueError(f"{name} is not positive definite (lambda_min={ev_min:.3e})")


@dataclass(frozen=True)
class QuadraticEpoch:
    """One epoch of the objective, valid while the time index is ``t``."""

    t: float
    Q: np.ndarray
    q: np.ndarray
    P: np.ndarray
    theta: np.ndarray
    constant_offset: float = 0.0

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        P = np.asarray(self.P, dtype=float)
        q = np.asarray(self.q, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        n, m = q.shape[0], theta.shape[0]
        if Q.shape != (n, n):
            raise ValueError(f"Q shape {Q.shape} does not match q length {n}")
        if P.shape != (m, m):
            raise ValueError(f"P shape {P.shape} does not match theta length {m}")
        _check_spd(Q, "Q")
        _check_spd(P, "P")
        for arr in (Q, P, q, theta):
            arr.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "constant_offset", float(self.constant_offset))

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.theta.shape[0]

    @staticmethod
    def from_linear_output_cost(t, Q, q, P, p, constant_offset=0.0) -> "QuadraticEpoch":
        """Build an epoch whose g was given as 0.5 y^T P y + p^T y.

        The linear term is absorbed into the target: theta = -P^{-1} p,
        offset -= 0.5 p^T P^{-1} p, which leaves J(x, y) unchanged.
        """
        P = np.asarray(P, dtype=float)
        p = np.asarray(p, dtype=float)
        theta = -np.linalg.solve(P, p)
        offset = float(constant_offset) - 0.5 * float(p @ np.linalg.solve(P, p))
        return QuadraticEpoch(t=t, Q=Q, q=q, P=P, theta=theta, constant_offset=offset)


def eval_f(epoch: QuadraticEpoch, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (epoch.n,):
        raise ValueError(f"x shape {x.shape} does not match n={epoch.n}")
    return float(0.5 * x @ (epoch.Q @ x) + epoch.q @ x + epoch.constant_offset)


def eval_g(epoch: QuadraticEpoch, y: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != (epoch.m,):
        raise ValueError(f"y shape {y.shape} does not match m={epoch.m}")
    d = y - epoch.theta
    return float(0.5 * d @ (epoch.P @ d))


def eval_J(epoch: QuadraticEpoch, x: np.ndarray, y: np.ndarray) -> float:
    """Objective value f(x) + g(y)."""
    return eval_f(epoch, x) + eval_g(epoch, y)


def grad_f(epoch: QuadraticEpoch, x: np.ndarray) -> np.ndarray:
    return epoch.Q @ x + epoch.q


def grad_g(epoch: QuadraticEpoch, y: np.ndarray) -> np.ndarray:
    return epoch.P @ (y - epoch.theta)


def grad_block(
    epoch: QuadraticEpoch,
    omap: OutputMap,
    i: int,
    x_local: np.ndarray,
    y_local: np.ndarray,
) -> np.ndarray:
    """Agent i's block of the input gradient evaluated at its local copies.

    Returns block i of grad f(x_local) plus C_i^T grad g(y_local); this is
    exactly the direction an agent steps along when it computes an update.
    """
    layout = omap.layout
    sl = layout.input_slice(i)
    return (
        epoch.Q[sl] @ x_local
        + epoch.q[sl]
        + omap.column_block(i).T @ (epoch.P @ (y_local - epoch.theta))
    )


@dataclass(frozen=True)
class EpochContext:
    """Read-only view handed to closed-loop epoch generators at a boundary."""

    ell: int
    boundary_tick: int
    x_local: np.ndarray  # (N, n) agents' local input copies
    y_local: np.ndarray  # (N, m) agents' local output copies
    x_true: np.ndarray
    prev_epoch: QuadraticEpoch | None


EpochSource = QuadraticEpoch | Callable[[EpochContext], QuadraticEpoch]


@dataclass(frozen=True)
class EpochSchedule:
    """Ordered epoch sources plus the tick budget kappa_l = r_l * B per epoch.

    Sources may be fixed epochs or generators invoked with an
    :class:`EpochContext` when the simulation reaches the epoch boundary
    (the only place objectives may depend on run state).
    """

    sources: tuple
    kappas: tuple[int, ...]
    B: int
    etas: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        sources = tuple(self.sources)
        kappas = tuple(int(k) for k in self.kappas)
        B = int(self.B)
        if B < 1:
            raise ValueError("B must be a positive integer")
        if len(sources) == 0:
            raise ValueError("schedule needs at least one epoch")
        if len(kappas) != len(sources):
            raise ValueError("kappas and sources must have equal length")
        for ell, kappa in enumerate(kappas):
            if kappa < B:
                raise ValueError(f"kappa[{ell}]={kappa} must be at least B={B}")
            if kappa % B != 0:
                raise ValueError(f"kappa[{ell}]={kappa} must be a multiple of B={B}")
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "kappas", kappas)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "etas", tuple(np.cumsum(kappas).tolist()))

    @property
    def epoch_count(self) -> int:
        return len(self.sources)

    @property
    def horizon(self) -> int:
        return self.etas[-1]

    @property
    def r_values(self) -> tuple[int, ...]:
        return tuple(k // self.B for k in self.kappas)


@dataclass(frozen=True)
class EpochConstants:
    """Problem constants of one epoch, as consumed by the bound ladder.

    ``sigma``, ``L_t`` and ``Delta`` are zero for the first epoch.  ``L_t``
    is a sampled (plus corner-refined, when affordable) estimate of the
    temporal drift rate on the feasible region, not a certified supremum.
    """

    L_x: float
    L_y: float
    L: float
    L_J: float
    M_x: float
    M_y: float
    p_strong: float
    sigma: float
    L_t: float
    Delta: float
    lambda_eb: float

    def __post_init__(self):
        for name in ("L_x", "L_y", "L", "L_J", "M_x", "M_y", "p_strong", "lambda_eb"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0.0:
                raise ValueError(f"{name} must be finite and positive, got {val}")
        for name in ("sigma", "L_t", "Delta"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0.0:
                raise ValueError(f"{name} must be finite and non-negative, got {val}")


def _interval_image(mat: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Componentwise interval bounds of ``mat @ v`` for v in [lo, hi]."""
    pos = np.maximum(mat, 0.0)
    neg = np.minimum(mat, 0.0)
    return pos @ lo + neg @ hi, pos @ hi + neg @ lo


def _grad_norm_bound(mat: np.ndarray, shift: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Conservative bound on sup ||mat v + shift|| over the box [lo, hi]."""
    low, high = _interval_image(mat, lo, hi)
    return float(np.linalg.norm(np.maximum(np.abs(low + shift), np.abs(high + shift))))


def _output_interval(omap: OutputMap, box: BoxSet):
    return _interval_image(omap.entries, box.lower, box.upper)


def estimate_error_bound_constant(
    epoch: QuadraticEpoch,
    box: BoxSet,
    omap: OutputMap,
    x_star: np.ndarray,
    samples: int = _LAMBDA_SAMPLES,
) -> float:
    """Empirical error-bound constant relating distance-to-minimizer to the
    projected-gradient residual.

    Samples seeded points in the box, takes the max of
    ||x - x*|| / ||x - Pi[x - grad h(x)]|| and doubles it as a safety
    factor.  Used only inside the bound-ladder constants, never by the
    running algorithm.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(_ESTIMATOR_SEED)))
    n = epoch.n
    H = epoch.Q + omap.entries.T @ epoch.P @ omap.entries
    c = epoch.q - omap.entries.T @ (epoch.P @ epoch.theta)
    pts = box.lower + rng.random((samples, n)) * (box.upper - box.lower)
    grad = pts @ H + c
    proj = np.clip(pts - grad, box.lower, box.upper)
    residual = np.linalg.norm(pts - proj, axis=1)
    dist = np.linalg.norm(pts - x_star, axis=1)
    mask = residual > 1e-14
    if not mask.any():
        return 1.0
    return 2.0 * float(np.max(dist[mask] / residual[mask]))


def _temporal_drift_estimate(
    epoch: QuadraticEpoch,
    prev: QuadraticEpoch,
    box: BoxSet,
    omap: OutputMap,
    delta: float,
) -> float:
    """Sampled sup of |J(x,y;t) - J(x,y;t_prev)| / delta over X x Y.

    Box corners are enumerated as a refinement when n + m is small; both
    passes lower-bound the true supremum, so the max of the two is kept.
    """
    y_lo, y_hi = _output_interval(omap, box)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(_ESTIMATOR_SEED + 1)))
    xs = box.lower + rng.random((_LT_SAMPLES, epoch.n)) * (box.upper - box.lower)
    ys = y_lo + rng.random((_LT_SAMPLES, epoch.m)) * (y_hi - y_lo)

    def batch_J(ep: QuadraticEpoch, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        fx = 0.5 * np.einsum("ij,jk,ik->i", X, ep.Q, X) + X @ ep.q + ep.constant_offset
        D = Y - ep.theta
        gy = 0.5 * np.einsum("ij,jk,ik->i", D, ep.P, D)
        return fx + gy

    best = float(np.max(np.abs(batch_J(epoch, xs, ys) - batch_J(prev, xs, ys))))
    if epoch.n + epoch.m <= _CORNER_BUDGET:
        x_corners = np.array(list(itertools.product(*zip(box.lower, box.upper))))
        y_corners = np.array(list(itertools.product(*zip(y_lo, y_hi))))
        reps_x = np.repeat(x_corners, len(y_corners), axis=0)
        reps_y = np.tile(y_corners, (len(x_corners), 1))
        corner_best = float(
            np.max(np.abs(batch_J(epoch, reps_x, reps_y) - batch_J(prev, reps_x, reps_y)))
        )
        best = max(best, corner_best)
    return best / delta


def epoch_constants(
    epoch: QuadraticEpoch,
    prev: QuadraticEpoch | None,
    box: BoxSet,
    omap: OutputMap,
    oracle: Callable | None = None,
    *,
    x_star: np.ndarray | None = None,
    prev_x_star: np.ndarray | None = None,
    lambda_eb: float | None = None,
) -> EpochConstants:
    """Derive all per-epoch constants used by the theory module.

    ``oracle`` is the minimizer solver; precomputed minimizers can be passed
    instead to avoid re-solving.  ``lambda_eb`` overrides the empirical
    error-bound estimator.
    """
    if box.dim != epoch.n:
        raise ValueError(f"box dim {box.dim} does not match epoch n={epoch.n}")
    ew_Q = np.linalg.eigvalsh(epoch.Q)
    ew_P = np.linalg.eigvalsh(epoch.P)
    L_x = float(ew_Q[-1])
    L_y = float(ew_P[-1])
    normC = omap.norm
    L = float(np.sqrt(L_x**2 + (normC * L_y) ** 2))
    M_x = _grad_norm_bound(epoch.Q, epoch.q, box.lower, box.upper)
    y_lo, y_hi = _output_interval(omap, box)
    M_y = _grad_norm_bound(epoch.P, -(epoch.P @ epoch.theta), y_lo, y_hi)
    # Gradient norms can be exactly zero on degenerate instances (e.g. the
    # whole box maps to the target); the ladder needs strictly positive
    # bounds, so floor them at a tiny value.
    M_x = max(M_x, 1e-300)
    M_y = max(M_y, 1e-300)
    L_J = float(np.sqrt(M_x**2 + M_y**2))
    p_strong = float(min(ew_Q[0], ew_P[0]))

    if x_star is None:
        if oracle is None:
            raise ValueError("either an oracle or a precomputed x_star is required")
        x_star = np.asarray(oracle(epoch, omap, box).x_star, dtype=float)

    sigma = 0.0
    L_t = 0.0
    delta = 0.0
    if prev is not None:
        delta = abs(epoch.t - prev.t)
        if prev_x_star is None:
            if oracle is None:
                raise ValueError("oracle required to locate the previous minimizer")
            prev_x_star = np.asarray(oracle(prev, omap, box).x_star, dtype=float)
        sigma = float(np.linalg.norm(x_star - prev_x_star))
        if delta > 0.0:
            L_t = _temporal_drift_estimate(epoch, prev, box, omap, delta)

    if lambda_eb is None:
        lambda_eb = estimate_error_bound_constant(epoch, box, omap, x_star)
    lambda_eb = max(float(lambda_eb), 1e-300)

    return EpochConstants(
        L_x=L_x,
        L_y=L_y,
        L=L,
        L_J=L_J,
        M_x=M_x,
        M_y=M_y,
        p_strong=p_strong,
        sigma=sigma,
        L_t=L_t,
        Delta=delta,
        lambda_eb=lambda_eb,
    )
