"""Experiment presets and problem builders.

Two preset families are provided:

* ``preset_qp``: ten agents tracking a randomly regenerated strongly convex
  quadratic program over [-10, 10]^20 that changes every 1000 ticks, with
  sparse (1%) event probabilities and B = 5;
* ``preset_aircraft``: eight aircraft with linearized longitudinal dynamics
  jointly tracking a sinusoidal altitude command while holding 1500 ft
  separation and bounded accelerations, with B = 50 and closed-loop
  acceleration targets recomputed from each agent's own (possibly stale)
  altitude copies at every objective change.

``build_problem`` turns any :class:`SimConfig` into the concrete layout,
box, output map, epoch schedule and initial point the engine consumes.
Preset matrices are regenerated from the seed, never stored.
"""

from __future__ import annotations

import numpy as np

from afosim.blocks import BlockLayout, BoxSet, OutputMap
from afosim.config import EpochSpec, SimConfig
from afosim.objective import EpochContext, EpochSchedule, QuadraticEpoch

__all__ = [
    "preset_qp",
    "preset_aircraft",
    "build_problem",
    "AIRCRAFT_C_BLOCK",
    "AIRCRAFT_X_MIN",
    "AIRCRAFT_X_MAX",
    "AIRCRAFT_TRIM",
]

# Substream purposes for problem-data generation (schedule purposes are 0-2).
_PURPOSE_OUTPUT_MAP = 8
_PURPOSE_EPOCH = 9

# Linearized single-aircraft output map: rows give (acceleration, altitude)
# from the state (velocity, angle of attack, pitch, pitch rate, altitude).
AIRCRAFT_C_BLOCK = np.array(
    [
        [-0.0133, -7.3259, -3.17, -1.1965, 0.0001],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ]
)
AIRCRAFT_X_MIN = np.array([443.7336, -13.0, -25.0, -60.0, 1_000.0])
AIRCRAFT_X_MAX = np.array([556.2664, 1.5, 25.0, 60.0, 40_000.0])
AIRCRAFT_TRIM = np.array([500.0, 0.0, 0.0, 0.0, 15_000.0])

_AIRCRAFT_N = 8
_AIRCRAFT_TS = 5.0          # seconds between objective changes
_AIRCRAFT_BASE_ALT = 15_000.0
_AIRCRAFT_ALT_AMPLITUDE = 1_500.0
_AIRCRAFT_SEPARATION = 1_500.0
_AIRCRAFT_STATE_WEIGHT = 100.0
_AIRCRAFT_SEPARATION_WEIGHT = 1e6
_AIRCRAFT_ACCEL_WEIGHT = 1e3
_AIRCRAFT_ALT_WEIGHT = 5e4
# Default step size: gamma * lambda_max(Q_eff + C^T P C) ~ 1.4, inside the
# synchronous stability range with margin for staleness; the separation
# weight makes the Hessian stiff (lambda_max ~ 7e6), so anything near 1e-6
# diverges.  Smaller steps leave the slow pitch mode lagging the moving
# altitude command and inflate the final acceleration error.
_AIRCRAFT_GAMMA = 2e-7


def preset_qp(
    seed: int,
    epochs: int = 10,
    B: int = 5,
    gamma: float = 0.001,
    kappa: int = 1000,
    probability: float = 0.01,
) -> SimConfig:
    """Time-varying random QP: N=10 agents, n=20 inputs, m=10 outputs."""
    N = 10
    n = 20
    cfg = SimConfig(
        agent_count=N,
        input_dims=(2,) * N,
        output_dims=(1,) * N,
        box_lower=np.full(n, -10.0),
        box_upper=np.full(n, 10.0),
        output_map_kind="random",
        epoch_kind="random_qp",
        epoch_count=epochs,
        kappas=(kappa,) * epochs,
        B=B,
        p_update=(probability,) * N,
        p_measure=(probability,) * N,
        p_communicate=(probability,) * N,
        delay_max=max(B - 1, 0),
        gamma=(gamma,) * epochs,
        seed=seed,
        t_step=1.0,
        init_kind="center",
    )
    cfg.validate()
    return cfg


def preset_aircraft(
    seed: int,
    epochs: int = 20,
    B: int = 50,
    gamma: float = _AIRCRAFT_GAMMA,
    kappa: int = 500,
    probability: float = 0.5,
) -> SimConfig:
    """Altitude-tracking network of 8 aircraft with closed-loop targets."""
    N = _AIRCRAFT_N
    cfg = SimConfig(
        agent_count=N,
        input_dims=(5,) * N,
        output_dims=(2,) * N,
        box_lower=np.tile(AIRCRAFT_X_MIN, N),
        box_upper=np.tile(AIRCRAFT_X_MAX, N),
        output_map_kind="aircraft",
        epoch_kind="aircraft",
        epoch_count=epochs,
        kappas=(kappa,) * epochs,
        B=B,
        p_update=(probability,) * N,
        p_measure=(probability,) * N,
        p_communicate=(probability,) * N,
        delay_max=max(B - 1, 0),
        gamma=(gamma,) * epochs,
        seed=seed,
        t_step=_AIRCRAFT_TS,
        init_kind="trim",
    )
    cfg.validate()
    return cfg


def _random_output_map(cfg: SimConfig, layout: BlockLayout) -> OutputMap:
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(_PURPOSE_OUTPUT_MAP,))
    rng = np.random.Generator(np.random.PCG64(ss))
    C = rng.normal(size=(layout.m, layout.n)) / np.sqrt(layout.n)
    return OutputMap(C, layout)


def _aircraft_output_map(layout: BlockLayout) -> OutputMap:
    if layout.input_dims != (5,) * layout.agent_count or layout.output_dims != (2,) * layout.agent_count:
        raise ValueError("aircraft output map requires 5 inputs and 2 outputs per agent")
    N = layout.agent_count
    C = np.zeros((layout.m, layout.n))
    for i in range(N):
        C[2 * i : 2 * i + 2, 5 * i : 5 * i + 5] = AIRCRAFT_C_BLOCK
    return OutputMap(C, layout)


def _random_qp_epoch(cfg: SimConfig, ell: int) -> QuadraticEpoch:
    """Random strongly convex epoch: Q = A^T A + I (similarly P), normal
    linear terms; the linear output cost is absorbed into the target."""
    n, m = cfg.n, cfg.m
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(_PURPOSE_EPOCH, ell))
    rng = np.random.Generator(np.random.PCG64(ss))
    A = rng.normal(size=(n, n))
    Q = A.T @ A + np.eye(n)
    Ap = rng.normal(size=(m, m))
    P = Ap.T @ Ap + np.eye(m)
    q = rng.normal(size=n)
    p = rng.normal(size=m)
    return QuadraticEpoch.from_linear_output_cost(t=ell * cfg.t_step, Q=Q, q=q, P=P, p=p)


def _altitude_difference_selector(N: int) -> np.ndarray:
    """S with (S x)_j = altitude_j - altitude_{j+1}; altitudes sit at state
    offset 4 within each 5-dimensional agent block."""
    S = np.zeros((N - 1, 5 * N))
    for j in range(N - 1):
        S[j, 5 * j + 4] = 1.0
        S[j, 5 * (j + 1) + 4] = -1.0
    return S


def _aircraft_epoch_generator(cfg: SimConfig):
    """Closed-loop epoch source for the aircraft problem.

    The altitude command follows a sinusoid; each agent's acceleration
    target is recomputed at the epoch boundary from the mean of its own
    local altitude copies, so the objective itself depends on the stale
    information the network is carrying.
    """
    N = cfg.agent_count
    n = cfg.n
    S = _altitude_difference_selector(N)
    omega = np.full(N - 1, _AIRCRAFT_SEPARATION)
    Q_eff = _AIRCRAFT_STATE_WEIGHT * np.eye(n) + S.T @ (_AIRCRAFT_SEPARATION_WEIGHT * S)
    q_eff = -S.T @ (_AIRCRAFT_SEPARATION_WEIGHT * omega)
    P = np.kron(np.eye(N), np.diag([_AIRCRAFT_ACCEL_WEIGHT, _AIRCRAFT_ALT_WEIGHT]))
    alt_idx = np.arange(4, n, 5)
    ts = cfg.t_step

    def generate(ctx: EpochContext) -> QuadraticEpoch:
        t = ctx.ell * ts
        phi = _AIRCRAFT_BASE_ALT + _AIRCRAFT_ALT_AMPLITUDE * np.sin(ctx.ell * ts * np.pi / 24.0)
        theta = np.empty(2 * N)
        for i in range(N):
            local_mean = float(np.mean(ctx.x_local[i, alt_idx]))
            theta[2 * i] = (0.1 / ts) * (phi - local_mean)  # acceleration target
            theta[2 * i + 1] = phi                          # altitude target
        return QuadraticEpoch(t=t, Q=Q_eff, q=q_eff, P=P, theta=theta)

    return generate


def build_problem(cfg: SimConfig):
    """Instantiate (layout, box, omap, epoch_schedule, init) from a config."""
    cfg.validate()
    layout = BlockLayout(cfg.input_dims, cfg.output_dims)
    box = BoxSet(cfg.box_lower.copy(), cfg.box_upper.copy())

    if cfg.output_map_kind == "random":
        omap = _random_output_map(cfg, layout)
    elif cfg.output_map_kind == "aircraft":
        omap = _aircraft_output_map(layout)
    else:
        omap = OutputMap(cfg.C_explicit, layout)

    if cfg.epoch_kind == "random_qp":
        sources = tuple(_random_qp_epoch(cfg, ell) for ell in range(cfg.epoch_count))
    elif cfg.epoch_kind == "aircraft":
        gen = _aircraft_epoch_generator(cfg)
        sources = (gen,) * cfg.epoch_count
    else:
        sources = tuple(_epoch_from_spec(spec) for spec in cfg.explicit_epochs)
    schedule = EpochSchedule(sources=sources, kappas=cfg.kappas, B=cfg.B)

    if cfg.init_kind == "center":
        init = (box.lower + box.upper) / 2.0
    elif cfg.init_kind == "trim":
        init = np.tile(AIRCRAFT_TRIM, cfg.agent_count)
    else:
        init = cfg.init_vector.copy()
    init = np.clip(init, box.lower, box.upper)
    return layout, box, omap, schedule, init


def _epoch_from_spec(spec: EpochSpec) -> QuadraticEpoch:
    if spec.theta is not None:
        return QuadraticEpoch(t=spec.t, Q=spec.Q, q=spec.q, P=spec.P, theta=spec.theta)
    return QuadraticEpoch.from_linear_output_cost(t=spec.t, Q=spec.Q, q=spec.q, P=spec.P, p=spec.p)
