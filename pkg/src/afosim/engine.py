"""Single-threaded deterministic execution of the asynchronous update law.

Each tick processes agents in index order; each agent first applies the
payload deliveries due this tick, then (if scheduled) computes a projected
gradient step on its own input block using its possibly stale local copies,
then (if scheduled) measures its own output block of the true network
output.  Measurements read the true state assembled *before* any of this
tick's updates, and delivered payloads are historical values read from the
committed state history, so agent processing order is unobservable.

The produced :class:`RunTrace` records everything the metric and bound
modules need: the true state path, the step and measurement increment
series, per-agent staleness norms and per-update descent products.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from afosim.blocks import BlockLayout, BoxSet, OutputMap
from afosim.metrics import MinimizerSolution, solve_minimizer
from afosim.objective import (
    EpochConstants,
    EpochContext,
    EpochSchedule,
    QuadraticEpoch,
    grad_block,
)
from afosim.schedule import EventSchedule

__all__ = [
    "AgentState",
    "GlobalState",
    "RunTrace",
    "local_update",
    "measure_output",
    "receive_payload",
    "run",
    "trace_to_csv",
    "save_trace_npz",
    "load_trace_npz",
]

GammaPolicy = Callable[
    [int, QuadraticEpoch, MinimizerSolution, QuadraticEpoch | None, MinimizerSolution | None],
    float,
]


@dataclass
class AgentState:
    """One agent's onboard copies of the network input and output vectors."""

    x_local: np.ndarray
    y_local: np.ndarray


@dataclass(frozen=True)
class GlobalState:
    """The true network state: own blocks assembled, output recomputed."""

    x_true: np.ndarray
    y_true: np.ndarray


@dataclass
class RunTrace:
    """Complete record of one simulation run."""

    layout: BlockLayout
    box: BoxSet
    omap: OutputMap
    schedule: EventSchedule
    B: int
    etas: tuple[int, ...]
    gammas: np.ndarray
    epochs: list[QuadraticEpoch]
    minimizers: list[MinimizerSolution]
    x_hist: np.ndarray       # (horizon+1, n) true states
    s: np.ndarray            # (horizon, n) update steps, zero off compute events
    q: np.ndarray            # (horizon, m) measurement increments
    event_counts: np.ndarray  # (horizon, 3) updates / measurements / receptions
    stale_x: np.ndarray      # (horizon, N) ||x^i(k) - x(k)|| after receptions
    stale_y: np.ndarray      # (horizon, N)
    descent_lhs: np.ndarray  # (horizon, N) s_i . grad at compute events, else nan
    descent_sq: np.ndarray   # (horizon, N) ||s_i||^2 at compute events, else nan
    snapshots: dict[int, AgentState] = field(default_factory=dict)
    epoch_constants: list[EpochConstants] | None = None

    @property
    def horizon(self) -> int:
        return self.x_hist.shape[0] - 1

    def global_state(self, k: int) -> GlobalState:
        x = self.x_hist[k]
        return GlobalState(x_true=x, y_true=self.omap.entries @ x)

    def epoch_index_at(self, k: int) -> int:
        """Epoch driving tick k (0-based, k in [0, horizon))."""
        return int(np.searchsorted(np.asarray(self.etas), k, side="right"))


def local_update(
    i: int,
    x_local: np.ndarray,
    y_local: np.ndarray,
    epoch: QuadraticEpoch,
    omap: OutputMap,
    box: BoxSet,
    gamma: float,
    block_projector: Callable[[int, np.ndarray], np.ndarray] | None = None,
):
    """One projected gradient step on agent i's own block.

    Returns ``(new_block, s_i, grad)``; other blocks are untouched.  The
    optional ``block_projector`` replaces the box clamp for non-box
    polyhedral sets (it must be an orthogonal projection onto agent i's
    feasible block).
    """
    if gamma <= 0.0:
        raise ValueError("step size must be positive")
    g = grad_block(epoch, omap, i, x_local, y_local)
    sl = omap.layout.input_slice(i)
    own = x_local[sl]
    target = own - gamma * g
    if block_projector is None:
        new = np.clip(target, box.lower[sl], box.upper[sl])
    else:
        new = np.asarray(block_projector(i, target), dtype=float)
    return new, new - own, g


def measure_output(i: int, y_local: np.ndarray, x_true: np.ndarray, omap: OutputMap):
    """Agent i reads its own block of the true output; returns (block, q_i)."""
    new = omap.row_block(i) @ x_true
    return new, new - y_local[omap.layout.output_slice(i)]


def receive_payload(
    i: int,
    j: int,
    x_local: np.ndarray,
    y_local: np.ndarray,
    x_block: np.ndarray,
    y_block: np.ndarray,
    layout: BlockLayout,
) -> None:
    """Overwrite agent i's copies of agent j's input and output blocks."""
    x_local[layout.input_slice(j)] = x_block
    y_local[layout.output_slice(j)] = y_block


def run(
    layout: BlockLayout,
    box: BoxSet,
    omap: OutputMap,
    schedule: EventSchedule,
    epochs: EpochSchedule,
    init: np.ndarray,
    gammas: Sequence[float] | GammaPolicy,
    solver: Callable = solve_minimizer,
    snapshot_stride: int = 0,
    block_projector: Callable[[int, np.ndarray], np.ndarray] | None = None,
) -> RunTrace:
    """Execute the full asynchronous run and return its trace.

    ``gammas`` is either a per-epoch sequence of step sizes or a policy
    called at each epoch start with (ell, epoch, minimizer, prev_epoch,
    prev_minimizer).  Identical inputs produce bitwise-identical traces.
    """
    n, m, N = layout.n, layout.m, layout.agent_count
    init = np.asarray(init, dtype=float)
    if init.shape != (n,):
        raise ValueError(f"init shape {init.shape} does not match n={n}")
    if not box.contains(init):
        raise ValueError("initial point is infeasible")
    if schedule.agent_count != N:
        raise ValueError("schedule agent count does not match layout")
    if schedule.horizon != epochs.horizon:
        raise ValueError(
            f"schedule horizon {schedule.horizon} != epoch schedule horizon {epochs.horizon}"
        )
    if schedule.B != epochs.B:
        raise ValueError(f"schedule B={schedule.B} does not match epoch schedule B={epochs.B}")
    for (j, i) in schedule.deliveries:
        if j == i:
            raise ValueError(f"self-delivery pair ({j}, {i}) is not allowed")

    H = schedule.horizon
    in_sl = [layout.input_slice(i) for i in range(N)]
    out_sl = [layout.output_slice(i) for i in range(N)]
    cmask = schedule.compute_mask()
    mmask = schedule.measure_mask()
    deliv = schedule.deliveries_by_tick()

    x0 = init.copy()
    y0 = omap.entries @ x0
    X_local = np.tile(x0, (N, 1))
    Y_local = np.tile(y0, (N, 1))

    x_hist = np.empty((H + 1, n))
    x_hist[0] = x0
    s = np.zeros((H, n))
    q = np.zeros((H, m))
    event_counts = np.zeros((H, 3), dtype=np.int64)
    stale_x = np.empty((H, N))
    stale_y = np.empty((H, N))
    descent_lhs = np.full((H, N), np.nan)
    descent_sq = np.full((H, N), np.nan)
    snapshots: dict[int, AgentState] = {}

    resolved: list[QuadraticEpoch] = []
    minimizers: list[MinimizerSolution] = []
    gammas_used: list[float] = []
    epoch = None
    minimizer = None
    gamma = None
    ell = -1

    for k in range(H):
        if ell + 1 < epochs.epoch_count and k == (0 if ell < 0 else epochs.etas[ell]):
            prev_epoch, prev_min = epoch, minimizer
            ell += 1
            source = epochs.sources[ell]
            if callable(source):
                ctx = EpochContext(
                    ell=ell,
                    boundary_tick=k,
                    x_local=X_local.copy(),
                    y_local=Y_local.copy(),
                    x_true=x_hist[k].copy(),
                    prev_epoch=prev_epoch,
                )
                epoch = source(ctx)
            else:
                epoch = source
            if epoch.n != n or epoch.m != m:
                raise ValueError(f"epoch {ell} dimensions ({epoch.n}, {epoch.m}) do not match layout")
            warm = prev_min.x_star if prev_min is not None else None
            minimizer = solver(epoch, omap, box, x0=warm)
            if callable(gammas):
                gamma = float(gammas(ell, epoch, minimizer, prev_epoch, prev_min))
            else:
                gamma = float(gammas[ell])
            if gamma <= 0.0:
                raise ValueError(f"gamma[{ell}] must be positive, got {gamma}")
            resolved.append(epoch)
            minimizers.append(minimizer)
            gammas_used.append(gamma)

        x_true = x_hist[k]
        y_true = omap.entries @ x_true
        x_next = x_true.copy()
        events = deliv[k]
        ptr = 0
        n_recv = 0
        n_upd = 0
        n_meas = 0
        for i in range(N):
            while ptr < len(events) and events[ptr][0] == i:
                _, j, origin = events[ptr]
                ptr += 1
                X_local[i, in_sl[j]] = x_hist[origin, in_sl[j]]
                Y_local[i, out_sl[j]] = omap.row_block(j) @ x_hist[origin]
                n_recv += 1
            stale_x[k, i] = np.linalg.norm(X_local[i] - x_true)
            stale_y[k, i] = np.linalg.norm(Y_local[i] - y_true)
            if cmask[k, i]:
                new, s_i, g = local_update(
                    i, X_local[i], Y_local[i], epoch, omap, box, gamma, block_projector
                )
                X_local[i, in_sl[i]] = new
                x_next[in_sl[i]] = new
                s[k, in_sl[i]] = s_i
                descent_lhs[k, i] = float(s_i @ g)
                descent_sq[k, i] = float(s_i @ s_i)
                n_upd += 1
            if mmask[k, i]:
                new_y, q_i = measure_output(i, Y_local[i], x_true, omap)
                q[k, out_sl[i]] = q_i
                Y_local[i, out_sl[i]] = new_y
                n_meas += 1
        x_hist[k + 1] = x_next
        event_counts[k] = (n_upd, n_meas, n_recv)
        if snapshot_stride and k % snapshot_stride == 0:
            snapshots[k] = AgentState(x_local=X_local.copy(), y_local=Y_local.copy())

    return RunTrace(
        layout=layout,
        box=box,
        omap=omap,
        schedule=schedule,
        B=schedule.B,
        etas=tuple(epochs.etas),
        gammas=np.asarray(gammas_used),
        epochs=resolved,
        minimizers=minimizers,
        x_hist=x_hist,
        s=s,
        q=q,
        event_counts=event_counts,
        stale_x=stale_x,
        stale_y=stale_y,
        descent_lhs=descent_lhs,
        descent_sq=descent_sq,
        snapshots=snapshots,
    )


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def trace_to_csv(trace: RunTrace, series, path) -> None:
    """Write the per-tick CSV (one row per tick, fixed schema)."""
    s_norm = np.linalg.norm(trace.s, axis=1)
    q_norm = np.linalg.norm(trace.q, axis=1)
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            ["k", "ell", "alpha", "beta", "delta", "norm_s", "norm_q", "events_u", "events_m", "events_c"]
        )
        for k in range(trace.horizon):
            writer.writerow(
                [
                    k,
                    trace.epoch_index_at(k),
                    _fmt(series.alpha_active[k]),
                    _fmt(series.beta[k]),
                    _fmt(series.delta[k]),
                    _fmt(s_norm[k]),
                    _fmt(q_norm[k]),
                    int(trace.event_counts[k, 0]),
                    int(trace.event_counts[k, 1]),
                    int(trace.event_counts[k, 2]),
                ]
            )


def save_trace_npz(trace: RunTrace, path) -> None:
    """Structured binary dump sufficient to replay all metric/lemma checks."""
    payload: dict[str, np.ndarray] = {
        "input_dims": np.asarray(trace.layout.input_dims, dtype=np.int64),
        "output_dims": np.asarray(trace.layout.output_dims, dtype=np.int64),
        "box_lower": trace.box.lower,
        "box_upper": trace.box.upper,
        "omap": trace.omap.entries,
        "B": np.asarray(trace.B, dtype=np.int64),
        "etas": np.asarray(trace.etas, dtype=np.int64),
        "gammas": trace.gammas,
        "x_hist": trace.x_hist,
        "s": trace.s,
        "q": trace.q,
        "event_counts": trace.event_counts,
        "stale_x": trace.stale_x,
        "stale_y": trace.stale_y,
        "descent_lhs": trace.descent_lhs,
        "descent_sq": trace.descent_sq,
    }
    for ell, ep in enumerate(trace.epochs):
        payload[f"epoch{ell}_t"] = np.asarray(ep.t)
        payload[f"epoch{ell}_Q"] = ep.Q
        payload[f"epoch{ell}_q"] = ep.q
        payload[f"epoch{ell}_P"] = ep.P
        payload[f"epoch{ell}_theta"] = ep.theta
        payload[f"epoch{ell}_offset"] = np.asarray(ep.constant_offset)
        sol = trace.minimizers[ell]
        payload[f"epoch{ell}_xstar"] = sol.x_star
        payload[f"epoch{ell}_residual"] = np.asarray(sol.residual)
        payload[f"epoch{ell}_iters"] = np.asarray(sol.iterations, dtype=np.int64)
    N = trace.layout.agent_count
    for i in range(N):
        payload[f"compute{i}"] = np.asarray(trace.schedule.compute_ticks[i], dtype=np.int64)
        payload[f"measure{i}"] = np.asarray(trace.schedule.measure_ticks[i], dtype=np.int64)
    for (j, i), rows in trace.schedule.deliveries.items():
        payload[f"deliver_{j}_{i}"] = rows
    np.savez_compressed(path, **payload)


def load_trace_npz(path) -> RunTrace:
    """Rebuild a :class:`RunTrace` from :func:`save_trace_npz` output."""
    data = np.load(path)
    layout = BlockLayout(
        tuple(int(d) for d in data["input_dims"]),
        tuple(int(d) for d in data["output_dims"]),
    )
    box = BoxSet(data["box_lower"], data["box_upper"])
    omap = OutputMap(data["omap"], layout)
    N = layout.agent_count
    horizon = data["x_hist"].shape[0] - 1
    deliveries = {}
    for key in data.files:
        if key.startswith("deliver_"):
            _, j, i = key.split("_")
            deliveries[(int(j), int(i))] = data[key].reshape(-1, 2)
    schedule = EventSchedule(
        horizon=horizon,
        B=int(data["B"]),
        agent_count=N,
        compute_ticks=tuple(data[f"compute{i}"] for i in range(N)),
        measure_ticks=tuple(data[f"measure{i}"] for i in range(N)),
        deliveries=deliveries,
    )
    epochs = []
    minimizers = []
    ell = 0
    while f"epoch{ell}_Q" in data.files:
        epochs.append(
            QuadraticEpoch(
                t=float(data[f"epoch{ell}_t"]),
                Q=data[f"epoch{ell}_Q"],
                q=data[f"epoch{ell}_q"],
                P=data[f"epoch{ell}_P"],
                theta=data[f"epoch{ell}_theta"],
                constant_offset=float(data[f"epoch{ell}_offset"]),
            )
        )
        x_star = data[f"epoch{ell}_xstar"]
        minimizers.append(
            MinimizerSolution(
                x_star=x_star,
                y_star=omap.entries @ x_star,
                residual=float(data[f"epoch{ell}_residual"]),
                iterations=int(data[f"epoch{ell}_iters"]),
            )
        )
        ell += 1
    return RunTrace(
        layout=layout,
        box=box,
        omap=omap,
        schedule=schedule,
        B=int(data["B"]),
        etas=tuple(int(e) for e in data["etas"]),
        gammas=data["gammas"],
        epochs=epochs,
        minimizers=minimizers,
        x_hist=data["x_hist"],
        s=data["s"],
        q=data["q"],
        event_counts=data["event_counts"],
        stale_x=data["stale_x"],
        stale_y=data["stale_y"],
        descent_lhs=data["descent_lhs"],
        descent_sq=data["descent_sq"],
    )
