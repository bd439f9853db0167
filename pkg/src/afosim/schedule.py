"""Event schedules with bounded asynchrony.

Three kinds of events drive the simulation: per-agent input computations,
per-agent output measurements, and per-ordered-pair payload deliveries.  A
schedule is valid when every length-B tick window contains a computation and
a measurement for every agent, and when the origin of the payload each agent
holds for every other agent is never more than B-1 ticks old.

The generator draws Bernoulli events from per-agent (and per-pair) RNG
substreams and then repairs the draw: a computation or measurement is forced
at the last admissible tick of any window the draw left uncovered, and a
zero-delay fresh delivery is forced on a pair whenever the held payload is
about to exceed the staleness limit.  Lazy placement maximizes the realized
asynchrony while keeping every invariant; :func:`verify_schedule` re-derives
all conditions from the raw event lists without trusting the generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from afosim.blocks import BlockLayout

__all__ = [
    "AsyncConfig",
    "EventSchedule",
    "ScheduleViolation",
    "generate_schedule",
    "verify_schedule",
    "staleness_at",
    "measurement_origin_at",
    "schedule_to_text",
    "schedule_from_text",
]

# Substream purposes (SeedSequence spawn keys).
_PURPOSE_UPDATE = 0
_PURPOSE_MEASURE = 1
_PURPOSE_COMM = 2


def _per_agent(p, count: int, name: str) -> tuple[float, ...]:
    arr = np.broadcast_to(np.asarray(p, dtype=float), (count,)).copy()
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{name} probabilities must lie in [0, 1]")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class AsyncConfig:
    """Randomness parameters for schedule generation.

    Probabilities may be scalars (broadcast to all agents) or per-agent
    sequences.  ``delay_max`` bounds the random in-flight delay of a
    delivery and must not exceed B-1 so that random arrivals are always
    fresh enough on arrival.
    """

    B: int
    p_update: tuple[float, ...] | float
    p_measure: tuple[float, ...] | float
    p_communicate: tuple[float, ...] | float
    delay_max: int
    seed: int
    agent_count: int

    def __post_init__(self):
        if int(self.B) < 1:
            raise ValueError("B must be a positive integer")
        if int(self.agent_count) < 1:
            raise ValueError("agent_count must be positive")
        if not 0 <= int(self.delay_max) <= int(self.B) - 1:
            raise ValueError(f"delay_max must lie in [0, B-1] = [0, {int(self.B) - 1}]")
        object.__setattr__(self, "B", int(self.B))
        object.__setattr__(self, "agent_count", int(self.agent_count))
        object.__setattr__(self, "delay_max", int(self.delay_max))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "p_update", _per_agent(self.p_update, self.agent_count, "update"))
        object.__setattr__(
            self, "p_measure", _per_agent(self.p_measure, self.agent_count, "measure")
        )
        object.__setattr__(
            self, "p_communicate", _per_agent(self.p_communicate, self.agent_count, "communicate")
        )


@dataclass(frozen=True)
class EventSchedule:
    """Immutable event sets for one run.

    ``deliveries[(j, i)]`` is an int array of shape (k, 2) holding
    (receive_tick, payload_origin_tick) rows sorted by receive tick with
    non-decreasing origins.  The payload delivered on (j -> i) carries agent
    j's own input block and true output block as of the origin tick.
    """

    horizon: int
    B: int
    agent_count: int
    compute_ticks: tuple[np.ndarray, ...]
    measure_ticks: tuple[np.ndarray, ...]
    deliveries: dict[tuple[int, int], np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "B", int(self.B))
        object.__setattr__(self, "agent_count", int(self.agent_count))

    def compute_mask(self) -> np.ndarray:
        """(horizon, N) boolean mask of computation events."""
        mask = np.zeros((self.horizon, self.agent_count), dtype=bool)
        for i, ticks in enumerate(self.compute_ticks):
            mask[ticks, i] = True
        return mask

    def measure_mask(self) -> np.ndarray:
        mask = np.zeros((self.horizon, self.agent_count), dtype=bool)
        for i, ticks in enumerate(self.measure_ticks):
            mask[ticks, i] = True
        return mask

    def deliveries_by_tick(self) -> list[list[tuple[int, int, int]]]:
        """Per receive tick, the (receiver, sender, origin) triples, ordered
        by receiver then sender (the engine's processing order)."""
        per_tick: list[list[tuple[int, int, int]]] = [[] for _ in range(self.horizon)]
        for (j, i), rows in sorted(self.deliveries.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            for recv, origin in rows:
                per_tick[int(recv)].append((int(i), int(j), int(origin)))
        for events in per_tick:
            events.sort()
        return per_tick


@dataclass(frozen=True)
class ScheduleViolation:
    kind: str
    agent_i: int
    agent_j: int
    tick: int
    detail: str


def _comm_stream(seed: int, j: int, i: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(_PURPOSE_COMM, j, i))
    return np.random.Generator(np.random.PCG64(ss))


def _agent_stream(seed: int, purpose: int, i: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(purpose, i))
    return np.random.Generator(np.random.PCG64(ss))


def _covered_ticks(proposed: np.ndarray, horizon: int, B: int) -> np.ndarray:
    """Merge proposed event ticks with forced events so that every window of
    B consecutive ticks contains at least one event.

    A forced event lands on the last tick of the first window the proposals
    leave empty; equivalently, whenever the gap since the previous event
    reaches B.
    """
    out: list[int] = []
    last = -1
    for tick in proposed:
        tick = int(tick)
        while tick > last + B:
            last += B
            out.append(last)
        if tick > last:
            out.append(tick)
            last = tick
    while last + B <= horizon - 1:
        last += B
        out.append(last)
    return np.asarray(out, dtype=np.int64)


def _pair_deliveries(
    sends: np.ndarray, delays: np.ndarray, horizon: int, B: int
) -> np.ndarray:
    """Delivery list for one ordered pair from raw sends and delays.

    Arrivals are replayed in receive order; payloads older than the one
    already held are dropped (no reordering), and a zero-delay fresh
    delivery is forced whenever the held origin is about to violate the
    staleness bound.  Initial values count as origin tick 0.
    """
    arrivals = sends + delays
    keep = arrivals < horizon
    order = np.lexsort((sends[keep], arrivals[keep]))
    recv = arrivals[keep][order]
    orig = sends[keep][order]

    rows: list[tuple[int, int]] = []
    cur = 0  # origin of the payload currently held
    idx = 0
    total = len(recv)
    tick = 0
    while tick < horizon:
        # Jump to the next event: the next random arrival or forced-freshness tick.
        force_at = cur + B
        next_arrival = int(recv[idx]) if idx < total else horizon
        tick = min(force_at, next_arrival)
        if tick >= horizon:
            break
        while idx < total and int(recv[idx]) == tick:
            o = int(orig[idx])
            if o > cur:
                rows.append((tick, o))
                cur = o
            idx += 1
        if tick - cur > B - 1:
            rows.append((tick, tick))
            cur = tick
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def generate_schedule(cfg: AsyncConfig, layout: BlockLayout, horizon: int) -> EventSchedule:
    """Draw and repair an event schedule for ``horizon`` ticks.

    Deterministic: the same (cfg, layout, horizon) produces a bitwise
    identical schedule, and each agent/pair consumes its own substream so
    changing one probability never perturbs another agent's draws.
    """
    horizon = int(horizon)
    if layout.agent_count != cfg.agent_count:
        raise ValueError(
            f"layout has {layout.agent_count} agents but config expects {cfg.agent_count}"
        )
    if horizon < cfg.B:
        raise ValueError(f"horizon {horizon} must be at least B={cfg.B}")
    N = cfg.agent_count
    compute_ticks = []
    measure_ticks = []
    for i in range(N):
        upd = _agent_stream(cfg.seed, _PURPOSE_UPDATE, i).random(horizon) < cfg.p_update[i]
        mea = _agent_stream(cfg.seed, _PURPOSE_MEASURE, i).random(horizon) < cfg.p_measure[i]
        compute_ticks.append(_covered_ticks(np.flatnonzero(upd), horizon, cfg.B))
        measure_ticks.append(_covered_ticks(np.flatnonzero(mea), horizon, cfg.B))

    deliveries: dict[tuple[int, int], np.ndarray] = {}
    for j in range(N):
        for i in range(N):
            if i == j:
                continue
            rng = _comm_stream(cfg.seed, j, i)
            sends = np.flatnonzero(rng.random(horizon) < cfg.p_communicate[j])
            delays = rng.integers(0, cfg.delay_max + 1, size=sends.shape[0])
            deliveries[(j, i)] = _pair_deliveries(sends, delays, horizon, cfg.B)

    return EventSchedule(
        horizon=horizon,
        B=cfg.B,
        agent_count=N,
        compute_ticks=tuple(compute_ticks),
        measure_ticks=tuple(measure_ticks),
        deliveries=deliveries,
    )


def _check_coverage(ticks: np.ndarray, horizon: int, B: int, kind: str, agent: int, out: list):
    mask = np.zeros(horizon, dtype=np.int64)
    valid = ticks[(ticks >= 0) & (ticks < horizon)]
    mask[valid] = 1
    pref = np.concatenate(([0], np.cumsum(mask)))
    for k in range(0, horizon - B + 1):
        if pref[k + B] - pref[k] == 0:
            out.append(
                ScheduleViolation(kind, agent, agent, k, f"no {kind} event in window [{k}, {k + B - 1}]")
            )


def verify_schedule(schedule: EventSchedule) -> list[ScheduleViolation]:
    """Independently re-check every schedule invariant.

    Re-derives the payload-origin functions for all pairs by forward replay
    of the delivery lists and reports each violated window-coverage,
    causality, ordering or freshness condition.  An empty list means the
    schedule satisfies bounded asynchrony with parameter B.
    """
    H, B = schedule.horizon, schedule.B
    violations: list[ScheduleViolation] = []
    for i in range(schedule.agent_count):
        _check_coverage(schedule.compute_ticks[i], H, B, "compute-coverage", i, violations)
        _check_coverage(schedule.measure_ticks[i], H, B, "measure-coverage", i, violations)

    for (j, i), rows in schedule.deliveries.items():
        prev_recv = -1
        prev_origin = -1
        for recv, origin in rows:
            recv, origin = int(recv), int(origin)
            if origin > recv:
                violations.append(
                    ScheduleViolation(
                        "causality", i, j, recv, f"payload origin {origin} after receive {recv}"
                    )
                )
            if recv < prev_recv or (recv >= prev_recv and origin < prev_origin):
                violations.append(
                    ScheduleViolation(
                        "ordering", i, j, recv, "delivery list not sorted with monotone origins"
                    )
                )
            prev_recv, prev_origin = recv, origin
        # Freshness by forward replay of held-payload origins.
        cur = 0
        idx = 0
        for k in range(H):
            while idx < len(rows) and int(rows[idx][0]) == k:
                cur = max(cur, int(rows[idx][1]))
                idx += 1
            if k - cur > B - 1:
                violations.append(
                    ScheduleViolation(
                        "freshness", i, j, k, f"payload origin {cur} older than {B - 1} ticks"
                    )
                )
    return violations


def staleness_at(schedule: EventSchedule, i: int, j: int, k: int) -> int:
    """Origin tick of the payload agent i holds for agent j's inputs at tick k.

    The agent's own block is always current; with no delivery yet, initial
    values count as origin tick 0.
    """
    if not (0 <= i < schedule.agent_count and 0 <= j < schedule.agent_count):
        raise ValueError(f"agent indices ({i}, {j}) out of range")
    if not 0 <= k < schedule.horizon:
        raise ValueError(f"tick {k} outside horizon {schedule.horizon}")
    if i == j:
        return k
    rows = schedule.deliveries.get((j, i))
    if rows is None or len(rows) == 0:
        return 0
    pos = int(np.searchsorted(rows[:, 0], k, side="right")) - 1
    if pos < 0:
        return 0
    return int(rows[pos, 1])


def measurement_origin_at(schedule: EventSchedule, i: int, j: int, k: int) -> int:
    """Twin of :func:`staleness_at` for output payloads.

    For a foreign block this is the same delivery origin; for the agent's
    own block it is the latest measurement tick at or before k (0 if none).
    """
    if i != j:
        return staleness_at(schedule, i, j, k)
    if not 0 <= k < schedule.horizon:
        raise ValueError(f"tick {k} outside horizon {schedule.horizon}")
    ticks = schedule.measure_ticks[i]
    pos = int(np.searchsorted(ticks, k, side="right")) - 1
    if pos < 0:
        return 0
    return int(ticks[pos])


def schedule_to_text(schedule: EventSchedule) -> str:
    """Serialize to the line-oriented audit format (one event per line)."""
    lines = [
        "schedule-format 1",
        f"agents {schedule.agent_count}",
        f"horizon {schedule.horizon}",
        f"B {schedule.B}",
    ]
    for i, ticks in enumerate(schedule.compute_ticks):
        lines.extend(f"compute {i} {int(k)}" for k in ticks)
    for i, ticks in enumerate(schedule.measure_ticks):
        lines.extend(f"measure {i} {int(k)}" for k in ticks)
    for (j, i) in sorted(schedule.deliveries):
        for recv, origin in schedule.deliveries[(j, i)]:
            lines.append(f"deliver {j} {i} {int(recv)} {int(origin)}")
    return "\n".join(lines) + "\n"


def schedule_from_text(text: str) -> EventSchedule:
    """Parse the audit format produced by :func:`schedule_to_text`."""
    header: dict[str, int] = {}
    compute: dict[int, list[int]] = {}
    measure: dict[int, list[int]] = {}
    deliveries: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind = parts[0]
        if kind == "schedule-format":
            if parts[1] != "1":
                raise ValueError(f"unsupported schedule format {parts[1]}")
        elif kind in ("agents", "horizon", "B"):
            header[kind] = int(parts[1])
        elif kind == "compute":
            compute.setdefault(int(parts[1]), []).append(int(parts[2]))
        elif kind == "measure":
            measure.setdefault(int(parts[1]), []).append(int(parts[2]))
        elif kind == "deliver":
            j, i, recv, origin = (int(p) for p in parts[1:5])
            deliveries.setdefault((j, i), []).append((recv, origin))
        else:
            raise ValueError(f"line {lineno}: unknown event kind {kind!r}")
    for key in ("agents", "horizon", "B"):
        if key not in header:
            raise ValueError(f"missing header line {key!r}")
    N = header["agents"]
    return EventSchedule(
        horizon=header["horizon"],
        B=header["B"],
        agent_count=N,
        compute_ticks=tuple(
            np.asarray(sorted(compute.get(i, [])), dtype=np.int64) for i in range(N)
        ),
        measure_ticks=tuple(
            np.asarray(sorted(measure.get(i, [])), dtype=np.int64) for i in range(N)
        ),
        deliveries={
            pair: np.asarray(sorted(rows), dtype=np.int64).reshape(-1, 2)
            for pair, rows in deliveries.items()
        },
    )
