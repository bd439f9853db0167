import numpy as np
import pytest

from afosim.blocks import BlockLayout
from afosim.schedule import (
    AsyncConfig,
    EventSchedule,
    generate_schedule,
    measurement_origin_at,
    schedule_from_text,
    schedule_to_text,
    staleness_at,
    verify_schedule,
)


def make_cfg(N=2, B=3, p_u=0.3, p_m=0.3, p_c=0.3, delay=None, seed=0):
    return AsyncConfig(
        B=B,
        p_update=p_u,
        p_measure=p_m,
        p_communicate=p_c,
        delay_max=B - 1 if delay is None else delay,
        seed=seed,
        agent_count=N,
    )


class TestAsyncConfig:
    def test_delay_cap(self):
        with pytest.raises(ValueError):
            make_cfg(B=3, delay=3)

    def test_probability_range(self):
        with pytest.raises(ValueError):
            make_cfg(p_u=1.5)

    def test_scalar_broadcast(self):
        cfg = make_cfg(N=3, p_u=0.25)
        assert cfg.p_update == (0.25, 0.25, 0.25)


class TestGenerateSchedule:
    def test_certain_events_cover_every_tick(self):
        layout = BlockLayout.uniform(2, 1, 1)
        sched = generate_schedule(make_cfg(p_u=1.0), layout, 12)
        for i in range(2):
            assert np.array_equal(sched.compute_ticks[i], np.arange(12))

    def test_forced_computes_lazy_placement(self):
        # No random events, B=3, horizon 9: forced at the last tick of each
        # uncovered window, i.e. {2, 5, 8}.
        layout = BlockLayout.uniform(2, 1, 1)
        sched = generate_schedule(make_cfg(p_u=0.0, B=3), layout, 9)
        for i in range(2):
            assert np.array_equal(sched.compute_ticks[i], [2, 5, 8])

    def test_forced_fresh_deliveries_every_other_tick(self):
        layout = BlockLayout.uniform(2, 1, 1)
        sched = generate_schedule(make_cfg(p_c=0.0, B=2, delay=1), layout, 10)
        assert verify_schedule(sched) == []
        for pair, rows in sched.deliveries.items():
            assert np.array_equal(rows[:, 0], [2, 4, 6, 8])
            assert np.array_equal(rows[:, 0], rows[:, 1])  # zero-delay fresh

    def test_horizon_below_B_rejected(self):
        layout = BlockLayout.uniform(2, 1, 1)
        with pytest.raises(ValueError):
            generate_schedule(make_cfg(B=5), layout, 4)

    def test_determinism(self):
        layout = BlockLayout.uniform(3, 1, 1)
        cfg = make_cfg(N=3, seed=99)
        a = generate_schedule(cfg, layout, 40)
        b = generate_schedule(cfg, layout, 40)
        assert schedule_to_text(a) == schedule_to_text(b)

    def test_one_agent_probability_does_not_perturb_others(self):
        layout = BlockLayout.uniform(3, 1, 1)
        base = generate_schedule(make_cfg(N=3, p_u=(0.3, 0.3, 0.3)), layout, 60)
        bumped = generate_schedule(make_cfg(N=3, p_u=(0.9, 0.3, 0.3)), layout, 60)
        for i in (1, 2):
            assert np.array_equal(base.compute_ticks[i], bumped.compute_ticks[i])

    def test_generator_sound_over_random_configs(self):
        rng = np.random.default_rng(2024)
        for trial in range(100):
            N = int(rng.integers(1, 6))
            B = int(rng.integers(1, 7))
            layout = BlockLayout.uniform(N, 1, 1)
            cfg = AsyncConfig(
                B=B,
                p_update=tuple(rng.random(N)),
                p_measure=tuple(rng.random(N)),
                p_communicate=tuple(rng.random(N)),
                delay_max=int(rng.integers(0, B)),
                seed=int(rng.integers(0, 2**32)),
                agent_count=N,
            )
            horizon = int(rng.integers(B, 8 * B + 1))
            sched = generate_schedule(cfg, layout, horizon)
            assert verify_schedule(sched) == [], f"trial {trial} produced violations"


class TestVerifySchedule:
    def test_empty_compute_set_fails_coverage(self):
        B = 3
        sched = EventSchedule(
            horizon=B,
            B=B,
            agent_count=2,
            compute_ticks=(np.array([], dtype=np.int64), np.array([0])),
            measure_ticks=(np.array([0]), np.array([0])),
            deliveries={},
        )
        violations = verify_schedule(sched)
        kinds = {(v.kind, v.agent_i, v.tick) for v in violations}
        assert ("compute-coverage", 0, 0) in kinds

    def test_causality_violation_reported(self):
        sched = EventSchedule(
            horizon=10,
            B=10,
            agent_count=2,
            compute_ticks=(np.array([0]), np.array([0])),
            measure_ticks=(np.array([0]), np.array([0])),
            deliveries={(0, 1): np.array([[3, 5]])},
        )
        assert any(v.kind == "causality" for v in verify_schedule(sched))

    def test_stale_delivery_reported(self):
        sched = EventSchedule(
            horizon=8,
            B=2,
            agent_count=2,
            compute_ticks=(np.arange(8), np.arange(8)),
            measure_ticks=(np.arange(8), np.arange(8)),
            deliveries={(0, 1): np.array([[0, 0]]), (1, 0): np.array([[0, 0]])},
        )
        assert any(v.kind == "freshness" for v in verify_schedule(sched))

    def test_reordered_origins_reported(self):
        sched = EventSchedule(
            horizon=6,
            B=6,
            agent_count=2,
            compute_ticks=(np.array([0]), np.array([0])),
            measure_ticks=(np.array([0]), np.array([0])),
            deliveries={(0, 1): np.array([[2, 2], [4, 1]])},
        )
        assert any(v.kind == "ordering" for v in verify_schedule(sched))


class TestStaleness:
    def _schedule(self):
        return EventSchedule(
            horizon=8,
            B=8,
            agent_count=2,
            compute_ticks=(np.array([0]), np.array([0])),
            measure_ticks=(np.array([1, 5]), np.array([0])),
            deliveries={(1, 0): np.array([[4, 2]])},
        )

    def test_own_block_current(self):
        assert staleness_at(self._schedule(), 0, 0, 6) == 6

    def test_last_delivery_wins(self):
        assert staleness_at(self._schedule(), 0, 1, 6) == 2

    def test_initial_origin_zero(self):
        assert staleness_at(self._schedule(), 0, 1, 0) == 0

    def test_monotone_in_time(self):
        layout = BlockLayout.uniform(3, 1, 1)
        sched = generate_schedule(make_cfg(N=3, seed=5), layout, 30)
        for i in range(3):
            for j in range(3):
                values = [staleness_at(sched, i, j, k) for k in range(30)]
                assert all(b >= a for a, b in zip(values, values[1:]))
                lags = [k - v for k, v in enumerate(values)]
                assert max(lags) <= sched.B - 1

    def test_measurement_origin_own_block(self):
        sched = self._schedule()
        assert measurement_origin_at(sched, 0, 0, 0) == 0
        assert measurement_origin_at(sched, 0, 0, 3) == 1
        assert measurement_origin_at(sched, 0, 0, 6) == 5

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            staleness_at(self._schedule(), 0, 1, 99)
        with pytest.raises(ValueError):
            staleness_at(self._schedule(), 0, 5, 1)


class TestSerialization:
    def test_roundtrip(self):
        layout = BlockLayout.uniform(3, 1, 1)
        sched = generate_schedule(make_cfg(N=3, seed=13), layout, 25)
        text = schedule_to_text(sched)
        back = schedule_from_text(text)
        assert schedule_to_text(back) == text
        assert verify_schedule(back) == []

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            schedule_from_text("schedule-format 1\nagents 1\nhorizon 2\nB 1\nwarp 0 1\n")

    def test_rejects_missing_header(self):
        with pytest.raises(ValueError):
            schedule_from_text("compute 0 1\n")
