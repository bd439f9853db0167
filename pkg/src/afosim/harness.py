"""Experiment orchestration: configs in, artifacts out.

``run_experiment`` wires the full pipeline: build the problem, generate and
verify the event schedule, resolve step sizes (explicit or the 0.9 * cap
policy), execute the run, derive metrics and per-epoch constants, evaluate
the bound ladder, check every lemma and theorem inequality, and emit the
artifact set (canonical config, schedule, per-tick CSV, per-epoch CSV,
constants report, check reports, JSON summary, binary trace dump).

Exit-status policy: configuration problems raise ValueError (validation
failures); bound-check findings never fail a run, they are recorded in the
verdict fields.
"""

from __future__ import annotations

import csv as _csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from afosim.blocks import diameter
from afosim.config import SimConfig, config_hash, format_config
from afosim.engine import RunTrace, run, save_trace_npz, trace_to_csv
from afosim.metrics import MetricSeries, compute_series, check_lemma_invariants, solve_minimizer
from afosim.objective import EpochConstants, epoch_constants
from afosim.presets import build_problem
from afosim.schedule import AsyncConfig, generate_schedule, schedule_to_text, verify_schedule
from afosim.theory import (
    TheoryConstants,
    auto_gamma,
    auto_gammas_for,
    build_theory,
    check_bounds_on_trace,
    constants_DE,
    constants_FG,
    a_initial,
    a_recursion_as_printed,
)

__all__ = ["ExperimentSummary", "ExperimentResult", "AutoGammaPolicy", "run_experiment", "run_sweep"]


@dataclass
class AutoGammaPolicy:
    """Per-epoch step sizes at 0.9 of the self-consistent cap.

    Invoked by the engine at each epoch start; keeps the gap-cap recursion
    state and collects the per-epoch constants so the post-run analysis can
    reuse them without re-solving.
    """

    box: object
    omap: object
    B: int
    r_values: tuple[int, ...]
    safety: float = 0.9
    constants: list[EpochConstants] = field(default_factory=list)
    _a_prev: float | None = None
    _rho_prev: float | None = None
    _r_prev: int | None = None

    def __call__(self, ell, epoch, minimizer, prev_epoch, prev_minimizer) -> float:
        N = self.omap.layout.agent_count
        m = self.omap.layout.m
        normC = self.omap.norm
        diamX = diameter(self.box)
        ec = epoch_constants(
            epoch,
            prev_epoch,
            self.box,
            self.omap,
            x_star=minimizer.x_star,
            prev_x_star=None if prev_minimizer is None else prev_minimizer.x_star,
        )
        gamma = auto_gamma(
            ec,
            self.B,
            N,
            m,
            normC,
            diamX,
            a_prev=self._a_prev,
            rho_prev=self._rho_prev,
            r_prev=self._r_prev,
            safety=self.safety,
        )
        D, E = constants_DE(ec, gamma, self.B, N, normC)
        F, G = constants_FG(ec, self.B, N, m, normC, ec.lambda_eb)
        c = D / (2.0 * F + 2.0 * D)
        if ell == 0:
            a = a_initial(ec, D, E, F, G, self.B, normC, diamX)
        else:
            a = a_recursion_as_printed(
                self._a_prev, self._rho_prev, self._r_prev, ec, D, E, F, G, self.B, normC, diamX
            )
        self._a_prev = a
        self._rho_prev = 1.0 - gamma * c
        self._r_prev = self.r_values[ell]
        self.constants.append(ec)
        return gamma


@dataclass
class ExperimentSummary:
    config_hash: str
    horizon: int
    epoch_count: int
    gammas: list[float]
    alpha_at_eta: list[float]
    alpha_post_change: list[float]
    mean_alpha: float
    lemma_passed: bool
    lemma_failed_checks: list[str]
    bound_verdict: str
    bound_worst_margin: float | None
    theory_gamma_source: str
    wall_time_s: float
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "config_hash": self.config_hash,
            "horizon": self.horizon,
            "epoch_count": self.epoch_count,
            "gammas": self.gammas,
            "alpha_at_eta": self.alpha_at_eta,
            "alpha_post_change": self.alpha_post_change,
            "mean_alpha": self.mean_alpha,
            "lemma_passed": self.lemma_passed,
            "lemma_failed_checks": self.lemma_failed_checks,
            "bound_verdict": self.bound_verdict,
            "bound_worst_margin": self.bound_worst_margin,
            "theory_gamma_source": self.theory_gamma_source,
            "wall_time_s": self.wall_time_s,
            "extras": self.extras,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


@dataclass
class ExperimentResult:
    summary: ExperimentSummary
    trace: RunTrace
    series: MetricSeries
    theory: TheoryConstants
    lemma_report: object
    bound_report: object | None


def _epoch_constants_post_run(trace: RunTrace) -> list[EpochConstants]:
    out: list[EpochConstants] = []
    prev = None
    prev_sol = None
    for epoch, sol in zip(trace.epochs, trace.minimizers):
        out.append(
            epoch_constants(
                epoch,
                prev,
                trace.box,
                trace.omap,
                x_star=sol.x_star,
                prev_x_star=None if prev_sol is None else prev_sol.x_star,
            )
        )
        prev, prev_sol = epoch, sol
    return out


def _aircraft_errors(trace: RunTrace) -> dict:
    """Euclidean output errors at the final tick against the last epoch's
    minimizer: altitude components and acceleration components separately."""
    x_final = trace.x_hist[-1]
    x_star = trace.minimizers[-1].x_star
    y_final = trace.omap.entries @ x_final
    y_star = trace.omap.entries @ x_star
    accel = slice(0, None, 2)
    alt = slice(1, None, 2)
    return {
        "altitude_error_ft": float(np.linalg.norm(y_final[alt] - y_star[alt])),
        "acceleration_error_ftps2": float(np.linalg.norm(y_final[accel] - y_star[accel])),
    }


def _write_epochs_csv(path: Path, trace: RunTrace, series: MetricSeries) -> None:
    n = trace.layout.n
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            ["ell", "eta", "alpha_at_eta", "alpha_post_change", "gamma"]
            + [f"x_star_{j}" for j in range(n)]
        )
        start = 0
        for ell, eta in enumerate(trace.etas):
            post_tick = min(start + 1, eta)
            writer.writerow(
                [
                    ell,
                    eta,
                    f"{series.alpha[eta]:.17g}",
                    f"{series.alpha[post_tick]:.17g}",
                    f"{trace.gammas[ell]:.17g}",
                ]
                + [f"{v:.17g}" for v in trace.minimizers[ell].x_star]
            )
            start = eta


def run_experiment(cfg: SimConfig, out_dir: Path | str | None = None) -> ExperimentResult:
    """Run one configured experiment; write artifacts when out_dir is given."""
    t0 = time.perf_counter()
    cfg.validate()
    layout, box, omap, epoch_schedule, init = build_problem(cfg)
    async_cfg = AsyncConfig(
        B=cfg.B,
        p_update=cfg.p_update,
        p_measure=cfg.p_measure,
        p_communicate=cfg.p_communicate,
        delay_max=cfg.delay_max,
        seed=cfg.seed,
        agent_count=cfg.agent_count,
    )
    schedule = generate_schedule(async_cfg, layout, epoch_schedule.horizon)
    violations = verify_schedule(schedule)
    if violations:
        raise RuntimeError(f"generated schedule failed verification: {violations[:5]}")

    if cfg.gamma == "auto":
        policy = AutoGammaPolicy(box=box, omap=omap, B=cfg.B, r_values=epoch_schedule.r_values)
        trace = run(layout, box, omap, schedule, epoch_schedule, init, policy,
                    snapshot_stride=cfg.trace_thin)
        trace.epoch_constants = policy.constants
    else:
        trace = run(layout, box, omap, schedule, epoch_schedule, init, list(cfg.gamma),
                    snapshot_stride=cfg.trace_thin)
        trace.epoch_constants = _epoch_constants_post_run(trace)

    series = compute_series(trace)
    lemma_report = check_lemma_invariants(trace, series)
    ladder_args = (cfg.B, cfg.agent_count, layout.m, omap.norm, diameter(box))
    bound_report = None
    theory_gamma_source = "run"
    try:
        theory = build_theory(
            trace.epoch_constants, trace.gammas, epoch_schedule.r_values, *ladder_args
        )
        try:
            bound_report = check_bounds_on_trace(series, theory, epoch_schedule.r_values)
            bound_verdict = "pass" if bound_report.passed else "fail"
            bound_margin = bound_report.worst_margin
        except ValueError as exc:
            bound_verdict = f"not-applicable: {exc}"
            bound_margin = None
    except ValueError as exc:
        # The ladder is undefined at the run's step sizes (D <= 0); report
        # the constants at the cap-compliant reference policy instead.
        ref_gammas = auto_gammas_for(
            trace.epoch_constants, epoch_schedule.r_values, *ladder_args
        )
        theory = build_theory(
            trace.epoch_constants, ref_gammas, epoch_schedule.r_values, *ladder_args
        )
        theory_gamma_source = f"reference 0.9*gamma_max (ladder undefined at run gammas: {exc})"
        bound_verdict = f"not-applicable: {exc}"
        bound_margin = None

    alpha_at_eta = [float(series.alpha[eta]) for eta in trace.etas]
    post_ticks = [min((0 if ell == 0 else trace.etas[ell - 1]) + 1, trace.etas[ell])
                  for ell in range(len(trace.etas))]
    summary = ExperimentSummary(
        config_hash=config_hash(cfg),
        horizon=trace.horizon,
        epoch_count=len(trace.epochs),
        gammas=[float(g) for g in trace.gammas],
        alpha_at_eta=alpha_at_eta,
        alpha_post_change=[float(series.alpha[k]) for k in post_ticks],
        mean_alpha=float(np.mean(series.alpha_active)),
        lemma_passed=lemma_report.passed,
        lemma_failed_checks=[c.name for c in lemma_report.checks if not c.passed],
        bound_verdict=bound_verdict,
        bound_worst_margin=bound_margin,
        theory_gamma_source=theory_gamma_source,
        wall_time_s=time.perf_counter() - t0,
    )
    if cfg.epoch_kind == "aircraft":
        summary.extras.update(_aircraft_errors(trace))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(format_config(cfg))
        (out / "schedule.txt").write_text(schedule_to_text(schedule))
        trace_to_csv(trace, series, out / "trace.csv")
        _write_epochs_csv(out / "epochs.csv", trace, series)
        (out / "constants.txt").write_text(
            f"# gamma source: {theory_gamma_source}\n" + theory.report()
        )
        (out / "lemmas.txt").write_text(lemma_report.summary() + "\n")
        bounds_text = bound_report.summary() + "\n" if bound_report is not None else bound_verdict + "\n"
        (out / "bounds.txt").write_text(bounds_text)
        (out / "summary.json").write_text(summary.to_json() + "\n")
        save_trace_npz(trace, out / "trace.npz")

    return ExperimentResult(
        summary=summary,
        trace=trace,
        series=series,
        theory=theory,
        lemma_report=lemma_report,
        bound_report=bound_report,
    )


def run_sweep(
    make_config,
    param: str,
    values: list,
    seeds: int,
    out_dir: Path | str | None = None,
):
    """Run a parameter sweep with matched seeds.

    ``make_config(value, seed)`` builds the configuration for one cell.
    Returns ``(rows, aggregate)`` where aggregate maps each value to the
    mean over seeds of the time-averaged tracking error.  Runs are
    independent (no shared state), so execution order cannot change any
    per-cell artifact.
    """
    rows = []
    for value in values:
        for seed in range(seeds):
            cfg = make_config(value, seed)
            cell_dir = None
            if out_dir is not None:
                cell_dir = Path(out_dir) / f"{param}{value}_seed{seed}"
            result = run_experiment(cfg, cell_dir)
            rows.append(
                {
                    "param": param,
                    "value": value,
                    "seed": seed,
                    "mean_alpha": result.summary.mean_alpha,
                    "final_alpha": result.summary.alpha_at_eta[-1],
                    "config_hash": result.summary.config_hash,
                }
            )
    aggregate = {
        value: float(np.mean([r["mean_alpha"] for r in rows if r["value"] == value]))
        for value in values
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            writer = _csv.DictWriter(
                fh, fieldnames=["param", "value", "seed", "mean_alpha", "final_alpha", "config_hash"]
            )
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
        with open(out / "sweep_summary.json", "w") as fh:
            json.dump({"param": param, "mean_alpha_by_value": {str(k): v for k, v in aggregate.items()}}, fh, indent=2, sort_keys=True)
    return rows, aggregate
