"""Command-line interface.

Subcommands: ``run`` (explicit config file), ``preset`` (built-in
experiments), ``sweep`` (parameter sweep with matched seeds),
``constants`` (bound-ladder report without simulating), ``verify``
(re-check a stored trace), ``rmin`` (operations-per-epoch requirement).

Exit codes: 0 success, 1 validation error, 2 runtime error.  Bound-check
findings never affect the exit status.  The AFOSIM_OUT environment
variable provides the default output root.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from afosim.blocks import diameter
from afosim.config import SimConfig, config_hash, parse_config, with_overrides
from afosim.engine import load_trace_npz
from afosim.harness import run_experiment, run_sweep, _epoch_constants_post_run
from afosim.metrics import compute_series, check_lemma_invariants, solve_minimizer
from afosim.presets import build_problem, preset_aircraft, preset_qp
from afosim.theory import build_theory, check_bounds_on_trace, r_min

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _default_out(sub: str, tag: str) -> Path:
    root = os.environ.get("AFOSIM_OUT", "afosim-out")
    return Path(root) / f"{sub}-{tag}"


def _load_config(path: str) -> SimConfig:
    text = Path(path).read_text()
    return parse_config(text, base_dir=Path(path).parent)


def _preset_config(args) -> SimConfig:
    kwargs = {}
    if args.B is not None:
        kwargs["B"] = args.B
    if args.gamma is not None:
        kwargs["gamma"] = args.gamma
    if args.epochs is not None:
        kwargs["epochs"] = args.epochs
    maker = preset_qp if args.name == "qp" else preset_aircraft
    return maker(seed=args.seed, **kwargs)


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = with_overrides(cfg, seed=args.seed)
    out = Path(args.out) if args.out else _default_out("run", config_hash(cfg)[:12])
    result = run_experiment(cfg, out)
    print(f"wrote artifacts to {out}")
    print(f"config hash {result.summary.config_hash}")
    print(f"mean tracking error {result.summary.mean_alpha:.6e}")
    print(f"lemma checks {'pass' if result.summary.lemma_passed else 'FAIL'}")
    print(f"bound verdict {result.summary.bound_verdict}")
    return EXIT_OK


def _cmd_preset(args) -> int:
    cfg = _preset_config(args)
    out = Path(args.out) if args.out else _default_out(f"preset-{args.name}", config_hash(cfg)[:12])
    result = run_experiment(cfg, out)
    print(f"wrote artifacts to {out}")
    print(f"config hash {result.summary.config_hash}")
    print(f"mean tracking error {result.summary.mean_alpha:.6e}")
    for key, value in sorted(result.summary.extras.items()):
        print(f"{key} {value:.6f}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    values = [int(v) if args.param == "B" else float(v) for v in args.values.split(",")]
    base_kwargs = {}
    if args.epochs is not None:
        base_kwargs["epochs"] = args.epochs
    maker = preset_qp if args.preset == "qp" else preset_aircraft

    def make_config(value, seed):
        kwargs = dict(base_kwargs)
        kwargs[args.param] = value
        return maker(seed=seed, **kwargs)

    out = Path(args.out) if args.out else _default_out("sweep", f"{args.preset}-{args.param}")
    rows, aggregate = run_sweep(make_config, args.param, values, args.seeds, out)
    print(f"wrote sweep artifacts to {out}")
    print(f"{args.param:>8s}  mean tracking error over {args.seeds} seeds")
    for value in values:
        print(f"{value!s:>8s}  {aggregate[value]:.6e}")
    return EXIT_OK


def _cmd_constants(args) -> int:
    cfg = _load_config(args.config)
    if cfg.epoch_kind == "aircraft":
        raise ValueError(
            "the aircraft objective is closed-loop (epochs depend on run state); "
            "use 'run' and read constants.txt from the output directory"
        )
    layout, box, omap, epoch_schedule, _ = build_problem(cfg)
    constants = []
    gammas = []
    prev = prev_sol = None
    from afosim.objective import epoch_constants as _ec
    from afosim.theory import auto_gamma

    a_prev = rho_prev = r_prev = None
    for ell, epoch in enumerate(epoch_schedule.sources):
        sol = solve_minimizer(epoch, omap, box, x0=None if prev_sol is None else prev_sol.x_star)
        ec = _ec(epoch, prev, box, omap, x_star=sol.x_star,
                 prev_x_star=None if prev_sol is None else prev_sol.x_star)
        if cfg.gamma == "auto":
            gamma = auto_gamma(ec, cfg.B, cfg.agent_count, layout.m, omap.norm, diameter(box),
                               a_prev=a_prev, rho_prev=rho_prev, r_prev=r_prev)
        else:
            gamma = cfg.gamma[ell]
        constants.append(ec)
        gammas.append(gamma)
        prev, prev_sol = epoch, sol
        from afosim.theory import constants_DE, constants_FG, a_initial, a_recursion_as_printed

        D, E = constants_DE(ec, gamma, cfg.B, cfg.agent_count, omap.norm)
        F, G = constants_FG(ec, cfg.B, cfg.agent_count, layout.m, omap.norm, ec.lambda_eb)
        c = D / (2 * F + 2 * D)
        if ell == 0:
            a_prev = a_initial(ec, D, E, F, G, cfg.B, omap.norm, diameter(box))
        else:
            a_prev = a_recursion_as_printed(a_prev, rho_prev, r_prev, ec, D, E, F, G,
                                            cfg.B, omap.norm, diameter(box))
        rho_prev = 1.0 - gamma * c
        r_prev = epoch_schedule.r_values[ell]
    tc = build_theory(constants, gammas, epoch_schedule.r_values, cfg.B, cfg.agent_count,
                      layout.m, omap.norm, diameter(box))
    print(tc.report(), end="")
    return EXIT_OK


def _cmd_verify(args) -> int:
    trace_path = Path(args.trace)
    npz = trace_path / "trace.npz" if trace_path.is_dir() else trace_path
    trace = load_trace_npz(npz)
    trace.epoch_constants = _epoch_constants_post_run(trace)
    series = compute_series(trace)
    report = check_lemma_invariants(trace, series)
    print(report.summary())
    r_values = []
    start = 0
    for eta in trace.etas:
        r_values.append((eta - start) // trace.B)
        start = eta
    tc = build_theory(trace.epoch_constants, trace.gammas, r_values, trace.B,
                      trace.layout.agent_count, trace.layout.m, trace.omap.norm,
                      diameter(trace.box))
    try:
        bound_report = check_bounds_on_trace(series, tc, r_values)
        print(bound_report.summary())
    except ValueError as exc:
        print(f"bound checks not applicable: {exc}")
    return EXIT_OK


def _cmd_rmin(args) -> int:
    T = args.T
    if args.V is not None and args.rho is not None:
        V, rho = args.V, args.rho
    elif args.config is not None:
        cfg = _load_config(args.config)
        if cfg.epoch_kind == "aircraft":
            raise ValueError("rmin from config requires an open-loop epoch source; pass --V/--rho")
        result = run_experiment(cfg)
        V, rho = result.theory.V_max, result.theory.rho_max
        if T is None:
            T = cfg.epoch_count
    else:
        raise ValueError("rmin needs either --config or both --V and --rho")
    if args.mode == "finite" and T is None:
        raise ValueError("finite mode needs --T (or a config providing the horizon)")
    r = r_min(args.phi, args.mode, V, rho, T=T)
    print(f"V = {V:.17g}")
    print(f"rho = {rho:.17g}")
    print(f"r_min = {r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afosim",
        description="Asynchronous multi-agent feedback optimization simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an explicit config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_preset = sub.add_parser("preset", help="run a built-in experiment")
    p_preset.add_argument("name", choices=("qp", "aircraft"))
    p_preset.add_argument("--seed", type=int, required=True)
    p_preset.add_argument("--out", default=None)
    p_preset.add_argument("--B", type=int, default=None)
    p_preset.add_argument("--gamma", type=float, default=None)
    p_preset.add_argument("--epochs", type=int, default=None)
    p_preset.set_defaults(func=_cmd_preset)

    p_sweep = sub.add_parser("sweep", help="sweep one preset parameter over matched seeds")
    p_sweep.add_argument("--preset", choices=("qp", "aircraft"), default="qp")
    p_sweep.add_argument("--param", choices=("B", "gamma"), required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--seeds", type=int, default=10)
    p_sweep.add_argument("--epochs", type=int, default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_const = sub.add_parser("constants", help="print the bound-ladder constants report")
    p_const.add_argument("--config", required=True)
    p_const.set_defaults(func=_cmd_constants)

    p_verify = sub.add_parser("verify", help="re-check lemma and bound inequalities on a stored trace")
    p_verify.add_argument("--trace", required=True, help="output directory or trace.npz path")
    p_verify.set_defaults(func=_cmd_verify)

    p_rmin = sub.add_parser("rmin", help="minimal operations-per-epoch count for a target error")
    p_rmin.add_argument("--phi", type=float, required=True)
    p_rmin.add_argument("--mode", choices=("finite", "asymptotic"), required=True)
    p_rmin.add_argument("--config", default=None)
    p_rmin.add_argument("--V", type=float, default=None)
    p_rmin.add_argument("--rho", type=float, default=None)
    p_rmin.add_argument("--T", type=int, default=None, help="horizon for finite mode")
    p_rmin.set_defaults(func=_cmd_rmin)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
